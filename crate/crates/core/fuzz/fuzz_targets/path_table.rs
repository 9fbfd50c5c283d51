#![no_main]
use beampred::channel::{parse_path_table, write_path_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = parse_path_table(text) {
            let again = parse_path_table(&write_path_table(&table)).expect("writer output parses");
            assert_eq!(again, table);
        }
    }
});
