#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = hompinn::io::parse_solution_table(text) {
            let mut out = Vec::new();
            hompinn::io::write_solution_table(&table, &mut out).unwrap();
            let again = hompinn::io::parse_solution_table(std::str::from_utf8(&out).unwrap()).unwrap();
            assert_eq!(again.solutions.len(), table.solutions.len());
        }
    }
});
