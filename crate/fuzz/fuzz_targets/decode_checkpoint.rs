#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cp) = hompinn::io::decode_checkpoint(data) {
        // a decoded checkpoint must re-encode to the same bytes
        assert_eq!(hompinn::io::encode_checkpoint(&cp), data);
    }
});
