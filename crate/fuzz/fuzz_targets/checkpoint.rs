#![no_main]

use debias_core::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // The format has one encoding per value.
        assert_eq!(ck.encode(), data);
    }
});
