#![no_main]

use debias_core::metrics::import::read_stereoset_public;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_stereoset_public(data);
});
