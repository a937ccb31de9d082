#![no_main]

use debias_core::metrics::import::read_stereo_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_stereo_jsonl(data);
});
