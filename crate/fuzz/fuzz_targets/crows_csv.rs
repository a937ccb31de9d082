#![no_main]

use debias_core::metrics::import::read_crows_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_crows_csv(data);
});
