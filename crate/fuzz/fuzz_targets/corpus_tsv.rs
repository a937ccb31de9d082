#![no_main]

use debias_core::downstream::LabeledCorpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = LabeledCorpus::read_tsv(data, "fuzz");
});
