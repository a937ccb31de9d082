#![no_main]

use debias_core::embedding::EmbeddingSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(set) = EmbeddingSet::read_word2vec(data, "fuzz") else {
        return;
    };
    // Anything accepted must survive a write/read cycle with the same vocab.
    let text = set.to_word2vec_string().expect("accepted sets serialize");
    let back = EmbeddingSet::parse_word2vec(&text, "fuzz").expect("written text parses");
    assert_eq!(back.vocab(), set.vocab());
    assert_eq!(back.dim(), set.dim());
});
