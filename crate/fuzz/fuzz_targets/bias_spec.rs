#![no_main]

use debias_core::bias_space::BiasSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = BiasSpec::from_toml_str(text) {
        let again = BiasSpec::from_toml_str(&spec.to_toml_string()).expect("serialized spec parses");
        assert_eq!(again, spec);
    }
});
