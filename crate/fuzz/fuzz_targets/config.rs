#![no_main]

use libfuzzer_sys::fuzz_target;
use pmflow::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.serialize()).expect("canonical text parses");
        assert_eq!(again, cfg);
    }
});
