#![no_main]

use libfuzzer_sys::fuzz_target;
use probmcl::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        // anything accepted must survive its own echo
        let echoed = cfg.to_toml().expect("valid config serializes");
        let back = ExperimentConfig::from_toml(&echoed).expect("echo parses");
        assert_eq!(back.hash(), cfg.hash());
    }
});
