#![no_main]

use libfuzzer_sys::fuzz_target;
use phlearn_cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = parse_config(text) else { return };
    let again = parse_config(&cfg.to_toml().expect("config serializes")).expect("serialized config must parse");
    assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
});
