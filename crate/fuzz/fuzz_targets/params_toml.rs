#![no_main]

use libfuzzer_sys::fuzz_target;
use phlearn::io::{params_to_toml, parse_params};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(params) = parse_params(text) else { return };
    let text = params_to_toml(params.values(), params.slices()).expect("parsed params must serialize");
    let back = parse_params(&text).expect("serialized params must parse");
    assert_eq!(back.len(), params.len());
});
