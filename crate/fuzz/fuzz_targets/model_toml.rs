#![no_main]

use libfuzzer_sys::fuzz_target;
use phlearn::io::{model_to_toml, parse_model_toml};
use phlearn::network::assemble_ode;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(net) = parse_model_toml(text) else { return };
    let _ = assemble_ode(&net);
    if let Ok(text) = model_to_toml(&net) {
        let back = parse_model_toml(&text).expect("serialized model must parse");
        assert_eq!(model_to_toml(&back).unwrap(), text);
    }
});
