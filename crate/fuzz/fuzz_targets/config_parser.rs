#![no_main]
use libfuzzer_sys::fuzz_target;
use p3l_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse_str(text) {
        // Anything accepted must survive its own JSON echo.
        let back = RunConfig::parse_str(&cfg.to_json().to_string()).expect("echo parses");
        assert_eq!(back, cfg);
    }
});
