#![no_main]
use libfuzzer_sys::fuzz_target;
use p3l_core::checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((header, net)) = checkpoint::decode(text) {
        assert_eq!(net.m1, header.m1);
        assert_eq!(net.m2, header.m2);
        let again = checkpoint::encode(&net, header.seed, header.step);
        let (_, back) = checkpoint::decode(&again).expect("re-encoded checkpoint decodes");
        assert_eq!(checkpoint::encode(&back, header.seed, header.step), again);
    }
});
