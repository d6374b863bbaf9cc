#![no_main]
use libfuzzer_sys::fuzz_target;
use p3l_core::datasets;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((xs, ys)) = datasets::parse_csv_str(text) {
        assert_eq!(xs.len(), ys.len());
        let mut buf = Vec::new();
        datasets::write_csv(&mut buf, &xs, &ys).expect("write");
        let (bx, by) = datasets::read_csv(buf.as_slice()).expect("re-read");
        assert_eq!(bx.len(), xs.len());
        assert!(by.iter().zip(&ys).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});
