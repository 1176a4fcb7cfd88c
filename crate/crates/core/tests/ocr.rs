use std::time::Duration;

use bmaguard_core::imaging::NormalizedImage;
use bmaguard_core::ocr::*;
use proptest::prelude::*;

/// Names each strip after its first row, sleeping a per-strip delay first.
struct Delayed(Vec<u64>);

impl OcrEngine for Delayed {
    fn name(&self) -> &str {
        "delayed"
    }
    fn recognize(&self, strip: &Strip) -> Result<String, String> {
        std::thread::sleep(Duration::from_millis(self.0[strip.index]));
        Ok(format!("row{}", strip.top))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn text_order_ignores_engine_latency(delays in prop::collection::vec(0u64..15, 4)) {
        let img = NormalizedImage::from_canvas(vec![0; 960 * 540 * 3]).unwrap();
        let out = extract_text(&img, &Delayed(delays)).unwrap();
        prop_assert_eq!(out.text, "row0\nrow135\nrow270\nrow405");
    }
}
