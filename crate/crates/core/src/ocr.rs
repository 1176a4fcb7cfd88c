//! Strip-parallel text extraction with pluggable recognizers.
//!
//! The normalized screenshot is cut into horizontal strips (four by
//! default), each strip is recognized independently and the results are
//! joined top to bottom with `\n`.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::imaging::NormalizedImage;
use crate::pngio;

/// Default strip count.
pub const DEFAULT_STRIPS: usize = 4;

/// One horizontal band of a normalized image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strip {
    pub index: usize,
    /// First row of the strip in the source image.
    pub top: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// A text recognizer for a single strip.
pub trait OcrEngine: Send + Sync {
    fn name(&self) -> &str;

    fn recognize(&self, strip: &Strip) -> std::result::Result<String, String>;

    /// Whether `recognize` may run on several strips at once. Engines that
    /// return false are driven sequentially.
    fn concurrent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcrText {
    pub text: String,
    pub per_slice: Vec<String>,
    pub extraction_ms: f64,
}

/// Strip heights for a balanced partition; the remainder goes to the top
/// strips.
pub fn strip_heights(height: usize, rows: usize) -> Vec<usize> {
    let base = height / rows;
    let extra = height % rows;
    (0..rows).map(|i| base + usize::from(i < extra)).collect()
}

pub fn slice_rows(pixels: &[u8], width: usize, height: usize, rows: usize) -> Result<Vec<Strip>> {
    if rows == 0 {
        return Err(Error::invalid("strip count must be at least 1"));
    }
    if rows > height {
        return Err(Error::invalid(format!(
            "cannot cut {height} rows into {rows} strips"
        )));
    }
    let stride = width * 3;
    let mut top = 0;
    Ok(strip_heights(height, rows)
        .into_iter()
        .enumerate()
        .map(|(index, h)| {
            let strip = Strip {
                index,
                top,
                width,
                height: h,
                pixels: pixels[top * stride..(top + h) * stride].to_vec(),
            };
            top += h;
            strip
        })
        .collect())
}

pub fn slice_image(img: &NormalizedImage, rows: usize) -> Result<Vec<Strip>> {
    slice_rows(img.pixels(), img.width(), img.height(), rows)
}

/// Recognizes every strip and joins the results in strip order.
///
/// On failure the lowest failing strip index is reported and partial text
/// is discarded.
pub fn extract_text(img: &NormalizedImage, engine: &dyn OcrEngine) -> Result<OcrText> {
    extract_text_with(img, engine, DEFAULT_STRIPS)
}

pub fn extract_text_with(img: &NormalizedImage, engine: &dyn OcrEngine, rows: usize) -> Result<OcrText> {
    let start = Instant::now();
    let strips = slice_image(img, rows)?;
    let results: Vec<std::result::Result<String, String>> = if engine.concurrent() && strips.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = strips
                .iter()
                .map(|s| scope.spawn(move || engine.recognize(s)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("recognizer panicked".into())))
                .collect()
        })
    } else {
        strips.iter().map(|s| engine.recognize(s)).collect()
    };

    let mut per_slice = Vec::with_capacity(results.len());
    for (strip, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => per_slice.push(t),
            Err(message) => {
                return Err(Error::Engine {
                    engine: engine.name().to_string(),
                    strip,
                    message,
                })
            }
        }
    }
    Ok(OcrText {
        text: per_slice.join("\n"),
        per_slice,
        extraction_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Returns fixed text: all of it for strip 0, nothing for the others.
///
/// Stands in for OCR when the page text is already known (e.g. the sidecar
/// text of a synthetic sample).
#[derive(Debug, Clone, Default)]
pub struct FixedTextEngine {
    pub text: String,
}

impl FixedTextEngine {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl OcrEngine for FixedTextEngine {
    fn name(&self) -> &str {
        "fixed-text"
    }

    fn recognize(&self, strip: &Strip) -> std::result::Result<String, String> {
        Ok(if strip.index == 0 {
            self.text.clone()
        } else {
            String::new()
        })
    }
}

/// Runs an external OCR executable once per strip.
///
/// The strip is written to a temporary PNG whose path is passed as the first
/// argument, followed by `args`. Standard output is the recognized text.
#[derive(Debug, Clone)]
pub struct ExternalEngine {
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
    name: String,
}

impl ExternalEngine {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

    pub fn new(program: impl Into<PathBuf>) -> Self {
        let program = program.into();
        let name = format!("external:{}", program.display());
        Self {
            program,
            args: Vec::new(),
            timeout: Self::DEFAULT_TIMEOUT,
            name,
        }
    }

    /// `tesseract <png> stdout`.
    pub fn tesseract() -> Self {
        Self::new("tesseract").with_args(["stdout"])
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn run(&self, strip: &Strip) -> std::result::Result<String, String> {
        let file = tempfile::Builder::new()
            .prefix("ocr-strip-")
            .suffix(".png")
            .tempfile()
            .map_err(|e| format!("temp file: {e}"))?;
        let png = pngio::encode_png(strip.width, strip.height, &strip.pixels).map_err(|e| e.to_string())?;
        std::fs::write(file.path(), png).map_err(|e| format!("temp file: {e}"))?;

        let mut child = Command::new(&self.program)
            .arg(file.path())
            .args(&self.args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program.display()))?;

        // Drain stdout on a helper thread so a chatty engine cannot block on
        // a full pipe while we wait.
        let mut stdout = child.stdout.take().expect("stdout piped");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("timed out after {:?}", self.timeout));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(format!("wait: {e}")),
            }
        };
        let out = reader
            .join()
            .map_err(|_| "stdout reader panicked".to_string())?
            .map_err(|e| format!("read stdout: {e}"))?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                let _ = s.read_to_string(&mut err);
            }
            return Err(format!("exit {status}: {}", err.trim()));
        }
        Ok(String::from_utf8_lossy(&out).trim_end().to_string())
    }
}

impl OcrEngine for ExternalEngine {
    fn name(&self) -> &str {
        &self.name
    }

    fn recognize(&self, strip: &Strip) -> std::result::Result<String, String> {
        self.run(strip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn blank() -> NormalizedImage {
        NormalizedImage::from_canvas(vec![0; 960 * 540 * 3]).unwrap()
    }

    fn striped() -> NormalizedImage {
        let px = (0..960 * 540 * 3).map(|i| (i / (960 * 3)) as u8).collect();
        NormalizedImage::from_canvas(px).unwrap()
    }

    struct IndexEngine;
    impl OcrEngine for IndexEngine {
        fn name(&self) -> &str {
            "index"
        }
        fn recognize(&self, strip: &Strip) -> std::result::Result<String, String> {
            Ok(strip.index.to_string())
        }
    }

    struct EmptyEngine;
    impl OcrEngine for EmptyEngine {
        fn name(&self) -> &str {
            "empty"
        }
        fn recognize(&self, _: &Strip) -> std::result::Result<String, String> {
            Ok(String::new())
        }
    }

    struct FailOn(usize);
    impl OcrEngine for FailOn {
        fn name(&self) -> &str {
            "fail"
        }
        fn recognize(&self, strip: &Strip) -> std::result::Result<String, String> {
            if strip.index == self.0 {
                Err("boom".into())
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn four_even_strips() {
        let strips = slice_image(&blank(), 4).unwrap();
        assert_eq!(strips.len(), 4);
        assert!(strips.iter().all(|s| s.width == 960 && s.height == 135));
    }

    #[test]
    fn remainder_goes_to_top_strips() {
        assert_eq!(strip_heights(542, 4), vec![136, 136, 135, 135]);
        let px = vec![0u8; 960 * 542 * 3];
        let strips = slice_rows(&px, 960, 542, 4).unwrap();
        assert_eq!(strips.iter().map(|s| s.top).collect::<Vec<_>>(), vec![0, 136, 272, 407]);
    }

    #[test]
    fn single_strip_is_whole_image() {
        let img = striped();
        let strips = slice_image(&img, 1).unwrap();
        assert_eq!(strips[0].pixels, img.pixels());
    }

    #[test]
    fn strips_restack_to_source() {
        let img = striped();
        for rows in [1, 3, 4, 7, 540] {
            let joined: Vec<u8> = slice_image(&img, rows)
                .unwrap()
                .into_iter()
                .flat_map(|s| s.pixels)
                .collect();
            assert_eq!(joined, img.pixels());
        }
    }

    #[test]
    fn too_many_strips_rejected() {
        assert!(slice_image(&blank(), 541).is_err());
        assert!(slice_image(&blank(), 0).is_err());
    }

    #[test]
    fn joins_in_strip_order() {
        let out = extract_text(&blank(), &IndexEngine).unwrap();
        assert_eq!(out.text, "0\n1\n2\n3");
        assert_eq!(out.per_slice.len(), 4);
    }

    #[test]
    fn empty_strips_keep_separators() {
        assert_eq!(extract_text(&blank(), &EmptyEngine).unwrap().text, "\n\n\n");
    }

    #[test]
    fn failure_reports_strip_index() {
        match extract_text(&blank(), &FailOn(2)) {
            Err(Error::Engine { strip, engine, .. }) => {
                assert_eq!(strip, 2);
                assert_eq!(engine, "fail");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    struct Sequential(AtomicUsize);
    impl OcrEngine for Sequential {
        fn name(&self) -> &str {
            "seq"
        }
        fn concurrent(&self) -> bool {
            false
        }
        fn recognize(&self, strip: &Strip) -> std::result::Result<String, String> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            assert_eq!(n, strip.index, "single-use engine must see strips in order");
            Ok(format!("s{n}"))
        }
    }

    #[test]
    fn single_use_engine_runs_in_order() {
        let out = extract_text(&blank(), &Sequential(AtomicUsize::new(0))).unwrap();
        assert_eq!(out.text, "s0\ns1\ns2\ns3");
    }

    #[test]
    fn fixed_text_engine_puts_text_first() {
        let out = extract_text(&blank(), &FixedTextEngine::new("hello")).unwrap();
        assert_eq!(out.text, "hello\n\n\n");
    }

    #[cfg(unix)]
    #[test]
    fn external_engine_reads_stdout() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("fake-ocr.sh");
        std::fs::write(&script, "#!/bin/sh\ntest -s \"$1\" && echo \"text $2\"\n").unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let engine = ExternalEngine::new(&script).with_args(["x"]);
        let out = extract_text(&blank(), &engine).unwrap();
        assert_eq!(out.text, "text x\ntext x\ntext x\ntext x");
    }

    #[cfg(unix)]
    #[test]
    fn external_engine_times_out() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("slow.sh");
        std::fs::write(&script, "#!/bin/sh\nsleep 5\n").unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let engine = ExternalEngine::new(&script).with_timeout(Duration::from_millis(100));
        let err = extract_text(&blank(), &engine).unwrap_err();
        assert!(matches!(err, Error::Engine { strip: 0, .. }), "{err}");
    }
}
