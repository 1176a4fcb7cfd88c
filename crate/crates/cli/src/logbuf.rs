//! In-memory log lines flushed to timestamped files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};

#[derive(Debug)]
struct Inner {
    entries: Vec<String>,
    last_flush: DateTime<Utc>,
}

/// Ordered log lines, written out once they have waited `interval` since
/// the last flush. Internally synchronized.
#[derive(Debug)]
pub struct LogBuffer {
    dir: PathBuf,
    interval: Duration,
    inner: Mutex<Inner>,
}

/// `bmaguard-20240131T120000.000Z.log`: ISO-8601 basic format, which avoids
/// colons in file names.
pub fn log_file_name(at: DateTime<Utc>) -> String {
    format!("bmaguard-{}.log", at.format("%Y%m%dT%H%M%S%.3fZ"))
}

impl LogBuffer {
    pub fn new(dir: impl Into<PathBuf>, interval: Duration, now: DateTime<Utc>) -> Self {
        Self {
            dir: dir.into(),
            interval,
            inner: Mutex::new(Inner {
                entries: Vec::new(),
                last_flush: now,
            }),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn push(&self, line: impl Into<String>) {
        self.inner.lock().expect("log lock").entries.push(line.into());
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("log lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flushes when at least `interval` has passed since the last flush.
    pub fn flush_if_due(&self, now: DateTime<Utc>) -> std::io::Result<Option<PathBuf>> {
        let mut inner = self.inner.lock().expect("log lock");
        let age = (now - inner.last_flush).to_std().unwrap_or(Duration::ZERO);
        if age < self.interval {
            return Ok(None);
        }
        self.write_out(&mut inner, now)
    }

    /// Unconditional flush, used on shutdown.
    pub fn flush(&self, now: DateTime<Utc>) -> std::io::Result<Option<PathBuf>> {
        let mut inner = self.inner.lock().expect("log lock");
        self.write_out(&mut inner, now)
    }

    /// Writes and clears the buffer; on failure the entries are kept for
    /// the next attempt. An empty buffer only restarts the timer.
    fn write_out(&self, inner: &mut Inner, now: DateTime<Utc>) -> std::io::Result<Option<PathBuf>> {
        if inner.entries.is_empty() {
            inner.last_flush = now;
            return Ok(None);
        }
        let path = self.dir.join(log_file_name(now));
        let res = (|| {
            std::fs::create_dir_all(&self.dir)?;
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
            let mut body = inner.entries.join("\n");
            body.push('\n');
            f.write_all(body.as_bytes())?;
            f.sync_data()
        })();
        match res {
            Ok(()) => {
                inner.entries.clear();
                inner.last_flush = now;
                Ok(Some(path))
            }
            Err(e) => {
                log::warn!("log flush to {} failed, keeping {} entries: {e}", path.display(), inner.entries.len());
                Err(e)
            }
        }
    }
}
