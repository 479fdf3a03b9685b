use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::json;

use super::{ChatRequest, ChatResponse, LlmError};

/// JSON Lines audit log of every request and its outcome.
pub struct Transcript {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl Transcript {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub(crate) fn log(&self, req: &ChatRequest, result: &Result<ChatResponse, LlmError>) {
        let entry = match result {
            Ok(resp) => json!({"request": req, "response": resp}),
            Err(e) => json!({"request": req, "error": e.to_string()}),
        };
        let mut out = self.out.lock().expect("transcript poisoned");
        let written = serde_json::to_writer(&mut *out, &entry)
            .map_err(std::io::Error::from)
            .and_then(|_| out.write_all(b"\n"))
            .and_then(|_| out.flush());
        if let Err(e) = written {
            log::warn!("transcript {}: {e}", self.path.display());
        }
    }
}
