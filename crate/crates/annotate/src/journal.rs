//! Append-only verdict journal. Every line is fsynced before the write call
//! returns, so an acknowledged verdict survives a crash.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use winoforge_core::agreement::AnnotationVerdict;
use winoforge_core::schema::ValidityLabel;

/// One journal line: the verdict plus the label it replaced, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub verdict: AnnotationVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaces: Option<ValidityLabel>,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

pub struct Journal {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl Journal {
    /// Opens (creating if needed) and replays the journal. A final line cut
    /// short by a crash is discarded and truncated away; damage anywhere else
    /// is an error.
    pub fn open(path: &Path) -> Result<(Journal, Vec<JournalEntry>), JournalError> {
        let io_err = |source| JournalError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(e)),
        };
        let mut entries = Vec::new();
        let mut good_len = 0usize;
        let mut offset = 0usize;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, raw) in lines.iter().enumerate() {
            offset += raw.len();
            let line = raw.trim();
            if line.is_empty() {
                good_len = offset;
                continue;
            }
            let last = i + 1 == lines.len();
            match serde_json::from_str::<JournalEntry>(line) {
                Ok(e) if raw.ends_with('\n') => {
                    entries.push(e);
                    good_len = offset;
                }
                _ if last => {
                    tracing::warn!(path = %path.display(), "discarding torn journal tail");
                }
                Ok(_) => unreachable!("only the last line can lack a newline"),
                Err(e) => {
                    return Err(JournalError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        if good_len < text.len() {
            file.set_len(good_len as u64).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        let next_seq = entries.iter().map(|e| e.seq + 1).max().unwrap_or(0);
        Ok((Journal { path: path.to_path_buf(), file, next_seq }, entries))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and fsyncs one entry, returning it with its sequence number.
    pub fn append(
        &mut self,
        verdict: AnnotationVerdict,
        replaces: Option<ValidityLabel>,
    ) -> Result<JournalEntry, JournalError> {
        let entry = JournalEntry { seq: self.next_seq, verdict, replaces };
        let mut line = serde_json::to_vec(&entry).expect("journal entries serialize");
        line.push(b'\n');
        let io_err = |source| JournalError::Io { path: self.path.clone(), source };
        self.file.write_all(&line).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)?;
        self.next_seq += 1;
        Ok(entry)
    }
}
