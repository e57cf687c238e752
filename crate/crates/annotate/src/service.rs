use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use winoforge_core::agreement::AnnotationVerdict;
use winoforge_core::dataset::DatasetRecord;
use winoforge_core::schema::ValidityLabel;

use crate::journal::{Journal, JournalError};
use crate::state::{Ack, AnnotateConfig, AnnotateError, Annotations};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Shared service: one journal writer, an in-memory index for reads.
pub struct Service {
    state: RwLock<Annotations>,
    journal: Mutex<Journal>,
    clock: Clock,
}

impl Service {
    pub fn open(
        records: Vec<DatasetRecord>,
        journal_path: &Path,
        config: AnnotateConfig,
        clock: Clock,
    ) -> Result<Service, JournalError> {
        let (journal, entries) = Journal::open(journal_path)?;
        let mut state = Annotations::new(records, config);
        for e in &entries {
            state.apply(e);
        }
        tracing::info!(replayed = entries.len(), path = %journal_path.display(), "journal loaded");
        Ok(Service {
            state: RwLock::new(state),
            journal: Mutex::new(journal),
            clock,
        })
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn read<T>(&self, f: impl FnOnce(&Annotations) -> T) -> T {
        f(&self.state.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn write<T>(&self, f: impl FnOnce(&mut Annotations) -> T) -> T {
        f(&mut self.state.write().unwrap_or_else(|e| e.into_inner()))
    }

    /// Validates, journals (fsync) and only then indexes the verdict.
    pub fn submit(&self, annotator: &str, instance: &str, label: ValidityLabel) -> Result<Ack, ServiceError> {
        let mut journal = self.journal.lock().unwrap_or_else(|e| e.into_inner());
        let replaced = self.read(|s| {
            s.check_annotator(annotator)?;
            s.check_instance(instance)?;
            Ok::<_, AnnotateError>(s.current_label(annotator, instance))
        })?;
        let verdict = AnnotationVerdict {
            annotator_id: annotator.to_string(),
            instance_id: instance.to_string(),
            label,
            submitted_at: self.now(),
        };
        let entry = journal.append(verdict, replaced)?;
        if let Some(prev) = replaced {
            tracing::info!(annotator, instance, %prev, new = %label, "verdict overwritten");
        }
        let audit_len = self.write(|s| {
            s.apply(&entry);
            s.audit_len(annotator, instance)
        });
        Ok(Ack {
            saved: true,
            seq: entry.seq,
            verdict: entry.verdict,
            replaced,
            audit_len,
        })
    }
}
