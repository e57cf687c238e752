//! Human verification service: hands out instances under soft leases, records
//! validity verdicts in a durable journal, and serves agreement and filter
//! views over HTTP.

mod http;
mod journal;
mod service;
mod state;

pub use http::{router, serve, NextQuery, VerdictBody};
pub use journal::{Journal, JournalEntry, JournalError};
pub use service::{system_clock, Clock, Service, ServiceError};
pub use state::{
    Ack, AnnotateConfig, AnnotateError, Annotations, FilterView, InstanceView, NextInstance, Progress,
};
