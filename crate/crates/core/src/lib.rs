//! Run-oriented bookkeeping for data acquisition.
//!
//! Components publish start/end-of-run, log (MRS), information-service (IS)
//! and comment messages over a line protocol; the [`ingest`] module routes
//! them into per-run storage behind the [`storage::Backend`] abstraction,
//! and [`query`] serves them back.

pub mod model;
pub mod query;
pub mod storage;
pub mod ingest;
pub mod bench;
