//! Discrete-event simulator for disaggregated LLM serving with SLO-aware
//! prefill and decode scheduling.
//!
//! The [`engine`] drives requests through a chunked prefill pool and a
//! batched decode pool. Scheduling policies live in [`prefill`] and
//! [`decode`]; both consult the online estimators in [`costmodel`].

pub mod costmodel;
pub mod decode;
pub mod domain;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod prefill;
pub mod workload;

pub use decode::DecodePolicy;
pub use domain::{Phase, Request, RequestId, SimTime, SloConfig, Tokens};
pub use engine::{run, ClusterConfig, DecodeProfile, SimOutcome, Simulation};
pub use error::{Result, SimError};
pub use metrics::{MetricsReport, ReportSummary, RequestMetrics, SweepRow};
pub use prefill::PrefillPolicy;
pub use workload::{gen_longtail, load_trace, LongTailSpec};
