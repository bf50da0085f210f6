//! Run traces and offline analytics.
//!
//! The coordinator emits [`TraceEvent`]s through a [`TraceRecorder`]; a
//! [`JsonlStore`] appends them to a JSON-lines file. Reports replay those
//! files into [`RunRecord`]s and compute cost breakdowns, false
//! positive/negative rates, verification-function profiles and
//! iteration/retry averages.

mod clock;
mod events;
mod report;
mod store;

pub use clock::{Clock, LogicalClock, SystemClock, TraceRecorder};
pub use events::{EventKind, TraceEvent, TRACE_SCHEMA_VERSION};
pub use report::{
    aggregate_usage, averages, cost_report, fp_fn_rates, vf_profile, Averages, CostBreakdown, FpFn,
    GroundTruthLabel, NodeAttemptCount, VfUse,
    KindProfile, MetricsError, Report, RunRecord, VfProfile,
};
pub use store::{read_events, EventSink, JsonlStore, MemorySink, StoreError};
