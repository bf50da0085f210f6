use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::Value;

use super::events::{EventKind, TraceEvent};
use super::store::{EventSink, StoreError};

/// Source of event timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
    }
}

/// Deterministic clock: the n-th reading is n seconds after the Unix epoch.
#[derive(Debug, Default)]
pub struct LogicalClock {
    ticks: AtomicU64,
}

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> String {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst) + 1;
        DateTime::<Utc>::from_timestamp(n as i64, 0)
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Micros, true)
    }
}

/// Stamps and forwards one run's events.
#[derive(Clone)]
pub struct TraceRecorder {
    sink: Arc<dyn EventSink>,
    clock: Arc<dyn Clock>,
    run_id: String,
}

impl TraceRecorder {
    pub fn new(sink: Arc<dyn EventSink>, clock: Arc<dyn Clock>, run_id: impl Into<String>) -> Self {
        Self {
            sink,
            clock,
            run_id: run_id.into(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn emit(
        &self,
        iteration: usize,
        node_id: Option<&str>,
        kind: EventKind,
        payload: Value,
    ) -> Result<(), StoreError> {
        let event = TraceEvent::new(self.clock.now(), &self.run_id, iteration, node_id, kind, payload);
        self.sink.append(&event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_is_monotonic_and_reproducible() {
        let a = LogicalClock::new();
        let b = LogicalClock::new();
        let first: Vec<String> = (0..3).map(|_| a.now()).collect();
        let second: Vec<String> = (0..3).map(|_| b.now()).collect();
        assert_eq!(first, second);
        assert_eq!(first[0], "1970-01-01T00:00:01.000000Z");
        assert!(first.windows(2).all(|w| w[0] < w[1]));
    }
}
