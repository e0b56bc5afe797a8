//! Real-time event records shared by the vacation system and the FIFO engine.

use serde::Serialize;

use crate::multiwalk::Mark;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EventKind {
    /// External arrival.
    Arrival,
    /// End of a service or vacation period of length `gap`; a service routes
    /// its customer according to `mark`.
    Activity { gap: f64, mark: Mark },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealEvent {
    pub time: f64,
    pub station: usize,
    pub kind: EventKind,
}

impl RealEvent {
    fn rank(&self) -> u8 {
        match self.kind {
            EventKind::Activity { .. } => 0,
            EventKind::Arrival => 1,
        }
    }

    /// Deterministic order: time, then station, then activity before arrival.
    pub fn order(a: &RealEvent, b: &RealEvent) -> std::cmp::Ordering {
        a.time
            .total_cmp(&b.time)
            .then(a.station.cmp(&b.station))
            .then(a.rank().cmp(&b.rank()))
    }
}

pub fn sort_events(events: &mut [RealEvent]) {
    events.sort_by(RealEvent::order);
}
