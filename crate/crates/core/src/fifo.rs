//! Event engine for single-server FIFO networks, optionally with server
//! vacations. The true network, the slowed network and the vacation system
//! all run through it; they differ only in the activity source and the
//! vacation flag.

use serde::Serialize;
use thiserror::Error;

use crate::multiwalk::{Mark, EXIT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("station {station} needs service number {index} but the sequence is exhausted")]
    SequenceExhausted { station: usize, index: usize },
    #[error("station {station} is idle with {count} customers present at t={time}")]
    IdleWithCustomers { station: usize, count: u64, time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Phase {
    Idle,
    Service { end: f64, mark: Mark },
    Vacation { end: f64 },
}

impl Phase {
    fn end(&self) -> Option<f64> {
        match *self {
            Phase::Idle => None,
            Phase::Service { end, .. } | Phase::Vacation { end } => Some(end),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationState {
    /// Customers present, including the one in service.
    pub count: u64,
    pub phase: Phase,
}

/// Supplies service requirements (with routing marks) and vacation lengths
/// in the order the stations consume them.
pub trait ActivitySource {
    fn next_service(&mut self, station: usize) -> Result<(f64, Mark), EngineError>;

    fn next_vacation(&mut self, station: usize) -> Result<f64, EngineError> {
        Err(EngineError::SequenceExhausted { station, index: 0 })
    }
}

/// Fixed per-station lists, each service divided by the station's scale.
/// When a list runs out, `tail` is asked for the next entry.
pub struct SequenceSource<'a, F> {
    services: &'a [Vec<(f64, Mark)>],
    vacations: &'a [Vec<f64>],
    scale: &'a [f64],
    used_services: Vec<usize>,
    used_vacations: Vec<usize>,
    tail: F,
}

impl<'a, F> SequenceSource<'a, F>
where
    F: FnMut(usize, usize) -> Option<(f64, Mark)>,
{
    /// `tail(station, k)` returns the k-th service beyond the list, unscaled.
    pub fn new(services: &'a [Vec<(f64, Mark)>], vacations: &'a [Vec<f64>], scale: &'a [f64], tail: F) -> Self {
        let d = services.len();
        SequenceSource {
            services,
            vacations,
            scale,
            used_services: vec![0; d],
            used_vacations: vec![0; d],
            tail,
        }
    }

    pub fn used_services(&self) -> &[usize] {
        &self.used_services
    }
}

pub fn no_tail(_: usize, _: usize) -> Option<(f64, Mark)> {
    None
}

impl<F> ActivitySource for SequenceSource<'_, F>
where
    F: FnMut(usize, usize) -> Option<(f64, Mark)>,
{
    fn next_service(&mut self, station: usize) -> Result<(f64, Mark), EngineError> {
        let k = self.used_services[station];
        let list = &self.services[station];
        let (sigma, mark) = match list.get(k) {
            Some(v) => *v,
            None => (self.tail)(station, k - list.len())
                .ok_or(EngineError::SequenceExhausted { station, index: k })?,
        };
        self.used_services[station] += 1;
        Ok((sigma / self.scale[station], mark))
    }

    fn next_vacation(&mut self, station: usize) -> Result<f64, EngineError> {
        let k = self.used_vacations[station];
        let v = *self.vacations[station]
            .get(k)
            .ok_or(EngineError::SequenceExhausted { station, index: k })?;
        self.used_vacations[station] += 1;
        Ok(v)
    }
}

/// Piecewise-constant record of per-station counts: `values[k]` holds from
/// `times[k]` until the next record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<u64>>,
}

impl Trajectory {
    pub fn new(start: f64, initial: Vec<u64>) -> Self {
        Trajectory {
            times: vec![start],
            values: vec![initial],
        }
    }

    pub fn push(&mut self, t: f64, v: Vec<u64>) {
        self.times.push(t);
        self.values.push(v);
    }

    /// Value after all events at time t; t must not precede the start.
    pub fn at(&self, t: f64) -> &[u64] {
        let k = self.times.partition_point(|s| *s <= t);
        &self.values[k.max(1) - 1]
    }

    pub fn total_at(&self, t: f64) -> u64 {
        self.at(t).iter().sum()
    }

    /// Distinct event times inside [from, to].
    pub fn breakpoints(&self, from: f64, to: f64) -> impl Iterator<Item = f64> + '_ {
        let mut last = f64::NAN;
        self.times.iter().copied().filter(move |t| {
            let keep = *t >= from && *t <= to && *t != last;
            last = *t;
            keep
        })
    }
}

/// Network state advanced event by event. Ties go by (time, station,
/// activity before arrival), the same order as [`crate::events::RealEvent`].
#[derive(Debug, Clone)]
pub struct Engine {
    pub stations: Vec<StationState>,
    pub time: f64,
    vacations: bool,
    pub trajectory: Option<Trajectory>,
    /// Completed services per station.
    pub departures: Vec<u64>,
    pub exits: u64,
}

impl Engine {
    /// Empty FIFO network at `start`.
    pub fn empty(d: usize, start: f64) -> Self {
        Self::with_state(
            vec![
                StationState {
                    count: 0,
                    phase: Phase::Idle
                };
                d
            ],
            start,
            false,
        )
    }

    pub fn with_state(stations: Vec<StationState>, start: f64, vacations: bool) -> Self {
        let d = stations.len();
        Engine {
            stations,
            time: start,
            vacations,
            trajectory: None,
            departures: vec![0; d],
            exits: 0,
        }
    }

    pub fn record(mut self) -> Self {
        self.trajectory = Some(Trajectory::new(self.time, self.counts()));
        self
    }

    pub fn counts(&self) -> Vec<u64> {
        self.stations.iter().map(|s| s.count).collect()
    }

    fn snapshot(&mut self) {
        if let Some(tr) = &mut self.trajectory {
            let v = self.stations.iter().map(|s| s.count).collect();
            tr.push(self.time, v);
        }
    }

    fn start_next<S: ActivitySource>(&mut self, j: usize, src: &mut S) -> Result<(), EngineError> {
        let t = self.time;
        let st = &mut self.stations[j];
        st.phase = if st.count > 0 {
            let (sigma, mark) = src.next_service(j)?;
            Phase::Service { end: t + sigma, mark }
        } else if self.vacations {
            Phase::Vacation {
                end: t + src.next_vacation(j)?,
            }
        } else {
            Phase::Idle
        };
        Ok(())
    }

    fn arrive<S: ActivitySource>(&mut self, i: usize, src: &mut S) -> Result<(), EngineError> {
        self.stations[i].count += 1;
        if self.stations[i].phase == Phase::Idle {
            self.start_next(i, src)?;
        }
        Ok(())
    }

    fn next_completion(&self) -> Option<(f64, usize)> {
        self.stations
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.phase.end().map(|e| (e, j)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    fn complete<S: ActivitySource>(&mut self, j: usize, src: &mut S) -> Result<(), EngineError> {
        if let Phase::Service { mark, .. } = self.stations[j].phase {
            self.stations[j].count -= 1;
            self.departures[j] += 1;
            self.stations[j].phase = Phase::Idle;
            if mark == EXIT {
                self.exits += 1;
            } else {
                // The routed customer joins before the server picks its next
                // activity; it cannot be the one just served (no self loops).
                self.arrive(mark as usize, src)?;
            }
        }
        self.start_next(j, src)
    }

    /// Process every event up to and including `until`. `arrivals` must be
    /// sorted by time; entries at or before the current time are skipped.
    pub fn run<S: ActivitySource>(
        &mut self,
        arrivals: &[(f64, usize)],
        until: f64,
        src: &mut S,
    ) -> Result<(), EngineError> {
        let mut next_arrival = arrivals.partition_point(|a| a.0 <= self.time);
        loop {
            let arr = arrivals.get(next_arrival).filter(|a| a.0 <= until);
            let comp = self.next_completion().filter(|c| c.0 <= until);
            let take_completion = match (comp, arr) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some((tc, j)), Some(&(ta, i))) => (tc, j, 0) <= (ta, i, 1),
            };
            if take_completion {
                let (tc, j) = comp.expect("completion");
                self.time = tc;
                self.complete(j, src)?;
            } else {
                let (ta, i) = *arr.expect("arrival");
                self.time = ta;
                next_arrival += 1;
                self.arrive(i, src)?;
            }
            self.check_work_conservation()?;
            self.snapshot();
        }
        self.time = self.time.max(until);
        Ok(())
    }

    fn check_work_conservation(&self) -> Result<(), EngineError> {
        for (j, s) in self.stations.iter().enumerate() {
            if s.count > 0 && s.phase == Phase::Idle {
                return Err(EngineError::IdleWithCustomers {
                    station: j,
                    count: s.count,
                    time: self.time,
                });
            }
        }
        Ok(())
    }

    /// Remaining service of the customer in service at the current time, or 0.
    pub fn residual_services(&self) -> Vec<f64> {
        self.stations
            .iter()
            .map(|s| match s.phase {
                Phase::Service { end, .. } => end - self.time,
                _ => 0.0,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_trace_single_station() {
        // Arrivals at 1 and 2, services 1.5 and 0.5 → departures at 2.5, 3.0.
        let services = vec![vec![(1.5, EXIT), (0.5, EXIT)]];
        let vac = vec![vec![]];
        let scale = vec![1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, no_tail);
        let mut eng = Engine::empty(1, 0.0).record();
        eng.run(&[(1.0, 0), (2.0, 0)], 2.6, &mut src).unwrap();
        assert_eq!(eng.counts(), vec![1]);
        assert!((eng.residual_services()[0] - 0.4).abs() < 1e-12);
        eng.run(&[(1.0, 0), (2.0, 0)], 10.0, &mut src).unwrap();
        let tr = eng.trajectory.unwrap();
        assert_eq!(tr.times, vec![0.0, 1.0, 2.0, 2.5, 3.0]);
        assert_eq!(tr.values.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0]);
    }

    #[test]
    fn empty_sequences_give_empty_state() {
        let services: Vec<Vec<(f64, Mark)>> = vec![vec![], vec![]];
        let vac = vec![vec![], vec![]];
        let scale = vec![1.0, 1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, no_tail);
        let mut eng = Engine::empty(2, -5.0);
        eng.run(&[], 0.0, &mut src).unwrap();
        assert_eq!(eng.counts(), vec![0, 0]);
        assert_eq!(eng.residual_services(), vec![0.0, 0.0]);
    }

    #[test]
    fn routing_and_scaling() {
        // Station 0 serves 2.0/2 = 1.0 and sends to station 1, which serves 1.0.
        let services = vec![vec![(2.0, 1)], vec![(1.0, EXIT)]];
        let vac = vec![vec![], vec![]];
        let scale = vec![2.0, 1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, no_tail);
        let mut eng = Engine::empty(2, 0.0).record();
        eng.run(&[(0.5, 0)], 10.0, &mut src).unwrap();
        let tr = eng.trajectory.unwrap();
        assert_eq!(tr.times, vec![0.0, 0.5, 1.5, 2.5]);
        assert_eq!(tr.values[2], vec![0, 1]);
        assert_eq!(eng.exits, 1);
    }

    #[test]
    fn exhausted_sequence_is_reported() {
        let services = vec![vec![]];
        let vac = vec![vec![]];
        let scale = vec![1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, no_tail);
        let mut eng = Engine::empty(1, 0.0);
        assert_eq!(
            eng.run(&[(1.0, 0)], 2.0, &mut src),
            Err(EngineError::SequenceExhausted { station: 0, index: 0 })
        );
    }

    #[test]
    fn tail_supplies_extra_services() {
        let services = vec![vec![(1.0, EXIT)]];
        let vac = vec![vec![]];
        let scale = vec![1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, |_, k| Some((0.25 * (k + 1) as f64, EXIT)));
        let mut eng = Engine::empty(1, 0.0);
        eng.run(&[(0.05, 0), (0.1, 0), (0.2, 0)], 1.2, &mut src).unwrap();
        // Second service (first tail entry, 0.25) started at 1.05.
        assert_eq!(eng.counts(), vec![2]);
        assert!((eng.residual_services()[0] - 0.1).abs() < 1e-12);
        assert_eq!(src.used_services(), &[2]);
    }

    #[test]
    fn vacation_mode_waits_for_vacation_end() {
        let services = vec![vec![(1.0, EXIT)]];
        let vac = vec![vec![2.0, 2.0]];
        let scale = vec![1.0];
        let mut src = SequenceSource::new(&services, &vac, &scale, no_tail);
        let init = vec![StationState {
            count: 0,
            phase: Phase::Vacation { end: 1.0 },
        }];
        let mut eng = Engine::with_state(init, 0.0, true).record();
        // Arrival at 1.5 waits for the vacation starting at 1.0 to end at 3.0.
        eng.run(&[(1.5, 0)], 5.0, &mut src).unwrap();
        let tr = eng.trajectory.as_ref().unwrap();
        assert_eq!(tr.times, vec![0.0, 1.0, 1.5, 3.0, 4.0]);
        assert_eq!(tr.values.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![0, 0, 1, 1, 0]);
        // The next vacation would be the third one.
        assert!(eng.run(&[], 10.0, &mut src).is_err());
    }

    proptest::proptest! {
        #[test]
        fn single_station_matches_lindley(
            gaps in proptest::collection::vec(0.01f64..3.0, 1..60),
            services in proptest::collection::vec(0.01f64..3.0, 60),
            probe in 0.0f64..1.0,
        ) {
            let arrivals: Vec<(f64, usize)> = gaps
                .iter()
                .scan(0.0, |t, g| {
                    *t += g;
                    Some((*t, 0))
                })
                .collect();
            let seq = vec![services.iter().map(|s| (*s, EXIT)).collect::<Vec<_>>()];
            let vac = vec![vec![]];
            let mut src = SequenceSource::new(&seq, &vac, &[1.0], no_tail);
            let end = arrivals.last().unwrap().0 + 200.0;
            let mut eng = Engine::empty(1, 0.0).record();
            eng.run(&arrivals, end, &mut src).unwrap();

            // Departure epochs d_k = max(a_k, d_{k−1}) + s_k.
            let mut dep = Vec::with_capacity(arrivals.len());
            let mut last = 0.0f64;
            for (k, (a, _)) in arrivals.iter().enumerate() {
                last = last.max(*a) + services[k];
                dep.push(last);
            }
            let t = probe * end;
            let expected = arrivals.iter().filter(|(a, _)| *a <= t).count() - dep.iter().filter(|d| **d <= t).count();
            let tr = eng.trajectory.as_ref().unwrap();
            proptest::prop_assert_eq!(tr.at(t)[0] as usize, expected);
            proptest::prop_assert_eq!(eng.exits as usize, arrivals.len());
        }
    }

}
