//! The stationary autonomous system N′, built in reversed time from the joint
//! walk sample.
//!
//! Reversed time t ≥ 0 corresponds to real time −t. Every renewal process
//! (external arrivals of station i, activity epochs of station j with their
//! routing marks) is two-sided stationary: its first reversed epoch is an
//! equilibrium draw and later gaps are the walk's primitive draws.
//!
//! For station i the netput X̄_i(t) = N̄_{0,i}(t) + Σ_j D̄_{j,i}(t) − D̄_i(t)
//! is a piecewise constant integer process and
//! Ȳ′_i(t) = sup_{r≥t} X̄_i(r) − X̄_i(t). The supremum over the infinite future
//! is settled exactly with the bound Z_i, the sum of the future maxima of the
//! drift-split terms, which are read off the walk's running maxima.

use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::events::{sort_events, EventKind, RealEvent};
use crate::multiwalk::{Coordinate, InitialDraw, JointPath, Mark, WalkKernel, WalkSampler};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("walk increment at step {step}, coordinate {coordinate} disagrees with its primitives")]
    InconsistentIncrements { step: usize, coordinate: usize },
}

/// Reversed-time epochs of all renewal processes with routing marks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedEventTimeline {
    /// Ā_i(n), n = 0, 1, ...; empty for stations without external arrivals.
    pub arrival_epochs: Vec<Vec<f64>>,
    /// B̄_j(n).
    pub activity_epochs: Vec<Vec<f64>>,
    /// `activity_gaps[j][n]` is ΔB_j(n) = B̄_j(n) − B̄_j(n−1) for n ≥ 1, as
    /// drawn (not recomputed from epochs); entry 0 is the age B̄_j(0).
    pub activity_gaps: Vec<Vec<f64>>,
    /// r̄′_j(n).
    pub marks: Vec<Vec<Mark>>,
}

impl MarkedEventTimeline {
    fn from_initial(init: &InitialDraw) -> Self {
        MarkedEventTimeline {
            arrival_epochs: init
                .arrival_age
                .iter()
                .map(|a| a.map(|a| vec![a]).unwrap_or_default())
                .collect(),
            activity_epochs: init.activity_age.iter().map(|b| vec![*b]).collect(),
            activity_gaps: init.activity_age.iter().map(|b| vec![*b]).collect(),
            marks: init.marks.iter().map(|m| vec![*m]).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.activity_epochs.len()
    }

    /// Number of walk steps already folded in.
    fn steps(&self) -> usize {
        self.activity_epochs[0].len() - 1
    }

    fn push_step(&mut self, arrival: impl Fn(usize) -> f64, activity: impl Fn(usize) -> f64, mark: impl Fn(usize) -> Mark) {
        for i in 0..self.d() {
            if let Some(last) = self.arrival_epochs[i].last().copied() {
                self.arrival_epochs[i].push(last + arrival(i));
            }
            let gap = activity(i);
            let last = *self.activity_epochs[i].last().expect("initial epoch");
            self.activity_epochs[i].push(last + gap);
            self.activity_gaps[i].push(gap);
            self.marks[i].push(mark(i));
        }
    }

    fn sync(&mut self, walk: &WalkSampler) {
        for k in self.steps() + 1..=walk.len() {
            self.push_step(
                |i| walk.arrival_gap(k, i),
                |j| walk.activity_gap(k, j),
                |j| walk.mark(k, j),
            );
        }
    }

    /// Largest reversed time up to which every process has an epoch beyond it.
    pub fn covered_until(&self) -> f64 {
        self.arrival_epochs
            .iter()
            .chain(&self.activity_epochs)
            .filter_map(|e| e.last().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// All epochs in reversed time (0, horizon] as real-time events on
    /// [−horizon, 0), sorted. The activity ending at real time −B̄_j(n) lasted
    /// ΔB_j(n+1) and carries mark r̄′_j(n).
    pub fn real_time_events(&self, horizon: f64) -> Vec<RealEvent> {
        assert!(horizon < self.covered_until(), "timeline does not cover the horizon");
        let mut out = Vec::new();
        for (i, epochs) in self.arrival_epochs.iter().enumerate() {
            for t in epochs.iter().take_while(|t| **t <= horizon) {
                out.push(RealEvent {
                    time: -t,
                    station: i,
                    kind: EventKind::Arrival,
                });
            }
        }
        for (j, epochs) in self.activity_epochs.iter().enumerate() {
            for (n, t) in epochs.iter().enumerate().take_while(|(_, t)| **t <= horizon) {
                out.push(RealEvent {
                    time: -t,
                    station: j,
                    kind: EventKind::Activity {
                        gap: self.activity_gaps[j][n + 1],
                        mark: self.marks[j][n],
                    },
                });
            }
        }
        sort_events(&mut out);
        out
    }
}

/// Rebuild the timeline from a joint path, checking that the stored walk
/// increments are exactly those implied by the stored primitives.
pub fn timeline_from_walk(path: &JointPath, kernel: &WalkKernel) -> Result<MarkedEventTimeline, QueueError> {
    let mut tl = MarkedEventTimeline::from_initial(&path.initial);
    let l = kernel.l();
    let mut w = vec![0.0; l];
    for (k, step) in path.steps.iter().enumerate() {
        kernel.increments(step, &mut w);
        for c in 0..l {
            let expected = w[c] - kernel.model.drift_shift[c];
            let got = path.s[k + 1][c] - path.s[k][c];
            let scale = 1.0 + path.s[k + 1][c].abs() + path.s[k][c].abs();
            if (expected - got).abs() > 1e-9 * scale {
                return Err(QueueError::InconsistentIncrements {
                    step: k + 1,
                    coordinate: c,
                });
            }
        }
        tl.push_step(
            |i| step.arrival_gaps[i],
            |j| step.activity_gaps[j],
            |j| step.marks[j],
        );
    }
    Ok(tl)
}

/// Walk coordinates feeding one station's netput.
#[derive(Debug, Clone, PartialEq)]
struct StationCoords {
    external: Option<usize>,
    service: usize,
    /// (source station j, coordinate of RoutedGap(j→i)).
    routed: Vec<(usize, usize)>,
}

fn station_coords(kernel: &WalkKernel) -> Vec<StationCoords> {
    let d = kernel.d();
    let mut out: Vec<StationCoords> = (0..d)
        .map(|_| StationCoords {
            external: None,
            service: usize::MAX,
            routed: Vec::new(),
        })
        .collect();
    for (c, coord) in kernel.model.coords.iter().enumerate() {
        match *coord {
            Coordinate::ExternalGap { station } => out[station].external = Some(c),
            Coordinate::ServiceGap { station } => out[station].service = c,
            Coordinate::RoutedGap { from, to } => out[to].routed.push((from, c)),
        }
    }
    out
}

/// Future maxima of the drift-split terms of station i's netput at reversed
/// time t.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Starred {
    /// sup_{s≥t} (N̄_{0,i}(s) − γ_i s).
    pub arrivals: f64,
    /// sup_{s≥t} (β_i s − D̄_i(s)).
    pub departures: f64,
    /// (j, sup_{s≥t} (D̄_{j,i}(s) − φ_{j,i} s)).
    pub routed: Vec<(usize, f64)>,
}

impl Starred {
    /// Z_i(t), an upper bound on sup_{s≥t} X̄_i(s).
    pub fn z(&self) -> f64 {
        self.arrivals + self.departures + self.routed.iter().map(|(_, v)| v).sum::<f64>()
    }
}

/// Ȳ′ of one station on reversed time [0, T].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationPath {
    /// Reversed epochs e_1 < ... < e_K in (0, T] at which X̄_i jumps.
    pub times: Vec<f64>,
    /// Jump of X̄_i at e_k (index k−1).
    pub jumps: Vec<i8>,
    /// X̄_i on [e_k, e_{k+1}), k = 0..=K (e_0 = 0).
    pub x: Vec<i64>,
    /// Ȳ′_i on [e_k, e_{k+1}), k = 0..=K.
    pub y: Vec<i64>,
    /// sup_{r≥T} X̄_i(r).
    pub star_at_horizon: i64,
}

/// Ȳ′ on reversed time [0, T] for every station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryQueuePath {
    pub horizon: f64,
    pub stations: Vec<StationPath>,
}

impl StationaryQueuePath {
    /// Ȳ′ at real time −T.
    pub fn at_horizon(&self) -> Vec<i64> {
        self.stations.iter().map(|s| *s.y.last().expect("nonempty")).collect()
    }

    /// Ȳ′ at real time 0.
    pub fn at_origin(&self) -> Vec<i64> {
        self.stations.iter().map(|s| s.y[0]).collect()
    }

    /// Ȳ′_i at reversed time t ∈ [0, T].
    pub fn reversed_value(&self, i: usize, t: f64) -> i64 {
        let s = &self.stations[i];
        s.y[s.times.partition_point(|e| *e <= t)]
    }

    /// Integrate the queue forward in real time from Ȳ′(−T) with
    /// Y ← max(0, Y + ξ) and compare with the max-formula values; returns the
    /// first mismatch as (station, index).
    pub fn reflection_mismatch(&self) -> Option<(usize, usize)> {
        for (i, s) in self.stations.iter().enumerate() {
            let mut y = *s.y.last().expect("nonempty");
            for k in (1..s.y.len()).rev() {
                y = (y + i64::from(s.jumps[k - 1])).max(0);
                if y != s.y[k - 1] {
                    return Some((i, k - 1));
                }
            }
        }
        None
    }
}

/// Resumable state of the stationary reversed-time construction: the walk
/// sampler and the timeline derived from it.
#[derive(Debug, Clone)]
pub struct StationaryQueueState {
    walk: WalkSampler,
    timeline: MarkedEventTimeline,
    coords: Vec<StationCoords>,
}

/// Counters of one station's processes at a reversed time.
#[derive(Debug, Clone)]
struct Counters {
    /// N̄_{0,i}: arrival epochs ≤ t.
    arrivals: usize,
    /// D̄_i.
    own: usize,
    /// D̄_j for each routed source, in `StationCoords::routed` order.
    sources: Vec<usize>,
    /// D̄_{j,i}.
    hits: Vec<i64>,
}

impl Counters {
    fn x(&self) -> i64 {
        self.arrivals as i64 + self.hits.iter().sum::<i64>() - self.own as i64
    }
}

impl StationaryQueueState {
    pub fn new(kernel: Arc<WalkKernel>, seed: u64) -> Self {
        let coords = station_coords(&kernel);
        let walk = WalkSampler::new(kernel, seed);
        let timeline = MarkedEventTimeline::from_initial(walk.initial());
        StationaryQueueState {
            walk,
            timeline,
            coords,
        }
    }

    pub fn walk(&self) -> &WalkSampler {
        &self.walk
    }

    pub fn timeline(&self) -> &MarkedEventTimeline {
        &self.timeline
    }

    pub fn kernel(&self) -> &Arc<WalkKernel> {
        self.walk.kernel()
    }

    /// Make M exact up to walk index n and fold new steps into the timeline.
    fn settle_walk(&mut self, n: usize) {
        if self.walk.settled().is_none_or(|s| s < n) {
            self.walk.ensure_settled(2 * n + 64);
            self.timeline.sync(&self.walk);
        }
    }

    /// Extend until every process has an epoch beyond reversed time t.
    pub fn cover(&mut self, t: f64) {
        while self.timeline.covered_until() <= t {
            self.walk.extend_once();
            self.timeline.sync(&self.walk);
        }
    }

    fn counters_at(&mut self, i: usize, t: f64) -> Counters {
        self.cover(t);
        let tl = &self.timeline;
        let sc = &self.coords[i];
        let count = |e: &Vec<f64>| e.partition_point(|x| *x <= t);
        let sources: Vec<usize> = sc.routed.iter().map(|(j, _)| count(&tl.activity_epochs[*j])).collect();
        let hits = sc
            .routed
            .iter()
            .zip(&sources)
            .map(|((j, _), n)| tl.marks[*j][..*n].iter().filter(|m| **m as usize == i).count() as i64)
            .collect();
        Counters {
            arrivals: count(&tl.arrival_epochs[i]),
            own: count(&tl.activity_epochs[i]),
            sources,
            hits,
        }
    }

    /// Largest walk index read by the starred terms at these counters.
    fn needed_index(&self, i: usize, cnt: &Counters) -> usize {
        let mut n = cnt.own;
        if self.coords[i].external.is_some() {
            n = n.max(cnt.arrivals);
        }
        cnt.sources.iter().fold(n, |a, b| a.max(*b))
    }

    /// Starred terms at reversed time u from counters; the walk must be
    /// settled at `needed_index`.
    fn starred_from(&self, i: usize, u: f64, cnt: &Counters) -> Starred {
        let model = &self.walk.kernel().model;
        let w0 = &self.walk.initial().w0;
        let sc = &self.coords[i];
        let arrivals = match sc.external {
            Some(c) => {
                let current = cnt.arrivals as f64 - model.gamma[i] * u;
                current.max(w0[c] + self.walk.future_max(cnt.arrivals, c) + 1.0)
            }
            None => -model.gamma[i] * u,
        };
        let departures = w0[sc.service] + self.walk.future_max(cnt.own, sc.service);
        let routed = sc
            .routed
            .iter()
            .enumerate()
            .map(|(k, (j, c))| {
                let current = cnt.hits[k] as f64 - model.phi_route[*j][i] * u;
                let first = if self.walk.initial().marks[*j] as usize == i { 1.0 } else { 0.0 };
                let future = w0[*c] + self.walk.future_max(cnt.sources[k], *c) + first;
                (*j, current.max(future))
            })
            .collect();
        Starred {
            arrivals,
            departures,
            routed,
        }
    }

    /// Future maxima of the drift-split terms of every station at reversed
    /// time t, extending the walk as needed.
    pub fn eval_starred(&mut self, t: f64) -> Vec<Starred> {
        (0..self.coords.len())
            .map(|i| {
                let cnt = self.counters_at(i, t);
                let need = self.needed_index(i, &cnt);
                self.settle_walk(need);
                self.starred_from(i, t, &cnt)
            })
            .collect()
    }

    /// X̄_i at reversed time t.
    pub fn netput(&mut self, i: usize, t: f64) -> i64 {
        self.counters_at(i, t).x()
    }

    /// sup_{r≥T} X̄_i(r): scan epochs after T, tracking the running max of X̄_i,
    /// until Z_i drops to that max.
    pub fn settle_star(&mut self, i: usize, horizon: f64) -> i64 {
        let mut cnt = self.counters_at(i, horizon);
        let mut window = cnt.x();
        let mut u = horizon;
        loop {
            let need = self.needed_index(i, &cnt);
            self.settle_walk(need);
            if self.starred_from(i, u, &cnt).z() <= window as f64 {
                return window;
            }
            // Next epoch among the processes feeding station i.
            let next = self.next_epoch(i, &cnt);
            let (t, which) = match next {
                Some(v) => v,
                None => {
                    self.walk.extend_once();
                    self.timeline.sync(&self.walk);
                    continue;
                }
            };
            u = t;
            let tl = &self.timeline;
            match which {
                Source::Arrival => cnt.arrivals += 1,
                Source::Own => cnt.own += 1,
                Source::Routed(k) => {
                    let j = self.coords[i].routed[k].0;
                    if tl.marks[j][cnt.sources[k]] as usize == i {
                        cnt.hits[k] += 1;
                    }
                    cnt.sources[k] += 1;
                }
            }
            window = window.max(cnt.x());
        }
    }

    fn next_epoch(&self, i: usize, cnt: &Counters) -> Option<(f64, Source)> {
        let tl = &self.timeline;
        let mut best: Option<(f64, Source)> = None;
        let mut consider = |epochs: &Vec<f64>, idx: usize, src: Source| -> bool {
            match epochs.get(idx) {
                Some(t) => {
                    if best.is_none_or(|(b, _)| *t < b) {
                        best = Some((*t, src));
                    }
                    true
                }
                None => false,
            }
        };
        let mut complete = true;
        if self.coords[i].external.is_some() {
            complete &= consider(&tl.arrival_epochs[i], cnt.arrivals, Source::Arrival);
        }
        complete &= consider(&tl.activity_epochs[i], cnt.own, Source::Own);
        for (k, (j, _)) in self.coords[i].routed.iter().enumerate() {
            complete &= consider(&tl.activity_epochs[*j], cnt.sources[k], Source::Routed(k));
        }
        if complete {
            best
        } else {
            None
        }
    }

    /// Ȳ′ on reversed time [0, T] (Ȳ′ on real time [−T, 0]).
    pub fn compute_y_prime(&mut self, horizon: f64) -> StationaryQueuePath {
        let d = self.coords.len();
        let stars: Vec<i64> = (0..d).map(|i| self.settle_star(i, horizon)).collect();
        self.cover(horizon);
        let tl = &self.timeline;
        let stations = (0..d)
            .map(|i| {
                let mut ev: Vec<(f64, i8)> = Vec::new();
                for t in tl.arrival_epochs[i].iter().take_while(|t| **t <= horizon) {
                    ev.push((*t, 1));
                }
                for t in tl.activity_epochs[i].iter().take_while(|t| **t <= horizon) {
                    ev.push((*t, -1));
                }
                for (j, _) in &self.coords[i].routed {
                    for (t, m) in tl.activity_epochs[*j]
                        .iter()
                        .zip(&tl.marks[*j])
                        .take_while(|(t, _)| **t <= horizon)
                    {
                        if *m as usize == i {
                            ev.push((*t, 1));
                        }
                    }
                }
                ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut x = Vec::with_capacity(ev.len() + 1);
                x.push(0i64);
                for (_, j) in &ev {
                    x.push(x.last().unwrap() + i64::from(*j));
                }
                let mut y = vec![0i64; x.len()];
                let mut run = stars[i];
                for k in (0..x.len()).rev() {
                    run = run.max(x[k]);
                    y[k] = run - x[k];
                }
                StationPath {
                    times: ev.iter().map(|e| e.0).collect(),
                    jumps: ev.iter().map(|e| e.1).collect(),
                    x,
                    y,
                    star_at_horizon: stars[i],
                }
            })
            .collect();
        StationaryQueuePath { horizon, stations }
    }

    /// Recompute on [0, T_old + C_T], reusing all randomness drawn so far.
    pub fn extend_backward(&mut self, old: &StationaryQueuePath, block: f64) -> StationaryQueuePath {
        self.compute_y_prime(old.horizon + block)
    }

    /// Diagnostic dump: per station and epoch, reversed time, Ȳ′, X̄ and Z.
    pub fn write_debug_csv<W: Write>(&mut self, path: &StationaryQueuePath, mut out: W) -> io::Result<()> {
        writeln!(out, "station,t,y_prime,x,z")?;
        for i in 0..path.stations.len() {
            let s = path.stations[i].clone();
            for k in 0..s.y.len() {
                let t = if k == 0 { 0.0 } else { s.times[k - 1] };
                let z = self.eval_starred(t)[i].z();
                writeln!(out, "{i},{t},{},{},{z}", s.y[k], s.x[k])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Arrival,
    Own,
    Routed(usize),
}
