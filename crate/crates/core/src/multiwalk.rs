//! Exact joint sampling of a multidimensional negative-drift random walk
//! together with its future maxima M(n) = sup_{k≥n} S(k).
//!
//! The walk has one coordinate per nondegenerate drift-split term of the
//! netput of the slowed network:
//!
//! | coordinate | increment |
//! |---|---|
//! | `ExternalGap(i)` | 1 − γ_i ΔA_i |
//! | `ServiceGap(i)` | β_i ΔB_i − 1 |
//! | `RoutedGap(j→i)` | 1{r_j = i} − φ_ji ΔB_j |
//!
//! Coordinates reading the same primitive (an interarrival gap ΔA_i, or an
//! activity pair (ΔB_j, r_j)) are driven by one draw per step, so tilting is
//! applied to primitives rather than to coordinates.
//!
//! Sampling proceeds in segments. Each segment alternates nominal descents of
//! 2m below the current anchor with attempts to cross level +m drawn under a
//! mixture of exponentially tilted laws; the first failed attempt ends the
//! segment at a point from which the future is known to stay below S + m.
//! Segments are glued together by rejection against that conditional upper
//! bound, which makes the running maxima available exactly.

use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, RngExt};
use serde::Serialize;
use thiserror::Error;

use crate::distributions::{DistributionError, DistributionSpec, Sampler};
use crate::network::{AuxiliaryRates, NetworkSpec};
use crate::rng::{self, SimRng};

/// Routing mark of an activity epoch: a station index, or [`EXIT`].
pub type Mark = u16;
pub const EXIT: Mark = Mark::MAX;

const PSI_TOL: f64 = 1e-10;
const SHIFT_FACTORS: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WalkError {
    #[error("coordinate {coordinate:?} has nonnegative drift {mean}")]
    NonNegativeDrift { coordinate: Coordinate, mean: f64 },
    #[error("no positive root of the cumulant for {coordinate:?}: {detail}")]
    NoRoot { coordinate: Coordinate, detail: String },
    #[error("milestone height {m} gives sum exp(-theta m) = {sum} >= 1")]
    InvalidMilestone { m: f64, sum: f64 },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coordinate {
    ExternalGap { station: usize },
    ServiceGap { station: usize },
    RoutedGap { from: usize, to: usize },
}

impl Coordinate {
    /// The station whose netput this coordinate contributes to.
    pub fn target(&self) -> usize {
        match *self {
            Coordinate::ExternalGap { station } | Coordinate::ServiceGap { station } => station,
            Coordinate::RoutedGap { to, .. } => to,
        }
    }
}

/// Increment laws of the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementModel {
    pub d: usize,
    pub coords: Vec<Coordinate>,
    /// Nonnegative per-coordinate drift shift a′ added to every increment.
    pub drift_shift: Vec<f64>,
    /// Law of ΔA_i (absent when λ_i = 0).
    pub arrival_laws: Vec<Option<DistributionSpec>>,
    /// Law of ΔB_j: the service law slowed by a_j.
    pub activity_laws: Vec<DistributionSpec>,
    pub routing: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi_route: Vec<Vec<f64>>,
}

pub fn build_increment_model(
    spec: &NetworkSpec,
    aux: &AuxiliaryRates,
) -> Result<IncrementModel, WalkError> {
    let d = spec.d();
    let mut coords = Vec::new();
    for i in 0..d {
        if spec.arrivals[i].is_some() {
            coords.push(Coordinate::ExternalGap { station: i });
        }
        coords.push(Coordinate::ServiceGap { station: i });
        for j in 0..d {
            if spec.routing[j][i] > 0.0 {
                coords.push(Coordinate::RoutedGap { from: j, to: i });
            }
        }
    }
    let model = IncrementModel {
        d,
        drift_shift: vec![0.0; coords.len()],
        coords,
        arrival_laws: spec.arrivals.clone(),
        activity_laws: spec
            .services
            .iter()
            .zip(&aux.a)
            .map(|(s, a)| s.scaled(*a))
            .collect(),
        routing: spec.routing.clone(),
        gamma: aux.gamma.clone(),
        beta: aux.beta.clone(),
        phi_route: aux.phi_route.clone(),
    };
    for (c, coord) in model.coords.iter().enumerate() {
        let mean = model.mean(c);
        if !(mean < 0.0) {
            return Err(WalkError::NonNegativeDrift {
                coordinate: *coord,
                mean,
            });
        }
    }
    Ok(model)
}

impl IncrementModel {
    pub fn l(&self) -> usize {
        self.coords.len()
    }

    /// Nominal mean increment of coordinate `c`, without the drift shift.
    pub fn mean(&self, c: usize) -> f64 {
        match self.coords[c] {
            Coordinate::ExternalGap { station } => {
                1.0 - self.gamma[station] * self.arrival_law(station).mean()
            }
            Coordinate::ServiceGap { station } => {
                self.beta[station] * self.activity_laws[station].mean() - 1.0
            }
            Coordinate::RoutedGap { from, to } => {
                self.routing[from][to] - self.phi_route[from][to] * self.activity_laws[from].mean()
            }
        }
    }

    pub fn shifted_mean(&self, c: usize) -> f64 {
        self.mean(c) + self.drift_shift[c]
    }

    fn arrival_law(&self, station: usize) -> &DistributionSpec {
        self.arrival_laws[station]
            .as_ref()
            .expect("external-gap coordinate without arrival law")
    }

    /// Cumulant log E[exp(θ W_c)] of the unshifted increment.
    pub fn psi_unshifted(&self, c: usize, theta: f64) -> Result<f64, DistributionError> {
        match self.coords[c] {
            Coordinate::ExternalGap { station } => {
                Ok(theta + self.arrival_law(station).log_mgf(-theta * self.gamma[station])?)
            }
            Coordinate::ServiceGap { station } => Ok(-theta
                + self.activity_laws[station].log_mgf(theta * self.beta[station])?),
            Coordinate::RoutedGap { from, to } => {
                let q = self.routing[from][to];
                let mark = if theta > 0.0 {
                    theta + (q + (1.0 - q) * (-theta).exp()).ln()
                } else {
                    (q * theta.exp_m1()).ln_1p()
                };
                Ok(mark + self.activity_laws[from].log_mgf(-theta * self.phi_route[from][to])?)
            }
        }
    }

    /// Cumulant of the shifted increment W_c + a′_c.
    pub fn psi(&self, c: usize, theta: f64) -> Result<f64, DistributionError> {
        Ok(self.psi_unshifted(c, theta)? + self.drift_shift[c] * theta)
    }

    /// Supremum of θ > 0 at which ψ_c is finite.
    pub fn psi_domain(&self, c: usize) -> f64 {
        match self.coords[c] {
            Coordinate::ServiceGap { station } => {
                self.activity_laws[station].abscissa() / self.beta[station]
            }
            _ => f64::INFINITY,
        }
    }
}

/// Positive root of a convex function with f(0) = 0 and f′(0) < 0, found by
/// geometric bracket expansion inside `(0, domain)` followed by bisection to
/// machine resolution. `f` returns `None` outside its domain.
pub fn positive_root<F: Fn(f64) -> Option<f64>>(f: F, domain: f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = if domain.is_finite() { 0.5 * domain } else { 1.0 };
    let mut found = false;
    for _ in 0..4000 {
        match f(hi) {
            Some(v) if v > 0.0 => {
                found = true;
                break;
            }
            Some(_) => lo = hi,
            None => {}
        }
        let next = if domain.is_finite() {
            0.5 * (hi + domain)
        } else {
            2.0 * hi
        };
        if next == hi || next > 1e15 {
            return None;
        }
        hi = next;
    }
    if !found {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match f(mid) {
            Some(v) if v > 0.0 => hi = mid,
            Some(_) => lo = mid,
            None => hi = mid,
        }
    }
    let flo = f(lo).map(f64::abs).unwrap_or(f64::INFINITY);
    let fhi = f(hi).map(f64::abs).unwrap_or(f64::INFINITY);
    Some(if lo > 0.0 && flo < fhi { lo } else { hi })
}

/// Roots θ⋆_c of ψ_c. Coordinates without a root get the smallest drift
/// shift from a geometric ladder (capped at 90% of the drift magnitude) that
/// creates one; `model.drift_shift` is updated in place.
pub fn find_theta_star(model: &mut IncrementModel) -> Result<Vec<f64>, WalkError> {
    let mut theta = Vec::with_capacity(model.l());
    for c in 0..model.l() {
        let domain = model.psi_domain(c);
        let mean = model.mean(c);
        let mut shifts = std::iter::once(0.0).chain(SHIFT_FACTORS.iter().map(|f| f * mean.abs()));
        let root = loop {
            let Some(shift) = shifts.next() else {
                return Err(WalkError::NoRoot {
                    coordinate: model.coords[c],
                    detail: format!("mean {mean}, domain {domain}, shifts up to 0.9|mean| tried"),
                });
            };
            let f = |t: f64| model.psi_unshifted(c, t).ok().map(|v| v + shift * t);
            if let Some(r) = positive_root(f, domain) {
                let residual = f(r).unwrap_or(f64::INFINITY);
                if residual.abs() <= PSI_TOL && r > 0.0 {
                    model.drift_shift[c] = shift;
                    break r;
                }
            }
        };
        theta.push(root);
    }
    Ok(theta)
}

/// Smallest m with Σ exp(−θ_i m) ≤ ½.
pub fn choose_m(theta: &[f64]) -> f64 {
    let g = |m: f64| theta.iter().map(|t| (-t * m).exp()).sum::<f64>() - 0.5;
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltParameters {
    pub theta: Vec<f64>,
    pub m: f64,
    /// Proposal weights of the crossing coordinate, ∝ exp(−θ_i m).
    pub weights: Vec<f64>,
}

impl TiltParameters {
    pub fn new(theta: Vec<f64>, m: f64) -> Result<Self, WalkError> {
        let raw: Vec<f64> = theta.iter().map(|t| (-t * m).exp()).collect();
        let sum: f64 = raw.iter().sum();
        if !(m > 0.0 && sum < 1.0) {
            return Err(WalkError::InvalidMilestone { m, sum });
        }
        Ok(TiltParameters {
            weights: raw.iter().map(|r| r / sum).collect(),
            theta,
            m,
        })
    }
}

/// Categorical law of a routing mark: a target station or [`EXIT`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkTable {
    cumulative: Vec<f64>,
    marks: Vec<Mark>,
}

impl MarkTable {
    fn new(probs: Vec<(Mark, f64)>) -> Self {
        let probs: Vec<(Mark, f64)> = probs.into_iter().filter(|(_, p)| *p > 0.0).collect();
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|(_, p)| {
                acc += p / total;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        MarkTable {
            cumulative,
            marks: probs.iter().map(|(m, _)| *m).collect(),
        }
    }

    /// Nominal routing law of station j.
    pub fn for_station(routing: &[Vec<f64>], j: usize) -> Self {
        nominal_marks(routing, j, None)
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Mark {
        if self.marks.len() == 1 {
            return self.marks[0];
        }
        let u: f64 = rng.random();
        let k = self.cumulative.iter().position(|c| u < *c).unwrap_or(0);
        self.marks[k]
    }
}

fn nominal_marks(routing: &[Vec<f64>], j: usize, boost: Option<(usize, f64)>) -> MarkTable {
    let d = routing.len();
    let exit = (1.0 - routing[j].iter().sum::<f64>()).max(0.0);
    // With a boost (i, θ) the weight of i is multiplied by e^θ; everything is
    // scaled by e^{−θ} for θ > 0 to stay finite.
    let (scale_other, scale_boost) = match boost {
        Some((_, t)) if t > 0.0 => ((-t).exp(), 1.0),
        Some((_, t)) => (1.0, t.exp()),
        None => (1.0, 1.0),
    };
    let mut probs: Vec<(Mark, f64)> = (0..d)
        .map(|k| {
            let w = if boost.map(|b| b.0) == Some(k) {
                routing[j][k] * scale_boost
            } else {
                routing[j][k] * scale_other
            };
            (k as Mark, w)
        })
        .collect();
    probs.push((EXIT, exit * scale_other));
    MarkTable::new(probs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Eval {
    External { station: usize, gamma: f64 },
    Service { station: usize, beta: f64 },
    Routed { from: usize, to: Mark, phi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum TiltedGroup {
    Arrival { station: usize, gap: Sampler },
    Activity { station: usize, gap: Sampler, marks: MarkTable },
}

/// Everything needed to draw walk steps, shared read-only across samples.
#[derive(Debug, Clone)]
pub struct WalkKernel {
    pub model: IncrementModel,
    pub tilt: TiltParameters,
    eval: Vec<Eval>,
    arrival: Vec<Option<Sampler>>,
    activity: Vec<Sampler>,
    marks: Vec<MarkTable>,
    tilted: Vec<TiltedGroup>,
    /// Primitive draws per step.
    draws_per_step: u64,
}

impl WalkKernel {
    pub fn new(model: IncrementModel, tilt: TiltParameters) -> Result<Self, WalkError> {
        let d = model.d;
        let eval = model
            .coords
            .iter()
            .map(|c| match *c {
                Coordinate::ExternalGap { station } => Eval::External {
                    station,
                    gamma: model.gamma[station],
                },
                Coordinate::ServiceGap { station } => Eval::Service {
                    station,
                    beta: model.beta[station],
                },
                Coordinate::RoutedGap { from, to } => Eval::Routed {
                    from,
                    to: to as Mark,
                    phi: model.phi_route[from][to],
                },
            })
            .collect();
        let marks: Vec<MarkTable> = (0..d).map(|j| nominal_marks(&model.routing, j, None)).collect();
        let mut tilted = Vec::with_capacity(model.l());
        for (c, coord) in model.coords.iter().enumerate() {
            let theta = tilt.theta[c];
            tilted.push(match *coord {
                Coordinate::ExternalGap { station } => TiltedGroup::Arrival {
                    station,
                    gap: model.arrival_law(station).tilted_sampler(-theta * model.gamma[station])?,
                },
                Coordinate::ServiceGap { station } => TiltedGroup::Activity {
                    station,
                    gap: model.activity_laws[station].tilted_sampler(theta * model.beta[station])?,
                    marks: marks[station].clone(),
                },
                Coordinate::RoutedGap { from, to } => TiltedGroup::Activity {
                    station: from,
                    gap: model.activity_laws[from]
                        .tilted_sampler(-theta * model.phi_route[from][to])?,
                    marks: nominal_marks(&model.routing, from, Some((to, theta))),
                },
            });
        }
        let arrivals = model.arrival_laws.iter().filter(|a| a.is_some()).count() as u64;
        Ok(WalkKernel {
            eval,
            arrival: model
                .arrival_laws
                .iter()
                .map(|a| a.as_ref().map(DistributionSpec::sampler))
                .collect(),
            activity: model.activity_laws.iter().map(DistributionSpec::sampler).collect(),
            marks,
            tilted,
            draws_per_step: arrivals + 2 * d as u64,
            model,
            tilt,
        })
    }

    /// Model, roots, drift shifts and milestone height for a network.
    pub fn for_network(
        spec: &NetworkSpec,
        aux: &AuxiliaryRates,
        milestone_m: Option<f64>,
    ) -> Result<Self, WalkError> {
        let mut model = build_increment_model(spec, aux)?;
        let theta = find_theta_star(&mut model)?;
        let m = milestone_m.unwrap_or_else(|| choose_m(&theta));
        let tilt = TiltParameters::new(theta, m)?;
        WalkKernel::new(model, tilt)
    }

    pub fn l(&self) -> usize {
        self.model.l()
    }

    pub fn d(&self) -> usize {
        self.model.d
    }

    /// Draw one step's primitives (tilting the group of coordinate `tilted`,
    /// if any) and write the shifted increments into `w`.
    #[inline]
    fn draw_step<R: Rng + ?Sized>(
        &self,
        tilted: Option<usize>,
        rng: &mut R,
        step: &mut StepPrimitives,
        w: &mut [f64],
    ) {
        let (tilt_arrival, tilt_activity) = match tilted.map(|c| &self.tilted[c]) {
            Some(TiltedGroup::Arrival { station, gap }) => (Some((*station, gap)), None),
            Some(TiltedGroup::Activity { station, gap, marks }) => (None, Some((*station, gap, marks))),
            None => (None, None),
        };
        for (i, sampler) in self.arrival.iter().enumerate() {
            step.arrival_gaps[i] = match (sampler, tilt_arrival) {
                (_, Some((s, gap))) if s == i => gap.sample(rng),
                (Some(sampler), _) => sampler.sample(rng),
                (None, _) => f64::NAN,
            };
        }
        for j in 0..self.model.d {
            match tilt_activity {
                Some((s, gap, marks)) if s == j => {
                    step.activity_gaps[j] = gap.sample(rng);
                    step.marks[j] = marks.draw(rng);
                }
                _ => {
                    step.activity_gaps[j] = self.activity[j].sample(rng);
                    step.marks[j] = self.marks[j].draw(rng);
                }
            }
        }
        self.increments(step, w);
    }

    /// Shifted increments W + a′ read off a step's primitives.
    #[inline]
    pub fn increments(&self, step: &StepPrimitives, w: &mut [f64]) {
        for (c, e) in self.eval.iter().enumerate() {
            let v = match *e {
                Eval::External { station, gamma } => 1.0 - gamma * step.arrival_gaps[station],
                Eval::Service { station, beta } => beta * step.activity_gaps[station] - 1.0,
                Eval::Routed { from, to, phi } => {
                    let hit = if step.marks[from] == to { 1.0 } else { 0.0 };
                    hit - phi * step.activity_gaps[from]
                }
            };
            w[c] = v + self.model.drift_shift[c];
        }
    }
}

/// Primitive draws of one walk step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepPrimitives {
    /// ΔA_i, NaN where station i has no external arrivals.
    pub arrival_gaps: Vec<f64>,
    /// ΔB_j.
    pub activity_gaps: Vec<f64>,
    pub marks: Vec<Mark>,
}

impl StepPrimitives {
    fn zeros(d: usize) -> Self {
        StepPrimitives {
            arrival_gaps: vec![0.0; d],
            activity_gaps: vec![0.0; d],
            marks: vec![EXIT; d],
        }
    }
}

/// Flattened storage of a run of steps: positions and primitives.
#[derive(Debug, Clone, Default)]
struct StepBuffer {
    l: usize,
    d: usize,
    s: Vec<f64>,
    arrival: Vec<f64>,
    activity: Vec<f64>,
    marks: Vec<Mark>,
}

impl StepBuffer {
    fn new(l: usize, d: usize) -> Self {
        StepBuffer {
            l,
            d,
            ..Default::default()
        }
    }

    fn len(&self) -> usize {
        self.s.len() / self.l.max(1)
    }

    fn push(&mut self, pos: &[f64], step: &StepPrimitives) {
        self.s.extend_from_slice(pos);
        self.arrival.extend_from_slice(&step.arrival_gaps);
        self.activity.extend_from_slice(&step.activity_gaps);
        self.marks.extend_from_slice(&step.marks);
    }

    fn truncate(&mut self, len: usize) {
        self.s.truncate(len * self.l);
        self.arrival.truncate(len * self.d);
        self.activity.truncate(len * self.d);
        self.marks.truncate(len * self.d);
    }

    fn clear(&mut self) {
        self.truncate(0);
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.s[k * self.l..(k + 1) * self.l]
    }
}

/// Reusable scratch space for segment sampling.
#[derive(Debug, Clone)]
pub struct Scratch {
    seg: StepBuffer,
    step: StepPrimitives,
    w: Vec<f64>,
    pos: Vec<f64>,
    anchor: Vec<f64>,
    saved: Vec<f64>,
    m0: Vec<f64>,
    draws: u64,
}

impl Scratch {
    pub fn new(kernel: &WalkKernel) -> Self {
        let (l, d) = (kernel.l(), kernel.d());
        Scratch {
            seg: StepBuffer::new(l, d),
            step: StepPrimitives::zeros(d),
            w: vec![0.0; l],
            pos: vec![0.0; l],
            anchor: vec![0.0; l],
            saved: vec![0.0; l],
            m0: vec![0.0; l],
            draws: 0,
        }
    }
}

/// Algorithm-2 step: starting from `scratch.pos`, run the proposal walk until
/// some coordinate rises more than m above the start, appending to the
/// segment buffer, and accept with probability 1/Σ w_i exp(θ_i ΔS_i). Returns
/// (accepted, acceptance probability). On rejection the appended steps are
/// left in place for the caller to truncate.
fn crossing_attempt<R: Rng + ?Sized>(kernel: &WalkKernel, rng: &mut R, sc: &mut Scratch) -> (bool, f64) {
    let tilt = &kernel.tilt;
    let l = kernel.l();
    let u: f64 = rng.random();
    let mut index = l - 1;
    let mut acc = 0.0;
    for (c, w) in tilt.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            index = c;
            break;
        }
    }
    sc.saved.copy_from_slice(&sc.pos);
    loop {
        kernel.draw_step(Some(index), rng, &mut sc.step, &mut sc.w);
        sc.draws += kernel.draws_per_step;
        let mut crossed = false;
        for c in 0..l {
            sc.pos[c] += sc.w[c];
            crossed |= sc.pos[c] - sc.saved[c] > tilt.m;
        }
        sc.seg.push(&sc.pos, &sc.step);
        if crossed {
            break;
        }
    }
    let denom: f64 = (0..l)
        .map(|c| tilt.weights[c] * (tilt.theta[c] * (sc.pos[c] - sc.saved[c])).exp())
        .sum();
    let p = 1.0 / denom;
    assert!(p <= 1.0 + 1e-12, "acceptance probability {p} exceeds 1");
    let v: f64 = rng.random();
    (v < p, p)
}

/// Algorithm-3 step: fills `sc.seg` with a segment S(1..Δ) relative to its
/// start and `sc.m0` with the componentwise max over 0..Δ.
fn segment_to_delta<R: Rng + ?Sized>(kernel: &WalkKernel, rng: &mut R, sc: &mut Scratch) {
    let l = kernel.l();
    let two_m = 2.0 * kernel.tilt.m;
    sc.seg.clear();
    sc.pos.iter_mut().for_each(|x| *x = 0.0);
    sc.anchor.iter_mut().for_each(|x| *x = 0.0);
    loop {
        loop {
            kernel.draw_step(None, rng, &mut sc.step, &mut sc.w);
            sc.draws += kernel.draws_per_step;
            let mut below = true;
            for c in 0..l {
                sc.pos[c] += sc.w[c];
                below &= sc.pos[c] < sc.anchor[c] - two_m;
            }
            sc.seg.push(&sc.pos, &sc.step);
            if below {
                break;
            }
        }
        let start = sc.seg.len();
        let (accepted, _) = crossing_attempt(kernel, rng, sc);
        if accepted {
            sc.anchor.copy_from_slice(&sc.pos);
        } else {
            sc.seg.truncate(start);
            let end = sc.seg.point(start - 1).to_vec();
            sc.pos.copy_from_slice(&end);
            break;
        }
    }
    sc.m0.iter_mut().for_each(|x| *x = 0.0);
    for k in 0..sc.seg.len() {
        for (c, v) in sc.seg.point(k).iter().enumerate() {
            if *v > sc.m0[c] {
                sc.m0[c] = *v;
            }
        }
    }
}

/// Result of one crossing attempt from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingAttempt {
    pub accepted: bool,
    pub acceptance_probability: f64,
    /// S(1..τ) of the proposal path (kept even when rejected, for diagnostics).
    pub path: Vec<Vec<f64>>,
}

pub fn sample_crossing_attempt<R: Rng + ?Sized>(kernel: &WalkKernel, rng: &mut R) -> CrossingAttempt {
    let mut sc = Scratch::new(kernel);
    let (accepted, p) = crossing_attempt(kernel, rng, &mut sc);
    CrossingAttempt {
        accepted,
        acceptance_probability: p,
        path: (0..sc.seg.len()).map(|k| sc.seg.point(k).to_vec()).collect(),
    }
}

/// A segment S(1..Δ) from the origin and its all-time maximum M0.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub path: Vec<Vec<f64>>,
    pub m0: Vec<f64>,
}

pub fn sample_segment_to_delta<R: Rng + ?Sized>(kernel: &WalkKernel, rng: &mut R) -> Segment {
    let mut sc = Scratch::new(kernel);
    segment_to_delta(kernel, rng, &mut sc);
    Segment {
        path: (0..sc.seg.len()).map(|k| sc.seg.point(k).to_vec()).collect(),
        m0: sc.m0.clone(),
    }
}

/// Equilibrium first epochs of every renewal process and the initial walk
/// increment they induce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialDraw {
    /// Ā_i(0): time back to the last external arrival before the origin.
    pub arrival_age: Vec<Option<f64>>,
    /// B̄_j(0): time back to the last activity epoch before the origin.
    pub activity_age: Vec<f64>,
    /// Mark of that activity epoch.
    pub marks: Vec<Mark>,
    /// W(0) per coordinate (routing indicators excluded).
    pub w0: Vec<f64>,
}

pub fn sample_w0<R: Rng + ?Sized>(kernel: &WalkKernel, rng: &mut R) -> InitialDraw {
    let model = &kernel.model;
    let arrival_age: Vec<Option<f64>> = model
        .arrival_laws
        .iter()
        .map(|a| a.as_ref().map(|a| a.equilibrium_sample(rng)))
        .collect();
    let activity_age: Vec<f64> = model
        .activity_laws
        .iter()
        .map(|b| b.equilibrium_sample(rng))
        .collect();
    let marks: Vec<Mark> = kernel.marks.iter().map(|t| t.draw(rng)).collect();
    let w0 = model
        .coords
        .iter()
        .map(|c| match *c {
            Coordinate::ExternalGap { station } => {
                -model.gamma[station] * arrival_age[station].expect("arrival age")
            }
            Coordinate::ServiceGap { station } => model.beta[station] * activity_age[station],
            Coordinate::RoutedGap { from, to } => -model.phi_route[from][to] * activity_age[from],
        })
        .collect();
    InitialDraw {
        arrival_age,
        activity_age,
        marks,
        w0,
    }
}

/// Exact walk values and future maxima up to some index, with the primitive
/// draws that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPath {
    /// S(k) for k = 0..=n (drift shift removed).
    pub s: Vec<Vec<f64>>,
    /// M(k) = sup_{j≥k} S(j) for k = 0..=n.
    pub m: Vec<Vec<f64>>,
    pub initial: InitialDraw,
    /// Primitives of steps 1..=n.
    pub steps: Vec<StepPrimitives>,
}

/// Resumable exact sampler of the walk and its future maxima.
#[derive(Debug, Clone)]
pub struct WalkSampler {
    kernel: Arc<WalkKernel>,
    rng: SimRng,
    path: StepBuffer,
    /// Running future max of the unshifted walk over the stored path.
    suffix_max: Vec<f64>,
    c_ub: Vec<f64>,
    milestones: Vec<usize>,
    initial: InitialDraw,
    scratch: Scratch,
    rejected_segments: u64,
}

impl WalkSampler {
    pub fn new(kernel: Arc<WalkKernel>, seed: u64) -> Self {
        let mut init_rng = rng::stream(seed, rng::streams::INITIAL);
        let initial = sample_w0(&kernel, &mut init_rng);
        let (l, d) = (kernel.l(), kernel.d());
        let mut path = StepBuffer::new(l, d);
        // Index 0 holds the origin; its primitives are never read.
        path.push(&vec![0.0; l], &StepPrimitives::zeros(d));
        WalkSampler {
            rng: rng::stream(seed, rng::streams::WALK),
            path,
            suffix_max: vec![0.0; l],
            c_ub: vec![f64::INFINITY; l],
            milestones: Vec::new(),
            initial,
            scratch: Scratch::new(&kernel),
            rejected_segments: 0,
            kernel,
        }
    }

    pub fn kernel(&self) -> &Arc<WalkKernel> {
        &self.kernel
    }

    pub fn initial(&self) -> &InitialDraw {
        &self.initial
    }

    /// Number of stored steps (the last stored index).
    pub fn len(&self) -> usize {
        self.path.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draws(&self) -> u64 {
        self.scratch.draws
    }

    pub fn rejected_segments(&self) -> u64 {
        self.rejected_segments
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn c_ub(&self) -> &[f64] {
        &self.c_ub
    }

    /// Unshifted walk value S_c(k).
    #[inline]
    pub fn s(&self, k: usize, c: usize) -> f64 {
        self.path.s[k * self.path.l + c] - self.kernel.model.drift_shift[c] * k as f64
    }

    /// sup_{j≥k} S_c(j); only valid for k ≤ [`Self::settled`].
    #[inline]
    pub fn future_max(&self, k: usize, c: usize) -> f64 {
        self.suffix_max[k * self.path.l + c]
    }

    #[inline]
    pub fn arrival_gap(&self, k: usize, station: usize) -> f64 {
        self.path.arrival[k * self.path.d + station]
    }

    #[inline]
    pub fn activity_gap(&self, k: usize, station: usize) -> f64 {
        self.path.activity[k * self.path.d + station]
    }

    #[inline]
    pub fn mark(&self, k: usize, station: usize) -> Mark {
        self.path.marks[k * self.path.d + station]
    }

    /// Largest n for which M(0..=n) are exact: the bound on the unsampled
    /// future, C_UB − a′(K+1), lies below max_{n≤j≤K} S(j) in every
    /// coordinate.
    pub fn settled(&self) -> Option<usize> {
        if self.milestones.is_empty() {
            return None;
        }
        let k = self.len();
        let l = self.path.l;
        let shift = &self.kernel.model.drift_shift;
        let ok = |n: usize| {
            (0..l).all(|c| self.c_ub[c] - shift[c] * (k + 1) as f64 <= self.suffix_max[n * l + c])
        };
        if !ok(0) {
            return None;
        }
        let (mut lo, mut hi) = (0, k);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Some(lo)
    }

    /// Append one accepted segment (Algorithm 4 iteration).
    pub fn extend_once(&mut self) {
        let kernel = Arc::clone(&self.kernel);
        let l = kernel.l();
        let k_old = self.len();
        let last: Vec<f64> = self.path.point(k_old).to_vec();
        loop {
            segment_to_delta(&kernel, &mut self.rng, &mut self.scratch);
            let fits = (0..l).all(|c| last[c] + self.scratch.m0[c] <= self.c_ub[c]);
            if fits {
                break;
            }
            self.rejected_segments += 1;
        }
        let seg = &self.scratch.seg;
        let mut abs = vec![0.0; l];
        for k in 0..seg.len() {
            for c in 0..l {
                abs[c] = last[c] + seg.s[k * l + c];
            }
            let d = self.path.d;
            let step = StepPrimitives {
                arrival_gaps: seg.arrival[k * d..(k + 1) * d].to_vec(),
                activity_gaps: seg.activity[k * d..(k + 1) * d].to_vec(),
                marks: seg.marks[k * d..(k + 1) * d].to_vec(),
            };
            self.path.push(&abs, &step);
        }
        let k_new = self.len();
        for c in 0..l {
            self.c_ub[c] = abs[c] + kernel.tilt.m;
        }
        self.milestones.push(k_new);
        self.update_suffix(k_old, k_new);
    }

    fn update_suffix(&mut self, k_old: usize, k_new: usize) {
        let l = self.path.l;
        self.suffix_max.resize((k_new + 1) * l, 0.0);
        for c in 0..l {
            self.suffix_max[k_new * l + c] = self.s(k_new, c);
        }
        for k in (k_old + 1..k_new).rev() {
            for c in 0..l {
                let v = self.s(k, c).max(self.suffix_max[(k + 1) * l + c]);
                self.suffix_max[k * l + c] = v;
            }
        }
        let tail: Vec<f64> = (0..l).map(|c| self.suffix_max[(k_old + 1) * l + c]).collect();
        for k in (0..=k_old).rev() {
            let mut changed = false;
            for c in 0..l {
                let cell = &mut self.suffix_max[k * l + c];
                if tail[c] > *cell {
                    *cell = tail[c];
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Extend until M(0..=n) are exact.
    pub fn ensure_settled(&mut self, n: usize) {
        while self.settled().is_none_or(|s| s < n) {
            self.extend_once();
        }
    }

    /// Exact (S, M) on 0..=n together with the driving primitives.
    pub fn extend_joint_path(&mut self, n: usize) -> JointPath {
        self.ensure_settled(n);
        let l = self.path.l;
        let d = self.path.d;
        JointPath {
            s: (0..=n).map(|k| (0..l).map(|c| self.s(k, c)).collect()).collect(),
            m: (0..=n).map(|k| (0..l).map(|c| self.future_max(k, c)).collect()).collect(),
            initial: self.initial.clone(),
            steps: (1..=n)
                .map(|k| StepPrimitives {
                    arrival_gaps: self.path.arrival[k * d..(k + 1) * d].to_vec(),
                    activity_gaps: self.path.activity[k * d..(k + 1) * d].to_vec(),
                    marks: self.path.marks[k * d..(k + 1) * d].to_vec(),
                })
                .collect(),
        }
    }

    /// Diagnostic dump: one row per stored index with S, M (where settled),
    /// and a milestone flag, preceded by a comment line holding C_UB.
    pub fn write_debug_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let l = self.path.l;
        let settled = self.settled();
        writeln!(out, "# c_ub,{}", join(&self.c_ub))?;
        let mut header = vec!["k".to_string()];
        header.extend((0..l).map(|c| format!("s{c}")));
        header.extend((0..l).map(|c| format!("m{c}")));
        header.push("milestone".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..=self.len() {
            let s: Vec<f64> = (0..l).map(|c| self.s(k, c)).collect();
            let m: Vec<String> = (0..l)
                .map(|c| {
                    if settled.is_some_and(|n| k <= n) {
                        format!("{}", self.future_max(k, c))
                    } else {
                        String::new()
                    }
                })
                .collect();
            let flag = u8::from(self.milestones.binary_search(&k).is_ok());
            writeln!(out, "{k},{},{},{flag}", join(&s), m.join(","))?;
        }
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}
