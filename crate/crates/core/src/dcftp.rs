//! Outer coupling-from-the-past loop: extend the stationary autonomous system
//! further into the past, run the padded vacation system N⁺⁺ forward to 0,
//! and once it empties replay the true network from that instant.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::DistributionSpec;
use crate::events::{EventKind, RealEvent};
use crate::fifo::{Engine, EngineError, SequenceSource, Trajectory};
use crate::multiwalk::{Mark, MarkTable, WalkError, WalkKernel};
use crate::network::{
    build_auxiliary, check_stability, solve_flow, AuxiliaryOptions, AuxiliaryRates, FlowSolution, NetworkError,
    NetworkSpec,
};
use crate::rng::{self, SimRng};
use crate::stationary_queue::{StationaryQueuePath, StationaryQueueState};
use crate::vacation::{evolve_vacation, extract_sequences, init_dominating, FreshServices, VacationTrajectory};

/// Tuning knobs. Defaults reproduce the documented behaviour; none of them
/// affects the law of the output, only the cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    /// Milestone height m; chosen from the tilting roots when absent.
    pub milestone_m: Option<f64>,
    pub delta_frac: f64,
    pub deltabar_frac: f64,
    /// First block length C_T; twice the slowest relaxation time when absent.
    /// Accepted as `C_T` in configuration files.
    #[serde(alias = "C_T")]
    pub block_length: Option<f64>,
    /// C_T is multiplied by this after each unsuccessful round.
    pub growth: f64,
    pub max_rounds: Option<u32>,
    /// Cap on the number of events in one window.
    pub max_events: Option<usize>,
    /// Run the pathwise dominance and prefix-hash assertions.
    pub debug: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            milestone_m: None,
            delta_frac: 0.5,
            deltabar_frac: 0.5,
            block_length: None,
            growth: 2.0,
            max_rounds: None,
            max_events: None,
            debug: false,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Options(m));
        if !(self.delta_frac > 0.0 && self.delta_frac < 1.0) {
            return bad(format!("delta_frac must lie in (0, 1), got {}", self.delta_frac));
        }
        if !(self.deltabar_frac > 0.0 && self.deltabar_frac < 1.0) {
            return bad(format!("deltabar_frac must lie in (0, 1), got {}", self.deltabar_frac));
        }
        if let Some(m) = self.milestone_m {
            if !(m.is_finite() && m > 0.0) {
                return bad(format!("milestone_m must be positive, got {m}"));
            }
        }
        if let Some(c) = self.block_length {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("block_length must be positive, got {c}"));
            }
        }
        if !(self.growth.is_finite() && self.growth >= 1.0) {
            return bad(format!("growth must be at least 1, got {}", self.growth));
        }
        if self.max_rounds == Some(0) {
            return bad("max_rounds must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid sampler options: {0}")]
    Options(String),
    #[error("resource budget exhausted after {} rounds (horizon {}); the run can be resumed", .0.rounds, .0.horizon)]
    BudgetExceeded(Box<SamplerRun>),
    #[error("dominance violated at t={time}, station {station}: {detail}")]
    Dominance { time: f64, station: usize, detail: String },
    #[error("randomness on the earlier window changed between rounds")]
    PrefixChanged,
}

/// The sampler's output at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryNetworkState {
    /// Queue length per station, including the customer in service.
    pub y: Vec<u64>,
    /// Remaining service of the customer in service, 0 when idle.
    pub residual_service: Vec<f64>,
    /// Time to the next external arrival; absent without external arrivals.
    pub residual_arrival: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceRecord {
    /// Instant in (−T, 0] at which N⁺⁺ was empty.
    pub tau: f64,
    pub rounds: u32,
    pub horizon: f64,
    /// Events in the final window.
    pub events: usize,
    /// Random variates consumed by the walk plus those drawn after time 0.
    pub draws: u64,
}

/// Everything derived from the spec once and shared by all samples.
#[derive(Debug, Clone)]
pub struct SamplerContext {
    pub spec: NetworkSpec,
    pub flow: FlowSolution,
    pub aux: AuxiliaryRates,
    pub kernel: Arc<WalkKernel>,
    pub block_length: f64,
    pub options: SamplerOptions,
    slowed_services: Vec<DistributionSpec>,
    marks: Vec<MarkTable>,
}

impl SamplerContext {
    pub fn new(spec: &NetworkSpec, options: &SamplerOptions) -> Result<Self, SamplerError> {
        options.validate()?;
        spec.validate()?;
        let flow = solve_flow(spec)?;
        let report = check_stability(spec, &flow);
        if !report.stable {
            return Err(NetworkError::Unstable {
                stations: report.violating,
                flow: flow.phi.clone(),
                mu: spec.mu(),
            }
            .into());
        }
        let aux = build_auxiliary(
            spec,
            &flow,
            &AuxiliaryOptions {
                delta_frac: options.delta_frac,
                deltabar_frac: options.deltabar_frac,
            },
        )?;
        let kernel = Arc::new(WalkKernel::for_network(spec, &aux, options.milestone_m)?);
        let block_length = options.block_length.unwrap_or_else(|| aux.default_block_length(&flow));
        let d = spec.d();
        Ok(SamplerContext {
            slowed_services: (0..d).map(|j| spec.services[j].scaled(aux.a[j])).collect(),
            marks: (0..d).map(|j| MarkTable::for_station(&spec.routing, j)).collect(),
            spec: spec.clone(),
            flow,
            aux,
            kernel,
            block_length,
            options: options.clone(),
        })
    }

    pub fn d(&self) -> usize {
        self.spec.d()
    }

    pub fn sample(&self, seed: u64) -> Result<(StationaryNetworkState, CoalescenceRecord), SamplerError> {
        self.resume(SamplerRun::new(self, seed))
    }

    /// Continue a run, e.g. one returned inside
    /// [`SamplerError::BudgetExceeded`] (after raising the caps).
    pub fn resume(&self, mut run: SamplerRun) -> Result<(StationaryNetworkState, CoalescenceRecord), SamplerError> {
        loop {
            if self.options.max_rounds.is_some_and(|m| run.rounds >= m) {
                return Err(SamplerError::BudgetExceeded(Box::new(run)));
            }
            run.rounds += 1;
            run.horizon += run.block;
            run.block *= self.options.growth;
            let horizon = run.horizon;
            let path = run.queue.compute_y_prime(horizon);
            let events = run.queue.timeline().real_time_events(horizon);
            if self.options.max_events.is_some_and(|m| events.len() > m) {
                run.rounds -= 1;
                run.block /= self.options.growth;
                run.horizon -= run.block;
                return Err(SamplerError::BudgetExceeded(Box::new(run)));
            }
            if self.options.debug {
                run.check_prefix(&events)?;
            }
            let init = init_dominating(&path, run.queue.timeline());
            let traj = evolve_vacation(&events, init, (-horizon, 0.0));
            if self.options.debug {
                check_against_autonomous(&traj, &path)?;
            }
            let counts = traj.counts();
            let coalesced = detect_coalescence(&counts);
            log::debug!(
                "seed {} round {}: T = {horizon:.3}, {} events, coalescence {coalesced:?}",
                run.seed,
                run.rounds,
                events.len()
            );
            if let Some(tau) = coalesced {
                let (state, replay) = self.replay(&run, &traj, tau)?;
                if self.options.debug {
                    check_replay_dominated(&replay, &counts, tau)?;
                }
                let record = CoalescenceRecord {
                    tau,
                    rounds: run.rounds,
                    horizon,
                    events: events.len(),
                    draws: run.queue.walk().draws() + replay.tail_draws,
                };
                return Ok((state, record));
            }
        }
    }

    /// Rebuilds the window (−horizon, 0] of sample `seed`: the run holding
    /// its randomness, the Ȳ′ path and the N⁺⁺ trajectory. With the horizon
    /// of a [`CoalescenceRecord`] this is the final round of that sample.
    pub fn window(&self, seed: u64, horizon: f64) -> (SamplerRun, StationaryQueuePath, VacationTrajectory) {
        let mut run = SamplerRun::new(self, seed);
        run.horizon = horizon;
        let path = run.queue.compute_y_prime(horizon);
        let events = run.queue.timeline().real_time_events(horizon);
        let init = init_dominating(&path, run.queue.timeline());
        let traj = evolve_vacation(&events, init, (-horizon, 0.0));
        (run, path, traj)
    }

    fn replay(&self, run: &SamplerRun, traj: &VacationTrajectory, tau: f64) -> Result<(StationaryNetworkState, Replay), SamplerError> {
        replay_from(self, run, traj, tau)
    }
}

/// Resumable state of one sample: the reversed-time construction with all
/// randomness drawn so far, and the horizon schedule.
#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub seed: u64,
    pub rounds: u32,
    pub horizon: f64,
    pub block: f64,
    queue: StationaryQueueState,
    prefix: Option<(f64, u64)>,
}

impl PartialEq for SamplerRun {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.rounds == other.rounds && self.horizon == other.horizon
    }
}

impl SamplerRun {
    pub fn new(ctx: &SamplerContext, seed: u64) -> Self {
        SamplerRun {
            seed,
            rounds: 0,
            horizon: 0.0,
            block: ctx.block_length,
            queue: StationaryQueueState::new(Arc::clone(&ctx.kernel), seed),
            prefix: None,
        }
    }

    pub fn queue(&self) -> &StationaryQueueState {
        &self.queue
    }

    pub fn queue_mut(&mut self) -> &mut StationaryQueueState {
        &mut self.queue
    }

    fn check_prefix(&mut self, events: &[RealEvent]) -> Result<(), SamplerError> {
        if let Some((from, digest)) = self.prefix {
            if timeline_digest(events, from) != digest {
                return Err(SamplerError::PrefixChanged);
            }
        }
        let from = -self.horizon;
        self.prefix = Some((from, timeline_digest(events, from)));
        Ok(())
    }
}

/// Hash of every event at or after `from`.
pub fn timeline_digest(events: &[RealEvent], from: f64) -> u64 {
    let mut h = DefaultHasher::new();
    for e in events.iter().filter(|e| e.time >= from) {
        e.time.to_bits().hash(&mut h);
        e.station.hash(&mut h);
        match e.kind {
            EventKind::Arrival => 0u8.hash(&mut h),
            EventKind::Activity { gap, mark } => {
                1u8.hash(&mut h);
                gap.to_bits().hash(&mut h);
                mark.hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Earliest instant at which every station is empty, after all events at
/// that instant; the trajectory's start counts.
pub fn detect_coalescence(traj: &Trajectory) -> Option<f64> {
    coalescence_times(traj).next()
}

/// Latest such instant.
pub fn latest_coalescence(traj: &Trajectory) -> Option<f64> {
    coalescence_times(traj).last()
}

fn coalescence_times(traj: &Trajectory) -> impl Iterator<Item = f64> + '_ {
    let n = traj.times.len();
    (0..n).filter_map(move |k| {
        let last_at_time = k + 1 == n || traj.times[k + 1] != traj.times[k];
        (last_at_time && traj.values[k].iter().all(|v| *v == 0)).then_some(traj.times[k])
    })
}

/// Y⁺⁺ ≤ Ȳ′ + 1 throughout the window.
fn check_against_autonomous(traj: &VacationTrajectory, path: &StationaryQueuePath) -> Result<(), SamplerError> {
    let value = |i: usize, t: f64| {
        let s = &path.stations[i];
        s.y[s.times.partition_point(|e| *e < -t)]
    };
    for step in &traj.steps {
        for (i, y) in step.y.iter().enumerate() {
            let bound = value(i, step.event.time) + 1;
            if *y as i64 > bound {
                return Err(SamplerError::Dominance {
                    time: step.event.time,
                    station: i,
                    detail: format!("padded vacation queue {y} above autonomous queue + 1 = {bound}"),
                });
            }
        }
    }
    Ok(())
}

/// ΣY ≤ ΣY⁺⁺ on [τ, 0].
fn check_replay_dominated(replay: &Replay, plus: &Trajectory, tau: f64) -> Result<(), SamplerError> {
    let real = &replay.trajectory;
    let times = plus.breakpoints(tau, 0.0).chain(real.breakpoints(tau, 0.0));
    for t in times {
        let (y, yp) = (real.total_at(t), plus.total_at(t));
        if y > yp {
            return Err(SamplerError::Dominance {
                time: t,
                station: usize::MAX,
                detail: format!("replayed total {y} above padded vacation total {yp}"),
            });
        }
    }
    Ok(())
}

struct Replay {
    trajectory: Trajectory,
    tail_draws: u64,
}

/// Services beyond those N⁺⁺ completed before 0: first the one in progress
/// at 0 (its length conditioned on its age), then fresh i.i.d. draws.
struct TailExtender<'a> {
    ctx: &'a SamplerContext,
    straddle: Vec<Option<f64>>,
    straddle_done: Vec<Option<(f64, Mark)>>,
    fresh: FreshServices,
    rng: SimRng,
    draws: u64,
}

impl TailExtender<'_> {
    fn get(&mut self, j: usize, k: usize) -> (f64, Mark) {
        match self.straddle[j] {
            Some(age) if k == 0 => *self.straddle_done[j].get_or_insert_with(|| {
                self.draws += 2;
                let law = &self.ctx.slowed_services[j];
                (age + law.excess_given_age(age, &mut self.rng), self.ctx.marks[j].draw(&mut self.rng))
            }),
            Some(_) => {
                self.draws += 2;
                self.fresh.get(j, k - 1)
            }
            None => {
                self.draws += 2;
                self.fresh.get(j, k)
            }
        }
    }
}

fn replay_from(
    ctx: &SamplerContext,
    run: &SamplerRun,
    traj: &VacationTrajectory,
    tau: f64,
) -> Result<(StationaryNetworkState, Replay), SamplerError> {
    let d = ctx.d();
    let tl = run.queue.timeline();
    let mut rng = rng::stream(run.seed, rng::streams::TAIL);
    let mut draws = 0;
    let residual_arrival: Vec<Option<f64>> = ctx
        .spec
        .arrivals
        .iter()
        .enumerate()
        .map(|(i, law)| {
            law.as_ref().map(|law| {
                draws += 1;
                law.excess_given_age(tl.arrival_epochs[i][0], &mut rng)
            })
        })
        .collect();
    let fresh_rng = rng::stream(run.seed, rng::streams::FRESH);
    let mut tail = TailExtender {
        ctx,
        straddle: (0..d)
            .map(|j| traj.last.in_service[j].then(|| tl.activity_epochs[j][0]))
            .collect(),
        straddle_done: vec![None; d],
        fresh: FreshServices::new(ctx.slowed_services.clone(), ctx.marks.clone(), fresh_rng),
        rng,
        draws,
    };
    let seq = extract_sequences(traj);
    let services = seq.services_after(tau);
    let arrivals = seq.arrivals_after(tau);
    let (engine, _) = replay_gjn_forward(&services, &arrivals, &ctx.aux.a, tau, 0.0, |j, k| {
        Some(tail.get(j, k))
    })?;
    let state = StationaryNetworkState {
        y: engine.counts(),
        residual_service: engine.residual_services(),
        residual_arrival,
    };
    let tail_draws = tail.draws;
    Ok((
        state,
        Replay {
            trajectory: engine.trajectory.expect("recorded"),
            tail_draws,
        },
    ))
}

/// FIFO network started empty at `from` and run to `to`: the k-th service at
/// station i takes σ⁰_i(k)/a_i and routes by its mark. Returns the engine
/// (with its trajectory) and the number of services taken beyond the lists.
pub fn replay_gjn_forward<F>(
    services: &[Vec<(f64, Mark)>],
    arrivals: &[(f64, usize)],
    a: &[f64],
    from: f64,
    to: f64,
    tail: F,
) -> Result<(Engine, u64), EngineError>
where
    F: FnMut(usize, usize) -> Option<(f64, Mark)>,
{
    let d = services.len();
    let vacations = vec![Vec::new(); d];
    let mut src = SequenceSource::new(services, &vacations, a, tail);
    let mut engine = Engine::empty(d, from).record();
    engine.run(arrivals, to, &mut src)?;
    let beyond = src
        .used_services()
        .iter()
        .zip(services)
        .map(|(u, s)| u.saturating_sub(s.len()) as u64)
        .sum();
    Ok((engine, beyond))
}

pub fn sample_stationary(
    spec: &NetworkSpec,
    seed: u64,
    options: &SamplerOptions,
) -> Result<(StationaryNetworkState, CoalescenceRecord), SamplerError> {
    SamplerContext::new(spec, options)?.sample(seed)
}

/// Plain forward FIFO simulation from empty, observed every `spacing` time
/// units after `burn_in` up to `burn_in + horizon`. Biased by the finite
/// burn-in; only a cross-check.
pub fn naive_steady_state_sim(
    spec: &NetworkSpec,
    burn_in: f64,
    horizon: f64,
    spacing: f64,
    seed: u64,
) -> Result<Vec<Vec<u64>>, SamplerError> {
    spec.validate()?;
    let flow = solve_flow(spec)?;
    let report = check_stability(spec, &flow);
    if !report.stable {
        return Err(NetworkError::Unstable {
            stations: report.violating,
            flow: flow.phi,
            mu: spec.mu(),
        }
        .into());
    }
    let d = spec.d();
    let end = burn_in + horizon;
    let mut rng = rng::stream(seed, rng::streams::HARNESS);
    let mut arrivals = Vec::new();
    for (i, law) in spec.arrivals.iter().enumerate() {
        if let Some(law) = law {
            let mut t = law.sample(&mut rng);
            while t <= end {
                arrivals.push((t, i));
                t += law.sample(&mut rng);
            }
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut fresh = FreshServices::new(
        spec.services.clone(),
        (0..d).map(|j| MarkTable::for_station(&spec.routing, j)).collect(),
        rng::stream(seed, rng::streams::TAIL),
    );
    let lists = vec![Vec::new(); d];
    let vacations = vec![Vec::new(); d];
    let ones = vec![1.0; d];
    let mut src = SequenceSource::new(&lists, &vacations, &ones, |j, k| Some(fresh.get(j, k)));
    let mut engine = Engine::empty(d, 0.0);
    let mut out = Vec::new();
    if spacing > 0.0 {
        let mut k = 1u64;
        loop {
            let t = burn_in + spacing * k as f64;
            if t > end {
                break;
            }
            engine.run(&arrivals, t, &mut src)?;
            out.push(engine.counts());
            k += 1;
        }
    }
    Ok(out)
}
