//! Network description, flow equations, stability, and the slowed auxiliary
//! network with its drift-split rates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistributionError, DistributionSpec};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("station {station}: {source}")]
    Distribution {
        station: usize,
        #[source]
        source: DistributionError,
    },
    #[error("routing matrix is not open (spectral radius >= 1)")]
    NotOpen,
    #[error("network is unstable at station(s) {stations:?}: flow {flow:?} vs service rate {mu:?}")]
    Unstable {
        stations: Vec<usize>,
        flow: Vec<f64>,
        mu: Vec<f64>,
    },
}

/// A generalized Jackson network: renewal external arrivals (absent means
/// λ_i = 0), i.i.d. service times, and Markovian routing `routing[i][j]` from
/// station i to station j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arrivals: Vec<Option<DistributionSpec>>,
    pub services: Vec<DistributionSpec>,
    pub routing: Vec<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(
        arrivals: Vec<Option<DistributionSpec>>,
        services: Vec<DistributionSpec>,
        routing: Vec<Vec<f64>>,
    ) -> Result<Self, NetworkError> {
        let spec = NetworkSpec {
            arrivals,
            services,
            routing,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Exponential two-station network of the reference table, columns 0..5.
    pub fn table1_column(column: usize) -> Self {
        let lambdas = TABLE1_LAMBDAS[column];
        NetworkSpec {
            arrivals: lambdas
                .iter()
                .map(|l| Some(DistributionSpec::exponential(*l)))
                .collect(),
            services: vec![DistributionSpec::exponential(1.0); 2],
            routing: vec![vec![0.0, 0.11], vec![0.1, 0.0]],
        }
    }

    /// Single M/M/1-type station with the given laws.
    pub fn single_station(arrival: DistributionSpec, service: DistributionSpec) -> Self {
        NetworkSpec {
            arrivals: vec![Some(arrival)],
            services: vec![service],
            routing: vec![vec![0.0]],
        }
    }

    pub fn d(&self) -> usize {
        self.services.len()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.arrivals
            .iter()
            .map(|a| a.as_ref().map_or(0.0, |a| 1.0 / a.mean()))
            .collect()
    }

    pub fn mu(&self) -> Vec<f64> {
        self.services.iter().map(|s| 1.0 / s.mean()).collect()
    }

    /// Probability of leaving the network after service at station i.
    pub fn exit_probability(&self, i: usize) -> f64 {
        (1.0 - self.routing[i].iter().sum::<f64>()).max(0.0)
    }

    pub fn is_markovian(&self) -> bool {
        self.services.iter().all(DistributionSpec::is_exponential)
            && self.arrivals.iter().flatten().all(DistributionSpec::is_exponential)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let d = self.d();
        let invalid = |m: String| Err(NetworkError::Invalid(m));
        if d == 0 {
            return invalid("network needs at least one station".into());
        }
        if self.arrivals.len() != d {
            return invalid(format!("{} arrival entries for {d} stations", self.arrivals.len()));
        }
        if self.routing.len() != d || self.routing.iter().any(|r| r.len() != d) {
            return invalid(format!("routing matrix must be {d}x{d}"));
        }
        for (i, row) in self.routing.iter().enumerate() {
            if row.iter().any(|q| !(q.is_finite() && (0.0..=1.0).contains(q))) {
                return invalid(format!("routing row {i} has entries outside [0,1]"));
            }
            if row.iter().sum::<f64>() > 1.0 + ROW_TOL {
                return invalid(format!("routing row {i} sums above 1"));
            }
            if row[i] != 0.0 {
                return invalid(format!("routing[{i}][{i}] must be 0 (no self-feedback)"));
            }
        }
        for (i, s) in self.services.iter().enumerate() {
            s.validate()
                .map_err(|source| NetworkError::Distribution { station: i, source })?;
        }
        for (i, a) in self.arrivals.iter().enumerate() {
            if let Some(a) = a {
                a.validate()
                    .map_err(|source| NetworkError::Distribution { station: i, source })?;
                if !a.has_unbounded_support() {
                    return invalid(format!(
                        "station {i}: interarrival law {a} must have unbounded support"
                    ));
                }
            }
        }
        if self.arrivals.iter().all(Option::is_none) {
            return invalid("at least one station needs external arrivals".into());
        }
        Ok(())
    }
}

pub const TABLE1_LAMBDAS: [[f64; 2]; 5] = [
    [0.225, 0.717],
    [0.220, 0.767],
    [0.218, 0.787],
    [0.216, 0.807],
    [0.214, 0.827],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// Total arrival rate into each station.
    pub phi: Vec<f64>,
    /// Utilization φ_i/μ_i.
    pub rho: Vec<f64>,
}

fn transpose_system(routing: &[Vec<f64>]) -> DMatrix<f64> {
    let d = routing.len();
    DMatrix::from_fn(d, d, |r, c| {
        let id = if r == c { 1.0 } else { 0.0 };
        id - routing[c][r]
    })
}

/// (I − Qᵀ)⁻¹, or `NotOpen` when Q has spectral radius ≥ 1.
///
/// For a nonnegative Q the spectral radius is below one exactly when I − Q
/// is invertible with an entrywise nonnegative inverse.
pub fn open_inverse(routing: &[Vec<f64>]) -> Result<DMatrix<f64>, NetworkError> {
    let m = transpose_system(routing);
    let inv = m.lu().try_inverse().ok_or(NetworkError::NotOpen)?;
    if inv.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return Err(NetworkError::NotOpen);
    }
    Ok(inv)
}

/// (I − Qᵀ)⁻¹ as the Neumann series Σ (Qᵀ)ⁿ, summed until the terms fall
/// below `tol`. Only meaningful for open Q.
pub fn neumann_inverse(routing: &[Vec<f64>], tol: f64) -> DMatrix<f64> {
    let d = routing.len();
    let qt = DMatrix::from_fn(d, d, |r, c| routing[c][r]);
    let mut sum = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for _ in 0..100_000 {
        term = &term * &qt;
        sum += &term;
        if term.amax() < tol {
            break;
        }
    }
    sum
}

pub fn solve_flow(spec: &NetworkSpec) -> Result<FlowSolution, NetworkError> {
    spec.validate()?;
    let inv = open_inverse(&spec.routing)?;
    let lambda = DVector::from_vec(spec.lambda());
    let phi = &inv * &lambda;
    let mu = spec.mu();
    Ok(FlowSolution {
        rho: phi.iter().zip(&mu).map(|(p, m)| p / m).collect(),
        phi: phi.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// μ_i − φ_i.
    pub slack: Vec<f64>,
    pub violating: Vec<usize>,
}

pub fn check_stability(spec: &NetworkSpec, flow: &FlowSolution) -> StabilityReport {
    let slack: Vec<f64> = spec.mu().iter().zip(&flow.phi).map(|(m, p)| m - p).collect();
    let violating: Vec<usize> = slack
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= 0.0)
        .map(|(i, _)| i)
        .collect();
    StabilityReport {
        stable: violating.is_empty(),
        slack,
        violating,
    }
}

/// Tuning of the auxiliary construction. Both fractions must lie in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryOptions {
    pub delta_frac: f64,
    pub deltabar_frac: f64,
}

impl Default for AuxiliaryOptions {
    fn default() -> Self {
        AuxiliaryOptions {
            delta_frac: 0.5,
            deltabar_frac: 0.5,
        }
    }
}

/// Rates of the slowed network N⁰ and of the drift split of its netput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryRates {
    /// Service time scale factors μ_i/μ⁰_i ≥ 1.
    pub a: Vec<f64>,
    pub mu0: Vec<f64>,
    pub delta: f64,
    pub deltabar: f64,
    /// λ_i + δ̄.
    pub gamma: Vec<f64>,
    /// `phi_route[j][i]` = Q_ji (μ⁰_j + δ̄).
    pub phi_route: Vec<Vec<f64>>,
    /// γ_i + Σ_j φ_ji.
    pub beta: Vec<f64>,
}

pub fn build_auxiliary(
    spec: &NetworkSpec,
    flow: &FlowSolution,
    options: &AuxiliaryOptions,
) -> Result<AuxiliaryRates, NetworkError> {
    for (name, v) in [("delta_frac", options.delta_frac), ("deltabar_frac", options.deltabar_frac)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(NetworkError::Invalid(format!("{name} must lie in (0,1), got {v}")));
        }
    }
    let report = check_stability(spec, flow);
    if !report.stable {
        return Err(NetworkError::Unstable {
            stations: report.violating,
            flow: flow.phi.clone(),
            mu: spec.mu(),
        });
    }
    let d = spec.d();
    let q = &spec.routing;
    let mu = spec.mu();
    let lambda = spec.lambda();
    let inv = open_inverse(q)?;
    let h: Vec<f64> = (0..d).map(|i| inv.row(i).sum()).collect();

    let min_slack = report.slack.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_h = h.iter().cloned().fold(0.0, f64::max);
    let delta = options.delta_frac * min_slack / max_h;
    let mu0: Vec<f64> = (0..d).map(|i| flow.phi[i] + delta * h[i]).collect();
    let a: Vec<f64> = (0..d).map(|i| mu[i] / mu0[i]).collect();

    let inflow = |i: usize| (0..d).map(|j| q[j][i] * mu0[j]).sum::<f64>();
    let col_sum = |i: usize| (0..d).map(|j| q[j][i]).sum::<f64>();
    let margin = (0..d)
        .map(|i| mu0[i] - lambda[i] - inflow(i))
        .fold(f64::INFINITY, f64::min);
    let max_col = (0..d).map(col_sum).fold(0.0, f64::max);
    let deltabar = options.deltabar_frac * margin / (1.0 + max_col);

    let gamma: Vec<f64> = lambda.iter().map(|l| l + deltabar).collect();
    let phi_route: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| q[j][i] * (mu0[j] + deltabar)).collect())
        .collect();
    let beta: Vec<f64> = (0..d)
        .map(|i| gamma[i] + (0..d).map(|j| phi_route[j][i]).sum::<f64>())
        .collect();

    let aux = AuxiliaryRates {
        a,
        mu0,
        delta,
        deltabar,
        gamma,
        phi_route,
        beta,
    };
    debug_assert!(aux.violations(spec).is_empty(), "{:?}", aux.violations(spec));
    Ok(aux)
}

impl AuxiliaryRates {
    /// Default retry block length: twice the slowest relaxation time
    /// 1/(μ⁰_i − φ_i) of the slowed network.
    pub fn default_block_length(&self, flow: &FlowSolution) -> f64 {
        2.0 * self
            .mu0
            .iter()
            .zip(&flow.phi)
            .map(|(m, p)| 1.0 / (m - p))
            .fold(0.0, f64::max)
    }

    /// Human-readable list of violated defining inequalities (empty when the
    /// construction is sound).
    pub fn violations(&self, spec: &NetworkSpec) -> Vec<String> {
        let d = spec.d();
        let q = &spec.routing;
        let lambda = spec.lambda();
        let mu = spec.mu();
        let mut out = Vec::new();
        for i in 0..d {
            let inflow: f64 = (0..d).map(|j| q[j][i] * self.mu0[j]).sum();
            let col: f64 = (0..d).map(|j| q[j][i]).sum();
            if !(lambda[i] < self.mu0[i] - inflow) {
                out.push(format!("station {i}: lambda >= (I - Q^T) mu0"));
            }
            if !(lambda[i] + inflow + self.deltabar * (1.0 + col) < self.mu0[i]) {
                out.push(format!("station {i}: drift split margin not positive"));
            }
            if !(self.a[i] >= 1.0) {
                out.push(format!("station {i}: scale factor below 1"));
            }
            if !(self.mu0[i] <= mu[i]) {
                out.push(format!("station {i}: mu0 above mu"));
            }
        }
        out
    }
}

/// A law with the given mean drawn from one of the supported families;
/// uniform laws only when `bounded_ok`.
fn random_law<R: Rng + ?Sized>(rng: &mut R, mean: f64, bounded_ok: bool) -> DistributionSpec {
    let families = if bounded_ok { 4 } else { 3 };
    match rng.random_range(0..families) {
        0 => DistributionSpec::exponential(1.0 / mean),
        1 => {
            let k = rng.random_range(2..=4u32);
            DistributionSpec::erlang(k, f64::from(k) / mean)
        }
        2 => DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![2.0 / mean, 2.0 / (3.0 * mean)]),
        _ => DistributionSpec::uniform(0.5 * mean, 1.5 * mean),
    }
}

/// Random stable network with `d` stations and mixed laws: sparse open
/// routing, some stations without external arrivals, loads in [0.2, 0.85].
pub fn random_stable_spec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> NetworkSpec {
    loop {
        let mut routing = vec![vec![0.0; d]; d];
        for (i, row) in routing.iter_mut().enumerate() {
            let budget = rng.random_range(0.0..0.8);
            let mut weights: Vec<f64> = (0..d)
                .map(|j| if j != i && rng.random::<f64>() < 0.6 { rng.random::<f64>() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w *= budget / total);
            }
            *row = weights;
        }
        let lambda: Vec<f64> = (0..d)
            .map(|i| if i == 0 || rng.random::<f64>() < 0.7 { rng.random_range(0.1..1.0) } else { 0.0 })
            .collect();
        let Ok(inv) = open_inverse(&routing) else { continue };
        let phi = inv * DVector::from_vec(lambda.clone());
        let arrivals = lambda
            .iter()
            .map(|l| (*l > 0.0).then(|| random_law(rng, 1.0 / l, false)))
            .collect();
        let services = phi
            .iter()
            .map(|p| {
                let mu = if *p > 0.0 { p / rng.random_range(0.2..0.85) } else { 1.0 };
                random_law(rng, 1.0 / mu, true)
            })
            .collect();
        if let Ok(spec) = NetworkSpec::new(arrivals, services, routing) {
            return spec;
        }
    }
}
