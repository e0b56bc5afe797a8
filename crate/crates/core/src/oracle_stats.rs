//! Product-form oracle for exponential networks and the statistical checks
//! run against it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::network::{solve_flow, NetworkError, NetworkSpec, TABLE1_LAMBDAS};
use crate::stats::{chi_square_gof, mean_ci95, pearson, ChiSquareResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("the product-form oracle needs exponential arrivals and services")]
    NotMarkovian,
    #[error("utilisation of station {station} is {rho}, outside [0, 1)")]
    Unstable { station: usize, rho: f64 },
    #[error("at least 2 samples are needed, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Independent Geometric(ρ_i) marginals: P(Y_i = k) = (1 − ρ_i) ρ_i^k.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductFormOracle {
    pub rho: Vec<f64>,
}

impl ProductFormOracle {
    pub fn new(spec: &NetworkSpec) -> Result<Self, OracleError> {
        if !spec.is_markovian() {
            return Err(OracleError::NotMarkovian);
        }
        Self::from_rho(solve_flow(spec)?.rho)
    }

    pub fn from_rho(rho: Vec<f64>) -> Result<Self, OracleError> {
        if let Some((station, r)) = rho.iter().enumerate().find(|(_, r)| !(**r >= 0.0 && **r < 1.0)) {
            return Err(OracleError::Unstable { station, rho: *r });
        }
        Ok(ProductFormOracle { rho })
    }

    pub fn d(&self) -> usize {
        self.rho.len()
    }

    /// E[Y_i] = ρ_i / (1 − ρ_i).
    pub fn mean(&self, i: usize) -> f64 {
        self.rho[i] / (1.0 - self.rho[i])
    }

    pub fn pmf(&self, i: usize, k: u64) -> f64 {
        let r = self.rho[i];
        if r == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (1.0 - r) * r.powf(k as f64)
    }

    pub fn joint_pmf(&self, y: &[u64]) -> f64 {
        y.iter().enumerate().map(|(i, k)| self.pmf(i, *k)).product()
    }

    /// P(Y_i > k) = ρ_i^{k+1}.
    pub fn tail(&self, i: usize, k: u64) -> f64 {
        self.rho[i].powf((k + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationSummary {
    pub mean: f64,
    /// 1.96 · sd / √n.
    pub half_width: f64,
    pub oracle_mean: Option<f64>,
    pub covers: Option<bool>,
    pub chi_square: Option<ChiSquare>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl From<ChiSquareResult> for ChiSquare {
    fn from(c: ChiSquareResult) -> Self {
        ChiSquare {
            statistic: c.statistic,
            dof: c.dof,
            p_value: c.p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub stations: Vec<StationSummary>,
    /// Pearson r and p-value for the first two stations; absent for a single
    /// station or a constant sample.
    pub correlation: Option<(f64, f64)>,
}

impl SampleSummary {
    /// CSV with one row per station.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "station,n,mean,ci_half_width,oracle_mean,covers,chi2,chi2_dof,chi2_p,pearson_r,pearson_p")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, s) in self.stations.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                i + 1,
                self.n,
                s.mean,
                s.half_width,
                opt(s.oracle_mean),
                s.covers.map(|c| c.to_string()).unwrap_or_default(),
                opt(s.chi_square.map(|c| c.statistic)),
                s.chi_square.map(|c| c.dof.to_string()).unwrap_or_default(),
                opt(s.chi_square.map(|c| c.p_value)),
                opt(self.correlation.map(|c| c.0)),
                opt(self.correlation.map(|c| c.1)),
            )?;
        }
        Ok(())
    }
}

/// Per-station means with 95% CIs, the correlation of the first two
/// stations, and, with an oracle, chi-square fits of each marginal.
pub fn summarize(samples: &[Vec<u64>], oracle: Option<&ProductFormOracle>) -> Result<SampleSummary, OracleError> {
    let n = samples.len();
    if n < 2 {
        return Err(OracleError::TooFewSamples(n));
    }
    let d = samples[0].len();
    let column = |i: usize| -> Vec<u64> { samples.iter().map(|s| s[i]).collect() };
    let stations = (0..d)
        .map(|i| {
            let ys = column(i);
            let xs: Vec<f64> = ys.iter().map(|y| *y as f64).collect();
            let (mean, half_width) = mean_ci95(&xs);
            let oracle_mean = oracle.map(|o| o.mean(i));
            StationSummary {
                mean,
                half_width,
                oracle_mean,
                covers: oracle_mean.map(|m| (mean - m).abs() <= half_width),
                chi_square: oracle.map(|o| chi_square_gof(&ys, |k| o.pmf(i, k)).into()),
            }
        })
        .collect();
    let correlation = if d >= 2 {
        let a: Vec<f64> = column(0).iter().map(|y| *y as f64).collect();
        let b: Vec<f64> = column(1).iter().map(|y| *y as f64).collect();
        pearson(&a, &b)
    } else {
        None
    };
    Ok(SampleSummary {
        n,
        stations,
        correlation,
    })
}

/// Joint counts of the sampled states, one CSV row per distinct state.
pub fn write_histogram_csv<W: Write>(samples: &[Vec<u64>], mut out: W) -> io::Result<()> {
    let mut counts: BTreeMap<&[u64], u64> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.as_slice()).or_default() += 1;
    }
    let d = samples.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
    writeln!(out, "{},count", header.join(","))?;
    for (state, c) in counts {
        let cells: Vec<String> = state.iter().map(u64::to_string).collect();
        writeln!(out, "{},{c}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Column {
    pub lambda: [f64; 2],
    pub summary: SampleSummary,
}

/// The five-column reference table: true means and simulation estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Report {
    pub columns: Vec<Table1Column>,
}

impl Table1Report {
    /// Column summaries from samples of the five reference networks, in
    /// column order.
    pub fn from_samples(samples: &[Vec<Vec<u64>>]) -> Result<Self, OracleError> {
        let columns = samples
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let oracle = ProductFormOracle::new(&NetworkSpec::table1_column(c))?;
                Ok(Table1Column {
                    lambda: TABLE1_LAMBDAS[c],
                    summary: summarize(s, Some(&oracle))?,
                })
            })
            .collect::<Result<Vec<_>, OracleError>>()?;
        Ok(Table1Report { columns })
    }

    /// Columns whose CI misses the true mean of some station.
    pub fn misses(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|c| self.columns[*c].summary.stations.iter().any(|s| s.covers == Some(false)))
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<28}");
            for c in cells {
                let _ = write!(out, "{c:>18}");
            }
            out.push('\n');
        };
        let cols = &self.columns;
        row(&mut out, "(lambda1, lambda2)", cols.iter().map(|c| format!("({}, {})", c.lambda[0], c.lambda[1])).collect());
        for i in 0..2 {
            row(
                &mut out,
                &format!("True value E[Y{}]", i + 1),
                cols.iter()
                    .map(|c| format!("{:.4}", c.summary.stations[i].oracle_mean.unwrap_or(f64::NAN)))
                    .collect(),
            );
            row(
                &mut out,
                &format!("Simulation E[Y{}]", i + 1),
                cols.iter()
                    .map(|c| {
                        let s = &c.summary.stations[i];
                        let flag = if s.covers == Some(false) { "*" } else { "" };
                        format!("{:.4}±{:.4}{flag}", s.mean, s.half_width)
                    })
                    .collect(),
            );
        }
        row(
            &mut out,
            "Correlation r",
            cols.iter()
                .map(|c| c.summary.correlation.map_or("-".into(), |(r, _)| format!("{r:.4}")))
                .collect(),
        );
        row(
            &mut out,
            "p-value",
            cols.iter()
                .map(|c| c.summary.correlation.map_or("-".into(), |(_, p)| format!("{p:.4}")))
                .collect(),
        );
        let misses = self.misses();
        if !misses.is_empty() {
            let names: Vec<String> = misses.iter().map(|c| (c + 1).to_string()).collect();
            let _ = writeln!(out, "* CI excludes the true value (column {})", names.join(", "));
        }
        out
    }
}
