//! Goodness-of-fit and correlation statistics used by the validation harness.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Sample mean and the half-width `1.96·sd/√n` of its 95% normal interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Kolmogorov limiting survival function Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²).
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = f64::from(k);
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sqrt_n = n_eff.sqrt();
    kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> (f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    (d, ks_p_value(d, n))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value. Ties are
/// handled by stepping over equal values together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    (d, ks_p_value(d, na * nb / (na + nb)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square goodness of fit of integer data against a pmf on {0, 1, ...}.
///
/// Bins are grown from the left until each holds an expected count of at
/// least 5; the remaining mass (including the infinite tail) forms the last
/// bin, merged into its neighbour if it is too light.
pub fn chi_square_gof<P: Fn(u64) -> f64>(data: &[u64], pmf: P) -> ChiSquareResult {
    let n = data.len() as f64;
    let max = data.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; max as usize + 1];
    for &x in data {
        counts[x as usize] += 1;
    }

    // (observed, expected) per bin.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut obs = 0.0;
    let mut exp = 0.0;
    let mut mass = 0.0;
    let mut k = 0u64;
    loop {
        let p = pmf(k);
        obs += counts.get(k as usize).copied().unwrap_or(0) as f64;
        exp += n * p;
        mass += p;
        k += 1;
        let tail_exp = n * (1.0 - mass).max(0.0);
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
        if tail_exp < 5.0 && k > max {
            break;
        }
        if k > max + 10_000 {
            break;
        }
    }
    let tail_obs: f64 = counts.iter().skip(k as usize).map(|c| *c as f64).sum::<f64>() + obs;
    let tail_exp = n * (1.0 - mass).max(0.0) + exp;
    match bins.last_mut() {
        Some(last) if tail_exp < 5.0 => {
            last.0 += tail_obs;
            last.1 += tail_exp;
        }
        _ => bins.push((tail_obs, tail_exp)),
    }

    let statistic: f64 = bins
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).expect("positive dof");
        1.0 - chi.cdf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

/// Pearson correlation with the two-sided p-value of the test of zero
/// correlation, t = r √((n−2)/(1−r²)) against Student-t with n−2 degrees of
/// freedom. `None` when either sample is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 3 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let student = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        2.0 * (1.0 - student.cdf(t.abs()))
    };
    Some((r, p))
}
