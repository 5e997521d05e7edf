//! Exact statistical primitives used by the coding and graph stages.
//!
//! Nothing here depends on an external numerics crate: the p-values are
//! computed by exact enumeration where the sample is small enough, and the
//! normal tail uses a local `erfc`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Combined sample size up to which the rank-sum test is exact.
pub const EXACT_RANK_SUM_LIMIT: usize = 20;

const PEARSON_SLACK: f64 = 1e-12;
const FISHER_RELATIVE_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub sidedness: Sidedness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the response has zero total variance.
    pub r_squared: Option<f64>,
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "pearson: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Validation("pearson: need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedVariance("pearson: constant input"));
    }
    let r = sxy / (sxx * syy).sqrt();
    debug_assert!(r.abs() <= 1.0 + PEARSON_SLACK);
    Ok(r.clamp(-1.0, 1.0))
}

/// Midranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided Wilcoxon rank-sum test. The statistic is the rank sum of `a`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wilcoxon_rank_sum: both samples need values"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let n = pooled.len();
    if n <= EXACT_RANK_SUM_LIMIT {
        Ok(TestResult {
            statistic: w,
            p_value: exact_rank_sum_p(&ranks, a.len()),
            method: Method::Exact,
            sidedness: Sidedness::TwoSided,
        })
    } else {
        Ok(TestResult {
            statistic: w,
            p_value: normal_rank_sum_p(&pooled, &ranks, a.len()),
            method: Method::NormalApprox,
            sidedness: Sidedness::TwoSided,
        })
    }
}

/// Exact null distribution of the rank sum, built by subset-sum counting over
/// doubled midranks so that every quantity stays an integer.
fn exact_rank_sum_p(ranks: &[f64], k: usize) -> f64 {
    let n = ranks.len();
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0u64; total + 1]; k + 1];
    ways[0][0] = 1;
    for &r in &doubled {
        for j in (1..=k).rev() {
            for s in (r..=total).rev() {
                let add = ways[j - 1][s - r];
                if add != 0 {
                    ways[j][s] += add;
                }
            }
        }
    }
    let observed: usize = doubled[..k].iter().sum();
    let centre2 = (k * (n + 1)) as i64; // doubled mean rank sum
    let obs_dev = (observed as i64 - centre2).abs();
    let mut extreme = 0u64;
    let mut all = 0u64;
    for (s, &count) in ways[k].iter().enumerate() {
        if count == 0 {
            continue;
        }
        all += count;
        if (s as i64 - centre2).abs() >= obs_dev {
            extreme += count;
        }
    }
    (extreme as f64 / all as f64).min(1.0)
}

fn normal_rank_sum_p(pooled: &[f64], ranks: &[f64], k: usize) -> f64 {
    let n = pooled.len() as f64;
    let n1 = k as f64;
    let n2 = n - n1;
    let w: f64 = ranks[..k].iter().sum();
    let mean = n1 * (n + 1.0) / 2.0;

    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Complementary error function, accurate to roughly 1e-15 relative.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        return 1.0 - erf_series(x);
    }
    // continued fraction x + (1/2)/(x + 1/(x + (3/2)/(x + ...))), evaluated backwards
    let mut t = x;
    for k in (1..=120).rev() {
        t = x + (k as f64 / 2.0) / t;
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * t)
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x2).exp() * sum
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`.
///
/// The reported statistic is the hypergeometric probability of the observed
/// table.
pub fn fishers_exact(table: [[u64; 2]; 2]) -> Result<TestResult> {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(Error::DegenerateTable("fishers_exact: a margin is zero"));
    }
    let n = r1 + r2;
    let ln_fact = ln_factorials(n as usize);
    let ln_choose = |n: u64, k: u64| ln_fact[n as usize] - ln_fact[k as usize] - ln_fact[(n - k) as usize];
    let denom = ln_choose(n, c1);
    let prob = |x: u64| (ln_choose(r1, x) + ln_choose(r2, c1 - x) - denom).exp();

    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = prob(a);
    let cutoff = observed * (1.0 + FISHER_RELATIVE_SLACK);
    let p: f64 = (lo..=hi).map(prob).filter(|&q| q <= cutoff).sum();
    Ok(TestResult {
        statistic: observed,
        p_value: p.min(1.0),
        method: Method::Exact,
        sidedness: Sidedness::TwoSided,
    })
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th order statistic
/// (the minimum when that rank is zero).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile: no values"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Config(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

/// 1-based nearest rank for `q` over `n` values.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    // the product is computed on a rational-friendly form to avoid 0.29*100 style drift
    let exact = q * n as f64 / 100.0;
    let rounded = exact.round();
    let rank = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Validation("least_squares: lengths differ".into()));
    }
    if x.len() < 3 {
        return Err(Error::Validation(
            "least_squares: need at least three points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedVariance("least_squares: constant x"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        None
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - (intercept + slope * a);
                e * e
            })
            .sum();
        Some((1.0 - ss_res / syy).clamp(0.0, 1.0))
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        assert_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        let r = pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap();
        assert!(close(r, 0.8, 1e-12));
    }

    #[test]
    fn pearson_constant_is_error() {
        assert!(matches!(
            pearson(&[2., 2., 2.], &[1., 2., 3.]),
            Err(Error::UndefinedVariance(_))
        ));
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[1., 2., 2., 3.]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn rank_sum_examples() {
        let t = wilcoxon_rank_sum(&[1., 2., 3.], &[4., 5., 6.]).unwrap();
        assert_eq!(t.method, Method::Exact);
        assert_eq!(t.statistic, 6.0);
        assert!(close(t.p_value, 0.1, 1e-15));

        let t = wilcoxon_rank_sum(&[1., 2.], &[1., 2.]).unwrap();
        assert!(close(t.p_value, 1.0, 1e-15));
    }

    #[test]
    fn rank_sum_large_shift_uses_normal() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (100..130).map(f64::from).collect();
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(t.method, Method::NormalApprox);
        assert!(t.p_value < 0.001);
    }

    #[test]
    fn erfc_reference_values() {
        // reference values from the closed forms / standard tables
        assert!(close(erfc(0.0), 1.0, 1e-16));
        assert!(close(erfc(1.0), 0.157_299_207_050_285_13, 1e-15));
        assert!(close(erfc(3.0), 2.209_049_699_858_544e-5, 1e-18));
        assert!(close(erfc(-1.0), 1.842_700_792_949_714_9, 1e-15));
    }

    #[test]
    fn fisher_examples() {
        let t = fishers_exact([[5, 5], [5, 5]]).unwrap();
        assert!(close(t.p_value, 1.0, 1e-12));
        let t = fishers_exact([[2, 0], [0, 2]]).unwrap();
        assert!(close(t.p_value, 1.0 / 3.0, 1e-12));
        assert!(matches!(
            fishers_exact([[0, 0], [1, 2]]),
            Err(Error::DegenerateTable(_))
        ));
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[7.0], 42.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn least_squares_examples() {
        let x = [1., 2., 3., 4.];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = least_squares(&x, &y).unwrap();
        assert!(close(fit.slope, 2.0, 1e-12));
        assert!(close(fit.intercept, 1.0, 1e-12));
        assert_eq!(fit.r_squared, Some(1.0));

        let fit = least_squares(&x, &[3., 3., 3., 3.]).unwrap();
        assert_eq!(fit.r_squared, None);
        assert!(least_squares(&[1., 1., 1.], &[1., 2., 3.]).is_err());
    }
}
