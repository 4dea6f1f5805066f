//! Comparison utilities: total variation, pooled chi-square, mean intervals,
//! a least-squares fit against `ln H` and a Kolmogorov-Smirnov statistic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

/// Significance level of every hypothesis test.
pub const ALPHA: f64 = 1e-3;
/// Expected-count floor for chi-square cells.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("distribution mass {0} is not 1 and no residual category was given")]
    Unnormalized(f64),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("log fit needs distinct positive H values")]
    DegenerateFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tv: f64,
    pub chi_sq: Option<ChiSquare>,
    pub n: u64,
    pub verdict: Verdict,
}

/// `1/2 sum |p - q|` over the union support. Both inputs must carry all of
/// their mass (add a residual key for truncated laws).
pub fn tv_distance<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> Result<f64, StatsError> {
    for m in [p, q] {
        let total: f64 = m.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(StatsError::Unnormalized(total));
        }
    }
    let mut keys: Vec<&K> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    let sum: f64 = keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// Chi-square upper tail `P(X >= x)` with `dof` degrees of freedom.
pub fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Goodness of fit of `observed` counts against the pmf `expected`.
///
/// Cells whose expected count is below the floor are pooled, smallest
/// first, into one cell; if that pooled cell is still small it is merged
/// into the smallest remaining cell. Observed keys missing from `expected`
/// count towards the pooled cell. Fewer than two cells after pooling is
/// reported as inconclusive.
pub fn chi_square<K: Ord + Clone>(observed: &BTreeMap<K, u64>, expected: &BTreeMap<K, f64>, n: u64) -> ComparisonReport {
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (k, &p) in expected {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let e = p * nf;
        if e >= MIN_EXPECTED {
            cells.push((o, e));
        } else {
            pooled.0 += o;
            pooled.1 += e;
        }
    }
    let stray: u64 = observed.iter().filter(|(k, _)| !expected.contains_key(*k)).map(|(_, v)| v).sum();
    pooled.0 += stray as f64;
    // mass of the expected law not listed explicitly
    let listed: f64 = expected.values().sum();
    pooled.1 += ((1.0 - listed) * nf).max(0.0);
    if pooled.0 > 0.0 || pooled.1 > 0.0 {
        if pooled.1 >= MIN_EXPECTED || cells.is_empty() {
            cells.push(pooled);
        } else {
            let smallest = cells
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("cells nonempty");
            smallest.0 += pooled.0;
            smallest.1 += pooled.1;
        }
    }
    let tv = {
        let total_o: f64 = observed.values().sum::<u64>() as f64;
        let mut keys: Vec<&K> = expected.keys().chain(observed.keys()).collect();
        keys.sort();
        keys.dedup();
        let s: f64 = keys
            .into_iter()
            .map(|k| {
                let po = observed.get(k).copied().unwrap_or(0) as f64 / total_o.max(1.0);
                (po - expected.get(k).copied().unwrap_or(0.0)).abs()
            })
            .sum();
        (0.5 * (s + (1.0 - listed).max(0.0))).clamp(0.0, 1.0)
    };
    if cells.len() < 2 || cells.iter().any(|c| c.1 < MIN_EXPECTED) {
        return ComparisonReport { tv, chi_sq: None, n, verdict: Verdict::Inconclusive };
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p_value = chi_square_sf(statistic, dof);
    ComparisonReport {
        tv,
        chi_sq: Some(ChiSquare { statistic, dof, p_value }),
        n,
        verdict: Verdict::from_bool(p_value > ALPHA),
    }
}

/// Sample mean with standard error and a `mean +- 3 SE` interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub n: u64,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> MeanEstimate {
        let n = xs.len() as u64;
        if n == 0 {
            return MeanEstimate { n, mean: f64::NAN, sd: f64::NAN, se: f64::NAN, lo: f64::NAN, hi: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self::from_moments(n, mean, var)
    }

    pub fn from_moments(n: u64, mean: f64, var: f64) -> MeanEstimate {
        let sd = var.max(0.0).sqrt();
        let se = sd / (n as f64).sqrt();
        MeanEstimate { n, mean, sd, se, lo: mean - 3.0 * se, hi: mean + 3.0 * se }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn overlaps(&self, other: &MeanEstimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// Least squares of `v` against `ln H`.
pub fn log_fit(points: &[(f64, f64)]) -> Result<LogFit, StatsError> {
    if points.len() < 3 {
        return Err(StatsError::TooFewPoints { need: 3, got: points.len() });
    }
    if points.iter().any(|p| p.0 <= 0.0) {
        return Err(StatsError::DegenerateFit);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return Err(StatsError::DegenerateFit);
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(points).map(|(x, p)| p.1 - (intercept + slope * x)).collect();
    Ok(LogFit { slope, intercept, residuals })
}

/// One-sample KS statistic of `samples` against the uniform law on [0, 1].
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf(pairs: &[(i32, f64)]) -> BTreeMap<i32, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn tv_examples() {
        let p = pmf(&[(0, 0.5), (1, 0.5)]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&pmf(&[(0, 1.0)]), &pmf(&[(1, 1.0)])).unwrap(), 1.0);
        let geo: BTreeMap<i32, f64> = (0..60).map(|j| (j, 0.5f64.powi(j + 1))).chain([(60, 0.5f64.powi(60))]).collect();
        let d = tv_distance(&geo, &pmf(&[(0, 1.0)])).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!(tv_distance(&pmf(&[(0, 0.5)]), &p).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let fair = pmf(&[(0, 0.5), (1, 0.5)]);
        let obs: BTreeMap<i32, u64> = [(0, 5000), (1, 5000)].into_iter().collect();
        let r = chi_square(&obs, &fair, 10_000);
        assert_eq!(r.chi_sq.unwrap().statistic, 0.0);
        assert_eq!(r.chi_sq.unwrap().p_value, 1.0);
        let obs: BTreeMap<i32, u64> = [(0, 4900), (1, 5100)].into_iter().collect();
        let c = chi_square(&obs, &fair, 10_000).chi_sq.unwrap();
        assert!((c.statistic - 4.0).abs() < 1e-12);
        assert!((c.p_value - 0.045_500_263_9).abs() < 1e-8, "{}", c.p_value);
        let tiny: BTreeMap<i32, u64> = [(0, 2), (1, 2)].into_iter().collect();
        assert_eq!(chi_square(&tiny, &fair, 4).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn chi_square_sf_reference_values() {
        // upper tails of chi-square(1) at 3.841459 and chi-square(10) at 23.209251
        assert!((chi_square_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(23.209_251_158_954_35, 10) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn log_fit_examples() {
        let pts: Vec<(f64, f64)> = [2.0, 5.0, 9.0, 30.0].iter().map(|&h: &f64| (h, 2.0 * h.ln() + 1.0)).collect();
        let f = log_fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9 && (f.intercept - 1.0).abs() < 1e-9);
        let flat = log_fit(&[(2.0, 3.0), (4.0, 3.0), (8.0, 3.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(log_fit(&[(2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn mean_intervals() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!(m.contains(2.5) && m.overlaps(&m));
    }

    #[test]
    fn ks_of_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&xs) < ks_critical_1pct(1000));
    }

    #[test]
    fn null_p_values_look_uniform() {
        use rand::{Rng, SeedableRng};
        let expected: BTreeMap<usize, f64> = [(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)].into_iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let ps: Vec<f64> = (0..1000)
            .map(|_| {
                let mut obs: BTreeMap<usize, u64> = BTreeMap::new();
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let cat = [0.1, 0.3, 0.6].iter().filter(|&&c| u >= c).count();
                    *obs.entry(cat).or_insert(0) += 1;
                }
                chi_square(&obs, &expected, n).chi_sq.unwrap().p_value
            })
            .collect();
        // chi-square p-values are discrete; the KS bound still holds at this n
        assert!(ks_uniform(&ps) < ks_critical_1pct(ps.len()), "{}", ks_uniform(&ps));
    }

    fn normalized(w: &[u32]) -> BTreeMap<usize, f64> {
        let total: f64 = w.iter().map(|&v| f64::from(v) + 1.0).sum();
        w.iter().enumerate().map(|(i, &v)| (i, (f64::from(v) + 1.0) / total)).collect()
    }

    proptest::proptest! {
        #[test]
        fn tv_is_a_metric(a in proptest::collection::vec(0u32..100, 5),
                          b in proptest::collection::vec(0u32..100, 5),
                          c in proptest::collection::vec(0u32..100, 5)) {
            let (p, q, r) = (normalized(&a), normalized(&b), normalized(&c));
            let pq = tv_distance(&p, &q).unwrap();
            proptest::prop_assert!((pq - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
            proptest::prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-12);
        }

        #[test]
        fn log_fit_recovers_slope(slope in -5.0f64..5.0, icpt in -5.0f64..5.0) {
            let pts: Vec<(f64, f64)> = [2.0f64, 3.0, 7.0, 20.0, 64.0].iter().map(|&h| (h, slope * h.ln() + icpt)).collect();
            let f = log_fit(&pts).unwrap();
            proptest::prop_assert!((f.slope - slope).abs() < 1e-9 && (f.intercept - icpt).abs() < 1e-9);
        }
    }
}
