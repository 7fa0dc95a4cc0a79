//! Block-count chains of exchangeable coalescents, for the Kingman and
//! Bolthausen-Sznitman measures, plus the moment-duality experiment that
//! ties them to the neutral jump SDE.
//!
//! Only block counts are simulated, never partition structure: the duality
//! identity `E[Y_t^k | Y_0=y] = E[y^{K_t} | K_0=k]` depends on `K_t` alone.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::{marginal_ensemble, SdeConfig};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::moment_with_se;

/// The driving measure. Both variants have total mass 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaMeasure {
    /// Unit mass at 0: binary mergers only.
    Kingman,
    /// Lebesgue measure on [0,1].
    BolthausenSznitman,
}

impl std::fmt::Display for LambdaMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaMeasure::Kingman => write!(f, "kingman"),
            LambdaMeasure::BolthausenSznitman => write!(f, "bolthausen-sznitman"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoalescentError {
    #[error("merger size l must satisfy 2 <= l <= k, got l={l}, k={k}")]
    BadMergerSize { k: u64, l: u64 },
    #[error("block count k must be >= 2, got {0}")]
    TooFewBlocks(u64),
    #[error("duality is stated for the neutral case; alpha must be 0, got {0}")]
    AlphaNotZero(f64),
    #[error("initial value y must lie in [0,1], got {0}")]
    YOutOfRange(f64),
    #[error(transparent)]
    Sde(#[from] crate::sde::SdeError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

/// `ln(n!)` for n in `0..=up_to`, by cumulative summation.
pub(crate) fn ln_factorials(up_to: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(up_to + 1);
    table.push(0.0);
    let mut acc = 0.0_f64;
    for i in 1..=up_to {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// Rate at which a fixed set of `l` blocks among `k` merges:
/// `lambda_{k,l} = int p^{l-2} (1-p)^{k-l} Lambda(dp)`.
///
/// Kingman: 1 for l = 2, else 0. Bolthausen-Sznitman: the Beta integral
/// `(l-2)!(k-l)!/(k-1)!`, evaluated in log space so large `k` cannot
/// overflow.
pub fn lambda_rate(k: u64, l: u64, measure: LambdaMeasure) -> Result<f64, CoalescentError> {
    if l < 2 || l > k {
        return Err(CoalescentError::BadMergerSize { k, l });
    }
    Ok(match measure {
        LambdaMeasure::Kingman => {
            if l == 2 {
                1.0
            } else {
                0.0
            }
        }
        LambdaMeasure::BolthausenSznitman => {
            let lf = ln_factorials(k as usize);
            (lf[(l - 2) as usize] + lf[(k - l) as usize] - lf[(k - 1) as usize]).exp()
        }
    })
}

/// Total merger rate from `k` blocks: `sum_l C(k,l) lambda_{k,l}`.
///
/// Closed forms: `k - 1` for Bolthausen-Sznitman (the sum telescopes,
/// `C(k,l) lambda_{k,l} = k/(l(l-1))`), `C(k,2)` for Kingman.
pub fn total_rate(k: u64, measure: LambdaMeasure) -> Result<f64, CoalescentError> {
    if k < 2 {
        return Err(CoalescentError::TooFewBlocks(k));
    }
    Ok(match measure {
        LambdaMeasure::Kingman => (k * (k - 1)) as f64 / 2.0,
        LambdaMeasure::BolthausenSznitman => (k - 1) as f64,
    })
}

/// The same total rate evaluated the long way: binomial coefficients and
/// `lambda_{k,l}` in log space, summed over l. This is the independent
/// route checked against [`total_rate`]'s closed form.
pub fn total_rate_by_sum(k: u64, measure: LambdaMeasure) -> Result<f64, CoalescentError> {
    if k < 2 {
        return Err(CoalescentError::TooFewBlocks(k));
    }
    let lf = ln_factorials(k as usize);
    let mut sum = 0.0_f64;
    for l in 2..=k {
        let ln_binom = lf[k as usize] - lf[l as usize] - lf[(k - l) as usize];
        let ln_lambda = match measure {
            LambdaMeasure::Kingman => {
                if l == 2 {
                    0.0
                } else {
                    continue;
                }
            }
            LambdaMeasure::BolthausenSznitman => {
                lf[(l - 2) as usize] + lf[(k - l) as usize] - lf[(k - 1) as usize]
            }
        };
        sum += (ln_binom + ln_lambda).exp();
    }
    Ok(sum)
}

/// Sample the merger size `l` from `k` blocks.
///
/// Bolthausen-Sznitman: `P(l) = k / ((k-1) l (l-1))`, whose CDF telescopes
/// to `(k/(k-1)) (1 - 1/l)`; inverted in closed form with an integer
/// adjustment step against the exact CDF. Kingman: always 2.
pub fn sample_merger_size<R: Rng>(k: u64, measure: LambdaMeasure, rng: &mut R) -> u64 {
    debug_assert!(k >= 2);
    match measure {
        LambdaMeasure::Kingman => 2,
        LambdaMeasure::BolthausenSznitman => {
            let u: f64 = rng.gen();
            let kf = k as f64;
            // Smallest integer l with (k/(k-1))(1 - 1/l) >= u.
            let denom = 1.0 - u * (kf - 1.0) / kf;
            let mut l = if denom <= 0.0 {
                k
            } else {
                ((1.0 / denom).ceil() as u64).clamp(2, k)
            };
            let cdf = |l: u64| kf / (kf - 1.0) * (1.0 - 1.0 / l as f64);
            while l > 2 && cdf(l - 1) >= u {
                l -= 1;
            }
            while l < k && cdf(l) < u {
                l += 1;
            }
            l
        }
    }
}

/// A block-count trajectory: strictly decreasing `k` with absorption at 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCountPath {
    pub measure: LambdaMeasure,
    pub seed: u64,
    /// (time, block count) after each merger, starting with (0, k0).
    pub points: Vec<(f64, u64)>,
}

impl BlockCountPath {
    pub fn count_at(&self, t: f64) -> u64 {
        let mut last = self.points[0].1;
        for &(time, k) in &self.points {
            if time > t {
                break;
            }
            last = k;
        }
        last
    }
}

/// Simulate the block-count chain from `k0` until absorption at 1 or
/// `t_end`, whichever comes first.
pub fn simulate_block_counts(
    k0: u64,
    t_end: f64,
    measure: LambdaMeasure,
    seed: u64,
) -> BlockCountPath {
    let mut rng = rng_from_seed(seed);
    let mut points = vec![(0.0, k0.max(1))];
    let mut t = 0.0;
    let mut k = k0.max(1);
    while k > 1 {
        let rate = total_rate(k, measure).expect("k >= 2 in loop");
        let exp: f64 = rand_distr::Exp1.sample(&mut rng);
        let wait = exp / rate;
        if t + wait > t_end {
            break;
        }
        t += wait;
        let l = sample_merger_size(k, measure, &mut rng);
        k -= l - 1;
        points.push((t, k));
    }
    BlockCountPath {
        measure,
        seed,
        points,
    }
}

use rand_distr::Distribution;

/// Result of one duality comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub k: u64,
    pub y: f64,
    pub t: f64,
    pub replicates: u64,
    /// `E[Y_t^k]` from the SDE side, with standard error.
    pub moment_sde: f64,
    pub se_sde: f64,
    /// `E[y^{K_t}]` from the coalescent side, with standard error.
    pub moment_coalescent: f64,
    pub se_coalescent: f64,
    pub gap: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// Estimate both sides of the duality identity by Monte Carlo and report
/// the gap. Only the neutral case is meaningful, so nonzero `alpha` is
/// rejected.
#[allow(clippy::too_many_arguments)]
pub fn duality_gap(
    k: u64,
    y: f64,
    t: f64,
    alpha: f64,
    replicates: u64,
    p_min: f64,
    measure: LambdaMeasure,
    seed: u64,
) -> Result<DualityReport, CoalescentError> {
    if alpha != 0.0 {
        return Err(CoalescentError::AlphaNotZero(alpha));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(CoalescentError::YOutOfRange(y));
    }
    let cfg = SdeConfig {
        alpha: 0.0,
        y0: y,
        t_end: t,
        p_min,
    };
    let sde_vals: Vec<f64> = marginal_ensemble(&cfg, &[t], replicates, seed)?
        .into_iter()
        .map(|row| row[0])
        .collect();
    let (moment_sde, se_sde) = moment_with_se(&sde_vals, k as u32)?;

    let coal_seed = derive_seed(seed, u64::MAX / 2);
    let coal_vals: Vec<f64> = (0..replicates)
        .map(|i| {
            let path = simulate_block_counts(k, t, measure, derive_seed(coal_seed, i));
            y.powi(path.count_at(t) as i32)
        })
        .collect();
    let (moment_coalescent, se_coalescent) = moment_with_se(&coal_vals, 1)?;

    let gap = (moment_sde - moment_coalescent).abs();
    let combined_se = (se_sde * se_sde + se_coalescent * se_coalescent).sqrt();
    Ok(DualityReport {
        k,
        y,
        t,
        replicates,
        moment_sde,
        se_sde,
        moment_coalescent,
        se_coalescent,
        gap,
        combined_se,
        pass: gap <= 3.0 * combined_se,
    })
}

/// Closed form of `E[y^{K_t} | K_0 = 2]` for Bolthausen-Sznitman: the chain
/// drops from 2 to 1 at rate 1, so the moment is `y + (y^2 - y) e^{-t}`.
pub fn two_block_moment(y: f64, t: f64) -> f64 {
    y + (y * y - y) * (-t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use LambdaMeasure::{BolthausenSznitman as BS, Kingman};

    #[test]
    fn lambda_rate_examples() {
        assert!((lambda_rate(3, 2, BS).unwrap() - 0.5).abs() < 1e-14);
        assert!((lambda_rate(4, 2, BS).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((lambda_rate(4, 3, BS).unwrap() - 1.0 / 6.0).abs() < 1e-14);
        assert!((lambda_rate(4, 4, BS).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(lambda_rate(10, 3, Kingman).unwrap(), 0.0);
        assert_eq!(lambda_rate(10, 2, Kingman).unwrap(), 1.0);
    }

    #[test]
    fn lambda_rate_rejects_bad_sizes() {
        assert!(lambda_rate(4, 1, BS).is_err());
        assert!(lambda_rate(4, 5, BS).is_err());
    }

    #[test]
    fn total_rate_examples() {
        assert!((total_rate(4, BS).unwrap() - 3.0).abs() < 1e-14);
        assert!((total_rate(4, Kingman).unwrap() - 6.0).abs() < 1e-14);
        assert!((total_rate(2, BS).unwrap() - 1.0).abs() < 1e-14);
        assert!((total_rate(2, Kingman).unwrap() - 1.0).abs() < 1e-14);
        assert!(total_rate(1, BS).is_err());
    }

    #[test]
    fn summed_rate_matches_closed_form_spot_checks() {
        for k in [2u64, 3, 4, 10, 100, 1000] {
            for m in [BS, Kingman] {
                let by_sum = total_rate_by_sum(k, m).unwrap();
                let closed = total_rate(k, m).unwrap();
                assert!(
                    (by_sum - closed).abs() / closed < 1e-10,
                    "k={k} {m}: {by_sum} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn merger_size_probabilities_sum_to_one() {
        for k in 2..200u64 {
            let total: f64 = (2..=k)
                .map(|l| {
                    let lf = ln_factorials(k as usize);
                    let ln_binom = lf[k as usize] - lf[l as usize] - lf[(k - l) as usize];
                    (ln_binom).exp() * lambda_rate(k, l, BS).unwrap()
                        / total_rate(k, BS).unwrap()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10, "k={k}: {total}");
        }
    }

    #[test]
    fn merger_size_sampler_matches_exact_cdf() {
        // Exhaustive check of the closed-form inversion against the exact
        // pmf k/((k-1) l (l-1)) via simulated frequencies at k = 4.
        let mut rng = rng_from_seed(5);
        let mut counts = [0u64; 3];
        let draws = 200_000;
        for _ in 0..draws {
            let l = sample_merger_size(4, BS, &mut rng);
            counts[(l - 2) as usize] += 1;
        }
        let expected = [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0];
        for (i, e) in expected.iter().enumerate() {
            let freq = counts[i] as f64 / draws as f64;
            let se = (e * (1.0 - e) / draws as f64).sqrt();
            assert!((freq - e).abs() < 4.0 * se, "l={}: {freq} vs {e}", i + 2);
        }
    }

    #[test]
    fn absorbing_single_block() {
        let path = simulate_block_counts(1, 10.0, BS, 3);
        assert_eq!(path.points, vec![(0.0, 1)]);
        assert_eq!(path.count_at(10.0), 1);
    }

    #[test]
    fn block_counts_strictly_decrease() {
        for seed in 0..50 {
            let path = simulate_block_counts(30, 100.0, BS, seed);
            assert!(path.points.windows(2).all(|w| w[1].1 < w[0].1));
            assert_eq!(path.points.last().unwrap().1, 1);
        }
    }

    #[test]
    fn kingman_pair_holding_time_is_exponential_one() {
        // From k0 = 2 the holding time is Exp(C(2,2) lambda_{2,2}) = Exp(1);
        // one-sample KS against the exponential CDF.
        let n = 20_000;
        let mut times: Vec<f64> = (0..n)
            .map(|i| {
                let path = simulate_block_counts(2, f64::INFINITY, Kingman, 1000 + i);
                path.points[1].0
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, t) in times.iter().enumerate() {
            let cdf = 1.0 - (-t).exp();
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
        }
        // 1.63/sqrt(n) is the asymptotic 1% critical value.
        assert!(ks < 1.63 / (n as f64).sqrt(), "ks = {ks}");
    }

    #[test]
    fn kingman_absorption_time_mean() {
        // E[T_absorb from k] = sum_{j=2}^{k} 1/C(j,2) = 2(1 - 1/k).
        let k0 = 5u64;
        let n = 20_000;
        let times: Vec<f64> = (0..n)
            .map(|i| {
                simulate_block_counts(k0, f64::INFINITY, Kingman, 7000 + i)
                    .points
                    .last()
                    .unwrap()
                    .0
            })
            .collect();
        let (mean, se) = moment_with_se(&times, 1).unwrap();
        let expected = 2.0 * (1.0 - 1.0 / k0 as f64);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn duality_identity_for_single_block() {
        let rep = duality_gap(1, 0.4, 1.0, 0.0, 2_000, 1e-3, BS, 9).unwrap();
        // K_t = 1 always, so the coalescent side is y up to summation order.
        assert!((rep.moment_coalescent - 0.4).abs() < 1e-12);
        assert!(rep.se_coalescent < 1e-12);
        assert!(rep.pass, "gap {} combined {}", rep.gap, rep.combined_se);
    }

    #[test]
    fn duality_rejects_nonzero_alpha() {
        assert!(matches!(
            duality_gap(2, 0.4, 1.0, 0.5, 100, 1e-3, BS, 9),
            Err(CoalescentError::AlphaNotZero(_))
        ));
    }

    #[test]
    fn two_block_closed_form_matches_chain() {
        let (y, t) = (0.3f64, 0.7);
        let n = 50_000u64;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let path = simulate_block_counts(2, t, BS, derive_seed(31, i));
                y.powi(path.count_at(t) as i32)
            })
            .collect();
        let (mean, se) = moment_with_se(&vals, 1).unwrap();
        let analytic = two_block_moment(y, t);
        assert!((mean - analytic).abs() < 3.0 * se, "{mean} vs {analytic}");
    }

    #[test]
    fn duality_small_smoke() {
        let rep = duality_gap(3, 0.3, 1.0, 0.0, 20_000, 1e-3, BS, 123).unwrap();
        assert!(
            rep.gap <= 4.0 * rep.combined_se,
            "gap {} combined se {}",
            rep.gap,
            rep.combined_se
        );
    }
}
