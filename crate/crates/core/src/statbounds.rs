//! Finite-sample confidence lower bounds on expected smoothed performance.
//!
//! Clopper-Pearson for 0/1 scores, Hoeffding for real-valued scores in
//! [0, 1]. Both round toward pessimism: a certificate must under-state, never
//! over-state.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("alpha must lie strictly between 0 and 1, got {value}")]
    InvalidAlpha { value: f64 },
    #[error("successes {k} exceed sample count {n}")]
    SuccessesExceedSamples { k: u64, n: u64 },
    #[error("sample count must be positive")]
    EmptySample,
    #[error("mean score must lie in [0, 1], got {value}")]
    InvalidMean { value: f64 },
}

/// Which estimator produced a bound; recorded in certificate metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    ClopperPearson,
    Hoeffding,
}

fn check_alpha(alpha: f64) -> Result<(), StatError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatError::InvalidAlpha { value: alpha });
    }
    Ok(())
}

/// One-sided Clopper-Pearson lower confidence bound: the largest p such that
/// observing at least `k` successes in `n` trials has probability at most
/// `alpha`. Equivalently the alpha-quantile of Beta(k, n-k+1).
///
/// Bisection on the regularized incomplete beta to width 1e-10, returning
/// the lower endpoint so the result is never above the true quantile.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64, StatError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(StatError::EmptySample);
    }
    if k > n {
        return Err(StatError::SuccessesExceedSamples { k, n });
    }
    if k == 0 {
        return Ok(0.0);
    }
    // P(Bin(n, p) >= k) = I_p(k, n - k + 1), increasing in p.
    let a = k as f64;
    let b = (n - k + 1) as f64;
    let tail = |p: f64| beta_reg(a, b, p);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Hoeffding lower confidence bound for scores in [0, 1]:
/// mean - sqrt(ln(1/alpha) / 2n), floored at 0.
pub fn hoeffding_lower(mean_score: f64, n: u64, alpha: f64) -> Result<f64, StatError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(StatError::EmptySample);
    }
    if !(0.0..=1.0).contains(&mean_score) {
        return Err(StatError::InvalidMean { value: mean_score });
    }
    let slack = ((1.0 / alpha).ln() / (2.0 * n as f64)).sqrt();
    Ok((mean_score - slack).max(0.0))
}

/// Lower bound with automatic estimator selection: Clopper-Pearson when all
/// scores are exactly 0 or 1 (tighter), Hoeffding otherwise.
pub fn auto_lower_bound(scores: &[f64], alpha: f64) -> Result<(f64, BoundKind), StatError> {
    if scores.is_empty() {
        return Err(StatError::EmptySample);
    }
    let n = scores.len() as u64;
    let binary = scores.iter().all(|&s| s == 0.0 || s == 1.0);
    if binary {
        let k = scores.iter().filter(|&&s| s == 1.0).count() as u64;
        Ok((clopper_pearson_lower(k, n, alpha)?, BoundKind::ClopperPearson))
    } else {
        let mean = scores.iter().sum::<f64>() / n as f64;
        Ok((hoeffding_lower(mean, n, alpha)?, BoundKind::Hoeffding))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Exact binomial upper tail P(Bin(n, p) >= k) by direct summation.
    fn binom_tail(n: u64, k: u64, p: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let mut total = 0.0f64;
        for i in k..=n {
            let mut log_term = 0.0f64;
            for j in 0..i {
                log_term += ((n - j) as f64).ln() - ((i - j) as f64).ln();
            }
            log_term += i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
            total += log_term.exp();
        }
        total.min(1.0)
    }

    /// Independent quantile oracle: bisection on the exact binomial tail.
    fn cp_oracle(k: u64, n: u64, alpha: f64) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if binom_tail(n, k, mid) <= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn zero_successes_give_zero() {
        for (n, alpha) in [(1u64, 0.5), (100, 0.001), (7, 0.05)] {
            assert_eq!(clopper_pearson_lower(0, n, alpha).unwrap(), 0.0);
        }
    }

    #[test]
    fn all_successes_match_closed_form() {
        let got = clopper_pearson_lower(100, 100, 0.001).unwrap();
        let closed = 0.001f64.powf(1.0 / 100.0);
        assert!((got - closed).abs() < 1e-6, "got {got} closed {closed}");
        assert!((got - 0.933_254_300_796_991).abs() < 1e-6);
    }

    #[test]
    fn half_successes_match_binomial_tail_oracle() {
        let got = clopper_pearson_lower(50, 100, 0.05).unwrap();
        let oracle = cp_oracle(50, 100, 0.05);
        assert!((got - oracle).abs() < 1e-4, "got {got} oracle {oracle}");
        assert!((got - 0.413_621_714_630_911_63).abs() < 1e-4);
    }

    #[test]
    fn matches_oracle_across_k() {
        for k in [1u64, 3, 10, 42, 77, 99] {
            let got = clopper_pearson_lower(k, 100, 0.01).unwrap();
            let oracle = cp_oracle(k, 100, 0.01);
            assert!((got - oracle).abs() < 1e-6, "k={k} got {got} oracle {oracle}");
        }
    }

    #[test]
    fn bound_never_exceeds_empirical_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..300 {
            let n = rng.gen_range(1u64..500);
            let k = rng.gen_range(0..=n);
            let alpha = rng.gen_range(0.0005..0.5);
            let lower = clopper_pearson_lower(k, n, alpha).unwrap();
            assert!(lower <= k as f64 / n as f64 + 1e-12);
        }
    }

    #[test]
    fn monotone_in_k_and_in_n() {
        let mut prev = -1.0;
        for k in 0..=100u64 {
            let v = clopper_pearson_lower(k, 100, 0.05).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        let mut prev = -1.0;
        for scale in 1..=10u64 {
            let v = clopper_pearson_lower(3 * scale, 10 * scale, 0.05).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn coverage_simulation_stays_calibrated() {
        // 10^4 Bernoulli(0.8) datasets of n=100 at alpha=0.05; the bound may
        // exceed the true mean in at most 6% of runs.
        let n = 100u64;
        let p = 0.8f64;
        let alpha = 0.05;
        let table: Vec<f64> = (0..=n)
            .map(|k| clopper_pearson_lower(k, n, alpha).unwrap())
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let runs = 10_000u32;
        let mut violations = 0u32;
        for _ in 0..runs {
            let k = (0..n).filter(|_| rng.gen_bool(p)).count();
            if table[k] > p {
                violations += 1;
            }
        }
        let rate = f64::from(violations) / f64::from(runs);
        assert!(rate <= 0.06, "violation rate {rate}");
    }

    #[test]
    fn hoeffding_worked_examples() {
        let got = hoeffding_lower(0.8, 200, 0.001).unwrap();
        assert!((got - 0.668_586_955_756_076_7).abs() < 1e-12);
        let floored = hoeffding_lower(0.05, 10, 0.5).unwrap();
        assert_eq!(floored, 0.0);
        let near_mean = hoeffding_lower(1.0, 1_000_000_000_000, 0.001).unwrap();
        assert!((near_mean - 1.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_arguments_error() {
        assert!(clopper_pearson_lower(5, 10, 0.0).is_err());
        assert!(clopper_pearson_lower(5, 10, 1.0).is_err());
        assert!(clopper_pearson_lower(11, 10, 0.05).is_err());
        assert!(clopper_pearson_lower(0, 0, 0.05).is_err());
        assert!(hoeffding_lower(1.2, 10, 0.05).is_err());
        assert!(hoeffding_lower(0.5, 0, 0.05).is_err());
    }

    #[test]
    fn auto_selection_prefers_clopper_pearson_for_binary() {
        let binary = [1.0, 0.0, 1.0, 1.0];
        let (_, kind) = auto_lower_bound(&binary, 0.05).unwrap();
        assert_eq!(kind, BoundKind::ClopperPearson);
        let real = [1.0, 0.25, 1.0, 0.75];
        let (bound, kind) = auto_lower_bound(&real, 0.05).unwrap();
        assert_eq!(kind, BoundKind::Hoeffding);
        assert!((bound - hoeffding_lower(0.75, 4, 0.05).unwrap()).abs() < 1e-12);
    }
}
