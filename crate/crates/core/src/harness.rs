//! Parallel Monte Carlo trials and their comparison against the bounds.
//!
//! Trial `i` is a pure function of the experiment, the base seed and `i`, so
//! trial sets computed over disjoint index ranges merge into exactly the set
//! a single run over the union would produce.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundValue, Bounds};
use crate::error::{Result, SmdError};
use crate::oracle::SubGaussianCheck;
use crate::rng::CounterRng;
use crate::smd::Experiment;
use crate::stats::{clopper_pearson, clopper_pearson_upper, median, ols_slope};

pub const DEFAULT_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub config_digest: Option<String>,
    pub base_seed: u64,
    pub horizon: u64,
    pub checkpoints: Vec<u64>,
    /// trial index → gap_z at each checkpoint
    pub trials: BTreeMap<u64, Vec<f64>>,
}

impl TrialSet {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    fn column(&self, t: u64) -> Result<usize> {
        self.checkpoints
            .binary_search(&t)
            .map_err(|_| SmdError::input(format!("t = {t} is not a recorded checkpoint")))
    }

    /// gap_z(t) for every trial, in trial order.
    pub fn gaps_at(&self, t: u64) -> Result<Vec<f64>> {
        let c = self.column(t)?;
        Ok(self.trials.values().map(|g| g[c]).collect())
    }

    /// Union of two sets over disjoint trial indices.
    pub fn merge(mut self, other: TrialSet) -> Result<TrialSet> {
        if self.config_digest != other.config_digest
            || self.base_seed != other.base_seed
            || self.horizon != other.horizon
            || self.checkpoints != other.checkpoints
        {
            return Err(SmdError::input("trial sets come from different runs"));
        }
        for (i, gaps) in other.trials {
            if self.trials.insert(i, gaps).is_some() {
                return Err(SmdError::input(format!("trial {i} appears in both sets")));
            }
        }
        Ok(self)
    }
}

/// Powers of two up to `horizon`, plus `horizon` and `extra`, sorted.
pub fn default_checkpoints(horizon: u64, extra: &[u64]) -> Vec<u64> {
    let mut v: Vec<u64> = std::iter::successors(Some(1u64), |t| t.checked_mul(2))
        .take_while(|&t| t <= horizon)
        .chain(std::iter::once(horizon))
        .chain(extra.iter().copied().filter(|&t| t >= 1 && t <= horizon))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Run trials `range` in parallel and record gap_z at each checkpoint.
pub fn run_trials(
    exp: &Experiment,
    horizon: u64,
    checkpoints: &[u64],
    base_seed: u64,
    range: Range<u64>,
) -> Result<TrialSet> {
    if range.is_empty() {
        return Err(SmdError::input("at least one trial is required"));
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if cps.is_empty() || cps[0] == 0 || *cps.last().unwrap() > horizon {
        return Err(SmdError::input(format!("checkpoints must be a nonempty subset of [1, {horizon}]")));
    }
    let streams = CounterRng::new(base_seed);
    let results: Vec<(u64, Result<Vec<f64>>)> = range
        .into_par_iter()
        .map(|i| {
            let mut gaps = Vec::with_capacity(cps.len());
            let mut next = 0;
            let r = exp.drive(horizon, &streams, i, false, |v| {
                if next < cps.len() && v.t == cps[next] {
                    gaps.push(v.gap_z);
                    next += 1;
                }
            });
            (i, r.map(|_| gaps))
        })
        .collect();
    let mut trials = BTreeMap::new();
    for (i, r) in results {
        match r {
            Ok(g) => {
                trials.insert(i, g);
            }
            Err(e) => {
                return Err(SmdError::Trial {
                    trial: i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(TrialSet {
        config_digest: None,
        base_seed,
        horizon,
        checkpoints: cps,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub t: u64,
    pub eps: f64,
    /// Trials with gap_z(t) ≥ eps.
    pub successes: u64,
    pub n: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

/// Exact binomial estimate of P(gap_z(t) ≥ eps).
pub fn tail_probability(ts: &TrialSet, t: u64, eps: f64, confidence: f64) -> Result<TailEstimate> {
    let gaps = ts.gaps_at(t)?;
    if gaps.is_empty() {
        return Err(SmdError::input("trial set is empty"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SmdError::input(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let successes = gaps.iter().filter(|&&g| g >= eps).count() as u64;
    Ok(tail_from_counts(t, eps, successes, gaps.len() as u64, confidence))
}

pub fn tail_from_counts(t: u64, eps: f64, successes: u64, n: u64, confidence: f64) -> TailEstimate {
    let (ci_low, ci_high) = clopper_pearson(successes, n, confidence);
    TailEstimate {
        t,
        eps,
        successes,
        n,
        p_hat: successes as f64 / n as f64,
        ci_low,
        ci_high,
        confidence,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
    /// Checkpoints whose median gap was ≤ 0 and therefore left out.
    pub nonpositive: Vec<u64>,
}

/// Log-log least-squares slope of the median gap_z over checkpoints in `[lo, hi]`.
pub fn fit_rate(ts: &TrialSet, lo: u64, hi: u64) -> Result<RateFit> {
    let mut t = Vec::new();
    let mut med = Vec::new();
    for &c in ts.checkpoints.iter().filter(|&&c| c >= lo && c <= hi) {
        t.push(c);
        med.push(median(&mut ts.gaps_at(c)?));
    }
    fit_power_law(&t, &med)
}

pub fn fit_power_law(t: &[u64], gaps: &[f64]) -> Result<RateFit> {
    let mut nonpositive = Vec::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&ti, &g) in t.iter().zip(gaps) {
        if g > 0.0 {
            x.push((ti as f64).ln());
            y.push(g.ln());
        } else {
            nonpositive.push(ti);
        }
    }
    if x.len() < 4 {
        return Err(SmdError::input(format!(
            "rate fit needs at least 4 checkpoints with a positive median gap, got {} ({} at or below zero)",
            x.len(),
            nonpositive.len()
        )));
    }
    let (slope, stderr) = ols_slope(&x, &y);
    Ok(RateFit {
        slope,
        stderr,
        points: x.len(),
        nonpositive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Consistent,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// bound − p_hat
    pub margin: f64,
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        self.status == VerdictStatus::Consistent
    }
}

/// Consistent iff the lower confidence limit does not exceed the bound.
pub fn compare_bound(est: &TailEstimate, bound: f64) -> Verdict {
    Verdict {
        status: if est.ci_low <= bound {
            VerdictStatus::Consistent
        } else {
            VerdictStatus::Violation
        },
        margin: bound - est.p_hat,
    }
}

/// Like [`compare_bound`], but refuses when the noise failed the
/// sub-Gaussian diagnostic (or was never checked).
pub fn compare_sub_gaussian_bound(check: Option<&SubGaussianCheck>, est: &TailEstimate, bound: f64) -> Result<Verdict> {
    match check {
        Some(c) if c.passed => Ok(compare_bound(est, bound)),
        Some(_) => Err(SmdError::Refused(
            "noise failed the sub-Gaussian tail diagnostic; the sub-Gaussian bound does not apply".into(),
        )),
        None => Err(SmdError::Refused(
            "no sub-Gaussian tail diagnostic was run for this noise model".into(),
        )),
    }
}

/// Result of checking P(gap_z(t) < eps) ≥ p at a threshold time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCheck {
    pub t: u64,
    pub eps: f64,
    pub p: f64,
    pub n: u64,
    /// Empirical frequency of gap_z(t) < eps.
    pub frequency: f64,
    /// One-sided exact upper confidence limit on that frequency.
    pub upper: f64,
    pub passed: bool,
}

pub fn coverage_check(ts: &TrialSet, t: u64, eps: f64, p: f64, confidence: f64) -> Result<CoverageCheck> {
    let gaps = ts.gaps_at(t)?;
    let n = gaps.len() as u64;
    if n == 0 {
        return Err(SmdError::input("trial set is empty"));
    }
    let good = gaps.iter().filter(|&&g| g < eps).count() as u64;
    let upper = clopper_pearson_upper(good, n, confidence);
    Ok(CoverageCheck {
        t,
        eps,
        p,
        n,
        frequency: good as f64 / n as f64,
        upper,
        passed: upper >= p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub tail: TailEstimate,
    pub theorem4: BoundValue,
    /// None below the t0 threshold.
    pub theorem4_verdict: Option<Verdict>,
    pub theorem5: Option<BoundValue>,
    pub theorem5_verdict: Option<Verdict>,
    /// Why the sub-Gaussian comparison was not made, if it was not.
    pub theorem5_skipped: Option<String>,
}

/// Compare every (checkpoint, eps) tail estimate against both bounds.
pub fn compare_all(
    ts: &TrialSet,
    bounds: &Bounds,
    eps_list: &[f64],
    confidence: f64,
    sub_gaussian: Option<&SubGaussianCheck>,
) -> Result<Vec<BoundComparison>> {
    let sg_params = bounds.params().nu1.is_some() && bounds.params().nu2.is_some();
    let mut out = Vec::new();
    for &t in &ts.checkpoints {
        for &eps in eps_list {
            let tail = tail_probability(ts, t, eps, confidence)?;
            let theorem4 = bounds.theorem4_bound(t, eps)?;
            let theorem4_verdict = theorem4.applicable.then(|| compare_bound(&tail, theorem4.clipped));
            let (mut theorem5, mut theorem5_verdict, mut theorem5_skipped) = (None, None, None);
            if !sg_params {
                theorem5_skipped = Some("nu1 and nu2 are not both available".to_string());
            } else {
                let b5 = bounds.theorem5_bound(t, eps)?;
                theorem5 = Some(b5);
                // a failed noise diagnostic outranks applicability
                match compare_sub_gaussian_bound(sub_gaussian, &tail, b5.clipped) {
                    Ok(v) if b5.applicable => theorem5_verdict = Some(v),
                    Ok(_) => theorem5_skipped = Some("t is below the t0 threshold".to_string()),
                    Err(SmdError::Refused(msg)) => theorem5_skipped = Some(msg),
                    Err(e) => return Err(e),
                }
            }
            out.push(BoundComparison {
                tail,
                theorem4,
                theorem4_verdict,
                theorem5,
                theorem5_verdict,
                theorem5_skipped,
            });
        }
    }
    Ok(out)
}
