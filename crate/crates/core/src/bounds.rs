//! Closed-form concentration bounds and iteration thresholds.
//!
//! Every sum over the step schedule is a power law `c·k^(−s)`. Sums up to
//! `t_max` come from compensated prefix sums; anything longer is bracketed by
//! integrals, and each formula takes the bracket end that makes a bound larger
//! or a threshold later.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmdError};
use crate::smd::{Experiment, StepSchedule};

pub const DEFAULT_T_MAX: u64 = 1_000_000;
/// Threshold searches give up beyond this iteration count.
pub const SEARCH_LIMIT: u64 = 1 << 53;
/// Default norm-equivalence constant: ‖a+b+c‖² ≤ 3(‖a‖²+‖b‖²+‖c‖²) in any norm.
pub const DEFAULT_KAPPA1: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub sigma_r: f64,
    /// E‖g̃‖*² ≤ ν².
    pub nu: f64,
    pub g: f64,
    /// Diameter of the feasible set in the primal norm.
    pub d: f64,
    /// sup of the Bregman divergence over the feasible set.
    pub r_sup: f64,
    pub kappa1: f64,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub a_ceiling: Option<f64>,
    pub schedule: StepSchedule,
    pub b0: f64,
    pub q: f64,
    pub t_max: u64,
}

impl BoundParams {
    /// Constants implied by an experiment. ν2 must come from moment
    /// estimation or the user.
    pub fn for_experiment(e: &Experiment, kappa1: Option<f64>, nu2: Option<f64>) -> Result<Self> {
        let (b0, q) = e.oracle.bias.power_law();
        Ok(BoundParams {
            sigma_r: e.geometry.sigma_r(),
            nu: e.oracle.noise.nu,
            g: e.problem.g_bound,
            d: e.problem.set.diameter(e.geometry.norms),
            r_sup: e.problem.set.bregman_radius(&e.geometry.map)?,
            kappa1: kappa1.unwrap_or(DEFAULT_KAPPA1),
            nu1: e.oracle.noise.nu1,
            nu2,
            a_ceiling: None,
            schedule: e.schedule,
            b0,
            q,
            t_max: DEFAULT_T_MAX,
        })
    }

    /// The largest a for which α(t)²κ1/(2σ_R) ≤ 1/a at every t.
    pub fn default_a_ceiling(&self) -> f64 {
        2.0 * self.sigma_r / (self.schedule.alpha(1).powi(2) * self.kappa1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("sigma_R", self.sigma_r), ("kappa1", self.kappa1)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SmdError::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("nu", self.nu),
            ("G", self.g),
            ("D", self.d),
            ("R_sup", self.r_sup),
            ("B0", self.b0),
            ("q", self.q),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SmdError::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("nu1", self.nu1), ("nu2", self.nu2)] {
            if let Some(v) = v {
                if !(v >= 0.0) || v.is_nan() {
                    return Err(SmdError::config(format!("{name} must be >= 0, got {v}")));
                }
            }
        }
        if self.t_max == 0 {
            return Err(SmdError::config("T_max must be at least 1"));
        }
        StepSchedule::new(self.schedule.alpha0, self.schedule.k)?;
        if let Some(a) = self.a_ceiling {
            if !(a > 0.0) {
                return Err(SmdError::config(format!("a_ceiling must be positive, got {a}")));
            }
            // α is nonincreasing, so t = 1 is the binding step
            let lhs = self.schedule.alpha(1).powi(2) * self.kappa1 / (2.0 * self.sigma_r);
            if lhs > 1.0 / a * (1.0 + 1e-12) {
                return Err(SmdError::config(format!(
                    "step-size precondition fails: alpha(1)^2 kappa1 / (2 sigma_R) = {lhs} > 1/a = {}",
                    1.0 / a
                )));
            }
        }
        Ok(())
    }
}

/// Lower and upper bracket of a sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    fn exact(v: f64) -> Self {
        Bracket { lo: v, hi: v }
    }
    fn scale(self, c: f64) -> Self {
        Bracket { lo: self.lo * c, hi: self.hi * c }
    }
}

/// `c·k^(−s)` for k ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PowerLaw {
    c: f64,
    s: f64,
}

impl PowerLaw {
    fn at(&self, k: f64) -> f64 {
        if self.c == 0.0 {
            0.0
        } else {
            self.c * k.powf(-self.s)
        }
    }

    /// ∫_a^b c·x^(−s) dx for 1 ≤ a ≤ b.
    fn integral(&self, a: f64, b: f64) -> f64 {
        if self.c == 0.0 || b <= a {
            return 0.0;
        }
        let e = 1.0 - self.s;
        let l = (b / a).ln();
        if e == 0.0 {
            self.c * l
        } else {
            self.c * a.powf(e) * (e * l).exp_m1() / e
        }
    }

    /// ∫_a^∞; requires s > 1.
    fn tail(&self, a: f64) -> f64 {
        if self.c == 0.0 {
            0.0
        } else {
            self.c * a.powf(1.0 - self.s) / (self.s - 1.0)
        }
    }
}

#[derive(Debug, Clone)]
struct CachedSeries {
    law: PowerLaw,
    /// prefix[t] = Σ_{k=1}^{t}
    prefix: Vec<f64>,
}

impl CachedSeries {
    fn build(law: PowerLaw, t_max: u64, term: impl Fn(u64) -> f64) -> Self {
        let mut prefix = Vec::with_capacity(t_max as usize + 1);
        prefix.push(0.0);
        // Neumaier summation
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for k in 1..=t_max {
            let v = if law.c == 0.0 { 0.0 } else { term(k) };
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            prefix.push(sum + comp);
        }
        CachedSeries { law, prefix }
    }

    fn t_max(&self) -> u64 {
        (self.prefix.len() - 1) as u64
    }

    fn partial(&self, t: u64) -> Bracket {
        let n = self.t_max();
        if t <= n {
            return Bracket::exact(self.prefix[t as usize]);
        }
        let base = self.prefix[n as usize];
        let (a, tf) = ((n + 1) as f64, t as f64);
        // the summand is nonincreasing in k
        Bracket {
            lo: base + self.law.integral(a, tf + 1.0),
            hi: base + self.law.at(a) + self.law.integral(a, tf),
        }
    }

    /// None when the series diverges.
    fn infinite(&self) -> Option<Bracket> {
        if self.law.c == 0.0 {
            return Some(Bracket::exact(0.0));
        }
        if self.law.s <= 1.0 {
            return None;
        }
        let n = self.t_max() as f64;
        let base = self.prefix[self.t_max() as usize];
        Some(Bracket {
            lo: base + self.law.tail(n + 1.0),
            hi: base + self.law.tail(n),
        })
    }
}

/// Prefix sums of α, α², αB, α²B² and α⁴ with power-law tails.
#[derive(Debug, Clone)]
pub struct SumCache {
    alpha: CachedSeries,
    alpha2: CachedSeries,
    alpha_b: CachedSeries,
    alpha2_b2: CachedSeries,
    alpha4: CachedSeries,
}

/// All sums at one t, as brackets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sums {
    pub alpha: Bracket,
    pub alpha2: Bracket,
    pub alpha_b: Bracket,
    pub alpha2_b2: Bracket,
    pub alpha4: Bracket,
}

impl SumCache {
    pub fn new(schedule: StepSchedule, b0: f64, q: f64, t_max: u64) -> Self {
        let (a0, k) = (schedule.alpha0, schedule.k);
        let bias = move |t: u64| b0 * (t as f64).powf(-q);
        let law = |c: f64, s: f64| PowerLaw { c, s };
        SumCache {
            alpha: CachedSeries::build(law(a0, k), t_max, |t| schedule.alpha(t)),
            alpha2: CachedSeries::build(law(a0 * a0, 2.0 * k), t_max, |t| schedule.alpha(t).powi(2)),
            alpha_b: CachedSeries::build(law(a0 * b0, k + q), t_max, |t| schedule.alpha(t) * bias(t)),
            alpha2_b2: CachedSeries::build(law((a0 * b0).powi(2), 2.0 * (k + q)), t_max, |t| {
                (schedule.alpha(t) * bias(t)).powi(2)
            }),
            alpha4: CachedSeries::build(law(a0.powi(4), 4.0 * k), t_max, |t| schedule.alpha(t).powi(4)),
        }
    }

    pub fn sums(&self, t: u64) -> Sums {
        Sums {
            alpha: self.alpha.partial(t),
            alpha2: self.alpha2.partial(t),
            alpha_b: self.alpha_b.partial(t),
            alpha2_b2: self.alpha2_b2.partial(t),
            alpha4: self.alpha4.partial(t),
        }
    }

    /// Σ_{k ≥ 1} α(k)B(k), or None if it diverges.
    pub fn alpha_b_total(&self) -> Option<Bracket> {
        self.alpha_b.infinite()
    }
}

/// K = exp(−Σρ(k)), ρ(k) = 2α(k)B(k)/σ_R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KValue {
    /// Conservative (smaller) value exp(−S_upper); 0 when divergent.
    pub k: f64,
    /// exp(−S_lower) − exp(−S_upper).
    pub err: f64,
    pub divergent: bool,
    /// Upper bracket of Σρ(k); infinite when divergent.
    pub rho_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub raw: f64,
    pub clipped: f64,
    /// False below the t0 threshold or when K = 0.
    pub applicable: bool,
    pub terms: [f64; 2],
}

impl BoundValue {
    fn new(terms: [f64; 2], applicable: bool) -> Self {
        let raw = terms[0] + terms[1];
        BoundValue {
            raw,
            clipped: raw.min(1.0),
            applicable,
            terms,
        }
    }

    fn vacuous() -> Self {
        BoundValue::new([f64::INFINITY, 0.0], false)
    }
}

/// The smallest t satisfying each threshold inequality; None when the
/// search limit is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t0: Option<u64>,
    pub t1: Option<u64>,
    pub t2: Option<u64>,
    pub t_star: Option<u64>,
}

impl Thresholds {
    fn from_parts(t0: Option<u64>, t1: Option<u64>, t2: Option<u64>) -> Self {
        let t_star = match (t0, t1, t2) {
            (Some(a), Some(b), Some(c)) => Some(a.max(b).max(c)),
            _ => None,
        };
        Thresholds { t0, t1, t2, t_star }
    }

    pub fn resolved(&self) -> bool {
        self.t_star.is_some()
    }
}

/// The individual threshold inequalities. Both corollaries share `T0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    T0,
    MarkovT1,
    MarkovT2,
    SubGaussianT1,
    SubGaussianT2,
}

/// Summability of the step and bias schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Σα = ∞ and Σα² < ∞.
    pub steps_ok: bool,
    /// Σα·B < ∞.
    pub bias_ok: bool,
    pub warnings: Vec<String>,
}

pub fn assumption_report(schedule: &StepSchedule, b0: f64, q: f64) -> AssumptionReport {
    let mut warnings = schedule.warnings();
    let bias_ok = b0 == 0.0 || schedule.k + q > 1.0;
    if !bias_ok {
        warnings.push(format!(
            "k + q = {} <= 1: the bias-weighted steps are not summable and K = 0",
            schedule.k + q
        ));
    }
    AssumptionReport {
        steps_ok: schedule.satisfies_assumption2(),
        bias_ok,
        warnings,
    }
}

/// Bound evaluator over a shared, immutable [`SumCache`].
#[derive(Debug, Clone)]
pub struct Bounds {
    params: BoundParams,
    cache: SumCache,
    k: KValue,
    /// Conservative Σ_{k≥1} α(k)B(k) bracket; None when divergent.
    ab_total: Option<Bracket>,
}

impl Bounds {
    pub fn new(params: BoundParams) -> Result<Self> {
        params.validate()?;
        let cache = SumCache::new(params.schedule, params.b0, params.q, params.t_max);
        let ab_total = cache.alpha_b_total();
        let k = match ab_total {
            None => KValue {
                k: 0.0,
                err: 0.0,
                divergent: true,
                rho_sum: f64::INFINITY,
            },
            Some(b) => {
                let s = b.scale(2.0 / params.sigma_r);
                let k = (-s.hi).exp();
                KValue {
                    k,
                    err: (-s.lo).exp() - k,
                    divergent: false,
                    rho_sum: s.hi,
                }
            }
        };
        Ok(Bounds {
            params,
            cache,
            k,
            ab_total,
        })
    }

    pub fn params(&self) -> &BoundParams {
        &self.params
    }

    pub fn sums(&self, t: u64) -> Sums {
        self.cache.sums(t)
    }

    pub fn compute_k(&self) -> KValue {
        self.k
    }

    fn check_t_eps(t: u64, eps: f64) -> Result<()> {
        if t == 0 {
            return Err(SmdError::input("t must be at least 1"));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SmdError::input(format!("eps must be positive, got {eps}")));
        }
        Ok(())
    }

    fn check_p(p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(SmdError::input(format!("confidence p must lie in (0, 1), got {p}")));
        }
        Ok(1.0 - p)
    }

    fn sub_gaussian_constants(&self) -> Result<(f64, f64)> {
        match (self.params.nu1, self.params.nu2) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(SmdError::config(
                "sub-Gaussian bounds need both nu1 and nu2 to be set",
            )),
        }
    }

    /// (ε/3)·K·A(t) with the conservative K and the lower bracket of A(t).
    pub fn tau(&self, t: u64, eps: f64) -> Result<f64> {
        Self::check_t_eps(t, eps)?;
        Ok(eps / 3.0 * self.k.k * self.cache.alpha.partial(t).lo)
    }

    /// Markov-type bound on P(f(z(t)) − f* ≥ ε).
    pub fn theorem4_bound(&self, t: u64, eps: f64) -> Result<BoundValue> {
        Self::check_t_eps(t, eps)?;
        if self.k.divergent {
            return Ok(BoundValue::vacuous());
        }
        let p = &self.params;
        let s = self.cache.sums(t);
        let (kk, a) = (self.k.k, s.alpha.lo);
        let term1 = 3.0 * p.nu * p.nu * s.alpha2.hi / (2.0 * p.sigma_r * eps * kk * a);
        let weighted = (p.nu * p.nu + p.g * p.g) * s.alpha2.hi + s.alpha2_b2.hi;
        let term2 = 9.0 * p.d * p.d * p.kappa1 * weighted / (eps * eps * kk * kk * a * a);
        let applicable = self.t0(eps)?.is_some_and(|t0| t >= t0);
        Ok(BoundValue::new([term1, term2], applicable))
    }

    /// Chernoff-type bound under sub-Gaussian noise.
    pub fn theorem5_bound(&self, t: u64, eps: f64) -> Result<BoundValue> {
        Self::check_t_eps(t, eps)?;
        let (nu1, nu2) = self.sub_gaussian_constants()?;
        if self.k.divergent {
            return Ok(BoundValue::vacuous());
        }
        let p = &self.params;
        let s = self.cache.sums(t);
        let (kk, a) = (self.k.k, s.alpha.lo);
        let denom = 18.0 * p.d * p.d * nu1 * nu1 * s.alpha2.hi;
        let log1 = if denom == 0.0 {
            f64::NEG_INFINITY
        } else {
            -(eps * eps * kk * kk * a * a) / denom
        };
        let log2 = p.kappa1 / (2.0 * p.sigma_r) * (p.g * p.g * s.alpha2.hi + s.alpha2_b2.hi)
            + nu2 * nu2 * p.kappa1 * p.kappa1 / (8.0 * p.sigma_r * p.sigma_r) * s.alpha4.hi
            - eps / 3.0 * kk * a;
        let applicable = self.t0(eps)?.is_some_and(|t0| t >= t0);
        Ok(BoundValue::new([log1.exp(), log2.exp()], applicable))
    }

    /// Whether a threshold inequality holds at t, with the left side at its
    /// lower bracket and the right side at its upper bracket.
    pub fn condition_holds(&self, cond: Condition, t: u64, eps: f64, p: f64) -> Result<bool> {
        Self::check_t_eps(t, eps)?;
        let p1 = Self::check_p(p)?;
        let ab_total = match self.ab_total {
            Some(b) => b,
            None => return Ok(false),
        };
        let prm = &self.params;
        let e_s = (2.0 * ab_total.hi / prm.sigma_r).exp();
        let s = self.cache.sums(t);
        let a = s.alpha.lo;
        let holds = match cond {
            Condition::T0 => a >= 3.0 / eps * e_s * (prm.r_sup + s.alpha_b.hi),
            Condition::MarkovT1 => a >= 3.0 * prm.nu * prm.nu / (prm.sigma_r * eps * p1) * e_s * s.alpha2.hi,
            Condition::MarkovT2 => {
                let weighted = (prm.nu * prm.nu + prm.g * prm.g) * s.alpha2.hi + s.alpha2_b2.hi;
                a * a >= 18.0 * prm.d * prm.d * prm.kappa1 / (eps * eps * p1) * e_s * e_s * weighted
            }
            Condition::SubGaussianT1 => {
                let (nu1, _) = self.sub_gaussian_constants()?;
                a * a >= 18.0 * prm.d * prm.d * nu1 * nu1 / (eps * eps) * (2.0 / p1).ln() * e_s * e_s * s.alpha2.hi
            }
            Condition::SubGaussianT2 => {
                let (_, nu2) = self.sub_gaussian_constants()?;
                let inner = prm.kappa1 / (2.0 * prm.sigma_r) * (prm.g * prm.g * s.alpha2.hi + s.alpha2_b2.hi)
                    + nu2 * nu2 * prm.kappa1 * prm.kappa1 / (8.0 * prm.sigma_r * prm.sigma_r) * s.alpha4.hi;
                a >= 3.0 / eps * e_s * ((2.0 / p1).ln() + inner)
            }
        };
        Ok(holds)
    }

    fn threshold(&self, cond: Condition, eps: f64, p: f64) -> Result<Option<u64>> {
        first_true(|t| self.condition_holds(cond, t, eps, p), SEARCH_LIMIT)
    }

    fn t0(&self, eps: f64) -> Result<Option<u64>> {
        // T0 does not involve p
        self.threshold(Condition::T0, eps, 0.5)
    }

    pub fn corollary2_times(&self, eps: f64, p: f64) -> Result<Thresholds> {
        Self::check_t_eps(1, eps)?;
        Self::check_p(p)?;
        Ok(Thresholds::from_parts(
            self.t0(eps)?,
            self.threshold(Condition::MarkovT1, eps, p)?,
            self.threshold(Condition::MarkovT2, eps, p)?,
        ))
    }

    pub fn corollary3_times(&self, eps: f64, p: f64) -> Result<Thresholds> {
        Self::check_t_eps(1, eps)?;
        Self::check_p(p)?;
        self.sub_gaussian_constants()?;
        Ok(Thresholds::from_parts(
            self.t0(eps)?,
            self.threshold(Condition::SubGaussianT1, eps, p)?,
            self.threshold(Condition::SubGaussianT2, eps, p)?,
        ))
    }
}

/// Smallest t in [1, limit] with `pred(t)` true, found by doubling then
/// bisection. The result always satisfies `pred(t) && (t == 1 || !pred(t-1))`.
pub fn first_true<F>(pred: F, limit: u64) -> Result<Option<u64>>
where
    F: Fn(u64) -> Result<bool>,
{
    if pred(1)? {
        return Ok(Some(1));
    }
    let (mut lo, mut hi) = (1u64, 2u64);
    loop {
        if hi > limit {
            if lo < limit && pred(limit)? {
                hi = limit;
                break;
            }
            return Ok(None);
        }
        if pred(hi)? {
            break;
        }
        lo = hi;
        hi = hi.saturating_mul(2);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
