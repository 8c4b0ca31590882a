//! Biased stochastic subgradients `g̃(t) = g(t) + b(t) + ζ(t)`.
//!
//! The bias `b(t)` is either explicit (a fixed or adversarial direction scaled
//! by `B(t) = B0·t^(−q)`) or implicit in a two-point Gaussian-smoothing
//! estimate. The noise `ζ(t)` is zero-mean with a declared second-moment
//! bound `ν` and, for light-tailed laws, a sub-Gaussian parameter `ν1`.
//! The `*_check` functions verify those declarations empirically.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Result, SmdError};
use crate::geometry::{sub, NormPair};
use crate::problems::Problem;
use crate::stats::clopper_pearson;

/// μ(t) = mu0·t^(−r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    pub mu0: f64,
    #[serde(default = "default_smoothing_exponent")]
    pub r: f64,
}

fn default_smoothing_exponent() -> f64 {
    1.0
}

impl SmoothingSchedule {
    pub fn new(mu0: f64, r: f64) -> Result<Self> {
        if !(mu0 > 0.0 && mu0.is_finite()) || !(r >= 0.0 && r.is_finite()) {
            return Err(SmdError::config("smoothing needs mu0 > 0 and r >= 0"));
        }
        Ok(SmoothingSchedule { mu0, r })
    }

    pub fn mu(&self, t: u64) -> f64 {
        self.mu0 * (t as f64).powf(-self.r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasModel {
    None,
    /// b(t) = B(t)·u with ‖u‖* = 1.
    FixedDirection { direction: Vec<f64>, b0: f64, q: f64 },
    /// b(t) = B(t)·u(x), u the dual unit vector aligned with x* − x.
    Adversarial { b0: f64, q: f64 },
    /// Bias of the Gaussian-smoothing estimate, bounded by the declared
    /// envelope c_zo·μ(t).
    ZerothOrderImplicit { c_zo: f64, smoothing: SmoothingSchedule },
}

impl BiasModel {
    /// `(B0, q)` of the power law B(t) = B0·t^(−q) that bounds ‖b(t)‖*.
    pub fn power_law(&self) -> (f64, f64) {
        match self {
            BiasModel::None => (0.0, 0.0),
            BiasModel::FixedDirection { b0, q, .. } | BiasModel::Adversarial { b0, q } => (*b0, *q),
            BiasModel::ZerothOrderImplicit { c_zo, smoothing } => (c_zo * smoothing.mu0, smoothing.r),
        }
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self, BiasModel::ZerothOrderImplicit { .. })
    }

    /// The explicit bias vector at `x`; `None` for the implicit kind.
    pub fn vector(&self, p: &Problem, x: &[f64], t: u64) -> Option<Vec<f64>> {
        let bt = bias_bound(self, t);
        match self {
            BiasModel::None => Some(vec![0.0; x.len()]),
            BiasModel::FixedDirection { direction, .. } => {
                let scale = bt / p.norms.dual(direction);
                Some(direction.iter().map(|u| u * scale).collect())
            }
            BiasModel::Adversarial { .. } => {
                let u = p.norms.dual_aligned(&sub(&p.x_star, x));
                Some(u.iter().map(|v| v * bt).collect())
            }
            BiasModel::ZerothOrderImplicit { .. } => None,
        }
    }

    fn validate(&self, dim: usize, norms: NormPair) -> Result<()> {
        let (b0, q) = self.power_law();
        if !(b0 >= 0.0 && b0.is_finite() && q >= 0.0 && q.is_finite()) {
            return Err(SmdError::config("bias needs b0 >= 0 and q >= 0"));
        }
        match self {
            BiasModel::FixedDirection { direction, .. } => {
                if direction.len() != dim {
                    return Err(SmdError::config("bias direction has the wrong dimension"));
                }
                if !(norms.dual(direction) > 0.0) || direction.iter().any(|v| !v.is_finite()) {
                    return Err(SmdError::config("bias direction must be finite and non-zero"));
                }
            }
            BiasModel::ZerothOrderImplicit { smoothing, .. } => {
                SmoothingSchedule::new(smoothing.mu0, smoothing.r)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// B(t); for the implicit kind, the declared envelope c_zo·μ(t).
pub fn bias_bound(bias: &BiasModel, t: u64) -> f64 {
    match bias {
        BiasModel::None => 0.0,
        BiasModel::FixedDirection { b0, q, .. } | BiasModel::Adversarial { b0, q } => {
            b0 * (t as f64).powf(-q)
        }
        BiasModel::ZerothOrderImplicit { c_zo, smoothing } => c_zo * smoothing.mu(t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// ζ ~ N(0, σ²I).
    GaussianIso { sigma: f64 },
    /// Independent coordinates, uniform on [−radius, radius].
    BoundedUniform { radius: f64 },
    /// Independent coordinates, scale·T_dof.
    StudentT { dof: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Declared bound E‖g̃‖*² ≤ ν².
    pub nu: f64,
    /// Declared sub-Gaussian parameter.
    pub nu1: Option<f64>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, nu: f64, nu1: Option<f64>) -> Result<Self> {
        let ok = match kind {
            NoiseKind::GaussianIso { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseKind::BoundedUniform { radius } => radius >= 0.0 && radius.is_finite(),
            NoiseKind::StudentT { dof, scale } => dof > 2.0 && dof.is_finite() && scale >= 0.0 && scale.is_finite(),
        };
        if !ok {
            return Err(SmdError::config(
                "noise parameters must be finite and non-negative (student_t needs dof > 2)",
            ));
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(SmdError::config("declared nu must be finite and non-negative"));
        }
        if let Some(v) = nu1 {
            if !(v > 0.0) {
                return Err(SmdError::config("declared nu1 must be positive"));
            }
        }
        Ok(NoiseModel { kind, nu, nu1 })
    }

    /// Noise-free model with the given declared ν.
    pub fn silent(nu: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::GaussianIso { sigma: 0.0 },
            nu,
            nu1: None,
        }
    }

    /// The sub-Gaussian parameter the law actually has under ‖·‖₂-normalised
    /// projections, or `None` for heavy tails.
    pub fn natural_nu1(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::GaussianIso { sigma } => Some(sigma),
            // sinh(x)/x ≤ exp(x²/6)
            NoiseKind::BoundedUniform { radius } => Some(radius / 3f64.sqrt()),
            NoiseKind::StudentT { .. } => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self.kind {
            NoiseKind::GaussianIso { sigma } => (0..dim)
                .map(|_| { let s: f64 = StandardNormal.sample(rng); sigma * s })
                .collect(),
            NoiseKind::BoundedUniform { radius } => {
                (0..dim).map(|_| radius * rng.random_range(-1.0..=1.0)).collect()
            }
            NoiseKind::StudentT { dof, scale } => {
                let t = StudentT::new(dof).expect("validated dof");
                (0..dim).map(|_| scale * t.sample(rng)).collect()
            }
        }
    }

    pub(crate) fn is_silent(&self) -> bool {
        match self.kind {
            NoiseKind::GaussianIso { sigma } => sigma == 0.0,
            NoiseKind::BoundedUniform { radius } => radius == 0.0,
            NoiseKind::StudentT { scale, .. } => scale == 0.0,
        }
    }
}

/// Bias and noise models for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub bias: BiasModel,
    pub noise: NoiseModel,
}

impl Oracle {
    pub fn new(bias: BiasModel, noise: NoiseModel, p: &Problem) -> Result<Self> {
        bias.validate(p.dim(), p.norms)?;
        let noise = NoiseModel::new(noise.kind, noise.nu, noise.nu1)?;
        Ok(Oracle { bias, noise })
    }

    pub fn unbiased(noise: NoiseModel) -> Self {
        Oracle {
            bias: BiasModel::None,
            noise,
        }
    }

    /// One draw of g̃(t) at x: [`sample`] for explicit bias, [`zo_sample`]
    /// plus noise for the implicit kind.
    pub fn draw<R: Rng + ?Sized>(&self, p: &Problem, x: &[f64], t: u64, rng: &mut R) -> Result<Vec<f64>> {
        match &self.bias {
            BiasModel::ZerothOrderImplicit { smoothing, .. } => {
                let mut g = zo_sample(p, x, smoothing.mu(t), rng)?;
                if !self.noise.is_silent() {
                    for (gi, z) in g.iter_mut().zip(self.noise.draw(x.len(), rng)) {
                        *gi += z;
                    }
                }
                Ok(g)
            }
            _ => sample(&self.bias, &self.noise, p, x, t, rng),
        }
    }
}

/// subgrad(p, x) + b(t) + ζ for an explicit bias model.
pub fn sample<R: Rng + ?Sized>(
    bias: &BiasModel,
    noise: &NoiseModel,
    p: &Problem,
    x: &[f64],
    t: u64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(SmdError::input("step index starts at 1"));
    }
    let b = bias
        .vector(p, x, t)
        .ok_or_else(|| SmdError::config("zeroth-order bias must be sampled with zo_sample"))?;
    let mut g = p.subgrad(x)?;
    for (gi, bi) in g.iter_mut().zip(&b) {
        *gi += bi;
    }
    if !noise.is_silent() {
        for (gi, z) in g.iter_mut().zip(noise.draw(x.len(), rng)) {
            *gi += z;
        }
    }
    Ok(g)
}

/// Two-point Gaussian-smoothing estimate ((f(x + μu) − f(x))/μ)·u.
pub fn zo_sample<R: Rng + ?Sized>(p: &Problem, x: &[f64], mu: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(SmdError::input("smoothing parameter must be positive"));
    }
    check_dim(x, p.dim(), "x")?;
    check_finite(x, "x")?;
    let u: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    let shifted: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + mu * b).collect();
    let diff = (p.value(&shifted)? - p.value(x)?) / mu;
    Ok(u.iter().map(|v| diff * v).collect())
}

/// Sample moments of the oracle at a fixed `(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub n: usize,
    /// ‖mean(g̃) − g − b(t)‖*; for implicit bias, ‖mean(g̃) − g‖*.
    pub mean_dev: f64,
    /// Componentwise sample mean of ζ and its standard error.
    pub zeta_mean: Vec<f64>,
    pub zeta_mean_se: Vec<f64>,
    /// Mean of ‖g̃‖*² and its standard error.
    pub m2: f64,
    pub m2_se: f64,
    /// Mean of ‖ζ‖*⁴ and its standard error.
    pub m4: f64,
    pub m4_se: f64,
    /// sqrt(m4 + 3 standard errors): the estimate of ν2.
    pub nu2_hat: f64,
}

pub const MIN_MOMENT_SAMPLES: usize = 10_000;

/// Estimate the oracle's moments from `n` draws at `(x, t)`.
///
/// ζ is measured against the known `g + b(t)` for explicit bias and against
/// the sample mean for the implicit kind.
pub fn estimate_moments<R: Rng + ?Sized>(
    oracle: &Oracle,
    p: &Problem,
    x: &[f64],
    t: u64,
    n: usize,
    rng: &mut R,
) -> Result<MomentEstimate> {
    if n < MIN_MOMENT_SAMPLES {
        return Err(SmdError::input(format!(
            "moment estimation needs at least {MIN_MOMENT_SAMPLES} samples, got {n}"
        )));
    }
    let dim = p.dim();
    let norms = p.norms;
    let g = p.subgrad(x)?;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| oracle.draw(p, x, t, rng)).collect::<Result<_>>()?;
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for d in &draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / nf;
        }
    }
    let (center, mean_dev) = match oracle.bias.vector(p, x, t) {
        Some(b) => {
            let c: Vec<f64> = g.iter().zip(&b).map(|(a, c)| a + c).collect();
            let dev = norms.dual(&sub(&mean, &c));
            (c, dev)
        }
        // the realised implicit bias
        None => (mean.clone(), norms.dual(&sub(&mean, &g))),
    };
    let mut zeta_mean = vec![0.0; dim];
    let mut zeta_sq = vec![0.0; dim];
    let (mut s2, mut s2sq, mut s4, mut s4sq) = (0.0, 0.0, 0.0, 0.0);
    for d in &draws {
        let zeta = sub(d, &center);
        for i in 0..dim {
            zeta_mean[i] += zeta[i];
            zeta_sq[i] += zeta[i] * zeta[i];
        }
        let gn2 = norms.dual(d).powi(2);
        s2 += gn2;
        s2sq += gn2 * gn2;
        let zn4 = norms.dual(&zeta).powi(4);
        s4 += zn4;
        s4sq += zn4 * zn4;
    }
    let se = |sum: f64, sumsq: f64| {
        let m = sum / nf;
        ((sumsq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt()
    };
    let zeta_mean_se: Vec<f64> = (0..dim).map(|i| se(zeta_mean[i], zeta_sq[i])).collect();
    for v in zeta_mean.iter_mut() {
        *v /= nf;
    }
    let m4 = s4 / nf;
    let m4_se = se(s4, s4sq);
    Ok(MomentEstimate {
        n,
        mean_dev,
        zeta_mean,
        zeta_mean_se,
        m2: s2 / nf,
        m2_se: se(s2, s2sq),
        m4,
        m4_se,
        nu2_hat: (m4 + 3.0 * m4_se).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentChecks {
    /// Largest |mean ζᵢ| / se over coordinates.
    pub max_mean_z: f64,
    pub zero_mean_ok: bool,
    /// m2 ≤ ν² + 4·se.
    pub second_moment_ok: bool,
    /// For implicit bias: mean_dev ≤ c_zo·μ(t) + 4·se. Always true otherwise.
    pub bias_envelope_ok: bool,
}

/// Check zero-mean noise, the declared ν, and the implicit-bias envelope.
pub fn check_moments(oracle: &Oracle, est: &MomentEstimate, t: u64) -> MomentChecks {
    let max_mean_z = est
        .zeta_mean
        .iter()
        .zip(&est.zeta_mean_se)
        .map(|(m, s)| if *s > 0.0 { m.abs() / s } else if *m == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let nu = oracle.noise.nu;
    let bias_envelope_ok = match &oracle.bias {
        BiasModel::ZerothOrderImplicit { .. } => {
            let se = est.zeta_mean_se.iter().map(|s| s * s).sum::<f64>().sqrt();
            est.mean_dev <= bias_bound(&oracle.bias, t) + 4.0 * se
        }
        _ => true,
    };
    MomentChecks {
        max_mean_z,
        zero_mean_ok: max_mean_z <= 4.0,
        second_moment_ok: est.m2 <= nu * nu + 4.0 * est.m2_se,
        bias_envelope_ok,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub direction: usize,
    /// Threshold in units of ν1.
    pub multiple: f64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    /// exp(−s²/(2ν1²)).
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianCheck {
    pub nu1: f64,
    pub n: usize,
    pub passed: bool,
    pub cells: Vec<TailCell>,
}

pub const TAIL_MULTIPLES: [f64; 3] = [1.0, 2.0, 3.0];

/// Empirical check of P(⟨u, ζ⟩ ≥ s) ≤ exp(−s²/(2ν1²)) for s ∈ {1,2,3}·ν1
/// over `n_dirs` random primal-unit directions. A cell fails when the lower
/// end of its exact binomial interval (at `confidence`) exceeds the bound.
pub fn subgaussian_tail_check<R: Rng + ?Sized>(
    noise: &NoiseModel,
    norms: NormPair,
    dim: usize,
    n: usize,
    n_dirs: usize,
    confidence: f64,
    rng: &mut R,
) -> Result<SubGaussianCheck> {
    let nu1 = noise
        .nu1
        .ok_or_else(|| SmdError::config("no sub-Gaussian parameter nu1 declared for this noise"))?;
    if n == 0 || n_dirs == 0 {
        return Err(SmdError::input("tail check needs at least one draw and one direction"));
    }
    let dirs: Vec<Vec<f64>> = (0..n_dirs)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            if let Ok(u) = norms.primal_unit(&v) {
                break u;
            }
        })
        .collect();
    let mut counts = vec![[0u64; TAIL_MULTIPLES.len()]; n_dirs];
    for _ in 0..n {
        let z = noise.draw(dim, rng);
        for (d, u) in dirs.iter().enumerate() {
            let proj: f64 = u.iter().zip(&z).map(|(a, b)| a * b).sum();
            for (k, m) in TAIL_MULTIPLES.iter().enumerate() {
                if proj >= m * nu1 {
                    counts[d][k] += 1;
                }
            }
        }
    }
    let mut cells = Vec::new();
    for (d, row) in counts.iter().enumerate() {
        for (k, m) in TAIL_MULTIPLES.iter().enumerate() {
            let (ci_low, _) = clopper_pearson(row[k], n as u64, confidence);
            let bound = (-0.5 * m * m).exp();
            cells.push(TailCell {
                direction: d,
                multiple: *m,
                successes: row[k],
                p_hat: row[k] as f64 / n as f64,
                ci_low,
                bound,
                passed: ci_low <= bound,
            });
        }
    }
    Ok(SubGaussianCheck {
        nu1,
        n,
        passed: cells.iter().all(|c| c.passed),
        cells,
    })
}
