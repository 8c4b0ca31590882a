//! The mirror-descent iteration, ergodic averaging and per-step audits.
//!
//! One run performs, for t = 1..=T,
//!
//! ```text
//! x(t+1) = argmin_{u ∈ X} ⟨g̃(t), u − x(t)⟩ + D_R(u, x(t)) / α(t)
//! z(t)   = β(t)·x(t) + (1 − β(t))·z(t−1),   β(t) = α(t) / A(t)
//! ```
//!
//! where A(t) = α(1) + … + α(t). Randomness for step t of trial i is drawn
//! from the `(seed, i, t)` block of a [`CounterRng`], so every step replays
//! in isolation.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SmdError};
use crate::geometry::{bregman_unchecked, dot, mirror_step_unchecked, sub, Geometry, INPUT_TOL};
use crate::oracle::Oracle;
use crate::problems::Problem;
use crate::rng::{CounterRng, Lane};

/// α(t) = alpha0·t^(−k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub k: f64,
}

impl StepSchedule {
    /// Rejects alpha0 ≤ 0 and k < 0. A constant step (k = 0) is accepted
    /// but flagged by [`StepSchedule::warnings`].
    pub fn new(alpha0: f64, k: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(SmdError::config(format!("alpha0 must be positive, got {alpha0}")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(SmdError::config(format!("step exponent k must be >= 0, got {k}")));
        }
        Ok(StepSchedule { alpha0, k })
    }

    pub fn alpha(&self, t: u64) -> f64 {
        if self.k == 0.0 {
            self.alpha0
        } else {
            self.alpha0 * (t as f64).powf(-self.k)
        }
    }

    /// Σα = ∞ and Σα² < ∞, i.e. k ∈ (1/2, 1].
    pub fn satisfies_assumption2(&self) -> bool {
        self.k > 0.5 && self.k <= 1.0
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.k <= 0.5 {
            w.push(format!("step exponent k = {} <= 1/2: the squared steps are not summable", self.k));
        }
        if self.k > 1.0 {
            w.push(format!("step exponent k = {} > 1: the steps are summable", self.k));
        }
        w
    }
}

/// β·x_t + (1 − β)·z_prev with β = alpha_t / A_t.
pub fn ergodic_update(z_prev: &[f64], x_t: &[f64], alpha_t: f64, a_t: f64) -> Result<Vec<f64>> {
    check_dim(x_t, z_prev.len(), "x_t")?;
    if !(alpha_t > 0.0) {
        return Err(SmdError::input("alpha_t must be positive"));
    }
    if a_t < alpha_t {
        return Err(SmdError::input(format!("A_t = {a_t} is smaller than alpha_t = {alpha_t}")));
    }
    Ok(ergodic_unchecked(z_prev, x_t, alpha_t / a_t))
}

fn ergodic_unchecked(z_prev: &[f64], x_t: &[f64], beta: f64) -> Vec<f64> {
    if beta >= 1.0 {
        return x_t.to_vec();
    }
    z_prev
        .iter()
        .zip(x_t)
        .map(|(z, x)| beta * x + (1.0 - beta) * z)
        .collect()
}

/// Residuals of the one-step inequalities for a single reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// D(x_ref, x_next) − [D(x_ref, x_t) + α⟨g̃, x_ref − x_t⟩ + α²‖g̃‖*²/(2σ_R)].
    /// Must be ≤ 0 up to rounding.
    pub ber_residual: f64,
    /// 1 + sum of the magnitudes of the four terms above.
    pub ber_scale: f64,
    /// min over probes u of α⟨g̃, u − x_next⟩ + ⟨∇R(x_next) − ∇R(x_t), u − x_next⟩.
    /// Must be ≥ 0 up to rounding.
    pub opt_residual: f64,
}

pub fn audit_step(
    geom: &Geometry,
    x_t: &[f64],
    x_next: &[f64],
    x_ref: &[f64],
    probes: &[Vec<f64>],
    gtilde: &[f64],
    alpha: f64,
) -> AuditRecord {
    let map = &geom.map;
    let d_next = bregman_unchecked(map, x_ref, x_next);
    let d_prev = bregman_unchecked(map, x_ref, x_t);
    let lin = alpha * dot(gtilde, &sub(x_ref, x_t));
    let gn = geom.norms.dual(gtilde);
    let quad = alpha * alpha * gn * gn / (2.0 * geom.sigma_r());
    let grad_diff = sub(&map.gradient(x_next), &map.gradient(x_t));
    let opt_residual = probes
        .iter()
        .map(|u| {
            let d = sub(u, x_next);
            alpha * dot(gtilde, &d) + dot(&grad_diff, &d)
        })
        .fold(f64::INFINITY, f64::min);
    AuditRecord {
        ber_residual: d_next - (d_prev + lin + quad),
        ber_scale: 1.0 + d_next.abs() + d_prev.abs() + lin.abs() + quad.abs(),
        opt_residual,
    }
}

/// Audit of one step against all reference points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    /// max over references of `ber_residual / ber_scale`.
    pub ber_residual: f64,
    /// min over probes of the first-order optimality residual.
    pub opt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub gap_x: f64,
    pub gap_z: f64,
    pub gtilde: Vec<f64>,
    pub audit: Option<StepAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    pub trial: u64,
    pub horizon: u64,
    pub audited: bool,
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    /// Every step when T ≤ [`FULL_TRACE_LIMIT`]; otherwise t ∈ {1, 2, 4, …}
    /// plus the last [`TRACE_TAIL`] steps.
    pub steps: Vec<TraceStep>,
    pub final_x: Vec<f64>,
    /// Worst audit residuals over all steps, including unstored ones.
    pub worst_audit: Option<StepAudit>,
}

pub const FULL_TRACE_LIMIT: u64 = 10_000;
pub const TRACE_TAIL: u64 = 100;
pub const AUDIT_RANDOM_REFS: usize = 5;

fn keep_step(t: u64, horizon: u64) -> bool {
    horizon <= FULL_TRACE_LIMIT || t.is_power_of_two() || t + TRACE_TAIL > horizon
}

impl Trace {
    /// CSV with columns `t,gap_x,gap_z,ber_residual,opt_residual`; `#` lines
    /// carry provenance. Audit columns are empty when auditing was off.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &[(&str, String)]) -> std::io::Result<()> {
        for (k, v) in provenance {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "t,gap_x,gap_z,ber_residual,opt_residual")?;
        for s in &self.steps {
            let (ber, opt) = match s.audit {
                Some(a) => (format!("{:.16e}", a.ber_residual), format!("{:.16e}", a.opt_residual)),
                None => (String::new(), String::new()),
            };
            writeln!(w, "{},{:.16e},{:.16e},{},{}", s.t, s.gap_x, s.gap_z, ber, opt)?;
        }
        Ok(())
    }
}

/// View of one completed step handed to observers.
pub struct StepView<'a> {
    pub t: u64,
    pub x: &'a [f64],
    pub z: &'a [f64],
    pub gap_x: f64,
    pub gap_z: f64,
    pub gtilde: &'a [f64],
    pub x_next: &'a [f64],
    pub audit: Option<StepAudit>,
}

/// Problem, geometry, oracle and schedule for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub problem: Problem,
    pub geometry: Geometry,
    pub oracle: Oracle,
    pub schedule: StepSchedule,
    pub start: Vec<f64>,
}

impl Experiment {
    /// Starts at the set's center (clamped into the mirror map's domain).
    pub fn new(problem: Problem, geometry: Geometry, oracle: Oracle, schedule: StepSchedule) -> Result<Self> {
        geometry.check_pairing(&problem.set)?;
        if problem.norms != geometry.norms {
            return Err(SmdError::config("problem constants and geometry use different norm pairs"));
        }
        let start = geometry.admissible(&problem.set.center());
        Ok(Experiment {
            problem,
            geometry,
            oracle,
            schedule,
            start,
        })
    }

    pub fn with_start(mut self, x: Vec<f64>) -> Result<Self> {
        check_dim(&x, self.problem.dim(), "start point")?;
        if !self.problem.set.contains(&x, INPUT_TOL) {
            return Err(SmdError::input("start point is not feasible"));
        }
        self.geometry.map.check_domain(&x)?;
        self.start = x;
        Ok(self)
    }

    /// The analytic optimum, moved into the mirror map's domain.
    pub fn reference_point(&self) -> Vec<f64> {
        self.geometry.admissible(&self.problem.x_star)
    }

    pub fn initial_gap(&self) -> f64 {
        self.problem.eval(&self.start) - self.problem.f_star
    }

    /// Run trial 0 and keep a [`Trace`].
    pub fn run(&self, horizon: u64, seed: u64, audit: bool) -> Result<Trace> {
        self.run_trial(horizon, &CounterRng::new(seed), 0, audit)
    }

    pub fn run_trial(&self, horizon: u64, streams: &CounterRng, trial: u64, audit: bool) -> Result<Trace> {
        let mut steps = Vec::new();
        let mut worst: Option<StepAudit> = None;
        let final_x = self.drive(horizon, streams, trial, audit, |v| {
            if let Some(a) = v.audit {
                let w = worst.get_or_insert(a);
                w.ber_residual = w.ber_residual.max(a.ber_residual);
                w.opt_residual = w.opt_residual.min(a.opt_residual);
            }
            if keep_step(v.t, horizon) {
                steps.push(TraceStep {
                    t: v.t,
                    x: v.x.to_vec(),
                    z: v.z.to_vec(),
                    gap_x: v.gap_x,
                    gap_z: v.gap_z,
                    gtilde: v.gtilde.to_vec(),
                    audit: v.audit,
                });
            }
        })?;
        Ok(Trace {
            header: TraceHeader {
                seed: streams.seed(),
                trial,
                horizon,
                audited: audit,
                config_digest: None,
            },
            steps,
            final_x,
            worst_audit: worst,
        })
    }

    /// Execute the recursion, calling `observe` after every step. Returns x(T+1).
    pub fn drive<F>(&self, horizon: u64, streams: &CounterRng, trial: u64, audit: bool, mut observe: F) -> Result<Vec<f64>>
    where
        F: FnMut(StepView<'_>),
    {
        if horizon == 0 {
            return Err(SmdError::input("horizon must be at least 1"));
        }
        let p = &self.problem;
        let map = &self.geometry.map;
        let x_ref = self.reference_point();
        let mut x = self.start.clone();
        let mut z = x.clone();
        let mut a_sum = 0.0;
        for t in 1..=horizon {
            let alpha = self.schedule.alpha(t);
            a_sum += alpha;
            z = ergodic_unchecked(&z, &x, if t == 1 { 1.0 } else { alpha / a_sum });
            let gap_x = p.eval(&x) - p.f_star;
            let gap_z = p.eval(&z) - p.f_star;
            let mut rng = streams.stream(trial, t, Lane::Oracle);
            let g = self.oracle.draw(p, &x, t, &mut rng)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(SmdError::Numerical {
                    step: t,
                    message: "stochastic subgradient is not finite".into(),
                });
            }
            let x_next = mirror_step_unchecked(map, &p.set, &x, &g, alpha);
            if x_next.iter().any(|v| !v.is_finite()) || !gap_z.is_finite() {
                return Err(SmdError::Numerical {
                    step: t,
                    message: "iterate is not finite".into(),
                });
            }
            let audit_rec = if audit {
                let mut arng = streams.stream(trial, t, Lane::Audit);
                Some(self.audit_against_references(&x, &x_next, &x_ref, &g, alpha, &mut arng))
            } else {
                None
            };
            observe(StepView {
                t,
                x: &x,
                z: &z,
                gap_x,
                gap_z,
                gtilde: &g,
                x_next: &x_next,
                audit: audit_rec,
            });
            x = x_next;
        }
        Ok(x)
    }

    fn audit_against_references<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        x_next: &[f64],
        x_ref: &[f64],
        g: &[f64],
        alpha: f64,
        rng: &mut R,
    ) -> StepAudit {
        let mut refs = vec![x_ref.to_vec()];
        for _ in 0..AUDIT_RANDOM_REFS {
            refs.push(self.geometry.admissible(&self.problem.set.sample(rng)));
        }
        let mut ber = f64::NEG_INFINITY;
        let mut opt = f64::INFINITY;
        for r in &refs {
            let rec = audit_step(&self.geometry, x, x_next, r, std::slice::from_ref(r), g, alpha);
            ber = ber.max(rec.ber_residual / rec.ber_scale);
            opt = opt.min(rec.opt_residual);
        }
        StepAudit {
            ber_residual: ber,
            opt_residual: opt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mirror_step, ConstraintSet, NormPair, MEMBERSHIP_TOL};
    use crate::oracle::{BiasModel, NoiseKind, NoiseModel};
    use crate::problems::{make_problem, ProblemKind};

    fn eye(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn quad_experiment(b: Vec<f64>, noise: NoiseModel, sched: StepSchedule) -> Experiment {
        let p = make_problem(
            ProblemKind::Quadratic { a: eye(2), b },
            ConstraintSet::cube(2, -1.0, 1.0).unwrap(),
            NormPair::L2,
        )
        .unwrap();
        let o = Oracle::new(BiasModel::None, noise, &p).unwrap();
        Experiment::new(p, Geometry::euclidean(), o, sched).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::new(1.0, -0.1).is_err());
        assert!(StepSchedule::new(0.0, 0.7).is_err());
        let s = StepSchedule::new(1.0, 0.75).unwrap();
        assert!(s.satisfies_assumption2() && s.warnings().is_empty());
        let c = StepSchedule::new(0.5, 0.0).unwrap();
        assert!(!c.satisfies_assumption2() && !c.warnings().is_empty());
        assert_eq!(c.alpha(1000), 0.5);
        assert_eq!(StepSchedule::new(1.0, 1.0).unwrap().alpha(2), 0.5);
    }

    #[test]
    fn ergodic_update_examples() {
        assert_eq!(ergodic_update(&[9.0, 9.0], &[1.0, 2.0], 0.3, 0.3).unwrap(), vec![1.0, 2.0]);
        assert_eq!(ergodic_update(&[0.0, 0.0], &[1.0, 1.0], 1.0, 2.0).unwrap(), vec![0.5, 0.5]);
        assert!(ergodic_update(&[0.0], &[1.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn ergodic_update_matches_batch_average() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let alphas: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut z = vec![0.0; 2];
        let mut a = 0.0;
        for (x, al) in xs.iter().zip(&alphas) {
            a += al;
            z = ergodic_update(&z, x, *al, a).unwrap();
        }
        for i in 0..2 {
            let batch: f64 = xs.iter().zip(&alphas).map(|(x, al)| al * x[i]).sum::<f64>() / a;
            assert!((z[i] - batch).abs() < 1e-10);
        }
    }

    #[test]
    fn single_deterministic_step() {
        let e = quad_experiment(vec![0.0, 0.0], NoiseModel::silent(2.0), StepSchedule::new(0.5, 0.0).unwrap())
            .with_start(vec![0.8, -0.6])
            .unwrap();
        let tr = e.run(2, 1, true).unwrap();
        let g = e.problem.subgrad(&[0.8, -0.6]).unwrap();
        let expect = mirror_step(&e.geometry.map, &e.problem.set, &[0.8, -0.6], &g, 0.5).unwrap();
        assert_eq!(tr.steps[1].x, expect);
    }

    #[test]
    fn horizon_one_keeps_start_as_average() {
        let e = quad_experiment(vec![0.5, 0.0], NoiseModel::silent(2.0), StepSchedule::new(1.0, 0.75).unwrap());
        let tr = e.run(1, 0, false).unwrap();
        assert_eq!(tr.steps.len(), 1);
        assert_eq!(tr.steps[0].z, tr.steps[0].x);
        assert!(e.run(0, 0, false).is_err());
    }

    #[test]
    fn deterministic_descent_gap_is_monotone() {
        let e = quad_experiment(vec![0.7, -0.4], NoiseModel::silent(2.0), StepSchedule::new(1.0, 1.0).unwrap())
            .with_start(vec![-1.0, 1.0])
            .unwrap();
        let tr = e.run(1000, 0, false).unwrap();
        for w in tr.steps.windows(2) {
            assert!(w[1].gap_x <= w[0].gap_x + 1e-15);
        }
        assert!(tr.steps.last().unwrap().gap_x < 1e-12);
    }

    #[test]
    fn interior_step_has_zero_ber_residual() {
        let g = Geometry::euclidean();
        let x = [0.1, 0.2];
        let gt = [0.3, -0.4];
        let alpha = 0.5;
        let x_next: Vec<f64> = x.iter().zip(&gt).map(|(a, b)| a - alpha * b).collect();
        let rec = audit_step(&g, &x, &x_next, &x, &[x.to_vec()], &gt, alpha);
        assert!(rec.ber_residual.abs() < 1e-16, "{}", rec.ber_residual);
        let zero = audit_step(&g, &x, &x, &[0.5, 0.5], &[vec![0.5, 0.5]], &[0.0, 0.0], alpha);
        assert!(zero.ber_residual <= 0.0);
    }

    #[test]
    fn noisy_run_is_feasible_deterministic_and_consistent() {
        let noise = NoiseModel::new(NoiseKind::GaussianIso { sigma: 1.0 }, 3.0, Some(1.0)).unwrap();
        let e = quad_experiment(vec![2.0, 0.3], noise, StepSchedule::new(0.5, 0.75).unwrap());
        let a = e.run(500, 42, true).unwrap();
        let b = e.run(500, 42, true).unwrap();
        assert_eq!(a, b);
        let mut a_sum = 0.0;
        let mut weighted = vec![0.0; 2];
        let mut weighted_gap = 0.0;
        for s in &a.steps {
            assert!(e.problem.set.contains(&s.x, MEMBERSHIP_TOL));
            assert!(e.problem.set.contains(&s.z, MEMBERSHIP_TOL));
            let al = e.schedule.alpha(s.t);
            a_sum += al;
            for i in 0..2 {
                weighted[i] += al * s.x[i];
            }
            weighted_gap += al * s.gap_x;
            for i in 0..2 {
                assert!((weighted[i] / a_sum - s.z[i]).abs() < 1e-10);
            }
            assert!(s.gap_z <= weighted_gap / a_sum + 1e-9);
            let au = s.audit.unwrap();
            assert!(au.ber_residual <= 1e-9 && au.opt_residual >= -1e-8);
        }
    }

    #[test]
    fn long_traces_are_thinned() {
        let e = quad_experiment(vec![0.0, 0.0], NoiseModel::silent(2.0), StepSchedule::new(1.0, 0.75).unwrap());
        let tr = e.run(20_000, 0, false).unwrap();
        let ts: Vec<u64> = tr.steps.iter().map(|s| s.t).collect();
        assert!(ts.contains(&1) && ts.contains(&16_384) && ts.contains(&20_000) && ts.contains(&19_901));
        assert!(!ts.contains(&19_900) && !ts.contains(&3));
        assert_eq!(ts.len(), 15 + 100);
    }

    #[test]
    fn infeasible_start_rejected() {
        let e = quad_experiment(vec![0.0, 0.0], NoiseModel::silent(2.0), StepSchedule::new(1.0, 0.75).unwrap());
        assert!(matches!(e.with_start(vec![3.0, 0.0]), Err(SmdError::Input(_))));
    }

    #[test]
    fn overflow_reports_step() {
        // Ball geometry with an absurd noise scale overflows the subgradient
        let p = make_problem(
            ProblemKind::Quadratic { a: eye(1), b: vec![0.0] },
            ConstraintSet::new_ball(vec![0.0], 1.0).unwrap(),
            NormPair::L2,
        )
        .unwrap();
        let noise = NoiseModel::new(NoiseKind::GaussianIso { sigma: f64::MAX }, 1.0, None).unwrap();
        let o = Oracle::new(BiasModel::None, noise, &p).unwrap();
        let e = Experiment::new(p, Geometry::euclidean(), o, StepSchedule::new(1.0, 0.75).unwrap()).unwrap();
        match e.run(10, 3, false) {
            Err(SmdError::Numerical { step, .. }) => assert!(step >= 1),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }
}
