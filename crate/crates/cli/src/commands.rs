//! The four subcommands. Each writes its artifacts and reports any
//! acceptance-check violations it found.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use smd_core::bounds::{Bounds, Thresholds};
use smd_core::harness::{compare_all, coverage_check, default_checkpoints, fit_rate, run_trials, VerdictStatus};
use smd_core::oracle::{check_moments, estimate_moments, subgaussian_tail_check, MomentEstimate, SubGaussianCheck};
use smd_core::rng::{CounterRng, Lane};
use smd_core::smd::Experiment;

use crate::config::{ExperimentConfig, Format};
use crate::output::{full, to_json, write_atomic, write_json, VERSION};
use crate::CliError;

/// Audit tolerances for `run --check`.
pub const BER_TOL: f64 = 1e-9;
pub const OPT_TOL: f64 = 1e-8;
/// Directions probed by the sub-Gaussian tail diagnostic.
pub const TAIL_DIRECTIONS: usize = 10;

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub violations: Vec<String>,
    /// Printed on stdout after the files are written.
    pub stdout: Option<String>,
}

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub digest: String,
    pub dir: PathBuf,
}

impl Context<'_> {
    fn wants(&self, f: Format) -> bool {
        self.config.output.formats.contains(&f)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn header(ctx: &Context<'_>) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("config_digest".into(), json!(ctx.digest));
    m.insert("version".into(), json!(VERSION));
    m
}

fn with_header(ctx: &Context<'_>, body: Value) -> Value {
    let mut m = header(ctx);
    if let Value::Object(b) = body {
        m.extend(b);
    }
    Value::Object(m)
}

fn emit_json(ctx: &Context<'_>, out: &mut Outcome, name: &str, body: Value) -> Result<(), CliError> {
    if ctx.wants(Format::Json) {
        let p = ctx.path(name);
        write_json(&p, &with_header(ctx, body))?;
        out.files.push(p);
    }
    Ok(())
}

pub fn run(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let built = cfg.build()?;
    let e = &built.experiment;
    let mut trace = e.run(cfg.run.horizon, cfg.run.seed, cfg.run.audit)?;
    trace.header.config_digest = Some(ctx.digest.clone());
    let mut out = Outcome::default();
    if ctx.wants(Format::Csv) {
        let mut buf = Vec::new();
        let prov = [
            ("config_digest", ctx.digest.clone()),
            ("version", VERSION.to_string()),
            ("seed", cfg.run.seed.to_string()),
            ("horizon", cfg.run.horizon.to_string()),
        ];
        trace.write_csv(&mut buf, &prov).expect("writing to memory");
        let p = ctx.path("trace.csv");
        write_atomic(&p, &buf)?;
        out.files.push(p);
    }
    let last = trace.steps.last().expect("horizon >= 1");
    if let Some(w) = trace.worst_audit {
        if w.ber_residual > BER_TOL {
            out.violations
                .push(format!("one-step inequality residual {} exceeds {BER_TOL}", full(w.ber_residual)));
        }
        if w.opt_residual < -OPT_TOL {
            out.violations
                .push(format!("optimality residual {} is below -{OPT_TOL}", full(w.opt_residual)));
        }
    }
    let body = json!({
        "seed": cfg.run.seed,
        "horizon": cfg.run.horizon,
        "final_x": trace.final_x,
        "gap_x": last.gap_x,
        "gap_z": last.gap_z,
        "worst_audit": trace.worst_audit,
        "warnings": built.assumptions.warnings,
        "violations": out.violations,
    });
    emit_json(ctx, &mut out, "run.json", to_json(&body))?;
    Ok(out)
}

/// Moment estimate at the start point and t = 1 on the diagnostics lane.
fn moments(cfg: &ExperimentConfig, e: &Experiment) -> Result<MomentEstimate, CliError> {
    let mut rng = CounterRng::new(cfg.run.seed).stream(0, 0, Lane::Diagnostics);
    Ok(estimate_moments(&e.oracle, &e.problem, &e.start, 1, cfg.bounds.moment_samples, &mut rng)?)
}

/// None when no ν1 is declared or the oracle's noise is implicit.
fn tail_check(cfg: &ExperimentConfig, e: &Experiment) -> Result<Option<SubGaussianCheck>, CliError> {
    if e.oracle.noise.nu1.is_none() || e.oracle.bias.is_implicit() {
        return Ok(None);
    }
    let mut rng = CounterRng::new(cfg.run.seed).stream(1, 0, Lane::Diagnostics);
    let check = subgaussian_tail_check(
        &e.oracle.noise,
        e.geometry.norms,
        e.problem.dim(),
        cfg.bounds.tail_samples,
        TAIL_DIRECTIONS,
        cfg.bounds.confidence,
        &mut rng,
    )?;
    Ok(Some(check))
}

/// ν2 from the config, else from the moment estimate when ν1 is declared.
fn nu2(cfg: &ExperimentConfig, e: &Experiment) -> Result<Option<f64>, CliError> {
    if cfg.bounds.nu2.is_some() {
        return Ok(cfg.bounds.nu2);
    }
    if e.oracle.noise.nu1.is_none() {
        return Ok(None);
    }
    Ok(Some(moments(cfg, e)?.nu2_hat))
}

#[derive(Serialize)]
struct ThresholdRow {
    eps: f64,
    p: f64,
    corollary2: Thresholds,
    corollary3: Option<Thresholds>,
}

fn thresholds(cfg: &ExperimentConfig, b: &Bounds) -> Result<Vec<ThresholdRow>, CliError> {
    let sub_gaussian = b.params().nu1.is_some() && b.params().nu2.is_some();
    let mut rows = Vec::new();
    for &eps in &cfg.bounds.eps {
        for &p in &cfg.bounds.p {
            rows.push(ThresholdRow {
                eps,
                p,
                corollary2: b.corollary2_times(eps, p)?,
                corollary3: if sub_gaussian { Some(b.corollary3_times(eps, p)?) } else { None },
            });
        }
    }
    Ok(rows)
}

pub fn montecarlo(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let built = cfg.build()?;
    let e = &built.experiment;
    let bounds = Bounds::new(cfg.bound_params(e, nu2(cfg, e)?)?)?;
    let sg = tail_check(cfg, e)?;
    let rows = thresholds(cfg, &bounds)?;
    let horizon = cfg.run.horizon;
    let checkpoints = match &cfg.run.checkpoints {
        Some(c) => c.clone(),
        None => {
            let extra: Vec<u64> = rows
                .iter()
                .flat_map(|r| [Some(r.corollary2), r.corollary3])
                .flatten()
                .filter_map(|t| t.t_star)
                .collect();
            default_checkpoints(horizon, &extra)
        }
    };
    let mut ts = run_trials(e, horizon, &checkpoints, cfg.run.seed, 0..cfg.run.n_trials)?;
    ts.config_digest = Some(ctx.digest.clone());
    let comparisons = compare_all(&ts, &bounds, &cfg.bounds.eps, cfg.bounds.confidence, sg.as_ref())?;
    let mut coverage = Vec::new();
    for r in &rows {
        if let Some(t) = r.corollary2.t_star.filter(|t| ts.checkpoints.contains(t)) {
            coverage.push(coverage_check(&ts, t, r.eps, r.p, cfg.bounds.confidence)?);
        }
    }
    let (lo, hi) = cfg.run.rate_range.map_or((1, horizon), |[a, b]| (a, b));
    let rate = fit_rate(&ts, lo, hi);

    let mut out = Outcome::default();
    for c in &comparisons {
        for (name, v) in [("theorem4_bound", c.theorem4_verdict), ("theorem5_bound", c.theorem5_verdict)] {
            if v.is_some_and(|v| v.status == VerdictStatus::Violation) {
                out.violations.push(format!(
                    "{name} bound violated at t = {}, eps = {}: ci_low = {}",
                    c.tail.t,
                    full(c.tail.eps),
                    full(c.tail.ci_low)
                ));
            }
        }
    }
    for c in coverage.iter().filter(|c| !c.passed) {
        out.violations.push(format!(
            "coverage below {} at t = {}: frequency {}",
            c.p,
            c.t,
            full(c.frequency)
        ));
    }

    if ctx.wants(Format::Jsonl) {
        let mut text = String::new();
        let head = with_header(
            ctx,
            json!({
                "base_seed": ts.base_seed,
                "horizon": ts.horizon,
                "n_trials": ts.n_trials(),
                "checkpoints": ts.checkpoints,
            }),
        );
        writeln!(text, "{head}").unwrap();
        for (i, gaps) in &ts.trials {
            for (t, g) in ts.checkpoints.iter().zip(gaps) {
                let rec = to_json(&json!({"trial": i, "t": t, "gap_z": g}));
                writeln!(text, "{rec}").unwrap();
            }
        }
        let p = ctx.path("trials.jsonl");
        write_atomic(&p, text.as_bytes())?;
        out.files.push(p);
    }
    let (rate_fit, rate_error) = match rate {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let body = json!({
        "base_seed": ts.base_seed,
        "horizon": horizon,
        "n_trials": ts.n_trials(),
        "checkpoints": ts.checkpoints,
        "warnings": built.assumptions.warnings,
        "k": bounds.compute_k(),
        "nu2": bounds.params().nu2,
        "sub_gaussian": sg,
        "thresholds": rows,
        "comparisons": comparisons,
        "coverage": coverage,
        "rate_fit": rate_fit,
        "rate_fit_error": rate_error,
        "violations": out.violations,
    });
    emit_json(ctx, &mut out, "summary.json", to_json(&body))?;
    Ok(out)
}

pub fn bounds(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let built = cfg.build()?;
    let e = &built.experiment;
    let eps = *cfg
        .bounds
        .eps
        .first()
        .ok_or_else(|| CliError::Config("bounds.eps must list at least one value".into()))?;
    let b = Bounds::new(cfg.bound_params(e, nu2(cfg, e)?)?)?;
    let k = b.compute_k();
    let rows = thresholds(cfg, &b)?;
    let sub_gaussian = b.params().nu1.is_some() && b.params().nu2.is_some();
    let grid = cfg
        .run
        .checkpoints
        .clone()
        .unwrap_or_else(|| default_checkpoints(cfg.run.horizon, &[]));
    let mut curve = Vec::new();
    for &t in &grid {
        let t4 = b.theorem4_bound(t, eps)?.raw;
        let t5 = if sub_gaussian { Some(b.theorem5_bound(t, eps)?.raw) } else { None };
        curve.push(json!([t, t4, t5]));
    }
    let first = rows.first().map(|r| r.corollary2);
    let body = to_json(&json!({
        "K": k.k,
        "err": k.err,
        "divergent": k.divergent,
        "eps": eps,
        "t0": first.and_then(|t| t.t0),
        "t1": first.and_then(|t| t.t1),
        "t2": first.and_then(|t| t.t2),
        "t_star": first.and_then(|t| t.t_star),
        "thresholds": rows,
        "bound_curve": curve,
        "params": b.params(),
        "warnings": built.assumptions.warnings,
    }));
    let mut out = Outcome {
        stdout: Some(serde_json::to_string_pretty(&with_header(ctx, body.clone())).unwrap()),
        ..Outcome::default()
    };
    emit_json(ctx, &mut out, "bounds.json", body)?;
    Ok(out)
}

pub fn validate(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let built = cfg.build()?;
    let e = &built.experiment;
    let est = moments(cfg, e)?;
    let checks = check_moments(&e.oracle, &est, 1);
    let sg = tail_check(cfg, e)?;
    let mut out = Outcome::default();
    if !checks.zero_mean_ok {
        out.violations.push(format!("noise mean is not zero: max |z| = {}", full(checks.max_mean_z)));
    }
    if !checks.second_moment_ok {
        out.violations.push(format!("E|g|^2 = {} exceeds the declared nu^2", full(est.m2)));
    }
    if !checks.bias_envelope_ok {
        out.violations.push("zeroth-order bias exceeds its declared envelope".into());
    }
    if sg.as_ref().is_some_and(|s| !s.passed) {
        out.violations.push("noise fails the sub-Gaussian tail diagnostic".into());
    }
    let body = to_json(&json!({
        "moments": est,
        "checks": checks,
        "sub_gaussian": sg,
        "assumptions": built.assumptions,
        "violations": out.violations,
    }));
    out.stdout = Some(serde_json::to_string_pretty(&with_header(ctx, body.clone())).unwrap());
    emit_json(ctx, &mut out, "validate.json", body)?;
    Ok(out)
}

pub fn output_dir(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir.map_or_else(|| PathBuf::from(&cfg.output.directory), Path::to_path_buf)
}
