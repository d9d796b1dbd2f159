//! The `run`, `compare` and `certify` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde_json::{json, Value};

use emflows::algorithms::{run, Representation, Scheme, Trace};
use emflows::bounds::{
    agd_bound, constant_b, constant_c, em_bound_basic, em_bound_sharp, first_order_bound, gap_to_distance,
    langevin_em_bound, BoundCurve, Metric,
};
use emflows::inequalities::{
    certified_lambda, check_descent, check_monotonicity, check_xlsi, check_xt2i, Certificate, InequalityReport,
    DEFAULT_TOLERANCE, MONOTONICITY_TOLERANCE,
};
use emflows::model::ModelSpec;

use crate::config::{ExperimentConfig, Format, StepSpec};
use crate::output::{self, Series};

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_svg: bool,
    pub no_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    /// At least one inequality check reported a violation.
    Violation,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Clean => 0,
            Status::Violation => 2,
        }
    }
}

pub struct RunOutcome {
    pub model: ModelSpec<f64>,
    pub trace: Trace<f64>,
    pub certificate: Option<Certificate<f64>>,
    pub reports: Vec<InequalityReport<f64>>,
    pub curves: Vec<(String, BoundCurve<f64>)>,
    pub out_dir: PathBuf,
    pub status: Status,
}

fn out_dir(cfg: &ExperimentConfig, opts: &Options) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| cfg.output.directory.clone())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn certified(model: &ModelSpec<f64>) -> Result<Certificate<f64>> {
    certified_lambda(model).map_err(|e| anyhow!("{e}"))
}

/// Runs the configured algorithm and evaluates the inequality checks.
pub fn execute(cfg: &ExperimentConfig, opts: &Options) -> Result<RunOutcome> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let alg = cfg.build_algorithm(&model, opts.seed)?;
    info!(
        "running {} on {} for {} iterations (h = {})",
        alg.scheme,
        model.name(),
        alg.iterations,
        alg.step_h
    );
    let trace = run(&model, &alg).map_err(|e| anyhow!("{e}"))?;

    let checks = &cfg.checks;
    let needs_certificate = matches!(&checks.xlsi, Some(c) if c.lambda.is_none())
        || matches!(&checks.xt2i, Some(c) if c.lambda.is_none())
        || cfg.bounds.em_basic.is_some()
        || cfg.bounds.em_sharp.is_some()
        || cfg.bounds.first_order.is_some()
        || cfg.bounds.langevin_em.is_some()
        || cfg.bounds.agd.is_some();
    let certificate = match certified_lambda(&model) {
        Ok(c) => Some(c),
        Err(e) if needs_certificate => bail!("{e}"),
        Err(e) => {
            warn!("{e}");
            None
        }
    };
    let lambda_hat = certificate.as_ref().map(|c| c.lambda);

    let tol = checks.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let mut reports = Vec::new();
    if let Some(c) = &checks.xlsi {
        let lambda = c.lambda.or(lambda_hat).expect("certificate checked above");
        reports.push(check_xlsi(&model, &trace, lambda, tol).map_err(|e| anyhow!("checks.xlsi: {e}"))?);
    }
    if let Some(c) = &checks.xt2i {
        let lambda = c.lambda.or(lambda_hat).expect("certificate checked above");
        reports.push(check_xt2i(&model, &trace, lambda, tol).map_err(|e| anyhow!("checks.xt2i: {e}"))?);
    }
    if checks.descent.is_some() {
        reports.push(check_descent(&model, &trace, tol).map_err(|e| anyhow!("checks.descent: {e}"))?);
    }
    if checks.monotonicity.is_some() {
        let tol = checks.tolerance.unwrap_or(MONOTONICITY_TOLERANCE);
        reports.push(check_monotonicity(&trace, tol).map_err(|e| anyhow!("checks.monotonicity: {e}"))?);
    }

    let curves = match lambda_hat {
        Some(lambda) => bound_curves(cfg, &model, &trace, lambda, alg.step_h)?,
        None => Vec::new(),
    };
    let status = if reports.iter().all(|r| r.passed()) {
        Status::Clean
    } else {
        Status::Violation
    };
    Ok(RunOutcome {
        model,
        trace,
        certificate,
        reports,
        curves,
        out_dir: out_dir(cfg, opts),
        status,
    })
}

fn bound_curves(
    cfg: &ExperimentConfig,
    model: &ModelSpec<f64>,
    trace: &Trace<f64>,
    lambda: f64,
    step_h: f64,
) -> Result<Vec<(String, BoundCurve<f64>)>> {
    let b = &cfg.bounds;
    let k = trace.records.len() - 1;
    let gap0 = trace.records[0].gap;
    let (lt, lx, l, dx) = (model.lipschitz_theta(), model.lipschitz_x(), model.lipschitz(), model.d_x());
    let h_for = |o: &Option<StepSpec>| o.map_or(step_h, |s| s.resolve(model));
    let c = || constant_c(model, lambda, gap0).map_err(|e| anyhow!("constant C: {e}"));
    let mut curves = Vec::new();
    let push_gap = |name: &str, curve: BoundCurve<f64>, out: &mut Vec<(String, BoundCurve<f64>)>| -> Result<()> {
        let dist = gap_to_distance(&curve).map_err(|e| anyhow!("{e}"))?;
        out.push((name.to_string(), curve));
        out.push((name.to_string(), dist));
        Ok(())
    };
    if b.em_basic.is_some() {
        let curve = em_bound_basic(lambda, lt, gap0, k).map_err(|e| anyhow!("bounds.em_basic: {e}"))?;
        push_gap("em_basic", curve, &mut curves)?;
    }
    if b.em_sharp.is_some() {
        let curve = em_bound_sharp(lambda, lt, lx, dx, c()?, gap0, k).map_err(|e| anyhow!("bounds.em_sharp: {e}"))?;
        push_gap("em_sharp", curve, &mut curves)?;
    }
    if let Some(o) = &b.first_order {
        let curve =
            first_order_bound(lambda, lt, h_for(&o.h), gap0, k).map_err(|e| anyhow!("bounds.first_order: {e}"))?;
        curves.push(("first_order".into(), curve));
    }
    if let Some(o) = &b.langevin_em {
        let curve = langevin_em_bound(lambda, lt, lx, dx, c()?, h_for(&o.h), gap0, k)
            .map_err(|e| anyhow!("bounds.langevin_em: {e}"))?;
        curves.push(("langevin_em".into(), curve));
    }
    if let Some(o) = &b.agd {
        let curve = agd_bound(lambda, l, dx, h_for(&o.h), gap0, k).map_err(|e| anyhow!("bounds.agd: {e}"))?;
        curves.push(("agd".into(), curve));
    }
    Ok(curves)
}

fn report_json(r: &InequalityReport<f64>) -> Value {
    json!({
        "name": r.name.as_str(),
        "passed": r.passed(),
        "summary": r.summary(),
        "lambda_used": r.lambda_used,
        "tolerance": r.tolerance,
        "min_margin": r.min_margin,
        "violated_at": r.violated_at,
        "margins": r.margins,
    })
}

fn curve_json(name: &str, c: &BoundCurve<f64>) -> Value {
    let k = &c.constants;
    json!({
        "name": name,
        "scheme": c.scheme.as_str(),
        "metric": c.metric.as_str(),
        "asymptote": c.asymptote,
        "provenance": c.provenance,
        "constants": {
            "lambda": k.lambda,
            "L_theta": k.lipschitz_theta,
            "L_x": k.lipschitz_x,
            "L": k.lipschitz,
            "d_x": k.d_x,
            "C": k.c,
            "B": k.b,
            "h": k.h,
            "gap0": k.gap0,
        },
    })
}

pub fn checks_json(outcome: &RunOutcome) -> Value {
    let cert = outcome.certificate.as_ref().map(|c| {
        json!({
            "lambda": c.lambda,
            "trail": c.steps.iter().map(|s| json!({"rule": s.rule, "detail": s.detail, "lambda": s.lambda})).collect::<Vec<_>>(),
        })
    });
    json!({
        "model": outcome.model.name(),
        "scheme": outcome.trace.config.scheme.as_str(),
        "representation": outcome.trace.config.representation.as_str(),
        "iterations": outcome.trace.config.iterations,
        "step_h": outcome.trace.config.step_h,
        "proxy": outcome.trace.is_proxy(),
        "certificate": cert,
        "checks": outcome.reports.iter().map(report_json).collect::<Vec<_>>(),
        "bounds": outcome.curves.iter().map(|(n, c)| curve_json(n, c)).collect::<Vec<_>>(),
    })
}

fn overlay(outcome: &RunOutcome) -> String {
    let gaps = outcome.trace.gaps();
    let lambda = outcome.certificate.as_ref().map(|c| c.lambda);
    let lambda_d2: Vec<f64> = match lambda {
        Some(l) => outcome
            .trace
            .records
            .iter()
            .map(|r| r.distance.map_or(f64::NAN, |d| l * d * d))
            .collect(),
        None => Vec::new(),
    };
    let mut series = vec![Series {
        label: "gap".into(),
        values: &gaps,
        dashed: false,
    }];
    let has_distance_curves = outcome.curves.iter().any(|(_, c)| c.metric == Metric::LambdaDSquared);
    if has_distance_curves && !lambda_d2.is_empty() {
        series.push(Series {
            label: "λ·d²".into(),
            values: &lambda_d2,
            dashed: false,
        });
    }
    for (name, c) in &outcome.curves {
        series.push(Series {
            label: output::curve_label(name, c),
            values: &c.values,
            dashed: true,
        });
    }
    let title = format!("{} on {}", outcome.trace.config.scheme, outcome.model.name());
    output::log_plot_svg(&title, "free-energy gap / λ·d²", &series)
}

/// Writes the configured files for a finished run.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &RunOutcome, opts: &Options) -> Result<()> {
    let dir = &outcome.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let formats = &cfg.output.formats;
    if formats.contains(&Format::Csv) {
        write(dir, "trace.csv", &output::trace_csv(&outcome.trace, !opts.no_timing))?;
        write(dir, "bounds.csv", &output::bounds_csv(&outcome.curves))?;
    }
    if formats.contains(&Format::Json) {
        let text = serde_json::to_string_pretty(&checks_json(outcome))? + "\n";
        write(dir, "checks.json", &text)?;
    }
    if formats.contains(&Format::Svg) && !opts.no_svg {
        write(dir, "overlay.svg", &overlay(outcome))?;
    }
    Ok(())
}

pub fn cmd_run(path: &Path, opts: &Options) -> Result<Status> {
    let cfg = ExperimentConfig::load(path)?;
    let outcome = execute(&cfg, opts)?;
    write_outputs(&cfg, &outcome, opts)?;
    let last = outcome.trace.last();
    println!(
        "{} on {}: {} iterations, final gap {:.6e}",
        outcome.trace.config.scheme,
        outcome.model.name(),
        last.k,
        last.gap
    );
    if let Some(c) = &outcome.certificate {
        println!("certified lambda {:.6} ({})", c.lambda, c.trail());
    }
    for r in &outcome.reports {
        println!("{}: {}", r.name, r.summary());
    }
    println!("outputs in {}", outcome.out_dir.display());
    Ok(outcome.status)
}

/// Per-step contraction factor from a least-squares fit of `ln gap_k` on `k`,
/// over the prefix where the gap stays above `1e−12·gap_0`.
pub fn contraction_factor(gaps: &[f64]) -> Option<f64> {
    let g0 = *gaps.first()?;
    if !(g0 > 0.0) {
        return None;
    }
    let floor = g0 * 1e-12;
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .enumerate()
        .take_while(|(_, g)| **g > floor)
        .map(|(k, g)| (k as f64, g.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

pub struct Comparison {
    pub labels: Vec<String>,
    pub gaps: Vec<Vec<f64>>,
    pub factors: Vec<Option<f64>>,
    pub out_dir: PathBuf,
}

pub fn compare(configs: &[ExperimentConfig], opts: &Options) -> Result<Comparison> {
    if configs.len() < 2 {
        bail!("compare needs at least two configs");
    }
    let model_block = &configs[0].model;
    for (i, c) in configs.iter().enumerate().skip(1) {
        if &c.model != model_block {
            bail!("invalid parameter: config {i} has a different model block from config 0");
        }
    }
    let mut labels: Vec<String> = Vec::new();
    let mut gaps = Vec::new();
    let mut factors = Vec::new();
    for cfg in configs {
        let scheme: Scheme = cfg.scheme()?;
        let model = cfg.build_model()?;
        let alg = cfg.build_algorithm(&model, opts.seed)?;
        let trace = run(&model, &alg).map_err(|e| anyhow!("{e}"))?;
        let mut label = scheme.as_str().to_string();
        if alg.representation == Representation::Particles {
            label.push_str("_particles");
        }
        let base = label.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{base}_{n}");
            n += 1;
        }
        let g = trace.gaps();
        factors.push(contraction_factor(&g));
        gaps.push(g);
        labels.push(label);
    }
    Ok(Comparison {
        labels,
        gaps,
        factors,
        out_dir: out_dir(&configs[0], opts),
    })
}

pub fn cmd_compare(paths: &[PathBuf], opts: &Options) -> Result<Status> {
    let configs = paths
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .collect::<Result<Vec<_>>>()?;
    let cmp = compare(&configs, opts)?;
    let dir = &cmp.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let series: Vec<(String, Vec<f64>)> = cmp.labels.iter().cloned().zip(cmp.gaps.iter().cloned()).collect();
    write(dir, "compare.csv", &output::compare_csv(&series))?;
    if !opts.no_svg {
        let plotted: Vec<Series<'_>> = cmp
            .labels
            .iter()
            .zip(&cmp.gaps)
            .map(|(l, g)| Series {
                label: l.clone(),
                values: g,
                dashed: false,
            })
            .collect();
        write(dir, "compare.svg", &output::log_plot_svg("free-energy gap", "gap", &plotted))?;
    }
    for (label, f) in cmp.labels.iter().zip(&cmp.factors) {
        match f {
            Some(f) => println!("{label}: contraction factor {f:.6}"),
            None => println!("{label}: contraction factor unavailable (gap already at floor)"),
        }
    }
    Ok(Status::Clean)
}

pub struct CertifyReport {
    pub certificate: Certificate<f64>,
    pub lipschitz_theta: f64,
    pub lipschitz_x: f64,
    pub lipschitz: f64,
    pub gap0: f64,
    /// `(C, B)`, or the reason they are unavailable.
    pub constants: std::result::Result<(f64, f64), String>,
}

pub fn certify(cfg: &ExperimentConfig) -> Result<CertifyReport> {
    let model = cfg.build_model()?;
    let certificate = certified(&model)?;
    let mut start = cfg.build_algorithm(&model, None)?;
    start.iterations = 0;
    let gap0 = run(&model, &start).map_err(|e| anyhow!("{e}"))?.records[0].gap;
    let constants = constant_c(&model, certificate.lambda, gap0)
        .map(|c| (c, constant_b(model.lipschitz_x(), model.d_x(), c)))
        .map_err(|e| e.to_string());
    Ok(CertifyReport {
        certificate,
        lipschitz_theta: model.lipschitz_theta(),
        lipschitz_x: model.lipschitz_x(),
        lipschitz: model.lipschitz(),
        gap0,
        constants,
    })
}

pub fn cmd_certify(path: &Path) -> Result<Status> {
    let cfg = ExperimentConfig::load(path)?;
    let r = certify(&cfg)?;
    println!("lambda = {:.6}", r.certificate.lambda);
    for s in &r.certificate.steps {
        println!("  {}: {} -> {:.6}", s.rule, s.detail, s.lambda);
    }
    println!("L_theta = {:.6}", r.lipschitz_theta);
    println!("L_x = {:.6}", r.lipschitz_x);
    println!("L = {:.6}", r.lipschitz);
    println!("gap0 = {:.6e}", r.gap0);
    match r.constants {
        Ok((c, b)) => {
            println!("C = {c:.6}");
            println!("B = {b:.6}");
        }
        Err(e) => println!("C, B unavailable: {e}"),
    }
    Ok(Status::Clean)
}
