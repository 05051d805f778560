//! Experiment orchestration and artifact emission.

use std::fs;
use std::path::{Path, PathBuf};

use chaosgraph::geobounds::{geometric_bounds, BoundReport, GeoConfig};
use chaosgraph::limits::stats::{bootstrap_stderr, fourth_moment_gap};
use chaosgraph::limits::{
    absolute_moment, diagram_cumulant, empirical_cumulants, empirical_w1_gaussian, enumerate_diagrams,
    joint_chaos_test, poisson_limit_test, run_ensemble, EnsembleOptions, JointChaosReport, ReplicateEnsemble,
};
use chaosgraph::contraction::{cell_integral, sample_cell_counts};
use chaosgraph::regimes::{classify, family_profiles, sandwich_check, RegimeVerdict};
use chaosgraph::rules::OccupationProfile;
use chaosgraph::sampler::{derive_seed, replicate_seeds, stream, Window};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};

#[derive(Debug)]
pub enum RunError {
    Io(String),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Io(s) | RunError::Runtime(s) => f.write_str(s),
        }
    }
}

impl From<chaosgraph::Error> for RunError {
    fn from(e: chaosgraph::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

/// What a run produced.
#[derive(Debug, Default, Serialize)]
pub struct RunOutcome {
    pub artifacts: Vec<String>,
    /// Per-intensity failures that did not stop the run.
    pub failures: Vec<String>,
    /// Failed acceptance checks (only meaningful with `--check`).
    pub check_failures: Vec<String>,
}

struct Writer {
    dir: PathBuf,
    written: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
        self.raw(name, &(text + "\n"))
    }

    fn raw(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| RunError::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
        self.raw(name, &String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn lambda_tag(l: f64) -> String {
    format!("lambda_{l}")
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Seed for work at intensity `lambda`, independent of its position in the list.
fn lambda_seed(seed: u64, lambda: f64) -> u64 {
    derive_seed(seed, lambda.to_bits())
}

#[derive(Debug, Clone, Serialize)]
struct EnsembleSummary {
    lambda: f64,
    n_replicates: usize,
    master_seed: u64,
    standardization: chaosgraph::limits::Standardization,
    mean_analytic: f64,
    v1_sq: f64,
    v2_sq: f64,
    var_analytic: f64,
    mean_empirical: f64,
    mean_stderr: f64,
    var_empirical: f64,
    var_stderr: f64,
    exact_kernels: bool,
    max_relative_residual: Option<f64>,
    w1: f64,
    fourth_gap: f64,
    fourth_gap_stderr: f64,
    abs_moment_4_5: f64,
    joint: Option<JointChaosReport>,
}

fn moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m, (v / n).sqrt(), v, ((m4 - v * v * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt())
}

fn summarize(e: &ReplicateEnsemble, seed: u64, w1_max: f64) -> Result<EnsembleSummary, RunError> {
    let raw = e.raw.as_ref().expect("ensembles keep raw values");
    let (mean, mean_se, var, var_se) = moments(&raw.f);
    let gap = fourth_moment_gap(&e.values, derive_seed(seed, 1))?;
    Ok(EnsembleSummary {
        lambda: e.lambda,
        n_replicates: e.n_replicates,
        master_seed: e.master_seed,
        standardization: e.standardization,
        mean_analytic: e.mean_analytic,
        v1_sq: e.v1_sq,
        v2_sq: e.v2_sq,
        var_analytic: e.var_analytic(),
        mean_empirical: mean,
        mean_stderr: mean_se,
        var_empirical: var,
        var_stderr: var_se,
        exact_kernels: e.exact_kernels,
        max_relative_residual: e.max_relative_residual(),
        w1: empirical_w1_gaussian(&e.values)?,
        fourth_gap: gap.value,
        fourth_gap_stderr: gap.stderr,
        abs_moment_4_5: absolute_moment(&e.values, 4.5),
        joint: joint_chaos_test(e, w1_max).ok(),
    })
}

#[derive(Default)]
struct Row {
    lambda: f64,
    summary: Option<EnsembleSummary>,
    bound: Option<BoundReport>,
}

fn ensembles(cfg: &ExperimentConfig, out: &mut Writer, res: &mut RunOutcome) -> Result<Vec<Row>, RunError> {
    let family = cfg.family();
    let g = cfg.weight();
    let window = Window::unit(cfg.dimension);
    let options = EnsembleOptions {
        standardization: cfg.standardization,
        quadrature_points: cfg.samples.quadrature,
        variance_samples: cfg.samples.variance,
    };
    let mut rows = Vec::new();
    for &lambda in &cfg.lambdas {
        let seed = lambda_seed(cfg.seed, lambda);
        let e = match run_ensemble(&family, &g, window, lambda, cfg.replicates, seed, &options) {
            Ok(e) => e,
            Err(err) => {
                res.failures.push(format!("simulate at lambda = {lambda}: {err}"));
                rows.push(Row { lambda, ..Row::default() });
                continue;
            }
        };
        let raw = e.raw.as_ref().expect("ensembles keep raw values");
        let table: Vec<Vec<String>> = (0..e.n_replicates)
            .map(|k| vec![k.to_string(), num(raw.f[k]), num(raw.i1[k]), num(raw.i2[k]), raw.n_points[k].to_string()])
            .collect();
        let tag = lambda_tag(lambda);
        out.csv(&format!("ensemble_{tag}.csv"), &["replicate_id", "F", "I1", "I2", "n_points"], &table)?;
        let s = summarize(&e, seed, cfg.check.w1_max)?;
        out.json(&format!("ensemble_{tag}.json"), &s)?;
        let k = cfg.check.stderr_mult;
        let z = (s.var_empirical - s.var_analytic) / s.var_stderr;
        if z.abs() > k {
            res.check_failures.push(format!("lambda = {lambda}: variance z-score {z:.2} exceeds {k}"));
        }
        let zm = (s.mean_empirical - s.mean_analytic) / s.mean_stderr;
        if zm.abs() > k {
            res.check_failures.push(format!("lambda = {lambda}: mean z-score {zm:.2} exceeds {k}"));
        }
        let tol = if s.exact_kernels { 1e-8 } else { 1e-3 };
        if s.max_relative_residual.is_some_and(|r| r > tol) {
            res.check_failures.push(format!("lambda = {lambda}: decomposition residual above {tol}"));
        }
        rows.push(Row { lambda, summary: Some(s), bound: None });
    }
    Ok(rows)
}

fn bounds(cfg: &ExperimentConfig, rows: &mut Vec<Row>, out: &mut Writer, res: &mut RunOutcome) -> Result<(), RunError> {
    let family = cfg.family();
    let g = cfg.weight();
    let window = Window::unit(cfg.dimension);
    for &lambda in &cfg.lambdas {
        let seed = lambda_seed(cfg.seed, lambda);
        let config = GeoConfig { samples: cfg.samples.geometric, seed: derive_seed(seed, 2), bootstrap: cfg.samples.bootstrap };
        let est = match geometric_bounds(&family.at(lambda), &g, window, lambda, &config) {
            Ok(e) => e,
            Err(err) => {
                res.failures.push(format!("bounds at lambda = {lambda}: {err}"));
                continue;
            }
        };
        let tag = lambda_tag(lambda);
        out.json(&format!("bounds_{tag}.json"), &est.report)?;
        if g.is_unit() && family.at(lambda).is_stationary() {
            let prof = chaosgraph::rules::occupation(&family, lambda, cfg.samples.occupation, derive_seed(seed, 3))?;
            let sw = sandwich_check(cfg.dimension, &g, &est, &prof, cfg.check.stderr_mult)?;
            for e in sw.entries.iter().filter(|e| !e.holds) {
                res.check_failures.push(format!("lambda = {lambda}: sandwich {} fails", e.name));
            }
            out.json(&format!("sandwich_{tag}.json"), &sw)?;
        }
        match rows.iter_mut().find(|r| r.lambda == lambda) {
            Some(r) => r.bound = Some(est.report),
            None => rows.push(Row { lambda, summary: None, bound: Some(est.report) }),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RegimeArtifact<'a> {
    verdict: &'a RegimeVerdict,
    profiles: &'a [OccupationProfile],
}

fn regimes(cfg: &ExperimentConfig, out: &mut Writer, res: &mut RunOutcome) -> Result<Option<RegimeVerdict>, RunError> {
    let family = cfg.family();
    let profiles = family_profiles(&family, &cfg.lambdas, cfg.samples.occupation, derive_seed(cfg.seed, 4), None)?;
    let verdict = classify(&profiles.iter().map(|p| (p.lambda, p.psi)).collect::<Vec<_>>())?;
    out.json("regime_verdict.json", &RegimeArtifact { verdict: &verdict, profiles: &profiles })?;
    if let Some(want) = cfg.check.expected_regime {
        if verdict.regime != want {
            res.check_failures.push(format!("regime {:?}, expected {want:?}", verdict.regime));
        }
    }
    Ok(Some(verdict))
}

fn summary(rows: &[Row], verdict: Option<&RegimeVerdict>, out: &mut Writer) -> Result<(), RunError> {
    let regime = verdict.map(|v| format!("{:?}", v.regime)).unwrap_or_default();
    let mut table = Vec::new();
    let (mut var_a, mut var_e, mut w1) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        let s = r.summary.as_ref();
        table.push(vec![
            num(r.lambda),
            opt(s.map(|s| s.var_analytic).or(r.bound.as_ref().map(|b| b.v1_sq + b.v2_sq))),
            opt(s.map(|s| s.var_empirical)),
            opt(s.map(|s| s.w1)),
            opt(s.map(|s| s.fourth_gap)),
            opt(r.bound.as_ref().and_then(|b| b.bound_general)),
            regime.clone(),
        ]);
        if let Some(s) = s {
            var_a.push(vec![num(r.lambda), num(s.var_analytic)]);
            var_e.push(vec![num(r.lambda), num(s.var_empirical)]);
            w1.push(vec![num(r.lambda), num(s.w1)]);
        }
    }
    out.csv(
        "summary.csv",
        &["lambda", "var_analytic", "var_empirical", "w1", "fourth_gap", "bound_general", "regime"],
        &table,
    )?;
    if !var_e.is_empty() {
        out.csv("plot_variance_analytic_vs_lambda.csv", &["x", "y"], &var_a)?;
        out.csv("plot_variance_empirical_vs_lambda.csv", &["x", "y"], &var_e)?;
        out.csv("plot_w1_vs_lambda.csv", &["x", "y"], &w1)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagramArtifact {
    order: usize,
    lambda: f64,
    partitions: usize,
    two_block_partitions: usize,
    cumulant: f64,
    isometry_variance: f64,
    empirical: Option<f64>,
    empirical_stderr: Option<f64>,
    replicates: usize,
}

fn diagram(cfg: &ExperimentConfig, out: &mut Writer, res: &mut RunOutcome) -> Result<(), RunError> {
    let dg = cfg.diagram.as_ref().expect("validated");
    let f = cfg.diagram_kernel().ok_or_else(|| RunError::Runtime("invalid diagram kernel".into()))?;
    let parts = enumerate_diagrams(dg.order)?;
    let cumulant = diagram_cumulant(dg.order, &f, dg.lambda)?;
    let sym = f.symmetrize()?;
    let mu = f.grid().measures();
    let n = mu.len();
    let mut norm = 0.0;
    for a in 0..n {
        for b in 0..n {
            norm += dg.lambda * mu[a] * dg.lambda * mu[b] * sym.get(&[a, b]).powi(2);
        }
    }
    let (mut empirical, mut se) = (None, None);
    if dg.simulate >= 2 {
        let scaled = chaosgraph::contraction::CellGrid::new(mu.iter().map(|m| m * dg.lambda).collect())?;
        let k = chaosgraph::contraction::GridKernel::from_values(std::sync::Arc::new(scaled), 2, sym.values().to_vec())?;
        let xs = replicate_seeds(derive_seed(cfg.seed, 5), dg.simulate)
            .into_iter()
            .map(|s| cell_integral(&k, &sample_cell_counts(k.grid(), &mut stream(s))?))
            .collect::<chaosgraph::Result<Vec<f64>>>()?;
        let m = dg.order;
        if m <= 4 && xs.len() > m {
            empirical = Some(empirical_cumulants(&xs, m)?[m - 1]);
            se = Some(bootstrap_stderr(&xs, cfg.samples.bootstrap.max(2), derive_seed(cfg.seed, 6), |s| {
                empirical_cumulants(s, m).map(|k| k[m - 1]).unwrap_or(f64::NAN)
            }));
        }
    }
    if dg.order == 2 && (cumulant - 2.0 * norm).abs() > 1e-10 * (2.0 * norm).abs().max(f64::MIN_POSITIVE) {
        res.check_failures.push(format!("second cumulant {cumulant} differs from the isometry value {}", 2.0 * norm));
    }
    if let (Some(e), Some(s)) = (empirical, se) {
        if (e - cumulant).abs() > cfg.check.stderr_mult * s {
            res.check_failures.push(format!("empirical cumulant {e} is more than {} stderr from {cumulant}", cfg.check.stderr_mult));
        }
    }
    out.json(
        "diagram.json",
        &DiagramArtifact {
            order: dg.order,
            lambda: dg.lambda,
            partitions: parts.len(),
            two_block_partitions: parts.iter().filter(|p| p.size() == 2).count(),
            cumulant,
            isometry_variance: 2.0 * norm,
            empirical,
            empirical_stderr: se,
            replicates: dg.simulate,
        },
    )
}

fn limit_test(cfg: &ExperimentConfig, out: &mut Writer, res: &mut RunOutcome) -> Result<(), RunError> {
    let r = poisson_limit_test(&cfg.family(), &cfg.lambdas, cfg.replicates, cfg.seed)?;
    out.json("poisson_limit.json", &r)?;
    if r.c > 0.0 && !r.cumulants_within(cfg.check.cumulant_rel_tol) {
        res.check_failures.push(format!("cumulants {:?} not within {} of {:?}", &r.cumulants[1..], cfg.check.cumulant_rel_tol, &r.targets[1..]));
    }
    if r.c > 0.0 && r.w1_gaussian <= cfg.check.poisson_w1_min {
        res.check_failures.push(format!("W1 {} does not exceed {}", r.w1_gaussian, cfg.check.poisson_w1_min));
    }
    Ok(())
}

/// Run a validated config, writing artifacts into `cfg.output`.
pub fn run(cfg: &ExperimentConfig, kind: Experiment) -> Result<RunOutcome, RunError> {
    let mut out = Writer::new(&cfg.output)?;
    let mut res = RunOutcome::default();
    match kind {
        Experiment::Simulate => {
            let rows = ensembles(cfg, &mut out, &mut res)?;
            summary(&rows, None, &mut out)?;
        }
        Experiment::Bounds => {
            let mut rows = Vec::new();
            bounds(cfg, &mut rows, &mut out, &mut res)?;
            summary(&rows, None, &mut out)?;
        }
        Experiment::Regimes => {
            regimes(cfg, &mut out, &mut res)?;
        }
        Experiment::LimitTest => limit_test(cfg, &mut out, &mut res)?,
        Experiment::Diagram => diagram(cfg, &mut out, &mut res)?,
        Experiment::Sweep => {
            let mut rows = ensembles(cfg, &mut out, &mut res)?;
            bounds(cfg, &mut rows, &mut out, &mut res)?;
            let verdict = match regimes(cfg, &mut out, &mut res) {
                Ok(v) => v,
                Err(e) => {
                    res.failures.push(format!("regimes: {e}"));
                    None
                }
            };
            if let (Some(v), Some(last)) = (&verdict, rows.iter().filter_map(|r| r.summary.as_ref()).last()) {
                if matches!(v.regime, chaosgraph::regimes::Regime::R2 | chaosgraph::regimes::Regime::R3)
                    && last.w1 >= cfg.check.w1_max
                {
                    res.check_failures.push(format!("W1 {} at the largest intensity is not below {}", last.w1, cfg.check.w1_max));
                }
            }
            summary(&rows, verdict.as_ref(), &mut out)?;
        }
    }
    if !res.failures.is_empty() {
        out.json("errors.json", &res.failures)?;
    }
    res.artifacts = out.written;
    Ok(res)
}
