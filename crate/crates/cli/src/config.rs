//! Experiment configuration: TOML schema, validation and built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};

use chaosgraph::contraction::{CellGrid, GridKernel};
use chaosgraph::limits::StandardizationMode;
use chaosgraph::regimes::Regime;
use chaosgraph::rules::{ConnectionRule, FlowerKind, RuleFamily};
use chaosgraph::ustat::EdgeWeight;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Bounds,
    Regimes,
    LimitTest,
    Diagram,
    Sweep,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Simulate => "simulate",
            Experiment::Bounds => "bounds",
            Experiment::Regimes => "regimes",
            Experiment::LimitTest => "limit-test",
            Experiment::Diagram => "diagram",
            Experiment::Sweep => "sweep",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Ball,
    Flower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub kind: RuleKind,
    /// Ball radius.
    pub radius: Option<f64>,
    /// Flower profile.
    pub profile: Option<FlowerKind>,
    /// Flower scale.
    pub scale: Option<f64>,
    /// When present the rule is rescaled with `λ`; absent means a fixed rule.
    pub alpha_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    #[default]
    Unit,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default)]
    pub kind: WeightKind,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub geometric: usize,
    pub occupation: usize,
    pub quadrature: usize,
    pub variance: usize,
    pub bootstrap: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { geometric: 200_000, occupation: 200_000, quadrature: 10_000, variance: 200_000, bootstrap: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramSpec {
    pub order: usize,
    /// Lebesgue measure of each cell.
    pub measures: Vec<f64>,
    /// Row-major cell values of the kernel.
    pub kernel: Vec<f64>,
    #[serde(default = "one")]
    pub lambda: f64,
    /// Replicates for the Monte Carlo comparison; 0 skips it.
    #[serde(default)]
    pub simulate: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    pub expected_regime: Option<Regime>,
    pub w1_max: f64,
    pub stderr_mult: f64,
    pub cumulant_rel_tol: f64,
    pub poisson_w1_min: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec { expected_regime: None, w1_max: 0.1, stderr_mult: 3.0, cumulant_rel_tol: 0.15, poisson_w1_min: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub dimension: usize,
    pub rule: RuleSpec,
    #[serde(default)]
    pub weight: WeightSpec,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub standardization: StandardizationMode,
    #[serde(default)]
    pub samples: SampleSpec,
    pub diagram: Option<DiagramSpec>,
    #[serde(default = "default_out")]
    pub output: PathBuf,
    #[serde(default)]
    pub check: CheckSpec,
}

fn default_replicates() -> usize {
    1000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One validation problem, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn diag(out: &mut Vec<Diagnostic>, path: impl Into<String>, message: impl Into<String>) {
    out.push(Diagnostic { path: path.into(), message: message.into() });
}

fn positive(x: Option<f64>) -> bool {
    x.is_some_and(|v| v.is_finite() && v > 0.0)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Diagnostic> {
        toml::from_str(text).map_err(|e| Diagnostic {
            path: "<config>".into(),
            message: e.to_string().trim().replace('\n', " "),
        })
    }

    pub fn load(path: &Path) -> Result<Self, Diagnostic> {
        let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
            path: "--config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml(&text)
    }

    /// Every invariant violation for running `kind`; empty when the config is usable.
    pub fn validate(&self, kind: Experiment) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let d = self.dimension;
        if !(1..=3).contains(&d) {
            diag(&mut out, "dimension", format!("must be 1, 2 or 3, got {d}"));
        }
        match self.rule.kind {
            RuleKind::Ball => {
                if !positive(self.rule.radius) {
                    diag(&mut out, "rule.radius", "a ball rule needs a positive radius");
                }
                if self.rule.profile.is_some() {
                    diag(&mut out, "rule.profile", "only flower rules take a profile");
                }
            }
            RuleKind::Flower => {
                if d != 2 {
                    diag(&mut out, "dimension", format!("flower rules live in the plane; dimension must be 2, got {d}"));
                }
                if self.rule.profile.is_none() {
                    diag(&mut out, "rule.profile", "a flower rule needs a profile (inverse or inverse-square)");
                }
                if self.rule.scale.is_some() && !positive(self.rule.scale) {
                    diag(&mut out, "rule.scale", "must be positive");
                }
                if self.rule.radius.is_some() {
                    diag(&mut out, "rule.radius", "only ball rules take a radius");
                }
            }
        }
        if let Some(a) = self.rule.alpha_exponent {
            if !a.is_finite() {
                diag(&mut out, "rule.alpha_exponent", "must be finite");
            }
        }
        match self.weight.kind {
            WeightKind::Unit => {
                if self.weight.value.is_some() {
                    diag(&mut out, "weight.value", "a unit weight takes no value");
                }
            }
            WeightKind::Constant => {
                if !self.weight.value.is_some_and(f64::is_finite) {
                    diag(&mut out, "weight.value", "a constant weight needs a finite value");
                }
            }
        }

        if kind != Experiment::Diagram {
            if self.lambdas.is_empty() {
                diag(&mut out, "lambdas", "must not be empty");
            }
            for (i, &l) in self.lambdas.iter().enumerate() {
                if !(l.is_finite() && l > 0.0) {
                    diag(&mut out, format!("lambdas[{i}]"), format!("must be positive and finite, got {l}"));
                }
            }
            if self.lambdas.windows(2).any(|w| !(w[0] < w[1])) {
                diag(&mut out, "lambdas", "must be strictly increasing");
            }
        }
        if self.replicates < 1 {
            diag(&mut out, "replicates", "must be at least 1");
        }
        if matches!(kind, Experiment::Simulate | Experiment::Sweep | Experiment::LimitTest) && self.replicates < 100 {
            diag(&mut out, "replicates", format!("{kind} needs at least 100 replicates, got {}", self.replicates));
        }
        if matches!(kind, Experiment::Regimes | Experiment::LimitTest | Experiment::Sweep) {
            let ok = self.lambdas.len() >= 4
                && self.lambdas.iter().all(|&l| l > 0.0)
                && self.lambdas.last().zip(self.lambdas.first()).is_some_and(|(hi, lo)| hi / lo >= 10.0);
            if !ok && !self.lambdas.is_empty() {
                diag(&mut out, "lambdas", format!("{kind} needs at least 4 intensities spanning a decade"));
            }
        }
        if kind == Experiment::LimitTest && self.weight.kind != WeightKind::Unit {
            diag(&mut out, "weight.kind", "the Poisson limit test assumes a unit weight");
        }

        let s = &self.samples;
        if s.geometric < 10_000 {
            diag(&mut out, "samples.geometric", "must be at least 10000");
        }
        if s.occupation < 1000 {
            diag(&mut out, "samples.occupation", "must be at least 1000");
        }
        if s.quadrature < 1 {
            diag(&mut out, "samples.quadrature", "must be at least 1");
        }
        if s.variance < 10_000 {
            diag(&mut out, "samples.variance", "must be at least 10000");
        }

        if kind == Experiment::Diagram {
            match &self.diagram {
                None => diag(&mut out, "diagram", "the diagram experiment needs a [diagram] table"),
                Some(dg) => {
                    if !(2..=4).contains(&dg.order) {
                        diag(&mut out, "diagram.order", format!("must be 2, 3 or 4, got {}", dg.order));
                    }
                    if dg.measures.is_empty() {
                        diag(&mut out, "diagram.measures", "must not be empty");
                    }
                    for (i, &m) in dg.measures.iter().enumerate() {
                        if !(m.is_finite() && m > 0.0) {
                            diag(&mut out, format!("diagram.measures[{i}]"), "must be positive and finite");
                        }
                    }
                    let n = dg.measures.len();
                    if dg.kernel.len() != n * n {
                        diag(&mut out, "diagram.kernel", format!("needs {} values for {n} cells, got {}", n * n, dg.kernel.len()));
                    }
                    if dg.kernel.iter().any(|v| !v.is_finite()) {
                        diag(&mut out, "diagram.kernel", "values must be finite");
                    }
                    if !(dg.lambda.is_finite() && dg.lambda > 0.0) {
                        diag(&mut out, "diagram.lambda", "must be positive and finite");
                    }
                    if dg.simulate == 1 {
                        diag(&mut out, "diagram.simulate", "use 0 to skip or at least 2 replicates");
                    }
                }
            }
        }
        if self.output.is_file() {
            diag(&mut out, "output", format!("{} is a file, not a directory", self.output.display()));
        }
        out
    }

    /// The rule family; call only on a validated config.
    pub fn family(&self) -> RuleFamily {
        let base = match self.rule.kind {
            RuleKind::Ball => ConnectionRule::ball(self.dimension, self.rule.radius.unwrap_or(1.0)),
            RuleKind::Flower => {
                ConnectionRule::flower(self.rule.profile.unwrap_or(FlowerKind::Inverse), self.rule.scale.unwrap_or(1.0))
            }
        }
        .expect("validated rule");
        match self.rule.alpha_exponent {
            Some(e) => RuleFamily::stationary(base, e),
            None => RuleFamily::fixed(base),
        }
    }

    pub fn weight(&self) -> EdgeWeight {
        match self.weight.kind {
            WeightKind::Unit => EdgeWeight::unit(),
            WeightKind::Constant => EdgeWeight::constant(self.weight.value.unwrap_or(1.0)),
        }
    }

    pub fn diagram_kernel(&self) -> Option<GridKernel<f64>> {
        let dg = self.diagram.as_ref()?;
        let grid = std::sync::Arc::new(CellGrid::new(dg.measures.clone()).ok()?);
        GridKernel::from_values(grid, 2, dg.kernel.clone()).ok()
    }
}

pub const PRESETS: [&str; 9] =
    ["flower-a", "flower-b", "flower-c", "flower-d", "flower-e", "disk-r1", "disk-r2", "disk-r3", "disk-r4"];

const REGIME_GRID: [f64; 5] = [1e2, 316.227_766_016_837_94, 1e3, 3_162.277_660_168_379_4, 1e4];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let flower = |profile: FlowerKind, exponent: f64, expected: Option<Regime>| ExperimentConfig {
        experiment: Some(Experiment::Regimes),
        dimension: 2,
        rule: RuleSpec {
            kind: RuleKind::Flower,
            radius: None,
            profile: Some(profile),
            scale: Some(1.0),
            alpha_exponent: Some(exponent),
        },
        weight: WeightSpec::default(),
        lambdas: REGIME_GRID.to_vec(),
        replicates: 1000,
        seed: 1,
        standardization: StandardizationMode::Analytic,
        samples: SampleSpec::default(),
        diagram: None,
        output: default_out(),
        check: CheckSpec { expected_regime: expected, ..CheckSpec::default() },
    };
    let disk = |radius: f64, exponent: f64, lambdas: &[f64], replicates: usize, exp: Experiment, expected: Regime| {
        ExperimentConfig {
            experiment: Some(exp),
            dimension: 1,
            rule: RuleSpec {
                kind: RuleKind::Ball,
                radius: Some(radius),
                profile: None,
                scale: None,
                alpha_exponent: Some(exponent),
            },
            lambdas: lambdas.to_vec(),
            replicates,
            check: CheckSpec { expected_regime: Some(expected), ..CheckSpec::default() },
            ..flower(FlowerKind::Inverse, 0.0, None)
        }
    };
    Some(match name {
        "flower-a" => flower(FlowerKind::Inverse, 0.0, Some(Regime::R2)),
        "flower-b" => flower(FlowerKind::InverseSquare, 0.0, Some(Regime::R3)),
        "flower-c" => flower(FlowerKind::InverseSquare, -0.25, Some(Regime::R1)),
        "flower-d" => flower(FlowerKind::Inverse, -0.5, None),
        "flower-e" => flower(FlowerKind::InverseSquare, -0.5, Some(Regime::R4)),
        "disk-r1" => disk(1.0, -0.5, &[50.0, 100.0, 200.0, 400.0, 800.0], 2000, Experiment::Sweep, Regime::R1),
        "disk-r2" => disk(1.0, 0.5, &[50.0, 100.0, 200.0, 400.0, 800.0], 2000, Experiment::Sweep, Regime::R2),
        "disk-r3" => disk(4.0, 0.0, &[50.0, 100.0, 200.0, 400.0, 800.0], 5000, Experiment::Sweep, Regime::R3),
        "disk-r4" => disk(0.5, -1.0, &[100.0, 200.0, 500.0, 1000.0], 100_000, Experiment::LimitTest, Regime::R4),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
dimension = 1
lambdas = [50.0, 200.0]
replicates = 200
seed = 3

[rule]
kind = "ball"
radius = 0.1
"#;

    #[test]
    fn well_formed_config_has_no_diagnostics() {
        let c = ExperimentConfig::from_toml(GOOD).unwrap();
        assert!(c.validate(Experiment::Simulate).is_empty());
        assert_eq!(c.samples, SampleSpec::default());
    }

    #[test]
    fn empty_lambda_list() {
        let c = ExperimentConfig::from_toml(&GOOD.replace("[50.0, 200.0]", "[]")).unwrap();
        let d = c.validate(Experiment::Simulate);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "lambdas");
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let c = ExperimentConfig::from_toml(&GOOD.replace("[50.0, 200.0]", "[-5.0, 200.0]")).unwrap();
        let d = c.validate(Experiment::Simulate);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "lambdas[0]");
    }

    #[test]
    fn flower_outside_the_plane() {
        let text = GOOD.replace("kind = \"ball\"\nradius = 0.1", "kind = \"flower\"\nprofile = \"inverse\"");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let d = c.validate(Experiment::Bounds);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "dimension");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_toml(&format!("{GOOD}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn all_presets_validate() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            let d = c.validate(c.experiment.unwrap());
            assert!(d.is_empty(), "{name}: {d:?}");
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn diagram_table_checks() {
        let text = format!("{GOOD}\n[diagram]\norder = 5\nmeasures = [1.0, 0.0]\nkernel = [1.0]\n");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let paths: Vec<String> = c.validate(Experiment::Diagram).into_iter().map(|d| d.path).collect();
        assert_eq!(paths, ["diagram.order", "diagram.measures[1]", "diagram.kernel"]);
    }
}
