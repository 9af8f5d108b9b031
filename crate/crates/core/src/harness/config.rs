use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experiment, read from a TOML file. Unknown keys are rejected.
///
/// ```toml
/// name = "quadratic_demo"
/// seed = 7
///
/// [problem]
/// kind = "quadratic"
/// ladder = [-1.0, 100.0]
///
/// [initial]
/// state = "corner"
/// gradient_norm = 1.0
///
/// [solver]
/// k = 1
/// eta = "optimal"
/// tau = 0.1
/// grad_tol = 1e-8
/// max_iters = 5000
///
/// [metric]
/// kind = "identity"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSpec,
    pub initial: InitialSpec,
    pub solver: SolverSpec,
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Either an explicit `spectrum` or `ladder = [first, last]` for `(first, 2, 3, …, last)`.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ladder: Option<[f64; 2]>,
    },
    Butterfly {
        #[serde(default = "one")]
        c: f64,
    },
    Chain {
        sites: usize,
        #[serde(default = "default_stiffness")]
        stiffness: f64,
        #[serde(default = "one")]
        coupling: f64,
    },
    AllenCahn {
        n: usize,
        xi: f64,
    },
}

/// Starting point: exactly one of `state`, `reference`, `point`, `file`,
/// optionally perturbed by seeded Gaussian noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// A named state of the problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    /// Shape coefficients passed to the named state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    /// A reference point label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    /// Whitespace-separated values; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Standard deviation of the additive perturbation.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub noise: f64,
    /// Rescale the start so that `‖∇E(x_0)‖` equals this value (quadratic problems only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Fixed(f64),
    Rule(StepRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `2 / (L_M + μ_M)` from the generalized spectrum of `(H(x_0), M_0)`.
    Optimal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameInitSpec {
    #[default]
    Eigen,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub k: usize,
    pub eta: StepSpec,
    pub tau: f64,
    #[serde(default = "one_usize")]
    pub inner_iters: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
    #[serde(default)]
    pub frame_init: FrameInitSpec,
}

/// Metric construction. `frozen = true` builds once at the start of the
/// stage; otherwise the metric is rebuilt from `H(x_m)` every iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Identity {},
    /// `Q(|Λ| + ε)Qᵀ`; give `epsilon` or a `target_kappa` realized at `x_0`.
    Spectral {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_kappa: Option<f64>,
        #[serde(default)]
        frozen: bool,
    },
    Inertial {
        alpha: f64,
        weights: Vec<f64>,
        #[serde(default = "one")]
        beta: f64,
        epsilon: f64,
    },
    Jacobi {
        epsilon: f64,
        #[serde(default)]
        frozen: bool,
    },
    BlockJacobi {
        epsilon: f64,
        /// Block sizes; defaults to the problem's own partition.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partition: Option<Vec<usize>>,
        #[serde(default)]
        frozen: bool,
    },
    ShiftedCholesky {
        #[serde(default = "one")]
        margin: f64,
        #[serde(default)]
        drop_tol: f64,
        #[serde(default)]
        complete: bool,
        #[serde(default)]
        dense_threshold: usize,
        #[serde(default)]
        frozen: bool,
    },
    /// `A + cI` with `A` the problem's base operator.
    ShiftedOperator {
        shift: f64,
    },
    /// Choice by problem size, sparsity and block structure, evaluated at `x_0`.
    Auto {
        #[serde(default = "one")]
        epsilon: f64,
        #[serde(default = "one")]
        margin: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_rel_decrease")]
    pub rel_decrease: f64,
    pub eta: f64,
    #[serde(default)]
    pub reinit_frame: bool,
    pub metric: MetricSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Defaults to `out/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_stiffness() -> f64 {
    1e4
}

fn default_cap() -> f64 {
    1e6
}

fn default_window() -> usize {
    10
}

fn default_rel_decrease() -> f64 {
    0.1
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Checks that do not need the problem to be built.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let i = &self.initial;
        let sources = [i.state.is_some(), i.reference.is_some(), i.point.is_some(), i.file.is_some()];
        if sources.iter().filter(|b| **b).count() != 1 {
            return bad("initial: give exactly one of state, reference, point, file".into());
        }
        if !(i.noise >= 0.0) {
            return bad("initial.noise must be non-negative".into());
        }
        if let ProblemSpec::Quadratic { spectrum, ladder } = &self.problem {
            if spectrum.is_some() == ladder.is_some() {
                return bad("problem: quadratic needs exactly one of spectrum, ladder".into());
            }
        } else if i.gradient_norm.is_some() {
            return bad("initial.gradient_norm is only supported for quadratic problems".into());
        }
        if let StepSpec::Fixed(eta) = self.solver.eta {
            if !(eta > 0.0) {
                return bad(format!("solver.eta must be positive, got {eta}"));
            }
        }
        if self.solver.k == 0 {
            return bad("solver.k must be at least 1".into());
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

/// A list of experiment configs run side by side.
///
/// ```toml
/// name = "scaling"
/// configs = ["small.toml", "large.toml"]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub name: String,
    /// Paths relative to the manifest.
    pub configs: Vec<PathBuf>,
}

impl SuiteManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
