//! TOML run configuration of the command-line front end.
//!
//! ```toml
//! [system]
//! norm = "l2"
//! horizon = 1.0
//! steps = 1000
//! xi0 = [1.0]
//! semigroup = { kind = "diagonal", eigenvalues = [0.0] }
//! fields = [{ kind = "bilinear", matrix = [[1.0]] }]
//!
//! [control]
//! p = 1.0
//! radius = 1.0
//! generator = { kind = "constant", value = 1.0 }
//!
//! [solver]
//! tol = 1e-10
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controls::{lp_norm, sample_ball, Control};
use crate::error::{Error, Result};
use crate::operator::{certify, CertificateChoice, ContractionCertificate, IntegralOperator};
use crate::reachset::{DiagnosticConfig, DiagnosticField};
use crate::solver::{InitialGuess, SolverOptions};
use crate::spaces::{NormKind, Semigroup, StateVector, VectorField};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Generator of the linear part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SemigroupConfig {
    /// Eigenvalues `−k²`, k = 1..dim.
    Heat {
        dim: usize,
    },
    Identity {
        dim: usize,
    },
    Diagonal {
        eigenvalues: Vec<f64>,
    },
    /// Dense generator; `m` and `mu` are certified numerically when absent.
    Dense {
        matrix: Vec<Vec<f64>>,
        m: Option<f64>,
        mu: Option<f64>,
        #[serde(default = "default_safety")]
        safety: f64,
    },
}

fn default_safety() -> f64 {
    1.1
}

/// One vector field; a control channel per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldConfig {
    /// `f(ξ) = Bξ`, with `B` given explicitly or as a named preset.
    Bilinear {
        matrix: Option<Vec<Vec<f64>>>,
        preset: Option<DiagnosticField>,
    },
    Constant {
        vector: Vec<f64>,
    },
    Saturation {
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub norm: NormKind,
    pub horizon: f64,
    pub steps: usize,
    pub xi0: Vec<f64>,
    pub semigroup: SemigroupConfig,
    pub fields: Vec<FieldConfig>,
}

/// How `solve` obtains its control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSource {
    /// CSV file as written by [`Control::write_csv`], relative to the config file.
    File {
        path: PathBuf,
    },
    /// The same value on every channel and cell.
    Constant {
        value: f64,
    },
    Zero,
    /// `control.count` draws from the control ball, seeded by `control.seed`.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub p: f64,
    pub radius: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_source")]
    pub generator: ControlSource,
}

fn default_count() -> usize {
    1
}

fn default_source() -> ControlSource {
    ControlSource::Sample
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iterations: usize,
    pub certificate: CertificateChoice,
    pub target_rate: f64,
    pub initial_guess: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            tol: d.tol,
            max_iterations: d.max_iterations,
            certificate: CertificateChoice::Auto,
            target_rate: 0.5,
            initial_guess: d.initial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub n_max: usize,
    pub steps: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n_max: 128,
            steps: 1024,
        }
    }
}

/// Γ_ε tables over the field values of the diagnostic sample in dimension `dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub dim: usize,
    pub epsilons: Vec<f64>,
    /// Also run the reconstruction check with tables at ε/2.
    pub convolution: bool,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            epsilons: vec![0.1, 0.05],
            convolution: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory used when neither `--out` nor `MILDSOLVE_OUT` is set.
    pub out: Option<PathBuf>,
    pub system: Option<SystemConfig>,
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostic: DiagnosticConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// The assembled system of `certify` and `solve`.
pub struct PreparedSystem {
    pub operator: IntegralOperator,
    pub certificate: ContractionCertificate,
    pub options: SolverOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies a `--seed` override to every seeded block.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(c) = &mut self.control {
            c.seed = seed;
        }
        self.diagnostic.seed = seed;
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iterations == 0 {
            return Err(config_err(
                "solver.tol must be positive and solver.max_iterations >= 1",
            ));
        }
        if !(s.target_rate > 0.0 && s.target_rate < 1.0) {
            return Err(config_err("solver.target_rate must lie in (0, 1)"));
        }
        Ok(SolverOptions {
            tol: s.tol,
            max_iterations: s.max_iterations,
            initial: s.initial_guess,
        })
    }

    fn system(&self) -> Result<&SystemConfig> {
        self.system
            .as_ref()
            .ok_or_else(|| config_err("missing [system] block"))
    }

    fn control(&self) -> Result<&ControlConfig> {
        let c = self
            .control
            .as_ref()
            .ok_or_else(|| config_err("missing [control] block"))?;
        if !(c.p >= 1.0) {
            return Err(config_err(format!("control.p = {} must be >= 1", c.p)));
        }
        if !(c.radius > 0.0 && c.radius.is_finite()) {
            return Err(config_err(format!(
                "control.radius = {} must be positive",
                c.radius
            )));
        }
        if c.count == 0 {
            return Err(config_err("control.count must be >= 1"));
        }
        Ok(c)
    }

    /// Builds the operator and issues the certificate for `(p, radius)`.
    pub fn prepare(&self) -> Result<PreparedSystem> {
        let sys = self.system()?;
        let ctl = self.control()?;
        let options = self.solver_options()?;
        if ctl.p == 1.0 && self.solver.certificate == CertificateChoice::Omega {
            return Err(config_err(
                "the weighted-norm certificate needs p > 1; use \"hidden\" or \"auto\"",
            ));
        }
        if !(sys.horizon > 0.0 && sys.horizon.is_finite()) || sys.steps == 0 {
            return Err(config_err(
                "system.horizon must be positive and system.steps >= 1",
            ));
        }
        let sg = build_semigroup(&sys.semigroup, sys.horizon, sys.norm)?;
        let n = sg.dim();
        if sys.xi0.len() != n {
            return Err(config_err(format!(
                "xi0 has {} entries for a {n}-dimensional semigroup",
                sys.xi0.len()
            )));
        }
        if sys.fields.is_empty() {
            return Err(config_err("system.fields must list at least one field"));
        }
        let fields = sys
            .fields
            .iter()
            .map(|f| build_field(f, n, sys.norm))
            .collect::<Result<Vec<_>>>()?;
        let xi0 = StateVector::new(sys.xi0.clone(), sys.norm).map_err(as_config)?;
        let operator =
            IntegralOperator::new(&sg, &fields, &xi0, sys.horizon, sys.steps).map_err(as_config)?;
        let certificate = certify(
            self.solver.certificate,
            ctl.p,
            ctl.radius,
            sg.class_m(),
            sg.class_mu(),
            operator.lipschitz(),
            sys.horizon,
            self.solver.target_rate,
        )
        .map_err(|e| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        })?;
        Ok(PreparedSystem {
            operator,
            certificate,
            options,
        })
    }

    /// The controls of `solve`, checked against the configured ball before any solve.
    pub fn solve_controls(&self, prepared: &PreparedSystem) -> Result<Vec<Control>> {
        let sys = self.system()?;
        let ctl = self.control()?;
        let channels = sys.fields.len();
        let controls = match &ctl.generator {
            ControlSource::File { path } => {
                let path = self.base_dir.join(path);
                let file = std::fs::File::open(&path)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                vec![Control::read_csv(file, sys.horizon).map_err(as_config)?]
            }
            ControlSource::Constant { value } => {
                vec![Control::constant(sys.horizon, channels, sys.steps, *value)
                    .map_err(as_config)?]
            }
            ControlSource::Zero => {
                vec![Control::zeros(sys.horizon, channels, sys.steps).map_err(as_config)?]
            }
            ControlSource::Sample => sample_ball(
                ctl.p,
                ctl.radius,
                sys.horizon,
                channels,
                sys.steps,
                ctl.count,
                ctl.seed,
            )?,
        };
        for u in &controls {
            if u.n_t() != sys.steps || u.channels() != channels {
                return Err(config_err(format!(
                    "control has {} cells and {} channels; the system needs {} and {}",
                    u.n_t(),
                    u.channels(),
                    sys.steps,
                    channels
                )));
            }
            let norm = lp_norm(u, ctl.p)?;
            if norm > ctl.radius * (1.0 + 1e-12) {
                return Err(config_err(format!(
                    "control has L^{} norm {norm} above control.radius = {}",
                    ctl.p, ctl.radius
                )));
            }
            prepared.certificate.check_control(u).map_err(as_config)?;
        }
        Ok(controls)
    }

    pub fn validate_diagnostic(&self) -> Result<()> {
        self.diagnostic.validate()?;
        if self.diagnostic.p == 1.0 && self.diagnostic.certificate == CertificateChoice::Omega {
            return Err(config_err("the weighted-norm certificate needs p > 1"));
        }
        Ok(())
    }

    pub fn validate_gamma(&self) -> Result<()> {
        self.validate_diagnostic()?;
        let g = &self.gamma;
        if g.dim == 0 || g.epsilons.is_empty() || g.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(config_err("gamma needs dim >= 1 and positive epsilons"));
        }
        Ok(())
    }

    pub fn validate_counterexample(&self) -> Result<()> {
        let c = &self.counterexample;
        if c.n_max == 0 || c.steps == 0 {
            return Err(config_err(
                "counterexample.n_max and counterexample.steps must be >= 1",
            ));
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(config_err(format!("{what} must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_semigroup(cfg: &SemigroupConfig, horizon: f64, norm: NormKind) -> Result<Semigroup> {
    let sg = match cfg {
        SemigroupConfig::Heat { dim } => Semigroup::heat(*dim),
        SemigroupConfig::Identity { dim } => Semigroup::identity(*dim),
        SemigroupConfig::Diagonal { eigenvalues } => Semigroup::diagonal(eigenvalues.clone()),
        SemigroupConfig::Dense {
            matrix,
            m,
            mu,
            safety,
        } => {
            let a = matrix_from_rows(matrix, matrix.len(), "semigroup.matrix")?;
            match (m, mu) {
                (Some(m), Some(mu)) => Semigroup::dense(a, *m, *mu),
                (None, None) => Semigroup::dense_certified(a, horizon, norm, *safety),
                _ => {
                    return Err(config_err(
                        "give both semigroup.m and semigroup.mu, or neither",
                    ))
                }
            }
        }
    };
    sg.map_err(as_config)
}

fn build_field(cfg: &FieldConfig, n: usize, norm: NormKind) -> Result<VectorField> {
    let f = match cfg {
        FieldConfig::Bilinear { matrix, preset } => {
            let b = match (matrix, preset) {
                (Some(rows), None) => matrix_from_rows(rows, n, "field matrix")?,
                (None, Some(p)) => p.matrix(n),
                _ => {
                    return Err(config_err(
                        "a bilinear field needs exactly one of `matrix` and `preset`",
                    ))
                }
            };
            VectorField::bilinear(b, norm)
        }
        FieldConfig::Constant { vector } => VectorField::constant(vector.clone(), norm),
        FieldConfig::Saturation { scale } => VectorField::saturation(n, *scale, norm),
    };
    f.map_err(as_config)
}
