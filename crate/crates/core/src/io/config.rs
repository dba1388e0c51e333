//! Run manifests.
//!
//! A run is described by a flat TOML document; every key is optional:
//!
//! ```toml
//! preset = "fig9"              # start from an experiment preset
//! scheme = "fct"               # galerkin | low_order | fct
//! mu = 1.0
//! chi = 1.0
//! epsilon = 0.2
//! alpha_inv = 1e-3             # cell diffusion; omit for none
//! theta = 0.5
//! tau = 0.1
//! tau_policy = "enforce"       # enforce | warn | off
//! final_time = 50.0
//! tol = 1e-8
//! damping = 0.5
//! max_iterations = 500
//! on_nonconvergence = "abort"  # abort | accept
//! refinements = 5
//! domain = [0.0, 0.0, 20.0, 20.0]
//! initial = { kind = "gaussian", center = [0.0, 0.0], width = 1.0 }
//! snapshot_times = [0.0, 10.0, 20.0, 30.0]
//! output_dir = "out/fig9"
//! formats = ["csv", "vtk"]
//! line_samples = 201
//! probe = [20.0, 20.0]
//! ```
//!
//! Values are layered: built-in defaults, then the preset, then the file,
//! then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::StiffnessVariant;
use crate::mesh::Rectangle;
use crate::stepper::{LimiterMode, NonConvergence, Scheme, SchemeConfig, TauPolicy};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "INVASION_FCT_OUTPUT_ROOT";

/// Largest refinement level accepted from a manifest.
const MAX_REFINEMENTS: u32 = 10;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("invalid configuration: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(key: &str, reason: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Built-in experiment recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Preset {
    Figure(u8),
    Table2,
    Table3,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table2" => Ok(Preset::Table2),
            "table3" => Ok(Preset::Table3),
            _ => s
                .strip_prefix("fig")
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|n| (1..=16).contains(n))
                .map(Preset::Figure)
                .ok_or_else(|| {
                    format!("unknown preset {s:?} (expected fig1..fig16, table2, table3)")
                }),
        }
    }
}

impl TryFrom<String> for Preset {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Preset> for String {
    fn from(p: Preset) -> String {
        p.to_string()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Figure(n) => write!(f, "fig{n}"),
            Preset::Table2 => f.write_str("table2"),
            Preset::Table3 => f.write_str("table3"),
        }
    }
}

/// Initial data, interpolated at the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `u0 = exp(-|x - center|^2 / width^2)`, `c0 = 1 - u0 / 2`, `p0 = u0 / 2`.
    Gaussian {
        #[serde(default)]
        center: [f64; 2],
        #[serde(default = "unit")]
        width: f64,
    },
    Constant {
        u: f64,
        c: f64,
        p: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Gaussian {
            center: [0.0, 0.0],
            width: 1.0,
        }
    }
}

impl InitialData {
    /// `(u0, c0, p0)` at a point.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        match *self {
            InitialData::Gaussian { center, width } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let g = (-(dx * dx + dy * dy) / (width * width)).exp();
                (g, 1.0 - 0.5 * g, 0.5 * g)
            }
            InitialData::Constant { u, c, p } => (u, c, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Vtk,
}

/// A family of runs differing in one parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Refinements(Vec<u32>),
    Tau(Vec<f64>),
}

/// Fully validated description of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub preset: Option<Preset>,
    pub scheme: SchemeConfig,
    /// `[x0, y0, x1, y1]`.
    pub domain: [f64; 4],
    pub refinements: u32,
    pub initial: InitialData,
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub line_samples: usize,
    /// Point whose values are reported in the summaries.
    pub probe: [f64; 2],
    pub sweep: Option<Sweep>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            preset: None,
            scheme: SchemeConfig::default(),
            domain: [0.0, 0.0, 20.0, 20.0],
            refinements: 5,
            initial: InitialData::default(),
            snapshot_times: Vec::new(),
            output_dir: PathBuf::from("output"),
            formats: vec![OutputFormat::Csv, OutputFormat::Vtk],
            line_samples: 201,
            probe: [20.0, 20.0],
            sweep: None,
        }
    }
}

/// The configuration file as written: every key optional, unknown keys
/// rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub preset: Option<Preset>,
    pub scheme: Option<Scheme>,
    pub mu: Option<f64>,
    pub chi: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha_inv: Option<f64>,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    pub tau_policy: Option<TauPolicy>,
    pub final_time: Option<f64>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub max_iterations: Option<usize>,
    pub on_nonconvergence: Option<NonConvergence>,
    pub galerkin_stiffness: Option<StiffnessVariant>,
    pub limiter: Option<LimiterMode>,
    pub prelimiting: Option<bool>,
    pub blowup_threshold: Option<f64>,
    pub refinements: Option<u32>,
    pub domain: Option<[f64; 4]>,
    pub initial: Option<InitialData>,
    pub snapshot_times: Option<Vec<f64>>,
    pub output_dir: Option<PathBuf>,
    pub formats: Option<Vec<OutputFormat>>,
    pub line_samples: Option<usize>,
    pub probe: Option<[f64; 2]>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        Ok(toml::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Command-line overrides; they win over the file and the preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub scheme: Option<Scheme>,
    pub tau: Option<f64>,
    pub refinements: Option<u32>,
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    pub chi: Option<f64>,
    pub alpha_inv: Option<f64>,
    pub tau_policy: Option<TauPolicy>,
    pub output_dir: Option<PathBuf>,
    pub snapshot_times: Option<Vec<f64>>,
}

impl RunManifest {
    /// Settings of an experiment preset on top of the defaults.
    pub fn from_preset(preset: Preset) -> Self {
        let mut m = RunManifest {
            preset: Some(preset),
            output_dir: PathBuf::from("output").join(preset.to_string()),
            snapshot_times: vec![0.0, 10.0, 20.0, 30.0],
            ..RunManifest::default()
        };
        let s = &mut m.scheme;
        match preset {
            Preset::Figure(n) => match n {
                1..=8 => {
                    s.scheme = if matches!(n, 1 | 2 | 5 | 6) {
                        Scheme::Galerkin
                    } else {
                        Scheme::Fct
                    };
                    s.alpha_inv = Some(if n <= 4 { 0.1 } else { 1e-3 });
                }
                11 => m.snapshot_times = vec![10.0, 20.0],
                12..=16 => {
                    s.mu = 1e-4;
                    s.scheme = match n {
                        12 => Scheme::Galerkin,
                        13 | 15 => Scheme::LowOrder,
                        _ => Scheme::Fct,
                    };
                    if n >= 15 {
                        s.theta = 1.0;
                    }
                    m.snapshot_times = if n == 12 {
                        vec![0.0, 5.0, 15.0]
                    } else {
                        vec![10.0, 20.0, 30.0, 40.0]
                    };
                }
                _ => {}
            },
            Preset::Table2 => {
                m.snapshot_times.clear();
                m.sweep = Some(Sweep::Refinements(vec![3, 4, 5]));
            }
            Preset::Table3 => {
                m.snapshot_times.clear();
                s.tau = 1.0;
                s.tau_policy = TauPolicy::Warn;
                m.sweep = Some(Sweep::Tau(vec![1.0, 0.1, 0.01, 0.001, 0.0001]));
            }
        }
        m
    }

    /// Layer `doc` and `overrides` over the defaults (and the preset named by
    /// either of them), then validate.
    pub fn build(doc: ConfigDoc, overrides: &Overrides) -> Result<Self, ManifestError> {
        let mut m = match overrides.preset.or(doc.preset) {
            Some(p) => Self::from_preset(p),
            None => Self::default(),
        };
        let s = &mut m.scheme;
        macro_rules! layer {
            ($src:expr; $($field:ident),* $(,)?) => {
                $(if let Some(v) = $src.$field.clone() { s.$field = v; })*
            };
        }
        layer!(doc; scheme, mu, chi, epsilon, theta, tau, tau_policy, final_time, tol, damping, max_iterations,
            on_nonconvergence, galerkin_stiffness, limiter, prelimiting, blowup_threshold);
        if doc.alpha_inv.is_some() {
            s.alpha_inv = doc.alpha_inv;
        }
        layer!(overrides; scheme, tau, theta, mu, chi, tau_policy);
        if overrides.alpha_inv.is_some() {
            s.alpha_inv = overrides.alpha_inv;
        }

        let tau_pinned = doc.tau.is_some() || overrides.tau.is_some();
        let refinements = overrides.refinements.or(doc.refinements);
        if let Some(r) = refinements {
            m.refinements = r;
        }
        match &m.sweep {
            Some(Sweep::Tau(_)) if tau_pinned => m.sweep = None,
            Some(Sweep::Refinements(_)) if refinements.is_some() => m.sweep = None,
            _ => {}
        }
        if let Some(d) = doc.domain {
            m.domain = d;
        }
        if let Some(i) = doc.initial {
            m.initial = i;
        }
        if let Some(t) = overrides.snapshot_times.clone().or(doc.snapshot_times) {
            m.snapshot_times = t;
        }
        if let Some(dir) = overrides.output_dir.clone().or(doc.output_dir) {
            m.output_dir = dir;
        }
        if let Some(f) = doc.formats {
            m.formats = f;
        }
        if let Some(n) = doc.line_samples {
            m.line_samples = n;
        }
        if let Some(p) = doc.probe {
            m.probe = p;
        }
        m.validate()?;
        Ok(m)
    }

    /// Parse a TOML document without command-line overrides.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        Self::build(ConfigDoc::parse(text)?, &Overrides::default())
    }

    pub fn rectangle(&self) -> Rectangle {
        let [x0, y0, x1, y1] = self.domain;
        Rectangle::new(x0, y0, x1, y1)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        self.scheme
            .validate()
            .map_err(|e| invalid(e.field, format!("{} ({})", e.reason, e.value)))?;
        let d = self.rectangle();
        if !(d.width() > 0.0 && d.height() > 0.0) || self.domain.iter().any(|v| !v.is_finite()) {
            return Err(invalid(
                "domain",
                "must be [x0, y0, x1, y1] with x1 > x0 and y1 > y0",
            ));
        }
        if self.refinements > MAX_REFINEMENTS {
            return Err(invalid("refinements", format!("at most {MAX_REFINEMENTS}")));
        }
        let sweep_refinements = match &self.sweep {
            Some(Sweep::Refinements(r)) => r.iter().any(|&r| r > MAX_REFINEMENTS),
            _ => false,
        };
        if sweep_refinements {
            return Err(invalid("refinements", format!("at most {MAX_REFINEMENTS}")));
        }
        let t_end = self.scheme.final_time;
        for (k, &t) in self.snapshot_times.iter().enumerate() {
            if !(0.0..=t_end).contains(&t) {
                return Err(invalid(
                    &format!("snapshot_times[{k}]"),
                    format!("{t} is outside [0, {t_end}]"),
                ));
            }
        }
        if self.line_samples < 2 {
            return Err(invalid("line_samples", "at least 2"));
        }
        if !d.contains(self.probe[0], self.probe[1]) {
            return Err(invalid("probe", "must lie in the domain"));
        }
        match self.initial {
            InitialData::Gaussian { width, center }
                if width.is_nan() || width <= 0.0 || center.iter().any(|v| !v.is_finite()) =>
            {
                return Err(invalid("initial.width", "must be positive"));
            }
            InitialData::Constant { u, c, p } if ![u, c, p].iter().all(|v| v.is_finite()) => {
                return Err(invalid("initial", "values must be finite"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Prefix a relative output directory with `root`.
    pub fn relocate_output(&mut self, root: Option<&Path>) {
        if let Some(root) = root {
            if self.output_dir.is_relative() {
                self.output_dir = root.join(&self.output_dir);
            }
        }
    }

    /// Single-run manifests of the sweep (or `self` alone), each with its
    /// own output subdirectory.
    pub fn expand(&self) -> Vec<(String, RunManifest)> {
        let single = |label: String, f: &dyn Fn(&mut RunManifest)| {
            let mut m = self.clone();
            m.sweep = None;
            f(&mut m);
            m.output_dir = self.output_dir.join(&label);
            (label, m)
        };
        match &self.sweep {
            None => vec![(
                String::new(),
                RunManifest {
                    sweep: None,
                    ..self.clone()
                },
            )],
            Some(Sweep::Refinements(rs)) => rs
                .iter()
                .map(|&r| single(format!("r{r}"), &|m| m.refinements = r))
                .collect(),
            Some(Sweep::Tau(ts)) => ts
                .iter()
                .map(|&t| single(format!("tau_{t}"), &|m| m.scheme.tau = t))
                .collect(),
        }
    }
}
