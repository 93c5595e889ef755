//! Experiment configuration: a flat sectioned `key = value` file.
//!
//! ```text
//! [problem]
//! dim = 1
//! lower = [-1.0]
//! upper = [1.0]
//! nodes = 65
//! lambda = 1.0
//! Lambda = 2.0
//! C0 = 1.0
//! exterior = "0"
//! rhs = ["-2"]
//! exact = "1 - x1^2"
//!
//! [kernel]
//! family = "compact-uniform"
//! radius = 0.5
//! height = 1.0
//! ```
//!
//! Control pairs are laid out row-major: `controls` maximizing indices,
//! each with `responses` minimizing ones, so every per-pair list has
//! `controls * responses` entries (a single entry is broadcast).

use std::path::{Path, PathBuf};

use levylab_core::kernels::KernelFamily;
use levylab_core::{
    BoxDomain, Control, EllipticityParams, ExteriorRule, Grid, HJBIProblem, LevyKernel, Omega, QuadratureScheme,
};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Half-width of `[-half, half]^d` when `lower`/`upper` are absent.
    pub half: Option<f64>,
    pub nodes: usize,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub exterior: String,
    pub controls: usize,
    pub responses: usize,
    /// Isotropic diffusion `alpha I` per pair.
    pub alpha: Vec<f64>,
    pub rhs: Vec<String>,
    pub zero_order: Option<Vec<String>>,
    pub drift_x1: Option<Vec<String>>,
    pub drift_x2: Option<Vec<String>>,
    pub drift_x3: Option<Vec<String>>,
    /// Known solution, for the error field of `solve`.
    pub exact: Option<String>,
    pub solver: SolverKind,
    pub tol: Option<f64>,
    pub max_steps: usize,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            dim: 1,
            lower: None,
            upper: None,
            half: None,
            nodes: 65,
            lambda: 1.0,
            big_lambda: 1.0,
            c0: 0.0,
            exterior: "0".into(),
            controls: 1,
            responses: 1,
            alpha: vec![1.0],
            rhs: vec!["0".into()],
            zero_order: None,
            drift_x1: None,
            drift_x2: None,
            drift_x3: None,
            exact: None,
            solver: SolverKind::Policy,
            tol: None,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Policy,
    PseudoTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Zero,
    Fractional,
    TruncatedFractional,
    CompactUniform,
    Tabulated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub family: Family,
    pub sigma: Option<f64>,
    pub cutoff: Option<f64>,
    pub radius: Option<f64>,
    pub height: Option<f64>,
    pub table_path: Option<PathBuf>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            family: Family::Zero,
            sigma: None,
            cutoff: None,
            radius: None,
            height: None,
            table_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    pub inner_radius_cells: Option<f64>,
    pub shells: Option<usize>,
    pub nodes_per_shell: Option<usize>,
    pub angular_nodes: Option<usize>,
    pub tail_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Solve,
    VerifyBarrier,
    Abp,
    Harnack,
    Holder,
    Envelope,
    Selftest,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Solve => "solve",
            TaskKind::VerifyBarrier => "verify-barrier",
            TaskKind::Abp => "abp",
            TaskKind::Harnack => "harnack",
            TaskKind::Holder => "holder",
            TaskKind::Envelope => "envelope",
            TaskKind::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierChoice {
    Special,
    RescaledSpecial,
    Boundary,
    Global,
}

/// Parameters of every task; each task reads the keys it needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// When present, must name the subcommand being run.
    pub kind: Option<TaskKind>,
    pub seed: Option<u64>,
    /// `solve`: bound on the sup-norm error against `problem.exact`.
    pub error_bound: Option<f64>,
    pub barrier: Option<BarrierChoice>,
    /// Operator scales of the special barrier check.
    pub scales: Option<Vec<f64>>,
    pub per_axis: Option<usize>,
    /// Half-width of the sampled cube for the special barriers.
    pub sample_half: Option<f64>,
    /// Ball radius of the boundary barrier.
    pub radius: Option<f64>,
    pub count: Option<usize>,
    pub center: Option<Vec<f64>>,
    pub eps_grid: Option<Vec<f64>>,
    pub spread_bound: Option<f64>,
    /// Right-hand side `f` of the supersolution inequality for `harnack`.
    pub source: Option<String>,
    pub ratio: Option<f64>,
    pub kmax: Option<usize>,
    /// Field analysed by `envelope`/`holder` instead of a computed solution.
    pub function: Option<String>,
    pub contact_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub solution_csv: bool,
    pub solution_bin: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            solution_csv: true,
            solution_bin: true,
        }
    }
}

/// The parsed file plus its text, kept for line lookups.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&source, path)
    }

    pub fn from_str(source: &str, path: &Path) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(source, s.start));
            CliError::Config {
                path: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        Ok(Self {
            config,
            source: source.to_string(),
            path: path.to_path_buf(),
        })
    }

    /// Validation error located at `section.key` when that line exists.
    pub fn invalid(&self, section: &str, key: &str, msg: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.path.clone(),
            line: key_line(&self.source, section, key),
            msg: format!("{section}.{key}: {}", msg.into()),
        }
    }
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[section]`.
pub fn key_line(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}

/// Everything a task needs, validated and compiled.
#[derive(Debug, Clone)]
pub struct Setup {
    pub domain: BoxDomain,
    pub grid: Grid,
    pub params: EllipticityParams,
    pub kernel: LevyKernel,
    pub quad: QuadratureScheme,
    pub exterior: Expr,
    pub exact: Option<Expr>,
    pub pairs: Vec<PairExprs>,
}

#[derive(Debug, Clone)]
pub struct PairExprs {
    pub alpha: f64,
    pub rhs: Expr,
    pub zero_order: Option<Expr>,
    pub drift: Option<Vec<Expr>>,
}

impl LoadedConfig {
    pub fn setup(&self) -> Result<Setup, CliError> {
        let p = &self.config.problem;
        let d = p.dim;
        if !(1..=3).contains(&d) {
            return Err(self.invalid("problem", "dim", format!("must be 1, 2 or 3 (got {d})")));
        }
        let domain = self.domain()?;
        if p.nodes < 3 {
            return Err(self.invalid("problem", "nodes", format!("need at least 3 nodes per axis (got {})", p.nodes)));
        }
        if !(p.lambda > 0.0 && p.lambda.is_finite()) {
            return Err(self.invalid("problem", "lambda", format!("must be positive (got {})", p.lambda)));
        }
        if !(p.big_lambda >= p.lambda && p.big_lambda.is_finite()) {
            return Err(self.invalid(
                "problem",
                "Lambda",
                format!("must be at least lambda (lambda = {} > Lambda = {})", p.lambda, p.big_lambda),
            ));
        }
        if !(p.c0 >= 0.0 && p.c0.is_finite()) {
            return Err(self.invalid("problem", "C0", format!("must be nonnegative (got {})", p.c0)));
        }
        let params = EllipticityParams::new(p.lambda, p.big_lambda, p.c0).map_err(|e| self.invalid("problem", "lambda", e.to_string()))?;
        let grid = Grid::new(domain.clone(), p.nodes).map_err(|e| self.invalid("problem", "nodes", e.to_string()))?;
        let kernel = self.kernel(d)?;
        let quad = self.quadrature()?;
        let exterior = self.expr("problem", "exterior", &p.exterior, d)?;
        let exact = p.exact.as_ref().map(|s| self.expr("problem", "exact", s, d)).transpose()?;
        let pairs = self.pairs()?;
        self.check_on_lattice(&grid, &exterior, exact.as_ref(), &pairs)?;
        Ok(Setup {
            domain,
            grid,
            params,
            kernel,
            quad,
            exterior,
            exact,
            pairs,
        })
    }

    fn check_on_lattice(&self, grid: &Grid, exterior: &Expr, exact: Option<&Expr>, pairs: &[PairExprs]) -> Result<(), CliError> {
        let mut fields: Vec<(&str, &Expr)> = vec![("exterior", exterior)];
        fields.extend(exact.map(|e| ("exact", e)));
        for pe in pairs {
            fields.push(("rhs", &pe.rhs));
            fields.extend(pe.zero_order.as_ref().map(|e| ("zero_order", e)));
            for (axis, e) in pe.drift.iter().flatten().enumerate() {
                fields.push((["drift_x1", "drift_x2", "drift_x3"][axis], e));
            }
        }
        for i in 0..grid.len() {
            let x = grid.point(i);
            for (key, e) in &fields {
                e.eval(&x).map_err(|err| self.invalid("problem", key, err.to_string()))?;
            }
        }
        Ok(())
    }

    fn domain(&self) -> Result<BoxDomain, CliError> {
        let p = &self.config.problem;
        let (lower, upper) = match (&p.lower, &p.upper, p.half) {
            (Some(l), Some(u), None) => (l.clone(), u.clone()),
            (None, None, Some(h)) => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(self.invalid("problem", "half", format!("must be positive (got {h})")));
                }
                (vec![-h; p.dim], vec![h; p.dim])
            }
            (None, None, None) => (vec![-1.0; p.dim], vec![1.0; p.dim]),
            _ => return Err(self.invalid("problem", "half", "give either lower and upper, or half")),
        };
        for (key, v) in [("lower", &lower), ("upper", &upper)] {
            if v.len() != p.dim {
                return Err(self.invalid("problem", key, format!("needs {} entries (got {})", p.dim, v.len())));
            }
        }
        if let Some(i) = (0..p.dim).find(|&i| !(lower[i] < upper[i])) {
            return Err(self.invalid("problem", "upper", format!("must exceed lower on axis {}", i + 1)));
        }
        BoxDomain::new(lower, upper).map_err(|e| self.invalid("problem", "lower", e.to_string()))
    }

    fn kernel(&self, d: usize) -> Result<LevyKernel, CliError> {
        let k = &self.config.kernel;
        let need = |key: &str, v: Option<f64>| v.ok_or_else(|| self.invalid("kernel", key, "required by this family"));
        let family = match k.family {
            Family::Zero => return Ok(LevyKernel::zero(d)),
            Family::Fractional => KernelFamily::Fractional {
                sigma: need("sigma", k.sigma)?,
            },
            Family::TruncatedFractional => KernelFamily::TruncatedFractional {
                sigma: need("sigma", k.sigma)?,
                cutoff: need("cutoff", k.cutoff)?,
            },
            Family::CompactUniform => KernelFamily::CompactUniform {
                radius: need("radius", k.radius)?,
                height: need("height", k.height)?,
            },
            Family::Tabulated => {
                let rel = k.table_path.as_ref().ok_or_else(|| self.invalid("kernel", "table_path", "required by this family"))?;
                let path = self.resolve(rel);
                if !path.exists() {
                    return Err(self.invalid("kernel", "table_path", format!("{} does not exist", path.display())));
                }
                return LevyKernel::from_table_csv(d, &path).map_err(|e| self.invalid("kernel", "table_path", e.to_string()));
            }
        };
        LevyKernel::new(d, family).map_err(|e| {
            let key = match &e {
                levylab_core::Error::InvalidParameter { field, .. } if ["sigma", "cutoff", "radius", "height"].contains(&field.as_str()) => {
                    field.clone()
                }
                _ => "family".to_string(),
            };
            self.invalid("kernel", &key, e.to_string())
        })
    }

    /// Paths in the config are relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn quadrature(&self) -> Result<QuadratureScheme, CliError> {
        let q = &self.config.quadrature;
        let mut s = QuadratureScheme::default();
        if let Some(v) = q.inner_radius_cells {
            s.inner_radius_cells = v;
        }
        if let Some(v) = q.shells {
            s.shells = v;
        }
        if let Some(v) = q.nodes_per_shell {
            s.nodes_per_shell = v;
        }
        if let Some(v) = q.angular_nodes {
            s.angular_nodes = v;
        }
        if let Some(v) = q.tail_tol {
            s.tail_tol = v;
        }
        s.validate().map_err(|e| {
            let key = match &e {
                levylab_core::Error::InvalidParameter { field, .. } => field.trim_start_matches("quadrature.").to_string(),
                _ => "shells".into(),
            };
            self.invalid("quadrature", &key, e.to_string())
        })?;
        Ok(s)
    }

    pub fn expr(&self, section: &str, key: &str, src: &str, d: usize) -> Result<Expr, CliError> {
        let e = Expr::parse(src).map_err(|e| self.invalid(section, key, format!("`{src}`: {e}")))?;
        e.check_dim(d).map_err(|e| self.invalid(section, key, e.to_string()))?;
        Ok(e)
    }

    fn pairs(&self) -> Result<Vec<PairExprs>, CliError> {
        let p = &self.config.problem;
        let n = p.controls * p.responses;
        if n == 0 {
            return Err(self.invalid("problem", "controls", "controls and responses must be positive"));
        }
        let pick = |key: &str, len: usize| -> Result<Box<dyn Fn(usize) -> usize>, CliError> {
            match len {
                1 => Ok(Box::new(|_| 0)),
                l if l == n => Ok(Box::new(|i| i)),
                l => Err(self.invalid("problem", key, format!("needs 1 or {n} entries (got {l})"))),
            }
        };
        let ia = pick("alpha", p.alpha.len())?;
        let ir = pick("rhs", p.rhs.len())?;
        if let Some(a) = p.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(self.invalid("problem", "alpha", format!("diffusion must be positive (got {a})")));
        }
        let zero = match &p.zero_order {
            Some(v) => Some((v, pick("zero_order", v.len())?)),
            None => None,
        };
        let drift_lists = [&p.drift_x1, &p.drift_x2, &p.drift_x3];
        let mut drift = Vec::new();
        for (axis, list) in drift_lists.into_iter().enumerate() {
            let key = format!("drift_x{}", axis + 1);
            match list {
                Some(_) if axis >= p.dim => return Err(self.invalid("problem", &key, format!("no axis {} in dimension {}", axis + 1, p.dim))),
                Some(v) => drift.push((key.clone(), v, pick(&key, v.len())?)),
                None if axis < p.dim && drift_lists.iter().any(|l| l.is_some()) => {
                    return Err(self.invalid("problem", &key, "drift needs one list per axis"))
                }
                None => {}
            }
        }
        (0..n)
            .map(|i| {
                Ok(PairExprs {
                    alpha: p.alpha[ia(i)],
                    rhs: self.expr("problem", "rhs", &p.rhs[ir(i)], p.dim)?,
                    zero_order: zero
                        .as_ref()
                        .map(|(v, ix)| self.expr("problem", "zero_order", &v[ix(i)], p.dim))
                        .transpose()?,
                    drift: if drift.is_empty() {
                        None
                    } else {
                        Some(
                            drift
                                .iter()
                                .map(|(key, v, ix)| self.expr("problem", key, &v[ix(i)], p.dim))
                                .collect::<Result<_, _>>()?,
                        )
                    },
                })
            })
            .collect()
    }
}

/// Scalar field for the core API. [`LoadedConfig::setup`] has already
/// evaluated every expression on the lattice, so NaN here is off-lattice.
pub fn field(e: &Expr) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static {
    let e = e.clone();
    move |x: &[f64]| e.eval(x).unwrap_or(f64::NAN)
}

impl Setup {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn problem(&self, cfg: &ExperimentConfig) -> Result<HJBIProblem, CliError> {
        let d = self.dim();
        let nb = cfg.problem.responses;
        let controls: Vec<Vec<Control>> = self
            .pairs
            .chunks(nb)
            .map(|row| {
                row.iter()
                    .map(|pe| {
                        let mut c = Control::isotropic(d, pe.alpha, field(&pe.rhs));
                        if let Some(z) = &pe.zero_order {
                            c = c.with_zero_order(field(z));
                        }
                        if let Some(b) = &pe.drift {
                            let fs: Vec<_> = b.iter().map(field).collect();
                            c = c.with_drift(move |x| fs.iter().map(|f| f(x)).collect());
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        Ok(HJBIProblem::new(
            Omega::Box(self.domain.clone()),
            controls,
            self.kernel.clone(),
            ExteriorRule::new(field(&self.exterior)),
            self.params,
        )?)
    }
}
