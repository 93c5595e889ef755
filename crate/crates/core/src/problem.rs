//! The Dirichlet problem for a nonlocal Isaacs equation with finitely
//! many controls.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{BoxDomain, ExteriorRule};
use crate::kernels::LevyKernel;
use crate::operators::{symmetric_eigenvalues, EllipticityParams};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Vector- or matrix-valued field (matrices are row-major `d x d`).
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Kernel multiplier `m(x, z) in [0, 1]`, so that `N = m K <= K`.
#[derive(Clone)]
pub struct Multiplier(pub Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>);

impl Multiplier {
    pub fn new(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        (self.0)(x, z)
    }
}

impl fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Multiplier(..)")
    }
}

/// Coefficients of one control pair `(a, b)`.
#[derive(Clone)]
pub struct Control {
    pub a: VectorField,
    pub b: VectorField,
    pub c: ScalarField,
    pub f: ScalarField,
    pub multiplier: Option<Multiplier>,
}

impl fmt::Debug for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Control")
            .field("multiplier", &self.multiplier.is_some())
            .finish_non_exhaustive()
    }
}

impl Control {
    /// Constant isotropic diffusion `a = alpha I`, no drift, no zero-order
    /// term, and right-hand side `f`.
    pub fn isotropic(dim: usize, alpha: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = alpha;
        }
        Self {
            a: Arc::new(move |_| a.clone()),
            b: Arc::new(move |_| vec![0.0; dim]),
            c: Arc::new(|_| 0.0),
            f: Arc::new(f),
            multiplier: None,
        }
    }

    pub fn with_drift(mut self, b: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.b = Arc::new(b);
        self
    }

    pub fn with_zero_order(mut self, c: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.c = Arc::new(c);
        self
    }

    pub fn with_diffusion(mut self, a: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.a = Arc::new(a);
        self
    }

    pub fn with_rhs(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_multiplier(mut self, m: Multiplier) -> Self {
        self.multiplier = Some(m);
        self
    }
}

/// Where the equation holds.
#[derive(Debug, Clone, PartialEq)]
pub enum Omega {
    Box(BoxDomain),
    Ball { center: Vec<f64>, radius: f64 },
}

impl Omega {
    pub fn dim(&self) -> usize {
        match self {
            Omega::Box(b) => b.dim(),
            Omega::Ball { center, .. } => center.len(),
        }
    }

    /// Open set membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        const EPS: f64 = 1e-12;
        match self {
            Omega::Box(b) => x
                .iter()
                .zip(b.lower.iter().zip(&b.upper))
                .all(|(v, (l, u))| *v > l + EPS * (1.0 + l.abs()) && *v < u - EPS * (1.0 + u.abs())),
            Omega::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() < radius * (1.0 - EPS)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Omega::Box(b) => b.diameter(),
            Omega::Ball { radius, .. } => 2.0 * radius,
        }
    }

    pub fn bounding_box(&self) -> BoxDomain {
        match self {
            Omega::Box(b) => b.clone(),
            Omega::Ball { center, radius } => BoxDomain {
                lower: center.iter().map(|c| c - radius).collect(),
                upper: center.iter().map(|c| c + radius).collect(),
            },
        }
    }

    /// Distance from `x` to the set (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Omega::Box(b) => b.distance(x),
            Omega::Ball { center, radius } => {
                (x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() - radius).max(0.0)
            }
        }
    }
}

/// `sup_a inf_b {-tr a D^2u - I_ab[x,u] + b.Du + c u + f} = 0` in Omega,
/// `u = g` outside. `controls[a][b]` holds the coefficients of pair `(a, b)`.
#[derive(Debug, Clone)]
pub struct HJBIProblem {
    pub omega: Omega,
    pub controls: Vec<Vec<Control>>,
    pub kernel: LevyKernel,
    pub exterior: ExteriorRule,
    pub params: EllipticityParams,
    /// Requires `c >= 0` (the existence setting).
    pub perron_mode: bool,
}

impl HJBIProblem {
    pub fn new(
        omega: Omega,
        controls: Vec<Vec<Control>>,
        kernel: LevyKernel,
        exterior: ExteriorRule,
        params: EllipticityParams,
    ) -> Result<Self> {
        params.validate()?;
        if controls.is_empty() || controls.iter().any(|r| r.is_empty()) {
            return Err(Error::param("controls", "control families must be nonempty"));
        }
        if controls.iter().any(|r| r.len() != controls[0].len()) {
            return Err(Error::param("controls", "every maximizing control needs the same number of minimizing controls"));
        }
        if kernel.dim() != omega.dim() {
            return Err(Error::param("kernel", "dimension differs from the domain"));
        }
        Ok(Self {
            omega,
            controls,
            kernel,
            exterior,
            params,
            perron_mode: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    pub fn with_perron_mode(mut self, on: bool) -> Self {
        self.perron_mode = on;
        self
    }

    /// Checks the coefficient invariants at `x` for every control pair.
    pub fn check_coefficients(&self, x: &[f64], z_samples: &[Vec<f64>]) -> Result<()> {
        let d = self.dim();
        let tol = 1e-12 * (1.0 + self.params.big_lambda);
        for (ia, row) in self.controls.iter().enumerate() {
            for (ib, ctl) in row.iter().enumerate() {
                let a = (ctl.a)(x);
                let eig = symmetric_eigenvalues(&a, d)?;
                let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
                if lo < self.params.lambda - tol || hi > self.params.big_lambda + tol {
                    return Err(Error::param(
                        "a",
                        format!(
                            "control ({ia},{ib}) at {x:?}: eigenvalues [{lo}, {hi}] outside [lambda, Lambda] = [{}, {}]",
                            self.params.lambda, self.params.big_lambda
                        ),
                    ));
                }
                if (ctl.b)(x).len() != d {
                    return Err(Error::param("b", format!("control ({ia},{ib}): drift must be a {d}-vector")));
                }
                if self.perron_mode && (ctl.c)(x) < 0.0 {
                    return Err(Error::param("c", format!("control ({ia},{ib}) at {x:?}: c < 0 in existence mode")));
                }
                if let Some(m) = &ctl.multiplier {
                    for z in z_samples {
                        let v = m.eval(x, z);
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::param(
                                "N",
                                format!("control ({ia},{ib}): multiplier {v} outside [0, 1], so N <= K fails"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
