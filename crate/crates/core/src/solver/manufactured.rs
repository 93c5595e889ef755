use std::sync::Arc;

use crate::error::Result;
use crate::operators::{levy_integral, Aggregate, LocalJet};
use crate::problem::{HJBIProblem, ScalarField, VectorField};
use crate::quadrature::{LevyQuadrature, QuadratureScheme};

/// A smooth function on R^d with closed-form derivatives.
#[derive(Clone)]
pub struct SmoothFunction {
    pub value: ScalarField,
    pub gradient: VectorField,
    /// Row-major Hessian.
    pub hessian: VectorField,
}

impl std::fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SmoothFunction(..)")
    }
}

impl SmoothFunction {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    pub fn jet(&self, x: &[f64]) -> LocalJet {
        LocalJet {
            value: (self.value)(x),
            gradient: (self.gradient)(x),
            hessian: (self.hessian)(x),
        }
    }
}

/// Node rule fine enough to serve as the continuous Levy integral of a
/// smooth function: the Taylor core is tiny and the shells are dense.
fn reference_rule(prob: &HJBIProblem) -> Result<LevyQuadrature> {
    let scheme = if prob.dim() == 1 {
        QuadratureScheme {
            inner_radius_cells: 1.0,
            shells: 4,
            nodes_per_shell: 10,
            angular_nodes: 2,
            tail_tol: 1e-13,
        }
    } else {
        QuadratureScheme {
            inner_radius_cells: 1.0,
            shells: 3,
            nodes_per_shell: 6,
            angular_nodes: 48,
            tail_tol: 1e-11,
        }
    };
    LevyQuadrature::new(&prob.kernel, 1.0, 1e-4, &scheme, &[])
}

/// `f_ab = tr a D^2u + I_ab[x,u] - b.Du - c u`, so that `u` solves every
/// pair's equation.
pub fn manufactured_rhs(prob: &HJBIProblem, u: &SmoothFunction) -> Result<Vec<Vec<ScalarField>>> {
    let rule = Arc::new(reference_rule(prob)?);
    let zero_kernel = prob.kernel.is_zero();
    let d = prob.dim();
    let mut out = Vec::new();
    for row in &prob.controls {
        let mut r = Vec::new();
        for ctl in row {
            let ctl = ctl.clone();
            let u = u.clone();
            let rule = rule.clone();
            let f: ScalarField = Arc::new(move |x: &[f64]| {
                let jet = u.jet(x);
                let a = (ctl.a)(x);
                let b = (ctl.b)(x);
                let mut v = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        v += a[i * d + j] * jet.hessian[i * d + j];
                    }
                    v -= b[i] * jet.gradient[i];
                }
                v -= (ctl.c)(x) * jet.value;
                if !zero_kernel {
                    v += levy_integral(&rule, x, &jet, |y| (u.value)(y), ctl.multiplier.as_ref(), Aggregate::Linear);
                }
                v
            });
            r.push(f);
        }
        out.push(r);
    }
    Ok(out)
}

/// Copy of `prob` whose right-hand sides are manufactured from `u`.
pub fn with_manufactured_rhs(prob: &HJBIProblem, u: &SmoothFunction) -> Result<HJBIProblem> {
    let fs = manufactured_rhs(prob, u)?;
    let mut p = prob.clone();
    for (row, frow) in p.controls.iter_mut().zip(fs) {
        for (ctl, f) in row.iter_mut().zip(frow) {
            ctl.f = f;
        }
    }
    Ok(p)
}
