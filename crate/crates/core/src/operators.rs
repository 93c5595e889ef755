//! Local and nonlocal Pucci operators, the Levy integral of grid
//! functions, Isaacs operator evaluation and the extremal residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernels::LevyKernel;
use crate::problem::{HJBIProblem, Multiplier};
use crate::quadrature::{LevyQuadrature, QuadratureScheme};

/// Ellipticity constants `lambda <= Lambda` and the drift bound `C0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityParams {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
}

impl EllipticityParams {
    pub fn new(lambda: f64, big_lambda: f64, c0: f64) -> Result<Self> {
        let p = Self {
            lambda,
            big_lambda,
            c0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be positive and finite"));
        }
        if !(self.big_lambda.is_finite() && self.lambda <= self.big_lambda) {
            return Err(Error::param("Lambda", format!("need lambda <= Lambda (got {} > {})", self.lambda, self.big_lambda)));
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(Error::param("C0", "must be nonnegative and finite"));
        }
        Ok(())
    }
}

/// Eigenvalues of a symmetric `d x d` matrix (row-major). Errors if the
/// asymmetry exceeds `1e-9 |X|`.
pub fn symmetric_eigenvalues(x: &[f64], d: usize) -> Result<Vec<f64>> {
    if x.len() != d * d {
        return Err(Error::Domain(format!("expected a {d}x{d} matrix")));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((x[i * d + j] - x[j * d + i]).abs());
        }
    }
    let tol = 1e-9 * norm;
    if asym > tol {
        return Err(Error::Asymmetric { asymmetry: asym, tolerance: tol });
    }
    Ok(match d {
        1 => vec![x[0]],
        2 => {
            let (a, b, c) = (x[0], 0.5 * (x[1] + x[2]), x[3]);
            let m = 0.5 * (a + c);
            let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            vec![m - r, m + r]
        }
        _ => {
            let m = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (x[i * d + j] + x[j * d + i]));
            m.symmetric_eigenvalues().iter().copied().collect()
        }
    })
}

/// `P+(X) = Lambda sum e_i^+ - lambda sum e_i^-` (eigenvalues `e_i`).
pub fn pucci_local_plus(x: &[f64], d: usize, p: &EllipticityParams) -> Result<f64> {
    let e = symmetric_eigenvalues(x, d)?;
    Ok(e.iter().map(|v| if *v > 0.0 { p.big_lambda * v } else { p.lambda * v }).sum())
}

/// `P-(X) = lambda sum e_i^+ - Lambda sum e_i^-`.
pub fn pucci_local_minus(x: &[f64], d: usize, p: &EllipticityParams) -> Result<f64> {
    let e = symmetric_eigenvalues(x, d)?;
    Ok(e.iter().map(|v| if *v > 0.0 { p.lambda * v } else { p.big_lambda * v }).sum())
}

/// Value, gradient and Hessian of a function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `d x d`.
    pub hessian: Vec<f64>,
}

/// Central-difference jet of a grid function at `x` with step `h`. The
/// cross terms use the symmetrized four-point stencil, so the Hessian is
/// exactly symmetric.
pub struct HessianEstimate;

impl HessianEstimate {
    pub fn at(u: &GridFunction, x: &[f64], h: f64) -> Result<LocalJet> {
        let d = u.dim();
        if x.len() != d {
            return Err(Error::Domain(format!("expected a {d}-point")));
        }
        let dom = &u.grid.domain;
        for k in 0..d {
            if x[k] - h < dom.lower[k] - 1e-12 || x[k] + h > dom.upper[k] + 1e-12 {
                return Err(Error::Domain(format!(
                    "difference stencil at {x:?} leaves the lattice box"
                )));
            }
        }
        Ok(Self::from_fn(|y| u.interpolate(y), x, h))
    }

    /// Same stencil applied to an arbitrary function.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> LocalJet {
        let d = x.len();
        let u0 = f(x);
        let mut y = x.to_vec();
        let mut gradient = vec![0.0; d];
        let mut hessian = vec![0.0; d * d];
        for i in 0..d {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let dn = f(&y);
            y[i] = x[i];
            gradient[i] = (up - dn) / (2.0 * h);
            hessian[i * d + i] = (up - 2.0 * u0 + dn) / (h * h);
            for j in 0..i {
                let mut s = 0.0;
                for (si, sj, w) in [(1.0, 1.0, 1.0), (-1.0, -1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0)] {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    s += w * f(&y);
                }
                y[i] = x[i];
                y[j] = x[j];
                let v = s / (4.0 * h * h);
                hessian[i * d + j] = v;
                hessian[j * d + i] = v;
            }
        }
        LocalJet {
            value: u0,
            gradient,
            hessian,
        }
    }
}

/// How increments are aggregated in a Levy integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Linear,
    /// `int [.]^+`, the nonlocal `P+`.
    Positive,
    /// `-int [.]^-`, the nonlocal `P-`.
    Negative,
}

impl Aggregate {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Aggregate::Linear => v,
            Aggregate::Positive => v.max(0.0),
            Aggregate::Negative => v.min(0.0),
        }
    }
}

/// `int [u(x+z) - u(x) - 1_{|z|<R} Du(x).z] m(x,z) K(z) dz` on a node rule.
/// Inside the Taylor core the increment is `z^T D^2u z / 2`, with the
/// multiplier sampled at half the core radius.
pub fn levy_integral<F: Fn(&[f64]) -> f64>(
    rule: &LevyQuadrature,
    x: &[f64],
    jet: &LocalJet,
    eval: F,
    multiplier: Option<&Multiplier>,
    agg: Aggregate,
) -> f64 {
    let d = rule.dim;
    let mut total = 0.0;
    if rule.core_moment > 0.0 {
        let s_area: f64 = rule.core_dirs.weights.iter().sum();
        let scale = rule.core_moment / s_area;
        let mut zc = vec![0.0; d];
        for k in 0..rule.core_dirs.len() {
            let th = rule.core_dirs.dir(k);
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += th[i] * jet.hessian[i * d + j] * th[j];
                }
            }
            let m = match multiplier {
                Some(mf) => {
                    for i in 0..d {
                        zc[i] = 0.5 * rule.inner_radius * th[i];
                    }
                    mf.eval(x, &zc)
                }
                None => 1.0,
            };
            total += rule.core_dirs.weights[k] * scale * m * agg.apply(0.5 * q);
        }
    }
    let mut y = vec![0.0; d];
    for n in 0..rule.len() {
        let z = rule.point(n);
        for i in 0..d {
            y[i] = x[i] + z[i];
        }
        let mut inc = eval(&y) - jet.value;
        if rule.compensated[n] {
            for i in 0..d {
                inc -= jet.gradient[i] * z[i];
            }
        }
        let m = multiplier.map_or(1.0, |mf| mf.eval(x, z));
        total += rule.weights[n] * m * agg.apply(inc);
    }
    total
}

/// Node rule for `K_r` on a lattice of spacing `h`: compensation on
/// `B_{1/r}` and a Taylor core of `inner_radius_cells * h`.
pub fn grid_rule(kernel: &LevyKernel, r: f64, h: f64, scheme: &QuadratureScheme) -> Result<LevyQuadrature> {
    let kr = kernel.scale(r)?;
    LevyQuadrature::new(&kr, 1.0 / r, scheme.inner_radius_cells * h, scheme, &[])
}

/// `I[x,u]` with kernel `m K_r` and compensation on `B_{1/r}`.
pub fn levy_apply(
    u: &GridFunction,
    x: &[f64],
    kernel: &LevyKernel,
    multiplier: Option<&Multiplier>,
    r: f64,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    let rule = grid_rule(kernel, r, u.grid.h, scheme)?;
    levy_apply_with(u, x, &rule, multiplier)
}

/// [`levy_apply`] on a prebuilt rule.
pub fn levy_apply_with(u: &GridFunction, x: &[f64], rule: &LevyQuadrature, multiplier: Option<&Multiplier>) -> Result<f64> {
    let jet = HessianEstimate::at(u, x, u.grid.h)?;
    Ok(levy_integral(rule, x, &jet, |y| u.interpolate(y), multiplier, Aggregate::Linear))
}

/// `P+_{K,r}(u)(x)`.
pub fn nonlocal_pucci_plus(u: &GridFunction, x: &[f64], kernel: &LevyKernel, r: f64, scheme: &QuadratureScheme) -> Result<f64> {
    let rule = grid_rule(kernel, r, u.grid.h, scheme)?;
    let jet = HessianEstimate::at(u, x, u.grid.h)?;
    Ok(levy_integral(&rule, x, &jet, |y| u.interpolate(y), None, Aggregate::Positive))
}

/// `P-_{K,r}(u)(x)`.
pub fn nonlocal_pucci_minus(u: &GridFunction, x: &[f64], kernel: &LevyKernel, r: f64, scheme: &QuadratureScheme) -> Result<f64> {
    let rule = grid_rule(kernel, r, u.grid.h, scheme)?;
    let jet = HessianEstimate::at(u, x, u.grid.h)?;
    Ok(levy_integral(&rule, x, &jet, |y| u.interpolate(y), None, Aggregate::Negative))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// The extremal operators at scale `r` with a cached node rule.
#[derive(Debug, Clone)]
pub struct ExtremalOperator {
    pub params: EllipticityParams,
    pub r: f64,
    pub rule: LevyQuadrature,
}

impl ExtremalOperator {
    pub fn new(params: EllipticityParams, kernel: &LevyKernel, r: f64, h: f64, scheme: &QuadratureScheme) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            r,
            rule: grid_rule(kernel, r, h, scheme)?,
        })
    }

    /// `-P-(D^2u) - P-_{K,r}(u) + C0 r |Du|` from a jet and an evaluator.
    pub fn minus_from<F: Fn(&[f64]) -> f64>(&self, x: &[f64], jet: &LocalJet, eval: F) -> Result<f64> {
        let d = x.len();
        let loc = pucci_local_minus(&jet.hessian, d, &self.params)?;
        let nl = levy_integral(&self.rule, x, jet, eval, None, Aggregate::Negative);
        Ok(-loc - nl + self.params.c0 * self.r * norm(&jet.gradient))
    }

    /// `P+(D^2u) + P+_{K,r}(u) + C0 r |Du|` from a jet and an evaluator.
    pub fn plus_from<F: Fn(&[f64]) -> f64>(&self, x: &[f64], jet: &LocalJet, eval: F) -> Result<f64> {
        let d = x.len();
        let loc = pucci_local_plus(&jet.hessian, d, &self.params)?;
        let nl = levy_integral(&self.rule, x, jet, eval, None, Aggregate::Positive);
        Ok(loc + nl + self.params.c0 * self.r * norm(&jet.gradient))
    }

    pub fn residual_minus(&self, u: &GridFunction, x: &[f64]) -> Result<f64> {
        let jet = HessianEstimate::at(u, x, u.grid.h)?;
        self.minus_from(x, &jet, |y| u.interpolate(y))
    }
}

/// `-P-(D^2u)(x) - P-_{K,r}(u)(x) + C0 r |Du(x)|`.
pub fn extremal_residual_minus(
    u: &GridFunction,
    x: &[f64],
    params: &EllipticityParams,
    kernel: &LevyKernel,
    r: f64,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    ExtremalOperator::new(*params, kernel, r, u.grid.h, scheme)?.residual_minus(u, x)
}

/// `sup_a inf_b [-tr a D^2u - I_ab[x,u] + b.Du + c u + f]` at `x` (r = 1).
pub fn hjbi_eval(prob: &HJBIProblem, u: &GridFunction, x: &[f64], scheme: &QuadratureScheme) -> Result<f64> {
    if prob.controls.is_empty() || prob.controls.iter().any(|row| row.is_empty()) {
        return Err(Error::Domain("empty control family".into()));
    }
    let rule = grid_rule(&prob.kernel, 1.0, u.grid.h, scheme)?;
    let jet = HessianEstimate::at(u, x, u.grid.h)?;
    let d = x.len();
    let mut sup = f64::NEG_INFINITY;
    for row in &prob.controls {
        let mut inf = f64::INFINITY;
        for ctl in row {
            let a = (ctl.a)(x);
            let b = (ctl.b)(x);
            let mut v = 0.0;
            for i in 0..d {
                for j in 0..d {
                    v -= a[i * d + j] * jet.hessian[i * d + j];
                }
                v += b[i] * jet.gradient[i];
            }
            if !prob.kernel.is_zero() {
                v -= levy_integral(&rule, x, &jet, |y| u.interpolate(y), ctl.multiplier.as_ref(), Aggregate::Linear);
            }
            v += (ctl.c)(x) * jet.value + (ctl.f)(x);
            inf = inf.min(v);
        }
        sup = sup.max(inf);
    }
    Ok(sup)
}
