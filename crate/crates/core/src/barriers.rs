//! Explicit barrier functions and pointwise verification of their
//! differential inequalities against the extremal operators.
//!
//! Four constructions are provided: the radial special function `Psi`
//! (exponential profile with a polynomial cap), its rescaling to the cube of
//! half-width `r0`, the boundary barrier `psi_r` vanishing on a ball, and the
//! global barrier `2 - exp(-eta x1)`. Verification evaluates closed-form local
//! terms plus a node quadrature of the nonlocal term at two refinement levels
//! and uses the difference as the quadrature error estimate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{BoxDomain, Region};
use crate::kernels::{beta, beta_primitive, LevyKernel};
use crate::operators::{levy_integral, pucci_local_minus, pucci_local_plus, Aggregate, EllipticityParams, LocalJet};
use crate::quadrature::{gauss_legendre, LevyQuadrature, QuadratureScheme};
use crate::solver::SmoothFunction;

/// Largest `eta` tried by the doubling searches.
pub const ETA_CEILING: f64 = 1_099_511_627_776.0;
/// Absolute slack added to every quadrature error estimate.
pub const ABS_BUDGET: f64 = 1e-8;
/// Exponents beyond this overflow `M` or underflow `eps6`.
const MAX_EXPONENT: f64 = 700.0;
/// Radius where the special profile switches from the polynomial cap to the
/// exponential.
const CAP_RADIUS: f64 = 1.0 / 3.0;
const BOUNDARY_TABLE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    Special,
    RescaledSpecial,
    Boundary,
    Global,
    /// A user-supplied smooth function, checked with the same machinery.
    Candidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityForm {
    /// `P-(D^2 u) + P-_{K,r}(u) - C0 |Du| >= target`.
    SubsolutionMinus,
    /// `P+(D^2 u) + P+_{K,r}(u) + C0 |Du| <= target`.
    SupersolutionPlus,
}

/// Scalars fixed by a construction; absent ones are `None`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BarrierConstants {
    pub eta: f64,
    pub tau: Option<f64>,
    pub m: Option<f64>,
    pub r0: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub eps5: Option<f64>,
    pub eps6: Option<f64>,
    /// Ball radius of the boundary barrier.
    pub radius: Option<f64>,
    /// `x1` coordinate of the global barrier's kink.
    pub shift: Option<f64>,
    /// The constant `C` in `eta = (C + 1) / lambda` of the boundary barrier.
    pub proof_constant: Option<f64>,
    /// Value of the scalar certificate at the chosen `eta`.
    pub certificate: f64,
    pub sup_norm: f64,
}

/// Radial profile `e^{-eta rho}` outside `CAP_RADIUS`, and inside it
/// `e^{-k} q(rho / CAP_RADIUS)` with `q(t) = a + b t^2 + c t^4 + e t^5`
/// matching value and three derivatives at the junction (`k = eta / 3`).
#[derive(Debug, Clone, Copy)]
struct SpecialProfile {
    eta: f64,
    ek: f64,
    q: [f64; 4],
}

impl SpecialProfile {
    fn new(eta: f64) -> Self {
        let k = eta * CAP_RADIUS;
        let e5 = -(k * k * k + 3.0 * k * k + 3.0 * k) / 15.0;
        let c = (k * k + k - 15.0 * e5) / 8.0;
        let b = (-k - 4.0 * c - 5.0 * e5) / 2.0;
        let a = 1.0 - b - c - e5;
        Self {
            eta,
            ek: (-k).exp(),
            q: [a, b, c, e5],
        }
    }

    fn value(&self, rho: f64) -> f64 {
        if rho >= CAP_RADIUS {
            return (-self.eta * rho).exp();
        }
        let t = rho / CAP_RADIUS;
        let [a, b, c, e] = self.q;
        let t2 = t * t;
        self.ek * (a + t2 * (b + t2 * (c + e * t)))
    }

    /// `(phi', phi'', phi' / rho)`; the last is `phi''(0)` at the origin.
    fn derivatives(&self, rho: f64) -> (f64, f64, f64) {
        if rho >= CAP_RADIUS {
            let e = (-self.eta * rho).exp();
            let d1 = -self.eta * e;
            return (d1, self.eta * self.eta * e, d1 / rho);
        }
        let t = rho / CAP_RADIUS;
        let [_, b, c, e] = self.q;
        let s2 = self.ek / (CAP_RADIUS * CAP_RADIUS);
        let t2 = t * t;
        let d1 = self.ek / CAP_RADIUS * t * (2.0 * b + t2 * (4.0 * c + 5.0 * e * t));
        let d2 = s2 * (2.0 * b + t2 * (12.0 * c + 20.0 * e * t));
        let over = s2 * (2.0 * b + t2 * (4.0 * c + 5.0 * e * t));
        (d1, d2, over)
    }
}

/// `psi~(s) = int_0^s 2 exp(-eta l - eta B(l)) dl - s` with `B' = beta`,
/// tabulated on `[0, delta2]` and interpolated by cubic Hermite splines.
#[derive(Debug, Clone)]
struct BoundaryProfile {
    kernel: LevyKernel,
    eta: f64,
    delta2: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl BoundaryProfile {
    fn slope_from(eta: f64, s: f64, b: f64) -> f64 {
        2.0 * (-eta * s - eta * b).exp() - 1.0
    }

    fn build(kernel: &LevyKernel, eta: f64, delta2: f64) -> Result<Self> {
        let n = BOUNDARY_TABLE;
        let step = delta2 / n as f64;
        let (gx, gw) = gauss_legendre(4);
        let mut values = Vec::with_capacity(n + 1);
        let mut slopes = Vec::with_capacity(n + 1);
        let cells: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|k| -> Result<(f64, f64)> {
                let s0 = k as f64 * step;
                let mut integral = 0.0;
                for (x, w) in gx.iter().zip(&gw) {
                    let l = s0 + 0.5 * step * (1.0 + x);
                    integral += 0.5 * step * w * Self::slope_from(eta, l, beta_primitive(kernel, l)?);
                }
                Ok((integral, Self::slope_from(eta, s0, beta_primitive(kernel, s0)?)))
            })
            .collect::<Result<_>>()?;
        let mut acc = 0.0;
        for (inc, slope) in cells {
            values.push(acc);
            slopes.push(slope);
            acc += inc;
        }
        values.push(acc);
        slopes.push(Self::slope_from(eta, delta2, beta_primitive(kernel, delta2)?));
        Ok(Self {
            kernel: kernel.clone(),
            eta,
            delta2,
            step,
            values,
            slopes,
        })
    }

    /// Table value, with `s` clamped to `[0, delta2]`.
    fn value(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.delta2);
        let k = ((s / self.step) as usize).min(BOUNDARY_TABLE - 1);
        let t = (s - k as f64 * self.step) / self.step;
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }

    /// `(psi~'(s), psi~''(s))` from direct kernel integrals, `s > 0`.
    fn derivatives(&self, s: f64) -> Result<(f64, f64)> {
        let e = (-self.eta * s - self.eta * beta_primitive(&self.kernel, s)?).exp();
        Ok((2.0 * e - 1.0, -2.0 * self.eta * (1.0 + beta(&self.kernel, s)?) * e))
    }
}

#[derive(Clone)]
enum Shape {
    Special {
        profile: SpecialProfile,
        m: f64,
        floor: f64,
        /// `1 / r0` for the rescaled variant, 1 otherwise.
        stretch: f64,
    },
    Boundary {
        profile: BoundaryProfile,
        radius: f64,
    },
    Global {
        eta: f64,
        shift: f64,
    },
    Candidate(SmoothFunction),
}

/// A constructed barrier with closed-form derivatives.
#[derive(Clone)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    pub dim: usize,
    pub constants: BarrierConstants,
    shape: Shape,
}

impl std::fmt::Debug for BarrierSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BarrierSpec")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .finish()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Jet of `x -> f(|x|)` from `f`, `f'`, `f''` and `f'/rho`.
fn radial_jet(x: &[f64], value: f64, d1: f64, d2: f64, over: f64) -> LocalJet {
    let d = x.len();
    let rho = norm(x);
    let mut gradient = vec![0.0; d];
    let mut hessian = vec![0.0; d * d];
    if rho < 1e-300 {
        for i in 0..d {
            hessian[i * d + i] = d2;
        }
        return LocalJet { value, gradient, hessian };
    }
    for i in 0..d {
        let ui = x[i] / rho;
        gradient[i] = d1 * ui;
        for j in 0..d {
            let uj = x[j] / rho;
            let id = if i == j { 1.0 } else { 0.0 };
            hessian[i * d + j] = d2 * ui * uj + over * (id - ui * uj);
        }
    }
    LocalJet { value, gradient, hessian }
}

/// The smooth cutoff `exp(1 - 1/(1 - |x|^2))` on the unit ball, zero outside.
pub fn cutoff(x: &[f64]) -> f64 {
    let q: f64 = x.iter().map(|v| v * v).sum();
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - q)).exp()
    }
}

impl BarrierSpec {
    /// Wraps an arbitrary smooth function for [`verify_inequality`].
    pub fn candidate(dim: usize, f: SmoothFunction) -> Self {
        Self {
            kind: BarrierKind::Candidate,
            dim,
            constants: BarrierConstants {
                sup_norm: f64::NAN,
                certificate: f64::NAN,
                ..Default::default()
            },
            shape: Shape::Candidate(f),
        }
    }

    /// Value plus a kind-specific constant. Increments of `raw` equal
    /// increments of the barrier; the special barrier uses it to avoid
    /// cancellation against its tiny floor.
    fn raw(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Special { profile, m, stretch, .. } => m * profile.value(stretch * norm(x)),
            Shape::Boundary { profile, radius } => profile.value((norm(x) - radius) / radius),
            Shape::Global { eta, shift } => {
                if x[0] >= *shift {
                    2.0 - (-eta * (x[0] - shift)).exp()
                } else {
                    1.0
                }
            }
            Shape::Candidate(f) => (f.value)(x),
        }
    }

    fn offset(&self) -> f64 {
        match &self.shape {
            Shape::Special { m, floor, .. } => m * floor,
            _ => 0.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.raw(x) - self.offset()
    }

    /// Closed-form jet in `raw` normalization.
    fn raw_jet(&self, x: &[f64]) -> Result<LocalJet> {
        match &self.shape {
            Shape::Special { profile, m, stretch, .. } => {
                let rho = stretch * norm(x);
                let (d1, d2, over) = profile.derivatives(rho);
                let s = *stretch;
                Ok(radial_jet(x, m * profile.value(rho), m * s * d1, m * s * s * d2, m * s * s * over))
            }
            Shape::Boundary { profile, radius } => {
                let rho = norm(x);
                let s = (rho - radius) / radius;
                if !(s > 0.0 && s < profile.delta2) {
                    return Err(Error::Domain(format!(
                        "boundary barrier is differentiable only for 0 < d(x)/r < delta2, got {s:.3e}"
                    )));
                }
                let (p1, p2) = profile.derivatives(s)?;
                let r = *radius;
                Ok(radial_jet(x, profile.value(s), p1 / r, p2 / (r * r), p1 / (r * rho)))
            }
            Shape::Global { eta, shift } => {
                if x[0] <= *shift {
                    return Err(Error::Domain("global barrier is not differentiable at x1 <= shift".into()));
                }
                let d = x.len();
                let e = (-eta * (x[0] - shift)).exp();
                let mut gradient = vec![0.0; d];
                let mut hessian = vec![0.0; d * d];
                gradient[0] = eta * e;
                hessian[0] = -eta * eta * e;
                Ok(LocalJet {
                    value: 2.0 - e,
                    gradient,
                    hessian,
                })
            }
            Shape::Candidate(f) => Ok(f.jet(x)),
        }
    }

    pub fn jet(&self, x: &[f64]) -> Result<LocalJet> {
        let mut j = self.raw_jet(x)?;
        j.value -= self.offset();
        Ok(j)
    }

    /// Natural length scale of the barrier near `x`; the Taylor core of
    /// the quadrature is a small multiple of it.
    fn feature_length(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Special { profile, stretch, .. } => 1.0 / (profile.eta * stretch),
            Shape::Boundary { profile, radius } => {
                let d = norm(x) - radius;
                let to_cap = radius * (1.0 + profile.delta2) - norm(x);
                (radius / profile.eta).min(d).min(to_cap.abs())
            }
            Shape::Global { eta, shift } => (1.0 / eta).min(x[0] - shift),
            Shape::Candidate(_) => 1.0,
        }
    }

    /// Radius past which `raw(x + z)` is described by [`Self::far_bounds`].
    fn far_radius(&self, xmax: f64) -> Option<f64> {
        match &self.shape {
            Shape::Special { profile, stretch, .. } => Some(2.0 * xmax + (CAP_RADIUS + 40.0 / profile.eta) / stretch),
            Shape::Boundary { profile, radius } => Some(xmax + radius * (1.0 + profile.delta2)),
            _ => None,
        }
    }

    /// Bounds on `raw(x + z) - raw(x)` for `|z| >= outer`.
    fn far_bounds(&self, x: &[f64], outer: f64) -> (f64, f64) {
        let here = self.raw(x);
        match &self.shape {
            Shape::Special { profile, m, stretch, .. } => {
                let reach = (stretch * (outer - norm(x))).max(0.0);
                (-here, -here + m * profile.value(reach))
            }
            Shape::Boundary { profile, .. } => {
                let cap = profile.value(profile.delta2);
                (cap - here, cap - here)
            }
            Shape::Global { .. } => (1.0 - here, 2.0 - here),
            Shape::Candidate(_) => (0.0, 0.0),
        }
    }

    /// Whether `x` lies where the barrier's inequality is asserted.
    fn in_validity_zone(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Boundary { radius, .. } => {
                let d = norm(x) - radius;
                let delta1 = self.constants.delta1.unwrap_or(0.0);
                d > 1e-12 * radius && d < delta1 * radius
            }
            Shape::Global { shift, .. } => x[0] > *shift,
            _ => true,
        }
    }
}

/// `lambda eta^2 - Lambda (d-1) eta - 2 eta^{3/2} J - 4 eta^2 J / log(eta)^2
/// - T - 2 eta^2 J / log(eta) - C0 eta`, with `tau = log(eta) / (2 eta)`.
pub fn special_certificate(eta: f64, dim: usize, p: &EllipticityParams, j: f64, t: f64) -> f64 {
    let l = eta.ln();
    let e2 = eta * eta;
    p.lambda * e2 - p.big_lambda * (dim as f64 - 1.0) * eta - 2.0 * eta.powf(1.5) * j - 4.0 * e2 * j / (l * l) - t - 2.0 * e2 * j / l
        - p.c0 * eta
}

/// The special barrier `Psi = M (phi - e^{-2 sqrt(d) eta})`.
///
/// `eta` is the smallest power of two (at least 2) passing
/// [`special_certificate`]; `M` is the smallest power of two with `Psi >= 2`
/// on the cube of side 3 centred at the origin.
pub fn build_special(p: &EllipticityParams, kernel: &LevyKernel) -> Result<BarrierSpec> {
    p.validate()?;
    let dim = kernel.dim();
    let (j, t) = kernel.moments()?;
    let sd = (dim as f64).sqrt();
    let mut eta = 2.0;
    loop {
        if special_certificate(eta, dim, p, j, t) >= 0.0 {
            break;
        }
        eta *= 2.0;
        if eta > ETA_CEILING {
            return Err(Error::Construction(format!(
                "no eta <= 2^40 satisfies the special-barrier certificate (J = {j:.3e}, T = {t:.3e})"
            )));
        }
    }
    if 2.0 * sd * eta > MAX_EXPONENT {
        return Err(Error::Construction(format!(
            "eta = {eta:e} makes the special barrier unrepresentable in double precision"
        )));
    }
    let profile = SpecialProfile::new(eta);
    let floor = (-2.0 * sd * eta).exp();
    let corner = profile.value(1.5 * sd) - floor;
    let mut m = (2.0 / corner).log2().ceil().exp2();
    while m * corner < 2.0 {
        m *= 2.0;
    }
    for k in 0..=256 {
        let rho = CAP_RADIUS * k as f64 / 256.0;
        if profile.derivatives(rho).0 > 0.0 {
            return Err(Error::Construction(format!("polynomial cap is not decreasing at |x| = {rho:.4}")));
        }
    }
    let sup = (m * (profile.value(0.0) - floor)).max(m * floor);
    Ok(BarrierSpec {
        kind: BarrierKind::Special,
        dim,
        constants: BarrierConstants {
            eta,
            tau: Some(eta.ln() / (2.0 * eta)),
            m: Some(m),
            certificate: special_certificate(eta, dim, p, j, t),
            sup_norm: sup,
            ..Default::default()
        },
        shape: Shape::Special {
            profile,
            m,
            floor,
            stretch: 1.0,
        },
    })
}

/// `Psi(x / r0)` with `r0 = 1 / (9 sqrt(d))`.
pub fn build_rescaled_special(p: &EllipticityParams, kernel: &LevyKernel) -> Result<BarrierSpec> {
    let mut b = build_special(p, kernel)?;
    let r0 = 1.0 / (9.0 * (b.dim as f64).sqrt());
    b.kind = BarrierKind::RescaledSpecial;
    b.constants.r0 = Some(r0);
    if let Shape::Special { stretch, .. } = &mut b.shape {
        *stretch = 1.0 / r0;
    }
    Ok(b)
}

/// The boundary barrier `psi_r(x) = psi~(min(d(x, B_r) / r, delta2))`.
///
/// `eta = (C + 1) / lambda` with `C = Lambda (d-1) + C0 + J + 2`, which
/// collects the curvature of the distance function, the drift, the
/// second-moment bound of the near field and the Lipschitz bound of the far
/// field (all scaled by `r^-2`).
pub fn build_boundary_barrier(r: f64, p: &EllipticityParams, kernel: &LevyKernel) -> Result<BarrierSpec> {
    p.validate()?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::param("r", "must lie in (0, 1)"));
    }
    let dim = kernel.dim();
    let (j, _) = kernel.moments()?;
    let c = p.big_lambda * (dim as f64 - 1.0) + p.c0 + j + 2.0;
    let eta = (c + 1.0) / p.lambda;
    // s(eta): psi~'(s) = 1/2, i.e. eta (s + B(s)) = ln(4/3); capped at 1.
    let g = |s: f64| -> Result<f64> { Ok(eta * (s + beta_primitive(kernel, s)?) - (4.0f64 / 3.0).ln()) };
    let s_eta = if g(1.0)? <= 0.0 {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if g(mid)? <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !(s_eta > 1e-12) {
        return Err(Error::Construction(format!(
            "psi~' drops below 1/2 immediately (eta = {eta:.3e})"
        )));
    }
    let delta2 = 0.5 * s_eta;
    let delta1 = (delta2 / 4.0).min(1.0);
    let profile = BoundaryProfile::build(kernel, eta, delta2)?;
    let eps5 = profile.value(delta1);
    let cap = profile.value(delta2);
    Ok(BarrierSpec {
        kind: BarrierKind::Boundary,
        dim,
        constants: BarrierConstants {
            eta,
            delta1: Some(delta1),
            delta2: Some(delta2),
            eps5: Some(eps5),
            radius: Some(r),
            proof_constant: Some(c),
            certificate: -1.0,
            sup_norm: cap,
            ..Default::default()
        },
        shape: Shape::Boundary { profile, radius: r },
    })
}

/// `-lambda eta^2 + C0 eta + 2 eta J / tau + T`.
pub fn global_certificate(eta: f64, tau: f64, p: &EllipticityParams, j: f64, t: f64) -> f64 {
    -p.lambda * eta * eta + p.c0 * eta + 2.0 * eta * j / tau + t
}

/// `psi_g = 2 - exp(-eta (x1 - s))` for `x1 >= s`, 1 otherwise, with the
/// kink `s` placed `2 diam` below the centre of `omega` in `x1`.
pub fn build_global_barrier(omega: &BoxDomain, p: &EllipticityParams, kernel: &LevyKernel) -> Result<BarrierSpec> {
    p.validate()?;
    let dim = kernel.dim();
    if omega.dim() != dim {
        return Err(Error::param("omega", "dimension differs from the kernel's"));
    }
    let r0 = omega.diameter();
    let shift = omega.center()[0] - 2.0 * r0;
    let tau = r0.min(1.0);
    let (j, t) = kernel.moments()?;
    let mut eta: f64 = 1.0;
    while global_certificate(eta, tau, p, j, t) >= 0.0 {
        eta *= 2.0;
        if eta > ETA_CEILING {
            return Err(Error::Construction("no eta <= 2^40 makes the global barrier a strict supersolution".into()));
        }
    }
    let reach = omega.upper[0] - shift;
    if eta * reach > MAX_EXPONENT {
        return Err(Error::Construction(format!(
            "eps6 = exp(-{:.1}) underflows; the domain is too wide for eta = {eta:e}",
            eta * reach
        )));
    }
    let cert = global_certificate(eta, tau, p, j, t);
    let eps6 = (-cert * (-eta * reach).exp()).min(0.5);
    Ok(BarrierSpec {
        kind: BarrierKind::Global,
        dim,
        constants: BarrierConstants {
            eta,
            tau: Some(tau),
            eps6: Some(eps6),
            shift: Some(shift),
            certificate: cert,
            sup_norm: 2.0,
            ..Default::default()
        },
        shape: Shape::Global { eta, shift },
    })
}

/// One evaluated sample.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub scale: f64,
    pub point: Vec<f64>,
    pub residual: f64,
    pub error_estimate: f64,
    /// Cutoff value `xi(x)` (zero for checks without cutoff).
    pub cutoff: f64,
    /// Signed slack of the inequality; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub barrier: BarrierKind,
    pub form: InequalityForm,
    pub scales: Vec<f64>,
    pub n_points: usize,
    /// Requested points outside the barrier's validity zone.
    pub excluded: usize,
    pub samples: Vec<SampleRecord>,
    pub worst_margin: f64,
    /// The cutoff constant `C`, or the extreme residual for plain checks.
    pub empirical_constant: f64,
    /// The same constant restricted to each scale.
    pub scale_constants: Vec<f64>,
    pub budget: f64,
    pub pass: bool,
    pub constants: BarrierConstants,
}

impl VerificationReport {
    /// `scale,x1..xd,residual,error_estimate,cutoff,margin`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.samples.first().map_or(0, |s| s.point.len());
        let mut head = vec!["scale".to_string()];
        head.extend((1..=d).map(|i| format!("x{i}")));
        head.extend(["residual", "error_estimate", "cutoff", "margin"].map(String::from));
        writeln!(w, "{}", head.join(","))?;
        for s in &self.samples {
            let mut row = vec![format!("{:e}", s.scale)];
            row.extend(s.point.iter().map(|v| format!("{v:e}")));
            row.extend([s.residual, s.error_estimate, s.cutoff, s.margin].map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Cell-centred lattice of `per_axis^d` points over the region's bounding
/// box, filtered by membership. Annuli in one or two dimensions use a polar
/// lattice instead.
pub fn sample_region(region: &Region, dim: usize, per_axis: usize) -> Result<Vec<Vec<f64>>> {
    if per_axis == 0 {
        return Err(Error::param("per_axis", "must be positive"));
    }
    if let Region::Annulus { center, inner, outer } = region {
        if dim <= 2 && center.len() == dim {
            return Ok(annulus_samples(center, *inner, *outer, per_axis));
        }
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) = match region {
        Region::Ball { center, radius } | Region::Annulus { center, outer: radius, .. } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        Region::Cube { center, half } => (
            center.iter().map(|c| c - half).collect(),
            center.iter().map(|c| c + half).collect(),
        ),
        Region::Box(b) => (b.lower.clone(), b.upper.clone()),
        Region::Mask(_) => return Err(Error::Unsupported("sampling a lattice mask without its lattice".into())),
    };
    if lo.len() != dim {
        return Err(Error::param("region", "dimension mismatch"));
    }
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut x = vec![0.0; dim];
        for k in 0..dim {
            let i = idx % per_axis;
            idx /= per_axis;
            x[k] = lo[k] + (i as f64 + 0.5) * (hi[k] - lo[k]) / per_axis as f64;
        }
        if region.contains(&x) == Some(true) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Polar lattice: `n` cell-centred radii times `n` angles in the plane, or
/// `n` radii on each side in one dimension.
fn annulus_samples(center: &[f64], inner: f64, outer: f64, n: usize) -> Vec<Vec<f64>> {
    let radii: Vec<f64> = (0..n).map(|i| inner + (i as f64 + 0.5) * (outer - inner) / n as f64).collect();
    let mut out = Vec::new();
    if center.len() == 1 {
        for side in [-1.0, 1.0] {
            out.extend(radii.iter().map(|r| vec![center[0] + side * r]));
        }
    } else {
        for r in &radii {
            for k in 0..n {
                let t = (k as f64 + 0.5) * std::f64::consts::TAU / n as f64;
                out.push(vec![center[0] + r * t.cos(), center[1] + r * t.sin()]);
            }
        }
    }
    out
}

/// Node rules at the base and refined levels, keyed by the core exponent.
struct RulePair {
    coarse: LevyQuadrature,
    fine: LevyQuadrature,
}

struct Evaluator<'a> {
    barrier: &'a BarrierSpec,
    params: EllipticityParams,
    form: InequalityForm,
    rules: BTreeMap<i32, RulePair>,
    zero_kernel: bool,
}

/// Core exponent `k` with `rho_in = cells * 2^k <= cells * feature / 8`.
fn core_exponent(feature: f64) -> i32 {
    (feature / 8.0).log2().floor() as i32
}

impl<'a> Evaluator<'a> {
    fn new(
        barrier: &'a BarrierSpec,
        form: InequalityForm,
        p: &EllipticityParams,
        kernel: &LevyKernel,
        r: f64,
        points: &[Vec<f64>],
        quad: &QuadratureScheme,
    ) -> Result<Self> {
        quad.validate()?;
        p.validate()?;
        if kernel.dim() != barrier.dim {
            return Err(Error::param("kernel", "dimension differs from the barrier's"));
        }
        let zero_kernel = kernel.is_zero();
        let mut rules = BTreeMap::new();
        if !zero_kernel {
            let kr = kernel.scale(r)?;
            let xmax = points.iter().map(|x| norm(x)).fold(0.0, f64::max);
            let outer = match barrier.far_radius(xmax) {
                Some(f) => f.max(1.0 / r),
                None => kr.tail_radius(quad.tail_tol)?.max(1.0 / r),
            };
            let refined = quad.refined();
            let mut exps: Vec<i32> = points.iter().map(|x| core_exponent(barrier.feature_length(x))).collect();
            exps.sort_unstable();
            exps.dedup();
            for k in exps {
                let h = 2f64.powi(k);
                let coarse = LevyQuadrature::with_outer(&kr, 1.0 / r, quad.inner_radius_cells * h, quad, &[], outer)?;
                let fine =
                    LevyQuadrature::with_outer(&kr, 1.0 / r, refined.inner_radius_cells * h * 0.5, &refined, &[], outer)?;
                rules.insert(k, RulePair { coarse, fine });
            }
        }
        Ok(Self {
            barrier,
            params: *p,
            form,
            rules,
            zero_kernel,
        })
    }

    fn nonlocal(&self, rule: &LevyQuadrature, x: &[f64], jet: &LocalJet, agg: Aggregate) -> (f64, f64) {
        let b = self.barrier;
        let v = levy_integral(rule, x, jet, |y| b.raw(y), None, agg);
        if rule.dropped_tail == 0.0 {
            return (v, 0.0);
        }
        let (lo, hi) = b.far_bounds(x, rule.outer_radius);
        let (a, c) = (agg.apply(lo), agg.apply(hi));
        (v + 0.5 * (a + c) * rule.dropped_tail, 0.5 * (c - a).abs() * rule.dropped_tail)
    }

    /// `(residual, error estimate)` at `x`.
    fn eval(&self, x: &[f64]) -> Result<(f64, f64)> {
        let jet = self.barrier.raw_jet(x)?;
        let d = x.len();
        let grad = norm(&jet.gradient);
        let (local, agg, drift) = match self.form {
            InequalityForm::SubsolutionMinus => (
                pucci_local_minus(&jet.hessian, d, &self.params)?,
                Aggregate::Negative,
                -self.params.c0 * grad,
            ),
            InequalityForm::SupersolutionPlus => (
                pucci_local_plus(&jet.hessian, d, &self.params)?,
                Aggregate::Positive,
                self.params.c0 * grad,
            ),
        };
        if self.zero_kernel {
            return Ok((local + drift, 0.0));
        }
        let pair = &self.rules[&core_exponent(self.barrier.feature_length(x))];
        let (vc, ec) = self.nonlocal(&pair.coarse, x, &jet, agg);
        let (vf, ef) = self.nonlocal(&pair.fine, x, &jet, agg);
        Ok((local + drift + vf, (vf - vc).abs() + ec.max(ef)))
    }
}

/// Checks `P-(D^2 Psi) + P-_{K,r}(Psi) - C0 |D Psi| >= -C xi` for every scale
/// and sample, where `xi` is [`cutoff`] (rescaled by `r0` for the rescaled
/// barrier), and reports the smallest admissible `C`.
pub fn verify_special(
    b: &BarrierSpec,
    p: &EllipticityParams,
    kernel: &LevyKernel,
    scales: &[f64],
    sample: &[Vec<f64>],
    quad: &QuadratureScheme,
) -> Result<VerificationReport> {
    let stretch = match (&b.kind, &b.shape) {
        (BarrierKind::Special | BarrierKind::RescaledSpecial, Shape::Special { stretch, .. }) => *stretch,
        _ => return Err(Error::Precondition("verify_special needs a special barrier".into())),
    };
    if scales.is_empty() || sample.is_empty() {
        return Err(Error::InsufficientData("no scales or no sample points".into()));
    }
    let mut raw = Vec::new();
    for &r in scales {
        let ev = Evaluator::new(b, InequalityForm::SubsolutionMinus, p, kernel, r, sample, quad)?;
        let vals: Vec<(f64, f64)> = sample.par_iter().map(|x| ev.eval(x)).collect::<Result<_>>()?;
        raw.push(vals);
    }
    let xi: Vec<f64> = sample
        .iter()
        .map(|x| cutoff(&x.iter().map(|v| v * stretch).collect::<Vec<_>>()))
        .collect();
    // Smallest C making every sample inside the cutoff support pass.
    let need = |res: f64, err: f64, xi: f64| -> f64 {
        if xi > 0.0 {
            // The factor absorbs rounding in `res + C xi` at the defining sample.
            (-(res + err + ABS_BUDGET)).max(0.0) / xi * (1.0 + 1e-12)
        } else {
            0.0
        }
    };
    let scale_constants: Vec<f64> = raw
        .iter()
        .map(|vals| vals.iter().zip(&xi).fold(0.0f64, |m, ((res, err), xi)| m.max(need(*res, *err, *xi))))
        .collect();
    let c = scale_constants.iter().cloned().fold(0.0, f64::max);
    let mut samples = Vec::with_capacity(scales.len() * sample.len());
    let mut worst = f64::INFINITY;
    let mut pass = c.is_finite();
    for (vals, &r) in raw.iter().zip(scales) {
        for ((res, err), (x, &xi)) in vals.iter().zip(sample.iter().zip(&xi)) {
            let margin = res + c * xi;
            if !(margin >= -(err + ABS_BUDGET)) {
                pass = false;
            }
            worst = worst.min(margin);
            samples.push(SampleRecord {
                scale: r,
                point: x.clone(),
                residual: *res,
                error_estimate: *err,
                cutoff: xi,
                margin,
            });
        }
    }
    Ok(VerificationReport {
        barrier: b.kind,
        form: InequalityForm::SubsolutionMinus,
        scales: scales.to_vec(),
        n_points: sample.len(),
        excluded: 0,
        samples,
        worst_margin: worst,
        empirical_constant: c,
        scale_constants,
        budget: ABS_BUDGET,
        pass,
        constants: b.constants.clone(),
    })
}

/// Pointwise check of one inequality form on `per_axis^d` lattice samples
/// of `region` that lie in the barrier's validity zone.
///
/// Targets: `>= 0` for the minus form; for the plus form `<= -eps6` for the
/// global barrier and `<= -1` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn verify_inequality(
    b: &BarrierSpec,
    form: InequalityForm,
    region: &Region,
    per_axis: usize,
    p: &EllipticityParams,
    kernel: &LevyKernel,
    r: f64,
    quad: &QuadratureScheme,
) -> Result<VerificationReport> {
    let all = sample_region(region, b.dim, per_axis)?;
    let points: Vec<Vec<f64>> = all.iter().filter(|x| b.in_validity_zone(x)).cloned().collect();
    if points.is_empty() {
        return Err(Error::InsufficientData("no sample point lies in the validity zone".into()));
    }
    let ev = Evaluator::new(b, form, p, kernel, r, &points, quad)?;
    let vals: Vec<(f64, f64)> = points.par_iter().map(|x| ev.eval(x)).collect::<Result<_>>()?;
    let target = match form {
        InequalityForm::SubsolutionMinus => 0.0,
        InequalityForm::SupersolutionPlus => match b.kind {
            BarrierKind::Global => -b.constants.eps6.unwrap_or(0.0),
            _ => -1.0,
        },
    };
    let mut samples = Vec::with_capacity(points.len());
    let mut worst = f64::INFINITY;
    let mut extreme = match form {
        InequalityForm::SubsolutionMinus => f64::INFINITY,
        InequalityForm::SupersolutionPlus => f64::NEG_INFINITY,
    };
    let mut pass = true;
    for (x, (res, err)) in points.iter().zip(vals) {
        let margin = match form {
            InequalityForm::SubsolutionMinus => {
                extreme = extreme.min(res);
                res - target
            }
            InequalityForm::SupersolutionPlus => {
                extreme = extreme.max(res);
                target - res
            }
        };
        if !(margin >= -(err + ABS_BUDGET)) {
            pass = false;
        }
        worst = worst.min(margin);
        samples.push(SampleRecord {
            scale: r,
            point: x.clone(),
            residual: res,
            error_estimate: err,
            cutoff: 0.0,
            margin,
        });
    }
    Ok(VerificationReport {
        barrier: b.kind,
        form,
        scales: vec![r],
        n_points: points.len(),
        excluded: all.len() - points.len(),
        samples,
        worst_margin: worst,
        empirical_constant: extreme,
        scale_constants: vec![extreme],
        budget: ABS_BUDGET,
        pass,
        constants: b.constants.clone(),
    })
}
