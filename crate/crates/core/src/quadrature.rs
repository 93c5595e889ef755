//! Radial and angular quadrature primitives and the node rules used to
//! discretize Levy integrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::LevyKernel;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Surface measure of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            let h = d as f64 / 2.0;
            2.0 * std::f64::consts::PI.powf(h) / gamma(h)
        }
    }
}

/// Lanczos approximation of the gamma function for positive arguments.
pub fn gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Unit directions with weights summing to the sphere area.
#[derive(Debug, Clone)]
pub struct AngularRule {
    pub dim: usize,
    pub dirs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AngularRule {
    /// `n` is the requested number of directions (ignored in d = 1).
    /// Every rule is symmetric under `theta -> -theta`.
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        match dim {
            1 => Ok(Self {
                dim,
                dirs: vec![1.0, -1.0],
                weights: vec![1.0, 1.0],
            }),
            2 => {
                let n = n.max(4).div_ceil(2) * 2;
                let mut dirs = Vec::with_capacity(2 * n);
                for k in 0..n {
                    let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                    dirs.push(t.cos());
                    dirs.push(t.sin());
                }
                let w = 2.0 * std::f64::consts::PI / n as f64;
                Ok(Self {
                    dim,
                    dirs,
                    weights: vec![w; n],
                })
            }
            3 => {
                let half = (n.max(8) / 2).max(4);
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                let mut dirs = Vec::with_capacity(6 * half);
                let mut neg = Vec::with_capacity(3 * half);
                for k in 0..half {
                    let z = (k as f64 + 0.5) / half as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    let v = [rho * t.cos(), rho * t.sin(), z];
                    dirs.extend_from_slice(&v);
                    neg.extend(v.iter().map(|c| -c));
                }
                dirs.extend(neg);
                let w = 4.0 * std::f64::consts::PI / (2 * half) as f64;
                Ok(Self {
                    dim,
                    dirs,
                    weights: vec![w; 2 * half],
                })
            }
            _ => Err(Error::Unsupported(format!(
                "angular quadrature in dimension {dim} (supported: 1, 2, 3)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dir(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }
}

/// One-dimensional integration of `f` over `(a, b)` where `f` may be
/// singular at 0 or decay slowly at infinity. Pieces touching 0 or infinity
/// are summed over dyadic shells with a geometric remainder.
#[derive(Debug, Clone)]
pub struct RadialIntegrator {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rel_tol: f64,
}

const MAX_SHELLS: usize = 4000;

impl Default for RadialIntegrator {
    fn default() -> Self {
        Self::new(20, 1e-13)
    }
}

impl RadialIntegrator {
    pub fn new(order: usize, rel_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self {
            nodes,
            weights,
            rel_tol,
        }
    }

    fn gl<F: Fn(f64) -> f64>(&self, f: &F, p: f64, q: f64) -> f64 {
        let c = 0.5 * (p + q);
        let h = 0.5 * (q - p);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    fn finite<F: Fn(f64) -> f64>(&self, f: &F, p: f64, q: f64) -> f64 {
        if q <= p {
            return 0.0;
        }
        let n = ((q / p).log2().ceil() as usize).clamp(1, 200);
        let ratio = (q / p).powf(1.0 / n as f64);
        let mut s = 0.0;
        let mut lo = p;
        for k in 0..n {
            let hi = if k + 1 == n { q } else { lo * ratio };
            s += self.gl(f, lo, hi);
            lo = hi;
        }
        s
    }

    /// Sum of dyadic shells moving from `start` towards 0 (`inward`) or infinity.
    fn series<F: Fn(f64) -> f64>(&self, f: &F, start: f64, inward: bool, label: &str) -> Result<f64> {
        let mut sum = 0.0;
        let mut prev: Option<f64> = None;
        let mut prev_q: Option<f64> = None;
        let mut zeros = 0;
        let mut near_one = 0;
        let mut r = start;
        for _ in 0..MAX_SHELLS {
            let (p, q) = if inward { (r * 0.5, r) } else { (r, r * 2.0) };
            r = if inward { p } else { q };
            let c = self.gl(f, p, q);
            if !c.is_finite() {
                return Err(Error::NonIntegrable(format!("non-finite shell contribution ({label})")));
            }
            sum += c;
            if sum.abs() > 1e300 {
                return Err(Error::NonIntegrable(format!("integral diverges ({label})")));
            }
            if c == 0.0 {
                zeros += 1;
                if zeros >= 3 {
                    return Ok(sum);
                }
                prev = Some(c);
                continue;
            }
            zeros = 0;
            if let Some(pc) = prev.filter(|v| *v != 0.0) {
                let qk = c / pc;
                if qk >= 1.0 - 1e-6 {
                    near_one += 1;
                    if near_one > 200 {
                        return Err(Error::NonIntegrable(format!(
                            "shell contributions do not decay ({label})"
                        )));
                    }
                } else {
                    near_one = 0;
                }
                if qk > 0.0 && qk < 1.0 - 1e-9 {
                    let tail = c * qk / (1.0 - qk);
                    let stable = prev_q.is_some_and(|pq: f64| (pq - qk).abs() <= 1e-9 * qk);
                    if tail.abs() <= self.rel_tol * sum.abs() || (stable && tail.abs() < 1e3 * sum.abs()) {
                        return Ok(sum + tail);
                    }
                }
                prev_q = Some(qk);
            }
            prev = Some(c);
        }
        Err(Error::NonIntegrable(format!("shell series did not settle ({label})")))
    }

    /// Integral of `f` over `(a, b)`; `b` may be infinite. `breaks` lists
    /// interior points where `f` is not smooth.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let mut pts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|t| *t > a && *t < b && t.is_finite())
            .collect();
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pts.dedup();
        let mut edges = vec![a];
        edges.extend(pts);
        edges.push(b);
        if edges.len() == 2 && a == 0.0 && b.is_infinite() {
            edges.insert(1, 1.0);
        }
        let mut total = 0.0;
        for win in edges.windows(2) {
            let (p, q) = (win[0], win[1]);
            total += match (p == 0.0, q.is_infinite()) {
                (true, true) => unreachable!(),
                (true, false) => self.series(&f, q, true, "near the origin")?,
                (false, true) => self.series(&f, p, false, "at infinity")?,
                (false, false) => self.finite(&f, p, q),
            };
        }
        Ok(total)
    }
}

/// Parameters of the Levy-integral discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureScheme {
    /// Radius of the Taylor core, in grid cells.
    pub inner_radius_cells: f64,
    /// Radial shells per octave of |z|.
    pub shells: usize,
    /// Gauss-Legendre nodes per shell.
    pub nodes_per_shell: usize,
    /// Angular directions (d >= 2).
    pub angular_nodes: usize,
    /// Truncation threshold for the kernel tail mass.
    pub tail_tol: f64,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            inner_radius_cells: 2.0,
            shells: 2,
            nodes_per_shell: 4,
            angular_nodes: 32,
            tail_tol: 1e-10,
        }
    }
}

impl QuadratureScheme {
    /// Next level of a Richardson pair: twice the shells, nodes and directions.
    pub fn refined(&self) -> Self {
        Self {
            shells: self.shells * 2,
            nodes_per_shell: self.nodes_per_shell * 2,
            angular_nodes: self.angular_nodes * 2,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius_cells > 0.0) {
            return Err(Error::param("quadrature.inner_radius_cells", "must be positive"));
        }
        if self.shells == 0 || self.nodes_per_shell == 0 {
            return Err(Error::param("quadrature.shells", "shells and nodes_per_shell must be >= 1"));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::param("quadrature.tail_tol", "must be positive"));
        }
        Ok(())
    }
}

/// A node set for `z -> K(z)` split into a Taylor core `|z| < rho_in` and
/// weighted nodes outside it.
///
/// On the core the increment is replaced by `z^T D^2u z / 2`; the integral
/// of that quadratic form is `m2 / S * sum_theta w_theta theta^T D^2u theta / 2`
/// where `m2 = int_{B_rho_in} |z|^2 K`.
#[derive(Debug, Clone)]
pub struct LevyQuadrature {
    pub dim: usize,
    pub inner_radius: f64,
    pub indicator_radius: f64,
    pub core_moment: f64,
    pub core_dirs: AngularRule,
    /// Flattened node offsets (len = n * dim).
    pub points: Vec<f64>,
    /// Weights including the kernel density and all Jacobians.
    pub weights: Vec<f64>,
    /// Whether the gradient compensation applies (`|z| < indicator_radius`).
    pub compensated: Vec<bool>,
    /// Kernel mass beyond the outermost node shell.
    pub dropped_tail: f64,
    pub outer_radius: f64,
}

impl LevyQuadrature {
    /// Rule for `kernel` (already scaled) with compensation on
    /// `B_{indicator_radius}` and Taylor core radius `inner_radius`.
    /// `extra_breaks` adds radii where the integrand is expected to kink.
    pub fn new(
        kernel: &LevyKernel,
        indicator_radius: f64,
        inner_radius: f64,
        scheme: &QuadratureScheme,
        extra_breaks: &[f64],
    ) -> Result<Self> {
        Self::build(kernel, indicator_radius, inner_radius, scheme, extra_breaks, None)
    }

    /// As [`LevyQuadrature::new`] but with the node shells stopping at
    /// `outer` (clamped to the support); the mass beyond is `dropped_tail`.
    pub fn with_outer(
        kernel: &LevyKernel,
        indicator_radius: f64,
        inner_radius: f64,
        scheme: &QuadratureScheme,
        extra_breaks: &[f64],
        outer: f64,
    ) -> Result<Self> {
        if !(outer > 0.0) {
            return Err(Error::param("outer_radius", "must be positive"));
        }
        Self::build(kernel, indicator_radius, inner_radius, scheme, extra_breaks, Some(outer))
    }

    fn build(
        kernel: &LevyKernel,
        indicator_radius: f64,
        inner_radius: f64,
        scheme: &QuadratureScheme,
        extra_breaks: &[f64],
        outer: Option<f64>,
    ) -> Result<Self> {
        scheme.validate()?;
        let dim = kernel.dim();
        if !(inner_radius > 0.0) {
            return Err(Error::param("inner_radius", "must be positive"));
        }
        let integ = RadialIntegrator::default();
        let core_moment = kernel.second_moment_within(inner_radius, &integ)?;
        let angular = AngularRule::new(dim, scheme.angular_nodes)?;
        let support = kernel.support_radius();
        let outer = match outer {
            Some(o) => support.min(o),
            None => support.min(kernel.tail_radius(scheme.tail_tol)?),
        };
        let dropped_tail = if outer < support {
            kernel.mass_outside(outer, &integ)?
        } else {
            0.0
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut compensated = Vec::new();
        if outer > inner_radius {
            let mut breaks: Vec<f64> = vec![inner_radius, outer];
            breaks.extend(kernel.breakpoints());
            breaks.push(indicator_radius);
            breaks.extend_from_slice(extra_breaks);
            breaks.retain(|t| *t >= inner_radius && *t <= outer && t.is_finite());
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
            let (gx, gw) = gauss_legendre(scheme.nodes_per_shell);
            for win in breaks.windows(2) {
                let (p, q) = (win[0], win[1]);
                if q <= p {
                    continue;
                }
                let n = (((q / p).log2() * scheme.shells as f64).ceil() as usize).max(1);
                let ratio = (q / p).powf(1.0 / n as f64);
                let mut lo = p;
                for k in 0..n {
                    let hi = if k + 1 == n { q } else { lo * ratio };
                    let c = 0.5 * (lo + hi);
                    let h = 0.5 * (hi - lo);
                    for (x, w) in gx.iter().zip(&gw) {
                        let rho = c + h * x;
                        let radial = w * h * kernel.profile(rho) * rho.powi(dim as i32 - 1);
                        if radial == 0.0 {
                            continue;
                        }
                        for a in 0..angular.len() {
                            let th = angular.dir(a);
                            points.extend(th.iter().map(|t| rho * t));
                            weights.push(radial * angular.weights[a]);
                            compensated.push(rho < indicator_radius);
                        }
                    }
                    lo = hi;
                }
            }
        }
        Ok(Self {
            dim,
            inner_radius,
            indicator_radius,
            core_moment,
            core_dirs: angular,
            points,
            weights,
            compensated,
            dropped_tail,
            outer_radius: outer,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Total weight of the non-core nodes.
    pub fn node_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(1);
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_values() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((gamma(5.0) - 24.0).abs() < 1e-11);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn radial_series_handles_power_laws() {
        let q = RadialIntegrator::default();
        // int_0^1 t^{-0.5} dt = 2
        let v = q.integrate(|t| t.powf(-0.5), 0.0, 1.0, &[]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        // int_1^inf t^{-1.5} = 2
        let v = q.integrate(|t| t.powf(-1.5), 1.0, f64::INFINITY, &[]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(q.integrate(|t| 1.0 / t, 0.0, 1.0, &[]).is_err());
        assert!(q.integrate(|t| 1.0 / t, 1.0, f64::INFINITY, &[]).is_err());
    }

    #[test]
    fn angular_second_moment() {
        for d in 1..=3 {
            let a = AngularRule::new(d, 64).unwrap();
            let total: f64 = a.weights.iter().sum();
            assert!((total - sphere_area(d)).abs() < 1e-12);
            for i in 0..d {
                let m: f64 = (0..a.len()).map(|k| a.weights[k] * a.dir(k)[i].powi(2)).sum();
                assert!((m - sphere_area(d) / d as f64).abs() < 0.05 * sphere_area(d), "d={d}");
            }
        }
        assert!(AngularRule::new(4, 8).is_err());
    }
}
