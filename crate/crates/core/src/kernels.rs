//! Radial Levy kernels, their rescaling and integrability functionals.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{sphere_area, QuadratureScheme, RadialIntegrator};

/// Radial profile family. Densities are unnormalized: the fractional
/// family is exactly `|z|^{-d-sigma}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    Fractional { sigma: f64 },
    TruncatedFractional { sigma: f64, cutoff: f64 },
    CompactUniform { radius: f64, height: f64 },
    /// Piecewise linear in the radius, constant below the first sample and
    /// zero beyond the last one.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

/// `K_r(z) = r^{d+2} K(r z)` for a radial base kernel `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyKernel {
    dim: usize,
    family: Arc<KernelFamily>,
    scale: f64,
}

impl LevyKernel {
    pub fn new(dim: usize, family: KernelFamily) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        validate_family(&family)?;
        let k = Self {
            dim,
            family: Arc::new(family),
            scale: 1.0,
        };
        levy_integrability(&k, &QuadratureScheme::default())?;
        Ok(k)
    }

    pub fn fractional(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(dim, KernelFamily::Fractional { sigma })
    }

    pub fn compact_uniform(dim: usize, radius: f64, height: f64) -> Result<Self> {
        Self::new(dim, KernelFamily::CompactUniform { radius, height })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            family: Arc::new(KernelFamily::CompactUniform {
                radius: 1.0,
                height: 0.0,
            }),
            scale: 1.0,
        }
    }

    /// Reads a two-column `radius,value` CSV (a header line is skipped if
    /// it does not parse).
    pub fn from_table_csv(dim: usize, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (cols.len() == 2)
                .then(|| (cols[0].parse::<f64>(), cols[1].parse::<f64>()));
            match parsed {
                Some((Ok(r), Ok(v))) => {
                    radii.push(r);
                    values.push(v);
                }
                _ if ln == 0 => continue,
                _ => {
                    return Err(Error::Parse(format!(
                        "{}:{}: expected `radius,value`",
                        path.display(),
                        ln + 1
                    )))
                }
            }
        }
        Self::new(dim, KernelFamily::Tabulated { radii, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self.family, KernelFamily::CompactUniform { height, .. } if height == 0.0)
    }

    /// Fractional order for the power-law families.
    pub fn sigma(&self) -> Option<f64> {
        match *self.family {
            KernelFamily::Fractional { sigma } | KernelFamily::TruncatedFractional { sigma, .. } => Some(sigma),
            _ => None,
        }
    }

    fn base_profile(&self, rho: f64) -> f64 {
        let d = self.dim as f64;
        match &*self.family {
            KernelFamily::Fractional { sigma } => rho.powf(-d - sigma),
            KernelFamily::TruncatedFractional { sigma, cutoff } => {
                if rho < *cutoff {
                    rho.powf(-d - sigma)
                } else {
                    0.0
                }
            }
            KernelFamily::CompactUniform { radius, height } => {
                if rho < *radius {
                    *height
                } else {
                    0.0
                }
            }
            KernelFamily::Tabulated { radii, values } => {
                let last = *radii.last().unwrap();
                if rho > last {
                    0.0
                } else if rho <= radii[0] {
                    values[0]
                } else {
                    let j = radii.partition_point(|r| *r < rho);
                    let (r0, r1) = (radii[j - 1], radii[j]);
                    let t = (rho - r0) / (r1 - r0);
                    values[j - 1] * (1.0 - t) + values[j] * t
                }
            }
        }
    }

    /// Radial density of the scaled kernel at `|z| = rho > 0`.
    pub fn profile(&self, rho: f64) -> f64 {
        let s = self.scale;
        if s == 1.0 {
            self.base_profile(rho)
        } else {
            s.powi(self.dim as i32 + 2) * self.base_profile(s * rho)
        }
    }

    /// Density at `z`. The origin is excluded for every family.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Domain(format!("expected a {}-vector", self.dim)));
        }
        let rho = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rho == 0.0 {
            return Err(Error::Domain("kernel evaluated at z = 0".into()));
        }
        Ok(self.profile(rho))
    }

    /// `K_r(z) = r^{d+2} K(r z)`; scales compose multiplicatively.
    pub fn scale(&self, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::param("r", "scale must be positive and finite"));
        }
        Ok(Self {
            dim: self.dim,
            family: self.family.clone(),
            scale: self.scale * r,
        })
    }

    /// Radius beyond which the scaled kernel vanishes (may be infinite).
    pub fn support_radius(&self) -> f64 {
        let base = match &*self.family {
            KernelFamily::Fractional { .. } => f64::INFINITY,
            KernelFamily::TruncatedFractional { cutoff, .. } => *cutoff,
            KernelFamily::CompactUniform { radius, height } => {
                if *height == 0.0 {
                    0.0
                } else {
                    *radius
                }
            }
            KernelFamily::Tabulated { radii, .. } => *radii.last().unwrap(),
        };
        base / self.scale
    }

    /// Radii (scaled) where the profile is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let base: Vec<f64> = match &*self.family {
            KernelFamily::Fractional { .. } => vec![],
            KernelFamily::TruncatedFractional { cutoff, .. } => vec![*cutoff],
            KernelFamily::CompactUniform { radius, .. } => vec![*radius],
            KernelFamily::Tabulated { radii, .. } => radii.clone(),
        };
        base.into_iter().map(|b| b / self.scale).collect()
    }

    /// Smallest radius `R` with `int_{|z|>R} K <= tail_tol` (closed form for
    /// the power-law tail, the support radius otherwise).
    pub fn tail_radius(&self, tail_tol: f64) -> Result<f64> {
        match &*self.family {
            KernelFamily::Fractional { sigma } => {
                let s = self.scale;
                let c = sphere_area(self.dim) * s.powf(2.0 - sigma) / sigma;
                Ok((c / tail_tol).powf(1.0 / sigma))
            }
            KernelFamily::TruncatedFractional { sigma, cutoff } => {
                let s = self.scale;
                let c = sphere_area(self.dim) * s.powf(2.0 - sigma) / sigma;
                Ok((c / tail_tol).powf(1.0 / sigma).min(cutoff / s))
            }
            _ => Ok(self.support_radius()),
        }
    }

    /// `S_{d-1} int_a^b g(rho) k(rho) rho^{d-1} d rho`.
    pub fn radial_integral<G: Fn(f64) -> f64>(
        &self,
        g: G,
        a: f64,
        b: f64,
        extra_breaks: &[f64],
        integ: &RadialIntegrator,
    ) -> Result<f64> {
        let b = b.min(self.support_radius());
        if b <= a {
            return Ok(0.0);
        }
        let d = self.dim as i32;
        let mut breaks = self.breakpoints();
        breaks.extend_from_slice(extra_breaks);
        let v = integ.integrate(|t| g(t) * self.profile(t) * t.powi(d - 1), a, b, &breaks)?;
        Ok(sphere_area(self.dim) * v)
    }

    /// `int_{B_rho} |z|^2 K`.
    pub fn second_moment_within(&self, rho: f64, integ: &RadialIntegrator) -> Result<f64> {
        self.radial_integral(|t| t * t, 0.0, rho, &[], integ)
    }

    /// `int_{|z| > rho} K`.
    pub fn mass_outside(&self, rho: f64, integ: &RadialIntegrator) -> Result<f64> {
        if rho <= 0.0 {
            return Err(Error::Domain("mass outside a ball of radius <= 0".into()));
        }
        self.radial_integral(|_| 1.0, rho, f64::INFINITY, &[], integ)
    }

    /// `J = int_{B_1} |z|^2 K` and `T = int_{B_1^c} K`.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let integ = RadialIntegrator::default();
        Ok((self.second_moment_within(1.0, &integ)?, self.mass_outside(1.0, &integ)?))
    }
}

fn validate_family(f: &KernelFamily) -> Result<()> {
    let finite_pos = |v: f64, name: &str| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::param(name, "must be positive and finite"))
        }
    };
    match f {
        KernelFamily::Fractional { sigma } => {
            if !sigma.is_finite() {
                return Err(Error::param("kernel.sigma", "must be finite"));
            }
        }
        KernelFamily::TruncatedFractional { sigma, cutoff } => {
            if !sigma.is_finite() {
                return Err(Error::param("kernel.sigma", "must be finite"));
            }
            finite_pos(*cutoff, "kernel.cutoff")?;
        }
        KernelFamily::CompactUniform { radius, height } => {
            finite_pos(*radius, "kernel.radius")?;
            if !(height.is_finite() && *height >= 0.0) {
                return Err(Error::param("kernel.height", "must be nonnegative and finite"));
            }
        }
        KernelFamily::Tabulated { radii, values } => {
            if radii.is_empty() || radii.len() != values.len() {
                return Err(Error::param("kernel.table", "needs matching, nonempty radius and value columns"));
            }
            if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::param("kernel.table", "radii must be positive and strictly increasing"));
            }
            if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::param("kernel.table", "values must be nonnegative and finite"));
            }
        }
    }
    Ok(())
}

/// `int min(|z|^2, 1) K(z) dz`; errors when the integral diverges.
pub fn levy_integrability(kernel: &LevyKernel, quad: &QuadratureScheme) -> Result<f64> {
    let integ = RadialIntegrator::new(20, quad.tail_tol.min(1e-10));
    kernel.radial_integral(|t| (t * t).min(1.0), 0.0, f64::INFINITY, &[1.0], &integ)
}

/// `beta(s) = int_{|z| > s} min(1, |z|) K(z) dz` for `s > 0`.
pub fn beta(kernel: &LevyKernel, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain("beta needs s > 0".into()));
    }
    let integ = RadialIntegrator::default();
    kernel.radial_integral(|t| t.min(1.0), s, f64::INFINITY, &[1.0], &integ)
}

/// `int_0^s beta(t) dt = s beta(s) + int_{|z|<s} |z| min(1,|z|) K`,
/// by exchanging the order of integration.
pub fn beta_primitive(kernel: &LevyKernel, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let integ = RadialIntegrator::default();
    let inner = kernel.radial_integral(|t| t * t.min(1.0), 0.0, s, &[1.0], &integ)?;
    Ok(s * beta(kernel, s)? + inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        let k = LevyKernel::fractional(1, 1.0).unwrap();
        assert_eq!(k.evaluate(&[2.0]).unwrap(), 0.25);
        assert!(k.evaluate(&[0.0]).is_err());
        let c = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap();
        assert_eq!(c.evaluate(&[0.5]).unwrap(), 1.0);
        assert_eq!(c.evaluate(&[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn scale_examples() {
        let c = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap().scale(0.5).unwrap();
        assert_eq!(c.evaluate(&[1.5]).unwrap(), 0.125);
        assert_eq!(c.evaluate(&[2.5]).unwrap(), 0.0);
    }

    #[test]
    fn integrability_examples() {
        let q = QuadratureScheme::default();
        assert_eq!(levy_integrability(&LevyKernel::zero(2), &q).unwrap(), 0.0);
        let c = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap();
        assert!((levy_integrability(&c, &q).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let f = LevyKernel::fractional(1, 1.0).unwrap();
        assert!((levy_integrability(&f, &q).unwrap() - 4.0).abs() < 1e-10);
        assert!(matches!(LevyKernel::fractional(1, 2.0), Err(Error::NonIntegrable(_))));
        assert!(matches!(LevyKernel::fractional(2, 0.0), Err(Error::NonIntegrable(_))));
    }

    #[test]
    fn beta_examples() {
        let c = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap();
        assert!((beta(&c, 0.5).unwrap() - 0.75).abs() < 1e-13);
        assert_eq!(beta(&c, 2.0).unwrap(), 0.0);
        let f = LevyKernel::fractional(1, 1.0).unwrap();
        assert!((beta(&f, 1.0).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn tabulated_matches_uniform() {
        let t = LevyKernel::new(
            1,
            KernelFamily::Tabulated {
                radii: vec![0.5, 1.0],
                values: vec![1.0, 1.0],
            },
        )
        .unwrap();
        let q = QuadratureScheme::default();
        assert!((levy_integrability(&t, &q).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.evaluate(&[0.75]).unwrap(), 1.0);
        assert_eq!(t.evaluate(&[1.5]).unwrap(), 0.0);
    }
}
