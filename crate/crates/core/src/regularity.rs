//! Weak Harnack ratios, superlevel-set decay, oscillation decay and Holder
//! exponent fits on lattice functions.
//!
//! Cubes `Q_l` are `{|x - center|_inf <= l}`. The Harnack ratio at scale `l`
//! is the unit-scale ratio of the blow-up `v(x) = u(l x / (9 sqrt d))`:
//!
//! `(s^d sum_{Q_in} u^e h^d)^{1/e} / (inf_{Q_in} u + l/(9 sqrt d) |f|_{L^d(Q_l)})`
//!
//! with `Q_in = Q_{l/(9 sqrt d)}` and `s = 9 sqrt d / l`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{extrema, lp_norm, GridFunction, Region};
use crate::kernels::LevyKernel;
use crate::operators::{EllipticityParams, ExtremalOperator, HessianEstimate};
use crate::quadrature::QuadratureScheme;

/// Exponents swept when none are given.
pub const DEFAULT_EPS_GRID: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

/// Largest admissible max/min ratio across scales for an exponent to count
/// as bounded.
pub const DEFAULT_SPREAD_BOUND: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct HarnackRow {
    pub eps: f64,
    /// One ratio per scale, in the order of `HarnackReport::scales`.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `max / min` over scales (1 when all ratios vanish).
    pub spread: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub center: Vec<f64>,
    pub scales: Vec<f64>,
    pub rows: Vec<HarnackRow>,
    /// Largest exponent whose spread is within the bound, else the exponent
    /// with the smallest spread.
    pub chosen_eps: f64,
    pub max_ratio: f64,
    pub spread_bound: f64,
    pub supersolution_defect: f64,
    pub pass: bool,
}

impl HarnackReport {
    pub fn chosen(&self) -> &HarnackRow {
        self.rows.iter().find(|r| r.eps == self.chosen_eps).expect("chosen row exists")
    }
}

/// Configuration of a weak Harnack check.
#[derive(Debug, Clone)]
pub struct HarnackConfig {
    pub center: Vec<f64>,
    pub scales: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub spread_bound: f64,
    /// Operator scale `r` of the extremal inequality.
    pub r: f64,
    /// Allowed excess of `f` over the extremal operator at checked nodes.
    pub residual_tol: f64,
}

impl HarnackConfig {
    pub fn new(dim: usize, scales: Vec<f64>) -> Self {
        Self {
            center: vec![0.0; dim],
            scales,
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            spread_bound: DEFAULT_SPREAD_BOUND,
            r: 1.0,
            residual_tol: 1e-6,
        }
    }
}

fn cube(center: &[f64], half: f64) -> Region {
    Region::cube(center.to_vec(), half)
}

/// Largest `f - (-P-(D^2u) - P-_{K,r}(u) + C0 r |Du|)` over the nodes of
/// `region` whose difference stencil fits in the lattice.
pub fn supersolution_defect(
    u: &GridFunction,
    f: &GridFunction,
    region: &Region,
    p: &EllipticityParams,
    kernel: &LevyKernel,
    r: f64,
    quad: &QuadratureScheme,
) -> Result<f64> {
    if f.grid != u.grid {
        return Err(Error::param("f", "must live on the lattice of u"));
    }
    let g = &u.grid;
    let op = ExtremalOperator::new(*p, kernel, r, g.h, quad)?;
    let nodes: Vec<usize> = region.nodes(g).into_iter().filter(|&i| !g.is_boundary(i)).collect();
    let d: Vec<f64> = nodes
        .par_iter()
        .map(|&i| -> Result<f64> {
            let x = g.point(i);
            let jet = HessianEstimate::at(u, &x, g.h)?;
            Ok(f.values[i] - op.minus_from(&x, &jet, |y| u.interpolate(y))?)
        })
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

fn require_nonnegative(u: &GridFunction, region: &Region) -> Result<()> {
    let (lo, _) = extrema(u, region)?;
    if lo < 0.0 {
        return Err(Error::Precondition(format!("u takes the negative value {lo:.3e} on the outer region")));
    }
    Ok(())
}

/// Weak Harnack ratios over `cfg.scales` for every exponent of `cfg.eps_grid`.
pub fn weak_harnack_check(
    u: &GridFunction,
    f: &GridFunction,
    p: &EllipticityParams,
    kernel: &LevyKernel,
    quad: &QuadratureScheme,
    cfg: &HarnackConfig,
) -> Result<HarnackReport> {
    let d = u.dim();
    if cfg.scales.is_empty() || cfg.eps_grid.is_empty() {
        return Err(Error::InsufficientData("need at least one scale and one exponent".into()));
    }
    if cfg.scales.iter().any(|l| !(*l > 0.0)) || cfg.eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::param("scales", "scales and exponents must be positive"));
    }
    let big = cfg.scales.iter().cloned().fold(0.0, f64::max);
    let outer = cube(&cfg.center, big);
    require_nonnegative(u, &outer)?;
    let defect = supersolution_defect(u, f, &outer, p, kernel, cfg.r, quad)?;
    if defect > cfg.residual_tol {
        return Err(Error::Precondition(format!(
            "u is not a supersolution: defect {defect:.3e} exceeds {:.3e}",
            cfg.residual_tol
        )));
    }
    let k = 9.0 * (d as f64).sqrt();
    let per_scale: Vec<(Vec<f64>, f64, f64)> = cfg
        .scales
        .iter()
        .map(|&l| -> Result<(Vec<f64>, f64, f64)> {
            let inner = cube(&cfg.center, l / k);
            let nodes = inner.nodes(&u.grid);
            if nodes.is_empty() {
                return Err(Error::Domain(format!("inner cube at scale {l} has no lattice nodes")));
            }
            let vals: Vec<f64> = nodes.iter().map(|&i| u.values[i]).collect();
            let inf = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let fnorm = lp_norm(f, &cube(&cfg.center, l), d as f64)?;
            Ok((vals, inf, l / k * fnorm))
        })
        .collect::<Result<_>>()?;
    let vol = u.grid.cell_volume();
    let rows: Vec<HarnackRow> = cfg
        .eps_grid
        .iter()
        .map(|&e| {
            let ratios: Vec<f64> = cfg
                .scales
                .iter()
                .zip(&per_scale)
                .map(|(&l, (vals, inf, fterm))| {
                    let s = (k / l).powi(d as i32);
                    let num = (s * vol * vals.iter().map(|v| v.powf(e)).sum::<f64>()).powf(1.0 / e);
                    let den = inf + fterm;
                    if num == 0.0 {
                        0.0
                    } else {
                        num / den
                    }
                })
                .collect();
            let max = ratios.iter().cloned().fold(0.0, f64::max);
            let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let spread = if max == 0.0 { 1.0 } else { max / min };
            HarnackRow {
                eps: e,
                bounded: spread.is_finite() && spread <= cfg.spread_bound,
                ratios,
                max_ratio: max,
                spread,
            }
        })
        .collect();
    let chosen = rows
        .iter()
        .filter(|r| r.bounded)
        .max_by(|a, b| a.eps.total_cmp(&b.eps))
        .or_else(|| rows.iter().min_by(|a, b| a.spread.total_cmp(&b.spread)))
        .expect("nonempty grid");
    Ok(HarnackReport {
        center: cfg.center.clone(),
        scales: cfg.scales.clone(),
        chosen_eps: chosen.eps,
        max_ratio: chosen.max_ratio,
        pass: chosen.bounded,
        rows,
        spread_bound: cfg.spread_bound,
        supersolution_defect: defect,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperlevelRow {
    pub t: f64,
    pub measure: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperlevelReport {
    pub eps: f64,
    pub radius: f64,
    /// `inf_{B_l} u + l |f|_{L^d(B_2l)}`, the unit of the `t` grid.
    pub normalizer: f64,
    /// Smallest `C` with `measure <= C l^d normalizer^e t^{-e}` on the grid.
    pub constant: f64,
    pub rows: Vec<SuperlevelRow>,
}

/// Superlevel measures `|{u > t} ∩ B_l(center)|` against the decay shape
/// `l^d m^e t^{-e}`, `m = inf_{B_l} u + l |f|_{L^d(B_2l)}`.
///
/// `t_multipliers` are in units of `m` (of `sup_{B_l} u` when `m = 0`), so
/// the fitted constant is unchanged when `u` and `f` are scaled together.
pub fn superlevel_decay(
    u: &GridFunction,
    f: &GridFunction,
    center: &[f64],
    l: f64,
    eps: f64,
    t_multipliers: &[f64],
) -> Result<SuperlevelReport> {
    if !(l > 0.0) || !(eps > 0.0) {
        return Err(Error::param("l", "radius and exponent must be positive"));
    }
    if t_multipliers.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::param("t", "levels must be positive"));
    }
    let ball = Region::ball(center.to_vec(), l);
    let outer = Region::ball(center.to_vec(), 2.0 * l);
    require_nonnegative(u, &outer)?;
    let d = u.dim() as f64;
    let (inf, sup) = extrema(u, &ball)?;
    let m = inf + l * lp_norm(f, &outer, d)?;
    let unit = if m > 0.0 { m } else { sup };
    let nodes = ball.nodes(&u.grid);
    let vol = u.grid.cell_volume();
    let mut constant: f64 = 0.0;
    let mut rows: Vec<SuperlevelRow> = t_multipliers
        .iter()
        .map(|&tm| {
            let t = tm * unit;
            let measure = nodes.iter().filter(|&&i| u.values[i] > t).count() as f64 * vol;
            let shape = l.powf(d) * m.powf(eps) * t.powf(-eps);
            if measure > 0.0 {
                constant = constant.max(if shape > 0.0 { measure / shape } else { f64::INFINITY });
            }
            SuperlevelRow { t, measure, bound: shape }
        })
        .collect();
    for r in &mut rows {
        r.bound *= constant;
    }
    Ok(SuperlevelReport {
        eps,
        radius: l,
        normalizer: m,
        constant,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationSequence {
    pub ratio: f64,
    pub values: Vec<f64>,
    /// Set when the requested `kmax` was cut to keep 5 nodes across the
    /// smallest ball.
    pub truncated: bool,
}

/// `osc(u, B_{ratio^-k}(x0))` for `k = 0..=kmax`, with node membership by
/// center distance.
pub fn oscillation_sequence(u: &GridFunction, x0: &[f64], ratio: f64, kmax: usize) -> Result<OscillationSequence> {
    if !(ratio > 1.0) {
        return Err(Error::param("ratio", "must exceed 1"));
    }
    if x0.len() != u.dim() {
        return Err(Error::Domain(format!("expected a {}-point", u.dim())));
    }
    let h = u.grid.h;
    let mut values = Vec::new();
    let mut truncated = false;
    for k in 0..=kmax {
        let rho = ratio.powi(-(k as i32));
        if rho < 2.0 * h * (1.0 - 1e-9) {
            truncated = true;
            break;
        }
        let (lo, hi) = extrema(u, &Region::ball(x0.to_vec(), rho))?;
        values.push(hi - lo);
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("the unit ball is not resolved by the lattice".into()));
    }
    Ok(OscillationSequence { ratio, values, truncated })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderFit {
    pub alpha: f64,
    pub c: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares fit of `ln osc_k = ln C' - alpha k ln ratio`, using the
/// leading run of positive entries. `C = 2 C'` and `alpha` is clamped at 0.
pub fn holder_fit(seq: &[f64], ratio: f64) -> Result<HolderFit> {
    if !(ratio > 1.0) {
        return Err(Error::param("ratio", "must exceed 1"));
    }
    let n = seq.iter().take_while(|v| **v > 0.0 && v.is_finite()).count();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} positive oscillations, need 3")));
    }
    let xs: Vec<f64> = (0..n).map(|k| -(k as f64) * ratio.ln()).collect();
    let ys: Vec<f64> = seq[..n].iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(HolderFit {
        alpha: slope.max(0.0),
        c: 2.0 * intercept.exp(),
        residual,
        points: n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub center: Vec<f64>,
    pub ratio: f64,
    pub oscillations: Vec<f64>,
    pub truncated: bool,
    pub alpha: f64,
    pub c: f64,
    pub residual: f64,
}

/// Oscillation sequence at `x0` followed by a Holder fit.
pub fn holder_report(u: &GridFunction, x0: &[f64], ratio: f64, kmax: usize) -> Result<HolderReport> {
    let seq = oscillation_sequence(u, x0, ratio, kmax)?;
    let fit = holder_fit(&seq.values, ratio)?;
    Ok(HolderReport {
        center: x0.to_vec(),
        ratio,
        oscillations: seq.values,
        truncated: seq.truncated,
        alpha: fit.alpha,
        c: fit.c,
        residual: fit.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxDomain, ExteriorRule, Grid};

    fn line(half: f64, n: usize) -> Grid {
        Grid::new(BoxDomain::cube(1, half).unwrap(), n).unwrap()
    }

    #[test]
    fn constant_function_ratio_is_two() {
        // Scale 9 puts the inner cube at half-width 1 in d = 1.
        let g = line(9.0, 1801);
        let u = GridFunction::from_fn(g.clone(), |_| 1.0);
        let f = GridFunction::from_fn(g, |_| 0.0);
        let p = EllipticityParams::new(1.0, 2.0, 1.0).unwrap();
        let mut cfg = HarnackConfig::new(1, vec![9.0]);
        cfg.eps_grid = vec![1.0];
        let rep = weak_harnack_check(&u, &f, &p, &LevyKernel::zero(1), &QuadratureScheme::default(), &cfg).unwrap();
        // 201 nodes of weight h = 0.01 on [-1, 1].
        assert!((rep.max_ratio - 2.01).abs() < 1e-12, "{}", rep.max_ratio);
    }

    #[test]
    fn zero_function_has_zero_ratio() {
        let g = line(1.0, 65);
        let z = GridFunction::new(g.clone(), vec![0.0; 65], ExteriorRule::constant(0.0)).unwrap();
        let p = EllipticityParams::new(1.0, 2.0, 1.0).unwrap();
        let rep = weak_harnack_check(&z, &z, &p, &LevyKernel::zero(1), &QuadratureScheme::default(), &HarnackConfig::new(1, vec![1.0, 0.5])).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.max_ratio, 0.0);
    }

    #[test]
    fn negative_values_are_rejected() {
        let g = line(1.0, 33);
        let u = GridFunction::from_fn(g.clone(), |x| x[0]);
        let f = GridFunction::from_fn(g, |_| 0.0);
        let p = EllipticityParams::new(1.0, 2.0, 1.0).unwrap();
        let r = weak_harnack_check(&u, &f, &p, &LevyKernel::zero(1), &QuadratureScheme::default(), &HarnackConfig::new(1, vec![1.0]));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn affine_oscillation_decays_by_the_ratio() {
        let g = line(1.0, 1025);
        let u = GridFunction::from_fn(g, |x| 3.0 * x[0] + 1.0);
        let s = oscillation_sequence(&u, &[0.0], 8.0, 2).unwrap();
        for k in 0..s.values.len() {
            assert!((s.values[k] - 6.0 * 8f64.powi(-(k as i32))).abs() < 1e-12);
        }
        assert!(!s.truncated);
        // h = 1/512, so the ball of radius 8^-3 holds only 3 nodes.
        assert!(oscillation_sequence(&u, &[0.0], 8.0, 3).unwrap().truncated);
    }

    #[test]
    fn square_root_cusp_gives_half() {
        let g = line(1.0, 4097);
        let u = GridFunction::from_fn(g, |x| x[0].abs().sqrt());
        let s = oscillation_sequence(&u, &[0.0], 8.0, 3).unwrap();
        for w in s.values.windows(2) {
            assert!((w[1] / w[0] - 8f64.powf(-0.5)).abs() < 1e-12);
        }
        let fit = holder_fit(&s.values, 8.0).unwrap();
        assert!((fit.alpha - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_examples() {
        let seq: Vec<f64> = (0..6).map(|k| 8f64.powf(-0.5 * k as f64)).collect();
        let fit = holder_fit(&seq, 8.0).unwrap();
        assert!((fit.alpha - 0.5).abs() < 1e-12 && fit.residual < 1e-12);
        assert!((fit.c - 2.0).abs() < 1e-12);
        assert_eq!(holder_fit(&[1.0; 5], 8.0).unwrap().alpha, 0.0);
        assert!(matches!(holder_fit(&[1.0, 0.5, 0.0, 0.1], 8.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn superlevel_step_for_constants() {
        let g = line(1.0, 101);
        let u = GridFunction::from_fn(g.clone(), |_| 2.0);
        let f = GridFunction::from_fn(g, |_| 0.0);
        let rep = superlevel_decay(&u, &f, &[0.0], 0.5, 0.5, &[0.5, 0.99, 1.0, 4.0, 1e6]).unwrap();
        assert!(rep.rows[0].measure > 0.0 && rep.rows[1].measure > 0.0);
        assert_eq!(rep.rows[2].measure, 0.0);
        assert_eq!(rep.rows[4].measure, 0.0);
        for r in &rep.rows {
            assert!(r.measure <= r.bound * (1.0 + 1e-12));
        }
    }
}
