//! Reproducible experiment builders shared by the acceptance suite and the
//! command-line driver: manufactured convergence, Perron sandwiches, ABP
//! batches and weak Harnack families.
//!
//! Randomized batches draw one 64-bit seed per instance from a ChaCha8
//! stream seeded with the batch seed, then seed a fresh ChaCha8 stream per
//! instance, so instance `i` is reproducible without replaying `0..i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barriers::build_global_barrier;
use crate::error::{Error, Result};
use crate::geometry::{abp_check, AbpReport};
use crate::grid::{BoxDomain, ExteriorRule, Grid, GridFunction, Region};
use crate::kernels::LevyKernel;
use crate::operators::EllipticityParams;
use crate::problem::{Control, HJBIProblem, Omega};
use crate::quadrature::QuadratureScheme;
use crate::regularity::{holder_report, weak_harnack_check, HarnackConfig, HarnackReport, HolderReport};
use crate::solver::{
    discretize, perron_iterate, solve_policy_iteration, solve_pseudo_time, with_manufactured_rhs, DiscretizeOptions,
    SmoothFunction, SolveOptions,
};

/// Ellipticity used by every experiment problem.
pub fn experiment_params() -> EllipticityParams {
    EllipticityParams::new(1.0, 2.0, 1.0).expect("valid constants")
}

/// `u(x) = (1 + x1/2) exp(-|x|^2)` with closed-form derivatives.
pub fn gaussian_bump() -> SmoothFunction {
    let e = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp();
    SmoothFunction::new(
        move |x| (1.0 + 0.5 * x[0]) * e(x),
        move |x| {
            let (ex, p) = (e(x), 1.0 + 0.5 * x[0]);
            (0..x.len())
                .map(|i| -2.0 * x[i] * p * ex + if i == 0 { 0.5 * ex } else { 0.0 })
                .collect()
        },
        move |x| {
            let d = x.len();
            let (ex, p) = (e(x), 1.0 + 0.5 * x[0]);
            let mut hs = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let dij = if i == j { 1.0 } else { 0.0 };
                    let mut v = p * (4.0 * x[i] * x[j] - 2.0 * dij) * ex;
                    if i == 0 {
                        v += -x[j] * ex;
                    }
                    if j == 0 {
                        v += -x[i] * ex;
                    }
                    hs[i * d + j] = v;
                }
            }
            hs
        },
    )
}

/// Isaacs problem on `[-1, 1]^d` with two maximizing controls, whose
/// right-hand sides are manufactured so that [`gaussian_bump`] solves it.
/// The second control's right-hand side is lowered by 1 so it is strictly
/// dominated: ties at the solution would make policy iteration flip-flop.
pub fn manufactured_problem(dim: usize, kernel: LevyKernel) -> Result<(HJBIProblem, SmoothFunction)> {
    let exact = gaussian_bump();
    let v = exact.value.clone();
    let base = HJBIProblem::new(
        Omega::Box(BoxDomain::cube(dim, 1.0)?),
        vec![
            vec![Control::isotropic(dim, 1.0, |_| 0.0)],
            vec![Control::isotropic(dim, 2.0, |_| 0.0).with_zero_order(|_| 1.0)],
        ],
        kernel,
        ExteriorRule::new(move |x| v(x)),
        experiment_params(),
    )?;
    let mut prob = with_manufactured_rhs(&base, &exact)?;
    let f = prob.controls[1][0].f.clone();
    prob.controls[1][0].f = std::sync::Arc::new(move |x: &[f64]| f(x) - 1.0);
    Ok((prob, exact))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub dim: usize,
    pub kernel: String,
    pub nodes: Vec<usize>,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})` for consecutive halvings of `h`.
    pub slopes: Vec<f64>,
    /// Least-squares slope of `ln e` against `ln h`.
    pub fitted_slope: f64,
    pub residuals: Vec<f64>,
}

/// Sup-norm errors of policy iteration on the manufactured problem over
/// the given nodes-per-axis levels.
pub fn convergence_study(dim: usize, kernel: LevyKernel, levels: &[usize], quad: &QuadratureScheme) -> Result<ConvergenceReport> {
    if levels.len() < 2 {
        return Err(Error::InsufficientData("need at least two grid levels".into()));
    }
    let name = format!("{:?}", kernel.family());
    let (prob, exact) = manufactured_problem(dim, kernel)?;
    let opts = DiscretizeOptions {
        quadrature: *quad,
        ..Default::default()
    };
    // Below the O(h^2) error on the finest level and above the roundoff
    // floor of the residual (a few 1e-9 at 4097 nodes).
    let opts_solve = SolveOptions {
        tol: Some(1.2e-8),
        ..Default::default()
    };
    let mut h = Vec::new();
    let mut errors = Vec::new();
    let mut residuals = Vec::new();
    for &n in levels {
        let grid = Grid::new(BoxDomain::cube(dim, 1.0)?, n)?;
        let op = discretize(&prob, &grid, &opts)?;
        let sol = solve_policy_iteration(&op, &opts_solve)?;
        let err = (0..grid.len()).fold(0.0f64, |m, i| m.max((sol.u.values[i] - (exact.value)(&grid.point(i))).abs()));
        h.push(grid.h);
        errors.push(err);
        residuals.push(sol.residual);
    }
    let slopes = errors.windows(2).zip(h.windows(2)).map(|(e, hh)| (e[0] / e[1]).ln() / (hh[0] / hh[1]).ln()).collect();
    Ok(ConvergenceReport {
        dim,
        kernel: name,
        nodes: levels.to_vec(),
        fitted_slope: log_log_slope(&h, &errors),
        h,
        errors,
        slopes,
        residuals,
    })
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub nodes: usize,
    pub tol: f64,
    pub difference: f64,
    pub policy_iterations: usize,
    pub pseudo_time_steps: usize,
}

/// Sup-norm gap between policy iteration and pseudo-time marching.
pub fn solver_agreement(prob: &HJBIProblem, nodes: usize, quad: &QuadratureScheme) -> Result<AgreementReport> {
    let grid = Grid::new(prob.omega.bounding_box(), nodes)?;
    let op = discretize(
        prob,
        &grid,
        &DiscretizeOptions {
            quadrature: *quad,
            ..Default::default()
        },
    )?;
    let tol = op.default_tol();
    let pi = solve_policy_iteration(&op, &SolveOptions::default())?;
    let pt = solve_pseudo_time(&op, None, None, 50_000_000, None)?;
    Ok(AgreementReport {
        nodes,
        tol,
        difference: sup_diff(&pi.u.values, &pt.u.values),
        policy_iterations: pi.iterations,
        pseudo_time_steps: pt.iterations,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Isaacs problem on `(-1, 1)` with a discontinuous right-hand side and
/// affine exterior data: the Perron and Holder test case.
pub fn rough_problem(kernel: LevyKernel) -> Result<HJBIProblem> {
    let sign = |x: &[f64]| if x[0] > 0.0 { 1.0 } else { -1.0 };
    Ok(HJBIProblem::new(
        Omega::Box(BoxDomain::cube(1, 1.0)?),
        vec![
            vec![
                Control::isotropic(1, 1.0, move |x| -2.0 * sign(x)).with_drift(|_| vec![0.5]),
                Control::isotropic(1, 1.5, |x| -1.0 - x[0]).with_zero_order(|_| 1.0),
            ],
            vec![
                Control::isotropic(1, 2.0, move |x| -1.5 * sign(x) - 0.5),
                Control::isotropic(1, 1.25, |x| 0.5 * x[0] - 1.0).with_drift(|_| vec![-0.75]),
            ],
        ],
        kernel,
        ExteriorRule::new(|x| 0.25 * x[0]),
        experiment_params(),
    )?
    .with_perron_mode(true))
}

#[derive(Debug, Clone, Serialize)]
pub struct PerronReport {
    pub nodes: usize,
    /// Multiple of the global barrier in the sub/supersolutions.
    pub barrier_scale: f64,
    pub sweeps: usize,
    pub residual: f64,
    pub tol: f64,
    /// Sup-norm gap to the policy-iteration solution.
    pub difference: f64,
    /// Sup-norm gap to the run started from a second, lower subsolution.
    pub start_independence: f64,
    pub holder: HolderReport,
}

/// Perron sandwich between `m -/+ C psi_g` (equal to `g` off the domain),
/// doubling `C` from `sup|f| / eps6` until both are discrete barriers.
pub fn perron_study(prob: &HJBIProblem, nodes: usize, quad: &QuadratureScheme, holder_ratio: f64) -> Result<PerronReport> {
    let bbox = prob.omega.bounding_box();
    let grid = Grid::new(bbox.clone(), nodes)?;
    let op = discretize(
        prob,
        &grid,
        &DiscretizeOptions {
            quadrature: *quad,
            ..Default::default()
        },
    )?;
    let tol = op.default_tol();
    let barrier = build_global_barrier(&bbox, &prob.params, &prob.kernel)?;
    let eps6 = barrier.constants.eps6.unwrap_or(1.0);
    let g = op.exterior_values().to_vec();
    let (glo, ghi) = g
        .iter()
        .enumerate()
        .filter(|(i, _)| !op.is_active(*i))
        .fold((0.0f64, 0.0f64), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
    let sandwich = |c: f64, sign: f64, base: f64| -> GridFunction {
        let vals = (0..grid.len())
            .map(|i| {
                if op.is_active(i) {
                    base + sign * c * barrier.value(&grid.point(i))
                } else {
                    g[i]
                }
            })
            .collect();
        op.to_grid_function(vals)
    };
    let mut c = (op.f_sup() / eps6).max(1.0);
    let mut found = None;
    for _ in 0..40 {
        let lower = sandwich(c, -1.0, glo);
        let upper = sandwich(c, 1.0, ghi);
        match perron_iterate(&op, &lower, &upper, None, 0) {
            Err(Error::Precondition(_)) => c *= 2.0,
            _ => {
                found = Some((lower, upper));
                break;
            }
        }
    }
    let (lower, upper) = found.ok_or_else(|| Error::Construction("no multiple of the global barrier is a discrete barrier".into()))?;
    let sweeps = 200_000_000 / grid.len().max(1);
    let perron = perron_iterate(&op, &lower, &upper, None, sweeps)?;
    let second = perron_iterate(&op, &sandwich(2.0 * c, -1.0, glo), &upper, None, sweeps)?;
    let pi = solve_policy_iteration(&op, &SolveOptions::default())?;
    let kmax = ((1.0 / (2.0 * grid.h)).ln() / holder_ratio.ln()).floor() as usize;
    Ok(PerronReport {
        nodes,
        barrier_scale: c,
        sweeps: perron.iterations,
        residual: perron.residual,
        tol,
        difference: sup_diff(&perron.u.values, &pi.u.values),
        start_independence: sup_diff(&perron.u.values, &second.u.values),
        holder: holder_report(&perron.u, &bbox.center(), holder_ratio, kmax)?,
    })
}

/// Piecewise-constant nonnegative field: a sum of boxes with heights.
#[derive(Debug, Clone, Serialize)]
pub struct BoxPieces {
    pub pieces: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl BoxPieces {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.pieces
            .iter()
            .filter(|(lo, hi, _)| x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b))
            .map(|p| p.2)
            .sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AbpInstance {
    pub seed: u64,
    pub diffusion: f64,
    pub exterior: f64,
    pub forcing: BoxPieces,
    pub report: AbpReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbpBatchReport {
    pub dim: usize,
    pub nodes: usize,
    pub seed: u64,
    pub instances: Vec<AbpInstance>,
    /// Largest empirical constant over the batch.
    pub constant: f64,
    /// `-inf_Omega u + inf_{Omega^c} u` for the instance with `f = 0`.
    pub minimum_principle_excess: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Seeds for `count` instances derived from `seed`.
pub fn instance_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen()).collect()
}

/// Discrete solutions of `-alpha Lap u - I u = -F`, `F >= 0`, on `[-1, 1]^d`
/// with constant exterior data. They are supersolutions of the extremal
/// inequality with forcing `-F <= 0`.
/// Instance 0 has `F = 0` and checks the minimum principle.
pub fn abp_batch(dim: usize, nodes: usize, count: usize, seed: u64, kernel: &LevyKernel, quad: &QuadratureScheme) -> Result<AbpBatchReport> {
    if count == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let p = experiment_params();
    let omega = BoxDomain::cube(dim, 1.0)?;
    let grid = Grid::new(omega.clone(), nodes)?;
    let region = Region::Box(omega.clone());
    let mut instances = Vec::with_capacity(count);
    let mut min_excess = 0.0;
    let mut tol_used: f64 = 0.0;
    for (idx, s) in instance_seeds(seed, count).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let alpha = rng.gen_range(p.lambda..=p.big_lambda);
        let ext = rng.gen_range(-1.0..=1.0);
        let pieces = if idx == 0 {
            vec![]
        } else {
            (0..rng.gen_range(1..=3))
                .map(|_| {
                    let mut lo = vec![0.0; dim];
                    let mut hi = vec![0.0; dim];
                    for k in 0..dim {
                        let a: f64 = rng.gen_range(-1.0..1.0);
                        let b: f64 = rng.gen_range(-1.0..1.0);
                        lo[k] = a.min(b);
                        hi[k] = a.max(b).max(lo[k] + 0.1);
                    }
                    (lo, hi, rng.gen_range(0.5..5.0))
                })
                .collect()
        };
        let forcing = BoxPieces { pieces };
        let fc = forcing.clone();
        let prob = HJBIProblem::new(
            Omega::Box(omega.clone()),
            vec![vec![Control::isotropic(dim, alpha, move |x| fc.eval(x))]],
            kernel.clone(),
            ExteriorRule::constant(ext),
            p,
        )?;
        let op = discretize(
            &prob,
            &grid,
            &DiscretizeOptions {
                quadrature: *quad,
                ..Default::default()
            },
        )?;
        let sol = solve_policy_iteration(&op, &SolveOptions::default())?;
        let fc = forcing.clone();
        let f = GridFunction::from_fn(grid.clone(), move |x| -fc.eval(x));
        let residual_tol = 10.0 * sol.tol;
        tol_used = tol_used.max(sol.tol);
        let report = abp_check(&sol.u, &f, &region, &p, kernel, 1.0, quad, residual_tol)?;
        if idx == 0 {
            min_excess = report.lhs + report.exterior_inf;
        }
        instances.push(AbpInstance {
            seed: s,
            diffusion: alpha,
            exterior: ext,
            forcing,
            report,
        });
    }
    let constant = instances.iter().map(|i| i.report.empirical_constant).fold(0.0, f64::max);
    let pass = instances.iter().all(|i| i.report.pass) && min_excess <= tol_used;
    Ok(AbpBatchReport {
        dim,
        nodes,
        seed,
        instances,
        constant,
        minimum_principle_excess: min_excess,
        tol: tol_used,
        pass,
    })
}

/// Nonnegative solution of `-alpha u'' - I u = bump` on `(-5/4, 5/4)` with
/// zero exterior data, where `bump` is a unit-mass Gaussian of width `w`
/// (a point-mass surrogate), checked against the weak Harnack ratios on
/// the scales `2^0 .. 2^-4`.
pub fn harnack_study(nodes: usize, width: f64, kernel: &LevyKernel, quad: &QuadratureScheme) -> Result<HarnackReport> {
    let p = experiment_params();
    let omega = BoxDomain::cube(1, 1.25)?;
    let grid = Grid::new(omega.clone(), nodes)?;
    let norm = 1.0 / (width * std::f64::consts::PI.sqrt());
    let bump = move |x: &[f64]| norm * (-(x[0] / width).powi(2)).exp();
    let prob = HJBIProblem::new(
        Omega::Box(omega),
        vec![vec![Control::isotropic(1, 1.5, move |x| -bump(x))]],
        kernel.clone(),
        ExteriorRule::constant(0.0),
        p,
    )?;
    let op = discretize(
        &prob,
        &grid,
        &DiscretizeOptions {
            quadrature: *quad,
            ..Default::default()
        },
    )?;
    let sol = solve_policy_iteration(&op, &SolveOptions::default())?;
    let f = GridFunction::from_fn(grid, bump);
    let mut cfg = HarnackConfig::new(1, (0..5).map(|k| 2f64.powi(-k)).collect());
    cfg.residual_tol = 10.0 * sol.tol;
    weak_harnack_check(&sol.u, &f, &p, kernel, quad, &cfg)
}
