//! One function per subcommand. Each returns the report body and series
//! without touching the report files.

use std::path::Path;

use levylab_core::barriers::{
    build_boundary_barrier, build_global_barrier, build_rescaled_special, build_special, sample_region, verify_inequality,
    verify_special,
};
use levylab_core::experiments::abp_batch;
use levylab_core::geometry::{contact_set, convex_envelope};
use levylab_core::operators::{pucci_local_minus, pucci_local_plus};
use levylab_core::regularity::{holder_report, weak_harnack_check};
use levylab_core::solver::{
    discretize, solve_policy_iteration, solve_pseudo_time, DiscretizeOptions, Solution, SolveOptions,
};
use levylab_core::{
    BoxDomain, ContactVariant, EllipticityParams, ExteriorRule, Grid, GridFunction, HarnackConfig, InequalityForm,
    LevyKernel, Region, VerificationReport,
};
use serde_json::{json, Value};

use crate::config::{field, BarrierChoice, LoadedConfig, Setup, SolverKind};
use crate::expr::Expr;
use crate::{CliError, Series, TaskOutput};

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Io(e.to_string()))
}

fn compute(lc: &LoadedConfig, s: &Setup) -> Result<Solution, CliError> {
    let p = &lc.config.problem;
    let prob = s.problem(&lc.config)?;
    let op = discretize(
        &prob,
        &s.grid,
        &DiscretizeOptions {
            quadrature: s.quad,
            ..Default::default()
        },
    )?;
    let sol = match p.solver {
        SolverKind::Policy => solve_policy_iteration(
            &op,
            &SolveOptions {
                tol: p.tol,
                ..Default::default()
            },
        )?,
        SolverKind::PseudoTime => solve_pseudo_time(&op, None, p.tol, p.max_steps, None)?,
    };
    Ok(sol)
}

/// `task.function` sampled on the lattice, or the computed solution.
fn field_or_solution(lc: &LoadedConfig, s: &Setup) -> Result<GridFunction, CliError> {
    match &lc.config.task.function {
        Some(src) => {
            let e = lc.expr("task", "function", src, s.dim())?;
            let vals = (0..s.grid.len())
                .map(|i| e.eval(&s.grid.point(i)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|err| lc.invalid("task", "function", err.to_string()))?;
            Ok(GridFunction::new(s.grid.clone(), vals, ExteriorRule::new(field(&s.exterior)))?)
        }
        None => Ok(compute(lc, s)?.u),
    }
}

pub fn solve(lc: &LoadedConfig, s: &Setup, out: &Path) -> Result<TaskOutput, CliError> {
    let bound = lc.config.task.error_bound;
    if bound.is_some() && s.exact.is_none() {
        return Err(lc.invalid("task", "error_bound", "needs problem.exact"));
    }
    let sol = compute(lc, s)?;
    let sup_error = s.exact.as_ref().map(|e| {
        (0..s.grid.len())
            .map(|i| (sol.u.values[i] - e.eval(&s.grid.point(i)).unwrap_or(f64::NAN)).abs())
            .fold(0.0, f64::max)
    });
    let mut files = Vec::new();
    if lc.config.output.solution_csv {
        sol.u.write_csv(&out.join("solution.csv"))?;
        files.push("solution.csv");
    }
    if lc.config.output.solution_bin {
        sol.u.write_binary(&out.join("solution.bin"))?;
        files.push("solution.bin");
    }
    let converged = sol.residual <= sol.tol;
    let within = match (sup_error, bound) {
        (Some(e), Some(b)) => e <= b,
        _ => true,
    };
    let mut series = Series::new(&["entry", "residual"]);
    series.rows = sol.history.iter().enumerate().map(|(i, r)| vec![i as f64, *r]).collect();
    let summary = to_value(&sol.summary())?;
    Ok(TaskOutput {
        pass: converged && within,
        result: json!({
            "nodes": s.grid.len(),
            "h": s.grid.h,
            "solver": lc.config.problem.solver,
            "residual": sol.residual,
            "tol": sol.tol,
            "iterations": sol.iterations,
            "sup_error": sup_error,
            "error_bound": bound,
            "files": files,
        }),
        series,
        stdout: Some(summary.to_string()),
    })
}

fn barrier_output(rep: &VerificationReport) -> Result<TaskOutput, CliError> {
    let d = rep.samples.first().map_or(0, |s| s.point.len());
    let mut head = vec!["scale".to_string()];
    head.extend((1..=d).map(|i| format!("x{i}")));
    head.extend(["residual", "error_estimate", "cutoff", "margin"].map(String::from));
    let rows = rep
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![s.scale];
            r.extend(&s.point);
            r.extend([s.residual, s.error_estimate, s.cutoff, s.margin]);
            r
        })
        .collect();
    let mut result = to_value(rep)?;
    // Per-sample records go to the CSV only.
    result.as_object_mut().expect("struct").remove("samples");
    Ok(TaskOutput {
        pass: rep.pass,
        result,
        series: Series { header: head, rows },
        stdout: None,
    })
}

fn default_per_axis(d: usize) -> usize {
    match d {
        1 => 400,
        2 => 32,
        _ => 10,
    }
}

pub fn verify_barrier(lc: &LoadedConfig, s: &Setup) -> Result<TaskOutput, CliError> {
    let t = &lc.config.task;
    let d = s.dim();
    let per_axis = t.per_axis.unwrap_or_else(|| default_per_axis(d));
    if per_axis == 0 {
        return Err(lc.invalid("task", "per_axis", "must be positive"));
    }
    let (p, k) = (&s.params, &s.kernel);
    let rep = match t.barrier.unwrap_or(BarrierChoice::Special) {
        choice @ (BarrierChoice::Special | BarrierChoice::RescaledSpecial) => {
            let b = if choice == BarrierChoice::Special {
                build_special(p, k)?
            } else {
                build_rescaled_special(p, k)?
            };
            let scales = t.scales.clone().unwrap_or_else(|| vec![1.0, 0.5, 0.25]);
            if scales.is_empty() || scales.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(lc.invalid("task", "scales", "need scales in (0, 1]"));
            }
            let unit = b.constants.r0.unwrap_or(1.0);
            let half = t.sample_half.unwrap_or((2.0 * (d as f64).sqrt() + 1.0) * unit);
            if !(half > 0.0) {
                return Err(lc.invalid("task", "sample_half", "must be positive"));
            }
            let sample = sample_region(&Region::cube(vec![0.0; d], half), d, per_axis)?;
            verify_special(&b, p, k, &scales, &sample, &s.quad)?
        }
        BarrierChoice::Boundary => {
            let r = t.radius.unwrap_or(0.5);
            if !(r > 0.0 && r <= 1.0) {
                return Err(lc.invalid("task", "radius", format!("must lie in (0, 1] (got {r})")));
            }
            let b = build_boundary_barrier(r, p, k)?;
            let d1 = b.constants.delta1.expect("boundary barrier has delta1");
            let region = Region::Annulus {
                center: vec![0.0; d],
                inner: r,
                outer: r * (1.0 + d1),
            };
            verify_inequality(&b, InequalityForm::SupersolutionPlus, &region, per_axis, p, k, 1.0, &s.quad)?
        }
        BarrierChoice::Global => {
            let b = build_global_barrier(&s.domain, p, k)?;
            verify_inequality(&b, InequalityForm::SupersolutionPlus, &Region::Box(s.domain.clone()), per_axis, p, k, 1.0, &s.quad)?
        }
    };
    barrier_output(&rep)
}

pub fn abp(lc: &LoadedConfig, s: &Setup, seed: u64) -> Result<TaskOutput, CliError> {
    let count = lc.config.task.count.unwrap_or(20);
    if count == 0 {
        return Err(lc.invalid("task", "count", "must be positive"));
    }
    let rep = abp_batch(s.dim(), lc.config.problem.nodes, count, seed, &s.kernel, &s.quad)?;
    let mut series = Series::new(&["instance", "empirical_constant", "forcing_norm", "lhs", "exterior_inf", "contact_nodes", "pass"]);
    series.rows = rep
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let r = &inst.report;
            vec![
                i as f64,
                r.empirical_constant,
                r.forcing_norm,
                r.lhs,
                r.exterior_inf,
                r.contact_nodes as f64,
                r.pass as u8 as f64,
            ]
        })
        .collect();
    Ok(TaskOutput {
        pass: rep.pass,
        result: to_value(&rep)?,
        series,
        stdout: None,
    })
}

fn center(lc: &LoadedConfig, s: &Setup) -> Result<Vec<f64>, CliError> {
    let c = lc.config.task.center.clone().unwrap_or_else(|| s.domain.center());
    if c.len() != s.dim() {
        return Err(lc.invalid("task", "center", format!("needs {} entries", s.dim())));
    }
    if !s.domain.contains(&c) {
        return Err(lc.invalid("task", "center", "must lie in the domain"));
    }
    Ok(c)
}

pub fn harnack(lc: &LoadedConfig, s: &Setup) -> Result<TaskOutput, CliError> {
    let t = &lc.config.task;
    let d = s.dim();
    let source: Expr = match (&t.source, s.pairs.as_slice()) {
        (Some(src), _) => lc.expr("task", "source", src, d)?,
        (None, [only]) => Expr::parse(&format!("-({})", only.rhs.source())).expect("negated expression parses"),
        (None, _) => return Err(lc.invalid("task", "source", "required when the problem has several control pairs")),
    };
    let c = center(lc, s)?;
    let sol = compute(lc, s)?;
    let f = GridFunction::from_fn(s.grid.clone(), field(&source));
    let mut cfg = HarnackConfig::new(d, t.scales.clone().unwrap_or_else(|| (0..5).map(|k| 2f64.powi(-k)).collect()));
    cfg.center = c;
    if let Some(e) = &t.eps_grid {
        cfg.eps_grid = e.clone();
    }
    if let Some(b) = t.spread_bound {
        if !(b >= 1.0) {
            return Err(lc.invalid("task", "spread_bound", "must be at least 1"));
        }
        cfg.spread_bound = b;
    }
    cfg.residual_tol = 10.0 * sol.tol;
    let rep = weak_harnack_check(&sol.u, &f, &s.params, &s.kernel, &s.quad, &cfg)?;
    let mut series = Series::new(&["eps", "scale", "ratio"]);
    for row in &rep.rows {
        for (l, r) in rep.scales.iter().zip(&row.ratios) {
            series.rows.push(vec![row.eps, *l, *r]);
        }
    }
    Ok(TaskOutput {
        pass: rep.pass,
        result: to_value(&rep)?,
        series,
        stdout: None,
    })
}

pub fn holder(lc: &LoadedConfig, s: &Setup) -> Result<TaskOutput, CliError> {
    let t = &lc.config.task;
    let ratio = t.ratio.unwrap_or(2.0);
    if !(ratio > 1.0) {
        return Err(lc.invalid("task", "ratio", "must exceed 1"));
    }
    let c = center(lc, s)?;
    let u = field_or_solution(lc, s)?;
    let rep = holder_report(&u, &c, ratio, t.kmax.unwrap_or(8))?;
    let mut series = Series::new(&["k", "radius", "osc"]);
    series.rows = rep
        .oscillations
        .iter()
        .enumerate()
        .map(|(k, o)| vec![k as f64, ratio.powi(-(k as i32)), *o])
        .collect();
    Ok(TaskOutput {
        pass: rep.alpha > 0.0 && rep.alpha.is_finite(),
        result: to_value(&rep)?,
        series,
        stdout: None,
    })
}

pub fn envelope(lc: &LoadedConfig, s: &Setup) -> Result<TaskOutput, CliError> {
    let u = field_or_solution(lc, s)?;
    let region = Region::Box(s.domain.clone());
    let env = convex_envelope(&u, &region)?;
    let mask = contact_set(&u, &region, ContactVariant::Local, lc.config.task.contact_tol)?;
    let d = s.dim();
    let mut head: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    head.extend(["u", "envelope", "contact"].map(String::from));
    let mut series = Series { header: head, rows: Vec::new() };
    let mut max_gap: f64 = 0.0;
    let mut below = true;
    for i in 0..s.grid.len() {
        let gap = u.values[i] - env.values[i];
        max_gap = max_gap.max(gap);
        below &= gap >= -1e-9 * (1.0 + u.values[i].abs());
        let mut row = s.grid.point(i);
        row.extend([u.values[i], env.values[i], mask.mask[i] as u8 as f64]);
        series.rows.push(row);
    }
    Ok(TaskOutput {
        pass: below,
        result: json!({
            "nodes": s.grid.len(),
            "contact_nodes": mask.count(),
            "contact_tol": mask.tol,
            "max_gap": max_gap,
            "envelope_below": below,
        }),
        series,
        stdout: None,
    })
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Fast built-in checks with closed-form answers; needs no config.
pub fn selftest() -> Result<TaskOutput, CliError> {
    let mut checks = Vec::new();

    let cases = [("1 - x1^2", vec![0.5], 0.75), ("exp(-abs(x))", vec![0.0], 1.0), ("min(1, |x|)", vec![3.0, 4.0], 1.0)];
    for (src, x, want) in cases {
        let got = Expr::parse(src).ok().and_then(|e| e.eval(&x).ok());
        checks.push(Check {
            name: "expression",
            pass: got == Some(want),
            detail: format!("{src} at {x:?} = {got:?}, expected {want}"),
        });
    }

    // diag(1, -2) with lambda = 1, Lambda = 3: P+ = 3 - 2 = 1, P- = 1 - 6 = -5.
    let p = EllipticityParams::new(1.0, 3.0, 0.0)?;
    let m = [1.0, 0.0, 0.0, -2.0];
    let (hi, lo) = (pucci_local_plus(&m, 2, &p)?, pucci_local_minus(&m, 2, &p)?);
    checks.push(Check {
        name: "pucci",
        pass: (hi - 1.0).abs() < 1e-12 && (lo + 5.0).abs() < 1e-12,
        detail: format!("P+ = {hi}, P- = {lo}"),
    });

    // -u'' - 2 = 0 on (-1, 1), u = 0 outside: u = 1 - x^2 exactly on the lattice.
    let omega = BoxDomain::cube(1, 1.0)?;
    let grid = Grid::new(omega.clone(), 33)?;
    let prob = levylab_core::HJBIProblem::new(
        levylab_core::Omega::Box(omega),
        vec![vec![levylab_core::Control::isotropic(1, 1.0, |_| -2.0)]],
        LevyKernel::zero(1),
        ExteriorRule::constant(0.0),
        p,
    )?;
    let sol = solve_policy_iteration(&discretize(&prob, &grid, &DiscretizeOptions::default())?, &SolveOptions::default())?;
    let err = (0..grid.len())
        .map(|i| (sol.u.values[i] - (1.0 - grid.point(i)[0].powi(2))).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "poisson",
        pass: err < 1e-8,
        detail: format!("sup error {err:.3e}"),
    });

    // The envelope of a hat on three nodes is the zero chord.
    let hat = GridFunction::new(Grid::new(BoxDomain::cube(1, 1.0)?, 3)?, vec![0.0, 1.0, 0.0], ExteriorRule::constant(0.0))?;
    let env = convex_envelope(&hat, &Region::Box(hat.grid.domain.clone()))?;
    checks.push(Check {
        name: "envelope",
        pass: env.values.iter().all(|v| v.abs() < 1e-12),
        detail: format!("{:?}", env.values),
    });

    let pass = checks.iter().all(|c| c.pass);
    let mut series = Series::new(&["check", "pass"]);
    series.rows = checks.iter().enumerate().map(|(i, c)| vec![i as f64, c.pass as u8 as f64]).collect();
    let list: Vec<Value> = checks
        .iter()
        .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
        .collect();
    Ok(TaskOutput {
        pass,
        result: json!({ "checks": list }),
        series,
        stdout: None,
    })
}
