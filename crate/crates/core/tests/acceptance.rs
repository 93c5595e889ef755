//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p levylab-core --test acceptance`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use levylab_core::barriers::{
    build_boundary_barrier, build_global_barrier, build_special, sample_region, verify_inequality, verify_special,
    InequalityForm,
};
use levylab_core::experiments::{
    abp_batch, convergence_study, harnack_study, manufactured_problem, perron_study, rough_problem, solver_agreement,
};
use levylab_core::geometry::{convex_envelope, sup_convolution};
use levylab_core::operators::{
    levy_integral, pucci_local_minus, pucci_local_plus, Aggregate, HessianEstimate, LocalJet,
};
use levylab_core::quadrature::LevyQuadrature;
use levylab_core::regularity::superlevel_decay;
use levylab_core::{
    BoxDomain, EllipticityParams, ExteriorRule, Grid, GridFunction, LevyKernel, Multiplier, QuadratureScheme, Region,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    if let Ok(only) = std::env::var("ACCEPTANCE_ONLY") {
        if !only.split(',').any(|s| s.trim() == id.to_string()) {
            println!("criterion {id} SKIPPED: {name}");
            return true;
        }
    }
    let t = Instant::now();
    let o = f();
    println!(
        "criterion {id} {}: {name}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

fn barrier_kernels(d: usize) -> Vec<(String, LevyKernel)> {
    let mut v: Vec<(String, LevyKernel)> = [0.5, 1.0, 1.5]
        .iter()
        .map(|s| (format!("fractional({s})"), LevyKernel::fractional(d, *s).unwrap()))
        .collect();
    v.push(("compact-uniform".into(), LevyKernel::compact_uniform(d, 1.0, 1.0).unwrap()));
    v
}

/// Strong ellipticity keeps the special barrier's multiplier in range for
/// the most singular kernel.
fn barrier_params() -> EllipticityParams {
    EllipticityParams::new(16.0, 32.0, 1.0).unwrap()
}

fn criterion_1() -> Outcome {
    let p = barrier_params();
    let q = QuadratureScheme::default();
    let scales: Vec<f64> = (0..=6).map(|k| 2f64.powi(-k)).collect();
    let mut worst: f64 = f64::INFINITY;
    let mut c_max: f64 = 0.0;
    let mut failures = Vec::new();
    let mut n_points = usize::MAX;
    let (mut loose, mut total) = (0usize, 0usize);
    for d in [1, 2] {
        let half = 2.0 * (d as f64).sqrt() + 1.0;
        let per_axis = if d == 1 { 1000 } else { 32 };
        let sample = sample_region(&Region::cube(vec![0.0; d], half), d, per_axis).unwrap();
        n_points = n_points.min(sample.len());
        for (name, k) in barrier_kernels(d) {
            match build_special(&p, &k).and_then(|b| verify_special(&b, &p, &k, &scales, &sample, &q)) {
                Ok(rep) => {
                    loose += rep.samples.iter().filter(|s| s.error_estimate > 1e-3 * (s.residual.abs() + s.cutoff * rep.empirical_constant)).count();
                    total += rep.samples.len();
                    worst = worst.min(rep.worst_margin);
                    c_max = c_max.max(rep.empirical_constant);
                    if !rep.pass {
                        failures.push(format!("d={d} {name}"));
                    }
                }
                Err(e) => failures.push(format!("d={d} {name}: {e}")),
            }
        }
    }
    Outcome {
        pass: failures.is_empty() && n_points >= 1000,
        detail: format!(
            "single C = {c_max:.4e} over r in 2^0..2^-6, {n_points}+ points per case, worst margin {worst:.3e}, {loose}/{total} samples with error estimate above 1e-3 relative{}",
            if failures.is_empty() { String::new() } else { format!(", failing: {failures:?}") }
        ),
    }
}

fn criterion_2() -> Outcome {
    let p = barrier_params();
    let q = QuadratureScheme::default();
    let mut failures = Vec::new();
    let mut worst_boundary = f64::NEG_INFINITY;
    let mut worst_global = f64::NEG_INFINITY;
    let mut min_eps6 = f64::INFINITY;
    for d in [1, 2] {
        for (name, k) in barrier_kernels(d) {
            for r in [0.25, 0.5, 0.75] {
                let res = build_boundary_barrier(r, &p, &k).and_then(|b| {
                    let d1 = b.constants.delta1.unwrap();
                    let ann = Region::Annulus {
                        center: vec![0.0; d],
                        inner: r,
                        outer: r * (1.0 + d1),
                    };
                    verify_inequality(&b, InequalityForm::SupersolutionPlus, &ann, if d == 1 { 400 } else { 32 }, &p, &k, 1.0, &q)
                });
                match res {
                    Ok(rep) => {
                        worst_boundary = worst_boundary.max(rep.empirical_constant);
                        if !rep.pass || rep.empirical_constant > -1.0 {
                            failures.push(format!("boundary d={d} {name} r={r}"));
                        }
                    }
                    Err(e) => failures.push(format!("boundary d={d} {name} r={r}: {e}")),
                }
            }
            let omega = BoxDomain::cube(d, 1.0).unwrap();
            let res = build_global_barrier(&omega, &p, &k).and_then(|b| {
                verify_inequality(&b, InequalityForm::SupersolutionPlus, &Region::Box(omega.clone()), if d == 1 { 400 } else { 32 }, &p, &k, 1.0, &q)
            });
            match res {
                Ok(rep) => {
                    let eps6 = rep.constants.eps6.unwrap();
                    min_eps6 = min_eps6.min(eps6);
                    worst_global = worst_global.max(rep.empirical_constant + eps6);
                    if !rep.pass || !(eps6 > 0.0) || rep.empirical_constant > -eps6 {
                        failures.push(format!("global d={d} {name}"));
                    }
                }
                Err(e) => failures.push(format!("global d={d} {name}: {e}")),
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "boundary max residual {worst_boundary:.3e} (<= -1), global max residual + eps6 {worst_global:.3e} (<= 0), min eps6 {min_eps6:.3e}{}",
            if failures.is_empty() { String::new() } else { format!(", failing: {failures:?}") }
        ),
    }
}

fn criterion_3() -> Outcome {
    let q = QuadratureScheme::default();
    let light = QuadratureScheme {
        shells: 1,
        nodes_per_shell: 4,
        angular_nodes: 16,
        ..q
    };
    let studies = [
        ("d=1 K=0", 1, LevyKernel::zero(1), vec![1025, 2049, 4097], q, 1.8),
        ("d=1 compact", 1, LevyKernel::compact_uniform(1, 0.5, 1.0).unwrap(), vec![1025, 2049, 4097], q, 0.9),
        ("d=1 fractional(0.5)", 1, LevyKernel::fractional(1, 0.5).unwrap(), vec![1025, 2049, 4097], q, 0.9),
        ("d=2 K=0", 2, LevyKernel::zero(2), vec![65, 129, 257], q, 1.8),
        ("d=2 compact", 2, LevyKernel::compact_uniform(2, 0.25, 1.0).unwrap(), vec![65, 129, 257], light, 0.9),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, d, k, levels, quad, target) in studies {
        match convergence_study(d, k, &levels, &quad) {
            Ok(r) => {
                let slope = r.slopes.iter().cloned().fold(f64::INFINITY, f64::min);
                ok &= slope >= target;
                parts.push(format!("{name} slope {slope:.3} (>= {target})"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let agreements = [
        ("manufactured d=1", manufactured_problem(1, LevyKernel::compact_uniform(1, 0.5, 1.0).unwrap()).unwrap().0, 65),
        ("manufactured d=2", manufactured_problem(2, LevyKernel::zero(2)).unwrap().0, 17),
        ("rough Isaacs d=1", rough_problem(LevyKernel::fractional(1, 1.0).unwrap()).unwrap(), 65),
    ];
    for (name, prob, n) in agreements {
        match solver_agreement(&prob, n, &q) {
            Ok(a) => {
                ok &= a.difference <= 2.0 * a.tol;
                parts.push(format!("{name} |PI - PT| {:.2e} (<= {:.2e})", a.difference, 2.0 * a.tol));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn criterion_4() -> Outcome {
    let q = QuadratureScheme::default();
    let prob = rough_problem(LevyKernel::compact_uniform(1, 0.5, 1.0).unwrap()).unwrap();
    let mut ok = true;
    let mut alphas = Vec::new();
    let mut parts = Vec::new();
    for n in [65, 129] {
        match perron_study(&prob, n, &q, 2.0) {
            Ok(r) => {
                ok &= r.residual <= r.tol && r.difference <= 2.0 * r.tol && r.start_independence <= r.tol && r.holder.alpha > 0.0;
                alphas.push(r.holder.alpha);
                parts.push(format!(
                    "n={n}: {} sweeps, |Perron - PI| {:.2e} (<= {:.2e}), alpha {:.3}",
                    r.sweeps,
                    r.difference,
                    2.0 * r.tol,
                    r.holder.alpha
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("n={n}: {e}"));
            }
        }
    }
    if alphas.len() == 2 {
        let rel = (alphas[1] / alphas[0] - 1.0).abs();
        ok &= rel <= 0.2;
        parts.push(format!("alpha change {:.1}% (<= 20%)", 100.0 * rel));
    }
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn criterion_5() -> Outcome {
    let q = QuadratureScheme::default();
    let mut ok = true;
    let mut parts = Vec::new();
    // The d = 2 contact sets need 33^2 nodes before they resolve; the
    // reduced rule matches the default one to five digits here.
    let light = QuadratureScheme {
        shells: 1,
        nodes_per_shell: 4,
        angular_nodes: 16,
        ..q
    };
    for (d, levels, q) in [(1usize, [129usize, 257], q), (2, [33, 65], light)] {
        let k = LevyKernel::compact_uniform(d, 0.5, 1.0).unwrap();
        let mut cs = Vec::new();
        for n in levels {
            match abp_batch(d, n, 50, 2024, &k, &q) {
                Ok(b) => {
                    ok &= b.pass && b.instances.len() >= 50;
                    cs.push(b.constant);
                    parts.push(format!(
                        "d={d} n={n}: C_emp {:.4}, f=0 excess {:.1e} (tol {:.1e})",
                        b.constant, b.minimum_principle_excess, b.tol
                    ));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("d={d} n={n}: {e}"));
                }
            }
        }
        if cs.len() == 2 {
            let rel = (cs[1] / cs[0] - 1.0).abs();
            ok &= cs[0] > 0.0 && rel <= 0.3;
            parts.push(format!("d={d} refinement change {:.1}% (<= 30%)", 100.0 * rel));
        }
    }
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn criterion_6() -> Outcome {
    let q = QuadratureScheme::default();
    let k = LevyKernel::fractional(1, 1.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut decay = Vec::new();
    for width in [0.01, 0.02, 0.05] {
        match harnack_study(4097, width, &k, &q) {
            Ok(rep) => {
                let row = rep.chosen();
                ok &= rep.pass;
                parts.push(format!("width {width}: eps3 {} spread {:.3} (<= 5)", rep.chosen_eps, row.spread));
                decay.push(rep.chosen_eps);
            }
            Err(e) => {
                ok = false;
                parts.push(format!("width {width}: {e}"));
            }
        }
    }
    // Superlevel decay on the same family, with one constant for the batch.
    let eps = decay.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cs = Vec::new();
    if eps.is_finite() {
        for width in [0.01, 0.02, 0.05] {
            let (u, f) = harnack_solution(width, &k, &q);
            for l in [0.5, 0.25, 0.125, 0.0625] {
                let t: Vec<f64> = (0..12).map(|i| 2f64.powi(i - 2)).collect();
                match superlevel_decay(&u, &f, &[0.0], l, eps, &t) {
                    Ok(r) => cs.push(r.constant),
                    Err(e) => {
                        ok = false;
                        parts.push(format!("decay: {e}"));
                    }
                }
            }
        }
    }
    let c = cs.iter().cloned().fold(0.0, f64::max);
    let cmin = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    ok &= c.is_finite() && c > 0.0;
    parts.push(format!("superlevel C {c:.3e} over {} cases (smallest {cmin:.3e})", cs.len()));
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn harnack_solution(width: f64, k: &LevyKernel, q: &QuadratureScheme) -> (GridFunction, GridFunction) {
    use levylab_core::solver::{discretize, solve_policy_iteration, DiscretizeOptions, SolveOptions};
    use levylab_core::{Control, HJBIProblem, Omega};
    let omega = BoxDomain::cube(1, 1.25).unwrap();
    let grid = Grid::new(omega.clone(), 4097).unwrap();
    let norm = 1.0 / (width * std::f64::consts::PI.sqrt());
    let bump = move |x: &[f64]| norm * (-(x[0] / width).powi(2)).exp();
    let prob = HJBIProblem::new(
        Omega::Box(omega),
        vec![vec![Control::isotropic(1, 1.5, move |x| -bump(x))]],
        k.clone(),
        ExteriorRule::constant(0.0),
        levylab_core::experiments::experiment_params(),
    )
    .unwrap();
    let op = discretize(&prob, &grid, &DiscretizeOptions { quadrature: *q, ..Default::default() }).unwrap();
    let sol = solve_policy_iteration(&op, &SolveOptions::default()).unwrap();
    (sol.u, GridFunction::from_fn(grid, bump))
}

/// Lower convex envelope at every node by brute force over bracketing chords.
fn envelope_oracle(xs: &[f64], vs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|k| {
            let mut best = vs[k];
            for i in 0..=k {
                for j in k..n {
                    if i < j {
                        let t = (xs[k] - xs[i]) / (xs[j] - xs[i]);
                        best = best.min(vs[i] + t * (vs[j] - vs[i]));
                    }
                }
            }
            best
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    // Analytic sup-convolution of -x^2/2 at spacing 1e-3.
    let g = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 2001).unwrap();
    let u = GridFunction::new(
        g.clone(),
        (0..g.len()).map(|i| -0.5 * g.point(i)[0].powi(2)).collect(),
        ExteriorRule::new(|x| -0.5 * x[0] * x[0]),
    )
    .unwrap();
    let mut err: f64 = 0.0;
    for eps in [0.25, 0.5, 1.0] {
        let ue = sup_convolution(&u, eps).unwrap();
        for i in 0..g.len() {
            let x = g.point(i)[0];
            err = err.max((ue.values[i] + x * x / (2.0 * (1.0 + eps))).abs());
        }
    }
    ok &= err <= 1e-6;
    parts.push(format!("analytic error {err:.2e} (<= 1e-6)"));

    // Semiconvexity and u^eps >= u on rough data in d = 1 and d = 2.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap: f64 = f64::INFINITY;
    let mut below = 0usize;
    for d in [1usize, 2] {
        let n = if d == 1 { 401 } else { 41 };
        let g = Grid::new(BoxDomain::cube(d, 1.0).unwrap(), n).unwrap();
        for _ in 0..5 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = move |x: &[f64]| {
                a[0] * (3.0 * x[0]).sin() + a[1] * x.iter().map(|v| v.abs()).sum::<f64>() + a[2] * (x[0] * 7.0).cos().abs()
                    + a[3] * x[x.len() - 1].signum()
            };
            let vals: Vec<f64> = (0..g.len()).map(|i| field(&g.point(i))).collect();
            let u = GridFunction::new(g.clone(), vals, ExteriorRule::new(field)).unwrap();
            for eps in [0.05, 0.2] {
                let ue = sup_convolution(&u, eps).unwrap();
                below += (0..g.len()).filter(|&i| ue.values[i] < u.values[i]).count();
                for i in 0..g.len() {
                    if g.is_boundary(i) {
                        continue;
                    }
                    let jet = HessianEstimate::at(&ue, &g.point(i), g.h).unwrap();
                    let emin = levylab_core::operators::symmetric_eigenvalues(&jet.hessian, d)
                        .unwrap()
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    worst_gap = worst_gap.min(emin + 1.0 / eps + 10.0 * g.h);
                }
            }
        }
    }
    ok &= worst_gap >= 0.0 && below == 0;
    parts.push(format!("semiconvexity slack {worst_gap:.3e} (>= 0), nodes with u^eps < u: {below}"));

    // Envelope oracle on 100 random instances.
    let mut env_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(3..80);
        let g = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), n).unwrap();
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = GridFunction::new(g.clone(), vals.clone(), ExteriorRule::constant(0.0)).unwrap();
        let e = convex_envelope(&u, &Region::Box(BoxDomain::cube(1, 1.0).unwrap())).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| g.point(i)[0]).collect();
        let o = envelope_oracle(&xs, &vals);
        for i in 0..n {
            env_err = env_err.max((e.values[i] - o[i]).abs());
        }
    }
    ok &= env_err <= 1e-9;
    parts.push(format!("envelope oracle gap {env_err:.2e} (<= 1e-9)"));
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn rotation_sandwich(d: usize, eig: &[f64], angle: f64) -> Vec<f64> {
    if d == 1 {
        return vec![eig[0]];
    }
    let (c, s) = (angle.cos(), angle.sin());
    let r = [[c, -s], [s, c]];
    let mut m = vec![0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            m[i * 2 + j] = (0..2).map(|k| r[i][k] * eig[k] * r[j][k]).sum();
        }
    }
    m
}

fn criterion_8() -> Outcome {
    let p = EllipticityParams::new(1.0, 3.0, 1.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Closed-form Pucci values on rotated diagonal matrices.
    let mut perr: f64 = 0.0;
    let cases = [(1usize, vec![2.0]), (1, vec![-2.0]), (2, vec![1.0, -2.0]), (2, vec![0.5, 0.25]), (2, vec![-1.0, -4.0])];
    for (d, eig) in &cases {
        for _ in 0..20 {
            let m = rotation_sandwich(*d, eig, rng.gen_range(0.0..std::f64::consts::PI));
            let plus: f64 = eig.iter().map(|e| if *e > 0.0 { 3.0 * e } else { e * 1.0 }).sum();
            let minus: f64 = eig.iter().map(|e| if *e > 0.0 { e * 1.0 } else { 3.0 * e }).sum();
            perr = perr.max((pucci_local_plus(&m, *d, &p).unwrap() - plus).abs());
            perr = perr.max((pucci_local_minus(&m, *d, &p).unwrap() - minus).abs());
        }
    }
    ok &= perr <= 1e-12;
    parts.push(format!("Pucci closed forms {perr:.1e} (<= 1e-12)"));

    // Nonlocal sandwich on random smooth functions and multipliers.
    let mut violations = 0usize;
    let mut draws = 0usize;
    for d in [1usize, 2] {
        let k = LevyKernel::fractional(d, 1.2).unwrap();
        let rule = LevyQuadrature::new(&k, 1.0, 0.01, &QuadratureScheme::default(), &[]).unwrap();
        for _ in 0..500 {
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (a, b, ph) = (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3));
            let f = move |y: &[f64]| {
                let t: f64 = y.iter().zip(&w).map(|(u, v)| u * v).sum();
                a * (t + ph).sin() + b * y.iter().map(|v| v * v).sum::<f64>()
            };
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jet: LocalJet = HessianEstimate::from_fn(&f, &x, 1e-4);
            let (m0, m1) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let mult = Multiplier::new(move |_, z| if z[0] > 0.0 { m0 } else { m1 });
            let lin = levy_integral(&rule, &x, &jet, &f, Some(&mult), Aggregate::Linear);
            let lo = levy_integral(&rule, &x, &jet, &f, None, Aggregate::Negative);
            let hi = levy_integral(&rule, &x, &jet, &f, None, Aggregate::Positive);
            let slack = 1e-12 * (1.0 + lo.abs() + hi.abs());
            if lin < lo - slack || lin > hi + slack {
                violations += 1;
            }
            draws += 1;
        }
    }
    ok &= violations == 0 && draws >= 1000;
    parts.push(format!("nonlocal sandwich violations {violations}/{draws}"));

    // Scaling identity K_r = r^(2 - sigma) K for fractional kernels.
    let mut serr: f64 = 0.0;
    for d in [1usize, 2] {
        for sigma in [0.5, 1.0, 1.5] {
            let k = LevyKernel::fractional(d, sigma).unwrap();
            for _ in 0..50 {
                let r: f64 = rng.gen_range(0.01..1.0);
                let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let base = k.evaluate(&z).unwrap();
                let scaled = k.scale(r).unwrap().evaluate(&z).unwrap();
                serr = serr.max((scaled / (r.powf(2.0 - sigma) * base) - 1.0).abs());
            }
        }
    }
    ok &= serr <= 1e-12;
    parts.push(format!("kernel scaling relative error {serr:.1e} (<= 1e-12)"));
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn main() {
    let t = Instant::now();
    let results = [
        run(1, "barrier uniformity", criterion_1),
        run(2, "boundary and global barriers", criterion_2),
        run(3, "solver convergence", criterion_3),
        run(4, "Perron sandwich", criterion_4),
        run(5, "ABP batch", criterion_5),
        run(6, "weak Harnack uniformity", criterion_6),
        run(7, "sup-convolution and envelopes", criterion_7),
        run(8, "operator identities", criterion_8),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass ({:.0} s)", results.len(), t.elapsed().as_secs_f64());
    if passed != results.len() {
        std::process::exit(1);
    }
}
