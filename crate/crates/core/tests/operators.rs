use levylab_core::operators::{
    hjbi_eval, levy_apply, nonlocal_pucci_minus, nonlocal_pucci_plus, pucci_local_minus, pucci_local_plus,
};
use levylab_core::{
    BoxDomain, Control, EllipticityParams, ExteriorRule, Grid, GridFunction, HJBIProblem, LevyKernel, Multiplier, Omega,
    QuadratureScheme,
};
use proptest::prelude::*;

fn params() -> EllipticityParams {
    EllipticityParams::new(0.5, 2.5, 1.0).unwrap()
}

fn sym2() -> impl Strategy<Value = Vec<f64>> {
    (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b, c)| vec![a, b, b, c])
}

fn sym3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 6).prop_map(|v| vec![v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5]])
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

proptest! {
    #[test]
    fn pucci_ordering_and_duality(x in sym2()) {
        let p = params();
        let hi = pucci_local_plus(&x, 2, &p).unwrap();
        let lo = pucci_local_minus(&x, 2, &p).unwrap();
        prop_assert!(lo <= hi);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(pucci_local_plus(&neg, 2, &p).unwrap(), -lo);
    }

    #[test]
    fn pucci_sub_and_superadditivity(x in sym2(), y in sym2()) {
        let p = params();
        let s = add(&x, &y);
        prop_assert!(pucci_local_plus(&s, 2, &p).unwrap() <= pucci_local_plus(&x, 2, &p).unwrap() + pucci_local_plus(&y, 2, &p).unwrap() + 1e-10);
        prop_assert!(pucci_local_minus(&s, 2, &p).unwrap() >= pucci_local_minus(&x, 2, &p).unwrap() + pucci_local_minus(&y, 2, &p).unwrap() - 1e-10);
    }

    #[test]
    fn pucci_subadditivity_in_three_dimensions(x in sym3(), y in sym3()) {
        let p = params();
        let s = add(&x, &y);
        prop_assert!(pucci_local_plus(&s, 3, &p).unwrap() <= pucci_local_plus(&x, 3, &p).unwrap() + pucci_local_plus(&y, 3, &p).unwrap() + 1e-10);
        prop_assert!(pucci_local_minus(&x, 3, &p).unwrap() <= pucci_local_plus(&x, 3, &p).unwrap());
    }
}

#[test]
fn asymmetric_input_is_rejected() {
    assert!(pucci_local_plus(&[1.0, 0.5, 0.0, 1.0], 2, &params()).is_err());
}

fn line(n: usize, half: f64) -> Grid {
    Grid::new(BoxDomain::cube(1, half).unwrap(), n).unwrap()
}

fn plane(n: usize, half: f64) -> Grid {
    Grid::new(BoxDomain::cube(2, half).unwrap(), n).unwrap()
}

fn sandwich_field(seed: u64, d: usize, n: usize) -> GridFunction {
    let (a, b, c) = ((seed % 7) as f64 * 0.4 - 1.2, (seed % 5) as f64 * 0.3 - 0.6, (seed % 3) as f64 + 1.0);
    let f = move |x: &[f64]| a * (c * x[0]).sin() + b * x.iter().map(|v| v * v).sum::<f64>() + 0.3 * x[d - 1].cos();
    let g = if d == 1 { line(n, 3.0) } else { plane(n, 3.0) };
    let vals: Vec<f64> = (0..g.len()).map(|i| f(&g.point(i))).collect();
    GridFunction::new(g, vals, ExteriorRule::new(f)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn nonlocal_sandwich_on_grid_functions(seed in 0u64..1000, m0 in 0.0f64..=1.0, m1 in 0.0f64..=1.0, x0 in -0.5f64..0.5) {
        let q = QuadratureScheme::default();
        for d in [1usize, 2] {
            let u = sandwich_field(seed, d, if d == 1 { 241 } else { 41 });
            let k = LevyKernel::fractional(d, 1.3).unwrap();
            let x = vec![x0; d];
            let mult = Multiplier::new(move |_, z| if z[0] > 0.0 { m0 } else { m1 });
            for r in [1.0, 0.5] {
                let lin = levy_apply(&u, &x, &k, Some(&mult), r, &q).unwrap();
                let lo = nonlocal_pucci_minus(&u, &x, &k, r, &q).unwrap();
                let hi = nonlocal_pucci_plus(&u, &x, &k, r, &q).unwrap();
                let slack = 1e-12 * (1.0 + lo.abs() + hi.abs());
                prop_assert!(lo <= lin + slack && lin <= hi + slack, "d={} r={}: {} {} {}", d, r, lo, lin, hi);
                prop_assert!(lo <= 0.0 && hi >= 0.0);
            }
        }
    }
}

#[test]
fn quadratic_levy_value_converges_under_refinement() {
    // int_{-1}^{1} z^2 dz = 2/3 for u = y^2 and the unit compact kernel.
    let k = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap();
    let mut errors = Vec::new();
    for (n, q) in [
        (81, QuadratureScheme::default()),
        (161, QuadratureScheme::default().refined()),
        (321, QuadratureScheme::default().refined().refined()),
    ] {
        let g = line(n, 2.0);
        let u = GridFunction::new(g.clone(), (0..g.len()).map(|i| g.point(i)[0].powi(2)).collect(), ExteriorRule::new(|y| y[0] * y[0])).unwrap();
        errors.push((levy_apply(&u, &[0.1], &k, None, 1.0, &q).unwrap() - 2.0 / 3.0).abs());
    }
    assert!(errors[2] <= errors[0] * 0.5 + 1e-12, "{errors:?}");
    assert!(errors[2] < 1e-3, "{errors:?}");
}

#[test]
fn odd_data_under_a_symmetric_kernel_gives_zero() {
    let k = LevyKernel::compact_uniform(1, 0.75, 1.0).unwrap();
    let g = line(201, 2.0);
    let f = |y: &[f64]| y[0].powi(3) + 2.0 * y[0];
    let u = GridFunction::new(g.clone(), (0..g.len()).map(|i| f(&g.point(i))).collect(), ExteriorRule::new(f)).unwrap();
    let v = levy_apply(&u, &[0.0], &k, None, 1.0, &QuadratureScheme::default()).unwrap();
    assert!(v.abs() < 1e-12, "{v}");
}

#[test]
fn singleton_controls_collapse_to_the_linear_operator() {
    let p = params();
    let k = LevyKernel::compact_uniform(1, 0.5, 1.0).unwrap();
    let g = line(201, 1.0);
    let f = |y: &[f64]| (2.0 * y[0]).sin() + y[0] * y[0];
    let u = GridFunction::new(g.clone(), (0..g.len()).map(|i| f(&g.point(i))).collect(), ExteriorRule::new(f)).unwrap();
    let q = QuadratureScheme::default();
    let ctl = Control::isotropic(1, 1.5, |x| x[0]).with_drift(|_| vec![0.25]).with_zero_order(|_| 0.5);
    let prob = HJBIProblem::new(Omega::Box(BoxDomain::cube(1, 1.0).unwrap()), vec![vec![ctl]], k.clone(), ExteriorRule::new(f), p).unwrap();
    for x0 in [-0.3, 0.0, 0.4] {
        let x = [x0];
        let jet = levylab_core::operators::HessianEstimate::at(&u, &x, g.h).unwrap();
        let lin = -1.5 * jet.hessian[0] - levy_apply(&u, &x, &k, None, 1.0, &q).unwrap() + 0.25 * jet.gradient[0] + 0.5 * jet.value + x0;
        let h = hjbi_eval(&prob, &u, &x, &q).unwrap();
        assert!((h - lin).abs() <= 1e-12 * (1.0 + lin.abs()), "{h} vs {lin}");
    }
}

#[test]
fn hjbi_picks_the_larger_constant() {
    let p = params();
    let g = line(101, 1.0);
    let u = GridFunction::from_fn(g, |y| y[0] * y[0]);
    let prob = HJBIProblem::new(
        Omega::Box(BoxDomain::cube(1, 1.0).unwrap()),
        vec![vec![Control::isotropic(1, 1.0, |_| 5.0)], vec![Control::isotropic(1, 1.0, |_| 3.0)]],
        LevyKernel::zero(1),
        ExteriorRule::constant(0.0),
        p,
    )
    .unwrap();
    let v = hjbi_eval(&prob, &u, &[0.2], &QuadratureScheme::default()).unwrap();
    assert!((v - 3.0).abs() < 1e-9, "{v}");
}
