use levylab_core::barriers::{
    build_boundary_barrier, build_global_barrier, build_rescaled_special, build_special, sample_region, verify_inequality,
    verify_special, BarrierSpec, InequalityForm,
};
use levylab_core::solver::SmoothFunction;
use levylab_core::{BoxDomain, EllipticityParams, LevyKernel, QuadratureScheme, Region};
use proptest::prelude::*;
use std::sync::OnceLock;

fn strong() -> EllipticityParams {
    EllipticityParams::new(16.0, 32.0, 1.0).unwrap()
}

fn special_2d() -> &'static BarrierSpec {
    static B: OnceLock<BarrierSpec> = OnceLock::new();
    B.get_or_init(|| build_special(&strong(), &LevyKernel::fractional(2, 1.0).unwrap()).unwrap())
}

fn boundary(r: f64) -> &'static BarrierSpec {
    static B: OnceLock<Vec<(f64, BarrierSpec)>> = OnceLock::new();
    let all = B.get_or_init(|| {
        [0.25, 0.5, 0.75]
            .iter()
            .map(|&r| (r, build_boundary_barrier(r, &strong(), &LevyKernel::fractional(2, 1.0).unwrap()).unwrap()))
            .collect()
    });
    &all.iter().find(|(q, _)| *q == r).expect("cached radius").1
}

fn global() -> &'static BarrierSpec {
    static B: OnceLock<BarrierSpec> = OnceLock::new();
    B.get_or_init(|| build_global_barrier(&BoxDomain::cube(2, 1.0).unwrap(), &strong(), &LevyKernel::fractional(2, 1.0).unwrap()).unwrap())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn special_barrier_is_radially_nonincreasing(a in 0.0f64..4.0, b in 0.0f64..4.0, th in 0.0f64..6.3) {
        let s = special_2d();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (c, d) = (th.cos(), th.sin());
        prop_assert!(s.value(&[hi * c, hi * d]) <= s.value(&[lo * c, lo * d]));
        // Radial: the value only depends on |x|.
        let v = s.value(&[a, 0.0]);
        prop_assert!((s.value(&[a * c, a * d]) - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn boundary_barrier_is_one_over_r_lipschitz(x in prop::collection::vec(-0.9f64..0.9, 2), y in prop::collection::vec(-0.9f64..0.9, 2)) {
        for r in [0.25, 0.5, 0.75] {
            let b = boundary(r);
            let dist = norm(&[x[0] - y[0], x[1] - y[1]]);
            if dist > 1e-9 {
                let slope = (b.value(&x) - b.value(&y)).abs() / dist;
                prop_assert!(slope <= 1.0 / r + 1e-9, "r={} slope={}", r, slope);
            }
        }
    }

    #[test]
    fn global_barrier_stays_between_one_and_two(x in prop::collection::vec(-20.0f64..20.0, 2)) {
        let g = global();
        let v = g.value(&x);
        prop_assert!((1.0..=2.0).contains(&v));
        if x[0] < g.constants.shift.unwrap() {
            prop_assert_eq!(v, 1.0);
        }
    }
}

#[test]
fn special_barrier_sign_conditions() {
    for d in [1usize, 2] {
        for k in [LevyKernel::fractional(d, 0.5).unwrap(), LevyKernel::compact_uniform(d, 1.0, 1.0).unwrap()] {
            let s = build_special(&strong(), &k).unwrap();
            let sd = (d as f64).sqrt();
            // Outside B_{2 sqrt d}.
            for rho in [2.0 * sd, 2.0 * sd + 0.1, 5.0, 50.0] {
                let mut x = vec![0.0; d];
                x[0] = rho;
                assert!(s.value(&x) <= 0.0, "d={d} rho={rho}");
            }
            // Corners of the cube of side 3.
            assert!(s.value(&vec![1.5; d]) >= 2.0);
            assert!(s.value(&vec![0.0; d]) >= 2.0);
            assert!(s.constants.sup_norm.is_finite() && s.constants.sup_norm >= 2.0);
        }
    }
}

#[test]
fn rescaled_special_is_a_dilation() {
    let k = LevyKernel::fractional(2, 1.0).unwrap();
    let s = build_special(&strong(), &k).unwrap();
    let t = build_rescaled_special(&strong(), &k).unwrap();
    let r0 = t.constants.r0.unwrap();
    assert!((r0 - 1.0 / (9.0 * 2f64.sqrt())).abs() < 1e-15);
    for x in [[0.0, 0.0], [0.01, 0.02], [0.05, -0.03], [0.3, 0.1]] {
        let v = s.value(&[x[0] / r0, x[1] / r0]);
        assert!((t.value(&x) - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}

#[test]
fn zero_kernel_special_residual_is_positive_off_the_unit_ball() {
    let p = EllipticityParams::new(1.0, 1.0, 0.0).unwrap();
    let k = LevyKernel::zero(1);
    let s = build_special(&p, &k).unwrap();
    assert!(s.constants.eta <= 4.0);
    let sample: Vec<Vec<f64>> = (1..200).map(|i| vec![1.0 + 0.02 * i as f64]).collect();
    let rep = verify_special(&s, &p, &k, &[1.0], &sample, &QuadratureScheme::default()).unwrap();
    assert!(rep.pass);
    assert!(rep.samples.iter().all(|r| r.residual > 0.0 && r.cutoff == 0.0));
}

#[test]
fn compact_kernel_far_field_residual_is_nonnegative() {
    let p = strong();
    let k = LevyKernel::compact_uniform(1, 1.0, 1.0).unwrap();
    let s = build_special(&p, &k).unwrap();
    let far: Vec<Vec<f64>> = (0..50).map(|i| vec![2.0 + 1.0 + 0.1 * i as f64]).collect();
    let rep = verify_special(&s, &p, &k, &[1.0], &far, &QuadratureScheme::default()).unwrap();
    assert!(rep.samples.iter().all(|r| r.residual >= -(r.error_estimate + rep.budget)));
}

#[test]
fn boundary_barrier_shape() {
    for r in [0.25, 0.5, 0.75] {
        let b = boundary(r);
        let c = &b.constants;
        let (d1, d2, e5) = (c.delta1.unwrap(), c.delta2.unwrap(), c.eps5.unwrap());
        assert!(d1 > 0.0 && d1 < d2 && e5 > 0.0);
        for x in [[0.0, 0.0], [r, 0.0], [0.0, -r], [0.5 * r, 0.5 * r]] {
            assert_eq!(b.value(&x), 0.0);
        }
        for rho in [(1.0 + d1) * r, (1.0 + d2) * r, 2.0, 10.0] {
            assert!(b.value(&[rho, 0.0]) >= e5 * (1.0 - 1e-12));
            assert!(b.value(&[rho, 0.0]) <= c.sup_norm);
        }
        // psi~ along a ray: slope 1 at the ball and concave on [0, delta2].
        let n = 400;
        let vals: Vec<f64> = (0..=n).map(|i| b.value(&[r * (1.0 + d2 * i as f64 / n as f64), 0.0])).collect();
        let ds = d2 / n as f64;
        assert!((vals[1] / ds - 1.0).abs() < 0.05, "initial slope {}", vals[1] / ds);
        for i in 1..n {
            let second = vals[i + 1] - 2.0 * vals[i] + vals[i - 1];
            assert!(second <= 1e-10, "r={r} i={i}: {second}");
        }
    }
}

#[test]
fn boundary_inequality_holds_on_the_annulus_and_excludes_far_points() {
    let p = strong();
    let k = LevyKernel::compact_uniform(2, 1.0, 1.0).unwrap();
    let r = 0.5;
    let b = build_boundary_barrier(r, &p, &k).unwrap();
    let d2 = b.constants.delta2.unwrap();
    let wide = Region::Annulus {
        center: vec![0.0, 0.0],
        inner: r,
        outer: r * (1.0 + 3.0 * d2),
    };
    let rep = verify_inequality(&b, InequalityForm::SupersolutionPlus, &wide, 40, &p, &k, 1.0, &QuadratureScheme::default()).unwrap();
    assert!(rep.pass && rep.empirical_constant <= -1.0);
    assert!(rep.excluded > 0);
}

#[test]
fn global_barrier_zero_kernel_residual_matches_closed_form() {
    let p = EllipticityParams::new(1.0, 2.0, 0.5).unwrap();
    let k = LevyKernel::zero(1);
    let omega = BoxDomain::cube(1, 1.0).unwrap();
    let g = build_global_barrier(&omega, &p, &k).unwrap();
    let (eta, s) = (g.constants.eta, g.constants.shift.unwrap());
    let rep = verify_inequality(&g, InequalityForm::SupersolutionPlus, &Region::Box(omega), 41, &p, &k, 1.0, &QuadratureScheme::default()).unwrap();
    assert!(rep.pass);
    for smp in &rep.samples {
        let e = (-eta * (smp.point[0] - s)).exp();
        let exact = -p.lambda * eta * eta * e + p.c0 * eta * e;
        assert!((smp.residual - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "{} vs {exact}", smp.residual);
        assert!(smp.residual <= -g.constants.eps6.unwrap());
    }
}

#[test]
fn constant_candidate_fails_the_strict_check() {
    let p = strong();
    let k = LevyKernel::fractional(1, 1.0).unwrap();
    let c = BarrierSpec::candidate(1, SmoothFunction::new(|_| 3.0, |_| vec![0.0], |_| vec![0.0]));
    let rep = verify_inequality(&c, InequalityForm::SupersolutionPlus, &Region::cube(vec![0.0], 1.0), 21, &p, &k, 1.0, &QuadratureScheme::default()).unwrap();
    assert!(!rep.pass);
    assert!(rep.samples.iter().all(|s| s.residual.abs() < 1e-12));
}

#[test]
fn sampling_covers_the_requested_box() {
    let pts = sample_region(&Region::cube(vec![0.0, 0.0], 1.0), 2, 11).unwrap();
    assert_eq!(pts.len(), 121);
    assert!(pts.iter().all(|p| p.iter().all(|v| v.abs() <= 1.0)));
}
