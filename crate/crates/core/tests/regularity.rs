use levylab_core::experiments::harnack_study;
use levylab_core::regularity::{
    holder_fit, holder_report, oscillation_sequence, superlevel_decay, weak_harnack_check, HarnackConfig,
};
use levylab_core::{BoxDomain, EllipticityParams, ExteriorRule, Grid, GridFunction, LevyKernel, QuadratureScheme};
use proptest::prelude::*;

fn line(n: usize) -> Grid {
    Grid::new(BoxDomain::cube(1, 1.0).unwrap(), n).unwrap()
}

fn hash_unit(i: usize, seed: u64) -> f64 {
    let t = (i as u64 + 1).wrapping_mul(6364136223846793005).wrapping_add(seed.wrapping_mul(1442695040888963407));
    (t >> 11) as f64 / (1u64 << 53) as f64
}

proptest! {
    #[test]
    fn holder_fit_recovers_the_exponent_under_small_noise(
        alpha in 0.2f64..1.0,
        c in 0.1f64..10.0,
        ratio in 1.5f64..4.0,
        seed in 0u64..10_000,
    ) {
        let seq: Vec<f64> = (0..12)
            .map(|k| {
                let noise = 1.0 + 0.01 * (2.0 * hash_unit(k, seed) - 1.0);
                c * ratio.powf(-alpha * k as f64) * noise
            })
            .collect();
        let fit = holder_fit(&seq, ratio).unwrap();
        prop_assert!((fit.alpha - alpha).abs() <= 0.02 * alpha, "alpha {} fitted {}", alpha, fit.alpha);
        prop_assert_eq!(fit.points, 12);
    }

    #[test]
    fn oscillations_shrink_with_the_ball(seed in 0u64..10_000, x0 in -0.3f64..0.3) {
        let g = line(257);
        let vals: Vec<f64> = (0..g.len()).map(|i| hash_unit(i, seed)).collect();
        let u = GridFunction::new(g, vals, ExteriorRule::constant(0.0)).unwrap();
        let seq = oscillation_sequence(&u, &[x0], 2.0, 10).unwrap();
        for w in seq.values.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn superlevel_constant_is_invariant_under_joint_scaling(a in 0.1f64..2.0, b in 0.5f64..3.0, eps in 0.1f64..1.0) {
        let g = line(401);
        let u = GridFunction::from_fn(g.clone(), move |x| a + b * (1.0 - x[0] * x[0]));
        let f = GridFunction::from_fn(g.clone(), move |x| 1.0 + x[0].abs());
        let ts: Vec<f64> = (0..8).map(|i| 2f64.powi(i - 2)).collect();
        let base = superlevel_decay(&u, &f, &[0.0], 0.4, eps, &ts).unwrap().constant;
        for s in [2.0, 10.0] {
            let us = GridFunction::from_fn(g.clone(), move |x| s * (a + b * (1.0 - x[0] * x[0])));
            let fs = GridFunction::from_fn(g.clone(), move |x| s * (1.0 + x[0].abs()));
            let c = superlevel_decay(&us, &fs, &[0.0], 0.4, eps, &ts).unwrap().constant;
            prop_assert!((c - base).abs() <= 1e-9 * base.abs().max(1.0), "s={}: {} vs {}", s, c, base);
        }
    }
}

#[test]
fn square_root_profile_has_exponent_one_half() {
    let g = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 8193).unwrap();
    let u = GridFunction::from_fn(g, |x| x[0].abs().sqrt());
    let rep = holder_report(&u, &[0.0], 2.0, 10).unwrap();
    assert!((rep.alpha - 0.5).abs() < 0.02, "{}", rep.alpha);
    let consecutive = rep.oscillations[3] / rep.oscillations[0];
    assert!((consecutive - 8f64.powf(-0.5)).abs() < 1e-3, "{consecutive}");
}

#[test]
fn too_few_oscillations_are_rejected() {
    assert!(holder_fit(&[1.0, 0.5], 2.0).is_err());
    assert!(holder_fit(&[1.0, 0.5, 0.0, 0.1], 2.0).is_err());
    assert!(holder_fit(&[1.0, 0.5, 0.25], 1.0).is_err());
}

#[test]
fn coarse_grids_truncate_the_sequence() {
    let u = GridFunction::from_fn(line(33), |x| x[0]);
    let seq = oscillation_sequence(&u, &[0.0], 2.0, 20).unwrap();
    assert!(seq.truncated);
    assert!(seq.values.len() < 21);
}

#[test]
fn weak_harnack_rejects_sign_changing_data() {
    let g = line(101);
    let u = GridFunction::from_fn(g.clone(), |x| x[0]);
    let f = GridFunction::from_fn(g, |_| 0.0);
    let p = EllipticityParams::new(1.0, 2.0, 0.0).unwrap();
    let cfg = HarnackConfig::new(1, vec![0.5, 0.25]);
    let res = weak_harnack_check(&u, &f, &p, &LevyKernel::zero(1), &QuadratureScheme::default(), &cfg);
    assert!(res.is_err());
}

#[test]
fn harnack_ratios_stay_within_half_of_their_median() {
    let k = LevyKernel::fractional(1, 1.0).unwrap();
    let rep = harnack_study(1025, 0.05, &k, &QuadratureScheme::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
    let mut ratios = rep.chosen().ratios.clone();
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    for r in &ratios {
        assert!((r / median - 1.0).abs() <= 0.5, "{ratios:?}");
    }
}
