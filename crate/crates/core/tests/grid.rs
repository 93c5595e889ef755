use levylab_core::grid::{lp_norm, oscillation, superlevel_measure};
use levylab_core::{BoxDomain, ExteriorRule, Grid, GridFunction, Region};
use proptest::prelude::*;

fn plane(n: usize) -> Grid {
    Grid::new(BoxDomain::new(vec![-1.0, -0.5], vec![1.0, 1.5]).unwrap(), n).unwrap()
}

fn random_field(g: &Grid, seed: u64) -> GridFunction {
    let vals: Vec<f64> = (0..g.len())
        .map(|i| {
            let t = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed.wrapping_mul(1442695040888963407));
            ((t >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
        .collect();
    GridFunction::new(g.clone(), vals, ExteriorRule::constant(0.0)).unwrap()
}

proptest! {
    #[test]
    fn interpolation_reproduces_affine_data(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
                                             x in -1.0f64..1.0, y in -0.5f64..1.5) {
        let g = plane(17);
        let u = GridFunction::from_fn(g, move |p| a + b * p[0] + c * p[1]);
        let v = u.interpolate(&[x, y]);
        prop_assert!((v - (a + b * x + c * y)).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn lp_norm_grows_with_the_region(seed in 0u64..10_000, p in 0.1f64..4.0, r1 in 0.1f64..0.6, dr in 0.0f64..0.6) {
        let g = plane(21);
        let u = random_field(&g, seed);
        let small = Region::ball(vec![0.0, 0.5], r1);
        let big = Region::ball(vec![0.0, 0.5], r1 + dr);
        prop_assert!(lp_norm(&u, &small, p).unwrap() <= lp_norm(&u, &big, p).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn superlevel_measure_is_nonincreasing(seed in 0u64..10_000, t in -2.5f64..2.5, dt in 0.0f64..1.0) {
        let g = plane(21);
        let u = random_field(&g, seed);
        let r = Region::Box(g.domain.clone());
        prop_assert!(superlevel_measure(&u, &r, t + dt) <= superlevel_measure(&u, &r, t));
    }

    #[test]
    fn oscillation_vanishes_exactly_for_constants(c in -5.0f64..5.0, bump in prop::option::of(1e-9f64..1.0), node in 0usize..441) {
        let g = plane(21);
        let mut vals = vec![c; g.len()];
        if let Some(b) = bump {
            vals[node] += b;
        }
        let u = GridFunction::new(g.clone(), vals, ExteriorRule::constant(c)).unwrap();
        let osc = oscillation(&u, &Region::Box(g.domain.clone())).unwrap();
        prop_assert_eq!(osc == 0.0, bump.is_none());
    }
}

#[test]
fn empty_region_is_a_domain_error() {
    let g = plane(9);
    let u = GridFunction::from_fn(g, |_| 1.0);
    let far = Region::ball(vec![10.0, 10.0], 0.1);
    assert!(lp_norm(&u, &far, 1.0).is_err());
    assert!(oscillation(&u, &far).is_err());
}

#[test]
fn square_root_oscillation_on_a_small_ball() {
    let g = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 2001).unwrap();
    let u = GridFunction::from_fn(g, |x| x[0].abs().sqrt());
    let osc = oscillation(&u, &Region::ball(vec![0.0], 0.25)).unwrap();
    assert!((osc - 0.5).abs() < 1e-3, "{osc}");
}

#[test]
fn superlevel_of_the_identity_is_half_the_interval() {
    let g = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 1001).unwrap();
    let h = g.h;
    let u = GridFunction::from_fn(g.clone(), |x| x[0]);
    let m = superlevel_measure(&u, &Region::Box(g.domain.clone()), 0.0);
    assert!((m - 1.0).abs() <= h, "{m}");
}
