//! Fixtures shared by the criterion benches.

use levylab_core::solver::{discretize, DiscreteOperator, DiscretizeOptions};
use levylab_core::{BoxDomain, Control, EllipticityParams, ExteriorRule, Grid, GridFunction, HJBIProblem, LevyKernel, Omega};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1]` values on `[-1, 1]^d` with `n` nodes per axis.
pub fn random_field(dim: usize, n: usize, seed: u64) -> GridFunction {
    let grid = Grid::new(BoxDomain::cube(dim, 1.0).unwrap(), n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridFunction::new(grid, vals, ExteriorRule::constant(0.0)).unwrap()
}

/// Smooth field with smooth exterior data, for jump-integral timings.
pub fn smooth_field(dim: usize, n: usize) -> GridFunction {
    let grid = Grid::new(BoxDomain::cube(dim, 2.0).unwrap(), n).unwrap();
    let f = |x: &[f64]| x.iter().map(|v| v.sin()).sum::<f64>();
    let vals = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
    GridFunction::new(grid, vals, ExteriorRule::new(f)).unwrap()
}

/// Two-by-two Isaacs problem on `(-1, 1)` with a compactly supported kernel.
pub fn isaacs_operator(nodes: usize) -> DiscreteOperator {
    let omega = BoxDomain::cube(1, 1.0).unwrap();
    let prob = HJBIProblem::new(
        Omega::Box(omega.clone()),
        vec![
            vec![
                Control::isotropic(1, 1.0, |x| x[0].sin()).with_drift(|_| vec![0.5]),
                Control::isotropic(1, 1.0, |x| 0.5 - x[0]).with_drift(|_| vec![-0.5]),
            ],
            vec![
                Control::isotropic(1, 1.5, |x| x[0].cos() - 0.5),
                Control::isotropic(1, 1.5, |x| x[0] * x[0] - 0.2).with_zero_order(|_| 1.0),
            ],
        ],
        LevyKernel::compact_uniform(1, 0.5, 1.0).unwrap(),
        ExteriorRule::new(|x| 0.1 * x[0]),
        EllipticityParams::new(1.0, 2.0, 1.0).unwrap(),
    )
    .unwrap();
    discretize(&prob, &Grid::new(omega, nodes).unwrap(), &DiscretizeOptions::default()).unwrap()
}
