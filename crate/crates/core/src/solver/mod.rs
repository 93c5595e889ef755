//! Monotone discretization of the Dirichlet problem and its solution
//! drivers.

mod drivers;
pub mod linear;
mod manufactured;

pub use drivers::{perron_iterate, solve_policy_iteration, solve_pseudo_time, Solution, SolveOptions};
pub use manufactured::{manufactured_rhs, with_manufactured_rhs, SmoothFunction};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{stencil_offsets, Grid, GridFunction};
use crate::problem::HJBIProblem;
use crate::quadrature::{LevyQuadrature, QuadratureScheme};

/// First-order term discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriftScheme {
    #[default]
    Upwind,
    /// Second-order central differences; monotone only under the drift CFL
    /// condition, which assembly certifies.
    Central,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiscretizeOptions {
    pub quadrature: QuadratureScheme,
    pub drift: DriftScheme,
}

/// A quadrature node seen from the lattice: integer cell offset plus the
/// multilinear corner weights, shared by every grid node.
#[derive(Debug, Clone)]
struct LatticeNode {
    /// Lowest and highest lattice offsets touched, per axis.
    lo: Vec<isize>,
    hi: Vec<isize>,
    corners: Vec<(isize, f64)>,
    weight: f64,
    z: Vec<f64>,
}

/// Assembled coefficients of one control pair on the active nodes.
#[derive(Debug, Clone)]
pub(crate) struct PairData {
    /// `n_active x 3^d` local stencil coefficients (center included).
    pub local: Vec<f64>,
    /// Nonlocal diagonal `sum_q w_q m_q`.
    pub nl_diag: Vec<f64>,
    /// `f` plus exterior-data contributions of the nonlocal term.
    pub constant: Vec<f64>,
    /// Per-node multiplied weights of the in-box nodes (`n_active x nq`).
    pub mult: Option<Vec<f64>>,
    pub f_sup: f64,
}

/// The discrete operator `F_h(u) = max_a min_b (A_ab u + k_ab)` on the
/// nodes of the lattice that lie in Omega. Every `A_ab` is of positive
/// type: off-diagonal entries are nonpositive.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid,
    /// Lattice indices of the unknowns.
    pub active: Vec<usize>,
    active_pos: Vec<usize>,
    /// Exterior data on inactive nodes, zero on active ones.
    g_full: Vec<f64>,
    stencil_lin: Vec<isize>,
    nodes: Vec<LatticeNode>,
    pub(crate) pairs: Vec<Vec<PairData>>,
    pub problem: HJBIProblem,
    pub rule: LevyQuadrature,
}

const NONE: usize = usize::MAX;

impl DiscreteOperator {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn n_controls(&self) -> (usize, usize) {
        (self.pairs.len(), self.pairs[0].len())
    }

    pub fn stencil_size(&self) -> usize {
        self.stencil_lin.len()
    }

    /// Local stencil of pair `(a, b)` at active node `k`, ordered as
    /// [`stencil_offsets`].
    pub fn local_stencil(&self, a: usize, b: usize, k: usize) -> &[f64] {
        let s = self.stencil_size();
        &self.pairs[a][b].local[k * s..(k + 1) * s]
    }

    pub fn nonlocal_diagonal(&self, a: usize, b: usize, k: usize) -> f64 {
        self.pairs[a][b].nl_diag[k]
    }

    /// Largest `|f_ab|` over nodes and pairs.
    pub fn f_sup(&self) -> f64 {
        self.pairs.iter().flatten().fold(0.0, |m, p| m.max(p.f_sup))
    }

    /// Default tolerance `1e-8 (1 + |f|_inf)`.
    pub fn default_tol(&self) -> f64 {
        1e-8 * (1.0 + self.f_sup())
    }

    /// Full lattice vector with `g` on inactive nodes and `v` on active ones.
    pub fn embed(&self, v: &[f64]) -> Vec<f64> {
        let mut full = self.g_full.clone();
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = v[k];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&i| full[i]).collect()
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active_pos[idx] != NONE
    }

    pub fn exterior_values(&self) -> &[f64] {
        &self.g_full
    }

    /// Wraps a full lattice vector as a grid function with the problem's
    /// exterior rule.
    pub fn to_grid_function(&self, full: Vec<f64>) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: full,
            exterior: self.problem.exterior.clone(),
        }
    }

    /// `(A_ab u)(x_k) [+ k_ab(x_k)]` on a full lattice vector.
    pub(crate) fn row(&self, a: usize, b: usize, k: usize, full: &[f64], with_const: bool) -> f64 {
        let p = &self.pairs[a][b];
        let i = self.active[k];
        let s = self.stencil_size();
        let mut acc = 0.0;
        for (j, off) in self.stencil_lin.iter().enumerate() {
            let c = p.local[k * s + j];
            if c != 0.0 {
                acc += c * full[(i as isize + off) as usize];
            }
        }
        acc += p.nl_diag[k] * full[i];
        if !self.nodes.is_empty() {
            let nq = self.nodes.len();
            let d = self.grid.dim();
            let strides = self.grid.strides();
            let mut mi = [0isize; 8];
            for t in 0..d {
                mi[t] = ((i / strides[t]) % self.grid.shape[t]) as isize;
            }
            for (q, node) in self.nodes.iter().enumerate() {
                let mut inside = true;
                for t in 0..d {
                    if mi[t] + node.lo[t] < 0 || mi[t] + node.hi[t] >= self.grid.shape[t] as isize {
                        inside = false;
                        break;
                    }
                }
                if !inside {
                    continue;
                }
                let mut val = 0.0;
                for (off, beta) in &node.corners {
                    val += beta * full[(i as isize + off) as usize];
                }
                let w = match &p.mult {
                    Some(m) => m[k * nq + q],
                    None => node.weight,
                };
                acc -= w * val;
            }
        }
        if with_const {
            acc += p.constant[k];
        }
        acc
    }

    /// Diagonal entry of `A_ab` at node `k`.
    pub fn diagonal(&self, a: usize, b: usize, k: usize) -> f64 {
        let s = self.stencil_size();
        let p = &self.pairs[a][b];
        let mut dval = p.local[k * s + s / 2] + p.nl_diag[k];
        if !self.nodes.is_empty() {
            // In-box nodes that land back on x_k itself.
            let i = self.active[k];
            let nq = self.nodes.len();
            for (q, node) in self.nodes.iter().enumerate() {
                for (off, beta) in &node.corners {
                    if *off == 0 && self.node_inside(i, q) {
                        let w = p.mult.as_ref().map_or(node.weight, |m| m[k * nq + q]);
                        dval -= w * beta;
                    }
                }
            }
        }
        dval
    }

    fn node_inside(&self, i: usize, q: usize) -> bool {
        let node = &self.nodes[q];
        let strides = self.grid.strides();
        (0..self.grid.dim()).all(|t| {
            let m = ((i / strides[t]) % self.grid.shape[t]) as isize;
            m + node.lo[t] >= 0 && m + node.hi[t] < self.grid.shape[t] as isize
        })
    }

    /// `F_h(u)` at every active node for a full lattice vector.
    pub fn residual(&self, full: &[f64]) -> Vec<f64> {
        let (na, nb) = self.n_controls();
        (0..self.n_active())
            .into_par_iter()
            .map(|k| {
                let mut sup = f64::NEG_INFINITY;
                for a in 0..na {
                    let mut inf = f64::INFINITY;
                    for b in 0..nb {
                        inf = inf.min(self.row(a, b, k, full, true));
                    }
                    sup = sup.max(inf);
                }
                sup
            })
            .collect()
    }

    /// Largest diagonal over all pairs: the explicit step bound is its inverse.
    pub fn max_diagonal(&self) -> f64 {
        let (na, nb) = self.n_controls();
        (0..self.n_active())
            .map(|k| self.node_max_diagonal(k))
            .fold(0.0, f64::max)
            .max(if na * nb == 0 { 0.0 } else { f64::MIN_POSITIVE })
    }

    pub(crate) fn node_max_diagonal(&self, k: usize) -> f64 {
        let (na, nb) = self.n_controls();
        let mut m: f64 = 0.0;
        for a in 0..na {
            for b in 0..nb {
                m = m.max(self.diagonal(a, b, k));
            }
        }
        m
    }
}

fn lattice_nodes(grid: &Grid, rule: &LevyQuadrature) -> (Vec<LatticeNode>, Vec<usize>) {
    let d = grid.dim();
    let h = grid.h;
    let diam = grid.domain.diameter();
    let strides = grid.strides();
    let mut nodes = Vec::new();
    let mut far = Vec::new();
    for q in 0..rule.len() {
        let z = rule.point(q);
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if zn > diam * (1.0 + 1e-12) + h {
            far.push(q);
            continue;
        }
        let mut base = vec![0isize; d];
        let mut frac = vec![0.0; d];
        for t in 0..d {
            let s = z[t] / h;
            let mut f = s.floor();
            let mut r = s - f;
            if r > 1.0 - 1e-12 {
                f += 1.0;
                r = 0.0;
            } else if r < 1e-12 {
                r = 0.0;
            }
            base[t] = f as isize;
            frac[t] = r;
        }
        let mut corners = Vec::new();
        for c in 0..(1usize << d) {
            let mut w = 1.0;
            let mut off = 0isize;
            for t in 0..d {
                if c >> t & 1 == 1 {
                    w *= frac[t];
                    off += (base[t] + 1) * strides[t] as isize;
                } else {
                    w *= 1.0 - frac[t];
                    off += base[t] * strides[t] as isize;
                }
            }
            if w != 0.0 {
                corners.push((off, w));
            }
        }
        let hi = (0..d).map(|t| base[t] + if frac[t] > 0.0 { 1 } else { 0 }).collect();
        nodes.push(LatticeNode {
            lo: base,
            hi,
            corners,
            weight: rule.weights[q],
            z: z.to_vec(),
        });
    }
    (nodes, far)
}

/// Assembles the monotone scheme: second-order central differences for the
/// diffusion (plus the Taylor core of the Levy term), upwind or central
/// drift, and nonnegative-weight quadrature with multilinear interpolation
/// for the rest of the Levy term. Points outside the lattice box read `g`.
pub fn discretize(prob: &HJBIProblem, grid: &Grid, opts: &DiscretizeOptions) -> Result<DiscreteOperator> {
    let d = prob.dim();
    if grid.dim() != d {
        return Err(Error::param("grid", "dimension differs from the problem"));
    }
    if d > 3 {
        return Err(Error::Unsupported(format!("discretization in dimension {d}")));
    }
    let h = grid.h;
    let rule = LevyQuadrature::new(
        &prob.kernel,
        1.0,
        opts.quadrature.inner_radius_cells * h,
        &opts.quadrature,
        &[],
    )?;
    let has_nl = !prob.kernel.is_zero() && (rule.core_moment > 0.0 || !rule.is_empty());
    let (nodes, far) = if has_nl { lattice_nodes(grid, &rule) } else { (vec![], vec![]) };

    let mut active = Vec::new();
    let mut active_pos = vec![NONE; grid.len()];
    let mut g_full = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        let x = grid.point(i);
        if !grid.is_boundary(i) && prob.omega.contains(&x) {
            active_pos[i] = active.len();
            active.push(i);
        } else {
            g_full[i] = prob.exterior.eval(&x);
        }
    }
    if active.is_empty() {
        return Err(Error::param("grid", "no lattice node lies inside the domain"));
    }

    let offsets = stencil_offsets(d);
    let s = offsets.len();
    let strides = grid.strides();
    let stencil_lin: Vec<isize> = offsets
        .iter()
        .map(|o| o.iter().zip(strides).map(|(a, b)| a * *b as isize).sum())
        .collect();
    let pos = |o: &[isize]| -> usize {
        let mut p = 0;
        let mut m = 1;
        for v in o {
            p += ((v + 1) as usize) * m;
            m *= 3;
        }
        p
    };
    let center = s / 2;

    let z_samples: Vec<Vec<f64>> = (0..rule.len().min(64)).map(|q| rule.point(q * rule.len() / 64).to_vec()).collect();
    let s_area: f64 = rule.core_dirs.weights.iter().sum();

    active
        .par_iter()
        .try_for_each(|&i| prob.check_coefficients(&grid.point(i), &z_samples))?;

    let nq = nodes.len();
    let mut pairs = Vec::with_capacity(prob.controls.len());
    for (ia, row) in prob.controls.iter().enumerate() {
        let mut prow = Vec::with_capacity(row.len());
        for (ib, ctl) in row.iter().enumerate() {
            let results: Vec<Result<(Vec<f64>, f64, f64, Option<Vec<f64>>, f64)>> = active
                .par_iter()
                .map(|&i| {
                    let x = grid.point(i);
                    let mut a = (ctl.a)(&x);
                    let mut b = (ctl.b)(&x);
                    let c = (ctl.c)(&x);
                    let f = (ctl.f)(&x);
                    let mult = ctl.multiplier.as_ref();
                    let mut nl_diag = 0.0;
                    let mut ext = 0.0;
                    let mut mw = None;
                    if has_nl {
                        // Taylor core absorbed into the diffusion.
                        if rule.core_moment > 0.0 {
                            let scale = 0.5 * rule.core_moment / s_area;
                            let mut zc = vec![0.0; d];
                            for t in 0..rule.core_dirs.len() {
                                let th = rule.core_dirs.dir(t);
                                let m = match mult {
                                    Some(mf) => {
                                        for j in 0..d {
                                            zc[j] = 0.5 * rule.inner_radius * th[j];
                                        }
                                        mf.eval(&x, &zc)
                                    }
                                    None => 1.0,
                                };
                                let w = rule.core_dirs.weights[t] * scale * m;
                                for p in 0..d {
                                    for q in 0..d {
                                        a[p * d + q] += w * th[p] * th[q];
                                    }
                                }
                            }
                        }
                        // Far nodes always leave the box: pure exterior data.
                        let mut y = vec![0.0; d];
                        for &q in &far {
                            let z = rule.point(q);
                            let m = mult.map_or(1.0, |mf| mf.eval(&x, z));
                            let w = rule.weights[q] * m;
                            for j in 0..d {
                                y[j] = x[j] + z[j];
                            }
                            nl_diag += w;
                            ext -= w * prob.exterior.eval(&y);
                            if rule.compensated[q] {
                                for j in 0..d {
                                    b[j] += w * z[j];
                                }
                            }
                        }
                        let mut mvec = mult.map(|_| vec![0.0; nq]);
                        for (qq, node) in nodes.iter().enumerate() {
                            let m = mult.map_or(1.0, |mf| mf.eval(&x, &node.z));
                            let w = node.weight * m;
                            if let Some(v) = mvec.as_mut() {
                                v[qq] = w;
                            }
                            nl_diag += w;
                            let inside = (0..d).all(|t| {
                                let mt = ((i / strides[t]) % grid.shape[t]) as isize;
                                mt + node.lo[t] >= 0 && mt + node.hi[t] < grid.shape[t] as isize
                            });
                            if !inside {
                                for j in 0..d {
                                    y[j] = x[j] + node.z[j];
                                }
                                ext -= w * prob.exterior.eval(&y);
                            }
                            // Compensation -Du.z becomes drift +G.Du in -I.
                            let zn2: f64 = node.z.iter().map(|v| v * v).sum();
                            if zn2.sqrt() < rule.indicator_radius {
                                for j in 0..d {
                                    b[j] += w * node.z[j];
                                }
                            }
                        }
                        mw = mvec;
                    }
                    let mut st = vec![0.0; s];
                    // Diffusion.
                    for p in 0..d {
                        let mut e = vec![0isize; d];
                        e[p] = 1;
                        let app = a[p * d + p] / (h * h);
                        st[center] += 2.0 * app;
                        st[pos(&e)] -= app;
                        e[p] = -1;
                        st[pos(&e)] -= app;
                        for q in 0..p {
                            let apq = 0.5 * (a[p * d + q] + a[q * d + p]);
                            if apq == 0.0 {
                                continue;
                            }
                            let w = apq.abs() / (h * h);
                            let sg = if apq > 0.0 { 1 } else { -1 };
                            let mut o = vec![0isize; d];
                            o[p] = 1;
                            o[q] = sg;
                            st[pos(&o)] -= w;
                            o[p] = -1;
                            o[q] = -sg;
                            st[pos(&o)] -= w;
                            for (axis, val) in [(p, 1isize), (p, -1), (q, 1), (q, -1)] {
                                let mut o = vec![0isize; d];
                                o[axis] = val;
                                st[pos(&o)] += w;
                            }
                            st[center] -= 2.0 * w;
                        }
                    }
                    // Drift.
                    for p in 0..d {
                        let mut e = vec![0isize; d];
                        match opts.drift {
                            DriftScheme::Upwind => {
                                if b[p] > 0.0 {
                                    e[p] = -1;
                                    st[center] += b[p] / h;
                                    st[pos(&e)] -= b[p] / h;
                                } else if b[p] < 0.0 {
                                    e[p] = 1;
                                    st[center] -= b[p] / h;
                                    st[pos(&e)] += b[p] / h;
                                }
                            }
                            DriftScheme::Central => {
                                e[p] = 1;
                                st[pos(&e)] += b[p] / (2.0 * h);
                                e[p] = -1;
                                st[pos(&e)] -= b[p] / (2.0 * h);
                            }
                        }
                    }
                    st[center] += c;
                    let scale = st[center].abs().max(1.0 / (h * h));
                    for (j, v) in st.iter().enumerate() {
                        if j != center && *v > 1e-12 * scale {
                            let detail = match opts.drift {
                                DriftScheme::Central => format!(
                                    "positive off-center weight {v:.3e} at offset {:?} (drift CFL or diagonal dominance violated)",
                                    offsets[j]
                                ),
                                DriftScheme::Upwind => format!(
                                    "positive off-center weight {v:.3e} at offset {:?} (diffusion matrix not diagonally dominant)",
                                    offsets[j]
                                ),
                            };
                            return Err(Error::NotMonotone { node: i, a: ia, b: ib, detail });
                        }
                    }
                    for (j, v) in st.iter_mut().enumerate() {
                        if j != center && *v > 0.0 {
                            *v = 0.0;
                        }
                    }
                    Ok((st, nl_diag, f + ext, mw, f.abs()))
                })
                .collect();
            let mut local = Vec::with_capacity(active.len() * s);
            let mut nl = Vec::with_capacity(active.len());
            let mut constant = Vec::with_capacity(active.len());
            let mut mult = ctl.multiplier.as_ref().map(|_| Vec::with_capacity(active.len() * nq));
            let mut f_sup: f64 = 0.0;
            for r in results {
                let (st, nd, cst, mw, fa) = r?;
                local.extend(st);
                nl.push(nd);
                constant.push(cst);
                if let (Some(m), Some(w)) = (mult.as_mut(), mw) {
                    m.extend(w);
                }
                f_sup = f_sup.max(fa);
            }
            prow.push(PairData {
                local,
                nl_diag: nl,
                constant,
                mult,
                f_sup,
            });
        }
        pairs.push(prow);
    }
    Ok(DiscreteOperator {
        grid: grid.clone(),
        active,
        active_pos,
        g_full,
        stencil_lin,
        nodes,
        pairs,
        problem: prob.clone(),
        rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxDomain, ExteriorRule};
    use crate::kernels::LevyKernel;
    use crate::operators::EllipticityParams;
    use crate::problem::{Control, Omega};

    fn problem_1d(ctl: Control) -> HJBIProblem {
        HJBIProblem::new(
            Omega::Box(BoxDomain::cube(1, 1.0).unwrap()),
            vec![vec![ctl]],
            LevyKernel::zero(1),
            ExteriorRule::constant(0.0),
            EllipticityParams::new(1.0, 1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn laplacian_stencil() {
        let grid = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 11).unwrap();
        let h2 = grid.h * grid.h;
        let op = discretize(&problem_1d(Control::isotropic(1, 1.0, |_| 0.0)), &grid, &Default::default()).unwrap();
        let st = op.local_stencil(0, 0, 4);
        assert!((st[0] + 1.0 / h2).abs() < 1e-9 && (st[1] - 2.0 / h2).abs() < 1e-9 && (st[2] + 1.0 / h2).abs() < 1e-9);

        let op = discretize(
            &problem_1d(Control::isotropic(1, 1.0, |_| 0.0).with_zero_order(|_| 1.0)),
            &grid,
            &Default::default(),
        )
        .unwrap();
        assert!((op.local_stencil(0, 0, 4)[1] - 2.0 / h2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upwind_drift_weights() {
        let grid = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 11).unwrap();
        let (h, h2) = (grid.h, grid.h * grid.h);
        let op = discretize(
            &problem_1d(Control::isotropic(1, 1.0, |_| 0.0).with_drift(|_| vec![1.0])),
            &grid,
            &Default::default(),
        )
        .unwrap();
        let st = op.local_stencil(0, 0, 4);
        assert!((st[0] + 1.0 / h2 + 1.0 / h).abs() < 1e-9);
        assert!((st[2] + 1.0 / h2).abs() < 1e-9);
        assert!((st[1] - 2.0 / h2 - 1.0 / h).abs() < 1e-9);
    }

    #[test]
    fn central_drift_violating_cfl_is_rejected() {
        let grid = Grid::new(BoxDomain::cube(1, 1.0).unwrap(), 5).unwrap();
        let opts = DiscretizeOptions {
            drift: DriftScheme::Central,
            ..Default::default()
        };
        let prob = problem_1d(Control::isotropic(1, 1.0, |_| 0.0).with_drift(|_| vec![10.0]));
        assert!(matches!(discretize(&prob, &grid, &opts), Err(Error::NotMonotone { .. })));
    }

    #[test]
    fn cross_terms_need_diagonal_dominance() {
        let grid = Grid::new(BoxDomain::cube(2, 1.0).unwrap(), 9).unwrap();
        let mk = |off: f64| {
            HJBIProblem::new(
                Omega::Box(BoxDomain::cube(2, 1.0).unwrap()),
                vec![vec![Control::isotropic(2, 1.0, |_| 0.0).with_diffusion(move |_| vec![1.0, off, off, 1.0])]],
                LevyKernel::zero(2),
                ExteriorRule::constant(0.0),
                EllipticityParams::new(0.1, 3.0, 0.0).unwrap(),
            )
            .unwrap()
        };
        assert!(discretize(&mk(0.5), &grid, &Default::default()).is_ok());
        let err = discretize(&mk(0.5).clone(), &grid, &Default::default());
        assert!(err.is_ok());
        // Off-diagonal 0.9 is still elliptic (eigenvalues 0.1, 1.9) but not dominant.
        let bad = HJBIProblem::new(
            Omega::Box(BoxDomain::cube(2, 1.0).unwrap()),
            vec![vec![Control::isotropic(2, 1.0, |_| 0.0).with_diffusion(|_| vec![0.5, 0.9, 0.9, 2.0])]],
            LevyKernel::zero(2),
            ExteriorRule::constant(0.0),
            EllipticityParams::new(0.01, 3.0, 0.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(discretize(&bad, &grid, &Default::default()), Err(Error::NotMonotone { .. })));
    }
}
