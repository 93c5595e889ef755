use rayon::prelude::*;
use serde::Serialize;

use super::linear::{bicgstab, Csr, Ilu0};
use super::DiscreteOperator;
use crate::error::{Error, Result};
use crate::grid::GridFunction;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Sup-norm residual target; `None` means `1e-8 (1 + |f|_inf)`.
    pub tol: Option<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_linear: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_outer: 100,
            max_inner: 100,
            max_linear: 20_000,
        }
    }
}

/// Discrete solution with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: GridFunction,
    pub residual: f64,
    pub iterations: usize,
    pub tol: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub residual: f64,
    pub iterations: usize,
    pub tol: f64,
}

impl Solution {
    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            residual: self.residual,
            iterations: self.iterations,
            tol: self.tol,
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl DiscreteOperator {
    fn policy_matrix(&self, alpha: &[usize], beta: &[usize]) -> Csr {
        let s = self.stencil_size();
        let rows = (0..self.n_active())
            .into_par_iter()
            .map(|k| {
                let (a, b) = (alpha[k], beta[k]);
                let p = &self.pairs[a][b];
                let i = self.active[k];
                let mut row = Vec::with_capacity(s);
                for (j, off) in self.stencil_lin.iter().enumerate() {
                    let c = p.local[k * s + j];
                    if c == 0.0 {
                        continue;
                    }
                    let n = (i as isize + off) as usize;
                    if self.active_pos[n] != super::NONE {
                        row.push((self.active_pos[n], c));
                    }
                }
                row.push((k, p.nl_diag[k]));
                let nq = self.nodes.len();
                for (q, node) in self.nodes.iter().enumerate() {
                    if !self.node_inside(i, q) {
                        continue;
                    }
                    let w = p.mult.as_ref().map_or(node.weight, |m| m[k * nq + q]);
                    for (off, beta) in &node.corners {
                        if self.stencil_lin.contains(off) {
                            let n = (i as isize + off) as usize;
                            if self.active_pos[n] != super::NONE {
                                row.push((self.active_pos[n], -w * beta));
                            }
                        }
                    }
                }
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    fn apply_policy(&self, alpha: &[usize], beta: &[usize], v: &[f64], out: &mut [f64]) {
        let mut full = vec![0.0; self.grid.len()];
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = v[k];
        }
        out.par_iter_mut()
            .enumerate()
            .for_each(|(k, o)| *o = self.row(alpha[k], beta[k], k, &full, false));
    }

    fn solve_policy(&self, alpha: &[usize], beta: &[usize], v: &mut [f64], atol: f64, max_iter: usize) -> Result<()> {
        let rhs: Vec<f64> = (0..self.n_active())
            .into_par_iter()
            .map(|k| -self.row(alpha[k], beta[k], k, &self.g_full, true))
            .collect();
        let m = self.policy_matrix(alpha, beta);
        let ilu = Ilu0::new(&m)?;
        bicgstab(|x, y| self.apply_policy(alpha, beta, x, y), &ilu, &rhs, v, atol, max_iter)?;
        Ok(())
    }

    /// Per node: `(argmax_a, argmin_b at that a, value)`, keeping the
    /// current choice on ties.
    fn improve(&self, full: &[f64], alpha: &[usize], beta: &[usize], outer: bool) -> Vec<(usize, usize, f64)> {
        let (na, nb) = self.n_controls();
        (0..self.n_active())
            .into_par_iter()
            .map(|k| {
                let inner = |a: usize, keep: Option<usize>| -> (usize, f64) {
                    let mut best = keep.unwrap_or(0);
                    let mut bv = self.row(a, best, k, full, true);
                    for b in 0..nb {
                        let v = self.row(a, b, k, full, true);
                        if v < bv - 1e-13 * (1.0 + bv.abs()) {
                            best = b;
                            bv = v;
                        }
                    }
                    (best, bv)
                };
                if !outer {
                    let (b, v) = inner(alpha[k], Some(beta[k]));
                    return (alpha[k], b, v);
                }
                let (mut ba, (mut bb, mut bv)) = (alpha[k], inner(alpha[k], Some(beta[k])));
                for a in 0..na {
                    if a == alpha[k] {
                        continue;
                    }
                    let (b, v) = inner(a, None);
                    if v > bv + 1e-13 * (1.0 + bv.abs()) {
                        ba = a;
                        bb = b;
                        bv = v;
                    }
                }
                (ba, bb, bv)
            })
            .collect()
    }
}

/// Howard iteration: the outer loop improves the maximizing control, the
/// inner loop solves the minimization over `b` for a frozen `a`.
pub fn solve_policy_iteration(op: &DiscreteOperator, opts: &SolveOptions) -> Result<Solution> {
    let tol = opts.tol.unwrap_or_else(|| op.default_tol());
    let n = op.n_active();
    let mut v = vec![0.0; n];
    let mut alpha = vec![0usize; n];
    let mut beta = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut atol = 0.05 * tol;
    for _outer in 0..opts.max_outer {
        for _inner in 0..opts.max_inner {
            iterations += 1;
            op.solve_policy(&alpha, &beta, &mut v, atol, opts.max_linear)?;
            let full = op.embed(&v);
            let upd = op.improve(&full, &alpha, &beta, false);
            let mut changed = false;
            for (k, (_, b, _)) in upd.iter().enumerate() {
                if *b != beta[k] {
                    beta[k] = *b;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let full = op.embed(&v);
        let upd = op.improve(&full, &alpha, &beta, true);
        let res = upd.iter().fold(0.0f64, |m, u| m.max(u.2.abs()));
        history.push(res);
        if res <= tol {
            return Ok(Solution {
                u: op.to_grid_function(full),
                residual: res,
                iterations,
                tol,
                history,
            });
        }
        let mut changed = false;
        for (k, (a, b, _)) in upd.into_iter().enumerate() {
            if a != alpha[k] || b != beta[k] {
                changed = true;
            }
            alpha[k] = a;
            beta[k] = b;
        }
        if !changed {
            // Same policy, residual above tol: the linear solve was too loose.
            if atol > 1e-6 * tol {
                atol *= 0.1;
                continue;
            }
            return Err(Error::NonConvergence {
                iterations,
                residual: res,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Explicit monotone marching `u <- u - dt F_h(u)`. `dt = None` uses the
/// stability bound `1 / max diag`.
pub fn solve_pseudo_time(
    op: &DiscreteOperator,
    dt: Option<f64>,
    tol: Option<f64>,
    max_steps: usize,
    start: Option<&[f64]>,
) -> Result<Solution> {
    let tol = tol.unwrap_or_else(|| op.default_tol());
    let bound = 1.0 / op.max_diagonal();
    let dt = dt.unwrap_or(bound);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "time step {dt:.3e} exceeds the monotone stability bound {bound:.3e}"
        )));
    }
    let mut full = match start {
        Some(s) => s.to_vec(),
        None => op.exterior_values().to_vec(),
    };
    let mut history = Vec::new();
    for step in 0..=max_steps {
        let r = op.residual(&full);
        let res = sup_norm(&r);
        if step % 64 == 0 {
            history.push(res);
        }
        if res <= tol {
            return Ok(Solution {
                u: op.to_grid_function(full),
                residual: res,
                iterations: step,
                tol,
                history,
            });
        }
        for (k, &i) in op.active.iter().enumerate() {
            full[i] -= dt * r[k];
        }
    }
    let res = sup_norm(&op.residual(&full));
    Err(Error::NonConvergence {
        iterations: max_steps,
        residual: res,
    })
}

/// Monotone iteration from a discrete subsolution, clamped by a discrete
/// supersolution. Each node uses its own step `1 / max_ab diag`, which keeps
/// the update monotone, so iterates increase.
pub fn perron_iterate(
    op: &DiscreteOperator,
    lower: &GridFunction,
    upper: &GridFunction,
    tol: Option<f64>,
    max_sweeps: usize,
) -> Result<Solution> {
    let tol = tol.unwrap_or_else(|| op.default_tol());
    if lower.grid != op.grid || upper.grid != op.grid {
        return Err(Error::Precondition("barriers live on a different lattice".into()));
    }
    for i in 0..op.grid.len() {
        if lower.values[i] > upper.values[i] + 1e-12 * (1.0 + upper.values[i].abs()) {
            return Err(Error::Precondition(format!("lower > upper at node {i}")));
        }
        if !op.is_active(i) {
            let g = op.exterior_values()[i];
            let scale = 1e-9 * (1.0 + g.abs());
            if (lower.values[i] - g).abs() > scale || (upper.values[i] - g).abs() > scale {
                return Err(Error::Precondition(format!("barriers differ from g at exterior node {i}")));
            }
        }
    }
    let rl = op.residual(&lower.values);
    let ru = op.residual(&upper.values);
    if let Some((k, v)) = rl.iter().enumerate().find(|(_, v)| **v > tol) {
        return Err(Error::Precondition(format!(
            "lower barrier is not a discrete subsolution at node {} (residual {v:.3e})",
            op.active[k]
        )));
    }
    if let Some((k, v)) = ru.iter().enumerate().find(|(_, v)| **v < -tol) {
        return Err(Error::Precondition(format!(
            "upper barrier is not a discrete supersolution at node {} (residual {v:.3e})",
            op.active[k]
        )));
    }
    let dt: Vec<f64> = (0..op.n_active()).map(|k| 1.0 / op.node_max_diagonal(k)).collect();
    let ub: Vec<f64> = op.restrict(&upper.values);
    let mut full = lower.values.clone();
    let mut history = Vec::new();
    for sweep in 0..=max_sweeps {
        let r = op.residual(&full);
        let res = sup_norm(&r);
        if sweep % 256 == 0 {
            history.push(res);
        }
        if res <= tol {
            return Ok(Solution {
                u: op.to_grid_function(full),
                residual: res,
                iterations: sweep,
                tol,
                history,
            });
        }
        for (k, &i) in op.active.iter().enumerate() {
            let old = full[i];
            let new = (old - dt[k] * r[k]).min(ub[k]);
            if new < old - 1e-12 * (1.0 + old.abs()) {
                return Err(Error::OrderingViolation {
                    node: i,
                    detail: format!("iterate decreased from {old:.6e} to {new:.6e} in sweep {sweep}"),
                });
            }
            full[i] = new.max(old);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_sweeps,
        residual: sup_norm(&op.residual(&full)),
    })
}
