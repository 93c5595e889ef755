//! Convex envelopes, contact sets, sup-convolutions, paraboloid touching
//! sets and the ABP inequality check.
//!
//! Envelopes are lower convex hulls of nodal point clouds: a monotone chain
//! in one dimension and, in two, a three-row simplex per query node on the
//! dual problem `min sum mu_y u(y)` subject to `sum mu_y (1, y) = (1, x)`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{extrema, GridFunction, Region};
use crate::kernels::LevyKernel;
use crate::operators::{EllipticityParams, ExtremalOperator, HessianEstimate};
use crate::quadrature::QuadratureScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactVariant {
    /// Supporting plane over the region itself.
    Local,
    /// Supporting plane over the `diam`-neighbourhood of the region, and
    /// value below the exterior infimum.
    Nonlocal,
}

/// Nodes of a lattice where a supporting affine function touches from below.
#[derive(Debug, Clone, Serialize)]
pub struct ContactMask {
    pub variant: ContactVariant,
    pub tol: f64,
    pub mask: Vec<bool>,
    /// Supporting slope at masked nodes.
    pub slopes: Vec<Option<Vec<f64>>>,
}

impl ContactMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn nodes(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    /// `node,flag,p1..pd` (empty slope columns when unmasked).
    pub fn write_csv(&self, path: &Path, dim: usize) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut head = vec!["node".to_string(), "flag".to_string()];
        head.extend((1..=dim).map(|i| format!("p{i}")));
        writeln!(w, "{}", head.join(","))?;
        for (i, (m, p)) in self.mask.iter().zip(&self.slopes).enumerate() {
            let mut row = vec![i.to_string(), (*m as u8).to_string()];
            match p {
                Some(p) => row.extend(p.iter().map(|v| format!("{v:e}"))),
                None => row.extend((0..dim).map(|_| String::new())),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Nodes touched from below by a concave paraboloid of bounded opening.
#[derive(Debug, Clone, Serialize)]
pub struct ParaboloidMask {
    pub opening: f64,
    pub radius: f64,
    pub mask: Vec<bool>,
}

impl ParaboloidMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `node,flag`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "node,flag")?;
        for (i, m) in self.mask.iter().enumerate() {
            writeln!(w, "{i},{}", *m as u8)?;
        }
        Ok(())
    }
}

/// Default contact tolerance `10 h^2 (1 + |u|_inf)`.
pub fn default_contact_tol(u: &GridFunction) -> f64 {
    10.0 * u.grid.h * u.grid.h * (1.0 + u.max_abs())
}

/// Roundoff-level tolerance that keeps only lower-hull vertices. The ABP
/// check uses it so the contact measure is not inflated by the `O(h)` band
/// that [`default_contact_tol`] admits around the true contact set.
pub fn vertex_contact_tol(u: &GridFunction) -> f64 {
    1e-9 * (1.0 + u.max_abs())
}

fn require_convex(region: &Region) -> Result<()> {
    match region {
        Region::Ball { .. } | Region::Cube { .. } | Region::Box(_) => Ok(()),
        _ => Err(Error::Domain("convex envelopes need a ball, cube or box".into())),
    }
}

/// Lower convex hull in one dimension; returns `(value, slope)` at each
/// query abscissa (queries must lie within the cloud's range).
fn hull_1d(xs: &[f64], vs: &[f64], queries: &[f64]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap().then(vs[a].partial_cmp(&vs[b]).unwrap()));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &i in &order {
        let p = (xs[i], vs[i]);
        if let Some(last) = hull.last() {
            if last.0 == p.0 {
                continue; // equal abscissa: the first (smaller) value wins
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // Drop b when it lies on or above the chord from a to p.
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    queries
        .iter()
        .map(|&x| {
            if hull.len() == 1 {
                return (hull[0].1, 0.0);
            }
            let k = hull.partition_point(|p| p.0 <= x).clamp(1, hull.len() - 1);
            let (a, b) = (hull[k - 1], hull[k]);
            let slope = (b.1 - a.1) / (b.0 - a.0);
            (a.1 + slope * (x - a.0), slope)
        })
        .collect()
}

/// Envelope value and slope at cloud point `q` of a planar cloud, by the
/// dual simplex described in the module docs.
/// Pricing runs over `active` (plus `q`), which must contain every vertex
/// of the lower hull.
fn envelope_2d(px: &[f64], py: &[f64], vs: &[f64], active: &[usize], q: usize, tol: f64) -> Result<(f64, [f64; 2])> {
    let n = vs.len();
    let (x0, y0) = (px[q], py[q]);
    // Initial basis: q, its nearest neighbour and the point making the
    // largest triangle with them.
    let mut p = usize::MAX;
    let mut best = f64::INFINITY;
    for j in 0..n {
        let d = (px[j] - x0).powi(2) + (py[j] - y0).powi(2);
        if j != q && d > 0.0 && d < best {
            best = d;
            p = j;
        }
    }
    if p == usize::MAX {
        return Ok((vs[q], [0.0, 0.0]));
    }
    let mut s = usize::MAX;
    let mut area = 0.0;
    for j in 0..n {
        let a = ((px[p] - x0) * (py[j] - y0) - (py[p] - y0) * (px[j] - x0)).abs();
        if a > area {
            area = a;
            s = j;
        }
    }
    if s == usize::MAX || area <= 1e-14 * best {
        // Collinear cloud: reduce to the 1-D hull along the line.
        let (dx, dy) = ((px[p] - x0) / best.sqrt(), (py[p] - y0) / best.sqrt());
        let ts: Vec<f64> = (0..n).map(|j| (px[j] - x0) * dx + (py[j] - y0) * dy).collect();
        let (v, m) = hull_1d(&ts, vs, &[0.0])[0];
        return Ok((v, [m * dx, m * dy]));
    }
    let mut basis = [q, p, s];
    let mut mu = [1.0, 0.0, 0.0];
    let col = |j: usize| [1.0, px[j], py[j]];
    let mut degenerate = 0usize;
    for _ in 0..(50 * n + 100) {
        let b = [col(basis[0]), col(basis[1]), col(basis[2])];
        // Columns of B are b[k]; pi solves B^T pi = c_B.
        let bt = [b[0], b[1], b[2]];
        let pi = solve3(&bt, &[vs[basis[0]], vs[basis[1]], vs[basis[2]]])
            .ok_or(Error::NonConvergence { iterations: 0, residual: f64::NAN })?;
        let mut enter = usize::MAX;
        let mut most = -tol;
        for &j in active.iter().chain(std::iter::once(&q)) {
            let r = vs[j] - (pi[0] + pi[1] * px[j] + pi[2] * py[j]);
            if r < most {
                enter = j;
                if degenerate > 20 {
                    break; // Bland: first improving column
                }
                most = r;
            }
        }
        if enter == usize::MAX {
            return Ok((pi[0] + pi[1] * x0 + pi[2] * y0, [pi[1], pi[2]]));
        }
        // Direction: B d = A_enter with B's columns b[k].
        let bm = [
            [b[0][0], b[1][0], b[2][0]],
            [b[0][1], b[1][1], b[2][1]],
            [b[0][2], b[1][2], b[2][2]],
        ];
        let d = solve3(&bm, &col(enter)).ok_or(Error::NonConvergence { iterations: 0, residual: f64::NAN })?;
        let mut leave = usize::MAX;
        let mut theta = f64::INFINITY;
        for k in 0..3 {
            if d[k] > 1e-12 {
                let t = mu[k] / d[k];
                if t < theta - 1e-15 || (t <= theta + 1e-15 && leave != usize::MAX && basis[k] < basis[leave]) {
                    theta = t;
                    leave = k;
                }
            }
        }
        if leave == usize::MAX {
            return Err(Error::NonConvergence { iterations: 0, residual: f64::NAN });
        }
        for k in 0..3 {
            mu[k] -= theta * d[k];
        }
        mu[leave] = theta;
        basis[leave] = enter;
        degenerate = if theta <= 1e-15 { degenerate + 1 } else { 0 };
    }
    Err(Error::NonConvergence {
        iterations: 50 * n + 100,
        residual: f64::NAN,
    })
}

/// Solves the 3x3 system `m x = b` (rows of `m`) by Cramer's rule.
fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut a = *m;
        for r in 0..3 {
            a[r][c] = b[r];
        }
        out[c] = det(&a) / d;
    }
    Some(out)
}

/// A point cloud with values, plus which cloud points are queried.
struct Cloud {
    dim: usize,
    /// Lattice spacing of the coordinates.
    h: f64,
    coords: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Cloud {
    /// Envelope `(value, slope)` at the cloud points `queries`.
    fn envelope(&self, queries: &[usize], tol: f64) -> Result<Vec<(f64, Vec<f64>)>> {
        match self.dim {
            1 => {
                let xs: Vec<f64> = self.coords.iter().map(|c| c[0]).collect();
                let qx: Vec<f64> = queries.iter().map(|&q| xs[q]).collect();
                Ok(hull_1d(&xs, &self.values, &qx).into_iter().map(|(v, s)| (v, vec![s])).collect())
            }
            2 => {
                let px: Vec<f64> = self.coords.iter().map(|c| c[0]).collect();
                let py: Vec<f64> = self.coords.iter().map(|c| c[1]).collect();
                let active = self.hull_candidates();
                queries
                    .par_iter()
                    .map(|&q| envelope_2d(&px, &py, &self.values, &active, q, tol).map(|(v, s)| (v, s.to_vec())))
                    .collect()
            }
            _ => Err(Error::Unsupported("convex envelopes are implemented for d <= 2".into())),
        }
    }

    /// Points that can be vertices of the lower hull: a point on or above
    /// the chord between its two lattice neighbours along some direction
    /// is dropped, which leaves the hull unchanged.
    fn hull_candidates(&self) -> Vec<usize> {
        let o = &self.coords[0];
        let key = |c: &[f64]| -> (i64, i64) { (((c[0] - o[0]) / self.h).round() as i64, ((c[1] - o[1]) / self.h).round() as i64) };
        let index: HashMap<(i64, i64), usize> = self.coords.iter().enumerate().map(|(j, c)| (key(c), j)).collect();
        (0..self.values.len())
            .filter(|&j| {
                let (a, b) = key(&self.coords[j]);
                ![(1, 0), (0, 1), (1, 1), (1, -1)].iter().any(|(da, db)| {
                    match (index.get(&(a + da, b + db)), index.get(&(a - da, b - db))) {
                        (Some(&l), Some(&r)) => self.values[j] >= 0.5 * (self.values[l] + self.values[r]),
                        _ => false,
                    }
                })
            })
            .collect()
    }
}

fn region_cloud(u: &GridFunction, region: &Region) -> Result<(Vec<usize>, Cloud)> {
    require_convex(region)?;
    let nodes = region.nodes(&u.grid);
    if nodes.is_empty() {
        return Err(Error::Domain("region contains no lattice nodes".into()));
    }
    let cloud = Cloud {
        dim: u.dim(),
        h: u.grid.h,
        coords: nodes.iter().map(|&i| u.grid.point(i)).collect(),
        values: nodes.iter().map(|&i| u.values[i]).collect(),
    };
    Ok((nodes, cloud))
}

fn simplex_tol(values: &[f64]) -> f64 {
    1e-12 * (1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// `Gamma_O(u)` on the nodes of `O`; other nodes hold NaN.
pub fn convex_envelope(u: &GridFunction, region: &Region) -> Result<GridFunction> {
    let (nodes, cloud) = region_cloud(u, region)?;
    let q: Vec<usize> = (0..nodes.len()).collect();
    let env = cloud.envelope(&q, simplex_tol(&cloud.values))?;
    let mut values = vec![f64::NAN; u.grid.len()];
    for (k, &i) in nodes.iter().enumerate() {
        values[i] = env[k].0.min(u.values[i]);
    }
    GridFunction::new(u.grid.clone(), values, u.exterior.clone())
}

fn region_distance(region: &Region, y: &[f64]) -> f64 {
    match region {
        Region::Ball { center, radius } => {
            let d: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (d - radius).max(0.0)
        }
        Region::Cube { center, half } => y
            .iter()
            .zip(center)
            .map(|(a, c)| ((a - c).abs() - half).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt(),
        Region::Box(b) => b.distance(y),
        _ => f64::INFINITY,
    }
}

fn region_bounds(region: &Region) -> (Vec<f64>, Vec<f64>, f64) {
    match region {
        Region::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
            2.0 * radius,
        ),
        Region::Cube { center, half } => (
            center.iter().map(|c| c - half).collect(),
            center.iter().map(|c| c + half).collect(),
            2.0 * half * (center.len() as f64).sqrt(),
        ),
        Region::Box(b) => (b.lower.clone(), b.upper.clone(), b.diameter()),
        _ => unreachable!("checked by require_convex"),
    }
}

/// Lattice-aligned points within `diam(O)` of `O` (the truncated
/// neighbourhood), valued by nodal data inside the grid and the exterior
/// rule outside it. Also returns, per point, its node index when `y` is a
/// node of `O`.
fn collar_cloud(u: &GridFunction, region: &Region) -> (Cloud, Vec<Option<usize>>) {
    let g = &u.grid;
    let d = g.dim();
    let (lo, hi, diam) = region_bounds(region);
    let mut start = vec![0i64; d];
    let mut count = vec![0usize; d];
    for k in 0..d {
        let a = ((lo[k] - diam - g.domain.lower[k]) / g.h).floor() as i64;
        let b = ((hi[k] + diam - g.domain.lower[k]) / g.h).ceil() as i64;
        start[k] = a;
        count[k] = (b - a + 1) as usize;
    }
    let total: usize = count.iter().product();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut inside = Vec::new();
    for mut lin in 0..total {
        let mut idx = vec![0i64; d];
        for k in 0..d {
            idx[k] = start[k] + (lin % count[k]) as i64;
            lin /= count[k];
        }
        let y: Vec<f64> = (0..d).map(|k| g.domain.lower[k] + idx[k] as f64 * g.h).collect();
        let dist = region_distance(region, &y);
        if dist >= diam {
            continue;
        }
        let on_grid = (0..d).all(|k| idx[k] >= 0 && (idx[k] as usize) < g.shape[k]);
        let node = on_grid.then(|| {
            let mi: Vec<usize> = idx.iter().map(|&i| i as usize).collect();
            g.linear_index(&mi)
        });
        let v = match node {
            Some(i) => u.values[i],
            None => u.exterior.eval(&y),
        };
        inside.push(node.filter(|_| region.contains(&y) == Some(true)));
        coords.push(y);
        values.push(v);
    }
    (Cloud { dim: d, h: u.grid.h, coords, values }, inside)
}

/// Contact set of `u` in `O`. `tol = None` uses [`default_contact_tol`].
pub fn contact_set(u: &GridFunction, region: &Region, variant: ContactVariant, tol: Option<f64>) -> Result<ContactMask> {
    let tol = tol.unwrap_or_else(|| default_contact_tol(u));
    let mut mask = vec![false; u.grid.len()];
    let mut slopes = vec![None; u.grid.len()];
    match variant {
        ContactVariant::Local => {
            let (nodes, cloud) = region_cloud(u, region)?;
            let q: Vec<usize> = (0..nodes.len()).collect();
            let env = cloud.envelope(&q, simplex_tol(&cloud.values))?;
            for (k, &i) in nodes.iter().enumerate() {
                if u.values[i] - env[k].0 <= tol {
                    mask[i] = true;
                    slopes[i] = Some(env[k].1.clone());
                }
            }
        }
        ContactVariant::Nonlocal => {
            require_convex(region)?;
            let (cloud, inside) = collar_cloud(u, region);
            let ext_inf = cloud
                .values
                .iter()
                .zip(&inside)
                .filter(|(_, i)| i.is_none())
                .fold(f64::INFINITY, |m, (v, _)| m.min(*v));
            let q: Vec<usize> = (0..cloud.values.len())
                .filter(|&k| inside[k].is_some() && cloud.values[k] < ext_inf)
                .collect();
            let env = cloud.envelope(&q, simplex_tol(&cloud.values))?;
            for (k, &c) in q.iter().enumerate() {
                if cloud.values[c] - env[k].0 <= tol {
                    let i = inside[c].expect("queries are region nodes");
                    mask[i] = true;
                    slopes[i] = Some(env[k].1.clone());
                }
            }
        }
    }
    Ok(ContactMask {
        variant,
        tol,
        mask,
        slopes,
    })
}

/// `u^eps(x) = max_y [u(y) - |x - y|^2 / (2 eps)]` over lattice-aligned
/// `y` within `2 sqrt(eps osc(u))`; off-grid `y` take the exterior rule.
pub fn sup_convolution(u: &GridFunction, eps: f64) -> Result<GridFunction> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    let g = &u.grid;
    let d = g.dim();
    let osc = u.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - u.values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let radius = 2.0 * (eps * osc).sqrt();
    let reach = (radius / g.h).floor() as i64;
    let mut offsets: Vec<(Vec<i64>, f64)> = Vec::new();
    let side = (2 * reach + 1) as usize;
    for mut lin in 0..side.pow(d as u32) {
        let mut o = vec![0i64; d];
        for k in 0..d {
            o[k] = (lin % side) as i64 - reach;
            lin /= side;
        }
        let r2: f64 = o.iter().map(|v| (*v as f64 * g.h).powi(2)).sum();
        if r2 <= radius * radius {
            offsets.push((o, r2 / (2.0 * eps)));
        }
    }
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let mi = g.multi_index(i);
            let mut best = u.values[i];
            let mut y = vec![0.0; d];
            for (o, pen) in &offsets {
                let mut on_grid = true;
                let mut lin = 0usize;
                for k in 0..d {
                    let j = mi[k] as i64 + o[k];
                    y[k] = g.domain.lower[k] + j as f64 * g.h;
                    if j < 0 || j as usize >= g.shape[k] {
                        on_grid = false;
                    } else {
                        lin += j as usize * g.strides()[k];
                    }
                }
                let v = if on_grid { u.values[lin] } else { u.exterior.eval(&y) };
                best = best.max(v - pen);
            }
            best
        })
        .collect();
    GridFunction::new(g.clone(), values, u.exterior.clone())
}

/// Minimum-norm point of `{b : a_i . b <= g_i}` in the plane, by
/// enumerating the origin, projections onto each line and pairwise vertices.
fn min_norm_feasible_2d(a: &[[f64; 2]], g: &[f64]) -> Option<f64> {
    let feasible = |b: [f64; 2]| a.iter().zip(g).all(|(ai, gi)| ai[0] * b[0] + ai[1] * b[1] <= gi + 1e-12 * (1.0 + gi.abs()));
    if feasible([0.0, 0.0]) {
        return Some(0.0);
    }
    let mut best = f64::INFINITY;
    for (ai, gi) in a.iter().zip(g) {
        let n2 = ai[0] * ai[0] + ai[1] * ai[1];
        let b = [ai[0] * gi / n2, ai[1] * gi / n2];
        let nb = b[0].hypot(b[1]);
        if nb < best && feasible(b) {
            best = nb;
        }
    }
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let det = a[i][0] * a[j][1] - a[i][1] * a[j][0];
            if det.abs() < 1e-14 {
                continue;
            }
            let b = [(g[i] * a[j][1] - a[i][1] * g[j]) / det, (a[i][0] * g[j] - g[i] * a[j][0]) / det];
            let nb = b[0].hypot(b[1]);
            if nb < best && feasible(b) {
                best = nb;
            }
        }
    }
    best.is_finite().then_some(best)
}

/// Nodes `x` of `region` admitting `A + B.(y-x) - C/2 |y-x|^2 <= u(y)` on the
/// grid nodes of `B_rho(x)`, with `A = u(x)` and `|A| + |B| + C <= M`.
/// `C` is swept over 0 and 32 dyadic fractions of `M`.
pub fn paraboloid_touch_set(u: &GridFunction, m: f64, region: &Region, rho: f64) -> Result<ParaboloidMask> {
    let g = &u.grid;
    let d = g.dim();
    if d > 2 {
        return Err(Error::Unsupported("paraboloid masks are implemented for d <= 2".into()));
    }
    if !(m >= 0.0) {
        return Err(Error::param("M", "must be nonnegative"));
    }
    if rho < 2.0 * g.h * (1.0 - 1e-12) {
        return Err(Error::param("rho", "must be at least two lattice spacings"));
    }
    let reach = (rho / g.h).floor() as i64;
    let mut offsets = Vec::new();
    let side = (2 * reach + 1) as usize;
    for mut lin in 0..side.pow(d as u32) {
        let mut o = vec![0i64; d];
        for k in 0..d {
            o[k] = (lin % side) as i64 - reach;
            lin /= side;
        }
        let r2: f64 = o.iter().map(|v| (*v as f64 * g.h).powi(2)).sum();
        if r2 > 0.0 && r2 <= rho * rho * (1.0 + 1e-12) {
            offsets.push(o);
        }
    }
    let mut sweep = vec![0.0];
    sweep.extend((0..32).rev().map(|k| m * 2f64.powi(-k)));
    let mask: Vec<bool> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if !region.contains_node(g, i) {
                return false;
            }
            let ux = u.values[i];
            if ux.abs() > m {
                return false;
            }
            let mi = g.multi_index(i);
            let mut dirs: Vec<[f64; 2]> = Vec::new();
            let mut incs: Vec<f64> = Vec::new();
            let mut r2s: Vec<f64> = Vec::new();
            for o in &offsets {
                let mut lin = 0usize;
                let mut ok = true;
                for k in 0..d {
                    let j = mi[k] as i64 + o[k];
                    if j < 0 || j as usize >= g.shape[k] {
                        ok = false;
                        break;
                    }
                    lin += j as usize * g.strides()[k];
                }
                if !ok {
                    continue;
                }
                let v = [o[0] as f64 * g.h, if d == 2 { o[1] as f64 * g.h } else { 0.0 }];
                dirs.push(v);
                incs.push(u.values[lin] - ux);
                r2s.push(v[0] * v[0] + v[1] * v[1]);
            }
            sweep.iter().any(|&c| {
                let budget = m - ux.abs() - c;
                if budget < 0.0 {
                    return false;
                }
                let gs: Vec<f64> = incs.iter().zip(&r2s).map(|(inc, r2)| inc + 0.5 * c * r2).collect();
                if d == 1 {
                    let (mut lo, mut hi) = (-budget, budget);
                    for (v, gv) in dirs.iter().zip(&gs) {
                        if v[0] > 0.0 {
                            hi = hi.min(gv / v[0]);
                        } else {
                            lo = lo.max(gv / v[0]);
                        }
                    }
                    lo <= hi + 1e-12 * (1.0 + hi.abs())
                } else {
                    min_norm_feasible_2d(&dirs, &gs).is_some_and(|n| n <= budget * (1.0 + 1e-12))
                }
            })
        })
        .collect();
    Ok(ParaboloidMask {
        opening: m,
        radius: rho,
        mask,
    })
}

/// Result of one ABP check.
#[derive(Debug, Clone, Serialize)]
pub struct AbpReport {
    /// `-inf_Omega u`.
    pub lhs: f64,
    /// `inf_{Omega^c} u` over the truncated exterior collar.
    pub exterior_inf: f64,
    pub diam: f64,
    /// `|f^-|_{L^d}` over the contact set.
    pub forcing_norm: f64,
    pub contact_nodes: usize,
    pub contact_tol: f64,
    /// Largest `f - (-P-(D^2u) - P-_{K,r}(u) + C0 r |Du|)` over checked nodes.
    pub supersolution_defect: f64,
    pub empirical_constant: f64,
    pub pass: bool,
}

/// ABP check for a supersolution `u` of `-P-(D^2u) - P-_{K,r}(u) + C0 r |Du| >= f`
/// on `omega`. The forcing norm runs over the nonlocal contact set of `u`,
/// which only holds nodes below the exterior infimum; the check is
/// therefore unchanged when a constant is added to `u` and its exterior data.
///
/// The supersolution property is checked first at region nodes whose
/// stencil fits in the grid; a defect above `residual_tol` is a
/// precondition error. When the forcing vanishes on the contact set the
/// check reduces to the minimum principle, with `residual_tol` as slack.
#[allow(clippy::too_many_arguments)]
pub fn abp_check(
    u: &GridFunction,
    f: &GridFunction,
    omega: &Region,
    p: &EllipticityParams,
    kernel: &LevyKernel,
    r: f64,
    quad: &QuadratureScheme,
    residual_tol: f64,
) -> Result<AbpReport> {
    require_convex(omega)?;
    if f.grid != u.grid {
        return Err(Error::param("f", "must live on the lattice of u"));
    }
    let g = &u.grid;
    let nodes = omega.nodes(g);
    if nodes.is_empty() {
        return Err(Error::Domain("omega contains no lattice nodes".into()));
    }
    let op = ExtremalOperator::new(*p, kernel, r, g.h, quad)?;
    let defects: Vec<f64> = nodes
        .par_iter()
        .filter(|&&i| !g.is_boundary(i))
        .map(|&i| -> Result<f64> {
            let x = g.point(i);
            let jet = HessianEstimate::at(u, &x, g.h)?;
            let res = op.minus_from(&x, &jet, |y| u.interpolate(y))?;
            Ok(f.values[i] - res)
        })
        .collect::<Result<_>>()?;
    let defect = defects.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if defect > residual_tol {
        return Err(Error::Precondition(format!(
            "u is not a supersolution: defect {defect:.3e} exceeds {residual_tol:.3e}"
        )));
    }
    let (_, _, diam) = region_bounds(omega);
    let (inf_omega, _) = extrema(u, omega)?;
    let (collar, inside) = collar_cloud(u, omega);
    let exterior_inf = collar
        .values
        .iter()
        .zip(&inside)
        .filter(|(_, i)| i.is_none())
        .fold(f64::INFINITY, |m, (v, _)| m.min(*v));
    let contact_tol = vertex_contact_tol(u);
    let contact = contact_set(u, omega, ContactVariant::Nonlocal, Some(contact_tol))?;
    let dd = g.dim() as f64;
    let forcing_norm = (contact
        .nodes()
        .iter()
        .map(|&i| (-f.values[i]).max(0.0).powf(dd))
        .sum::<f64>()
        * g.cell_volume())
    .powf(1.0 / dd);
    let lhs = -inf_omega;
    let excess = lhs + exterior_inf;
    let denom = diam * forcing_norm;
    let (c, pass) = if denom > 0.0 {
        ((excess / denom).max(0.0), true)
    } else {
        (0.0, excess <= residual_tol)
    };
    Ok(AbpReport {
        lhs,
        exterior_inf,
        diam,
        forcing_norm,
        contact_nodes: contact.count(),
        contact_tol,
        supersolution_defect: defect,
        empirical_constant: c,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxDomain, ExteriorRule, Grid};

    fn line(n: usize) -> Grid {
        Grid::new(BoxDomain::cube(1, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn three_point_envelope() {
        let g = line(3);
        let u = GridFunction::new(g, vec![0.0, 1.0, 0.0], ExteriorRule::constant(0.0)).unwrap();
        let all = Region::Box(BoxDomain::cube(1, 1.0).unwrap());
        let e = convex_envelope(&u, &all).unwrap();
        assert_eq!(e.values, vec![0.0, 0.0, 0.0]);
        let c = contact_set(&u, &all, ContactVariant::Local, Some(1e-12)).unwrap();
        assert_eq!(c.mask, vec![true, false, true]);
    }

    #[test]
    fn planar_envelope_of_convex_data_is_exact() {
        let g = Grid::new(BoxDomain::cube(2, 1.0).unwrap(), 9).unwrap();
        let u = GridFunction::from_fn(g, |x| x[0] * x[0] + 0.5 * x[1] * x[1] + 0.3 * x[0] * x[1]);
        let all = Region::Box(BoxDomain::cube(2, 1.0).unwrap());
        let e = convex_envelope(&u, &all).unwrap();
        for (a, b) in e.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn planar_envelope_of_a_bump_is_flat() {
        let g = Grid::new(BoxDomain::cube(2, 1.0).unwrap(), 9).unwrap();
        let u = GridFunction::from_fn(g, |x| 1.0 - x[0] * x[0] - x[1] * x[1]);
        let all = Region::Box(BoxDomain::cube(2, 1.0).unwrap());
        let e = convex_envelope(&u, &all).unwrap();
        // Concave data: the envelope is the bilinear-free plane through the corners, -1.
        for v in &e.values {
            assert!((v + 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn min_norm_point_examples() {
        // b1 <= -1 and b2 <= -1: nearest point (-1, -1).
        let n = min_norm_feasible_2d(&[[1.0, 0.0], [0.0, 1.0]], &[-1.0, -1.0]).unwrap();
        assert!((n - 2f64.sqrt()).abs() < 1e-12);
        // Contradictory half-planes.
        assert!(min_norm_feasible_2d(&[[1.0, 0.0], [-1.0, 0.0]], &[-1.0, -1.0]).is_none());
    }
}
