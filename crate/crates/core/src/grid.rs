//! Uniform lattices, grid functions with an exterior rule, and integral
//! diagnostics over regions.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `prod [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::param("domain", "lower and upper must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::param("domain", "need finite lower < upper on every axis"));
        }
        Ok(Self { lower, upper })
    }

    /// `[-half, half]^d`.
    pub fn cube(dim: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Euclidean distance to the box (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| {
                let e = (l - v).max(v - u).max(0.0);
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform lattice with spacing `h` on every axis, boundary nodes included.
/// Linear indices run with axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: BoxDomain,
    pub shape: Vec<usize>,
    pub h: f64,
    strides: Vec<usize>,
}

impl Grid {
    /// Lattice with `nodes` points along axis 0; other axes must be integer
    /// multiples of the resulting spacing.
    pub fn new(domain: BoxDomain, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::param("grid.nodes", "need at least 2 nodes per axis"));
        }
        let h = (domain.upper[0] - domain.lower[0]) / (nodes - 1) as f64;
        Self::with_spacing(domain, h)
    }

    pub fn with_spacing(domain: BoxDomain, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::param("grid.h", "spacing must be positive"));
        }
        let mut shape = Vec::with_capacity(domain.dim());
        for (l, u) in domain.lower.iter().zip(&domain.upper) {
            let cells = (u - l) / h;
            let n = cells.round();
            if (cells - n).abs() > 1e-8 * cells.max(1.0) || n < 1.0 {
                return Err(Error::param(
                    "grid.h",
                    format!("extent {} is not a multiple of the spacing {h}", u - l),
                ));
            }
            shape.push(n as usize + 1);
        }
        let mut strides = vec![1; shape.len()];
        for k in 1..shape.len() {
            strides[k] = strides[k - 1] * shape[k - 1];
        }
        Ok(Self {
            domain,
            shape,
            h,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        for n in &self.shape {
            out.push(idx % n);
            idx /= n;
        }
        out
    }

    pub fn linear_index(&self, mi: &[usize]) -> usize {
        mi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, idx: usize, axis: usize) -> f64 {
        let i = (idx / self.strides[axis]) % self.shape[axis];
        self.domain.lower[axis] + i as f64 * self.h
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.dim()).map(|k| self.coord(idx, k)).collect()
    }

    /// True if the node lies on the boundary of the box.
    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|k| {
            let i = (idx / self.strides[k]) % self.shape[k];
            i == 0 || i + 1 == self.shape[k]
        })
    }

    /// Index offset of `idx` shifted by `off` lattice steps, if inside.
    pub fn shifted(&self, idx: usize, off: &[isize]) -> Option<usize> {
        let mut out = idx as isize;
        for k in 0..self.dim() {
            let i = ((idx / self.strides[k]) % self.shape[k]) as isize + off[k];
            if i < 0 || i >= self.shape[k] as isize {
                return None;
            }
            out += off[k] * self.strides[k] as isize;
        }
        Some(out as usize)
    }

    /// Lower-corner cell index and fractional offsets of `x` if it lies in
    /// the closed box.
    pub fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut base = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = (x[k] - self.domain.lower[k]) / self.h;
            let n = (self.shape[k] - 1) as f64;
            if !(t >= -1e-10 && t <= n + 1e-10) {
                return None;
            }
            let t = t.clamp(0.0, n);
            let mut i = t.floor();
            if i >= n {
                i = n - 1.0;
            }
            base.push(i as usize);
            frac.push(t - i);
        }
        Some((base, frac))
    }
}

/// Total function used outside the lattice box.
#[derive(Clone)]
pub struct ExteriorRule(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl ExteriorRule {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for ExteriorRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExteriorRule(..)")
    }
}

/// Nodal values on a lattice plus an exterior rule, so that the function
/// is defined on all of R^d.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub exterior: ExteriorRule,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>, exterior: ExteriorRule) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::param("values", format!("expected {} values, got {}", grid.len(), values.len())));
        }
        Ok(Self { grid, values, exterior })
    }

    /// Samples `f` at the nodes and uses `f` itself outside the box.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self {
            grid,
            values,
            exterior: ExteriorRule::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Multilinear interpolation in the closed box, the exterior rule outside.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        match self.grid.locate(x) {
            Some((base, frac)) => self.multilinear(&base, &frac),
            None => self.exterior.eval(x),
        }
    }

    pub(crate) fn multilinear(&self, base: &[usize], frac: &[f64]) -> f64 {
        let d = self.dim();
        let b = self.grid.linear_index(base);
        let mut s = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = b;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    if frac[k] == 0.0 {
                        w = 0.0;
                        break;
                    }
                    w *= frac[k];
                    idx += self.grid.strides()[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                s += w * self.values[idx];
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max of `u` over the 3^d lattice neighborhood of every node.
    pub fn upper_envelope(&self) -> Vec<f64> {
        self.neighborhood_reduce(f64::max, f64::NEG_INFINITY)
    }

    /// Min of `u` over the 3^d lattice neighborhood of every node.
    pub fn lower_envelope(&self) -> Vec<f64> {
        self.neighborhood_reduce(f64::min, f64::INFINITY)
    }

    fn neighborhood_reduce(&self, op: fn(f64, f64) -> f64, init: f64) -> Vec<f64> {
        let d = self.dim();
        let offs = stencil_offsets(d);
        (0..self.grid.len())
            .map(|i| {
                offs.iter()
                    .filter_map(|o| self.grid.shifted(i, o))
                    .fold(init, |m, j| op(m, self.values[j]))
            })
            .collect()
    }

    /// CSV with columns `x1..xd,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|k| format!("x{k}")).chain(["value".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.grid.len() {
            let p = self.grid.point(i);
            for c in p {
                write!(out, "{c:.17e},")?;
            }
            writeln!(out, "{:.17e}", self.values[i])?;
        }
        Ok(())
    }

    /// Little-endian binary: `u64 d`, `d x u64 shape`, `d x f64 lower`,
    /// `d x f64 upper`, then the values (axis 0 fastest) as f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        for n in &self.grid.shape {
            out.write_all(&(*n as u64).to_le_bytes())?;
        }
        for v in self.grid.domain.lower.iter().chain(&self.grid.domain.upper) {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout of [`GridFunction::write_binary`].
    pub fn read_binary(path: &Path, exterior: ExteriorRule) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take8 = |bytes: &[u8]| -> Result<[u8; 8]> {
            let s = bytes
                .get(pos..pos + 8)
                .ok_or_else(|| Error::Parse("truncated grid file".into()))?;
            pos += 8;
            Ok(s.try_into().unwrap())
        };
        let d = u64::from_le_bytes(take8(&bytes)?) as usize;
        if d == 0 || d > 16 {
            return Err(Error::Parse(format!("implausible dimension {d}")));
        }
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            shape.push(u64::from_le_bytes(take8(&bytes)?) as usize);
        }
        let mut lower = Vec::with_capacity(d);
        let mut upper = Vec::with_capacity(d);
        for _ in 0..d {
            lower.push(f64::from_le_bytes(take8(&bytes)?));
        }
        for _ in 0..d {
            upper.push(f64::from_le_bytes(take8(&bytes)?));
        }
        let grid = Grid::new(BoxDomain::new(lower, upper)?, shape[0])?;
        if grid.shape != shape {
            return Err(Error::Parse("shape inconsistent with bounds".into()));
        }
        let n = grid.len();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(take8(&bytes)?));
        }
        Self::new(grid, values, exterior)
    }
}

/// All offsets in `{-1,0,1}^d`.
pub fn stencil_offsets(d: usize) -> Vec<Vec<isize>> {
    let n = 3usize.pow(d as u32);
    (0..n)
        .map(|mut c| {
            (0..d)
                .map(|_| {
                    let v = (c % 3) as isize - 1;
                    c /= 3;
                    v
                })
                .collect()
        })
        .collect()
}

/// A measurable set, sampled on lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    /// `{ |x - center|_inf <= half }`.
    Cube { center: Vec<f64>, half: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    Box(BoxDomain),
    /// Node mask on a specific lattice.
    Mask(Vec<bool>),
}

const INCL: f64 = 1e-12;

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    pub fn cube(center: Vec<f64>, half: f64) -> Self {
        Region::Cube { center, half }
    }

    /// Membership of node `idx` of `grid`.
    pub fn contains_node(&self, grid: &Grid, idx: usize) -> bool {
        match self {
            Region::Mask(m) => m[idx],
            _ => self.contains(&grid.point(idx)).unwrap_or(false),
        }
    }

    /// Membership of an arbitrary point; `None` for masks.
    pub fn contains(&self, x: &[f64]) -> Option<bool> {
        let dist = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let tol = |r: f64| r * (1.0 + INCL) + INCL;
        Some(match self {
            Region::Ball { center, radius } => dist(center) <= tol(*radius),
            Region::Cube { center, half } => x.iter().zip(center).all(|(a, b)| (a - b).abs() <= tol(*half)),
            Region::Annulus { center, inner, outer } => {
                let r = dist(center);
                r > *inner * (1.0 + INCL) && r < *outer * (1.0 - INCL)
            }
            Region::Box(b) => x
                .iter()
                .zip(b.lower.iter().zip(&b.upper))
                .all(|(v, (l, u))| *v >= l - INCL * (1.0 + l.abs()) && *v <= u + INCL * (1.0 + u.abs())),
            Region::Mask(_) => return None,
        })
    }

    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len()).filter(|&i| self.contains_node(grid, i)).collect()
    }

    /// `count * h^d`.
    pub fn measure(&self, grid: &Grid) -> f64 {
        self.nodes(grid).len() as f64 * grid.cell_volume()
    }
}

/// `(sum_{nodes in region} |u|^p h^d)^{1/p}`; any `p > 0` is accepted.
pub fn lp_norm(u: &GridFunction, region: &Region, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::param("p", "must be positive"));
    }
    let nodes = region.nodes(&u.grid);
    if nodes.is_empty() {
        return Err(Error::Domain("region contains no lattice nodes".into()));
    }
    let mut s = 0.0;
    let mut c = 0.0;
    for i in nodes {
        // Neumaier summation keeps the result independent of magnitude ordering.
        let v = u.values[i].abs().powf(p);
        let t = s + v;
        if s.abs() >= v {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    Ok(((s + c) * u.grid.cell_volume()).powf(1.0 / p))
}

/// `max - min` of the nodal values in the region.
pub fn oscillation(u: &GridFunction, region: &Region) -> Result<f64> {
    let (lo, hi) = extrema(u, region)?;
    Ok(hi - lo)
}

/// Min and max of the nodal values in the region.
pub fn extrema(u: &GridFunction, region: &Region) -> Result<(f64, f64)> {
    let nodes = region.nodes(&u.grid);
    if nodes.is_empty() {
        return Err(Error::Domain("region contains no lattice nodes".into()));
    }
    Ok(nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(u.values[i]), hi.max(u.values[i]))
    }))
}

/// `|{u > t} ∩ region|` as `count * h^d`.
pub fn superlevel_measure(u: &GridFunction, region: &Region, t: f64) -> f64 {
    region.nodes(&u.grid).iter().filter(|&&i| u.values[i] > t).count() as f64 * u.grid.cell_volume()
}
