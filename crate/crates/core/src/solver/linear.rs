//! Sparse incomplete factorization and BiCGSTAB for the policy systems.

use crate::error::{Error, Result};

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(col, val)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }
}

/// ILU(0) factors stored in the pattern of the input matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    m: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.cols[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Precondition(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for k in s..e {
                pos[m.cols[k]] = k;
            }
            for k in s..e {
                let j = m.cols[k];
                if j >= i {
                    break;
                }
                let piv = m.vals[diag[j]];
                if piv == 0.0 {
                    return Err(Error::Precondition(format!("zero pivot at row {j}")));
                }
                let l = m.vals[k] / piv;
                m.vals[k] = l;
                for kk in diag[j] + 1..m.row_ptr[j + 1] {
                    let c = m.cols[kk];
                    if pos[c] != usize::MAX {
                        m.vals[pos[c]] -= l * m.vals[kk];
                    }
                }
            }
            for k in s..e {
                pos[m.cols[k]] = usize::MAX;
            }
            if m.vals[diag[i]] == 0.0 {
                return Err(Error::Precondition(format!("zero pivot at row {i}")));
            }
        }
        Ok(Self { m, diag })
    }

    /// Solves `L U x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let m = &self.m;
        for i in 0..m.n {
            let mut s = x[i];
            for k in m.row_ptr[i]..self.diag[i] {
                s -= m.vals[k] * x[m.cols[k]];
            }
            x[i] = s;
        }
        for i in (0..m.n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..m.row_ptr[i + 1] {
                s -= m.vals[k] * x[m.cols[k]];
            }
            x[i] = s / m.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Right-preconditioned BiCGSTAB. Stops when `|b - A x|_inf <= atol`.
pub fn bicgstab<A: Fn(&[f64], &mut [f64])>(
    apply: A,
    pre: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    atol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if inf_norm(&r) <= atol {
        return Ok(0);
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut best = inf_norm(&r);
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        phat.copy_from_slice(&p);
        pre.solve(&mut phat);
        apply(&phat, &mut v);
        let den = dot(&r0, &v);
        if den == 0.0 {
            break;
        }
        alpha = rho / den;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if inf_norm(&s) <= atol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(it);
        }
        shat.copy_from_slice(&s);
        pre.solve(&mut shat);
        apply(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = inf_norm(&r);
        best = best.min(rn);
        if rn <= atol {
            // Guard against drift between the recursive and true residual.
            apply(x, &mut t);
            let true_res = (0..n).fold(0.0f64, |m, i| m.max((b[i] - t[i]).abs()));
            if true_res <= atol {
                return Ok(it);
            }
            r.iter_mut().zip(b.iter().zip(&t)).for_each(|(ri, (bi, ti))| *ri = bi - ti);
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let n = 50;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        let a = Csr::from_rows(rows);
        let ilu = Ilu0::new(&a).unwrap();
        let b = vec![1.0; n];
        let mut x = b.clone();
        ilu.solve(&mut x);
        let mut y = vec![0.0; n];
        a.mul(&x, &mut y);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-10));
        let mut x = vec![0.0; n];
        let it = bicgstab(|v, o| a.mul(v, o), &ilu, &b, &mut x, 1e-12, 10).unwrap();
        assert!(it <= 2);
    }
}
