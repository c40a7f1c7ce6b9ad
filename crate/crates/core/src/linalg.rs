//! Dense singular value decomposition.
//!
//! Small matrices go through one-sided (Hestenes) Jacobi, which is accurate
//! to working precision. Larger matrices use randomized subspace iteration to
//! find the leading subspace and then run Jacobi on the projected problem.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::real::{axpy, dot};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Matrices whose smaller side exceeds this use the randomized path in
/// [`truncated_svd`].
pub const EXACT_SVD_LIMIT: usize = 600;

/// Thin SVD `A = U diag(s) Vt` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `n x r`, orthonormal columns.
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    /// `r x p`, orthonormal rows.
    pub vt: Array2<f64>,
}

impl Svd {
    /// Numerical rank relative to the largest singular value.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > rel_tol * smax).count()
    }

    /// Keep the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Svd {
        let k = k.min(self.s.len());
        Svd {
            u: self.u.slice(s![.., ..k]).to_owned(),
            s: self.s.slice(s![..k]).to_owned(),
            vt: self.vt.slice(s![..k, ..]).to_owned(),
        }
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (mut col, &sv) in us.axis_iter_mut(Axis(1)).zip(self.s.iter()) {
            col *= sv;
        }
        us.dot(&self.vt)
    }
}

/// Full thin SVD by one-sided Jacobi.
pub fn svd(a: ArrayView2<f64>) -> Svd {
    let (n, p) = a.dim();
    if n < p {
        let t = svd(a.t());
        return Svd {
            u: t.vt.t().to_owned(),
            s: t.s,
            vt: t.u.t().to_owned(),
        };
    }
    // Work on the columns of A stored as contiguous rows.
    let mut g: Vec<Vec<f64>> = (0..p).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = dot(&g[i], &g[i]);
                let beta = dot(&g[j], &g[j]);
                let gamma = dot(&g[i], &g[j]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_pair(&mut g, i, j, c, sn);
                rotate_pair(&mut v, i, j, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = g.iter().map(|col| dot(col, col).sqrt()).enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let mut u = Array2::zeros((n, p));
    let mut sv = Array1::zeros(p);
    let mut vt = Array2::zeros((p, p));
    for (dst, &(src, sigma)) in order.iter().enumerate() {
        sv[dst] = sigma;
        if sigma > 0.0 {
            for r in 0..n {
                u[[r, dst]] = g[src][r] / sigma;
            }
        }
        for c in 0..p {
            vt[[dst, c]] = v[src][c];
        }
    }
    Svd { u, s: sv, vt }
}

fn rotate_pair(rows: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = rows.split_at_mut(j);
    let ri = &mut lo[i];
    let rj = &mut hi[0];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Leading `k` singular triplets. Exact Jacobi for small inputs, randomized
/// subspace iteration (seeded, deterministic) otherwise.
pub fn truncated_svd(a: ArrayView2<f64>, k: usize, seed: u64) -> Svd {
    let (n, p) = a.dim();
    if n.min(p) <= EXACT_SVD_LIMIT {
        return svd(a).truncate(k);
    }
    let sketch = (k + 10).min(n.min(p));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_fn((p, sketch), |_| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormalize(a.dot(&omega));
    for _ in 0..4 {
        let z = orthonormalize(a.t().dot(&q));
        q = orthonormalize(a.dot(&z));
    }
    let b = q.t().dot(&a);
    let small = svd(b.view());
    Svd {
        u: q.dot(&small.u),
        s: small.s,
        vt: small.vt,
    }
    .truncate(k)
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns that
/// collapse numerically are left as zero.
pub fn orthonormalize(m: Array2<f64>) -> Array2<f64> {
    let (n, k) = m.dim();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| m.column(j).to_vec()).collect();
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&done[i], &rest[0]);
                axpy(-proj, &done[i], &mut rest[0]);
            }
        }
        let nrm = dot(&cols[j], &cols[j]).sqrt();
        if nrm > 1e-300 {
            cols[j].iter_mut().for_each(|x| *x /= nrm);
        } else {
            cols[j].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Array2::from_shape_fn((n, k), |(r, c)| cols[c][r])
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||P - X X^+ P||_F`: error of the best least-squares re-expansion of `p`
/// from the columns of `x`. Directions of `x` with singular value below
/// `rel_tol * s_max` are treated as null (pseudo-inverse cut-off).
pub fn least_squares_residual(p: ArrayView2<f64>, x: ArrayView2<f64>, rel_tol: f64) -> f64 {
    let dec = svd(x);
    let r = dec.rank(rel_tol);
    let ur = dec.u.slice(s![.., ..r]);
    let coeffs = ur.t().dot(&p);
    let fitted = ur.dot(&coeffs);
    frobenius((&p - &fitted).view())
}
