//! Small dense complex linear algebra: Hermitian eigendecomposition by
//! cyclic Jacobi sweeps and matrix fractional powers.
//!
//! Matrix orders here are the vector dimension `m` of the weights
//! (typically 1–3), so an O(m^3)-per-sweep Jacobi with a deterministic
//! sweep order is both fast and bit-reproducible.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

/// Row-major `m × m` complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub m: usize,
    pub a: Vec<C64>,
}

impl CMat {
    pub fn zeros(m: usize) -> Self {
        CMat {
            m,
            a: vec![C64::new(0.0, 0.0); m * m],
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut out = Self::zeros(m);
        for i in 0..m {
            out[(i, i)] = C64::new(1.0, 0.0);
        }
        out
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let m = rows.len();
        let mut a = Vec::with_capacity(m * m);
        for r in rows {
            assert_eq!(r.len(), m, "square matrix expected");
            a.extend_from_slice(r);
        }
        CMat { m, a }
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.m, other.m);
        let m = self.m;
        let mut out = CMat::zeros(m);
        for i in 0..m {
            for l in 0..m {
                let s = self[(i, l)];
                if s == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..m {
                    out[(i, j)] += s * other[(l, j)];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMat {
        let m = self.m;
        let mut out = CMat::zeros(m);
        for i in 0..m {
            for j in 0..m {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        let m = self.m;
        assert_eq!(z.len(), m);
        let mut out = vec![C64::new(0.0, 0.0); m];
        for i in 0..m {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..m {
                s += self[(i, j)] * z[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn scale(&self, c: f64) -> CMat {
        CMat {
            m: self.m,
            a: self.a.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!(self.m, other.m);
        CMat {
            m: self.m,
            a: self
                .a
                .iter()
                .zip(&other.a)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!(self.m, other.m);
        CMat {
            m: self.m,
            a: self
                .a
                .iter()
                .zip(&other.a)
                .map(|(x, y)| x - y)
                .collect(),
        }
    }

    /// Frobenius norm.
    pub fn fro_norm(&self) -> f64 {
        self.a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Operator norm `sup_{|z|=1} |Az|` = largest singular value, via the
    /// Hermitian eigenvalues of `A* A`.
    pub fn op_norm(&self) -> f64 {
        let ata = self.adjoint().mul(self);
        let (vals, _) = hermitian_eigen(&ata, JACOBI_TOL, JACOBI_MAX_SWEEPS)
            .expect("A*A is Hermitian PSD; Jacobi converges");
        vals.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0))).sqrt()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let m = self.m;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    worst = worst.max(self[(i, j)].norm());
                }
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.a[i * self.m + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.a[i * self.m + j]
    }
}

pub const JACOBI_TOL: f64 = 1e-13;
pub const JACOBI_MAX_SWEEPS: usize = 64;
/// Relative Hermitian-symmetry tolerance for PD inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// Sweeps run over `(p, q)` in fixed row order until the largest
/// off-diagonal modulus falls below `tol` (relative to the Frobenius
/// norm). Returns eigenvalues (unsorted diagonal order) and the unitary
/// `U` with `A = U diag(λ) U*`.
pub fn hermitian_eigen(a: &CMat, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, CMat)> {
    let m = a.m;
    let mut w = a.clone();
    // symmetrize: w <- (a + a*)/2 to shed rounding drift
    let adj = a.adjoint();
    for i in 0..m * m {
        w.a[i] = (w.a[i] + adj.a[i]) * 0.5;
    }
    let mut u = CMat::identity(m);
    let scale = w.fro_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..max_sweeps {
        if w.max_off_diagonal() <= tol * scale {
            let vals = (0..m).map(|i| w[(i, i)].re).collect();
            return Ok((vals, u));
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = w[(p, q)];
                if apq.norm() <= tol * scale * 1e-3 {
                    continue;
                }
                let app = w[(p, p)].re;
                let aqq = w[(q, q)].re;
                // unitary 2x2: [c, -s̄; s, c] with s = sinθ·e^{iφ}, φ = arg(a_pq)
                let phi = C64::from_polar(1.0, apq.arg());
                let tau = (aqq - app) / (2.0 * apq.norm());
                // stable tan θ
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_mag = t * c;
                let s = phi * s_mag;
                // apply rotation on rows/columns p, q of w and columns of u
                for k in 0..m {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = wkp * c - wkq * s.conj();
                    w[(k, q)] = wkp * s + wkq * c;
                }
                for k in 0..m {
                    let wpk = w[(p, k)];
                    let wqk = w[(q, k)];
                    w[(p, k)] = wpk * c - wqk * s;
                    w[(q, k)] = wpk * s.conj() + wqk * c;
                }
                for k in 0..m {
                    let ukp = u[(k, p)];
                    let ukq = u[(k, q)];
                    u[(k, p)] = ukp * c - ukq * s.conj();
                    u[(k, q)] = ukp * s + ukq * c;
                }
            }
        }
    }
    if w.max_off_diagonal() <= tol * scale * 10.0 {
        let vals = (0..m).map(|i| w[(i, i)].re).collect();
        return Ok((vals, u));
    }
    Err(Error::EigenNoConvergence(max_sweeps))
}

/// A Hermitian positive-definite matrix, the value type of matrix weights
/// and reducing operators.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianPd {
    mat: CMat,
}

impl HermitianPd {
    /// Validates Hermitian symmetry (relative 1e-12) and positive
    /// eigenvalues.
    pub fn new(mat: CMat) -> Result<Self> {
        let scale = mat.fro_norm().max(f64::MIN_POSITIVE);
        let dev = mat.sub(&mat.adjoint()).fro_norm();
        if dev > 2.0 * HERMITIAN_TOL * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "Hermitian deviation {dev:.3e} exceeds tolerance"
            )));
        }
        let (vals, _) = hermitian_eigen(&mat, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {:.3e} <= 0",
                vals.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        Ok(HermitianPd { mat })
    }

    pub fn identity(m: usize) -> Self {
        HermitianPd {
            mat: CMat::identity(m),
        }
    }

    /// Real diagonal matrix; all entries must be positive.
    pub fn diag(entries: &[f64]) -> Result<Self> {
        if entries.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite(
                "diagonal entry <= 0".into(),
            ));
        }
        let m = entries.len();
        let mut mat = CMat::zeros(m);
        for (i, &v) in entries.iter().enumerate() {
            mat[(i, i)] = C64::new(v, 0.0);
        }
        Ok(HermitianPd { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.m
    }

    pub fn as_mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        self.mat.apply(z)
    }

    /// `|Az|` for a unit of the induced ellipsoid norm.
    pub fn apply_norm(&self, z: &[C64]) -> f64 {
        self.mat
            .apply(z)
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn op_norm(&self) -> f64 {
        let (vals, _) = hermitian_eigen(&self.mat, JACOBI_TOL, JACOBI_MAX_SWEEPS)
            .expect("validated Hermitian");
        vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// `A^α = U diag(λ^α) U*`.
    pub fn power(&self, alpha: f64) -> Result<HermitianPd> {
        let (vals, u) = hermitian_eigen(&self.mat, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "power({alpha}): eigenvalue {:.3e} <= 0",
                vals.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        let m = self.mat.m;
        let mut d = CMat::zeros(m);
        for (i, &v) in vals.iter().enumerate() {
            d[(i, i)] = C64::new(v.powf(alpha), 0.0);
        }
        let mat = u.mul(&d).mul(&u.adjoint());
        // exact Hermitian-ization of the product
        let adj = mat.adjoint();
        let sym = CMat {
            m,
            a: mat.a.iter().zip(&adj.a).map(|(x, y)| (x + y) * 0.5).collect(),
        };
        Ok(HermitianPd { mat: sym })
    }

    pub fn inverse(&self) -> Result<HermitianPd> {
        self.power(-1.0)
    }
}

/// Serializable matrix entries (`re`/`im` row-major) used by configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixEntries {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixEntries {
    pub fn to_hermitian_pd(&self) -> Result<HermitianPd> {
        let m = self.re.len();
        let mut mat = CMat::zeros(m);
        for i in 0..m {
            if self.re[i].len() != m {
                return Err(Error::Config("matrix rows must be square".into()));
            }
            for j in 0..m {
                let im = self
                    .im
                    .as_ref()
                    .map(|rows| rows[i][j])
                    .unwrap_or(0.0);
                mat[(i, j)] = C64::new(self.re[i][j], im);
            }
        }
        HermitianPd::new(mat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_hermitian_pd(m: usize, rng: &mut impl Rng) -> HermitianPd {
        // B*B + εI is Hermitian PD
        let mut b = CMat::zeros(m);
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let mut a = b.adjoint().mul(&b);
        for i in 0..m {
            a[(i, i)] += C64::new(0.05, 0.0);
        }
        HermitianPd::new(a).unwrap()
    }

    #[test]
    fn power_identity_and_diag() {
        let i2 = HermitianPd::identity(2);
        let h = i2.power(0.5).unwrap();
        assert!(h.as_mat().sub(i2.as_mat()).fro_norm() < 1e-14);

        let d = HermitianPd::diag(&[4.0, 1.0]).unwrap();
        let s = d.power(0.5).unwrap();
        let expect = HermitianPd::diag(&[2.0, 1.0]).unwrap();
        assert!(s.as_mat().sub(expect.as_mat()).fro_norm() < 1e-13);
    }

    /// Squaring oracle: ‖(A^{1/2})^2 − A‖ ≤ 1e−10 ‖A‖ on random PD input.
    #[test]
    fn power_squaring_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for m in 1..=3 {
            for _ in 0..25 {
                let a = random_hermitian_pd(m, &mut rng);
                let h = a.power(0.5).unwrap();
                let sq = h.as_mat().mul(h.as_mat());
                let err = sq.sub(a.as_mat()).fro_norm();
                assert!(err <= 1e-10 * a.as_mat().fro_norm().max(1.0));
            }
        }
    }

    /// Group law: A^α A^β = A^{α+β}; positivity preserved.
    #[test]
    fn power_group_law() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for m in 1..=3 {
            for _ in 0..10 {
                let a = random_hermitian_pd(m, &mut rng);
                for (al, be) in [(0.5, 0.25), (1.0, -1.0), (-0.5, 1.5)] {
                    let lhs = a.power(al).unwrap().as_mat().mul(a.power(be).unwrap().as_mat());
                    let rhs = a.power(al + be).unwrap();
                    let err = lhs.sub(rhs.as_mat()).fro_norm();
                    assert!(
                        err <= 1e-10 * rhs.as_mat().fro_norm().max(1.0),
                        "group law failed m={m} α={al} β={be}: {err:.2e}"
                    );
                }
            }
        }
    }

    #[test]
    fn power_one_is_identity_map() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_hermitian_pd(3, &mut rng);
        let p1 = a.power(1.0).unwrap();
        assert!(p1.as_mat().sub(a.as_mat()).fro_norm() < 1e-12);
    }

    #[test]
    fn non_pd_rejected() {
        let mut mat = CMat::identity(2);
        mat[(1, 1)] = C64::new(-1.0, 0.0);
        assert!(HermitianPd::new(mat).is_err());
        let mut nh = CMat::identity(2);
        nh[(0, 1)] = C64::new(0.5, 0.0);
        // not Hermitian (0.5 above, 0 below)
        assert!(HermitianPd::new(nh).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for m in 1..=4 {
            let a = random_hermitian_pd(m, &mut rng);
            let (vals, u) = hermitian_eigen(a.as_mat(), JACOBI_TOL, JACOBI_MAX_SWEEPS).unwrap();
            let mut d = CMat::zeros(m);
            for (i, &v) in vals.iter().enumerate() {
                d[(i, i)] = C64::new(v, 0.0);
            }
            let rec = u.mul(&d).mul(&u.adjoint());
            assert!(rec.sub(a.as_mat()).fro_norm() < 1e-11 * a.as_mat().fro_norm().max(1.0));
            // unitarity
            let uu = u.adjoint().mul(&u);
            assert!(uu.sub(&CMat::identity(m)).fro_norm() < 1e-12);
        }
    }

    #[test]
    fn op_norm_diag() {
        let d = HermitianPd::diag(&[3.0, 0.5]).unwrap();
        assert!((d.op_norm() - 3.0).abs() < 1e-12);
        assert!((d.as_mat().op_norm() - 3.0).abs() < 1e-12);
    }
}
