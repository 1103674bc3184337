//! Dense complex linear algebra helpers shared by the tensor and channel code.

use ndarray::prelude::*;
use ndarray_linalg::{Eig, Eigh, QR, SVD, UPLO};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> CMat {
    CMat::eye(n)
}

/// Conjugate transpose.
pub fn dag(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn kron_vec(a: &CVec, b: &CVec) -> CVec {
    let mut out = CVec::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(m: &CMat) -> f64 {
    let (_, s, _) = m.svd(false, false).expect("svd failed");
    s.iter().cloned().fold(0.0, f64::max)
}

/// Schatten 1-norm (sum of singular values) of an arbitrary matrix.
pub fn schatten1(m: &CMat) -> f64 {
    let (_, s, _) = m.svd(false, false).expect("svd failed");
    s.sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
/// Columns of the returned matrix are the eigenvectors.
pub fn eigh_sorted(m: &CMat) -> (Array1<f64>, CMat) {
    // The backend returns the conjugated eigenvector matrix; undo that so
    // columns satisfy `m v = lambda v` directly.
    let (vals, vecs) = m.eigh(UPLO::Lower).expect("eigh failed");
    let vecs = vecs.mapv(|z| z.conj());
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let sorted_vals = Array1::from_iter(idx.iter().map(|&i| vals[i]));
    let mut sorted_vecs = CMat::zeros(vecs.dim());
    for (out_col, &in_col) in idx.iter().enumerate() {
        sorted_vecs.column_mut(out_col).assign(&vecs.column(in_col));
    }
    (sorted_vals, sorted_vecs)
}

/// General (non-Hermitian) eigendecomposition, sorted by descending |λ|.
pub fn eig_sorted(m: &CMat) -> (CVec, CMat) {
    let (vals, vecs) = m.eig().expect("eig failed");
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].norm().partial_cmp(&vals[a].norm()).unwrap());
    let sorted_vals = CVec::from_iter(idx.iter().map(|&i| vals[i]));
    let mut sorted_vecs = CMat::zeros(vecs.dim());
    for (out_col, &in_col) in idx.iter().enumerate() {
        sorted_vecs.column_mut(out_col).assign(&vecs.column(in_col));
    }
    (sorted_vals, sorted_vecs)
}

/// Singular value decomposition `m = u diag(s) vt`.
pub fn svd_full(m: &CMat) -> (CMat, Array1<f64>, CMat) {
    let (u, s, vt) = m.svd(true, true).expect("svd failed");
    (u.unwrap(), s, vt.unwrap())
}

pub fn singular_values(m: &CMat) -> Array1<f64> {
    let (_, s, _) = m.svd(false, false).expect("svd failed");
    s
}

/// Thin QR factorization.
pub fn qr_thin(m: &CMat) -> (CMat, CMat) {
    m.qr().expect("qr failed")
}

pub fn is_unitary(m: &CMat, tol: f64) -> bool {
    let n = m.nrows();
    if n != m.ncols() {
        return false;
    }
    let residual = &dag(m).dot(m) - &eye(n);
    residual.iter().all(|z| z.norm() <= tol)
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    let residual = m - &dag(m);
    residual.iter().all(|z| z.norm() <= tol)
}

/// Max entrywise modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Row-major vectorization: `vec(M)[i*n + j] = M[i, j]`.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_iter(m.iter().cloned())
}

pub fn unvectorize(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_shape_vec((rows, cols), v.to_vec()).unwrap()
}

/// Standard complex Gaussian scalar (unit variance per complex dimension).
pub fn gaussian_c64(rng: &mut ChaCha8Rng) -> C64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    C64::new(
        r * (2.0 * std::f64::consts::PI * u2).cos(),
        r * (2.0 * std::f64::consts::PI * u2).sin(),
    ) / 2f64.sqrt()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_shape_fn((rows, cols), |_| gaussian_c64(rng))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_shape_fn(n, |_| gaussian_c64(rng))
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    let v = random_vector(rng, n);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / norm)
}

/// Haar-ish random unitary from the QR of a Gaussian matrix.
pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let (q, r) = qr_thin(&random_matrix(rng, n, n));
    // Fix the diagonal phases so the distribution is phase-balanced.
    let mut q = q;
    for j in 0..n {
        let d = r[[j, j]];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[[i, j]] *= phase.conj();
        }
    }
    q
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let m = random_matrix(rng, n, n);
    (&m + &dag(&m)).mapv(|z| z / 2.0)
}

/// Partial trace over the factors listed in `trace_out`.
///
/// `dims` are the tensor-factor dimensions of the square matrix `m`
/// (row-major composite index, first factor slowest).
pub fn partial_trace(m: &CMat, dims: &[usize], trace_out: &[usize]) -> CMat {
    let total: usize = dims.iter().product();
    assert_eq!(m.nrows(), total, "dimension mismatch in partial_trace");
    let keep: Vec<usize> = (0..dims.len()).filter(|f| !trace_out.contains(f)).collect();
    let keep_dim: usize = keep.iter().map(|&f| dims[f]).product();
    let out_dim: usize = trace_out.iter().map(|&f| dims[f]).product();
    let mut strides = vec![0usize; dims.len()];
    {
        let mut acc = 1usize;
        for f in (0..dims.len()).rev() {
            strides[f] = acc;
            acc *= dims[f];
        }
    }
    let index_of = |factors_idx: &[usize], values: &[usize]| -> usize {
        factors_idx
            .iter()
            .zip(values)
            .map(|(&f, &v)| strides[f] * v)
            .sum()
    };
    // Enumerate multi-indices of kept and traced factors.
    let keep_dims: Vec<usize> = keep.iter().map(|&f| dims[f]).collect();
    let out_dims: Vec<usize> = trace_out.iter().map(|&f| dims[f]).collect();
    let mut result = CMat::zeros((keep_dim, keep_dim));
    let mut kvals_i = vec![0usize; keep.len()];
    for ki in 0..keep_dim {
        multi_index(ki, &keep_dims, &mut kvals_i);
        let base_i = index_of(&keep, &kvals_i);
        let mut kvals_j = vec![0usize; keep.len()];
        for kj in 0..keep_dim {
            multi_index(kj, &keep_dims, &mut kvals_j);
            let base_j = index_of(&keep, &kvals_j);
            let mut acc = ZERO;
            let mut tvals = vec![0usize; trace_out.len()];
            for t in 0..out_dim.max(1) {
                multi_index(t, &out_dims, &mut tvals);
                let off = index_of(trace_out, &tvals);
                acc += m[[base_i + off, base_j + off]];
            }
            result[[ki, kj]] = acc;
        }
    }
    result
}

/// Decompose `flat` into a multi-index w.r.t. `dims` (row-major).
pub fn multi_index(flat: usize, dims: &[usize], out: &mut [usize]) {
    let mut rem = flat;
    for f in (0..dims.len()).rev() {
        out[f] = rem % dims[f];
        rem /= dims[f];
    }
}

/// Fidelity |<a|b>|^2 between unit vectors.
pub fn fidelity(a: &CVec, b: &CVec) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.conj() * y)
        .sum::<C64>()
        .norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kron_matches_pauli_product() {
        let x = array![[ZERO, ONE], [ONE, ZERO]];
        let z = array![[ONE, ZERO], [ZERO, -ONE]];
        let xz = kron(&x, &z);
        assert_eq!(xz[[0, 2]], ONE);
        assert_eq!(xz[[1, 3]], -ONE);
        assert_eq!(xz[[2, 0]], ONE);
        assert_eq!(xz[[3, 1]], -ONE);
    }

    #[test]
    fn partial_trace_of_product_state() {
        // |0><0| ⊗ |+><+| traced over factor 1 gives |0><0|.
        let zero = array![[ONE, ZERO], [ZERO, ZERO]];
        let plus = CMat::from_elem((2, 2), c(0.5, 0.0));
        let joint = kron(&zero, &plus);
        let reduced = partial_trace(&joint, &[2, 2], &[1]);
        assert!(max_abs(&(&reduced - &zero)) < 1e-14);
        let reduced2 = partial_trace(&joint, &[2, 2], &[0]);
        assert!(max_abs(&(&reduced2 - &plus)) < 1e-14);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3, 5] {
            let u = random_unitary(&mut rng, n);
            assert!(is_unitary(&u, 1e-10));
        }
    }

    #[test]
    fn schatten1_of_hermitian_is_abs_eigenvalue_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 4);
        let (vals, _) = eigh_sorted(&h);
        let direct: f64 = vals.iter().map(|v| v.abs()).sum();
        assert!((schatten1(&h) - direct).abs() < 1e-10);
    }
}
