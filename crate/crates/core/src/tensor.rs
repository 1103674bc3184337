//! MPS tensors, transfer channels, finite chains, density operators and
//! the norms used throughout the noise analysis.

use crate::linalg::{self, CMat, CVec, ONE, ZERO};
use crate::state::DenseState;
use crate::tol;
use num_complex::Complex64 as C64;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor is not injective")]
    NotInjective,
    #[error("leading transfer eigenvalue is degenerate (ratio {0:.6})")]
    DegenerateLeadingEigenvalue(f64),
    #[error("site index out of range: {0}")]
    OutOfRange(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cut {0}")]
    InvalidCut(usize),
    #[error("dense dimension {0} exceeds the cap {1}")]
    SizeOverflow(usize, usize),
    #[error("state is not normalizable")]
    NotNormalizable,
    #[error("serialization: {0}")]
    Serialization(String),
}

/// A three-index MPS tensor `A[k]_{l r}` with physical dimension `d` and
/// bond dimensions `(dl, dr)`.
#[derive(Debug, Clone)]
pub struct MpsTensor {
    /// `mats[k]` is the `dl x dr` bond matrix for physical index `k`.
    pub mats: Vec<CMat>,
}

impl MpsTensor {
    pub fn new(mats: Vec<CMat>) -> Self {
        assert!(!mats.is_empty());
        let dims = mats[0].dim();
        assert!(mats.iter().all(|m| m.dim() == dims));
        MpsTensor { mats }
    }

    pub fn physical_dim(&self) -> usize {
        self.mats.len()
    }

    pub fn left_dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn right_dim(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn is_square(&self) -> bool {
        self.left_dim() == self.right_dim()
    }

    pub fn matrix(&self, k: usize) -> &CMat {
        &self.mats[k]
    }

    /// `A[psi] = sum_k <psi|k> A[k]` — the bond operator selected by an
    /// outcome `|psi>` on the physical leg.
    pub fn contract_physical(&self, psi: &CVec) -> CMat {
        assert_eq!(psi.len(), self.physical_dim());
        let mut out = CMat::zeros((self.left_dim(), self.right_dim()));
        for (k, m) in self.mats.iter().enumerate() {
            let c = psi[k].conj();
            if c != ZERO {
                out = out + m.mapv(|z| z * c);
            }
        }
        out
    }

    /// Rotate the physical leg into a new basis (columns of `basis` are the
    /// new basis kets expressed in the old basis).
    pub fn physical_basis_change(&self, basis: &CMat) -> MpsTensor {
        let d = self.physical_dim();
        assert_eq!(basis.nrows(), d);
        let cols = basis.ncols();
        let mats = (0..cols)
            .map(|k| self.contract_physical(&basis.column(k).to_owned()))
            .collect();
        MpsTensor::new(mats)
    }

    /// The exact 1-D cluster tensor in the symmetry eigenbasis
    /// `|++>, |+->, |-+>, |-->`: `A[i] = V(g_i) / 2` with byproducts
    /// `I, X, Z, XZ`. The 1/2 makes the transfer channel unital.
    pub fn cluster() -> Self {
        use crate::pauli::Pauli;
        let x = Pauli::X.dense();
        let z = Pauli::Z.dense();
        let half = |m: CMat| m.mapv(|v| v * 0.5);
        MpsTensor::new(vec![
            half(CMat::eye(2)),
            half(x.clone()),
            half(z.clone()),
            half(x.dot(&z)),
        ])
    }

    pub fn random(rng: &mut rand_chacha::ChaCha8Rng, d: usize, bond: usize) -> Self {
        MpsTensor::new(
            (0..d)
                .map(|_| linalg::random_matrix(rng, bond, bond))
                .collect(),
        )
    }
}

/// The completely positive transfer map `A(s) = sum_k A[k] s A[k]^dag`
/// as a `D^2 x D^2` superoperator on row-major vectorized operators.
#[derive(Debug, Clone)]
pub struct TransferChannel {
    pub mat: CMat,
    bond: usize,
    spectrum: OnceLock<CVec>,
}

impl TransferChannel {
    pub fn bond_dim(&self) -> usize {
        self.bond
    }

    pub fn apply(&self, sigma: &CMat) -> CMat {
        let v = linalg::vectorize(sigma);
        linalg::unvectorize(&self.mat.dot(&v), self.bond, self.bond)
    }

    pub fn apply_adjoint(&self, sigma: &CMat) -> CMat {
        let v = linalg::vectorize(sigma);
        linalg::unvectorize(&linalg::dag(&self.mat).dot(&v), self.bond, self.bond)
    }

    /// Eigenvalues sorted by descending modulus (cached after first use).
    pub fn spectrum(&self) -> &CVec {
        self.spectrum.get_or_init(|| {
            let (vals, _) = linalg::eig_sorted(&self.mat);
            vals
        })
    }

    /// Choi matrix `sum_k vec(A_k) vec(A_k)^dag`; PSD by construction, used
    /// to verify complete positivity numerically.
    pub fn choi(&self) -> CMat {
        // Reshuffle S[(i,i'),(j,j')] -> C[(i,j),(i',j')].
        let d = self.bond;
        let mut c = CMat::zeros((d * d, d * d));
        for i in 0..d {
            for ip in 0..d {
                for j in 0..d {
                    for jp in 0..d {
                        c[[i * d + j, ip * d + jp]] = self.mat[[i * d + ip, j * d + jp]];
                    }
                }
            }
        }
        c
    }

    pub fn min_choi_eigenvalue(&self) -> f64 {
        let choi = self.choi();
        let herm = (&choi + &linalg::dag(&choi)).mapv(|z| z / 2.0);
        let (vals, _) = linalg::eigh_sorted(&herm);
        vals[0]
    }

    pub fn unitality_residual(&self) -> f64 {
        let id = CMat::eye(self.bond);
        linalg::max_abs(&(&self.apply(&id) - &id))
    }
}

/// Build the transfer channel of a square MPS tensor.
pub fn transfer_channel(a: &MpsTensor) -> TransferChannel {
    assert!(a.is_square(), "transfer channel requires square bonds");
    let d = a.left_dim();
    let mut mat = CMat::zeros((d * d, d * d));
    for k in 0..a.physical_dim() {
        let m = a.matrix(k);
        mat = mat + linalg::kron(m, &m.mapv(|z| z.conj()));
    }
    TransferChannel {
        mat,
        bond: d,
        spectrum: OnceLock::new(),
    }
}

/// Transfer map twisted by an operator `O` on the physical leg:
/// `T_O(s) = sum_k A[O^dag |k>] s A[k]^dag`.
pub fn twisted_transfer(a: &MpsTensor, op: &CMat) -> TransferChannel {
    assert!(a.is_square());
    let d = a.left_dim();
    let phys = a.physical_dim();
    assert_eq!(op.nrows(), phys);
    let mut mat = CMat::zeros((d * d, d * d));
    for k in 0..phys {
        // A[O^dag |k>] = sum_j O_{kj} A[j]
        let mut twisted = CMat::zeros((d, d));
        for j in 0..phys {
            let c = op[[k, j]];
            if c != ZERO {
                twisted = twisted + a.matrix(j).mapv(|z| z * c);
            }
        }
        mat = mat + linalg::kron(&twisted, &a.matrix(k).mapv(|z| z.conj()));
    }
    TransferChannel {
        mat,
        bond: d,
        spectrum: OnceLock::new(),
    }
}

/// Injectivity: blocked maps span the full bond-operator space for some
/// block length. The search stops when the span stabilizes or a cap of
/// `D^4` block lengths is reached.
pub fn injectivity_check(a: &MpsTensor) -> bool {
    if !a.is_square() {
        return false;
    }
    let d = a.left_dim();
    let target = d * d;
    if a.mats.iter().all(|m| linalg::max_abs(m) == 0.0) {
        return false;
    }
    let orthonormalize = |mats: &[CMat]| -> Vec<CVec> {
        let mut basis: Vec<CVec> = Vec::new();
        for m in mats {
            let mut v = linalg::vectorize(m);
            for b in &basis {
                let overlap: C64 = b.iter().zip(v.iter()).map(|(x, y)| x.conj() * y).sum();
                v = &v - &b.mapv(|z| z * overlap);
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                basis.push(v.mapv(|z| z / norm));
            }
        }
        basis
    };
    let mut span: Vec<CMat> = a.mats.clone();
    let mut basis = orthonormalize(&span);
    let cap = target * target;
    for _ in 1..=cap {
        if basis.len() == target {
            return true;
        }
        let mut next: Vec<CMat> = Vec::new();
        for k in 0..a.physical_dim() {
            for m in &span {
                next.push(a.matrix(k).dot(m));
            }
        }
        let next_basis = orthonormalize(&next);
        if next_basis.len() <= basis.len() {
            // Span stabilized; it can never grow again.
            return next_basis.len() == target;
        }
        span = next_basis
            .iter()
            .map(|v| linalg::unvectorize(v, d, d))
            .collect();
        basis = next_basis;
    }
    basis.len() == target
}

/// Canonical form data: the gauged tensor, the adjoint fixed point and the
/// subleading transfer eigenvalue.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub tensor: MpsTensor,
    /// Fixed point of the adjoint channel, trace-1 PSD.
    pub fixed_point: CMat,
    /// Largest-modulus eigenvalue after the leading 1.
    pub subleading: C64,
}

/// Rotate a raw fixed-point candidate to a Hermitian, positive-trace matrix.
fn hermitianize_fixed_point(raw: &CMat) -> Option<CMat> {
    let t = linalg::trace(raw);
    if t.norm() < 1e-12 {
        return None;
    }
    let rotated = raw.mapv(|z| z * t.conj() / t.norm());
    Some((&rotated + &linalg::dag(&rotated)).mapv(|z| z / 2.0))
}

/// Bring an injective tensor to canonical form: the transfer channel of the
/// output is unital, its adjoint has the returned density operator as fixed
/// point, and the subleading eigenvalue modulus is strictly below one.
pub fn canonical_form(a: &MpsTensor) -> Result<CanonicalForm, TensorError> {
    if !injectivity_check(a) {
        return Err(TensorError::NotInjective);
    }
    let d = a.left_dim();
    let chan = transfer_channel(a);
    let (vals, vecs) = linalg::eig_sorted(&chan.mat);
    let lead = vals[0];
    if lead.norm() < 1e-14 {
        return Err(TensorError::NotNormalizable);
    }
    if vals.len() > 1 && (vals[1].norm() / lead.norm()) > 1.0 - 1e-12 {
        return Err(TensorError::DegenerateLeadingEigenvalue(
            vals[1].norm() / lead.norm(),
        ));
    }
    let p = hermitianize_fixed_point(&linalg::unvectorize(&vecs.column(0).to_owned(), d, d))
        .ok_or(TensorError::NotInjective)?;
    let tr = linalg::trace(&p).re;
    let p = p.mapv(|z| z * (d as f64) / tr);
    let (pvals, pvecs) = linalg::eigh_sorted(&p);
    if pvals[0] <= 1e-12 {
        return Err(TensorError::NotInjective);
    }
    let func_of_p = |f: &dyn Fn(f64) -> f64| -> CMat {
        let mut m = CMat::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += pvecs[[i, k]] * C64::new(f(pvals[k]), 0.0) * pvecs[[j, k]].conj();
                }
                m[[i, j]] = acc;
            }
        }
        m
    };
    let p_sqrt = func_of_p(&|x| x.sqrt());
    let p_isqrt = func_of_p(&|x| 1.0 / x.sqrt());
    let scale = 1.0 / lead.norm().sqrt();
    let gauged = MpsTensor::new(
        a.mats
            .iter()
            .map(|m| p_isqrt.dot(m).dot(&p_sqrt).mapv(|z| z * scale))
            .collect(),
    );
    let chan2 = transfer_channel(&gauged);
    let (avals, avecs) = linalg::eig_sorted(&linalg::dag(&chan2.mat));
    let lam_raw = linalg::unvectorize(&avecs.column(0).to_owned(), d, d);
    let lam = hermitianize_fixed_point(&lam_raw).ok_or(TensorError::NotNormalizable)?;
    let ltr = linalg::trace(&lam).re;
    let lam = lam.mapv(|z| z / ltr);
    let subleading = if avals.len() > 1 { avals[1].conj() } else { ZERO };
    Ok(CanonicalForm {
        tensor: gauged,
        fixed_point: lam,
        subleading,
    })
}

/// Correlation length `xi = -1 / log|a|`; zero when the subleading
/// eigenvalue vanishes.
pub fn correlation_length(a: &MpsTensor) -> Result<f64, TensorError> {
    let cf = canonical_form(a)?;
    let m = cf.subleading.norm();
    if m < 1e-14 {
        Ok(0.0)
    } else {
        Ok(-1.0 / m.ln())
    }
}

/// A finite MPS with explicit end vectors: the amplitude of a configuration
/// is `L^T A[i_1] ... A[i_n] R`.
#[derive(Debug, Clone)]
pub struct FiniteMps {
    pub tensors: Vec<MpsTensor>,
    pub left: CVec,
    pub right: CVec,
}

impl FiniteMps {
    pub fn new(tensors: Vec<MpsTensor>, left: CVec, right: CVec) -> Result<Self, TensorError> {
        if tensors.is_empty() {
            return Err(TensorError::DimensionMismatch("empty chain".into()));
        }
        if tensors[0].left_dim() != left.len() {
            return Err(TensorError::DimensionMismatch(
                "left end vector does not match first bond".into(),
            ));
        }
        if tensors.last().unwrap().right_dim() != right.len() {
            return Err(TensorError::DimensionMismatch(
                "right end vector does not match last bond".into(),
            ));
        }
        for w in tensors.windows(2) {
            if w[0].right_dim() != w[1].left_dim() {
                return Err(TensorError::DimensionMismatch(
                    "neighboring bond dimensions differ".into(),
                ));
            }
        }
        Ok(FiniteMps {
            tensors,
            left,
            right,
        })
    }

    /// Uniform chain of `n` copies of a square tensor.
    pub fn uniform(a: &MpsTensor, n: usize, left: CVec, right: CVec) -> Result<Self, TensorError> {
        Self::new(vec![a.clone(); n], left, right)
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.physical_dim()).collect()
    }

    /// Contract to a dense state (unnormalized).
    pub fn to_dense(&self) -> Result<DenseState, TensorError> {
        let total: usize = self.physical_dims().iter().product();
        if total > tol::DENSIFY_CAP {
            return Err(TensorError::SizeOverflow(total, tol::DENSIFY_CAP));
        }
        let mut partial: Vec<CVec> = vec![self.left.clone()];
        for t in &self.tensors {
            let mut next: Vec<CVec> = Vec::with_capacity(partial.len() * t.physical_dim());
            for v in &partial {
                for k in 0..t.physical_dim() {
                    let m = t.matrix(k);
                    let mut out = CVec::zeros(t.right_dim());
                    for c in 0..t.right_dim() {
                        let mut acc = ZERO;
                        for r in 0..t.left_dim() {
                            acc += v[r] * m[[r, c]];
                        }
                        out[c] = acc;
                    }
                    next.push(out);
                }
            }
            partial = next;
        }
        let amps = CVec::from_iter(partial.iter().map(|v| {
            v.iter()
                .zip(self.right.iter())
                .map(|(a, b)| a * b)
                .sum::<C64>()
        }));
        DenseState::new(amps, self.physical_dims())
            .map_err(|_| TensorError::SizeOverflow(total, tol::DENSIFY_CAP))
    }

    /// Normalized dense state.
    pub fn to_dense_normalized(&self) -> Result<DenseState, TensorError> {
        let mut st = self.to_dense()?;
        if st.norm() < 1e-300 {
            return Err(TensorError::NotNormalizable);
        }
        st.normalize();
        Ok(st)
    }

    /// Squared Schmidt coefficients across the bond after site `cut`
    /// (cut = 0 separates site 0 from the rest), descending.
    pub fn entanglement_spectrum(&self, cut: usize) -> Result<Vec<f64>, TensorError> {
        if cut + 1 >= self.n_sites() {
            return Err(TensorError::InvalidCut(cut));
        }
        let st = self.to_dense_normalized()?;
        entanglement_spectrum_dense(&st, cut)
    }

    /// Reduced density operator on a set of sites, contracted natively
    /// (never densifying the full chain).
    pub fn reduced_density(&self, sites: &[usize]) -> Result<DensityOperator, TensorError> {
        for &s in sites {
            if s >= self.n_sites() {
                return Err(TensorError::OutOfRange(s));
            }
        }
        let mut sorted: Vec<usize> = sites.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != sites.len() {
            return Err(TensorError::DimensionMismatch("duplicate sites".into()));
        }
        let d0 = self.tensors[0].left_dim();
        // env[(b, b'), open] marches left to right; open packs interleaved
        // (ket, bra) physical pairs of kept sites, leftmost slowest.
        let mut env = CMat::zeros((d0 * d0, 1));
        for b in 0..d0 {
            for bp in 0..d0 {
                env[[b * d0 + bp, 0]] = self.left[b] * self.left[bp].conj();
            }
        }
        let mut open_dim = 1usize;
        for (s, t) in self.tensors.iter().enumerate() {
            let dl = t.left_dim();
            let dr = t.right_dim();
            let d = t.physical_dim();
            let keep = sorted.binary_search(&s).is_ok();
            let new_open = if keep { open_dim * d * d } else { open_dim };
            let mut next = CMat::zeros((dr * dr, new_open));
            for k in 0..d {
                let ak = t.matrix(k);
                for kp in 0..d {
                    if !keep && k != kp {
                        continue;
                    }
                    let akp = t.matrix(kp);
                    for b in 0..dl {
                        for bp in 0..dl {
                            for o in 0..open_dim {
                                let e = env[[b * dl + bp, o]];
                                if e == ZERO {
                                    continue;
                                }
                                let target_o = if keep { (o * d + k) * d + kp } else { o };
                                for cc in 0..dr {
                                    let abc = ak[[b, cc]];
                                    if abc == ZERO {
                                        continue;
                                    }
                                    for cp in 0..dr {
                                        next[[cc * dr + cp, target_o]] +=
                                            e * abc * akp[[bp, cp]].conj();
                                    }
                                }
                            }
                        }
                    }
                }
            }
            env = next;
            open_dim = new_open;
        }
        let dn = self.tensors.last().unwrap().right_dim();
        let kept_dims: Vec<usize> = sorted
            .iter()
            .map(|&s| self.tensors[s].physical_dim())
            .collect();
        let kept_dim: usize = kept_dims.iter().product();
        let mut rho = CMat::zeros((kept_dim, kept_dim));
        for o in 0..open_dim {
            let mut rem = o;
            let mut ket = vec![0usize; kept_dims.len()];
            let mut bra = vec![0usize; kept_dims.len()];
            for idx in (0..kept_dims.len()).rev() {
                bra[idx] = rem % kept_dims[idx];
                rem /= kept_dims[idx];
                ket[idx] = rem % kept_dims[idx];
                rem /= kept_dims[idx];
            }
            let mut row = 0usize;
            let mut col = 0usize;
            for idx in 0..kept_dims.len() {
                row = row * kept_dims[idx] + ket[idx];
                col = col * kept_dims[idx] + bra[idx];
            }
            let mut acc = ZERO;
            for b in 0..dn {
                for bp in 0..dn {
                    acc += env[[b * dn + bp, o]] * self.right[b] * self.right[bp].conj();
                }
            }
            rho[[row, col]] = acc;
        }
        let tr = linalg::trace(&rho);
        if tr.norm() < 1e-300 {
            return Err(TensorError::NotNormalizable);
        }
        let rho = rho.mapv(|z| z / tr);
        DensityOperator::new(rho, kept_dims)
    }
}

/// Reduced density operator of the translation-invariant pFCS generated by a
/// canonical tensor, on the listed (strictly increasing) sites. Exact
/// fixed-point environments close the contraction on both sides.
pub fn pfcs_reduced_density(
    cf: &CanonicalForm,
    sites: &[usize],
) -> Result<DensityOperator, TensorError> {
    if sites.is_empty() {
        return Err(TensorError::DimensionMismatch("empty site set".into()));
    }
    for w in sites.windows(2) {
        if w[1] <= w[0] {
            return Err(TensorError::DimensionMismatch(
                "sites must be strictly increasing".into(),
            ));
        }
    }
    let a = &cf.tensor;
    let d = a.physical_dim();
    let bond = a.left_dim();
    let window = sites[sites.len() - 1] - sites[0] + 1;
    let kept_dim = d.pow(sites.len() as u32);
    if kept_dim * kept_dim > tol::DENSIFY_CAP {
        return Err(TensorError::SizeOverflow(
            kept_dim * kept_dim,
            tol::DENSIFY_CAP,
        ));
    }
    let chan = transfer_channel(a);
    // March from the right with unit right environment; kept sites open
    // (ket, bra) pairs. After the march the rightmost site's pair is the
    // slowest-varying part of the environment index.
    let mut envs: Vec<CMat> = vec![CMat::eye(bond)];
    for offset in (0..window).rev() {
        let site = sites[0] + offset;
        let keep = sites.binary_search(&site).is_ok();
        if keep {
            let mut next: Vec<CMat> = Vec::with_capacity(envs.len() * d * d);
            for env in &envs {
                for k in 0..d {
                    for kp in 0..d {
                        next.push(a.matrix(k).dot(env).dot(&linalg::dag(a.matrix(kp))));
                    }
                }
            }
            envs = next;
        } else {
            envs = envs.iter().map(|env| chan.apply(env)).collect();
        }
    }
    let n_kept = sites.len();
    let mut rho = CMat::zeros((kept_dim, kept_dim));
    for (idx, env) in envs.iter().enumerate() {
        // Unpack: fastest bits belong to the leftmost kept site.
        let mut rem = idx;
        let mut ket = vec![0usize; n_kept];
        let mut bra = vec![0usize; n_kept];
        for pos in 0..n_kept {
            bra[pos] = rem % d;
            rem /= d;
            ket[pos] = rem % d;
            rem /= d;
        }
        let mut row = 0usize;
        let mut col = 0usize;
        for pos in 0..n_kept {
            row = row * d + ket[pos];
            col = col * d + bra[pos];
        }
        rho[[row, col]] = linalg::trace(&cf.fixed_point.dot(env));
    }
    let tr = linalg::trace(&rho);
    let rho = rho.mapv(|z| z / tr);
    DensityOperator::new(rho, vec![d; n_kept])
}

/// Squared Schmidt coefficients of a dense state across a cut after factor
/// `cut` (factors 0..=cut vs the rest), descending.
pub fn entanglement_spectrum_dense(st: &DenseState, cut: usize) -> Result<Vec<f64>, TensorError> {
    if cut + 1 >= st.n_factors() {
        return Err(TensorError::InvalidCut(cut));
    }
    let left: usize = st.dims[..=cut].iter().product();
    let right: usize = st.dims[cut + 1..].iter().product();
    let m = CMat::from_shape_vec((left, right), st.amps.to_vec())
        .map_err(|e| TensorError::Serialization(e.to_string()))?;
    let s = linalg::singular_values(&m);
    let mut v: Vec<f64> = s.iter().map(|x| x * x).collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(v)
}

/// A density operator with a tensor-factor layout.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    pub mat: CMat,
    pub dims: Vec<usize>,
}

impl DensityOperator {
    pub fn new(mat: CMat, dims: Vec<usize>) -> Result<Self, TensorError> {
        let total: usize = dims.iter().product();
        if mat.nrows() != total || mat.ncols() != total {
            return Err(TensorError::DimensionMismatch(format!(
                "matrix {}x{} vs dims product {}",
                mat.nrows(),
                mat.ncols(),
                total
            )));
        }
        Ok(DensityOperator { mat, dims })
    }

    pub fn from_pure(v: &CVec, dims: Vec<usize>) -> Result<Self, TensorError> {
        let d = v.len();
        let mut m = CMat::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                m[[r, c]] = v[r] * v[c].conj();
            }
        }
        Self::new(m, dims)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Max of the Hermiticity, positivity and unit-trace residuals.
    pub fn validity_residual(&self) -> f64 {
        let herm = linalg::max_abs(&(&self.mat - &linalg::dag(&self.mat)));
        let sym = (&self.mat + &linalg::dag(&self.mat)).mapv(|z| z / 2.0);
        let (vals, _) = linalg::eigh_sorted(&sym);
        let neg = (-vals[0]).max(0.0);
        let tr = (linalg::trace(&self.mat) - ONE).norm();
        herm.max(neg).max(tr)
    }

    pub fn partial_trace(&self, trace_out: &[usize]) -> DensityOperator {
        let reduced = linalg::partial_trace(&self.mat, &self.dims, trace_out);
        let dims: Vec<usize> = (0..self.dims.len())
            .filter(|f| !trace_out.contains(f))
            .map(|f| self.dims[f])
            .collect();
        DensityOperator::new(reduced, dims).unwrap()
    }

    pub fn purity(&self) -> f64 {
        linalg::trace(&self.mat.dot(&self.mat)).re
    }

    pub fn tensor(&self, other: &DensityOperator) -> DensityOperator {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        DensityOperator::new(linalg::kron(&self.mat, &other.mat), dims).unwrap()
    }
}

/// Unhalved trace distance `||rho - sigma||_1` between density operators.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64, TensorError> {
    if rho.dim() != sigma.dim() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    Ok(trace_norm_hermitian(&(&rho.mat - &sigma.mat)))
}

/// Trace norm of a Hermitian matrix via its eigenvalues.
pub fn trace_norm_hermitian(m: &CMat) -> f64 {
    let sym = (m + &linalg::dag(m)).mapv(|z| z / 2.0);
    let (vals, _) = linalg::eigh_sorted(&sym);
    vals.iter().map(|v| v.abs()).sum()
}

/// Schatten 1-norm of an arbitrary matrix.
pub fn schatten1(m: &CMat) -> f64 {
    linalg::schatten1(m)
}

pub mod serialize {
    //! Tensor serialization: a self-describing binary layout (`MPST` magic,
    //! version, dims header, row-major complex doubles) and a text form.

    use super::{MpsTensor, TensorError};
    use crate::linalg::CMat;
    use num_complex::Complex64 as C64;

    const MAGIC: &[u8; 4] = b"MPST";
    const VERSION: u32 = 1;

    pub fn to_binary(t: &MpsTensor) -> Vec<u8> {
        let (d, dl, dr) = (t.physical_dim(), t.left_dim(), t.right_dim());
        let mut out = Vec::with_capacity(20 + d * dl * dr * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for dim in [d, dl, dr] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for k in 0..d {
            for r in 0..dl {
                for c in 0..dr {
                    let z = t.mats[k][[r, c]];
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<MpsTensor, TensorError> {
        let err = |m: &str| TensorError::Serialization(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(err("unsupported version"));
        }
        let read_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (d, dl, dr) = (read_u32(8), read_u32(12), read_u32(16));
        let need = 20 + d * dl * dr * 16;
        if bytes.len() != need {
            return Err(err("truncated payload"));
        }
        let mut mats = Vec::with_capacity(d);
        let mut off = 20;
        for _ in 0..d {
            let mut m = CMat::zeros((dl, dr));
            for r in 0..dl {
                for c in 0..dr {
                    let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                    let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
                    m[[r, c]] = C64::new(re, im);
                    off += 16;
                }
            }
            mats.push(m);
        }
        Ok(MpsTensor::new(mats))
    }

    pub fn to_text(t: &MpsTensor) -> String {
        let mut s = format!(
            "mps-tensor v{}\ndims {} {} {}\n",
            VERSION,
            t.physical_dim(),
            t.left_dim(),
            t.right_dim()
        );
        for k in 0..t.physical_dim() {
            for r in 0..t.left_dim() {
                for c in 0..t.right_dim() {
                    let z = t.mats[k][[r, c]];
                    s.push_str(&format!("{:.17e} {:.17e}\n", z.re, z.im));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<MpsTensor, TensorError> {
        let err = TensorError::Serialization;
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| err("empty".into()))?;
        if head.trim() != format!("mps-tensor v{VERSION}") {
            return Err(err(format!("bad header {head}")));
        }
        let dims_line = lines.next().ok_or_else(|| err("missing dims".into()))?;
        let nums: Vec<usize> = dims_line
            .trim()
            .strip_prefix("dims")
            .ok_or_else(|| err("missing dims keyword".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| err(format!("bad dim: {e}"))))
            .collect::<Result<_, _>>()?;
        if nums.len() != 3 {
            return Err(err("dims needs 3 entries".into()));
        }
        let (d, dl, dr) = (nums[0], nums[1], nums[2]);
        let mut entries = Vec::with_capacity(d * dl * dr);
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let re: f64 = it
                .next()
                .ok_or_else(|| err("short line".into()))?
                .parse()
                .map_err(|e| err(format!("bad float: {e}")))?;
            let im: f64 = it
                .next()
                .ok_or_else(|| err("short line".into()))?
                .parse()
                .map_err(|e| err(format!("bad float: {e}")))?;
            entries.push(C64::new(re, im));
        }
        if entries.len() != d * dl * dr {
            return Err(err("entry count mismatch".into()));
        }
        let mut mats = Vec::with_capacity(d);
        for k in 0..d {
            let mut m = CMat::zeros((dl, dr));
            for r in 0..dl {
                for c in 0..dr {
                    m[[r, c]] = entries[(k * dl + r) * dr + c];
                }
            }
            mats.push(m);
        }
        Ok(MpsTensor::new(mats))
    }
}
