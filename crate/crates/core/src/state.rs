//! Dense state vectors over an ordered list of tensor factors.
//!
//! Factors can be single qubits, two-qubit sites, terminating particles or
//! ancillas; the amplitude layout is row-major with the first factor slowest.

use crate::linalg::{self, CMat, CVec, ZERO};
use crate::tol;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("dense dimension {0} exceeds the densify cap {1}")]
    SizeOverflow(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone)]
pub struct DenseState {
    pub amps: CVec,
    pub dims: Vec<usize>,
}

impl DenseState {
    pub fn new(amps: CVec, dims: Vec<usize>) -> Result<Self, StateError> {
        let total: usize = dims.iter().product();
        if total > tol::DENSIFY_CAP {
            return Err(StateError::SizeOverflow(total, tol::DENSIFY_CAP));
        }
        if amps.len() != total {
            return Err(StateError::DimensionMismatch(format!(
                "amplitude count {} vs factor product {}",
                amps.len(),
                total
            )));
        }
        Ok(DenseState { amps, dims })
    }

    /// Product state from per-factor kets.
    pub fn product(factors: &[CVec]) -> Self {
        let mut amps = CVec::from_elem(1, C64::new(1.0, 0.0));
        for f in factors {
            amps = linalg::kron_vec(&amps, f);
        }
        let dims = factors.iter().map(|f| f.len()).collect();
        DenseState { amps, dims }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_factors(&self) -> usize {
        self.dims.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amps.mapv_inplace(|z| z / n);
        }
    }

    pub fn inner(&self, other: &DenseState) -> C64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Regroup the factor structure without touching amplitudes.
    /// The products must agree.
    pub fn regrouped(&self, dims: Vec<usize>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            self.dim(),
            "regroup must preserve the total dimension"
        );
        DenseState {
            amps: self.amps.clone(),
            dims,
        }
    }

    fn stride(&self, factor: usize) -> usize {
        self.dims[factor + 1..].iter().product()
    }

    /// Apply a dense operator to a set of (not necessarily adjacent) factors.
    ///
    /// `factors` lists the factor indices in the order matching the operator's
    /// tensor structure (first listed factor is the operator's slowest index).
    pub fn apply_op(&mut self, op: &CMat, factors: &[usize]) {
        let d_op: usize = factors.iter().map(|&f| self.dims[f]).product();
        assert_eq!(op.nrows(), d_op, "operator does not match factor dims");
        assert_eq!(op.ncols(), d_op);
        let strides: Vec<usize> = factors.iter().map(|&f| self.stride(f)).collect();
        let f_dims: Vec<usize> = factors.iter().map(|&f| self.dims[f]).collect();
        // Offsets of every operator basis index within the global vector.
        let mut offsets = vec![0usize; d_op];
        let mut mi = vec![0usize; factors.len()];
        for (k, off) in offsets.iter_mut().enumerate() {
            linalg::multi_index(k, &f_dims, &mut mi);
            *off = mi.iter().zip(&strides).map(|(&v, &s)| v * s).sum();
        }
        // Enumerate the "rest" of the indices: all global indices with the
        // operator factors set to zero.
        let dim = self.dim();
        let mut visited = vec![false; dim];
        let mut gathered = vec![ZERO; d_op];
        for base in 0..dim {
            if visited[base] {
                continue;
            }
            // Check the operator factors are all zero at `base`.
            let mut on_zero = true;
            for (&f, &s) in factors.iter().zip(&strides) {
                let v = (base / s) % self.dims[f];
                if v != 0 {
                    on_zero = false;
                    break;
                }
            }
            if !on_zero {
                continue;
            }
            for (k, &off) in offsets.iter().enumerate() {
                gathered[k] = self.amps[base + off];
                visited[base + off] = true;
            }
            for (r, &off) in offsets.iter().enumerate() {
                let mut acc = ZERO;
                for (k, &g) in gathered.iter().enumerate() {
                    let o = op[[r, k]];
                    if o != ZERO {
                        acc += o * g;
                    }
                }
                self.amps[base + off] = acc;
            }
        }
    }

    /// Contract one factor with `<outcome|`, returning the (unnormalized)
    /// remaining state. The squared norm of the result is the Born weight.
    pub fn project_factor(&self, factor: usize, outcome: &CVec) -> DenseState {
        let d = self.dims[factor];
        assert_eq!(outcome.len(), d);
        let stride = self.stride(factor);
        let outer: usize = self.dims[..factor].iter().product();
        let rest_dim = self.dim() / d;
        let mut amps = CVec::zeros(rest_dim);
        let inner = stride;
        for o in 0..outer {
            for v in 0..d {
                let coeff = outcome[v].conj();
                if coeff == ZERO {
                    continue;
                }
                let src = o * d * inner + v * inner;
                let dst = o * inner;
                for k in 0..inner {
                    amps[dst + k] += coeff * self.amps[src + k];
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.remove(factor);
        DenseState { amps, dims }
    }

    /// Reduced density operator on the listed factors (in their given order).
    pub fn reduced_density(&self, keep: &[usize]) -> CMat {
        let keep_dim: usize = keep.iter().map(|&f| self.dims[f]).product();
        let keep_dims: Vec<usize> = keep.iter().map(|&f| self.dims[f]).collect();
        let strides: Vec<usize> = keep.iter().map(|&f| self.stride(f)).collect();
        let mut offsets = vec![0usize; keep_dim];
        let mut mi = vec![0usize; keep.len()];
        for (k, off) in offsets.iter_mut().enumerate() {
            linalg::multi_index(k, &keep_dims, &mut mi);
            *off = mi.iter().zip(&strides).map(|(&v, &s)| v * s).sum();
        }
        let dim = self.dim();
        let mut rho = CMat::zeros((keep_dim, keep_dim));
        let mut gathered = vec![ZERO; keep_dim];
        let mut visited = vec![false; dim];
        for base in 0..dim {
            if visited[base] {
                continue;
            }
            let mut on_zero = true;
            for (&f, &s) in keep.iter().zip(&strides) {
                let v = (base / s) % self.dims[f];
                if v != 0 {
                    on_zero = false;
                    break;
                }
            }
            if !on_zero {
                continue;
            }
            for (k, &off) in offsets.iter().enumerate() {
                gathered[k] = self.amps[base + off];
                visited[base + off] = true;
            }
            for r in 0..keep_dim {
                for c in 0..keep_dim {
                    rho[[r, c]] += gathered[r] * gathered[c].conj();
                }
            }
        }
        rho
    }

    /// Full density matrix (small states only).
    pub fn density(&self) -> CMat {
        let d = self.dim();
        let mut rho = CMat::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                rho[[r, c]] = self.amps[r] * self.amps[c].conj();
            }
        }
        rho
    }
}
