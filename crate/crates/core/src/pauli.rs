//! Symbolic Pauli strings over a fixed qubit register.
//!
//! Used for building stabilizer Hamiltonians, conjugating them through
//! controlled-Z layers, and as the fast path in sparse matrix-vector products.

use crate::linalg::{self, CMat, CVec};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn dense(self) -> CMat {
        use crate::linalg::{ONE, ZERO};
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => ndarray::array![[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => ndarray::array![[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => ndarray::array![[ZERO, -i], [i, ZERO]],
            Pauli::Z => ndarray::array![[ONE, ZERO], [ZERO, -ONE]],
        }
    }

    fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    fn has_z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }

    /// Single-qubit product `a * b = phase * c`.
    fn mul(a: Pauli, b: Pauli) -> (C64, Pauli) {
        use Pauli::*;
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match (a, b) {
            (I, p) | (p, I) => (one, p),
            (X, X) | (Y, Y) | (Z, Z) => (one, I),
            (X, Y) => (i, Z),
            (Y, X) => (-i, Z),
            (Y, Z) => (i, X),
            (Z, Y) => (-i, X),
            (Z, X) => (i, Y),
            (X, Z) => (-i, Y),
        }
    }
}

/// A phase times a tensor product of Paulis on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    pub phase: C64,
    pub ops: Vec<Pauli>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            phase: C64::new(1.0, 0.0),
            ops: vec![Pauli::I; n],
        }
    }

    pub fn single(n: usize, qubit: usize, p: Pauli) -> Self {
        let mut s = Self::identity(n);
        s.ops[qubit] = p;
        s
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, Pauli)]) -> Self {
        let mut s = Self::identity(n);
        for &(q, p) in pairs {
            assert!(s.ops[q] == Pauli::I, "duplicate qubit {q} in Pauli string");
            s.ops[q] = p;
        }
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.ops.len()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.ops.len())
            .filter(|&q| self.ops[q] != Pauli::I)
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.ops.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn is_identity_op(&self) -> bool {
        self.ops.iter().all(|&p| p == Pauli::I)
    }

    /// `self * other` with full phase bookkeeping.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        assert_eq!(self.ops.len(), other.ops.len());
        let mut phase = self.phase * other.phase;
        let mut ops = Vec::with_capacity(self.ops.len());
        for (&a, &b) in self.ops.iter().zip(&other.ops) {
            let (ph, p) = Pauli::mul(a, b);
            phase *= ph;
            ops.push(p);
        }
        PauliString { phase, ops }
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let mut anti = 0usize;
        for (&a, &b) in self.ops.iter().zip(&other.ops) {
            if a != Pauli::I && b != Pauli::I && a != b {
                anti += 1;
            }
        }
        anti % 2 == 0
    }

    pub fn hermitian_conjugate(&self) -> PauliString {
        PauliString {
            phase: self.phase.conj(),
            ops: self.ops.clone(),
        }
    }

    /// Conjugation by the controlled-Z gate on `(a, b)`:
    /// `CZ P CZ`. X and Y on one endpoint pick up Z on the other.
    ///
    /// The string is treated as the ordered product of its single-qubit
    /// factors; each factor conjugates independently and the results multiply
    /// back in qubit order, which fixes the sign when both endpoints carry
    /// X-type operators (e.g. `CZ (X⊗X) CZ = Y⊗Y`).
    pub fn conjugate_by_cz(&self, a: usize, b: usize) -> PauliString {
        let n = self.ops.len();
        let mut out = PauliString::identity(n);
        out.phase = self.phase;
        for q in 0..n {
            if self.ops[q] == Pauli::I {
                continue;
            }
            let mut factor = PauliString::single(n, q, self.ops[q]);
            if q == a && self.ops[q].has_x() {
                factor = factor.mul(&PauliString::single(n, b, Pauli::Z));
            }
            if q == b && self.ops[q].has_x() {
                factor = factor.mul(&PauliString::single(n, a, Pauli::Z));
            }
            out = out.mul(&factor);
        }
        out
    }

    /// Dense matrix on the full register (use only for small `n`).
    pub fn dense_full(&self) -> CMat {
        let mut m = CMat::eye(1);
        for &p in &self.ops {
            m = linalg::kron(&m, &p.dense());
        }
        m.mapv(|z| z * self.phase)
    }

    /// Dense matrix restricted to `support` qubits (ascending order).
    /// Qubits outside `support` must act as identity.
    pub fn dense_on(&self, support: &[usize]) -> CMat {
        let mut m = CMat::eye(1);
        for &q in support {
            m = linalg::kron(&m, &self.ops[q].dense());
        }
        for (q, &p) in self.ops.iter().enumerate() {
            if p != Pauli::I && !support.contains(&q) {
                panic!("Pauli string acts outside the requested support");
            }
        }
        m.mapv(|z| z * self.phase)
    }

    /// `out += coeff * P |x>` on a 2^n state vector (qubit 0 slowest).
    pub fn apply_accumulate(&self, coeff: C64, x: &CVec, out: &mut CVec) {
        let n = self.ops.len();
        let dim = 1usize << n;
        debug_assert_eq!(x.len(), dim);
        let mut xmask = 0usize;
        let mut zymask = 0usize;
        let mut n_y = 0u32;
        for (q, &p) in self.ops.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            if p.has_x() {
                xmask |= bit;
            }
            if p.has_z() {
                zymask |= bit;
            }
            if p == Pauli::Y {
                n_y += 1;
            }
        }
        let i_pow = match n_y % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        let base = coeff * self.phase * i_pow;
        for idx in 0..dim {
            let sign = if (idx & zymask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            out[idx ^ xmask] += base * sign * x[idx];
        }
    }
}
