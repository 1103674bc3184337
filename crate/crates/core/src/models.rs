//! Model builders: 1-D cluster chains (open, capped, terminated), the
//! quasi-1D stacked-chain model, 2-D cluster lattices with chain layouts,
//! the controlled-Z duality between them, and perturbation families.

use crate::linalg::{self, CMat};
use crate::pauli::{Pauli, PauliString};
use crate::symmetry::{FiniteAbelianGroup, GroupElement};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model too small: {0}")]
    TooSmall(String),
    #[error("dense dimension {0} exceeds the cap {1}")]
    SizeOverflow(usize, usize),
    #[error("bad layout: {0}")]
    BadLayout(String),
    #[error("chains are not adjacent")]
    NotAdjacent,
    #[error("term is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
}

/// One local interaction term: a set of weighted Pauli strings sharing a
/// support, with the dense Hermitian matrix on that support.
#[derive(Debug, Clone)]
pub struct Term {
    pub support: Vec<usize>,
    pub matrix: CMat,
    /// Pauli decomposition used for fast matrix-vector products; the
    /// coefficient multiplies the string (whose own phase is ±1 or ±i).
    pub strings: Vec<(C64, PauliString)>,
}

impl Term {
    /// A single Pauli string with a real coefficient.
    pub fn from_pauli(coeff: f64, string: PauliString) -> Result<Self, ModelError> {
        Self::from_strings(vec![(C64::new(coeff, 0.0), string)])
    }

    pub fn from_strings(strings: Vec<(C64, PauliString)>) -> Result<Self, ModelError> {
        assert!(!strings.is_empty());
        let mut support: Vec<usize> = strings.iter().flat_map(|(_, s)| s.support()).collect();
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            // Identity term; keep a one-qubit support for bookkeeping.
            support.push(0);
        }
        let dim = 1usize << support.len();
        let mut matrix = CMat::zeros((dim, dim));
        for (c, s) in &strings {
            matrix = matrix + s.dense_on(&support).mapv(|z| z * c);
        }
        let herm = linalg::max_abs(&(&matrix - &linalg::dag(&matrix)));
        if herm > 1e-10 {
            return Err(ModelError::NotHermitian(herm));
        }
        Ok(Term {
            support,
            matrix,
            strings,
        })
    }

    /// Decompose a dense Hermitian matrix on `support` into Pauli strings.
    pub fn from_dense(
        n_qubits: usize,
        support: Vec<usize>,
        matrix: CMat,
    ) -> Result<Self, ModelError> {
        let herm = linalg::max_abs(&(&matrix - &linalg::dag(&matrix)));
        if herm > 1e-10 {
            return Err(ModelError::NotHermitian(herm));
        }
        let k = support.len();
        let dim = 1usize << k;
        assert_eq!(matrix.nrows(), dim);
        let mut strings = Vec::new();
        let paulis = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
        for combo in 0..(4usize.pow(k as u32)) {
            let mut rem = combo;
            let mut pairs = Vec::new();
            for &q in support.iter().rev() {
                let p = paulis[rem % 4];
                rem /= 4;
                if p != Pauli::I {
                    pairs.push((q, p));
                }
            }
            let s = PauliString::from_pairs(n_qubits, &pairs);
            let dense = s.dense_on(&support);
            let coeff = linalg::trace(&linalg::dag(&dense).dot(&matrix)) / dim as f64;
            if coeff.norm() > 1e-13 {
                strings.push((coeff, s));
            }
        }
        Ok(Term {
            support,
            matrix,
            strings,
        })
    }

    pub fn spectral_norm(&self) -> f64 {
        linalg::spectral_norm(&self.matrix)
    }

    pub fn scaled(&self, s: f64) -> Term {
        Term {
            support: self.support.clone(),
            matrix: self.matrix.mapv(|z| z * s),
            strings: self
                .strings
                .iter()
                .map(|(c, p)| (c * s, p.clone()))
                .collect(),
        }
    }
}

/// A sum of local terms on a labeled qubit register.
#[derive(Debug, Clone)]
pub struct LocalHamiltonian {
    pub n_qubits: usize,
    pub terms: Vec<Term>,
}

impl LocalHamiltonian {
    pub fn new(n_qubits: usize, terms: Vec<Term>) -> Self {
        for t in &terms {
            assert!(t.support.iter().all(|&q| q < n_qubits));
        }
        LocalHamiltonian { n_qubits, terms }
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_qubits
    }

    /// Local strength `J = max_u ||V_u||`.
    pub fn local_strength(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.spectral_norm())
            .fold(0.0, f64::max)
    }

    /// Interaction range measured as the largest index span of a support.
    pub fn range(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.support[t.support.len() - 1] - t.support[0])
            .max()
            .unwrap_or(0)
    }

    /// Upper bound on the spectral norm (sum of term norms).
    pub fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.spectral_norm()).sum()
    }

    /// `y += H x` on a `2^n` vector via the Pauli decomposition.
    pub fn matvec_accumulate(&self, x: &ndarray::Array1<C64>, y: &mut ndarray::Array1<C64>) {
        for t in &self.terms {
            for (c, s) in &t.strings {
                s.apply_accumulate(*c, x, y);
            }
        }
    }

    pub fn matvec(&self, x: &ndarray::Array1<C64>) -> ndarray::Array1<C64> {
        let mut y = ndarray::Array1::zeros(x.len());
        self.matvec_accumulate(x, &mut y);
        y
    }

    /// Dense matrix (small registers only).
    pub fn to_dense(&self) -> Result<CMat, ModelError> {
        let dim = self.dim();
        if dim > 1 << 12 {
            return Err(ModelError::SizeOverflow(dim, 1 << 12));
        }
        let mut h = CMat::zeros((dim, dim));
        for t in &self.terms {
            for (c, s) in &t.strings {
                h = h + s.dense_full().mapv(|z| z * c);
            }
        }
        Ok(h)
    }

    /// Sum with another Hamiltonian on the same register.
    pub fn plus(&self, other: &LocalHamiltonian) -> LocalHamiltonian {
        assert_eq!(self.n_qubits, other.n_qubits);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        LocalHamiltonian::new(self.n_qubits, terms)
    }

    pub fn scaled(&self, s: f64) -> LocalHamiltonian {
        LocalHamiltonian::new(
            self.n_qubits,
            self.terms.iter().map(|t| t.scaled(s)).collect(),
        )
    }

    /// Term dump: CSV rows `support,pauli-string,coefficient`.
    pub fn term_dump_csv(&self) -> String {
        let mut out = String::from("support,pauli,coeff_re,coeff_im\n");
        for t in &self.terms {
            for (c, s) in &t.strings {
                let label: String = s
                    .ops
                    .iter()
                    .map(|p| match p {
                        Pauli::I => 'I',
                        Pauli::X => 'X',
                        Pauli::Y => 'Y',
                        Pauli::Z => 'Z',
                    })
                    .collect();
                let coeff = c * s.phase;
                out.push_str(&format!(
                    "{},{},{:.12e},{:.12e}\n",
                    t.support
                        .iter()
                        .map(|q| q.to_string())
                        .collect::<Vec<_>>()
                        .join(" "),
                    label,
                    coeff.re,
                    coeff.im
                ));
            }
        }
        out
    }
}

/// Global symmetry action: one Pauli string per group element.
#[derive(Debug, Clone)]
pub struct SymmetryAction {
    pub group: FiniteAbelianGroup,
    pub strings: Vec<PauliString>,
}

impl SymmetryAction {
    /// Build multiplicatively from generator strings (one per group factor).
    pub fn from_generators(group: FiniteAbelianGroup, generators: Vec<PauliString>) -> Self {
        assert_eq!(generators.len(), group.orders.len());
        let n = generators[0].n_qubits();
        let strings = group
            .elements()
            .map(|e| {
                let exps = group.exponents(e);
                let mut s = PauliString::identity(n);
                for (k, &p) in exps.iter().enumerate() {
                    for _ in 0..p {
                        s = s.mul(&generators[k]);
                    }
                }
                s
            })
            .collect();
        SymmetryAction { group, strings }
    }

    pub fn string(&self, g: GroupElement) -> &PauliString {
        &self.strings[g]
    }

    pub fn n_qubits(&self) -> usize {
        self.strings[0].n_qubits()
    }

    /// Conjugate every element through a layer of controlled-Z gates.
    pub fn conjugated_by_cz_layer(&self, edges: &[(usize, usize)]) -> SymmetryAction {
        let strings = self
            .strings
            .iter()
            .map(|s| {
                let mut out = s.clone();
                for &(a, b) in edges {
                    out = out.conjugate_by_cz(a, b);
                }
                out
            })
            .collect();
        SymmetryAction {
            group: self.group.clone(),
            strings,
        }
    }
}

/// Max over group elements and terms of the commutator norm
/// `||[term, U(g)|_support]||`; zero (within tolerance) means symmetric.
pub fn check_symmetry(h: &LocalHamiltonian, sym: &SymmetryAction) -> f64 {
    let mut worst: f64 = 0.0;
    for g in sym.group.elements() {
        let u = sym.string(g);
        for t in &h.terms {
            // U restricted to the support; the unitary factor elsewhere only
            // contributes a global phase to the commutator norm.
            let mut pairs = Vec::new();
            for &q in &t.support {
                if u.ops[q] != Pauli::I {
                    pairs.push((q, u.ops[q]));
                }
            }
            let mut restricted = PauliString::from_pairs(u.n_qubits(), &pairs);
            restricted.phase = u.phase;
            let ud = restricted.dense_on(&t.support);
            let comm = &t.matrix.dot(&ud) - &ud.dot(&t.matrix);
            worst = worst.max(linalg::spectral_norm(&comm));
        }
    }
    worst
}

/// Group-average `(1/|G|) sum_g U(g) V U(g)^dag`, term by term. Terms whose
/// average vanishes are dropped.
pub fn symmetrize_perturbation(v: &LocalHamiltonian, sym: &SymmetryAction) -> LocalHamiltonian {
    let size = sym.group.order() as f64;
    let mut terms = Vec::new();
    for t in &v.terms {
        let mut strings: Vec<(C64, PauliString)> = Vec::new();
        for (c, s) in &t.strings {
            for g in sym.group.elements() {
                let u = sym.string(g);
                // U P U^dag for Pauli strings: P times the commutation sign.
                let sign = if u.commutes_with(s) { 1.0 } else { -1.0 };
                strings.push((c * sign / size, s.clone()));
            }
        }
        // Merge identical strings.
        let mut merged: Vec<(C64, PauliString)> = Vec::new();
        'outer: for (c, s) in strings {
            for (mc, ms) in merged.iter_mut() {
                if ms.ops == s.ops && (ms.phase - s.phase).norm() < 1e-15 {
                    *mc += c;
                    continue 'outer;
                }
            }
            merged.push((c, s));
        }
        merged.retain(|(c, _)| c.norm() > 1e-13);
        if !merged.is_empty() {
            terms.push(Term::from_strings(merged).expect("average stays Hermitian"));
        }
    }
    LocalHamiltonian::new(v.n_qubits, terms)
}

/// Uniform transverse field `B sum_q X_q` over the listed qubits.
pub fn transverse_field_perturbation(
    n_qubits: usize,
    qubits: &[usize],
    b: f64,
) -> LocalHamiltonian {
    let terms = if b == 0.0 {
        Vec::new()
    } else {
        qubits
            .iter()
            .map(|&q| Term::from_pauli(b, PauliString::single(n_qubits, q, Pauli::X)).unwrap())
            .collect()
    };
    LocalHamiltonian::new(n_qubits, terms)
}

/// `B sum Z_q Z_q'` over consecutive pairs of the listed qubits (intended
/// for one sublattice, where it respects the chain symmetry).
pub fn zz_sublattice_perturbation(n_qubits: usize, qubits: &[usize], b: f64) -> LocalHamiltonian {
    let mut terms = Vec::new();
    if b != 0.0 {
        for w in qubits.windows(2) {
            let s = PauliString::from_pairs(n_qubits, &[(w[0], Pauli::Z), (w[1], Pauli::Z)]);
            terms.push(Term::from_pauli(b, s).unwrap());
        }
    }
    LocalHamiltonian::new(n_qubits, terms)
}

/// Random two-qubit range-r perturbation, group-averaged so it respects the
/// given symmetry; deterministic in the seed.
pub fn random_symmetrized_perturbation(
    n_qubits: usize,
    qubits: &[usize],
    range: usize,
    strength: f64,
    sym: &SymmetryAction,
    seed: u64,
) -> LocalHamiltonian {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let paulis = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut terms = Vec::new();
    for (i, &q) in qubits.iter().enumerate() {
        for &q2 in qubits.iter().skip(i + 1) {
            if q2 - q > range {
                continue;
            }
            let p1 = paulis[rng.gen_range(0..3)];
            let p2 = paulis[rng.gen_range(0..3)];
            let c: f64 = strength * (2.0 * rng.gen::<f64>() - 1.0);
            let s = PauliString::from_pairs(n_qubits, &[(q, p1), (q2, p2)]);
            terms.push(Term::from_pauli(c, s).unwrap());
        }
    }
    let raw = LocalHamiltonian::new(n_qubits, terms);
    symmetrize_perturbation(&raw, sym)
}

/// Boundary handling for cluster chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Interior stabilizers only; four-fold degenerate ground space.
    Open,
    /// End stabilizers on the chain qubits pin the edges (the plain cluster
    /// state); unique ground state without extra particles.
    Capped,
    /// Terminating particles at both ends carrying the projective action;
    /// unique gapped ground state with the on-site symmetry extended by
    /// `V*(g)` / `V(g)`.
    Terminated,
}

/// Index bookkeeping for a single cluster chain register.
#[derive(Debug, Clone)]
pub struct ChainLayout {
    pub n_sites: usize,
    pub boundary: Boundary,
    /// Total qubit count including terminating particles.
    pub n_qubits: usize,
    /// Index of the left terminating particle, if any.
    pub left_terminator: Option<usize>,
    pub right_terminator: Option<usize>,
    /// Chain qubit indices in order.
    pub chain_qubits: Vec<usize>,
}

impl ChainLayout {
    pub fn new(n_sites: usize, boundary: Boundary) -> Self {
        let m = 2 * n_sites;
        match boundary {
            Boundary::Terminated => ChainLayout {
                n_sites,
                boundary,
                n_qubits: m + 2,
                left_terminator: Some(0),
                right_terminator: Some(m + 1),
                chain_qubits: (1..=m).collect(),
            },
            _ => ChainLayout {
                n_sites,
                boundary,
                n_qubits: m,
                left_terminator: None,
                right_terminator: None,
                chain_qubits: (0..m).collect(),
            },
        }
    }

    /// The two qubits of site `s`.
    pub fn site_qubits(&self, s: usize) -> (usize, usize) {
        (self.chain_qubits[2 * s], self.chain_qubits[2 * s + 1])
    }

    /// Tensor-factor dims for dense simulation: terminators are their own
    /// factors, each site is one dim-4 factor.
    pub fn factor_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        if self.left_terminator.is_some() {
            dims.push(2);
        }
        dims.extend(std::iter::repeat(4).take(self.n_sites));
        if self.right_terminator.is_some() {
            dims.push(2);
        }
        dims
    }

    /// Dense factor index of site `s` (accounting for a left terminator).
    pub fn site_factor(&self, s: usize) -> usize {
        s + usize::from(self.left_terminator.is_some())
    }

    pub fn left_terminator_factor(&self) -> Option<usize> {
        self.left_terminator.map(|_| 0)
    }

    pub fn right_terminator_factor(&self) -> Option<usize> {
        self.right_terminator
            .map(|_| self.n_sites + usize::from(self.left_terminator.is_some()))
    }
}

/// Build the 1-D cluster Hamiltonian with the requested boundary and its
/// Z2 x Z2 symmetry action.
///
/// Bulk terms are `-Z X Z`; the terminated variant adds boundary stabilizers
/// coupling the edge qubits to one two-dimensional particle per end, with
/// signs fixed so the exact ground state satisfies `U(g)|psi> = +|psi>`.
pub fn cluster_chain_hamiltonian(
    n_sites: usize,
    boundary: Boundary,
) -> Result<(LocalHamiltonian, SymmetryAction, ChainLayout), ModelError> {
    if n_sites < 2 {
        return Err(ModelError::TooSmall(format!(
            "need at least 2 sites, got {n_sites}"
        )));
    }
    let layout = ChainLayout::new(n_sites, boundary);
    let (h, sym) = chain_terms(
        layout.n_qubits,
        &layout.chain_qubits,
        layout.left_terminator,
        layout.right_terminator,
        boundary,
    );
    Ok((h, sym, layout))
}

/// Shared chain-term construction for the 1-D and quasi-1D builders.
fn chain_terms(
    n: usize,
    q: &[usize],
    left_term: Option<usize>,
    right_term: Option<usize>,
    boundary: Boundary,
) -> (LocalHamiltonian, SymmetryAction) {
    let m = q.len();
    let mut stabilizers: Vec<PauliString> = Vec::new();
    for j in 1..m - 1 {
        stabilizers.push(PauliString::from_pairs(
            n,
            &[(q[j - 1], Pauli::Z), (q[j], Pauli::X), (q[j + 1], Pauli::Z)],
        ));
    }
    // The x generator acts on the second qubit of each site (odd chain
    // positions), matching the on-site pairing of the eigenbasis byproducts.
    let (gen_x, gen_z);
    match boundary {
        Boundary::Open => {
            gen_x = PauliString::from_pairs(
                n,
                &(1..m).step_by(2).map(|j| (q[j], Pauli::X)).collect::<Vec<_>>(),
            );
            gen_z = PauliString::from_pairs(
                n,
                &(0..m).step_by(2).map(|j| (q[j], Pauli::X)).collect::<Vec<_>>(),
            );
        }
        Boundary::Capped => {
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(q[0], Pauli::X), (q[1], Pauli::Z)],
            ));
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(q[m - 2], Pauli::Z), (q[m - 1], Pauli::X)],
            ));
            // The on-site strings fractionalize at the pinned edges: the
            // symmetries of the capped chain carry a boundary Z tail.
            let mut px: Vec<(usize, Pauli)> = vec![(q[0], Pauli::Z)];
            px.extend((1..m).step_by(2).map(|j| (q[j], Pauli::X)));
            gen_x = PauliString::from_pairs(n, &px);
            let mut pz: Vec<(usize, Pauli)> =
                (0..m).step_by(2).map(|j| (q[j], Pauli::X)).collect();
            pz.push((q[m - 1], Pauli::Z));
            gen_z = PauliString::from_pairs(n, &pz);
        }
        Boundary::Terminated => {
            let tl = left_term.unwrap();
            let tr = right_term.unwrap();
            // Left edge continues the bulk pattern with the terminator as a
            // virtual chain position; the right edge mirrors it through the
            // V (rather than V*) action.
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(tl, Pauli::Z), (q[0], Pauli::X), (q[1], Pauli::Z)],
            ));
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(tl, Pauli::X), (q[0], Pauli::Z)],
            ));
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(q[m - 2], Pauli::Z), (q[m - 1], Pauli::X), (tr, Pauli::X)],
            ));
            stabilizers.push(PauliString::from_pairs(
                n,
                &[(q[m - 1], Pauli::Z), (tr, Pauli::Z)],
            ));
            let mut px: Vec<(usize, Pauli)> = vec![(tl, Pauli::X)];
            px.extend((1..m).step_by(2).map(|j| (q[j], Pauli::X)));
            px.push((tr, Pauli::X));
            gen_x = PauliString::from_pairs(n, &px);
            let mut pz: Vec<(usize, Pauli)> = vec![(tl, Pauli::Z)];
            pz.extend((0..m).step_by(2).map(|j| (q[j], Pauli::X)));
            pz.push((tr, Pauli::Z));
            gen_z = PauliString::from_pairs(n, &pz);
        }
    }
    let sym =
        SymmetryAction::from_generators(FiniteAbelianGroup::z2z2(), vec![gen_x, gen_z]);
    // Choose boundary-stabilizer signs so the symmetry eigenvalue table of
    // the exact ground state is +1: each generator must be a +1 product of
    // the signed stabilizers.
    let mut signs = vec![1.0f64; stabilizers.len()];
    if boundary == Boundary::Terminated {
        use crate::symmetry::z2z2_elems;
        for (gen_elem, flip_term) in [
            (z2z2_elems::X, stabilizers.len() - 3),
            (z2z2_elems::Z, stabilizers.len() - 1),
        ] {
            let target = sym.string(gen_elem);
            if let Some(phase) = stabilizer_product_phase(&stabilizers, target) {
                if phase < 0.0 {
                    signs[flip_term] = -1.0;
                }
            }
        }
    }
    let terms = stabilizers
        .into_iter()
        .zip(signs)
        .map(|(s, sg)| Term::from_pauli(-sg, s).unwrap())
        .collect();
    (LocalHamiltonian::new(n, terms), sym)
}

/// If `target` equals (up to sign) a product of the given commuting
/// stabilizers, return that sign: Gaussian elimination over GF(2) on the
/// symplectic incidence, with the phase recovered from an explicit product.
fn stabilizer_product_phase(stabilizers: &[PauliString], target: &PauliString) -> Option<f64> {
    let n = target.n_qubits();
    let to_bits = |s: &PauliString| -> Vec<u8> {
        let mut v = vec![0u8; 2 * n];
        for (q, &p) in s.ops.iter().enumerate() {
            match p {
                Pauli::X => v[q] = 1,
                Pauli::Z => v[n + q] = 1,
                Pauli::Y => {
                    v[q] = 1;
                    v[n + q] = 1;
                }
                Pauli::I => {}
            }
        }
        v
    };
    let mut rows: Vec<(Vec<u8>, Vec<usize>)> = stabilizers
        .iter()
        .enumerate()
        .map(|(i, s)| (to_bits(s), vec![i]))
        .collect();
    let mut want = to_bits(target);
    let mut members: Vec<usize> = Vec::new();
    let mut used = vec![false; rows.len()];
    for col in 0..2 * n {
        let pivot = (0..rows.len()).find(|&r| !used[r] && rows[r].0[col] == 1);
        let Some(p) = pivot else { continue };
        used[p] = true;
        let (pivot_bits, pivot_members) = rows[p].clone();
        for r in 0..rows.len() {
            if r != p && rows[r].0[col] == 1 {
                for b in 0..2 * n {
                    rows[r].0[b] ^= pivot_bits[b];
                }
                rows[r].1.extend(pivot_members.iter().cloned());
            }
        }
        if want[col] == 1 {
            for b in 0..2 * n {
                want[b] ^= pivot_bits[b];
            }
            members.extend(pivot_members.iter().cloned());
        }
    }
    if want.iter().any(|&b| b == 1) {
        return None;
    }
    let mut counts = std::collections::BTreeMap::new();
    for m in members {
        *counts.entry(m).or_insert(0usize) += 1;
    }
    let mut prod = PauliString::identity(n);
    for (m, c) in counts {
        if c % 2 == 1 {
            prod = prod.mul(&stabilizers[m]);
        }
    }
    let ratio = prod.phase / target.phase;
    if (ratio - C64::new(1.0, 0.0)).norm() < 1e-12 {
        Some(1.0)
    } else if (ratio + C64::new(1.0, 0.0)).norm() < 1e-12 {
        Some(-1.0)
    } else {
        None
    }
}

/// Index bookkeeping for the quasi-1D model: chains on even grid rows,
/// uncoupled (redundant) qubits on odd rows, columns grouped in pairs into
/// columnar sites spanning the vertical direction.
#[derive(Debug, Clone)]
pub struct Quasi1dLayout {
    pub n_chains: usize,
    pub n_columns: usize,
    pub boundary: Boundary,
    /// Grid height (rows) and width (qubit columns).
    pub height: usize,
    pub width: usize,
    pub n_qubits: usize,
}

impl Quasi1dLayout {
    pub fn new(n_chains: usize, n_columns: usize, boundary: Boundary) -> Self {
        let height = 2 * n_chains - 1;
        let width = 2 * n_columns;
        let grid = height * width;
        let n_qubits = match boundary {
            Boundary::Terminated => grid + 2 * n_chains,
            _ => grid,
        };
        Quasi1dLayout {
            n_chains,
            n_columns,
            boundary,
            height,
            width,
            n_qubits,
        }
    }

    fn left_terminator_count(&self) -> usize {
        if self.boundary == Boundary::Terminated {
            self.n_chains
        } else {
            0
        }
    }

    /// Qubit id of grid position `(row, col)`: columnar-site major so dense
    /// factors line up with sites.
    pub fn grid_qubit(&self, row: usize, col: usize) -> usize {
        let site = col / 2;
        self.left_terminator_count() + site * (2 * self.height) + row * 2 + (col % 2)
    }

    /// Left/right terminating particle of a chain.
    pub fn left_terminator(&self, chain: usize) -> Option<usize> {
        (self.boundary == Boundary::Terminated).then_some(chain)
    }

    pub fn right_terminator(&self, chain: usize) -> Option<usize> {
        (self.boundary == Boundary::Terminated)
            .then_some(self.n_chains + self.height * self.width + chain)
    }

    pub fn chain_row(&self, chain: usize) -> usize {
        2 * chain
    }

    /// Chain qubit ids in column order for one chain.
    pub fn chain_qubits(&self, chain: usize) -> Vec<usize> {
        (0..self.width)
            .map(|c| self.grid_qubit(self.chain_row(chain), c))
            .collect()
    }

    /// Redundant (uncoupled) qubit ids.
    pub fn redundant_qubits(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for r in (1..self.height).step_by(2) {
            for c in 0..self.width {
                v.push(self.grid_qubit(r, c));
            }
        }
        v.sort_unstable();
        v
    }

    /// All grid qubit ids (excludes terminators).
    pub fn grid_qubits(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                v.push(self.grid_qubit(r, c));
            }
        }
        v.sort_unstable();
        v
    }

    /// Dense tensor-factor dims: per-chain left terminators, columnar sites
    /// (dim `2^(2*height)` each), per-chain right terminators.
    pub fn factor_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        dims.extend(std::iter::repeat(2).take(self.left_terminator_count()));
        dims.extend(std::iter::repeat(1usize << (2 * self.height)).take(self.n_columns));
        dims.extend(std::iter::repeat(2).take(self.left_terminator_count()));
        dims
    }
}

/// Build the quasi-1D model: one cluster chain per even row plus `-X` terms
/// on the uncoupled odd-row qubits, with the product symmetry group
/// `(Z2 x Z2)^(n_chains)`.
pub fn quasi1d_hamiltonian(
    n_chains: usize,
    n_columns: usize,
    boundary: Boundary,
) -> Result<(LocalHamiltonian, SymmetryAction, Quasi1dLayout), ModelError> {
    if n_chains < 1 {
        return Err(ModelError::TooSmall("need at least one chain".into()));
    }
    if n_columns < 2 {
        return Err(ModelError::TooSmall("need at least two columns".into()));
    }
    let layout = Quasi1dLayout::new(n_chains, n_columns, boundary);
    let n = layout.n_qubits;
    let mut terms: Vec<Term> = Vec::new();
    let mut generators: Vec<PauliString> = Vec::new();
    for chain in 0..n_chains {
        let q = layout.chain_qubits(chain);
        let (hc, sym_c) = chain_terms(
            n,
            &q,
            layout.left_terminator(chain),
            layout.right_terminator(chain),
            boundary,
        );
        terms.extend(hc.terms);
        use crate::symmetry::z2z2_elems;
        generators.push(sym_c.string(z2z2_elems::X).clone());
        generators.push(sym_c.string(z2z2_elems::Z).clone());
    }
    for q in layout.redundant_qubits() {
        terms.push(Term::from_pauli(-1.0, PauliString::single(n, q, Pauli::X)).unwrap());
    }
    let h = LocalHamiltonian::new(n, terms);
    let sym =
        SymmetryAction::from_generators(FiniteAbelianGroup::z2z2_power(n_chains), generators);
    Ok((h, sym, layout))
}

/// Chain arrangement on the 2-D square lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// Chains on even rows, redundant qubits on odd rows.
    Horizontal,
    /// Staircase chains starting every fourth row.
    Diagonal,
}

/// A 2-D lattice of qubits with 1-D chains embedded as induced paths.
#[derive(Debug, Clone)]
pub struct Layout2D {
    pub kind: LayoutKind,
    pub height: usize,
    pub width: usize,
    /// Ordered qubit paths (row, col) realizing the chains.
    pub chains: Vec<Vec<(usize, usize)>>,
    /// The quasi-1D layout this 2-D model dualizes onto
    /// (horizontal layouts only).
    pub quasi: Option<Quasi1dLayout>,
}

impl Layout2D {
    /// Horizontal layout matching `quasi1d_hamiltonian(n_chains, n_columns,
    /// Capped)`: chains on even rows, redundant odd rows between them.
    pub fn horizontal(n_chains: usize, n_columns: usize) -> Result<Self, ModelError> {
        if n_chains < 1 || n_columns < 2 {
            return Err(ModelError::BadLayout("grid too small".into()));
        }
        let quasi = Quasi1dLayout::new(n_chains, n_columns, Boundary::Capped);
        let chains = (0..n_chains)
            .map(|k| (0..quasi.width).map(|c| (2 * k, c)).collect())
            .collect();
        Ok(Layout2D {
            kind: LayoutKind::Horizontal,
            height: quasi.height,
            width: quasi.width,
            chains,
            quasi: Some(quasi),
        })
    }

    /// Diagonal layout: staircase chains starting at rows 0, 4, 8, ...
    /// Every off-path neighbour of a corner-to-corner staircase touches an
    /// even number of same-sublattice path qubits, so for a single chain the
    /// dual symmetry generators are pure X-strings on the chain. With more
    /// chains the bulk cancellation still holds but mid-grid chain ends leak
    /// boundary Z factors.
    pub fn diagonal(n_chains: usize, n_columns: usize) -> Result<Self, ModelError> {
        if n_chains < 1 || n_columns < 2 {
            return Err(ModelError::BadLayout("grid too small".into()));
        }
        let chain_len = 2 * n_columns;
        let rise = (chain_len - 1) / 2;
        let height = 4 * (n_chains - 1) + rise + 1;
        let width = chain_len / 2 + 1;
        let chains: Vec<Vec<(usize, usize)>> = (0..n_chains)
            .map(|k| {
                (0..chain_len)
                    .map(|t| (4 * k + t / 2, t.div_ceil(2)))
                    .collect()
            })
            .collect();
        Ok(Layout2D {
            kind: LayoutKind::Diagonal,
            height,
            width,
            chains,
            quasi: None,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.height * self.width
    }

    /// Qubit id of a grid position. Horizontal layouts reuse the quasi-1D
    /// enumeration so dual Hamiltonians match term by term; diagonal layouts
    /// use row-major order.
    pub fn qubit(&self, row: usize, col: usize) -> usize {
        match &self.quasi {
            Some(q) => q.grid_qubit(row, col),
            None => row * self.width + col,
        }
    }

    fn in_grid(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Nearest-neighbour lattice edges.
    pub fn all_edges(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut edges = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.in_grid(r as isize, c as isize + 1) {
                    edges.push(((r, c), (r, c + 1)));
                }
                if self.in_grid(r as isize + 1, c as isize) {
                    edges.push(((r, c), (r + 1, c)));
                }
            }
        }
        edges
    }

    fn chain_path_edges(&self) -> std::collections::BTreeSet<((usize, usize), (usize, usize))> {
        let mut set = std::collections::BTreeSet::new();
        for path in &self.chains {
            for w in path.windows(2) {
                set.insert((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
        set
    }

    /// Validate: chains are disjoint in-grid lattice paths.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for path in &self.chains {
            for &(r, c) in path {
                if !self.in_grid(r as isize, c as isize) {
                    return Err(ModelError::BadLayout(format!(
                        "chain leaves the grid at ({r}, {c})"
                    )));
                }
                if !seen.insert((r, c)) {
                    return Err(ModelError::BadLayout(format!(
                        "chains overlap at ({r}, {c})"
                    )));
                }
            }
            for w in path.windows(2) {
                let dr = w[0].0.abs_diff(w[1].0);
                let dc = w[0].1.abs_diff(w[1].1);
                if dr + dc != 1 {
                    return Err(ModelError::BadLayout(format!(
                        "chain step {:?} -> {:?} is not a lattice edge",
                        w[0], w[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Non-chain qubit positions.
    pub fn redundant_positions(&self) -> Vec<(usize, usize)> {
        let chain_set: std::collections::BTreeSet<(usize, usize)> =
            self.chains.iter().flatten().cloned().collect();
        let mut v = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if !chain_set.contains(&(r, c)) {
                    v.push((r, c));
                }
            }
        }
        v
    }
}

/// The controlled-Z edge set of the duality: all lattice edges except the
/// chain-path edges. Conjugating the 2-D cluster Hamiltonian by these CZs
/// decouples the chains and turns non-chain qubits into `-X` terms.
pub fn cz_duality_edges(layout: &Layout2D) -> Result<Vec<(usize, usize)>, ModelError> {
    layout.validate()?;
    let path = layout.chain_path_edges();
    let mut edges = Vec::new();
    for (a, b) in layout.all_edges() {
        let key = (a.min(b), a.max(b));
        if !path.contains(&key) {
            edges.push((layout.qubit(a.0, a.1), layout.qubit(b.0, b.1)));
        }
    }
    Ok(edges)
}

/// The 2-D cluster Hamiltonian `-sum_v X_v prod_(w~v) Z_w` on the layout's
/// qubit enumeration.
pub fn cluster_2d_hamiltonian(layout: &Layout2D) -> Result<LocalHamiltonian, ModelError> {
    layout.validate()?;
    let n = layout.n_qubits();
    let mut terms = Vec::new();
    for r in 0..layout.height {
        for c in 0..layout.width {
            let mut pairs = vec![(layout.qubit(r, c), Pauli::X)];
            for (dr, dc) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0
                    && nc >= 0
                    && (nr as usize) < layout.height
                    && (nc as usize) < layout.width
                {
                    pairs.push((layout.qubit(nr as usize, nc as usize), Pauli::Z));
                }
            }
            terms.push(Term::from_pauli(-1.0, PauliString::from_pairs(n, &pairs)).unwrap());
        }
    }
    Ok(LocalHamiltonian::new(n, terms))
}

/// Conjugate a Hamiltonian through a layer of controlled-Z gates
/// (an involution: applying it twice returns the original).
pub fn conjugate_by_cz_layer(h: &LocalHamiltonian, edges: &[(usize, usize)]) -> LocalHamiltonian {
    let terms = h
        .terms
        .iter()
        .map(|t| {
            let strings: Vec<(C64, PauliString)> = t
                .strings
                .iter()
                .map(|(c, s)| {
                    let mut out = s.clone();
                    for &(a, b) in edges {
                        out = out.conjugate_by_cz(a, b);
                    }
                    (*c, out)
                })
                .collect();
            Term::from_strings(strings).expect("CZ conjugation preserves Hermiticity")
        })
        .collect();
    LocalHamiltonian::new(h.n_qubits, terms)
}

/// The symmetry of the 2-D cluster model associated with a layout: the
/// quasi-1D chain generators conjugated back through the duality.
pub fn layout_symmetry_2d(layout: &Layout2D) -> Result<SymmetryAction, ModelError> {
    let edges = cz_duality_edges(layout)?;
    let n = layout.n_qubits();
    let mut generators = Vec::new();
    for path in &layout.chains {
        let m = path.len();
        let q = |t: usize| layout.qubit(path[t].0, path[t].1);
        let mut px: Vec<(usize, Pauli)> = vec![(q(0), Pauli::Z)];
        px.extend((1..m).step_by(2).map(|t| (q(t), Pauli::X)));
        let mut pz: Vec<(usize, Pauli)> = (0..m).step_by(2).map(|t| (q(t), Pauli::X)).collect();
        pz.push((q(m - 1), Pauli::Z));
        generators.push(PauliString::from_pairs(n, &px));
        generators.push(PauliString::from_pairs(n, &pz));
    }
    let quasi_sym = SymmetryAction::from_generators(
        FiniteAbelianGroup::z2z2_power(layout.chains.len()),
        generators,
    );
    Ok(quasi_sym.conjugated_by_cz_layer(&edges))
}

/// Ground-state energy of an unperturbed stabilizer builder: minus the
/// number of terms.
pub fn stabilizer_ground_energy(h: &LocalHamiltonian) -> f64 {
    -(h.terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol;

    #[test]
    fn chain_builder_counts_and_symmetry() {
        for boundary in [Boundary::Open, Boundary::Capped, Boundary::Terminated] {
            let (h, sym, layout) = cluster_chain_hamiltonian(4, boundary).unwrap();
            let expected_terms = match boundary {
                Boundary::Open => 6,
                Boundary::Capped => 8,
                Boundary::Terminated => 10,
            };
            assert_eq!(h.terms.len(), expected_terms);
            assert_eq!(h.n_qubits, layout.n_qubits);
            assert!(check_symmetry(&h, &sym) < tol::SYMMETRY);
            for i in 0..h.terms.len() {
                for j in 0..h.terms.len() {
                    let a = &h.terms[i].strings[0].1;
                    let b = &h.terms[j].strings[0].1;
                    assert!(a.commutes_with(b), "{i} vs {j} anticommute");
                }
            }
        }
        assert!(cluster_chain_hamiltonian(1, Boundary::Open).is_err());
    }

    #[test]
    fn terminated_symmetry_is_projective_at_ends() {
        let (_, sym, layout) = cluster_chain_hamiltonian(3, Boundary::Terminated).unwrap();
        let tl = layout.left_terminator.unwrap();
        let tr = layout.right_terminator.unwrap();
        use crate::symmetry::z2z2_elems::*;
        assert_eq!(sym.string(X).ops[tl], Pauli::X);
        assert_eq!(sym.string(X).ops[tr], Pauli::X);
        assert_eq!(sym.string(Z).ops[tl], Pauli::Z);
        assert_eq!(sym.string(Z).ops[tr], Pauli::Z);
        // y = xz: terminator factors multiply to XZ = -iY on each end, and
        // the two -i phases combine to the global -1 of V*(y) ⊗ V(y).
        assert_eq!(sym.string(Y).ops[tl], Pauli::Y);
        assert_eq!(sym.string(Y).ops[tr], Pauli::Y);
        assert!((sym.string(Y).phase - C64::new(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn symmetry_check_distinguishes_perturbations() {
        let (h, sym, layout) = cluster_chain_hamiltonian(3, Boundary::Terminated).unwrap();
        let x_field = transverse_field_perturbation(layout.n_qubits, &layout.chain_qubits, 0.1);
        assert!(check_symmetry(&x_field, &sym) < tol::SYMMETRY);
        assert!(check_symmetry(&h.plus(&x_field), &sym) < tol::SYMMETRY);
        // A single Z term anticommutes with an X-string: norm 2 * 0.1.
        let z1 = LocalHamiltonian::new(
            layout.n_qubits,
            vec![Term::from_pauli(
                0.1,
                PauliString::single(layout.n_qubits, layout.chain_qubits[0], Pauli::Z),
            )
            .unwrap()],
        );
        let res = check_symmetry(&z1, &sym);
        assert!((res - 0.2).abs() < 1e-12, "res = {res}");
    }

    #[test]
    fn symmetrization_examples() {
        let (_, sym, layout) = cluster_chain_hamiltonian(3, Boundary::Open).unwrap();
        let n = layout.n_qubits;
        // Z_1 averages to zero (XZX = -Z).
        let z1 = LocalHamiltonian::new(
            n,
            vec![Term::from_pauli(1.0, PauliString::single(n, 1, Pauli::Z)).unwrap()],
        );
        assert!(symmetrize_perturbation(&z1, &sym).terms.is_empty());
        // X_1 is already symmetric.
        let x1 = LocalHamiltonian::new(
            n,
            vec![Term::from_pauli(1.0, PauliString::single(n, 1, Pauli::X)).unwrap()],
        );
        let out = symmetrize_perturbation(&x1, &sym);
        assert_eq!(out.terms.len(), 1);
        assert!((out.terms[0].strings[0].0.re - 1.0).abs() < 1e-12);
        // Z_1 Z_3 on the same sublattice survives (two sign flips cancel).
        let zz = LocalHamiltonian::new(
            n,
            vec![Term::from_pauli(
                1.0,
                PauliString::from_pairs(n, &[(1, Pauli::Z), (3, Pauli::Z)]),
            )
            .unwrap()],
        );
        let out = symmetrize_perturbation(&zz, &sym);
        assert_eq!(out.terms.len(), 1);
        assert!((out.terms[0].strings[0].0.re - 1.0).abs() < 1e-12);
        let rng_sym = random_symmetrized_perturbation(n, &layout.chain_qubits, 2, 0.3, &sym, 7);
        assert!(check_symmetry(&rng_sym, &sym) < tol::SYMMETRY);
    }

    #[test]
    fn transverse_field_metadata() {
        let (_, sym, layout) = cluster_chain_hamiltonian(3, Boundary::Terminated).unwrap();
        let v0 = transverse_field_perturbation(layout.n_qubits, &layout.chain_qubits, 0.0);
        assert!(v0.terms.is_empty());
        let v = transverse_field_perturbation(layout.n_qubits, &layout.chain_qubits, 0.1);
        assert!((v.local_strength() - 0.1).abs() < 1e-12);
        assert!(check_symmetry(&v, &sym) < tol::SYMMETRY);
    }

    #[test]
    fn quasi1d_reduces_to_chain() {
        let (h1, _, _) = quasi1d_hamiltonian(1, 4, Boundary::Terminated).unwrap();
        let (hc, _, _) = cluster_chain_hamiltonian(4, Boundary::Terminated).unwrap();
        assert_eq!(h1.terms.len(), hc.terms.len());
        assert_eq!(h1.n_qubits, hc.n_qubits);
        let (h2, sym2, layout2) = quasi1d_hamiltonian(2, 4, Boundary::Terminated).unwrap();
        assert_eq!(layout2.height, 3);
        assert_eq!(h2.terms.len(), 2 * 10 + layout2.redundant_qubits().len());
        assert!(check_symmetry(&h2, &sym2) < tol::SYMMETRY);
    }

    #[test]
    fn cz_duality_horizontal_matches_quasi1d() {
        let layout = Layout2D::horizontal(2, 2).unwrap();
        let edges = cz_duality_edges(&layout).unwrap();
        let h2d = cluster_2d_hamiltonian(&layout).unwrap();
        let dual = conjugate_by_cz_layer(&h2d, &edges);
        let (hq, _, _) = quasi1d_hamiltonian(2, 2, Boundary::Capped).unwrap();
        let collect = |h: &LocalHamiltonian| {
            let mut v: Vec<String> = h
                .terms
                .iter()
                .flat_map(|t| {
                    t.strings.iter().map(|(c, s)| {
                        let total = c * s.phase;
                        format!(
                            "{:+.3}{}",
                            total.re,
                            s.ops.iter().map(|p| format!("{p:?}")).collect::<String>()
                        )
                    })
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(collect(&dual), collect(&hq));
        // Involution: conjugating twice returns the original.
        let back = conjugate_by_cz_layer(&dual, &edges);
        assert_eq!(collect(&back), collect(&h2d));
        // Empty edge set: identity map.
        let same = conjugate_by_cz_layer(&h2d, &[]);
        assert_eq!(collect(&same), collect(&h2d));
    }

    #[test]
    fn diagonal_layout_generator_has_no_z_outside_chains() {
        let layout = Layout2D::diagonal(1, 4).unwrap();
        layout.validate().unwrap();
        let sym2d = layout_symmetry_2d(&layout).unwrap();
        let chain_set: std::collections::BTreeSet<usize> = layout
            .chains
            .iter()
            .flatten()
            .map(|&(r, c)| layout.qubit(r, c))
            .collect();
        for g in sym2d.group.elements() {
            for (q, &p) in sym2d.string(g).ops.iter().enumerate() {
                if !chain_set.contains(&q) {
                    assert_eq!(p, Pauli::I, "element {g} acts on non-chain qubit {q}");
                }
            }
        }
        // The x-field perturbation commutes with the diagonal symmetry in
        // the bulk; only the chain-end qubits carry boundary tails on a
        // finite open patch.
        let ends: Vec<usize> = layout
            .chains
            .iter()
            .flat_map(|p| [p[0], p[p.len() - 1]])
            .map(|(r, c)| layout.qubit(r, c))
            .collect();
        let bulk: Vec<usize> = (0..layout.n_qubits())
            .filter(|q| !ends.contains(q))
            .collect();
        let field = transverse_field_perturbation(layout.n_qubits(), &bulk, 0.2);
        assert!(check_symmetry(&field, &sym2d) < tol::SYMMETRY);
        let end_field = transverse_field_perturbation(layout.n_qubits(), &ends, 0.2);
        assert!(check_symmetry(&end_field, &sym2d) > 0.1);
    }

    #[test]
    fn horizontal_layout_generator_has_z_on_flanking_redundant() {
        let layout = Layout2D::horizontal(2, 2).unwrap();
        let sym2d = layout_symmetry_2d(&layout).unwrap();
        let gen = sym2d.string(sym2d.group.from_exponents(&[1, 0, 0, 0]));
        let mut has_z_on_redundant = false;
        for (r, c) in layout.redundant_positions() {
            if gen.ops[layout.qubit(r, c)] == Pauli::Z {
                has_z_on_redundant = true;
            }
        }
        assert!(has_z_on_redundant);
        let h2d = cluster_2d_hamiltonian(&layout).unwrap();
        assert!(check_symmetry(&h2d, &sym2d) < tol::SYMMETRY);
    }

    #[test]
    fn dense_term_round_trip() {
        let (h, _, _) = cluster_chain_hamiltonian(2, Boundary::Open).unwrap();
        for t in &h.terms {
            let back = Term::from_dense(h.n_qubits, t.support.clone(), t.matrix.clone()).unwrap();
            assert!(linalg::max_abs(&(&back.matrix - &t.matrix)) < 1e-12);
            assert_eq!(back.strings.len(), 1);
        }
    }

    #[test]
    fn term_dump_has_row_per_string() {
        let (h, _, _) = cluster_chain_hamiltonian(2, Boundary::Capped).unwrap();
        let csv = h.term_dump_csv();
        assert_eq!(csv.lines().count(), 1 + h.terms.len());
        assert!(csv.starts_with("support,pauli"));
    }
}
