//! Finite abelian groups, factor systems (2-cocycles), projective
//! representations and the eigenbasis group-element assignment.

use crate::linalg::{self, CMat, CVec, ONE};
use crate::tol;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("matrices do not form a projective representation (residual {0:.3e})")]
    NotProjectiveRep(f64),
    #[error("factor system is not maximally non-commutative")]
    NotMaximallyNoncommutative,
    #[error("unsupported group for this operation: {0}")]
    UnsupportedGroup(String),
    #[error("no group element reproduces character {0} by conjugation")]
    NoSolution(usize),
    #[error("cocycle condition violated (residual {0:.3e})")]
    NotCocycle(f64),
    #[error("operands belong to different groups")]
    GroupMismatch,
}

/// Element of a finite abelian group, stored as an index into the
/// canonical element enumeration of its [`FiniteAbelianGroup`].
pub type GroupElement = usize;

/// A finite abelian group given by generator orders, e.g. `[2, 2]` for
/// Z2 x Z2. Elements are exponent vectors enumerated row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteAbelianGroup {
    pub orders: Vec<u32>,
    mul_table: Vec<GroupElement>,
    inv_table: Vec<GroupElement>,
}

impl FiniteAbelianGroup {
    pub fn new(orders: &[u32]) -> Self {
        assert!(!orders.is_empty() && orders.iter().all(|&o| o >= 1));
        let size: usize = orders.iter().map(|&o| o as usize).product();
        let n_gen = orders.len();
        let exps = |e: GroupElement| -> Vec<u32> {
            let mut rem = e;
            let mut v = vec![0u32; n_gen];
            for k in (0..n_gen).rev() {
                v[k] = (rem % orders[k] as usize) as u32;
                rem /= orders[k] as usize;
            }
            v
        };
        let index = |v: &[u32]| -> GroupElement {
            let mut idx = 0usize;
            for k in 0..n_gen {
                idx = idx * orders[k] as usize + v[k] as usize;
            }
            idx
        };
        let mut mul_table = vec![0; size * size];
        let mut inv_table = vec![0; size];
        for a in 0..size {
            let ea = exps(a);
            let inv: Vec<u32> = ea
                .iter()
                .zip(orders)
                .map(|(&x, &o)| (o - x) % o)
                .collect();
            inv_table[a] = index(&inv);
            for b in 0..size {
                let eb = exps(b);
                let sum: Vec<u32> = ea
                    .iter()
                    .zip(&eb)
                    .zip(orders)
                    .map(|((&x, &y), &o)| (x + y) % o)
                    .collect();
                mul_table[a * size + b] = index(&sum);
            }
        }
        FiniteAbelianGroup {
            orders: orders.to_vec(),
            mul_table,
            inv_table,
        }
    }

    /// Z2 x Z2 with the element order `1, z, x, y` induced by exponent
    /// vectors `(x-power, z-power)` enumerated row-major.
    pub fn z2z2() -> Self {
        Self::new(&[2, 2])
    }

    /// (Z2 x Z2)^n.
    pub fn z2z2_power(n: usize) -> Self {
        Self::new(&vec![2u32; 2 * n])
    }

    pub fn order(&self) -> usize {
        self.orders.iter().map(|&o| o as usize).product()
    }

    pub fn identity(&self) -> GroupElement {
        0
    }

    pub fn mul(&self, a: GroupElement, b: GroupElement) -> GroupElement {
        self.mul_table[a * self.order() + b]
    }

    pub fn inverse(&self, a: GroupElement) -> GroupElement {
        self.inv_table[a]
    }

    pub fn exponents(&self, e: GroupElement) -> Vec<u32> {
        let mut rem = e;
        let mut v = vec![0u32; self.orders.len()];
        for k in (0..self.orders.len()).rev() {
            v[k] = (rem % self.orders[k] as usize) as u32;
            rem /= self.orders[k] as usize;
        }
        v
    }

    pub fn from_exponents(&self, v: &[u32]) -> GroupElement {
        let mut idx = 0usize;
        for k in 0..self.orders.len() {
            idx = idx * self.orders[k] as usize + (v[k] % self.orders[k]) as usize;
        }
        idx
    }

    pub fn elements(&self) -> std::ops::Range<GroupElement> {
        0..self.order()
    }

    pub fn element_order(&self, a: GroupElement) -> usize {
        let mut acc = a;
        let mut n = 1;
        while acc != self.identity() {
            acc = self.mul(acc, a);
            n += 1;
        }
        n
    }

    /// The exponent of the group (lcm of element orders).
    pub fn exponent(&self) -> usize {
        self.elements()
            .map(|a| self.element_order(a))
            .fold(1, num_lcm)
    }
}

fn num_gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        num_gcd(b, a % b)
    }
}

fn num_lcm(a: usize, b: usize) -> usize {
    a / num_gcd(a, b) * b
}

/// Convenience names for the Z2 x Z2 elements under [`FiniteAbelianGroup::z2z2`].
pub mod z2z2_elems {
    use super::GroupElement;
    pub const E: GroupElement = 0;
    pub const Z: GroupElement = 1;
    pub const X: GroupElement = 2;
    pub const Y: GroupElement = 3;
}

/// A factor system: the 2-cocycle phase table of a projective representation.
#[derive(Debug, Clone)]
pub struct FactorSystem {
    pub group: FiniteAbelianGroup,
    /// `omega[[a, b]]` is the phase in `W(a) W(b) = omega(a,b) W(ab)`.
    pub omega: CMat,
}

impl FactorSystem {
    pub fn new(group: FiniteAbelianGroup, omega: CMat) -> Result<Self, SymmetryError> {
        let fs = FactorSystem { group, omega };
        let res = fs.cocycle_residual();
        if res > tol::UNITARY {
            return Err(SymmetryError::NotCocycle(res));
        }
        Ok(fs)
    }

    pub fn trivial(group: FiniteAbelianGroup) -> Self {
        let n = group.order();
        FactorSystem {
            group,
            omega: CMat::from_elem((n, n), ONE),
        }
    }

    pub fn value(&self, a: GroupElement, b: GroupElement) -> C64 {
        self.omega[[a, b]]
    }

    /// Max violation of `|omega| = 1` and the cocycle identity
    /// `omega(g,h) omega(gh,k) = omega(h,k) omega(g,hk)`.
    pub fn cocycle_residual(&self) -> f64 {
        let g = &self.group;
        let mut worst: f64 = 0.0;
        for a in g.elements() {
            for b in g.elements() {
                worst = worst.max((self.omega[[a, b]].norm() - 1.0).abs());
            }
        }
        for a in g.elements() {
            for b in g.elements() {
                for k in g.elements() {
                    let lhs = self.value(a, b) * self.value(g.mul(a, b), k);
                    let rhs = self.value(b, k) * self.value(a, g.mul(b, k));
                    worst = worst.max((lhs - rhs).norm());
                }
            }
        }
        worst
    }

    /// The commutator bicharacter `omega(g,h) / omega(h,g)`.
    pub fn commutator_phase(&self, g: GroupElement, h: GroupElement) -> C64 {
        self.value(g, h) / self.value(h, g)
    }

    /// The projective centre `Z_W(G)` determined by this factor system.
    pub fn projective_centre(&self) -> Vec<GroupElement> {
        self.group
            .elements()
            .filter(|&g| {
                self.group
                    .elements()
                    .all(|h| (self.commutator_phase(g, h) - ONE).norm() <= tol::UNITARY)
            })
            .collect()
    }

    /// True iff the projective centre is trivial.
    pub fn is_maximally_noncommutative(&self) -> bool {
        self.projective_centre() == vec![self.group.identity()]
    }

    /// Pointwise product of factor systems over the same group
    /// (the factor system of a tensor product of representations).
    pub fn product(&self, other: &FactorSystem) -> Result<FactorSystem, SymmetryError> {
        if self.group != other.group {
            return Err(SymmetryError::GroupMismatch);
        }
        Ok(FactorSystem {
            group: self.group.clone(),
            omega: &self.omega * &other.omega,
        })
    }
}

/// Cohomology comparison for abelian groups via equality of the commutator
/// bicharacters; coboundaries leave the bicharacter invariant and, for finite
/// abelian groups, the bicharacter determines the class.
pub fn cohomology_equivalent(a: &FactorSystem, b: &FactorSystem) -> Result<bool, SymmetryError> {
    if a.group != b.group {
        return Err(SymmetryError::GroupMismatch);
    }
    for g in a.group.elements() {
        for h in a.group.elements() {
            if (a.commutator_phase(g, h) - b.commutator_phase(g, h)).norm() > tol::UNITARY {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A projective unitary representation `g -> W(g)`.
#[derive(Debug, Clone)]
pub struct ProjectiveRep {
    pub group: FiniteAbelianGroup,
    pub matrices: Vec<CMat>,
}

impl ProjectiveRep {
    pub fn new(group: FiniteAbelianGroup, matrices: Vec<CMat>) -> Self {
        assert_eq!(matrices.len(), group.order());
        ProjectiveRep { group, matrices }
    }

    pub fn dimension(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrix(&self, g: GroupElement) -> &CMat {
        &self.matrices[g]
    }

    /// The single-qubit byproduct representation of Z2 x Z2:
    /// `V(x^m z^n) = X^m Z^n` (so `V(y) = XZ`). This is the representative
    /// realized literally by the cluster-state measurement byproducts.
    pub fn cluster_byproduct_rep() -> Self {
        let g = FiniteAbelianGroup::z2z2();
        let x = crate::pauli::Pauli::X.dense();
        let z = crate::pauli::Pauli::Z.dense();
        let mats = (0..4)
            .map(|e| {
                let v = g.exponents(e);
                let mut m = CMat::eye(2);
                if v[0] == 1 {
                    m = m.dot(&x);
                }
                if v[1] == 1 {
                    m = m.dot(&z);
                }
                m
            })
            .collect();
        ProjectiveRep::new(g, mats)
    }

    /// The textbook Pauli representation of Z2 x Z2: `I, X, Z, Y`.
    pub fn pauli_rep() -> Self {
        let g = FiniteAbelianGroup::z2z2();
        let mats = vec![
            CMat::eye(2),
            crate::pauli::Pauli::Z.dense(),
            crate::pauli::Pauli::X.dense(),
            crate::pauli::Pauli::Y.dense(),
        ];
        ProjectiveRep::new(g, mats)
    }

    /// Tensor power over (Z2 x Z2)^n: `V(g_1, ..., g_n) = V_1(g_1) ⊗ ...`.
    pub fn tensor_power(base: &ProjectiveRep, n: usize) -> Self {
        assert_eq!(base.group.orders, vec![2, 2]);
        let group = FiniteAbelianGroup::z2z2_power(n);
        let mats = group
            .elements()
            .map(|e| {
                let exps = group.exponents(e);
                let mut m = CMat::eye(1);
                for k in 0..n {
                    let sub = base
                        .group
                        .from_exponents(&[exps[2 * k], exps[2 * k + 1]]);
                    m = linalg::kron(&m, base.matrix(sub));
                }
                m
            })
            .collect();
        ProjectiveRep::new(group, mats)
    }

    /// Entrywise complex conjugate representation (factor system inverts).
    pub fn conjugate(&self) -> Self {
        ProjectiveRep {
            group: self.group.clone(),
            matrices: self.matrices.iter().map(|m| m.mapv(|z| z.conj())).collect(),
        }
    }

    pub fn unitarity_residual(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| {
                let r = &linalg::dag(m).dot(m) - &CMat::eye(m.nrows());
                linalg::max_abs(&r)
            })
            .fold(0.0, f64::max)
    }

    /// Irreducibility criterion for projective reps: `sum_g |tr W(g)|^2 = |G|`.
    pub fn irreducibility_indicator(&self) -> f64 {
        self.group
            .elements()
            .map(|g| linalg::trace(self.matrix(g)).norm_sqr())
            .sum()
    }
}

/// Extract the factor system `omega(a,b)` from `W(a) W(b) = omega W(ab)`.
pub fn factor_system_of(rep: &ProjectiveRep) -> Result<FactorSystem, SymmetryError> {
    let ur = rep.unitarity_residual();
    if ur > tol::UNITARY {
        return Err(SymmetryError::NotProjectiveRep(ur));
    }
    let g = &rep.group;
    let n = g.order();
    let d = rep.dimension();
    let mut omega = CMat::zeros((n, n));
    let mut worst: f64 = 0.0;
    for a in g.elements() {
        for b in g.elements() {
            let prod = rep.matrix(a).dot(rep.matrix(b));
            let target = rep.matrix(g.mul(a, b));
            // omega = tr(target^dag prod) / d, then check proportionality.
            let phase = linalg::trace(&linalg::dag(target).dot(&prod)) / (d as f64);
            let residual = &prod - &target.mapv(|z| z * phase);
            worst = worst.max(linalg::max_abs(&residual));
            worst = worst.max((phase.norm() - 1.0).abs());
            omega[[a, b]] = phase;
        }
    }
    if worst > tol::UNITARY {
        return Err(SymmetryError::NotProjectiveRep(worst));
    }
    FactorSystem::new(g.clone(), omega)
}

/// The commutator phase `omega(g,h)/omega(h,g)`.
pub fn commutator_phase(omega: &FactorSystem, g: GroupElement, h: GroupElement) -> C64 {
    omega.commutator_phase(g, h)
}

/// Decide maximal non-commutativity; returns the projective centre as well.
pub fn is_maximally_noncommutative(omega: &FactorSystem) -> (bool, Vec<GroupElement>) {
    let centre = omega.projective_centre();
    (centre == vec![omega.group.identity()], centre)
}

/// The unique irreducible projective representation for a maximally
/// non-commutative factor system (up to equivalence), of dimension sqrt(|G|).
///
/// For (Z2 x Z2)^n in the cluster cohomology class the tensor-power Pauli
/// construction is returned directly; other groups fall back to extracting an
/// irreducible block of the regular projective representation.
pub fn irreducible_projective_rep(omega: &FactorSystem) -> Result<ProjectiveRep, SymmetryError> {
    let (max_nc, _) = is_maximally_noncommutative(omega);
    if !max_nc {
        return Err(SymmetryError::NotMaximallyNoncommutative);
    }
    let size = omega.group.order();
    let dim = (size as f64).sqrt().round() as usize;
    if dim * dim != size {
        return Err(SymmetryError::UnsupportedGroup(format!(
            "group order {size} is not a perfect square"
        )));
    }
    // Fast path: (Z2 x Z2)^n with the standard cluster-class bicharacter.
    if omega.group.orders.iter().all(|&o| o == 2) && omega.group.orders.len() % 2 == 0 {
        let n = omega.group.orders.len() / 2;
        let candidate =
            ProjectiveRep::tensor_power(&ProjectiveRep::cluster_byproduct_rep(), n);
        let cand_omega = factor_system_of(&candidate)?;
        if cohomology_equivalent(&cand_omega, omega)? {
            return Ok(candidate);
        }
    }
    if size > 64 {
        return Err(SymmetryError::UnsupportedGroup(format!(
            "regular-representation fallback limited to |G| <= 64, got {size}"
        )));
    }
    regular_rep_irreducible_block(omega)
}

/// Build the regular projective representation `W(g)|h> = omega(g,h)|gh>`
/// and cut out one irreducible block via a random commutant element.
fn regular_rep_irreducible_block(omega: &FactorSystem) -> Result<ProjectiveRep, SymmetryError> {
    let g = &omega.group;
    let n = g.order();
    let dim = (n as f64).sqrt().round() as usize;
    let mut regular = Vec::with_capacity(n);
    for a in g.elements() {
        let mut m = CMat::zeros((n, n));
        for h in g.elements() {
            m[[g.mul(a, h), h]] = omega.value(a, h);
        }
        regular.push(m);
    }
    let reg = ProjectiveRep::new(g.clone(), regular);
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let h = linalg::random_hermitian(&mut rng, n);
        // Group-average into the commutant of the regular representation.
        let mut comm = CMat::zeros((n, n));
        for a in g.elements() {
            let w = reg.matrix(a);
            comm = comm + w.dot(&h).dot(&linalg::dag(w));
        }
        comm = comm.mapv(|z| z / n as f64);
        let (vals, vecs) = linalg::eigh_sorted(&comm);
        // Find an eigenvalue cluster of size exactly `dim`.
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && (vals[end] - vals[start]).abs() < 1e-8 {
                end += 1;
            }
            if end - start == dim {
                let block: CMat = vecs.slice(s![.., start..end]).to_owned();
                let mats: Vec<CMat> = g
                    .elements()
                    .map(|a| linalg::dag(&block).dot(reg.matrix(a)).dot(&block))
                    .collect();
                let candidate = ProjectiveRep::new(g.clone(), mats);
                if candidate.unitarity_residual() < tol::UNITARY
                    && (candidate.irreducibility_indicator() - n as f64).abs() < 1e-6
                {
                    return Ok(candidate);
                }
            }
            start = end;
        }
    }
    Err(SymmetryError::UnsupportedGroup(
        "irreducible block extraction failed".into(),
    ))
}

/// A linear on-site representation with its simultaneous eigenbasis.
#[derive(Debug, Clone)]
pub struct OnSiteRep {
    pub group: FiniteAbelianGroup,
    pub matrices: Vec<CMat>,
    /// Columns are the simultaneous eigenbasis kets `|i>`.
    pub eigenbasis: CMat,
    /// `characters[[i, g]]` is `chi_i(g)` with `u(g)|i> = chi_i(g)|i>`.
    pub characters: CMat,
}

impl OnSiteRep {
    /// Build from commuting unitaries by simultaneous diagonalization.
    pub fn new(group: FiniteAbelianGroup, matrices: Vec<CMat>) -> Result<Self, SymmetryError> {
        assert_eq!(matrices.len(), group.order());
        let d = matrices[0].nrows();
        // Simultaneous eigenbasis from a random Hermitian combination of the
        // commuting family u(g) + u(g)^dag and i(u(g) - u(g)^dag).
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut probe = CMat::zeros((d, d));
        for m in &matrices {
            let w: f64 = 0.25 + 0.75 * rand::Rng::gen::<f64>(&mut rng);
            let wi: f64 = 0.25 + 0.75 * rand::Rng::gen::<f64>(&mut rng);
            let dagm = linalg::dag(m);
            probe = probe + (m + &dagm).mapv(|z| z * w);
            probe = probe + ((m - &dagm).mapv(|z| z * C64::new(0.0, wi)));
        }
        let (_, mut basis) = linalg::eigh_sorted(&probe);
        // Verify each u(g) is diagonal in this basis; the random weights make
        // accidental degeneracies vanishingly unlikely, but check and retry.
        for attempt in 0..8 {
            let mut ok = true;
            for m in &matrices {
                let t = linalg::dag(&basis).dot(m).dot(&basis);
                for r in 0..d {
                    for c in 0..d {
                        if r != c && t[[r, c]].norm() > 1e-9 {
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                break;
            }
            if attempt == 7 {
                return Err(SymmetryError::NotProjectiveRep(f64::NAN));
            }
            let mut probe2 = CMat::zeros((d, d));
            for m in &matrices {
                let w: f64 = 0.25 + 0.75 * rand::Rng::gen::<f64>(&mut rng);
                let wi: f64 = 0.25 + 0.75 * rand::Rng::gen::<f64>(&mut rng);
                let dagm = linalg::dag(m);
                probe2 = probe2 + (m + &dagm).mapv(|z| z * w);
                probe2 = probe2 + ((m - &dagm).mapv(|z| z * C64::new(0.0, wi)));
            }
            let (_, b2) = linalg::eigh_sorted(&probe2);
            basis = b2;
        }
        let mut characters = CMat::zeros((d, group.order()));
        for g in group.elements() {
            let t = linalg::dag(&basis).dot(&matrices[g]).dot(&basis);
            for i in 0..d {
                characters[[i, g]] = t[[i, i]];
            }
        }
        Ok(OnSiteRep {
            group,
            matrices,
            eigenbasis: basis,
            characters,
        })
    }

    /// Impose an explicit eigenbasis (columns) instead of computing one.
    pub fn with_eigenbasis(
        group: FiniteAbelianGroup,
        matrices: Vec<CMat>,
        eigenbasis: CMat,
    ) -> Result<Self, SymmetryError> {
        let d = matrices[0].nrows();
        let mut characters = CMat::zeros((d, group.order()));
        for g in group.elements() {
            let t = linalg::dag(&eigenbasis).dot(&matrices[g]).dot(&eigenbasis);
            let mut offdiag: f64 = 0.0;
            for r in 0..d {
                for c in 0..d {
                    if r != c {
                        offdiag = offdiag.max(t[[r, c]].norm());
                    }
                }
            }
            if offdiag > 1e-9 {
                return Err(SymmetryError::NotProjectiveRep(offdiag));
            }
            for i in 0..d {
                characters[[i, g]] = t[[i, i]];
            }
        }
        Ok(OnSiteRep {
            group,
            matrices,
            eigenbasis,
            characters,
        })
    }

    /// The cluster-model on-site representation of Z2 x Z2 on a two-qubit
    /// site: `u(x) = I ⊗ X`, `u(z) = X ⊗ I`, with the eigenbasis ordered by
    /// the (x-character, z-character) signs `++, +-, -+, --`.
    ///
    /// The x generator acts on the second qubit of the site: this pairing is
    /// the one under which the eigenbasis byproducts of the cluster tensor
    /// are exactly `V(g_i) = X^m Z^n` with the standard assignment
    /// `g_(+-) = x`, `g_(-+) = z`.
    pub fn cluster_site() -> Self {
        let group = FiniteAbelianGroup::z2z2();
        let x = crate::pauli::Pauli::X.dense();
        let id = CMat::eye(2);
        let ux = linalg::kron(&id, &x);
        let uz = linalg::kron(&x, &id);
        let mats: Vec<CMat> = group
            .elements()
            .map(|e| {
                let v = group.exponents(e);
                let mut m = CMat::eye(4);
                if v[0] == 1 {
                    m = m.dot(&ux);
                }
                if v[1] == 1 {
                    m = m.dot(&uz);
                }
                m
            })
            .collect();
        let s = 1.0 / 2f64.sqrt();
        let plus = array![C64::new(s, 0.0), C64::new(s, 0.0)];
        let minus = array![C64::new(s, 0.0), C64::new(-s, 0.0)];
        let mut basis = CMat::zeros((4, 4));
        // Column (s1, s2) = |x-char s1, z-char s2>: the z-character sign
        // rides the first physical qubit, the x-character sign the second.
        for (col, (s1, s2)) in [
            (&plus, &plus),
            (&plus, &minus),
            (&minus, &plus),
            (&minus, &minus),
        ]
        .iter()
        .enumerate()
        {
            basis.column_mut(col).assign(&linalg::kron_vec(s2, s1));
        }
        Self::with_eigenbasis(group, mats, basis).expect("cluster site is diagonalizable")
    }

    /// Tensor product of on-site reps over the product group, with optional
    /// trivial factors appended (dimension `d`, trivial characters).
    pub fn tensor_with_trivial(&self, trivial_dim: usize) -> OnSiteRep {
        let d = self.dimension();
        let id = CMat::eye(trivial_dim);
        let matrices = self
            .matrices
            .iter()
            .map(|m| linalg::kron(m, &id))
            .collect();
        let eigenbasis = linalg::kron(&self.eigenbasis, &id);
        let mut characters = CMat::zeros((d * trivial_dim, self.group.order()));
        for g in self.group.elements() {
            for i in 0..d {
                for j in 0..trivial_dim {
                    characters[[i * trivial_dim + j, g]] = self.characters[[i, g]];
                }
            }
        }
        OnSiteRep {
            group: self.group.clone(),
            matrices,
            eigenbasis,
            characters,
        }
    }

    pub fn dimension(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn eigenvector(&self, i: usize) -> CVec {
        self.eigenbasis.column(i).to_owned()
    }
}

/// Combine two on-site reps over groups `G1`, `G2` into one over `G1 x G2`
/// acting on the tensor product site.
pub fn onsite_tensor(a: &OnSiteRep, b: &OnSiteRep) -> OnSiteRep {
    let mut orders = a.group.orders.clone();
    orders.extend_from_slice(&b.group.orders);
    let group = FiniteAbelianGroup::new(&orders);
    let da = a.dimension();
    let db = b.dimension();
    let matrices: Vec<CMat> = group
        .elements()
        .map(|e| {
            let exps = group.exponents(e);
            let (ea, eb) = exps.split_at(a.group.orders.len());
            let ga = a.group.from_exponents(ea);
            let gb = b.group.from_exponents(eb);
            linalg::kron(&a.matrices[ga], &b.matrices[gb])
        })
        .collect();
    let eigenbasis = linalg::kron(&a.eigenbasis, &b.eigenbasis);
    let mut characters = CMat::zeros((da * db, group.order()));
    for e in group.elements() {
        let exps = group.exponents(e);
        let (ea, eb) = exps.split_at(a.group.orders.len());
        let ga = a.group.from_exponents(ea);
        let gb = b.group.from_exponents(eb);
        for i in 0..da {
            for j in 0..db {
                characters[[i * db + j, e]] =
                    a.characters[[i, ga]] * b.characters[[j, gb]];
            }
        }
    }
    OnSiteRep {
        group,
        matrices,
        eigenbasis,
        characters,
    }
}

/// For each eigenbasis element `|i>` of `u`, the group element `g_i` with
/// `chi_i(g) V(g) = V(g_i) V(g) V(g_i)^dag` for every `g` (Lemma-2 style
/// assignment). Unique under maximal non-commutativity.
pub fn eigenbasis_group_elements(
    u: &OnSiteRep,
    omega: &FactorSystem,
) -> Result<Vec<GroupElement>, SymmetryError> {
    if u.group != omega.group {
        return Err(SymmetryError::GroupMismatch);
    }
    let (max_nc, _) = is_maximally_noncommutative(omega);
    if !max_nc {
        return Err(SymmetryError::NotMaximallyNoncommutative);
    }
    let v = irreducible_projective_rep(omega)?;
    let group = &u.group;
    let mut out = Vec::with_capacity(u.dimension());
    for i in 0..u.dimension() {
        let mut found = None;
        'candidates: for gi in group.elements() {
            for g in group.elements() {
                let lhs = v.matrix(g).mapv(|z| z * u.characters[[i, g]]);
                let rhs = v
                    .matrix(gi)
                    .dot(v.matrix(g))
                    .dot(&linalg::dag(v.matrix(gi)));
                if linalg::max_abs(&(&lhs - &rhs)) > 1e-8 {
                    continue 'candidates;
                }
            }
            found = Some(gi);
            break;
        }
        match found {
            Some(gi) => out.push(gi),
            None => return Err(SymmetryError::NoSolution(i)),
        }
    }
    Ok(out)
}

/// Serialize group + representation to a flat key-value text block.
pub fn rep_to_kv(rep: &ProjectiveRep) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "group.orders = {}\n",
        rep.group
            .orders
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    s.push_str(&format!("rep.dim = {}\n", rep.dimension()));
    for g in rep.group.elements() {
        let m = rep.matrix(g);
        let entries: Vec<String> = m
            .iter()
            .map(|z| format!("{:.17e} {:.17e}", z.re, z.im))
            .collect();
        s.push_str(&format!("rep.matrix.{} = {}\n", g, entries.join(" ")));
    }
    s
}

/// Parse the output of [`rep_to_kv`].
pub fn rep_from_kv(text: &str) -> Result<ProjectiveRep, String> {
    let mut orders: Option<Vec<u32>> = None;
    let mut dim: Option<usize> = None;
    let mut raw: Vec<(usize, Vec<f64>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("bad line: {line}"))?;
        let key = key.trim();
        let value = value.trim();
        if key == "group.orders" {
            orders = Some(
                value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| format!("bad order: {e}")))
                    .collect::<Result<_, _>>()?,
            );
        } else if key == "rep.dim" {
            dim = Some(value.parse().map_err(|e| format!("bad dim: {e}"))?);
        } else if let Some(idx) = key.strip_prefix("rep.matrix.") {
            let g: usize = idx.parse().map_err(|e| format!("bad element: {e}"))?;
            let nums: Vec<f64> = value
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| format!("bad entry: {e}")))
                .collect::<Result<_, _>>()?;
            raw.push((g, nums));
        }
    }
    let orders = orders.ok_or("missing group.orders")?;
    let dim = dim.ok_or("missing rep.dim")?;
    let group = FiniteAbelianGroup::new(&orders);
    let mut matrices = vec![CMat::zeros((dim, dim)); group.order()];
    for (g, nums) in raw {
        if nums.len() != 2 * dim * dim {
            return Err(format!("matrix {g} has wrong entry count"));
        }
        let mut m = CMat::zeros((dim, dim));
        for (k, chunk) in nums.chunks(2).enumerate() {
            m[[k / dim, k % dim]] = C64::new(chunk[0], chunk[1]);
        }
        matrices[g] = m;
    }
    Ok(ProjectiveRep::new(group, matrices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs};

    #[test]
    fn group_tables_are_consistent() {
        for orders in [vec![2, 2], vec![4], vec![2, 3], vec![2, 2, 2, 2]] {
            let g = FiniteAbelianGroup::new(&orders);
            let id = g.identity();
            for a in g.elements() {
                assert_eq!(g.mul(a, g.inverse(a)), id);
                assert_eq!(g.mul(id, a), a);
                for b in g.elements() {
                    assert_eq!(g.mul(a, b), g.mul(b, a), "commutativity");
                    for k in g.elements() {
                        assert_eq!(
                            g.mul(g.mul(a, b), k),
                            g.mul(a, g.mul(b, k)),
                            "associativity"
                        );
                    }
                }
            }
            let m = g.exponent();
            for a in g.elements() {
                assert_eq!(m % g.element_order(a), 0);
            }
        }
    }

    #[test]
    fn pauli_factor_system_values() {
        // Oracle: direct 2x2 products. XZ = -iY and ZX = +iY.
        let rep = ProjectiveRep::pauli_rep();
        let omega = factor_system_of(&rep).unwrap();
        use z2z2_elems::*;
        assert!((omega.value(X, Z) - c(0.0, -1.0)).norm() < 1e-12);
        assert!((omega.value(Z, X) - c(0.0, 1.0)).norm() < 1e-12);
        assert!(omega.cocycle_residual() < 1e-12);
    }

    #[test]
    fn trivial_rep_has_trivial_factor_system() {
        let g = FiniteAbelianGroup::z2z2();
        let rep = ProjectiveRep::new(g, vec![CMat::eye(1); 4]);
        let omega = factor_system_of(&rep).unwrap();
        for a in omega.group.elements() {
            for b in omega.group.elements() {
                assert!((omega.value(a, b) - ONE).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn two_copy_factor_system_is_product_of_single_copies() {
        let two = ProjectiveRep::tensor_power(&ProjectiveRep::pauli_rep(), 2);
        let omega2 = factor_system_of(&two).unwrap();
        let single = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let g2 = &omega2.group;
        for a in g2.elements() {
            for b in g2.elements() {
                let ea = g2.exponents(a);
                let eb = g2.exponents(b);
                let g1 = &single.group;
                let a1 = g1.from_exponents(&ea[..2]);
                let a2 = g1.from_exponents(&ea[2..]);
                let b1 = g1.from_exponents(&eb[..2]);
                let b2 = g1.from_exponents(&eb[2..]);
                let expected = single.value(a1, b1) * single.value(a2, b2);
                assert!((omega2.value(a, b) - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn commutator_phase_properties() {
        let omega = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        use z2z2_elems::*;
        assert!((commutator_phase(&omega, X, Z) - c(-1.0, 0.0)).norm() < 1e-12);
        for g in omega.group.elements() {
            assert!((commutator_phase(&omega, g, g) - ONE).norm() < 1e-12);
            for h in omega.group.elements() {
                let fwd = commutator_phase(&omega, g, h);
                let bwd = commutator_phase(&omega, h, g);
                assert!((fwd * bwd - ONE).norm() < 1e-12, "antisymmetry");
                // Bicharacter in the first argument.
                for g2 in omega.group.elements() {
                    let lhs = commutator_phase(&omega, omega.group.mul(g, g2), h);
                    let rhs = commutator_phase(&omega, g, h) * commutator_phase(&omega, g2, h);
                    assert!((lhs - rhs).norm() < 1e-12, "bicharacter");
                }
            }
        }
    }

    #[test]
    fn maximal_noncommutativity_detection() {
        let pauli = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let (ok, centre) = is_maximally_noncommutative(&pauli);
        assert!(ok);
        assert_eq!(centre, vec![0]);

        let trivial = FactorSystem::trivial(FiniteAbelianGroup::z2z2());
        let (ok, centre) = is_maximally_noncommutative(&trivial);
        assert!(!ok);
        assert_eq!(centre.len(), 4);

        // V_P ⊗ trivial on (Z2xZ2) x Z2: the Z2 factor sits in the centre.
        let g = FiniteAbelianGroup::new(&[2, 2, 2]);
        let pauli_rep = ProjectiveRep::pauli_rep();
        let mats: Vec<CMat> = g
            .elements()
            .map(|e| {
                let exps = g.exponents(e);
                let sub = pauli_rep.group.from_exponents(&exps[..2]);
                pauli_rep.matrix(sub).clone()
            })
            .collect();
        let rep = ProjectiveRep::new(g.clone(), mats);
        let omega = factor_system_of(&rep).unwrap();
        let (ok, centre) = is_maximally_noncommutative(&omega);
        assert!(!ok);
        // Centre contains the pure Z2-factor elements {(0,0,0), (0,0,1)}.
        assert!(centre.contains(&g.from_exponents(&[0, 0, 1])));
    }

    #[test]
    fn cohomology_comparison() {
        let pauli = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let rephased = factor_system_of(&ProjectiveRep::cluster_byproduct_rep()).unwrap();
        assert!(cohomology_equivalent(&pauli, &rephased).unwrap());
        assert!(cohomology_equivalent(&pauli, &pauli).unwrap());
        let trivial = FactorSystem::trivial(FiniteAbelianGroup::z2z2());
        assert!(!cohomology_equivalent(&pauli, &trivial).unwrap());
    }

    #[test]
    fn irrep_construction_z2z2() {
        let pauli = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let v = irreducible_projective_rep(&pauli).unwrap();
        assert_eq!(v.dimension(), 2);
        assert!((v.irreducibility_indicator() - 4.0).abs() < 1e-10);
        let v_omega = factor_system_of(&v).unwrap();
        assert!(cohomology_equivalent(&v_omega, &pauli).unwrap());
    }

    #[test]
    fn irrep_construction_two_copies() {
        let two = ProjectiveRep::tensor_power(&ProjectiveRep::pauli_rep(), 2);
        let omega = factor_system_of(&two).unwrap();
        let v = irreducible_projective_rep(&omega).unwrap();
        assert_eq!(v.dimension(), 4);
        assert!((v.irreducibility_indicator() - 16.0).abs() < 1e-10);
    }

    #[test]
    fn irrep_rejects_trivial_class() {
        let trivial = FactorSystem::trivial(FiniteAbelianGroup::z2z2());
        assert!(matches!(
            irreducible_projective_rep(&trivial),
            Err(SymmetryError::NotMaximallyNoncommutative)
        ));
    }

    #[test]
    fn regular_rep_fallback_z4xz4() {
        // Z4 x Z4 with bicharacter omega((a1,a2),(b1,b2)) = i^{a2 b1}
        // is maximally non-commutative; the fallback must find a 4-dim irrep.
        let g = FiniteAbelianGroup::new(&[4, 4]);
        let n = g.order();
        let mut omega = CMat::zeros((n, n));
        let i = c(0.0, 1.0);
        for a in g.elements() {
            for b in g.elements() {
                let ea = g.exponents(a);
                let eb = g.exponents(b);
                omega[[a, b]] = i.powu(ea[1] * eb[0]);
            }
        }
        let fs = FactorSystem::new(g, omega).unwrap();
        assert!(is_maximally_noncommutative(&fs).0);
        let v = regular_rep_irreducible_block(&fs).unwrap();
        assert_eq!(v.dimension(), 4);
        assert!((v.irreducibility_indicator() - 16.0).abs() < 1e-8);
        let v_omega = factor_system_of(&v).unwrap();
        assert!(cohomology_equivalent(&v_omega, &fs).unwrap());
    }

    #[test]
    fn cluster_site_group_assignment() {
        let u = OnSiteRep::cluster_site();
        let omega = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let gmap = eigenbasis_group_elements(&u, &omega).unwrap();
        use z2z2_elems::*;
        // ++ -> 1, +- -> x, -+ -> z, -- -> y
        assert_eq!(gmap, vec![E, X, Z, Y]);
        // Bijection onto G since all characters are distinct.
        let mut sorted = gmap.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn trivial_characters_map_to_identity() {
        let g = FiniteAbelianGroup::z2z2();
        let u = OnSiteRep::new(g, vec![CMat::eye(2); 4]).unwrap();
        let omega = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let gmap = eigenbasis_group_elements(&u, &omega).unwrap();
        assert_eq!(gmap, vec![0, 0]);
    }

    #[test]
    fn quasi1d_two_column_assignment_is_pairwise_product() {
        let site = OnSiteRep::cluster_site();
        let two = onsite_tensor(&site, &site);
        let omega2 =
            factor_system_of(&ProjectiveRep::tensor_power(&ProjectiveRep::pauli_rep(), 2))
                .unwrap();
        let gmap = eigenbasis_group_elements(&two, &omega2).unwrap();
        let omega1 = factor_system_of(&ProjectiveRep::pauli_rep()).unwrap();
        let gmap1 = eigenbasis_group_elements(&site, &omega1).unwrap();
        let g2 = &two.group;
        for i in 0..4 {
            for j in 0..4 {
                let expected_exps: Vec<u32> = {
                    let g1 = &site.group;
                    let mut v = g1.exponents(gmap1[i]);
                    v.extend(g1.exponents(gmap1[j]));
                    v
                };
                assert_eq!(gmap[i * 4 + j], g2.from_exponents(&expected_exps));
            }
        }
    }

    #[test]
    fn kv_round_trip() {
        let rep = ProjectiveRep::pauli_rep();
        let text = rep_to_kv(&rep);
        let back = rep_from_kv(&text).unwrap();
        for g in rep.group.elements() {
            assert!(max_abs(&(rep.matrix(g) - back.matrix(g))) < 1e-15);
        }
    }
}
