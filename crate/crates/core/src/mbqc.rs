//! Measurement protocols on cluster-phase resource states: site actions
//! (identity, rotations, init, readout, quasi-1D entangling), the adaptive
//! runner, the non-adaptive dual process, and their couplings.

use crate::linalg::{self, CMat, CVec, ONE, ZERO};
use crate::state::DenseState;
use crate::symmetry::{
    eigenbasis_group_elements, factor_system_of, GroupElement, OnSiteRep, ProjectiveRep,
};
use crate::tensor::{DensityOperator, MpsTensor};
use crate::tol;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MbqcError {
    #[error("gate outside the supported rotation family")]
    NotInFamily,
    #[error("chains are not adjacent")]
    NotAdjacent,
    #[error("byproduct operator is not proportional to V(g) (residual {0:.3e})")]
    NonPauliByproduct(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("basis contraction identity failed (residual {0:.3e})")]
    BasisResidual(f64),
}

/// `diag(1, e^{i phi})`.
pub fn z_rotation(phi: f64) -> CMat {
    let mut m = CMat::eye(2);
    m[[1, 1]] = C64::from_polar(1.0, phi);
    m
}

/// `H Z(phi) H`.
pub fn x_rotation(phi: f64) -> CMat {
    let h = hadamard();
    h.dot(&z_rotation(phi)).dot(&h)
}

pub fn hadamard() -> CMat {
    let s = 1.0 / 2f64.sqrt();
    ndarray::array![
        [C64::new(s, 0.0), C64::new(s, 0.0)],
        [C64::new(s, 0.0), C64::new(-s, 0.0)]
    ]
}

/// Controlled-Z on two qubits.
pub fn cz() -> CMat {
    let mut m = CMat::eye(4);
    m[[3, 3]] = -ONE;
    m
}

#[derive(Debug, Clone)]
pub enum ActionKind {
    /// Symmetry-eigenbasis measurement; trivial in the dual picture.
    Identity,
    /// Rotation-family gate with the correlation-space unitary attached.
    Gate { u: CMat },
    /// Computational re-initialization of the correlation state.
    Init,
    /// Transfer of the correlation state onto a physical output qubit:
    /// coherent pre-unitary, then measure the listed site qubits; the
    /// remaining qubits carry the output.
    Readout {
        pre: CMat,
        measured: Vec<usize>,
        outputs: Vec<usize>,
    },
    /// Two-chain entangling action (quasi-1D columnar sites).
    Entangle { u: CMat },
}

/// One per-site measurement action: an orthonormal basis of the site with a
/// byproduct group element per outcome.
#[derive(Debug, Clone)]
pub struct SiteAction {
    pub kind: ActionKind,
    /// Columns are the outcome kets in the site (physical) basis. Readout
    /// actions keep an empty basis; their measurement is described by
    /// `ActionKind::Readout`.
    pub basis: CMat,
    pub g_byproduct: Vec<GroupElement>,
    pub label: String,
}

impl SiteAction {
    pub fn n_outcomes(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self.kind, ActionKind::Identity)
    }
}

/// An ordered protocol, one action per site.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub actions: Vec<SiteAction>,
}

impl Protocol {
    /// Validation: at most one init, before all gates; readout (if any) is
    /// the last non-identity action.
    pub fn validate(&self) -> Result<(), MbqcError> {
        let mut seen_init = false;
        let mut seen_gate = false;
        let mut seen_readout = false;
        for a in &self.actions {
            match a.kind {
                ActionKind::Init => {
                    if seen_init {
                        return Err(MbqcError::InvalidProtocol("two init actions".into()));
                    }
                    if seen_gate {
                        return Err(MbqcError::InvalidProtocol("init after a gate".into()));
                    }
                    seen_init = true;
                }
                ActionKind::Gate { .. } | ActionKind::Entangle { .. } => {
                    if seen_readout {
                        return Err(MbqcError::InvalidProtocol("gate after readout".into()));
                    }
                    seen_gate = true;
                }
                ActionKind::Readout { .. } => {
                    if seen_readout {
                        return Err(MbqcError::InvalidProtocol("two readouts".into()));
                    }
                    seen_readout = true;
                }
                ActionKind::Identity => {}
            }
        }
        Ok(())
    }

    pub fn readout_site(&self) -> Option<usize> {
        self.actions
            .iter()
            .position(|a| matches!(a.kind, ActionKind::Readout { .. }))
    }

    /// Minimum distance between non-trivial sites.
    pub fn separation(&self) -> usize {
        let nontrivial: Vec<usize> = self
            .actions
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_trivial())
            .map(|(i, _)| i)
            .collect();
        nontrivial
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .unwrap_or(usize::MAX)
    }
}

/// Builder for the 1-D cluster-site action family.
#[derive(Debug, Clone)]
pub struct ClusterActions {
    pub u: OnSiteRep,
    pub v: ProjectiveRep,
    pub g_map: Vec<GroupElement>,
}

impl ClusterActions {
    pub fn new() -> Self {
        let v = ProjectiveRep::cluster_byproduct_rep();
        let u = OnSiteRep::cluster_site();
        let omega = factor_system_of(&v).expect("byproduct rep is projective");
        let g_map = eigenbasis_group_elements(&u, &omega).expect("cluster assignment");
        ClusterActions { u, v, g_map }
    }

    /// Identity action: measure in the symmetry eigenbasis.
    pub fn identity(&self) -> SiteAction {
        SiteAction {
            kind: ActionKind::Identity,
            basis: self.u.eigenbasis.clone(),
            g_byproduct: self.g_map.clone(),
            label: "identity".into(),
        }
    }

    /// Rotation gate `U = X(theta_x) Z(theta_z)` in correlation space.
    /// The second site qubit is measured first at angle `-theta_z`; the
    /// first follows at `±theta_x` depending on that outcome. Both bases
    /// lie in the x-y plane and the byproducts are `X^(m1) Z^(m2)`.
    pub fn rotation_pair(&self, theta_z: f64, theta_x: f64) -> SiteAction {
        let mut basis = CMat::zeros((4, 4));
        let mut g_byproduct = Vec::with_capacity(4);
        for m1 in 0..2usize {
            for m2 in 0..2usize {
                let alpha = m1 * 2 + m2;
                let sign = if m2 == 0 { 1.0 } else { -1.0 };
                let p1 = plane_basis_vector(sign * (-theta_x), m1);
                let p2 = plane_basis_vector(-theta_z, m2);
                basis
                    .column_mut(alpha)
                    .assign(&linalg::kron_vec(&p1, &p2));
                g_byproduct.push(
                    self.u
                        .group
                        .from_exponents(&[m1 as u32, m2 as u32]),
                );
            }
        }
        let u = x_rotation(theta_x).dot(&z_rotation(theta_z));
        SiteAction {
            kind: ActionKind::Gate { u },
            basis,
            g_byproduct,
            label: format!("rot({theta_z:.6},{theta_x:.6})"),
        }
    }

    /// Rotation about the z axis by `theta` (up to global phase).
    pub fn rotation_z(&self, theta: f64) -> SiteAction {
        let mut a = self.rotation_pair(theta, 0.0);
        a.label = format!("rz({theta:.6})");
        a
    }

    /// Rotation about the x axis by `theta` (up to global phase).
    pub fn rotation_x(&self, theta: f64) -> SiteAction {
        let mut a = self.rotation_pair(0.0, theta);
        a.label = format!("rx({theta:.6})");
        a
    }

    /// Initialization: first qubit in the computational basis, second in
    /// the x basis; the correlation state resets to |0> with byproducts I
    /// or X.
    pub fn init(&self) -> SiteAction {
        let mut basis = CMat::zeros((4, 4));
        let mut g_byproduct = Vec::with_capacity(4);
        let x_gen = self.u.group.from_exponents(&[1, 0]);
        for c1 in 0..2usize {
            for m2 in 0..2usize {
                let alpha = c1 * 2 + m2;
                let mut p1 = CVec::zeros(2);
                p1[c1] = ONE;
                let p2 = plane_basis_vector(0.0, m2);
                basis
                    .column_mut(alpha)
                    .assign(&linalg::kron_vec(&p1, &p2));
                g_byproduct.push(if (c1 + m2) % 2 == 0 {
                    self.u.group.identity()
                } else {
                    x_gen
                });
            }
        }
        SiteAction {
            kind: ActionKind::Init,
            basis,
            g_byproduct,
            label: "init".into(),
        }
    }

    /// Readout: apply CZ between the site qubits and a Hadamard on the
    /// second, measure the first in the computational basis; the second
    /// qubit carries the correlation state exactly.
    pub fn readout(&self) -> SiteAction {
        let pre = linalg::kron(&CMat::eye(2), &hadamard()).dot(&cz());
        SiteAction {
            kind: ActionKind::Readout {
                pre,
                measured: vec![0],
                outputs: vec![1],
            },
            basis: CMat::zeros((4, 0)),
            g_byproduct: Vec::new(),
            label: "readout".into(),
        }
    }

    /// Verify the defining contraction identity `A[alpha] = beta B_alpha U`
    /// on the exact cluster tensor; returns the worst residual.
    pub fn contraction_residual(&self, action: &SiteAction) -> Result<f64, MbqcError> {
        let u_gate = match &action.kind {
            ActionKind::Gate { u } => u.clone(),
            ActionKind::Identity => CMat::eye(2),
            ActionKind::Init | ActionKind::Readout { .. } | ActionKind::Entangle { .. } => {
                return Err(MbqcError::InvalidProtocol(
                    "contraction identity applies to unitary actions".into(),
                ))
            }
        };
        let a_site = MpsTensor::cluster()
            .physical_basis_change(&linalg::dag(&self.u.eigenbasis));
        let mut worst: f64 = 0.0;
        for alpha in 0..action.n_outcomes() {
            let col = action.basis.column(alpha).to_owned();
            let contracted = a_site.contract_physical(&col);
            let b = self.v.matrix(action.g_byproduct[alpha]);
            let target = b.dot(&u_gate);
            // beta from a least-squares fit of contracted = beta * target.
            let beta = linalg::trace(&linalg::dag(&target).dot(&contracted))
                / linalg::trace(&linalg::dag(&target).dot(&target));
            if (beta.norm() - 0.5).abs() > 1e-9 {
                return Err(MbqcError::NonPauliByproduct((beta.norm() - 0.5).abs()));
            }
            let resid = linalg::max_abs(&(&contracted - &target.mapv(|z| z * beta)));
            worst = worst.max(resid);
        }
        Ok(worst)
    }
}

impl Default for ClusterActions {
    fn default() -> Self {
        Self::new()
    }
}

/// `(|0> + (-1)^m e^{i theta} |1>)/sqrt(2)`.
pub fn plane_basis_vector(theta: f64, m: usize) -> CVec {
    let s = 1.0 / 2f64.sqrt();
    let sign = if m == 0 { 1.0 } else { -1.0 };
    CVec::from_vec(vec![
        C64::new(s, 0.0),
        C64::from_polar(s, theta) * sign,
    ])
}

/// Describes the register layout a protocol runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterKind {
    /// `[T_L, sites..., T_R]` with terminating particles of dim `v_dim`.
    Terminated { v_dim: usize },
    /// `[sites...]` only (capped or open chains).
    Bare,
}

impl RegisterKind {
    fn site_factor(&self, site: usize) -> usize {
        match self {
            RegisterKind::Terminated { .. } => site + 1,
            RegisterKind::Bare => site,
        }
    }

    fn right_terminator_factor(&self, n_sites: usize) -> Option<usize> {
        match self {
            RegisterKind::Terminated { .. } => Some(n_sites + 1),
            RegisterKind::Bare => None,
        }
    }
}

/// One branch record of an adaptive run.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub outcomes: Vec<(usize, usize)>,
    pub weight: f64,
}

/// Result of an adaptive run: the output density operator (on the readout
/// outputs, or on the right terminator when no readout is present) and the
/// branch transcripts.
pub struct AdaptiveOutcome {
    pub output: DensityOperator,
    pub transcripts: Vec<Transcript>,
}

pub enum RunMode {
    Enumerate,
    Sample { seed: u64, shots: usize },
}

/// Run the adaptive measurement protocol on a dense state. After outcome
/// `alpha` at a site, the correction `u(g_alpha)^dag` applies to every
/// unmeasured site to its right and `V*(g_alpha)^dag` to the right
/// terminating particle.
pub fn run_adaptive(
    state: &DenseState,
    protocol: &Protocol,
    actions_ctx: &ClusterActions,
    register: RegisterKind,
    mode: RunMode,
) -> Result<AdaptiveOutcome, MbqcError> {
    protocol.validate()?;
    let n_sites = protocol.actions.len();
    let expected_factors = match register {
        RegisterKind::Terminated { .. } => n_sites + 2,
        RegisterKind::Bare => n_sites,
    };
    if state.n_factors() != expected_factors {
        return Err(MbqcError::DimensionMismatch(format!(
            "state has {} factors, protocol wants {}",
            state.n_factors(),
            expected_factors
        )));
    }
    match mode {
        RunMode::Enumerate => run_enumerate(state, protocol, actions_ctx, register),
        RunMode::Sample { seed, shots } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc: Option<CMat> = None;
            let mut dims: Vec<usize> = Vec::new();
            let mut transcripts = Vec::new();
            for _ in 0..shots {
                let (rho, t) = run_single_trajectory(state, protocol, actions_ctx, register, &mut rng)?;
                dims = rho.dims.clone();
                acc = Some(match acc {
                    None => rho.mat,
                    Some(a) => a + &rho.mat,
                });
                transcripts.push(t);
            }
            let mat = acc.unwrap().mapv(|z| z / shots as f64);
            Ok(AdaptiveOutcome {
                output: DensityOperator::new(mat, dims)
                    .map_err(|e| MbqcError::DimensionMismatch(e.to_string()))?,
                transcripts,
            })
        }
    }
}

struct Branch {
    state: DenseState,
    /// Factor index of each still-unmeasured site (None once measured or
    /// fully consumed).
    site_factor: Vec<Option<usize>>,
    right_term_factor: Option<usize>,
    weight: f64,
    outcomes: Vec<(usize, usize)>,
    /// Factors carrying readout outputs (kept unmeasured).
    output_factors: Vec<usize>,
}

fn correction_ops(
    ctx: &ClusterActions,
    g: GroupElement,
) -> (CMat, CMat) {
    let u_corr = linalg::dag(&ctx.u.matrices[g]);
    let t_corr = linalg::dag(&ctx.v.matrix(g).mapv(|z| z.conj()));
    (u_corr, t_corr)
}

fn apply_corrections(branch: &mut Branch, ctx: &ClusterActions, site: usize, g: GroupElement) {
    if g == ctx.u.group.identity() {
        return;
    }
    let (u_corr, t_corr) = correction_ops(ctx, g);
    for s in (site + 1)..branch.site_factor.len() {
        if let Some(f) = branch.site_factor[s] {
            branch.state.apply_op(&u_corr, &[f]);
        }
    }
    if let Some(f) = branch.right_term_factor {
        branch.state.apply_op(&t_corr, &[f]);
    }
}

/// Remove a factor from the bookkeeping after it has been projected out.
fn drop_factor(branch: &mut Branch, factor: usize) {
    for s in branch.site_factor.iter_mut() {
        if let Some(f) = s {
            if *f > factor {
                *f -= 1;
            }
        }
    }
    if let Some(f) = &mut branch.right_term_factor {
        if *f > factor {
            *f -= 1;
        }
    }
    for f in branch.output_factors.iter_mut() {
        if *f > factor {
            *f -= 1;
        }
    }
}

fn process_site(
    branch: &Branch,
    protocol: &Protocol,
    ctx: &ClusterActions,
    site: usize,
) -> Result<Vec<(usize, Branch)>, MbqcError> {
    let action = &protocol.actions[site];
    let factor = branch.site_factor[site].expect("site already measured");
    let mut out = Vec::new();
    match &action.kind {
        ActionKind::Readout {
            pre,
            measured,
            outputs,
        } => {
            // Split the site factor into qubits, apply the pre-unitary,
            // then project the measured qubits in the computational basis.
            let site_dim = branch.state.dims[factor];
            let n_qubits = site_dim.trailing_zeros() as usize;
            let mut st = branch.state.clone();
            st.apply_op(pre, &[factor]);
            // Regroup: expand this factor into qubits.
            let mut dims = st.dims.clone();
            dims.splice(factor..factor + 1, std::iter::repeat(2).take(n_qubits));
            let st = st.regrouped(dims);
            let n_meas = measured.len();
            for combo in 0..(1usize << n_meas) {
                let mut stc = st.clone();
                // Project measured qubits, highest factor index first so
                // earlier indices stay valid.
                let mut pairs: Vec<(usize, usize)> = measured
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| (factor + q, (combo >> j) & 1))
                    .collect();
                pairs.sort_by(|a, b| b.0.cmp(&a.0));
                for (f, bit) in &pairs {
                    let mut vec = CVec::zeros(2);
                    vec[*bit] = ONE;
                    stc = stc.project_factor(*f, &vec);
                }
                let w = stc.norm().powi(2) * branch.weight;
                if w < tol::BRANCH_PRUNE {
                    continue;
                }
                let mut stc = stc;
                stc.normalize();
                let mut nb = Branch {
                    state: stc,
                    site_factor: branch.site_factor.clone(),
                    right_term_factor: branch.right_term_factor,
                    weight: w,
                    outcomes: branch.outcomes.clone(),
                    output_factors: branch.output_factors.clone(),
                };
                nb.outcomes.push((site, combo));
                nb.site_factor[site] = None;
                // Factor bookkeeping: the site factor was replaced by
                // `n_qubits` qubit factors, of which `measured` are gone.
                // Everything after `factor` shifts by (unmeasured - 1).
                let kept: Vec<usize> = (0..n_qubits)
                    .filter(|q| !measured.contains(q))
                    .collect();
                let shift = kept.len() as isize - 1;
                let adjust = |f: usize| -> usize {
                    if f > factor {
                        (f as isize + shift) as usize
                    } else {
                        f
                    }
                };
                for s in nb.site_factor.iter_mut() {
                    if let Some(f) = s {
                        *f = adjust(*f);
                    }
                }
                if let Some(f) = &mut nb.right_term_factor {
                    *f = adjust(*f);
                }
                for f in nb.output_factors.iter_mut() {
                    *f = adjust(*f);
                }
                // Register the outputs: position of each kept output qubit.
                for &oq in outputs {
                    let pos = kept
                        .iter()
                        .position(|&k| k == oq)
                        .expect("output qubit must be unmeasured");
                    nb.output_factors.push(factor + pos);
                }
                out.push((combo, nb));
            }
        }
        _ => {
            for alpha in 0..action.n_outcomes() {
                let col = action.basis.column(alpha).to_owned();
                let projected = branch.state.project_factor(factor, &col);
                let w = projected.norm().powi(2) * branch.weight;
                if w < tol::BRANCH_PRUNE {
                    continue;
                }
                let mut stc = projected;
                stc.normalize();
                let mut nb = Branch {
                    state: stc,
                    site_factor: branch.site_factor.clone(),
                    right_term_factor: branch.right_term_factor,
                    weight: w,
                    outcomes: branch.outcomes.clone(),
                    output_factors: branch.output_factors.clone(),
                };
                nb.outcomes.push((site, alpha));
                nb.site_factor[site] = None;
                drop_factor(&mut nb, factor);
                apply_corrections(&mut nb, ctx, site, action.g_byproduct[alpha]);
                out.push((alpha, nb));
            }
        }
    }
    Ok(out)
}

fn finish_branch(branch: &Branch) -> (CMat, Vec<usize>) {
    // Reduced density on the output factors (or the right terminator when
    // no readout produced outputs).
    let keep: Vec<usize> = if branch.output_factors.is_empty() {
        branch.right_term_factor.into_iter().collect()
    } else {
        branch.output_factors.clone()
    };
    let rho = branch.state.reduced_density(&keep);
    let dims = keep.iter().map(|&f| branch.state.dims[f]).collect();
    (rho, dims)
}

fn run_enumerate(
    state: &DenseState,
    protocol: &Protocol,
    ctx: &ClusterActions,
    register: RegisterKind,
) -> Result<AdaptiveOutcome, MbqcError> {
    let n_sites = protocol.actions.len();
    let root = Branch {
        state: state.clone(),
        site_factor: (0..n_sites).map(|s| Some(register.site_factor(s))).collect(),
        right_term_factor: register.right_terminator_factor(n_sites),
        weight: 1.0,
        outcomes: Vec::new(),
        output_factors: Vec::new(),
    };
    let mut acc: Option<CMat> = None;
    let mut out_dims: Vec<usize> = Vec::new();
    let mut transcripts = Vec::new();
    let mut stack = vec![(root, 0usize)];
    while let Some((branch, site)) = stack.pop() {
        if site == n_sites {
            let (rho, dims) = finish_branch(&branch);
            let weighted = rho.mapv(|z| z * branch.weight);
            acc = Some(match acc {
                None => weighted,
                Some(a) => a + &weighted,
            });
            out_dims = dims;
            transcripts.push(Transcript {
                outcomes: branch.outcomes.clone(),
                weight: branch.weight,
            });
            continue;
        }
        for (_, nb) in process_site(&branch, protocol, ctx, site)? {
            stack.push((nb, site + 1));
        }
    }
    let mat = acc.ok_or_else(|| MbqcError::InvalidProtocol("no surviving branches".into()))?;
    Ok(AdaptiveOutcome {
        output: DensityOperator::new(mat, out_dims)
            .map_err(|e| MbqcError::DimensionMismatch(e.to_string()))?,
        transcripts,
    })
}

fn run_single_trajectory(
    state: &DenseState,
    protocol: &Protocol,
    ctx: &ClusterActions,
    register: RegisterKind,
    rng: &mut ChaCha8Rng,
) -> Result<(DensityOperator, Transcript), MbqcError> {
    let n_sites = protocol.actions.len();
    let mut branch = Branch {
        state: state.clone(),
        site_factor: (0..n_sites).map(|s| Some(register.site_factor(s))).collect(),
        right_term_factor: register.right_terminator_factor(n_sites),
        weight: 1.0,
        outcomes: Vec::new(),
        output_factors: Vec::new(),
    };
    for site in 0..n_sites {
        let options = process_site(&branch, protocol, ctx, site)?;
        let total: f64 = options.iter().map(|(_, b)| b.weight).sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (_, b) in options {
            draw -= b.weight;
            if draw <= 0.0 || chosen.is_none() {
                if draw <= 0.0 {
                    chosen = Some(b);
                    break;
                }
                chosen = Some(b);
            }
        }
        branch = chosen.expect("at least one branch survives");
        // Trajectories carry probability 1 after selection.
        branch.weight = 1.0;
    }
    let (rho, dims) = finish_branch(&branch);
    Ok((
        DensityOperator::new(rho, dims).map_err(|e| MbqcError::DimensionMismatch(e.to_string()))?,
        Transcript {
            outcomes: branch.outcomes,
            weight: 1.0,
        },
    ))
}

/// A dual-process coupling: a unitary on (site ⊗ ancilla register), or the
/// readout form (site pre-unitary with the structural coupling).
#[derive(Debug, Clone)]
pub struct DualCoupling {
    pub matrix: CMat,
    pub trivial: bool,
    /// Readout actions transfer the correlation state onto physical site
    /// qubits; these are recorded so the dual process knows the outputs.
    pub readout: Option<(Vec<usize>, Vec<usize>)>,
}

/// Build the couplings `G_k` of the dual process: the structural coupling
/// `sum_i |i><i| ⊗ V*(g_i)` followed by the outcome coupling
/// `sum_alpha |alpha><alpha| ⊗ V*(g_alpha)^dag`. Identity actions yield the
/// identity coupling exactly; readout actions combine the structural part
/// with their coherent pre-unitary.
pub fn build_couplings(
    protocol: &Protocol,
    ctx: &ClusterActions,
) -> Result<Vec<DualCoupling>, MbqcError> {
    let d = ctx.u.dimension();
    let vd = ctx.v.dimension();
    let structural = {
        let mut m = CMat::zeros((d * vd, d * vd));
        for (i, &gi) in ctx.g_map.iter().enumerate() {
            let col = ctx.u.eigenbasis.column(i).to_owned();
            let mut proj = CMat::zeros((d, d));
            for r in 0..d {
                for c in 0..d {
                    proj[[r, c]] = col[r] * col[c].conj();
                }
            }
            let vstar = ctx.v.matrix(gi).mapv(|z| z.conj());
            m = m + linalg::kron(&proj, &vstar);
        }
        m
    };
    let mut out = Vec::with_capacity(protocol.actions.len());
    for action in &protocol.actions {
        match &action.kind {
            ActionKind::Identity => out.push(DualCoupling {
                matrix: CMat::eye(d * vd),
                trivial: true,
                readout: None,
            }),
            ActionKind::Readout {
                pre,
                measured,
                outputs,
            } => {
                let full = linalg::kron(pre, &CMat::eye(vd)).dot(&structural);
                out.push(DualCoupling {
                    matrix: full,
                    trivial: false,
                    readout: Some((measured.clone(), outputs.clone())),
                });
            }
            _ => {
                let mut diamond = CMat::zeros((d * vd, d * vd));
                for alpha in 0..action.n_outcomes() {
                    let col = action.basis.column(alpha).to_owned();
                    let mut proj = CMat::zeros((d, d));
                    for r in 0..d {
                        for c in 0..d {
                            proj[[r, c]] = col[r] * col[c].conj();
                        }
                    }
                    let vstar_dag = linalg::dag(
                        &ctx.v.matrix(action.g_byproduct[alpha]).mapv(|z| z.conj()),
                    );
                    diamond = diamond + linalg::kron(&proj, &vstar_dag);
                }
                out.push(DualCoupling {
                    matrix: diamond.dot(&structural),
                    trivial: false,
                    readout: None,
                });
            }
        }
    }
    Ok(out)
}

/// Run the dual process: couplings act in site order on the dual (bulk)
/// state tensored with the maximally entangled terminating pair; measured
/// sites are traced. Returns the state of the readout outputs, or of the
/// ancilla when no readout is present.
pub fn dual_process(
    bulk: &DenseState,
    couplings: &[DualCoupling],
    v_dim: usize,
) -> Result<DensityOperator, MbqcError> {
    let n = couplings.len();
    if bulk.n_factors() != n {
        return Err(MbqcError::DimensionMismatch(format!(
            "dual state has {} sites, protocol wants {}",
            bulk.n_factors(),
            n
        )));
    }
    // Assemble [T_L, sites..., T_R] with the pair in |I>.
    let mut dims = vec![v_dim];
    dims.extend_from_slice(&bulk.dims);
    dims.push(v_dim);
    let total: usize = dims.iter().product();
    let mut amps = CVec::zeros(total);
    let sqrt_d = (v_dim as f64).sqrt();
    let stride_tl: usize = dims[1..].iter().product();
    for b in 0..bulk.dim() {
        for k in 0..v_dim {
            amps[k * stride_tl + b * v_dim + k] = bulk.amps[b] / sqrt_d;
        }
    }
    let mut st = DenseState::new(amps, dims).map_err(|e| MbqcError::DimensionMismatch(e.to_string()))?;
    let tr_factor = n + 1;
    let mut outputs: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    for (site, coupling) in couplings.iter().enumerate() {
        if coupling.trivial {
            continue;
        }
        st.apply_op(&coupling.matrix, &[site + 1, tr_factor]);
        if let Some((measured, outs)) = &coupling.readout {
            outputs.push((site + 1, measured.clone(), outs.clone()));
        }
    }
    // Keep the output qubits (or the ancilla) and trace the rest.
    if outputs.is_empty() {
        let rho = st.reduced_density(&[tr_factor]);
        return DensityOperator::new(rho, vec![v_dim])
            .map_err(|e| MbqcError::DimensionMismatch(e.to_string()));
    }
    // Expand readout site factors into qubits to reach the output qubits.
    let mut keep: Vec<(usize, usize)> = Vec::new(); // (site factor, qubit)
    for (f, _, outs) in &outputs {
        for &q in outs {
            keep.push((*f, q));
        }
    }
    // Regroup all readout site factors into qubits (descending order keeps
    // earlier indices stable).
    let mut factor_map: Vec<usize> = (0..st.n_factors()).collect();
    let mut st2 = st;
    let mut sites_sorted: Vec<usize> = outputs.iter().map(|(f, _, _)| *f).collect();
    sites_sorted.sort_unstable_by(|a, b| b.cmp(a));
    for f in sites_sorted {
        let dim = st2.dims[f];
        let nq = dim.trailing_zeros() as usize;
        let mut dims = st2.dims.clone();
        dims.splice(f..f + 1, std::iter::repeat(2).take(nq));
        st2 = st2.regrouped(dims);
        for m in factor_map.iter_mut() {
            if *m > f {
                *m += nq - 1;
            }
        }
    }
    let keep_factors: Vec<usize> = keep
        .iter()
        .map(|&(f, q)| factor_map[f] + q)
        .collect();
    let rho = st2.reduced_density(&keep_factors);
    let dims = keep_factors.iter().map(|&f| st2.dims[f]).collect();
    DensityOperator::new(rho, dims).map_err(|e| MbqcError::DimensionMismatch(e.to_string()))
}

/// Dense circuit oracle: the unitaries of the protocol's gate actions
/// applied in order to |0>.
pub fn circuit_oracle(protocol: &Protocol) -> CVec {
    let mut psi = CVec::zeros(2);
    psi[0] = ONE;
    for action in &protocol.actions {
        if let ActionKind::Gate { u } = &action.kind {
            psi = u.dot(&psi);
        }
    }
    psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{disentangler, dual_state};
    use crate::ground::exact_ground_state;
    use crate::models::{cluster_chain_hamiltonian, transverse_field_perturbation, Boundary};
    use crate::tensor::trace_distance;

    fn ground_state_sites(n_sites: usize, b_field: f64) -> DenseState {
        let (h, _, layout) = cluster_chain_hamiltonian(n_sites, Boundary::Terminated).unwrap();
        let h = if b_field != 0.0 {
            h.plus(&transverse_field_perturbation(
                layout.n_qubits,
                &layout.chain_qubits,
                b_field,
            ))
        } else {
            h
        };
        let (states, _) = exact_ground_state(&h, 1).unwrap();
        DenseState::new(states[0].clone(), layout.factor_dims()).unwrap()
    }

    #[test]
    fn contraction_identities_on_cluster_tensor() {
        let ctx = ClusterActions::new();
        for action in [
            ctx.identity(),
            ctx.rotation_z(0.3),
            ctx.rotation_x(1.1),
            ctx.rotation_pair(0.7, -0.4),
            ctx.rotation_z(std::f64::consts::FRAC_PI_2),
            ctx.rotation_x(std::f64::consts::PI),
        ] {
            let resid = ctx.contraction_residual(&action).unwrap();
            assert!(resid < tol::BASIS_RESIDUAL, "{}: residual {resid}", action.label);
            // Basis orthonormality.
            let g = linalg::dag(&action.basis).dot(&action.basis);
            assert!(linalg::max_abs(&(&g - &CMat::eye(4))) < 1e-12);
        }
    }

    #[test]
    fn init_action_structure() {
        let ctx = ClusterActions::new();
        let init = ctx.init();
        // Contractions are rank-1 isometric pieces: A[alpha] = B |0><psi|/sqrt2.
        let a_site = MpsTensor::cluster()
            .physical_basis_change(&linalg::dag(&ctx.u.eigenbasis));
        let mut completeness = CMat::zeros((2, 2));
        for alpha in 0..4 {
            let col = init.basis.column(alpha).to_owned();
            let m = a_site.contract_physical(&col);
            let b = ctx.v.matrix(init.g_byproduct[alpha]);
            // B^dag A[alpha] should be |0><something| / sqrt(2).
            let stripped = linalg::dag(b).dot(&m);
            assert!(stripped[[1, 0]].norm() < 1e-12 && stripped[[1, 1]].norm() < 1e-12);
            completeness = completeness + linalg::dag(&m).dot(&m);
        }
        assert!(linalg::max_abs(&(&completeness - &CMat::eye(2))) < 1e-12);
    }

    fn exact_protocol_output(
        n_sites: usize,
        b_field: f64,
        protocol: &Protocol,
        ctx: &ClusterActions,
    ) -> DensityOperator {
        let psi = ground_state_sites(n_sites, b_field);
        run_adaptive(
            &psi,
            protocol,
            ctx,
            RegisterKind::Terminated { v_dim: 2 },
            RunMode::Enumerate,
        )
        .unwrap()
        .output
    }

    #[test]
    fn exact_cluster_reproduces_circuit() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![
                ctx.init(),
                ctx.rotation_z(0.7),
                ctx.rotation_x(-1.2),
                ctx.rotation_z(2.1),
                ctx.identity(),
                ctx.readout(),
            ],
        };
        let out = exact_protocol_output(6, 0.0, &protocol, &ctx);
        assert!(out.validity_residual() < 1e-10);
        let oracle = circuit_oracle(&protocol);
        let expected = DensityOperator::from_pure(&oracle, vec![2]).unwrap();
        let delta = trace_distance(&out, &expected).unwrap();
        assert!(delta < 1e-10, "trace distance {delta}");
    }

    #[test]
    fn identity_protocol_keeps_init_state() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![
                ctx.init(),
                ctx.identity(),
                ctx.identity(),
                ctx.readout(),
            ],
        };
        let out = exact_protocol_output(4, 0.0, &protocol, &ctx);
        let mut zero = CVec::zeros(2);
        zero[0] = ONE;
        let expected = DensityOperator::from_pure(&zero, vec![2]).unwrap();
        assert!(trace_distance(&out, &expected).unwrap() < 1e-10);
    }

    #[test]
    fn enumerate_output_is_valid_density() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![ctx.init(), ctx.rotation_x(0.9), ctx.readout()],
        };
        let out = exact_protocol_output(3, 0.1, &protocol, &ctx);
        assert!(out.validity_residual() < 1e-9);
    }

    #[test]
    fn sample_average_approaches_enumerate() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![ctx.init(), ctx.rotation_z(1.3), ctx.readout()],
        };
        let psi = ground_state_sites(3, 0.05);
        let exact = run_adaptive(
            &psi,
            &protocol,
            &ctx,
            RegisterKind::Terminated { v_dim: 2 },
            RunMode::Enumerate,
        )
        .unwrap()
        .output;
        let sampled = run_adaptive(
            &psi,
            &protocol,
            &ctx,
            RegisterKind::Terminated { v_dim: 2 },
            RunMode::Sample {
                seed: 42,
                shots: 10_000,
            },
        )
        .unwrap()
        .output;
        let delta = trace_distance(&exact, &sampled).unwrap();
        assert!(delta < 0.05, "trace distance {delta}");
    }

    #[test]
    fn byproduct_pushing_identity() {
        // Measuring an identity site with the |+-> outcome and correcting
        // with u(x) on the right equals the uncorrected branch with X
        // inserted on the bond.
        let ctx = ClusterActions::new();
        let a = MpsTensor::cluster();
        let x_elem = ctx.u.group.from_exponents(&[1, 0]);
        debug_assert_eq!(ctx.g_map[1], x_elem);
        // Tensor identity: V(x) A[i] = A[u(x) i-relabeled] V(x), i.e.
        // pushing X through a site flips the x-character labels.
        let vx = ctx.v.matrix(x_elem);
        for i in 0..4 {
            let lhs = vx.dot(a.matrix(i));
            // u(x) flips the z-label? No: conjugating the physical leg by
            // u(x) in the eigenbasis multiplies by chi_i(x); the pushed
            // matrix picks the commutation sign instead:
            let chi = ctx.u.characters[[i, x_elem]];
            let rhs = a.matrix(i).dot(vx).mapv(|z| z * chi);
            assert!(
                linalg::max_abs(&(&lhs - &rhs)) < 1e-12,
                "push identity fails at i = {i}"
            );
        }
    }

    #[test]
    fn couplings_identity_and_gate_structure() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![ctx.identity(), ctx.rotation_z(0.8), ctx.init()],
        };
        let couplings = build_couplings(&protocol, &ctx).unwrap();
        assert!(couplings[0].trivial);
        assert!(linalg::max_abs(&(&couplings[0].matrix - &CMat::eye(8))) < 1e-12);
        for c in &couplings {
            assert!(linalg::is_unitary(&c.matrix, 1e-10));
        }
        // Gate coupling acting on the cluster dual site state |00> applies
        // the gate on the ancilla: Tr_site[G (sigma ⊗ phi)(.)^dag] = U sigma U^dag.
        let phi = {
            let mut v = CVec::zeros(4);
            v[0] = ONE;
            v
        };
        let u_gate = match &protocol.actions[1].kind {
            ActionKind::Gate { u } => u.clone(),
            _ => unreachable!(),
        };
        let g = &couplings[1].matrix;
        for (name, sigma) in [
            ("plus", {
                let s = 1.0 / 2f64.sqrt();
                CVec::from_vec(vec![C64::new(s, 0.0), C64::new(s, 0.0)])
            }),
            ("zero", {
                let mut v = CVec::zeros(2);
                v[0] = ONE;
                v
            }),
        ] {
            // Build (phi ⊗ sigma) in (site, ancilla) order.
            let joint = linalg::kron_vec(&phi, &sigma);
            let st = DenseState::new(joint, vec![4, 2]).unwrap();
            let mut st2 = st.clone();
            st2.apply_op(g, &[0, 1]);
            let anc = st2.reduced_density(&[1]);
            let expect = {
                let us = u_gate.dot(&sigma);
                let mut m = CMat::zeros((2, 2));
                for r in 0..2 {
                    for c in 0..2 {
                        m[[r, c]] = us[r] * us[c].conj();
                    }
                }
                m
            };
            assert!(
                linalg::max_abs(&(&anc - &expect)) < 1e-10,
                "{name}: gate does not act on the ancilla"
            );
        }
    }

    #[test]
    fn init_coupling_resets_ancilla() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![ctx.init()],
        };
        let couplings = build_couplings(&protocol, &ctx).unwrap();
        let g = &couplings[0].matrix;
        let phi = {
            let mut v = CVec::zeros(4);
            v[0] = ONE;
            v
        };
        // Arbitrary ancilla state gets reset to |0>.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = linalg::random_unit_vector(&mut rng, 2);
        let joint = linalg::kron_vec(&phi, &sigma);
        let mut st = DenseState::new(joint, vec![4, 2]).unwrap();
        st.apply_op(g, &[0, 1]);
        let anc = st.reduced_density(&[1]);
        assert!((anc[[0, 0]].re - 1.0).abs() < 1e-10, "ancilla {anc:?}");
        // Applied twice through two sites: still |0>.
        let protocol2 = Protocol {
            actions: vec![ctx.init(), ctx.init()],
        };
        let _ = protocol2.validate().unwrap_err();
    }

    #[test]
    fn adaptive_equals_dual_process_exact_cluster() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![
                ctx.init(),
                ctx.rotation_z(0.9),
                ctx.identity(),
                ctx.rotation_x(0.4),
                ctx.readout(),
            ],
        };
        let n = protocol.actions.len();
        let psi = ground_state_sites(n, 0.0);
        let adaptive = run_adaptive(
            &psi,
            &protocol,
            &ctx,
            RegisterKind::Terminated { v_dim: 2 },
            RunMode::Enumerate,
        )
        .unwrap()
        .output;
        let dis = disentangler(n, &ctx.g_map, &ctx.v, &ctx.u);
        let (bulk, _) = dual_state(&psi, &dis).unwrap();
        let couplings = build_couplings(&protocol, &ctx).unwrap();
        let dual_out = dual_process(&bulk, &couplings, 2).unwrap();
        let delta = trace_distance(&adaptive, &dual_out).unwrap();
        assert!(delta < 1e-10, "trace distance {delta}");
    }

    #[test]
    fn adaptive_equals_dual_process_perturbed() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![
                ctx.init(),
                ctx.rotation_x(1.0),
                ctx.rotation_z(-0.6),
                ctx.readout(),
            ],
        };
        let n = protocol.actions.len();
        for b in [0.05, 0.1] {
            let psi = ground_state_sites(n, b);
            let adaptive = run_adaptive(
                &psi,
                &protocol,
                &ctx,
                RegisterKind::Terminated { v_dim: 2 },
                RunMode::Enumerate,
            )
            .unwrap()
            .output;
            let dis = disentangler(n, &ctx.g_map, &ctx.v, &ctx.u);
            let (bulk, _) = dual_state(&psi, &dis).unwrap();
            let couplings = build_couplings(&protocol, &ctx).unwrap();
            let dual_out = dual_process(&bulk, &couplings, 2).unwrap();
            let delta = trace_distance(&adaptive, &dual_out).unwrap();
            assert!(delta < 1e-10, "B = {b}: trace distance {delta}");
        }
    }

    #[test]
    fn all_identity_couplings_leave_ancilla_untouched() {
        let ctx = ClusterActions::new();
        let protocol = Protocol {
            actions: vec![ctx.identity(), ctx.identity()],
        };
        let psi = ground_state_sites(2, 0.1);
        let dis = disentangler(2, &ctx.g_map, &ctx.v, &ctx.u);
        let (bulk, _) = dual_state(&psi, &dis).unwrap();
        let couplings = build_couplings(&protocol, &ctx).unwrap();
        let out = dual_process(&bulk, &couplings, 2).unwrap();
        // Ancilla = maximally mixed half of |I>.
        let expect = CMat::eye(2).mapv(|z| z * 0.5);
        assert!(linalg::max_abs(&(&out.mat - &expect)) < 1e-10);
    }
}
