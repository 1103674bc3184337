//! Numerical tolerances used across the crate.
//!
//! Kept in one place so tests and library code agree on what "exact" means
//! at each precision tier.

/// Absolute tolerance on matrix entries for unitarity / defining relations.
pub const UNITARY: f64 = 1e-10;

/// Residual tolerance for symmetry commutators of model builders.
pub const SYMMETRY: f64 = 1e-12;

/// Residual tolerance for protected-decomposition extraction.
pub const DECOMPOSITION: f64 = 1e-8;

/// Leading twisted-transfer eigenvalue must exceed `1 - IN_PHASE_GAP`.
pub const IN_PHASE_GAP: f64 = 1e-6;

/// Schmidt residual above which a disentangled state counts as unfactorized.
pub const FACTORIZATION: f64 = 1e-6;

/// Energy gap below which eigensolver output counts as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-7;

/// Relative eigensolver residual target: `||Hv - Ev|| <= RESIDUAL * ||H||`.
pub const SOLVER_RESIDUAL: f64 = 1e-9;

/// Gap floor for path sweeps; below this the sweep reports `GapClosed`.
pub const GAP_FLOOR: f64 = 1e-3;

/// Contraction-identity residual for measurement bases.
pub const BASIS_RESIDUAL: f64 = 1e-12;

/// Enumeration prunes measurement branches below this probability.
pub const BRANCH_PRUNE: f64 = 1e-14;

/// Any dense operation may materialize at most this many amplitudes.
pub const DENSIFY_CAP: usize = 1 << 22;
