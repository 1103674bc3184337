//! Simulation and verification toolkit for measurement-based quantum
//! computation (MBQC) on symmetry-protected (SPT) ground states.
//!
//! The crate builds perturbed cluster models, extracts their SPT structure
//! (projective representations, protected/junk bond decomposition), constructs
//! the topological disentangler and the dual state, simulates the adaptive
//! measurement protocol together with its non-adaptive dual process, and
//! extracts the effective per-gate noise channels with their norm bounds.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`symmetry`] — finite abelian groups, factor systems, projective irreps
//! * [`pauli`] — symbolic Pauli strings and controlled-Z conjugation
//! * [`tensor`] — MPS tensors, transfer channels, density operators, norms
//! * [`state`] — dense multi-factor state vectors
//! * [`models`] — cluster chains, the quasi-1D model, 2-D layouts and duality
//! * [`ground`] — exact diagonalization, Condition-1 checks, tensor synthesis
//! * [`dmrg`] — variational finite-MPS ground-state sweeps
//! * [`dual`] — protected decomposition, disentangler, dual state/Hamiltonian
//! * [`mbqc`] — measurement protocols, adaptive runs, the dual process
//! * [`mbqc2d`] — remapping protocols onto the 2-D cluster state
//! * [`noise`] — effective channels, diamond-norm bounds, factorization sweeps
//! * [`config`], [`io`] — experiment configs, CSV/report emission

pub mod config;
pub mod dmrg;
pub mod dual;
pub mod ground;
pub mod io;
pub mod linalg;
pub mod mbqc;
pub mod mbqc2d;
pub mod models;
pub mod noise;
pub mod pauli;
pub mod state;
pub mod symmetry;
pub mod tensor;
pub mod tol;

pub use num_complex::Complex64;
