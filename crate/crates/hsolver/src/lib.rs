//! Hierarchical approximate-factorization solver for sparse SPD systems:
//! compress well-separated interactions, extend with auxiliary unknowns,
//! eliminate, level by level — with guaranteed-convergence variants that
//! preserve chosen vectors exactly through the factorization.

pub mod error;

pub mod bench;
pub mod dense;
pub mod diagnostics;
pub mod factor;
pub mod hierarchy;
pub mod krylov;
pub mod problems;
pub mod solve;
pub mod sparse;
