//! Desk-scale engine for index computations on Lie groupoids and their Lie
//! algebroids: exact finite-groupoid cyclic theory, Chevalley–Eilenberg
//! cohomology, star products on `A*`, characteristic forms on `π!A`, and
//! brute-force operator oracles for the analytic side.

pub mod algebroid;
pub mod charclass_index;
pub mod germ_vanest;
pub mod groupoid_finite;
pub mod linalg;
pub mod oracle_ops;
pub mod quantize;
pub mod scalars;
