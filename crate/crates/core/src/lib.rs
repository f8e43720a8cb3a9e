//! Physics-informed neural networks for stiff one-dimensional PDEs.
//!
//! A small `tanh` MLP is trained on viscous Burgers' and Allen–Cahn under fixed
//! loss weights, gradient-norm adaptive weighting, and adaptive weighting with
//! one residual-driven collocation refresh. Finite-difference references (and a
//! Cole–Hopf quadrature oracle for Burgers) grade every run.

pub mod balance;
pub mod colloc;
pub mod derivnet;
pub mod loss;
pub mod problems;
pub mod refsolve;
pub mod report;
pub mod tape;
pub mod train;
