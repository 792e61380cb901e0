//! Frozen Monte Carlo values for the built-in well-behaved DGP.

/// Master seed shared by the acceptance runs.
pub const SEED: u64 = 20160601;

// sim::truth(dgp_a, ·, 10^7, SEED)
pub const TSM1: f64 = 0.5677642141581137;
pub const TSM0: f64 = 0.4105650900906166;
pub const ATE: f64 = 0.15719912406743022;
pub const TSM1_MC_SE: f64 = 4.7015745913122904e-5;
pub const TSM0_MC_SE: f64 = 4.7727864291301355e-5;
pub const ATE_MC_SE: f64 = 3.134657434239699e-5;

// Var(D*(P0)) from sim::truth(dgp_a, ·, 10^6, SEED)
pub const VAR_TSM1: f64 = 0.49335034741397626;
pub const VAR_TSM0: f64 = 0.5403194387189035;
pub const COV_TSM: f64 = 0.017538750627635085;
pub const VAR_ATE: f64 = 0.9985922848776152;
