//! Hand-eye (AX = XB) calibration and kinematic-error correction fitting.

mod correction;
mod handeye;
mod kabsch;

pub use correction::{fit_correction, CorrectionFit};
pub use handeye::{
    build_motion_pairs, pair_residual, solve_handeye, HandEyeFit, MotionPair,
    MIN_AXIS_SPREAD_DEG, MIN_MOTION_DEG,
};
pub use kabsch::{kabsch_umeyama, rigid_fit, PointPairSet};
