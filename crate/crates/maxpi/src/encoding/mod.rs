//! k-space sampling, Fourier encoding, and acquisition simulation.

pub mod fourier;
pub mod model;
pub mod trajectory;

pub use fourier::{fft_centered, ifft_centered, FourierOp};
pub use model::{add_noise, estimate_eps, forward_model, noise_ball_radius, KSpaceData};
pub use trajectory::{
    default_caipi_shift, make_trajectory, CartesianMask, PoissonDiscMask, RadialTraj, Trajectory,
    TrajectorySpec, GOLDEN_ANGLE,
};
