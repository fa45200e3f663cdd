//! Parallel-MRI reconstruction built on electromagnetic field bases.
//!
//! The toolkit covers the full pipeline:
//!
//! * [`grid`] — field-of-view geometry, voxel supports, Larmor constants.
//! * [`fields`] — free-space dipole fields sampled on the grid.
//! * [`basis`] — low-dimensional bases for receive-coil sensitivity maps,
//!   built from randomized superpositions of boundary dipole fields.
//! * [`tucker`] — Tucker (HOSVD) compression of a stacked basis tensor.
//! * [`encoding`] — k-space trajectories, Fourier encoding operators, the
//!   multi-coil forward model, and noise utilities.
//! * [`irgn`] — joint density/sensitivity estimation by iteratively
//!   regularized Gauss-Newton on the bilinear forward model, with coil maps
//!   constrained to the span of a field basis.
//! * [`admm`] — parameter-free density reconstruction with total-variation
//!   regularization under per-coil noise-ball constraints, solved by ADMM.
//! * [`phantom`] — analytic test objects and synthetic coil maps.
//! * [`metrics`] — scale-invariant error measures.
//! * [`io`] — the MPIB container format and grayscale image emission.

pub mod admm;
pub mod basis;
pub mod encoding;
pub mod error;
pub mod fields;
pub mod grid;
pub mod io;
pub mod irgn;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod tucker;

pub use error::{Error, Result};
pub use grid::{FovGrid, Support};

/// Complex scalar used throughout: double-precision Cartesian complex.
pub type C64 = num_complex::Complex64;
