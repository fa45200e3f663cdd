//! Persistence: the MPIB artifact container and grayscale image emission.

pub mod image;
pub mod mpib;

pub use image::{emit_image, image_pixels, pgm_bytes, ImageMode};
pub use mpib::{
    crc32, find_basis, find_density, find_grid, find_kspace, find_maps, find_traj, find_tucker,
    mpib_bytes, parse_mpib, read_mpib, write_mpib, Block, MPIB_MAGIC, MPIB_VERSION,
};
