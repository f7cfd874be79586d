//! Multi-level wavelet CNN (MWCNN) for image restoration.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `(n, c, h, w)` tensors and the seeded ChaCha8 stream
//! - [`wavelet`]: 2-D DWT/IWT as stride-2 subband correlations, and the
//!   multi-level wavelet packet transform
//! - [`layers`]: convolution, batch norm, ReLU, pooling, He init and ADAM,
//!   each with a reverse-mode backward driven by a [`layers::Tape`]
//! - [`model`]: the contracting/expanding MWCNN graph, its ablation variants
//!   and receptive-field masks
//! - [`train`]: Gaussian-denoising training loop and checkpoints
//! - [`io`]: PNM images, PSNR/SSIM and key=value configs
//! - [`oracle`]: brute-force f64 references used by tests and `selfcheck`

pub mod error;
pub mod io;
pub mod layers;
pub mod model;
pub mod oracle;
pub mod par;
pub mod selfcheck;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Real, Rng, Tensor4};
