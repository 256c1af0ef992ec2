//! Region normalization for image inpainting.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: a small NCHW tensor engine with a reverse-mode tape.
//! * [`masks`]: binary region masks (1 = known pixel, 0 = hole).
//! * [`norm`]: region normalization (basic and learnable variants), the
//!   instance/batch norm baselines and the mean/variance shift analysis.
//! * [`inpaintnet`]: encoder / residual / decoder generator with a
//!   normalization slot per stage, the PatchGAN critic, losses and checkpoints.
//! * [`metrics`]: PSNR, SSIM and l1 percentage.
//! * [`pipeline`]: configuration, datasets and the experiment runners behind
//!   the `regionnorm` binary.

pub mod error;
pub mod inpaintnet;
pub mod masks;
pub mod metrics;
pub mod norm;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use masks::RegionMask;
pub use tensor::{Element, Shape, Tape, Tensor, Var};
