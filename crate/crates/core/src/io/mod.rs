//! Images, quality metrics and configuration files.

pub mod config;
pub mod metrics;
pub mod pnm;

pub use config::{parse_kv, KvMap, RunConfig};
pub use metrics::{psnr, psnr_slices, psnr_u8, ssim_plane, ssim_u8};
pub use pnm::{
    decode_pnm, encode_pnm, quantize, read_gray_tensor, read_pnm, write_pnm, ImageU8, PnmFormat,
};
