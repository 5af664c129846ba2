//! Classical image kernels: colour conversion, bicubic resampling, the
//! multiple-of-8 ground-truth fix, PSNR/SSIM and Sobel/Canny edges.

mod buffer;
mod color;
mod edges;
mod io;
mod metrics;
mod resize;

pub use buffer::{EdgeMap, ImageBuffer, Plane};
pub use color::{luma_255, rgb_to_y};
pub use edges::{canny, canny_relative, gaussian_blur, gaussian_kernel, sobel_gradients, SobelOutput};
pub use io::{load_png, save_edge_png, save_png};
pub use metrics::{psnr, ssim, PSNR_INF_LABEL};
pub use resize::{bicubic_resize, cubic_kernel, degrade_pair, offset_fix, resample_weights};
