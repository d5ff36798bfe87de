//! Frame output: 8-bit RGB PNGs and float depth maps.

use ghead_core::error::{CoreError, Result};
use ghead_core::tensor::Tensor;
use std::path::Path;

/// Quantize a [0,1] value to u8 with rounding.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a [3,H,W] tensor in [0,1] as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, rgb: &Tensor) -> Result<()> {
    assert_eq!(rgb.shape().len(), 3);
    assert_eq!(rgb.shape()[0], 3);
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let plane = h * w;
    let mut buf = vec![0u8; plane * 3];
    for p in 0..plane {
        for d in 0..3 {
            buf[p * 3 + d] = to_u8(rgb.data()[d * plane + p]);
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(path, e))?;
        }
    }
    image::save_buffer(
        path,
        &buf,
        w as u32,
        h as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| CoreError::io(path, std::io::Error::other(e)))
}

/// Read an 8-bit RGB PNG into a [3,H,W] tensor in [0,1].
pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| CoreError::io(path, std::io::Error::other(e)))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut out = Tensor::zeros(&[3, h, w]);
    for (p, px) in img.pixels().enumerate() {
        for d in 0..3 {
            out.data_mut()[d * plane + p] = px.0[d] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Write a [H,W] depth map in the raw tensor container.
pub fn write_depth(path: &Path, depth: &Tensor) -> Result<()> {
    assert_eq!(depth.shape().len(), 2);
    let data: Vec<f32> = depth.data().iter().map(|&v| v as f32).collect();
    ghead_core::io::write_tensor_f32(path, depth.shape(), &data)
}
