//! 8-bit PNG/PGM exchange. Images load as `(1, c, h, w)` tensors in `[0, 1]`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Grayscale files load with one channel, everything else as RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = image::open(path.as_ref())?;
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Tensor::from_vec([1, 1, h as usize, w as usize], g.into_raw().into_iter().map(to_unit).collect())?
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let (h, w) = (h as usize, w as usize);
            let raw = rgb.into_raw();
            Tensor::from_fn([1, 3, h, w], |_, c, y, x| to_unit(raw[(y * w + x) * 3 + c]))
        }
    })
}

fn to_unit(v: u8) -> f32 {
    f32::from(v) / 255.0
}

/// Rounds to the nearest 8-bit level after clamping to `[0, 1]`.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first batch item; the format follows the file extension.
pub fn save_image(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let s = image.shape();
    let (w, h) = (s.w as u32, s.h as u32);
    let item = image.batch_item(0);
    match s.c {
        1 => {
            let buf: Vec<u8> = item.data().iter().map(|&v| to_u8(v)).collect();
            GrayImage::from_raw(w, h, buf)
                .expect("buffer sized from shape")
                .save(path.as_ref())?;
        }
        3 => {
            let mut buf = Vec::with_capacity(s.h * s.w * 3);
            for y in 0..s.h {
                for x in 0..s.w {
                    for c in 0..3 {
                        buf.push(to_u8(item.at(0, c, y, x)));
                    }
                }
            }
            RgbImage::from_raw(w, h, buf)
                .expect("buffer sized from shape")
                .save(path.as_ref())?;
        }
        c => return Err(Error::invalid(format!("cannot save an image with {c} channels"))),
    }
    Ok(())
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Pads bottom/right by mirror reflection (edge pixel not repeated).
pub fn reflect_pad(image: &Tensor<f32>, pad_h: usize, pad_w: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if (pad_h > 0 && pad_h >= s.h) || (pad_w > 0 && pad_w >= s.w) {
        return Err(Error::invalid(format!(
            "reflective pad {pad_h}x{pad_w} needs an image larger than the pad, got {}x{}",
            s.h, s.w
        )));
    }
    let reflect = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    Ok(Tensor::from_fn([s.n, s.c, s.h + pad_h, s.w + pad_w], |n, c, y, x| {
        image.at(n, c, reflect(y, s.h), reflect(x, s.w))
    }))
}

/// Top-left `h x w` window.
pub fn crop(image: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let s = image.shape();
    Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| image.at(n, c, y, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_levels() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = Tensor::from_fn([1, c, 5, 7], |_, c, y, x| ((c * 50 + y * 7 + x * 3) % 256) as f32 / 255.0);
            let path = dir.path().join(format!("img{c}.png"));
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
        assert_eq!(list_images(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn pgm_loads_as_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn reflect_pad_then_crop() {
        let img = Tensor::from_fn([1, 1, 3, 3], |_, _, y, x| (y * 3 + x) as f32);
        let padded = reflect_pad(&img, 1, 2).unwrap();
        assert_eq!(padded.shape().dims(), [1, 1, 4, 5]);
        assert_eq!(padded.at(0, 0, 3, 0), img.at(0, 0, 1, 0));
        assert_eq!(padded.at(0, 0, 0, 4), img.at(0, 0, 0, 0));
        assert_eq!(crop(&padded, 3, 3), img);
    }
}
