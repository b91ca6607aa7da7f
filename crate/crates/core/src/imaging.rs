//! Image decoding, classifier preprocessing and relevance heatmaps.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::nn::COVER_INPUT_SIZE;
use crate::{Scalar, Tensor};

/// 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        ensure!(width > 0 && height > 0, "image dimensions must be positive, got {width}x{height}");
        ensure!(
            pixels.len() == width * height * 3,
            "pixel buffer holds {} bytes, {width}x{height} RGB needs {}",
            pixels.len(),
            width * height * 3
        );
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self::new(width, height, rgb.repeat(width * height)).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decodes PNG or JPEG (any format the `image` crate was built with).
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::format::write_atomic(path, &self.to_png_bytes()?)
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 20);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a P6 file with maxval 255 (comments allowed in the header).
    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self> {
        let mut fields = Vec::new();
        let mut token = String::new();
        let mut byte = [0u8; 1];
        while fields.len() < 4 {
            input.read_exact(&mut byte)?;
            match byte[0] {
                b'#' if token.is_empty() => {
                    let mut skip = String::new();
                    input.read_line(&mut skip)?;
                }
                c if c.is_ascii_whitespace() => {
                    if !token.is_empty() {
                        fields.push(std::mem::take(&mut token));
                    }
                }
                c => token.push(c as char),
            }
        }
        if fields[0] != "P6" {
            return Err(Error::Format(format!("not a binary PPM (magic {:?})", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM header field {s:?}")));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
        }
        let mut pixels = vec![0u8; w * h * 3];
        input.read_exact(&mut pixels)?;
        Self::new(w, h, pixels)
    }
}

/// Bilinear resample to `out_w × out_h` with pixel centres aligned
/// (`src = (dst + 0.5) * in / out - 0.5`, clamped to the edge). Returns
/// unquantised channel values in `[0, 255]` as `out_h × out_w × 3`.
pub fn resample_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = axis(out_w, img.width);
    let ys = axis(out_h, img.height);
    let px = |x: usize, y: usize, c: usize| img.pixels[(y * img.width + x) * 3 + c] as f64;
    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..3 {
                let (p00, p01, p10, p11) = (px(x0, y0, c), px(x1, y0, c), px(x0, y1, c), px(x1, y1, c));
                let top = p00 + tx * (p01 - p00);
                let bottom = p10 + tx * (p11 - p10);
                out.push(top + ty * (bottom - top));
            }
        }
    }
    out
}

/// Resample to `size × size` and map channel values from `[0, 255]` to `[-1, 1]`.
pub fn preprocess_to<T: Scalar>(img: &RasterImage, size: usize) -> Tensor<T> {
    let data = resample_bilinear(img, size, size)
        .into_iter()
        .map(|p| T::from_f64((p / 127.5 - 1.0).clamp(-1.0, 1.0)))
        .collect();
    Tensor::new(vec![size, size, 3], data).expect("resampled buffer has the target shape")
}

/// Classifier input: 112×112×3 with values in `[-1, 1]`.
pub fn preprocess<T: Scalar>(img: &RasterImage) -> Tensor<T> {
    preprocess_to(img, COVER_INPUT_SIZE)
}

/// Bilinear resize quantised back to 8 bits (rounded half up).
pub fn resize(img: &RasterImage, width: usize, height: usize) -> RasterImage {
    let pixels = resample_bilinear(img, width, height).into_iter().map(|v| (v + 0.5).floor() as u8).collect();
    RasterImage::new(width, height, pixels).expect("resampled buffer has the target size")
}

fn channel(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Colour for a relevance value already divided by the map's max |R|:
/// white at 0, pure red at +1, pure blue at -1.
pub fn diverging_color(t: f64) -> [u8; 3] {
    if t >= 0.0 {
        let fade = channel(255.0 * (1.0 - t.min(1.0)));
        [255, fade, fade]
    } else {
        let fade = channel(255.0 * (1.0 + t.max(-1.0)));
        [fade, fade, 255]
    }
}

/// Renders an `H×W` relevance map: positive relevance red, negative blue,
/// normalised by the largest magnitude. An all-zero map is all white.
pub fn render_heatmap<T: Scalar>(map: &Tensor<T>) -> Result<RasterImage> {
    ensure!(map.rank() == 2, "heatmap needs an H×W map, got {:?}", map.shape());
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let scale = map.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let mut pixels = Vec::with_capacity(h * w * 3);
    for v in map.data() {
        let rgb = if scale > 0.0 && scale.is_finite() { diverging_color(v.as_f64() / scale) } else { [255; 3] };
        pixels.extend_from_slice(&rgb);
    }
    RasterImage::new(w, h, pixels)
}

/// Per-pixel blend `(1 - opacity) * image + opacity * heatmap`.
pub fn composite<T: Scalar>(img: &RasterImage, map: &Tensor<T>, opacity: f64) -> Result<RasterImage> {
    ensure!((0.0..=1.0).contains(&opacity), "opacity {opacity} outside [0, 1]");
    let heat = render_heatmap(map)?;
    ensure!(
        heat.width == img.width && heat.height == img.height,
        "map is {}x{} but image is {}x{}",
        heat.width,
        heat.height,
        img.width,
        img.height
    );
    let pixels = img
        .pixels
        .iter()
        .zip(&heat.pixels)
        .map(|(&a, &b)| channel((1.0 - opacity) * a as f64 + opacity * b as f64))
        .collect();
    RasterImage::new(img.width, img.height, pixels)
}

/// Grid of `cell`-sized squares coloured by value; `None` cells are grey.
pub fn render_grid(values: &[Vec<Option<f64>>], cell: usize) -> Result<RasterImage> {
    ensure!(cell > 0, "cell size must be positive");
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    ensure!(rows > 0 && cols > 0, "grid has no cells");
    ensure!(values.iter().all(|r| r.len() == cols), "ragged grid");
    let scale = values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut img = RasterImage::filled(cols * cell, rows * cell, [255; 3]);
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let rgb = match v {
                None => [192; 3],
                Some(v) if scale > 0.0 => diverging_color(v / scale),
                Some(_) => [255; 3],
            };
            for y in r * cell..(r + 1) * cell {
                for x in c * cell..(c + 1) * cell {
                    img.set_pixel(x, y, rgb);
                }
            }
        }
    }
    Ok(img)
}
