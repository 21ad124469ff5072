//! Dense row-major image buffers used by every channel of the pipeline.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use thiserror::Error;

pub type Rgb3 = [f64; 3];

/// Three-channel image with values nominally in `[0, 1]`.
pub type RgbImage = Image<Rgb3>;
/// Single-channel image (depth in meters, silhouette, ...).
pub type GrayImage = Image<f64>;
/// Per-pixel label ids.
pub type LabelImage = Image<u32>;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions {0}x{1} do not match expected {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("buffer length {len} does not match {width}x{height}")]
    BadLength { len: usize, width: usize, height: usize },
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("image {path} has unexpected pixel format {format}")]
    Format { path: String, format: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadLength { len: data.len(), width, height });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_dims<U>(&self, other: &Image<U>) -> Result<(), ImageError> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(ImageError::DimMismatch(other.width, other.height, self.width, self.height))
        }
    }
}

impl<T: Copy + Default> Image<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::default())
    }
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb8(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(img.width as u32, img.height as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb([quantize_u8(c[0]), quantize_u8(c[1]), quantize_u8(c[2])])
    });
    buf.save(path).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
}

pub fn write_gray8(img: &GrayImage, path: &Path) -> Result<(), ImageError> {
    let buf = ImageBuffer::<Luma<u8>, _>::from_fn(img.width as u32, img.height as u32, |x, y| {
        Luma([quantize_u8(img.get(x as usize, y as usize))])
    });
    buf.save(path).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
}

/// Writes `value * units_per_unit` rounded and clamped to the u16 range.
pub fn write_gray16(img: &GrayImage, units_per_meter: f64, path: &Path) -> Result<(), ImageError> {
    let buf = ImageBuffer::<Luma<u16>, _>::from_fn(img.width as u32, img.height as u32, |x, y| {
        let v = img.get(x as usize, y as usize);
        let q = if v.is_finite() && v > 0.0 { (v * units_per_meter).round().min(65535.0) } else { 0.0 };
        Luma([q as u16])
    });
    buf.save(path).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
}

fn open(path: &Path) -> Result<image::DynamicImage, ImageError> {
    image::open(path).map_err(|source| ImageError::Read { path: path.display().to_string(), source })
}

pub fn read_rgb8(path: &Path) -> Result<RgbImage, ImageError> {
    let dynimg = open(path)?;
    let rgb = match dynimg {
        image::DynamicImage::ImageRgb8(b) => b,
        other => {
            return Err(ImageError::Format {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    Ok(Image::from_fn(w as usize, h as usize, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }))
}

/// Reads a 16-bit single-channel image, dividing raw values by `units_per_meter`.
/// Zero raw values decode to 0 (invalid depth).
pub fn read_gray16(path: &Path, units_per_meter: f64) -> Result<GrayImage, ImageError> {
    let dynimg = open(path)?;
    let gray = match dynimg {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(ImageError::Format {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    Ok(Image::from_fn(w as usize, h as usize, |x, y| {
        gray.get_pixel(x as u32, y as u32).0[0] as f64 / units_per_meter
    }))
}

pub fn read_gray8(path: &Path) -> Result<GrayImage, ImageError> {
    let dynimg = open(path)?;
    let gray = match dynimg {
        image::DynamicImage::ImageLuma8(b) => b,
        other => {
            return Err(ImageError::Format {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    Ok(Image::from_fn(w as usize, h as usize, |x, y| {
        gray.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
    }))
}
