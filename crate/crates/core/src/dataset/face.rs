use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use super::{DatasetError, Result};

/// Canonical face crop edge length.
pub const FACE_SIZE: usize = 224;

/// 8-bit RGB raster, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for FaceImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FaceImage({}x{})", self.width, self.height)
    }
}

impl FaceImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> std::result::Result<Self, String> {
        if data.len() != width * height * 3 {
            return Err(format!("{} bytes do not form a {width}x{height} RGB image", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Values of one channel as `f64`, row-major.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect()
    }

    pub fn same_shape(&self, other: &FaceImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn validate_canonical(&self) -> std::result::Result<(), String> {
        if self.width != FACE_SIZE || self.height != FACE_SIZE {
            return Err(format!("expected {FACE_SIZE}x{FACE_SIZE} image, found {}x{}", self.width, self.height));
        }
        Ok(())
    }

    pub fn decode_png(bytes: &[u8], location: &str) -> Result<Self> {
        let img = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
            .decode()
            .map_err(|e| DatasetError::ParseError { location: location.to_string(), message: e.to_string() })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: img.into_raw() })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out)
            .write_image(&self.data, self.width as u32, self.height as u32, ExtendedColorType::Rgb8)
            .expect("in-memory PNG encoding");
        out
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
        Self::decode_png(&bytes, &path.display().to_string())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()).map_err(|e| DatasetError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = FaceImage::from_fn(7, 5, |x, y| [x as u8 * 30, y as u8 * 50, (x + y) as u8]);
        let back = FaceImage::decode_png(&img.encode_png(), "mem").unwrap();
        assert_eq!(back, img);
        assert_eq!(img.pixel(3, 2), [90, 100, 5]);
        assert_eq!(img.channel(1).len(), 35);
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(FaceImage::decode_png(b"not a png", "mem"), Err(DatasetError::ParseError { .. })));
        assert!(FaceImage::new(2, 2, vec![0; 11]).is_err());
        assert!(FaceImage::filled(10, 10, [1, 2, 3]).validate_canonical().is_err());
    }
}
