//! 8-bit grayscale and RGB rasters, netpbm (P5/P6) and PNG I/O, resampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Sub-image `[left, right) × [top, bottom)`; bounds must lie inside.
    pub fn crop(&self, left: usize, top: usize, right: usize, bottom: usize) -> GrayImage {
        assert!(left <= right && right <= self.width && top <= bottom && bottom <= self.height);
        let mut pixels = Vec::with_capacity((right - left) * (bottom - top));
        for y in top..bottom {
            pixels.extend_from_slice(&self.pixels[y * self.width + left..y * self.width + right]);
        }
        GrayImage {
            width: right - left,
            height: bottom - top,
            pixels,
        }
    }

    pub fn mirrored(&self) -> GrayImage {
        let mut out = self.clone();
        for row in out.pixels.chunks_mut(self.width.max(1)) {
            row.reverse();
        }
        out
    }

    /// Bilinear resampling with pixel-centre alignment and edge clamping.
    /// Returns row-major intensities on the 0–255 scale.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Vec<f32> {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |i: usize, scale: f64, extent: usize| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, pos - lo as f64)
        };
        let cols: Vec<_> = (0..width).map(|x| axis(x, sx, self.width)).collect();
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for &(x0, x1, fx) in &cols {
                let p = |x: usize, y: usize| self.get(x, y) as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
        out
    }

    pub fn resized(&self, width: usize, height: usize) -> GrayImage {
        let pixels = self
            .resize_bilinear(width, height)
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage { width, height, pixels }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
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

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

fn netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad number in netpbm header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing separator after netpbm header".into()));
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, pos + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (w, h, offset) = netpbm_header(bytes, b"P5")?;
    let raster = bytes
        .get(offset..offset + w * h)
        .ok_or_else(|| Error::Format("truncated P5 raster".into()))?;
    GrayImage::from_raw(w, h, raster.to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, offset) = netpbm_header(bytes, b"P6")?;
    let raster = bytes
        .get(offset..offset + w * h * 3)
        .ok_or_else(|| Error::Format("truncated P6 raster".into()))?;
    RgbImage::from_raw(w, h, raster.to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_png_gray(img: &GrayImage) -> Result<Vec<u8>> {
    encode_png(img.width, img.height, png::ColorType::Grayscale, &img.pixels)
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    encode_png(img.width, img.height, png::ColorType::Rgb, &img.pixels)
}

/// Decodes an 8-bit PNG to grayscale; colour inputs are converted with
/// integer Rec. 601 luma weights.
pub fn decode_png_gray(bytes: &[u8]) -> Result<GrayImage> {
    let fmt = |e: png::DecodingError| Error::Format(e.to_string());
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let luma = |r: u8, g: u8, b: u8| ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8;
    let pixels = match info.color_type {
        png::ColorType::Grayscale => data.to_vec(),
        png::ColorType::GrayscaleAlpha => data.chunks(2).map(|p| p[0]).collect(),
        png::ColorType::Rgb => data.chunks(3).map(|p| luma(p[0], p[1], p[2])).collect(),
        png::ColorType::Rgba => data.chunks(4).map(|p| luma(p[0], p[1], p[2])).collect(),
        png::ColorType::Indexed => return Err(Error::Format("unexpanded palette image".into())),
    };
    GrayImage::from_raw(w, h, pixels)
}

/// Reads a grayscale image, PGM (P5) or PNG, chosen by content.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = if bytes.starts_with(b"\x89PNG") {
        decode_png_gray(&bytes)
    } else {
        decode_pgm(&bytes)
    };
    decoded.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes grayscale as PNG when the extension is `.png`, else as PGM.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = if has_png_extension(path) {
        encode_png_gray(img)?
    } else {
        encode_pgm(img)
    };
    write_bytes(path, &bytes)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = if has_png_extension(path) {
        encode_png_rgb(img)?
    } else {
        encode_ppm(img)
    };
    write_bytes(path, &bytes)
}

fn has_png_extension(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.pixels()), (2, 1, &[7u8, 9][..]));
    }

    #[test]
    fn pgm_truncated_raster() {
        assert!(decode_pgm(b"P5 3 3 255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P6 1 1 255\n\x00\x01\x02").is_err());
    }

    #[test]
    fn png_gray_roundtrip() {
        let img = GrayImage::from_raw(3, 2, vec![0, 50, 100, 150, 200, 250]).unwrap();
        let back = decode_png_gray(&encode_png_gray(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::from_raw(3, 2, vec![0, 50, 100, 150, 200, 250]).unwrap();
        let same = img.resize_bilinear(3, 2);
        assert_eq!(same, img.pixels().iter().map(|&v| v as f32).collect::<Vec<_>>());
        let flat = GrayImage::new(5, 7, 42).resize_bilinear(9, 4);
        assert!(flat.iter().all(|&v| v == 42.0));
    }

    #[test]
    fn crop_and_mirror() {
        let img = GrayImage::from_raw(3, 3, (0..9).collect()).unwrap();
        assert_eq!(img.crop(1, 1, 3, 3).pixels(), &[4, 5, 7, 8]);
        assert_eq!(img.mirrored().pixels(), &[2, 1, 0, 5, 4, 3, 8, 7, 6]);
    }

    proptest! {
        #[test]
        fn netpbm_roundtrip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 5) as u8).collect();
            let img = GrayImage::from_raw(w, h, pixels.clone()).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
            let rgb: Vec<u8> = pixels.iter().flat_map(|&p| [p, p ^ 0x55, 255 - p]).collect();
            let img = RgbImage::from_raw(w, h, rgb).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }
    }
}
