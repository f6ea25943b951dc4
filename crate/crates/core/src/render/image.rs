//! Linear RGB images with PFM and PNG output.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major from the top, RGB interleaved.
    pub data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed pfm: {0}")]
    Pfm(String),
    #[error(transparent)]
    Png(#[from] image::ImageError),
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_gray(width: usize, height: usize, gray: &[f64]) -> Image {
        assert_eq!(gray.len(), width * height);
        Image { width, height, data: gray.iter().flat_map(|&v| [v, v, v]).collect() }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// First channel of every pixel.
    pub fn gray(&self) -> Vec<f64> {
        self.data.chunks(3).map(|c| c[0]).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn write_pfm(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "PF\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for c in self.pixel(x, y) {
                    buf.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
        }
        w.write_all(&buf)
    }

    pub fn read_pfm(mut r: impl Read) -> Result<Image, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Pfm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        let channels = match fields[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(ImageError::Pfm(format!("unknown tag {other}"))),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Pfm(format!("bad size {s}")));
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let scale: f64 = fields[3].parse().map_err(|_| ImageError::Pfm("bad scale".into()))?;
        let need = width * height * channels * 4;
        if bytes.len() < pos + need {
            return Err(ImageError::Pfm("truncated data".into()));
        }
        let mut img = Image::new(width, height);
        let mut vals = bytes[pos..pos + need].chunks(4).map(|c| {
            let a: [u8; 4] = c.try_into().unwrap();
            (if scale < 0.0 { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) }) as f64
        });
        for y in (0..height).rev() {
            for x in 0..width {
                let v = if channels == 3 {
                    [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()]
                } else {
                    let g = vals.next().unwrap();
                    [g, g, g]
                };
                img.set(x, y, v);
            }
        }
        Ok(img)
    }

    /// 8-bit sRGB encoding after scaling by `2^exposure`.
    pub fn to_srgb8(&self, exposure: f64) -> Vec<u8> {
        let gain = exposure.exp2();
        self.data.iter().map(|&v| (srgb_encode(v * gain) * 255.0 + 0.5).clamp(0.0, 255.0) as u8).collect()
    }

    pub fn png_bytes(&self, exposure: f64) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let enc = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            enc,
            &self.to_srgb8(exposure),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    /// Decodes an 8-bit PNG back to linear RGB.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Image, ImageError> {
        let rgb = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| srgb_decode(v as f64 / 255.0)).collect();
        Ok(Image { width: w as usize, height: h as usize, data })
    }

    /// Writes PNG or PFM depending on the extension.
    pub fn save(&self, path: &Path, exposure: f64) -> Result<(), ImageError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pfm") => Ok(self.write_pfm(io::BufWriter::new(std::fs::File::create(path)?))?),
            _ => Ok(std::fs::write(path, self.png_bytes(exposure)?)?),
        }
    }
}

pub fn srgb_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Mean squared error over all channels.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

/// Peak signal-to-noise ratio for a peak of `peak`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    }
}
