//! Binary PPM (P6) and PGM (P5) images with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::tensor::Tensor;

/// 8-bit image with `channels` interleaved samples per pixel (3 for PPM,
/// 1 for PGM).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "Image::from_raw",
                format!("{} bytes for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Planar `channels × H × W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (c, plane) = (self.channels, self.width * self.height);
        Tensor::from_fn(&[c, self.height, self.width], |i| {
            let (ch, px) = (i / plane, i % plane);
            self.data[px * c + ch] as f32 / 255.0
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); values are clamped to
    /// `[0, 1]` and rounded to the nearest 8-bit level.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => return Err(Error::shape("Image::from_tensor", format!("expected C×H×W, got {:?}", t.shape()))),
        };
        let plane = h * w;
        let mut img = Image::new(w, h, c);
        for ch in 0..c {
            for px in 0..plane {
                img.data[px * c + ch] = to_u8(t.data()[ch * plane + px]);
            }
        }
        Ok(img)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            3 => "P6",
            1 => "P5",
            c => return Err(Error::Config(format!("cannot encode a {c}-channel image as PPM/PGM"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8], context: &str) -> Result<Self> {
        let (header, offset) = parse_header(bytes, context)?;
        let need = header.width * header.height * header.channels;
        let body = &bytes[offset..];
        if body.len() < need {
            return Err(Error::format(
                context,
                format!("truncated pixel data: {} of {need} bytes", body.len()),
            ));
        }
        if body.len() > need {
            return Err(Error::format(context, format!("{} trailing bytes", body.len() - need)));
        }
        Image::from_raw(header.width, header.height, header.channels, body.to_vec())
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

/// Parses a P5/P6 header, returning it with the offset of the first pixel byte.
pub fn parse_header(bytes: &[u8], context: &str) -> Result<(Header, usize)> {
    let bad = |detail: String| Error::format(context, detail);
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(bad("bad magic, expected P6 or P5".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and `#` comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| bad(format!("header field {} is not a positive integer", k + 1)))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(format!("zero image size {width}x{height}")));
    }
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}, expected 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval".into())),
    }
    Ok((
        Header {
            width,
            height,
            channels,
        },
        pos,
    ))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = Image::decode(&fsio::read(path)?, &path.display().to_string())?;
    if img.channels != 3 {
        return Err(Error::format(path.display().to_string(), "expected a P6 (RGB) image"));
    }
    Ok(img)
}

pub fn read_mask(path: &Path) -> Result<Image> {
    let img = Image::decode(&fsio::read(path)?, &path.display().to_string())?;
    if img.channels != 1 {
        return Err(Error::format(path.display().to_string(), "expected a P5 (gray) image"));
    }
    Ok(img)
}

/// Header-only read, for callers that need the size but not the pixels.
pub fn read_image_size(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(512);
    std::fs::File::open(path)
        .and_then(|f| f.take(512).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let (h, _) = parse_header(&buf, &path.display().to_string())?;
    Ok((h.height, h.width))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    fsio::write_atomic(path, &img.encode()?)
}

/// Gray image from probabilities in `[0, 1]` (stored ×255, rounded).
pub fn probability_map(probs: &[f32], height: usize, width: usize) -> Result<Image> {
    Image::from_raw(width, height, 1, probs.iter().map(|&p| to_u8(p)).collect())
}
