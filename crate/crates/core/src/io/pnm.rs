//! Netpbm P2/P3/P5/P6 with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// 8-bit image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmFormat {
    /// P2 / P3
    Ascii,
    /// P5 / P6
    Binary,
}

impl ImageU8 {
    pub fn new(h: usize, w: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels; expected 1 or 3"
            )));
        }
        if h == 0 || w == 0 || samples.len() != h * w * channels {
            return Err(Error::InvalidDims(format!(
                "{h}x{w}x{channels} image with {} samples",
                samples.len()
            )));
        }
        Ok(Self {
            h,
            w,
            channels,
            samples,
        })
    }

    pub fn gray(h: usize, w: usize, samples: Vec<u8>) -> Result<Self> {
        Self::new(h, w, 1, samples)
    }

    /// BT.601 luma, rounded.
    pub fn to_luma(&self) -> ImageU8 {
        if self.channels == 1 {
            return self.clone();
        }
        let samples = self
            .samples
            .chunks_exact(3)
            .map(|p| {
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8
            })
            .collect();
        ImageU8 {
            h: self.h,
            w: self.w,
            channels: 1,
            samples,
        }
    }

    /// `1 × C × H × W` tensor on the 0–255 scale.
    pub fn to_tensor<T: Real>(&self) -> Tensor4<T> {
        let (h, w, c) = (self.h, self.w, self.channels);
        Tensor4::from_fn([1, c, h, w], |_, ch, i, j| {
            T::of(self.samples[(i * w + j) * c + ch] as f64)
        })
        .expect("image dims are nonzero")
    }

    /// Rounds and clamps batch item 0 to 8 bits.
    pub fn from_tensor<T: Real>(t: &Tensor4<T>) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        let mut samples = vec![0u8; h * w * c];
        for ch in 0..c {
            for (k, &v) in t.plane(0, ch).iter().enumerate() {
                samples[k * c + ch] = quantize(v.to_f64_lossy());
            }
        }
        Self::new(h, w, c, samples)
    }
}

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&[u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or("unexpected end of header")?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad number {:?}", String::from_utf8_lossy(tok)))
    }
}

/// Decodes a PNM byte stream. `origin` is only used in error messages.
pub fn decode_pnm(bytes: &[u8], origin: &Path) -> Result<ImageU8> {
    let bad = |msg: String| Error::Image {
        path: origin.to_path_buf(),
        msg,
    };
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .token()
        .ok_or_else(|| bad("empty file".into()))?
        .to_vec();
    let (channels, binary) = match magic.as_slice() {
        b"P2" => (1, false),
        b"P3" => (3, false),
        b"P5" => (1, true),
        b"P6" => (3, true),
        m => {
            return Err(bad(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let w = cur.number().map_err(bad)?;
    let h = cur.number().map_err(bad)?;
    let maxval = cur.number().map_err(bad)?;
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval}; only 255 is supported")));
    }
    if w == 0 || h == 0 {
        return Err(bad(format!("empty {w}x{h} image")));
    }
    let n = h * w * channels;
    let samples = if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(bad("missing raster".into()));
        }
        let start = cur.pos + 1;
        if bytes.len() < start + n {
            return Err(bad(format!(
                "truncated raster: {} of {n} bytes",
                bytes.len().saturating_sub(start)
            )));
        }
        bytes[start..start + n].to_vec()
    } else {
        let mut s = Vec::with_capacity(n);
        for k in 0..n {
            let v = cur
                .number()
                .map_err(|e| bad(format!("sample {k} of {n}: {e}")))?;
            if v > 255 {
                return Err(bad(format!("sample {v} exceeds maxval")));
            }
            s.push(v as u8);
        }
        s
    };
    ImageU8::new(h, w, channels, samples)
}

pub fn encode_pnm(img: &ImageU8, format: PnmFormat) -> Vec<u8> {
    let magic = match (img.channels, format) {
        (1, PnmFormat::Ascii) => "P2",
        (1, PnmFormat::Binary) => "P5",
        (_, PnmFormat::Ascii) => "P3",
        (_, PnmFormat::Binary) => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.w, img.h).into_bytes();
    match format {
        PnmFormat::Binary => out.extend_from_slice(&img.samples),
        PnmFormat::Ascii => {
            let row = img.w * img.channels;
            for line in img.samples.chunks(row) {
                let text: Vec<String> = line.iter().map(u8::to_string).collect();
                out.extend_from_slice(text.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_pnm(&bytes, path)
}

pub fn write_pnm(img: &ImageU8, path: impl AsRef<Path>, format: PnmFormat) -> Result<()> {
    fs::write(path, encode_pnm(img, format))?;
    Ok(())
}

/// Reads any supported PNM and converts it to a gray `1 × 1 × H × W` tensor.
pub fn read_gray_tensor(path: impl AsRef<Path>) -> Result<Tensor4<f32>> {
    Ok(read_pnm(path)?.to_luma().to_tensor())
}
