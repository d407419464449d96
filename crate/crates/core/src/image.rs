//! 8-bit raster images and their binary PPM (P6) / PGM (P5) encodings.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image buffer has {got} samples, expected {expected} for {width}x{height}x{channels}")]
    BadLength { width: usize, height: usize, channels: usize, expected: usize, got: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("zero-sized image")]
    Empty,
    #[error("malformed netpbm data: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Row-major interleaved image, `data.len() == width * height * channels`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageTensor")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannels(channels));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::BadLength { width, height, channels, expected, got: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    /// Image filled with a constant value per channel.
    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Result<Self, ImageError> {
        let channels = pixel.len();
        let data = pixel.iter().copied().cycle().take(width * height * channels).collect();
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[u8]) {
        debug_assert_eq!(value.len(), self.channels);
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    /// Mean over all samples, in `[0, 255]`.
    pub fn mean_value(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Binary netpbm encoding: P6 for RGB, P5 for grayscale.
    pub fn to_netpbm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_netpbm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut reader = std::io::Cursor::new(bytes);
        let magic = read_token(&mut reader)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(ImageError::Format(format!("unsupported magic `{other}`"))),
        };
        let width = parse_usize(&read_token(&mut reader)?)?;
        let height = parse_usize(&read_token(&mut reader)?)?;
        let maxval = parse_usize(&read_token(&mut reader)?)?;
        if maxval != 255 {
            return Err(ImageError::Format(format!("maxval {maxval} unsupported")));
        }
        // read_token consumed exactly one whitespace byte after maxval.
        let mut data = Vec::with_capacity(width * height * channels);
        reader.read_to_end(&mut data).map_err(|e| ImageError::Format(e.to_string()))?;
        Self::new(width, height, channels, data)
    }

    pub fn write_netpbm(&self, path: &Path) -> Result<(), ImageError> {
        let io = |source| ImageError::Io { path: path.display().to_string(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        f.write_all(&self.to_netpbm()).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn read_netpbm(path: &Path) -> Result<Self, ImageError> {
        let bytes =
            std::fs::read(path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        Self::from_netpbm(&bytes).map_err(|e| match e {
            ImageError::Format(msg) => ImageError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn parse_usize(tok: &str) -> Result<usize, ImageError> {
    tok.parse().map_err(|_| ImageError::Format(format!("expected integer, got `{tok}`")))
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn read_token<R: BufRead>(r: &mut R) -> Result<String, ImageError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte).map_err(|e| ImageError::Format(e.to_string()))? == 0 {
            return if tok.is_empty() { Err(ImageError::Format("truncated header".into())) } else { Ok(tok) };
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut sink = Vec::new();
            r.read_until(b'\n', &mut sink).map_err(|e| ImageError::Format(e.to_string()))?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(ImageTensor::new(2, 2, 3, vec![0; 11]), Err(ImageError::BadLength { .. })));
        assert!(matches!(ImageTensor::new(2, 2, 2, vec![0; 8]), Err(ImageError::BadChannels(2))));
        assert!(matches!(ImageTensor::new(0, 2, 1, vec![]), Err(ImageError::Empty)));
    }

    #[test]
    fn header_layout_is_exact() {
        let img = ImageTensor::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(img.to_netpbm(), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec());
        let g = ImageTensor::new(1, 2, 1, vec![0, 255]).unwrap();
        assert_eq!(g.to_netpbm(), b"P5\n1 2\n255\n\x00\xff".to_vec());
    }

    #[test]
    fn parses_comments_and_rejects_truncation() {
        let img = ImageTensor::from_netpbm(b"P5\n# made by hand\n2 1\n255\n\x0a\x20").unwrap();
        assert_eq!(img.data(), &[10, 32]);
        assert!(ImageTensor::from_netpbm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(ImageTensor::from_netpbm(b"P3\n1 1\n255\n0").is_err());
    }

    proptest! {
        #[test]
        fn netpbm_round_trip(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let img = ImageTensor::new(w, h, c, data).unwrap();
            prop_assert_eq!(ImageTensor::from_netpbm(&img.to_netpbm()).unwrap(), img);
        }
    }
}
