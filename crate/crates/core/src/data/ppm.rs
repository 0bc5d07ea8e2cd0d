//! Binary PPM (P6) frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "frame {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Frame { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Data("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad PPM {what} {:?}", String::from_utf8_lossy(tok))))
}

/// Parses a P6 image. Max values below 255 are rescaled to the full byte range.
pub fn decode(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::Data("not a binary PPM (P6)".into()));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Data(format!("unsupported PPM maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Data("truncated PPM header".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Data("PPM dimensions overflow".into()))?;
    if bytes.len() - pos < need {
        return Err(Error::Data(format!("PPM pixel data truncated: {} of {need} bytes", bytes.len() - pos)));
    }
    let mut data = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for v in &mut data {
            if *v as usize > maxval {
                return Err(Error::Data(format!("PPM sample {v} exceeds maxval {maxval}")));
            }
            *v = ((*v as f64) * 255.0 / maxval as f64).round() as u8;
        }
    }
    Frame::new(width, height, data)
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

pub fn read(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode(frame)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_comments() {
        let f = Frame::new(2, 1, vec![1, 2, 3, 250, 251, 252]).unwrap();
        let bytes = encode(&f);
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(decode(&bytes).unwrap(), f);
        let mut commented = b"P6 # made by hand\n2 # w\n1\n255\n".to_vec();
        commented.extend_from_slice(&f.data);
        assert_eq!(decode(&commented).unwrap(), f);
    }

    #[test]
    fn rescales_small_maxval() {
        let mut b = b"P6\n1 1\n15\n".to_vec();
        b.extend_from_slice(&[0, 15, 5]);
        assert_eq!(decode(&b).unwrap().data, vec![0, 255, 85]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode(b"P3\n1 1\n255\n").is_err());
        assert!(decode(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode(b"P6\n1 1\n65535\n").is_err());
        assert!(decode(b"P6\nx 1\n255\n").is_err());
        assert!(decode(b"").is_err());
    }
}
