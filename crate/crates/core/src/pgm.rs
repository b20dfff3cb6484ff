//! Plain (P2) and raw (P5) greymap reading, raw 8-bit writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

struct Header {
    raw: bool,
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first payload byte.
    offset: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(u32, usize)> {
    let start = skip_space_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::Pgm(format!("expected {what} at byte {start}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text.parse().map_err(|_| Error::Pgm(format!("{what} {text} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let raw = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(Error::Pgm("missing P2/P5 magic number".into())),
    };
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("maxval {maxval} outside 1..=65535")));
    }
    if raw && !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Pgm("missing whitespace after maxval".into()));
    }
    Ok(Header {
        raw,
        width: width as usize,
        height: height as usize,
        maxval,
        offset: pos + 1,
    })
}

/// Decodes a greymap into a `height x width` matrix with values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Mat> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height;
    let scale = 1.0 / f64::from(h.maxval);
    let mut values = Vec::with_capacity(n);
    if h.raw {
        let wide = h.maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let payload = bytes.get(h.offset..h.offset + need).ok_or_else(|| {
            Error::Pgm(format!("truncated payload: need {need} bytes, have {}", bytes.len().saturating_sub(h.offset)))
        })?;
        if wide {
            values.extend(payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
        } else {
            values.extend(payload.iter().map(|&b| u32::from(b)));
        }
    } else {
        let mut pos = h.offset - 1;
        for i in 0..n {
            let (v, next) = read_uint(bytes, pos, "sample").map_err(|_| Error::Pgm(format!("truncated payload: sample {i} of {n}")))?;
            values.push(v);
            pos = next;
        }
    }
    if let Some(v) = values.iter().find(|&&v| v > h.maxval) {
        return Err(Error::Pgm(format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    Mat::from_vec(h.height, h.width, values.into_iter().map(|v| f64::from(v) * scale).collect())
}

pub fn load_pgm(path: &Path) -> Result<Mat> {
    decode_pgm(&std::fs::read(path)?)
}

/// Encodes as `P5` with maxval 255, clamping to `[0, 1]` and rounding.
pub fn encode_pgm(x: &Mat) -> Result<Vec<u8>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("encode_pgm"));
    }
    let mut out = format!("P5\n{} {}\n255\n", x.cols(), x.rows()).into_bytes();
    out.extend(x.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn save_pgm(x: &Mat, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(x)?)?;
    Ok(())
}
