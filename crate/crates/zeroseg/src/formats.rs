//! On-disk formats: ZTF tensors, ZTFB name→tensor bundles, binary PPM/PGM.
//!
//! ZTF layout: bytes `ZTF1`, u32 LE rank, rank × u32 LE dims, then
//! product(dims) × f32 LE row-major payload. No padding anywhere. ZTFB is a
//! concatenation of named ZTF records: `ZTFB`, u32 LE count, then per entry
//! a u32 LE name length, the UTF-8 name, and an embedded ZTF record.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

fn malformed(what: &'static str, detail: impl Into<String>) -> FormatError {
    FormatError::Malformed { what, detail: detail.into() }
}

// ---- ZTF -----------------------------------------------------------------

const ZTF_MAGIC: &[u8; 4] = b"ZTF1";
const ZTFB_MAGIC: &[u8; 4] = b"ZTFB";
/// Dims are validated against this so a corrupt header cannot trigger a
/// multi-gigabyte allocation.
const MAX_ELEMENTS: u64 = 1 << 28;

pub fn encode_ztf(dims: &[u32], data: &[f32]) -> Result<Vec<u8>> {
    let numel: u64 = dims.iter().map(|&d| d as u64).product();
    if dims.is_empty() || numel != data.len() as u64 {
        return Err(malformed(
            "ztf encode",
            format!("dims {dims:?} describe {numel} elements, got {}", data.len()),
        ));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(ZTF_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    let end = at.checked_add(4).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => Ok(u32::from_le_bytes(bytes[at..e].try_into().unwrap())),
        None => Err(malformed(what, format!("truncated at byte {at}"))),
    }
}

/// Decodes one ZTF record starting at `bytes[0]`; returns the dims, payload,
/// and the number of bytes consumed (so records can be embedded in bundles).
pub fn decode_ztf(bytes: &[u8]) -> Result<(Vec<u32>, Vec<f32>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != ZTF_MAGIC {
        return Err(malformed("ztf decode", "missing ZTF1 magic".to_string()));
    }
    let rank = read_u32(bytes, 4, "ztf decode")? as usize;
    if rank == 0 || rank > 8 {
        return Err(malformed("ztf decode", format!("rank {rank} outside 1..=8")));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 8 + 4 * i, "ztf decode")?);
    }
    let numel: u64 = dims.iter().map(|&d| d as u64).product();
    if numel > MAX_ELEMENTS {
        return Err(malformed("ztf decode", format!("dims {dims:?} exceed element cap")));
    }
    let header = 8 + 4 * rank;
    let payload = header + 4 * numel as usize;
    if bytes.len() < payload {
        return Err(malformed(
            "ztf decode",
            format!("payload needs {payload} bytes, file has {}", bytes.len()),
        ));
    }
    let data = bytes[header..payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data, payload))
}

pub fn write_ztf(path: &Path, dims: &[u32], data: &[f32]) -> Result<()> {
    let bytes = encode_ztf(dims, data)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_ztf(path: &Path) -> Result<(Vec<u32>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (dims, data, consumed) = decode_ztf(&bytes)?;
    if consumed != bytes.len() {
        return Err(malformed(
            "ztf decode",
            format!("{} trailing bytes after payload", bytes.len() - consumed),
        ));
    }
    Ok((dims, data))
}

// ---- ZTFB bundle -----------------------------------------------------------

pub struct BundleEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

pub fn write_ztfb(path: &Path, entries: &[BundleEntry]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(ZTFB_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&encode_ztf(&e.dims, &e.data)?);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_ztfb(path: &Path) -> Result<Vec<BundleEntry>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != ZTFB_MAGIC {
        return Err(malformed("ztfb decode", "missing ZTFB magic".to_string()));
    }
    let count = read_u32(&bytes, 4, "ztfb decode")? as usize;
    let mut at = 8;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u32(&bytes, at, "ztfb decode")? as usize;
        at += 4;
        if at + name_len > bytes.len() {
            return Err(malformed("ztfb decode", format!("entry {i} name truncated")));
        }
        let name = std::str::from_utf8(&bytes[at..at + name_len])
            .map_err(|_| malformed("ztfb decode", format!("entry {i} name is not UTF-8")))?
            .to_string();
        at += name_len;
        let (dims, data, consumed) = decode_ztf(&bytes[at..])?;
        at += consumed;
        entries.push(BundleEntry { name, dims, data });
    }
    if at != bytes.len() {
        return Err(malformed(
            "ztfb decode",
            format!("{} trailing bytes after last entry", bytes.len() - at),
        ));
    }
    Ok(entries)
}

// ---- PPM / PGM -------------------------------------------------------------

/// Maps a float channel in [0,1] to the u8 the file will carry.
fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Applies the PPM write→read round trip in memory: what training and the
/// class table should see is exactly what inference reads back from disk.
pub fn quantize_roundtrip(image: &mut [f32]) {
    for v in image.iter_mut() {
        *v = quantize(*v) as f32 / 255.0;
    }
}

/// Writes a channel-first [3,h,w] image as binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, image: &[f32], h: usize, w: usize) -> Result<()> {
    if image.len() != 3 * h * w {
        return Err(malformed(
            "ppm encode",
            format!("expected 3x{h}x{w} = {} values, got {}", 3 * h * w, image.len()),
        ));
    }
    let mut out = Vec::with_capacity(20 + 3 * h * w);
    write!(out, "P6\n{w} {h}\n255\n").expect("vec write");
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize(image[c * h * w + y * w + x]));
            }
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Consumes one whitespace-delimited ASCII token, skipping `#` comments.
fn next_token(bytes: &[u8], at: &mut usize) -> Result<u64> {
    loop {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if *at < bytes.len() && bytes[*at] == b'#' {
            while *at < bytes.len() && bytes[*at] != b'\n' {
                *at += 1;
            }
            continue;
        }
        break;
    }
    let start = *at;
    while *at < bytes.len() && bytes[*at].is_ascii_digit() {
        *at += 1;
    }
    if *at == start {
        return Err(malformed("pnm header", format!("expected integer at byte {start}")));
    }
    std::str::from_utf8(&bytes[start..*at])
        .unwrap()
        .parse()
        .map_err(|_| malformed("pnm header", "integer overflow".to_string()))
}

fn pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(malformed(
            "pnm header",
            format!("expected {} magic", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut at = 2;
    let w = next_token(bytes, &mut at)? as usize;
    let h = next_token(bytes, &mut at)? as usize;
    let maxval = next_token(bytes, &mut at)?;
    if maxval != 255 {
        return Err(malformed("pnm header", format!("maxval must be 255, got {maxval}")));
    }
    if w == 0 || h == 0 || w.saturating_mul(h) > MAX_ELEMENTS as usize {
        return Err(malformed("pnm header", format!("bad dimensions {w}x{h}")));
    }
    // exactly one whitespace byte separates header and payload
    if at >= bytes.len() || !bytes[at].is_ascii_whitespace() {
        return Err(malformed("pnm header", "missing separator before payload".to_string()));
    }
    Ok((w, h, at + 1))
}

/// Reads a binary PPM into channel-first [3,h,w] floats in [0,1].
pub fn read_ppm(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (w, h, start) = pnm_header(&bytes, b"P6")?;
    let need = 3 * w * h;
    if bytes.len() - start != need {
        return Err(malformed(
            "ppm decode",
            format!("payload must be {need} bytes, got {}", bytes.len() - start),
        ));
    }
    let mut image = vec![0.0f32; need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let b = bytes[start + 3 * (y * w + x) + c];
                image[c * h * w + y * w + x] = b as f32 / 255.0;
            }
        }
    }
    Ok((image, h, w))
}

/// Writes a label map as binary PGM (P5): byte 0 is background (−1), byte
/// c+1 is class c. Errors if any class index exceeds 254.
pub fn write_pgm_labels(path: &Path, labels: &[i32], h: usize, w: usize) -> Result<()> {
    if labels.len() != h * w {
        return Err(malformed(
            "pgm encode",
            format!("expected {h}x{w} = {} labels, got {}", h * w, labels.len()),
        ));
    }
    let mut out = Vec::with_capacity(20 + h * w);
    write!(out, "P5\n{w} {h}\n255\n").expect("vec write");
    for &l in labels {
        let byte = match l {
            -1 => 0u8,
            c if (0..=254).contains(&c) => (c + 1) as u8,
            c => {
                return Err(malformed("pgm encode", format!("label {c} outside -1..=254")));
            }
        };
        out.push(byte);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Inverse of `write_pgm_labels`.
pub fn read_pgm_labels(path: &Path) -> Result<(Vec<i32>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (w, h, start) = pnm_header(&bytes, b"P5")?;
    if bytes.len() - start != w * h {
        return Err(malformed(
            "pgm decode",
            format!("payload must be {} bytes, got {}", w * h, bytes.len() - start),
        ));
    }
    let labels = bytes[start..].iter().map(|&b| b as i32 - 1).collect();
    Ok((labels, h, w))
}
