//! Binary PGM/PPM I/O: 16-bit raw frames, 8-bit label maps, RGB previews.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{LabelMap, RawMosaicFrame, IGNORE};
use crate::error::{bail, Result};

const TAG_PREFIX: &str = "# exposure_tag ";

struct Header<'a> {
    width: usize,
    height: usize,
    maxval: u32,
    comments: Vec<&'a str>,
    data_start: usize,
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<Header<'a>> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        bail!(
            Format,
            "missing {} magic",
            String::from_utf8_lossy(magic)
        );
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    let mut comments = Vec::new();
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    let start = pos;
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    if let Ok(line) = std::str::from_utf8(&bytes[start..pos]) {
                        comments.push(line);
                    }
                }
                Some(_) => break,
                None => bail!(Format, "truncated header"),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            bail!(Format, "expected a number in header at byte {start}");
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| crate::Error::Format("header number overflow".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => bail!(Format, "header not terminated by whitespace"),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        bail!(Format, "zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        bail!(Format, "maxval {maxval} out of range");
    }
    Ok(Header {
        width: usize::try_from(width).map_err(|_| crate::Error::Format("width".into()))?,
        height: usize::try_from(height).map_err(|_| crate::Error::Format("height".into()))?,
        maxval: maxval as u32,
        comments,
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header<'_>, sample_bytes: usize) -> Result<&'a [u8]> {
    let n = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(sample_bytes))
        .ok_or_else(|| crate::Error::Format("image dimensions overflow".into()))?;
    let data = &bytes[header.data_start..];
    if data.len() < n {
        bail!(Format, "truncated data: {} of {n} bytes", data.len());
    }
    Ok(&data[..n])
}

/// Parses a 16-bit binary PGM.
pub fn read_raw(bytes: &[u8]) -> Result<RawMosaicFrame> {
    let header = parse_header(bytes, b"P5")?;
    if header.maxval < 256 {
        bail!(
            Format,
            "raw frames must be 16-bit PGM, got maxval {}",
            header.maxval
        );
    }
    let data = payload(bytes, &header, 2)?
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let tag = header
        .comments
        .iter()
        .find_map(|c| c.strip_prefix(TAG_PREFIX))
        .unwrap_or("")
        .to_string();
    Ok(RawMosaicFrame::new(header.height, header.width, data)
        .map_err(|e| crate::Error::Format(e.to_string()))?
        .with_tag(tag))
}

pub fn write_raw(frame: &RawMosaicFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.data().len() * 2 + 64);
    out.extend_from_slice(b"P5\n");
    if !frame.exposure_tag.is_empty() {
        let tag = frame.exposure_tag.replace(['\n', '\r'], " ");
        out.extend_from_slice(format!("{TAG_PREFIX}{tag}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n65535\n", frame.width(), frame.height()).as_bytes());
    for v in frame.data() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawMosaicFrame> {
    read_raw(&fs::read(path)?)
}

pub fn save_raw(frame: &RawMosaicFrame, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_raw(frame))
}

/// Parses an 8-bit label PGM.
pub fn read_labels(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_header(bytes, b"P5")?;
    if header.maxval > 255 {
        bail!(Format, "label maps must be 8-bit PGM, got maxval {}", header.maxval);
    }
    let data = payload(bytes, &header, 1)?.to_vec();
    LabelMap::new(header.height, header.width, data)
}

pub fn write_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    read_labels(&fs::read(path)?)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_labels(labels))
}

/// Preview palette indexed by class; ignore pixels render black.
pub const PALETTE: [[u8; 3]; 5] = [
    [128, 64, 128],
    [255, 255, 255],
    [0, 160, 0],
    [70, 130, 180],
    [220, 120, 40],
];

/// Writes a colorized P6 preview of a label map. For humans only.
pub fn save_preview(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    for &l in labels.labels() {
        let rgb = if l == IGNORE {
            [0, 0, 0]
        } else {
            PALETTE[l as usize % PALETTE.len()]
        };
        out.extend_from_slice(&rgb);
    }
    write_atomic(path.as_ref(), &out)
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| crate::Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
