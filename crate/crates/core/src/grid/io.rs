//! Portable float map (PFM) and 16-bit PGM I/O.
//!
//! PFM files are written with scale `-1.0` (little-endian) and rows stored
//! bottom-to-top, as the format requires. Both byte orders are accepted on
//! read.

use std::fs;
use std::path::Path;

use super::{DepthGrid, FeatureGrid};
use crate::error::{Error, Result};

/// A single-channel plane that can be written as PFM.
pub trait Plane {
    fn plane_height(&self) -> usize;
    fn plane_width(&self) -> usize;
    fn plane_values(&self) -> Result<&[f64]>;
}

impl Plane for DepthGrid {
    fn plane_height(&self) -> usize {
        self.height()
    }
    fn plane_width(&self) -> usize {
        self.width()
    }
    fn plane_values(&self) -> Result<&[f64]> {
        Ok(self.values())
    }
}

impl Plane for FeatureGrid {
    fn plane_height(&self) -> usize {
        self.height()
    }
    fn plane_width(&self) -> usize {
        self.width()
    }
    fn plane_values(&self) -> Result<&[f64]> {
        if self.channels() != 1 {
            return Err(Error::Shape(format!(
                "PFM output needs 1 channel, grid has {}",
                self.channels()
            )));
        }
        Ok(self.values())
    }
}

/// Unvalidated row-major buffer, for writing data that never went through a grid constructor.
#[derive(Debug, Clone, Copy)]
pub struct RawPlane<'a> {
    pub height: usize,
    pub width: usize,
    pub values: &'a [f64],
}

impl Plane for RawPlane<'_> {
    fn plane_height(&self) -> usize {
        self.height
    }
    fn plane_width(&self) -> usize {
        self.width
    }
    fn plane_values(&self) -> Result<&[f64]> {
        if self.values.len() != self.height * self.width {
            return Err(Error::Shape("raw plane length mismatch".into()));
        }
        Ok(self.values)
    }
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Splits the three whitespace-delimited header tokens groups off the front
/// of the buffer. The header ends after the single whitespace byte following
/// the scale token.
fn header_tokens<'a>(bytes: &'a [u8], path: &Path) -> Result<(Vec<&'a str>, usize)> {
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, "header ended early"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed(path, "header is not ASCII"))?;
        tokens.push(tok);
        if tokens.len() == 1 && tok != "Pf" {
            return Err(malformed(path, format!("unsupported magic {tok:?}")));
        }
    }
    if pos >= bytes.len() {
        return Err(malformed(path, "missing whitespace after scale"));
    }
    Ok((tokens, pos + 1))
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FeatureGrid> {
    let (tokens, offset) = header_tokens(bytes, path)?;
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| malformed(path, format!("bad width {:?}", tokens[1])))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| malformed(path, format!("bad height {:?}", tokens[2])))?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| malformed(path, format!("bad scale {:?}", tokens[3])))?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed(path, "scale must be finite and nonzero"));
    }
    let little = scale < 0.0;
    let expected = width * height * 4;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let mut values = vec![0.0; width * height];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        let file_row = i / width;
        let col = i % width;
        values[(height - 1 - file_row) * width + col] = v as f64;
    }
    FeatureGrid::new(height, width, 1, values)
}

/// Encode a plane as little-endian PFM bytes.
pub(crate) fn encode_pfm<P: Plane + ?Sized>(grid: &P) -> Result<Vec<u8>> {
    let (h, w) = (grid.plane_height(), grid.plane_width());
    let values = grid.plane_values()?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let header = format!("Pf\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * values.len());
    out.extend_from_slice(header.as_bytes());
    for row in (0..h).rev() {
        for &v in &values[row * w..(row + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm<P: Plane + ?Sized>(grid: &P, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(grid)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_pgm16(grid: &DepthGrid, max_depth: f64) -> Result<Vec<u8>> {
    if !(max_depth > 0.0) || !max_depth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "max_depth must be positive, got {max_depth}"
        )));
    }
    let header = format!("P5\n{} {}\n65535\n", grid.width(), grid.height());
    let mut out = Vec::with_capacity(header.len() + 2 * grid.len());
    out.extend_from_slice(header.as_bytes());
    for &d in grid.values() {
        // f64::round rounds half away from zero, i.e. half up for non-negative input.
        let px = ((d / max_depth).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&px.to_be_bytes());
    }
    Ok(out)
}

/// Write a 16-bit binary PGM, mapping `[0, max_depth]` linearly onto `[0, 65535]`.
pub fn write_pgm16(grid: &DepthGrid, path: impl AsRef<Path>, max_depth: f64) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm16(grid, max_depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn single_pixel() {
        let dir = tmp();
        let p = dir.path().join("one.pfm");
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let g = read_pfm(&p).unwrap();
        assert_eq!((g.height(), g.width(), g.channels()), (1, 1, 1));
        assert_eq!(g.values(), &[2.5]);
    }

    #[test]
    fn zeros_layout() {
        let g = DepthGrid::zeros(2, 2);
        let bytes = encode_pfm(&g).unwrap();
        assert_eq!(&bytes[..12], b"Pf\n2 2\n-1.0\n");
        assert_eq!(bytes.len(), 12 + 16);
        assert!(bytes[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn rows_stored_bottom_up() {
        let g = DepthGrid::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&g).unwrap();
        let header_len = b"Pf\n1 2\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 2.0);
    }

    #[test]
    fn big_endian_accepted() {
        let dir = tmp();
        let p = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.25f32.to_be_bytes());
        bytes.extend_from_slice(&(-3.0f32).to_be_bytes());
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_pfm(&p).unwrap().values(), &[1.25, -3.0]);
    }

    #[test]
    fn bad_magic() {
        let dir = tmp();
        let p = dir.path().join("bad.pfm");
        fs::write(&p, b"Pg\n1 1\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::MalformedHeader { .. })));
        fs::write(&p, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::MalformedHeader { .. })));
        fs::write(&p, b"Pf\nx 1\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn truncated_and_nonfinite() {
        let dir = tmp();
        let p = dir.path().join("t.pfm");
        fs::write(&p, b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(
            read_pfm(&p),
            Err(Error::Truncated {
                expected: 16,
                found: 4,
                ..
            })
        ));
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn nan_refused_on_write() {
        let dir = tmp();
        let vals = [1.0, f64::NAN];
        let raw = RawPlane {
            height: 1,
            width: 2,
            values: &vals,
        };
        assert!(matches!(
            write_pfm(&raw, dir.path().join("n.pfm")),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn multi_channel_refused() {
        let f = FeatureGrid::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(encode_pfm(&f), Err(Error::Shape(_))));
    }

    #[test]
    fn unwritable_path() {
        let g = DepthGrid::zeros(1, 1);
        let err = write_pfm(&g, "/nonexistent-dir/x/y.pfm").unwrap_err();
        assert_eq!(err.kind(), "io");
        assert!(write_pgm16(&g, "/nonexistent-dir/x/y.pgm", 1.0).is_err());
    }

    #[test]
    fn pgm_levels() {
        let g = DepthGrid::new(1, 3, vec![10.0, 0.0, 5.0]).unwrap();
        let bytes = encode_pgm16(&g, 10.0).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![65535, 0, 32768]);
        assert!(encode_pgm16(&g, 0.0).is_err());
        // above range saturates
        let over = DepthGrid::new(1, 1, vec![50.0]).unwrap();
        assert_eq!(
            &encode_pgm16(&over, 10.0).unwrap()[b"P5\n1 1\n65535\n".len()..],
            &[0xff, 0xff]
        );
    }

    #[test]
    fn read_write_read_idempotent() {
        let dir = tmp();
        let a = dir.path().join("a.pfm");
        let b = dir.path().join("b.pfm");
        let g = DepthGrid::new(2, 3, vec![0.1, 0.2, 0.3, 4.0, 5.5, 0.0]).unwrap();
        write_pfm(&g, &a).unwrap();
        let first = read_pfm(&a).unwrap();
        write_pfm(&first, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_pfm(&b).unwrap(), first);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_bit_exact(vals in proptest::collection::vec(-1.0e6f32..1.0e6, 48)) {
            let dir = tmp();
            let p = dir.path().join("r.pfm");
            let values: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let raw = RawPlane { height: 8, width: 6, values: &values };
            write_pfm(&raw, &p).unwrap();
            let back = read_pfm(&p).unwrap();
            prop_assert_eq!((back.height(), back.width()), (8, 6));
            for (a, b) in back.values().iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
