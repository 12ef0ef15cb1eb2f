//! Point-cloud files.
//!
//! Binary layout, little-endian: `"PCLD"` | u32 version (1) | u32 N | N×3 f32.
//! Text layout (`.xyz`): one `x y z` triple of ASCII decimals per line.

use std::fs;
use std::path::Path;

use super::{Point, PointCloud};
use crate::{Error, Result};

pub const PCLD_MAGIC: &[u8; 4] = b"PCLD";
pub const PCLD_VERSION: u32 = 1;

pub fn encode_point_cloud(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + pc.len() * 12);
    out.extend_from_slice(PCLD_MAGIC);
    out.extend_from_slice(&PCLD_VERSION.to_le_bytes());
    out.extend_from_slice(&(pc.len() as u32).to_le_bytes());
    for p in &pc.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len(), "truncated before magic"));
    }
    if &bytes[..4] != PCLD_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = read_u32(bytes, 4)?;
    if version != PCLD_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = read_u32(bytes, 8)? as usize;
    if n == 0 {
        return Err(Error::format(8, "point count is zero"));
    }
    let need = 12usize
        .checked_add(n.checked_mul(12).ok_or_else(|| Error::format(8, "point count overflows"))?)
        .ok_or_else(|| Error::format(8, "point count overflows"))?;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated: {n} points need {need} bytes, have {}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = [0.0f32; 3];
        for (k, c) in p.iter_mut().enumerate() {
            let off = 12 + (i * 3 + k) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::format(off, format!("non-finite coordinate {v}")));
            }
            *c = v;
        }
        points.push(p);
    }
    PointCloud::new(points)
}

fn read_u32(bytes: &[u8], off: usize) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(bytes.len(), "truncated header"))
}

/// Parses `.xyz` text. Blank lines are ignored.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points: Vec<Point> = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::format(start, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut p = [0.0f32; 3];
        for (k, f) in fields.iter().enumerate() {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::format(start, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::format(start, format!("non-finite coordinate `{f}`")));
            }
            p[k] = v;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::format(0, "no points"));
    }
    PointCloud::new(points)
}

/// Detects the format from content: binary when the magic matches, otherwise
/// `.xyz` text.
pub fn decode_any(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.starts_with(PCLD_MAGIC) {
        return decode_point_cloud(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(e.valid_up_to(), "not PCLD binary or UTF-8 text"))?;
    parse_xyz(text)
}

pub fn write_point_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    fs::write(path, encode_point_cloud(pc)).map_err(|e| Error::io(path, e))
}

pub fn write_xyz(path: &Path, pc: &PointCloud) -> Result<()> {
    let mut s = String::new();
    for p in &pc.points {
        s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads `.xyz` text by extension, anything else as binary.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xyz")) {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(e.valid_up_to(), "invalid UTF-8"))?;
        parse_xyz(text)
    } else {
        decode_point_cloud(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let pc = PointCloud::new(vec![[0.1, -2.5, 3.0e-7], [1.0, 0.0, -0.0], [f32::MAX, f32::MIN_POSITIVE, 7.25]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pcld");
        write_point_cloud(&path, &pc).unwrap();
        let back = read_point_cloud(&path).unwrap();
        let bits = |p: &PointCloud| p.points.iter().flat_map(|q| q.map(f32::to_bits)).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&pc));
    }

    #[test]
    fn xyz_text_parses() {
        let pc = parse_xyz("0 0 0\n1 0 0").unwrap();
        assert_eq!(pc.points, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.xyz");
        write_xyz(&path, &pc).unwrap();
        assert_eq!(read_point_cloud(&path).unwrap(), pc);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_point_cloud(&PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_point_cloud(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_and_non_finite_report_offsets() {
        let bytes = encode_point_cloud(&PointCloud::new(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap());
        assert!(matches!(decode_point_cloud(&bytes[..20]), Err(Error::Format { offset: 20, .. })));
        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_point_cloud(&bad), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn xyz_errors_point_at_line_start() {
        let err = parse_xyz("0 0 0\n1 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 6, .. }));
        assert!(parse_xyz("1 2\n").is_err());
        assert!(parse_xyz("1 2 inf\n").is_err());
        assert!(parse_xyz("\n\n").is_err());
    }

    #[test]
    fn decode_any_sniffs_format() {
        let pc = PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(decode_any(&encode_point_cloud(&pc)).unwrap(), pc);
        assert_eq!(decode_any(b"1 2 3\n").unwrap(), pc);
        assert!(decode_any(&[0xff, 0xfe, 0x00, 0x13]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(pts in prop::collection::vec(prop::array::uniform3(-1e6f32..1e6), 1..40)) {
            let pc = PointCloud::new(pts).unwrap();
            prop_assert_eq!(decode_point_cloud(&encode_point_cloud(&pc)).unwrap(), pc);
        }
    }
}
