//! MVOL volume files.
//!
//! One UTF-8 JSON header line terminated by `\n`:
//!
//! ```text
//! {"magic":"MVOL1","dims":[Z,Y,X],"spacing_mm":[sz,sy,sx],"dtype":"i16"|"f32"|"u8"}
//! ```
//!
//! followed by the raw little-endian voxels in z→y→x row-major order. The
//! writer always emits the header in exactly this key order, so loading and
//! re-saving a file produced by [`save_volume`] reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dtype, Volume, Voxels};

pub const MAGIC: &str = "MVOL1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
}

/// Splits `bytes` at the first newline into (header, payload).
pub(crate) fn split_header(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let (head, payload) = split_header(bytes)
        .ok_or_else(|| Error::MalformedHeader("no newline-terminated header line".into()))?;
    let head = std::str::from_utf8(head)
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let header: Header = serde_json::from_str(head)
        .map_err(|e| Error::MalformedHeader(format!("header is not valid JSON: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {MAGIC:?}",
            header.magic
        )));
    }
    let dtype = Dtype::parse(&header.dtype)?;
    if header.dims.contains(&0) {
        return Err(Error::MalformedHeader(format!(
            "dims must be >= 1, got {:?}",
            header.dims
        )));
    }
    let expected = voxel_count(header.dims)
        .checked_mul(dtype.size_of())
        .ok_or_else(|| Error::MalformedHeader("dims overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            actual: payload.len(),
        });
    }
    let voxels = match dtype {
        Dtype::I16 => Voxels::I16(
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        Dtype::F32 => Voxels::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::U8 => Voxels::U8(payload.to_vec()),
    };
    Volume::new(header.dims, header.spacing_mm, voxels)
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let header = Header {
        magic: MAGIC.to_string(),
        dims: v.dims(),
        spacing_mm: v.spacing(),
        dtype: v.dtype().as_str().to_string(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(v.len() * v.dtype().size_of());
    match v.voxels() {
        Voxels::I16(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Voxels::F32(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Voxels::U8(d) => out.extend_from_slice(d),
    }
    Ok(out)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(v)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(header: &str, payload_len: usize) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        b.push(b'\n');
        b.extend(std::iter::repeat_n(0u8, payload_len));
        b
    }

    #[test]
    fn i16_header_sizes_payload() {
        let h = r#"{"magic":"MVOL1","dims":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"i16"}"#;
        let v = decode_volume(&raw(h, 16)).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.dtype(), Dtype::I16);
        // Canonical headers round-trip byte for byte.
        assert_eq!(encode_volume(&v).unwrap(), raw(h, 16));
    }

    #[test]
    fn error_codes_are_distinct() {
        let h = r#"{"magic":"MVOL1","dims":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"i16"}"#;
        let short = decode_volume(&raw(h, 15)).unwrap_err();
        assert!(matches!(short, Error::PayloadSize { expected: 16, actual: 15 }));

        let bad_dtype = r#"{"magic":"MVOL1","dims":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"f64"}"#;
        let unk = decode_volume(&raw(bad_dtype, 64)).unwrap_err();
        assert!(matches!(unk, Error::UnknownDtype(_)));

        let junk = decode_volume(b"not json\n").unwrap_err();
        assert!(matches!(junk, Error::MalformedHeader(_)));
        let no_newline = decode_volume(b"{}").unwrap_err();
        assert!(matches!(no_newline, Error::MalformedHeader(_)));
        let magic = r#"{"magic":"MVOL2","dims":[1,1,1],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8"}"#;
        assert!(matches!(
            decode_volume(&raw(magic, 1)).unwrap_err(),
            Error::MalformedHeader(_)
        ));

        let codes = [short.code(), unk.code(), junk.code()];
        assert_eq!(
            codes.iter().collect::<std::collections::HashSet<_>>().len(),
            3
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = Volume::from_u8([2, 1, 3], [2.5, 0.5, 0.5], vec![0, 1, 2, 2, 1, 0]).unwrap();
        save_volume(&v, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back, v);
        save_volume(&back, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        assert!(matches!(
            load_volume(dir.path().join("missing")).unwrap_err(),
            Error::Io { .. }
        ));
    }

    fn arb_volume() -> impl Strategy<Value = Volume> {
        let dims = (1usize..5, 1usize..5, 1usize..5);
        let spacing = (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0);
        (dims, spacing, 0u8..3).prop_flat_map(|((z, y, x), (a, b, c), kind)| {
            let n = z * y * x;
            let dims = [z, y, x];
            let sp = [a, b, c];
            match kind {
                0 => proptest::collection::vec(any::<i16>(), n)
                    .prop_map(move |d| Volume::from_i16(dims, sp, d).unwrap())
                    .boxed(),
                1 => proptest::collection::vec(0.0f32..=1.0, n)
                    .prop_map(move |d| Volume::from_f32(dims, sp, d).unwrap())
                    .boxed(),
                _ => proptest::collection::vec(0u8..3, n)
                    .prop_map(move |d| Volume::from_u8(dims, sp, d).unwrap())
                    .boxed(),
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(v in arb_volume()) {
            let bytes = encode_volume(&v).unwrap();
            let back = decode_volume(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(encode_volume(&back).unwrap(), bytes);
        }
    }
}
