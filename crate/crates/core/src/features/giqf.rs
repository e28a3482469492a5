//! GIQF: the binary feature-matrix format.
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `b"GIQF"`                        |
//! | 4      | 4    | version, `u32` LE, currently 1         |
//! | 8      | 8    | row count N, `u64` LE                  |
//! | 16     | 4    | dim D, `u32` LE                        |
//! | 20     | 4    | id-block length L, `u32` LE            |
//! | 24     | L    | newline-separated UTF-8 ids            |
//! | 24+L   | 4ND  | `f32` LE values, row-major             |
//!
//! Ids may not contain `'\n'`. An empty matrix has L = 0; a single empty id
//! cannot be distinguished from zero ids and is rejected on write.

use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GIQF";
pub const VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 24;

pub fn write_features(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = encode(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode(matrix: &FeatureMatrix) -> Result<Vec<u8>> {
    if let Some(pos) = matrix.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / matrix.dim(),
            col: pos % matrix.dim(),
        });
    }
    for id in matrix.ids() {
        if id.contains('\n') {
            return Err(Error::Format(format!("id {id:?} contains a newline")));
        }
    }
    if matrix.count() == 1 && matrix.ids()[0].is_empty() {
        return Err(Error::Format("a lone empty id cannot be encoded".into()));
    }
    let id_block = matrix.ids().join("\n");
    let dim = u32::try_from(matrix.dim())
        .map_err(|_| Error::Format(format!("dim {} exceeds u32", matrix.dim())))?;
    let id_len = u32::try_from(id_block.len())
        .map_err(|_| Error::Format("id block exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(HEADER_SIZE + id_block.len() + 4 * matrix.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.count() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id_block.as_bytes());
    for v in matrix.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated(format!(
            "header needs {HEADER_SIZE} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            what: "GIQF",
            found: u64::from(version),
            expected: u64::from(VERSION),
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let id_len = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;

    let ids_end = HEADER_SIZE + id_len;
    if bytes.len() < ids_end {
        return Err(Error::Truncated(format!(
            "id block declares {id_len} bytes, {} present",
            bytes.len() - HEADER_SIZE
        )));
    }
    let id_text = std::str::from_utf8(&bytes[HEADER_SIZE..ids_end])
        .map_err(|e| Error::Format(format!("ids are not UTF-8: {e}")))?;
    let ids: Vec<String> = if count == 0 {
        Vec::new()
    } else {
        id_text.split('\n').map(str::to_owned).collect()
    };
    if ids.len() as u64 != count {
        return Err(Error::Format(format!(
            "header declares {count} rows but the id block holds {} ids",
            ids.len()
        )));
    }

    let payload = &bytes[ids_end..];
    let needed = (count as u128) * (dim as u128) * 4;
    if (payload.len() as u128) < needed {
        let rows_present = if dim == 0 { 0 } else { payload.len() / (4 * dim) };
        return Err(Error::Truncated(format!(
            "declared count {count} × dim {dim} needs {needed} bytes, {} present ({rows_present} complete rows)",
            payload.len()
        )));
    }
    if (payload.len() as u128) > needed {
        return Err(Error::Format(format!(
            "{} trailing bytes after the payload",
            payload.len() as u128 - needed
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(ids, data, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            3,
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[0..4], b"GIQF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[3, 0, 0, 0]);
        assert_eq!(&bytes[24..27], b"a\nb");
        assert_eq!(&bytes[27..31], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 3 + 6 * 4);
    }

    #[test]
    fn round_trip_small() {
        let m = sample();
        assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn empty_matrix_has_zero_count() {
        let m = FeatureMatrix::empty(2048);
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[8..16], &[0u8; 8]);
        assert_eq!(bytes.len(), HEADER_SIZE);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!(back.dim(), 2048);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "not a GIQF file");
    }

    #[test]
    fn declared_rows_exceed_payload() {
        let m = FeatureMatrix::from_rows_auto_ids((0..3).map(|i| [i as f64, 1.0])).unwrap();
        let mut bytes = encode(&m).unwrap();
        // Claim 10 rows (ids included) but keep only 3 rows of data.
        let ids: Vec<String> = (0..10).map(|i| format!("row-{i}")).collect();
        let block = ids.join("\n");
        let payload = bytes.split_off(HEADER_SIZE + 17);
        bytes.truncate(HEADER_SIZE);
        bytes[8..16].copy_from_slice(&10u64.to_le_bytes());
        bytes[20..24].copy_from_slice(&(block.len() as u32).to_le_bytes());
        bytes.extend_from_slice(block.as_bytes());
        bytes.extend_from_slice(&payload);
        assert!(matches!(decode(&bytes), Err(Error::Truncated(_))));
    }

    #[test]
    fn duplicate_ids_rejected_on_read() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[26] = b'a';
        assert!(matches!(decode(&bytes), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn nan_rejected_on_read() {
        let mut bytes = encode(&sample()).unwrap();
        let off = HEADER_SIZE + 3 + 4 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(
            decode(&bytes).unwrap_err().to_string(),
            "non-finite value at row 1, col 1"
        );
    }

    #[test]
    fn version_checked() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::VersionMismatch { found: 2, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            rows in 0usize..12,
            dim in 0usize..9,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let ids: Vec<String> = (0..rows).map(|i| format!("img/{i}.png")).collect();
            let data: Vec<f32> = (0..rows * dim)
                .map(|_| f32::from_bits(rng.random::<u32>() & 0xBF7F_FFFF))
                .collect();
            let m = FeatureMatrix::new(ids, data, dim).unwrap();
            let back = decode(&encode(&m).unwrap()).unwrap();
            prop_assert_eq!(back.ids(), m.ids());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
