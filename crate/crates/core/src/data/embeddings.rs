//! `EMB1` dense matrix files: 4-byte magic, u32 LE rows, u32 LE cols, then
//! rows×cols IEEE-754 binary32 LE values in row-major order.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

pub fn encode_emb1(m: ArrayView2<'_, f64>, out: &mut Vec<u8>) {
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for &v in m.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Decodes one matrix from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_emb1(bytes: &[u8]) -> Result<(Array2<f64>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != EMB1_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"EMB1\"", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} too large")))?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload {
        return Err(Error::Truncated {
            expected: payload,
            actual: available,
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..HEADER_LEN + payload].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite value {v} at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        values.push(f64::from(v));
    }
    let m = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
    Ok((m, HEADER_LEN + payload))
}

pub fn save_embeddings(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite value at row {}, col {}",
            pos / m.ncols(),
            pos % m.ncols()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    encode_emb1(m, &mut buf);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, used) = decode_emb1(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after matrix payload",
            path.display(),
            bytes.len() - used
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn round_trip_2x3() {
        let m = array![[1.0, -2.5, 3.25], [0.0, 1e-3, 7.0]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.emb");
        save_embeddings(&p, m.view()).unwrap();
        let back = load_embeddings(&p).unwrap();
        assert_eq!(back, m.mapv(|v| f64::from(v as f32)));
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        encode_emb1(array![[1.0f64]].view(), &mut buf);
        assert_eq!(buf, [b'E', b'M', b'B', b'1', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn short_payload_is_truncation() {
        let mut buf = Vec::new();
        encode_emb1(Array2::<f64>::zeros((3, 2)).view(), &mut buf);
        buf[4] = 4; // header claims 4 rows
        assert!(matches!(decode_emb1(&buf), Err(Error::Truncated { expected: 32, actual: 24 })));
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        encode_emb1(Array2::<f64>::zeros((1, 1)).view(), &mut buf);
        buf[0] = b'X';
        assert!(matches!(decode_emb1(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn nan_names_position() {
        let mut buf = Vec::new();
        encode_emb1(Array2::<f64>::zeros((2, 3)).view(), &mut buf);
        let off = 12 + 4 * (3 + 2);
        buf[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_emb1(&buf).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("row 1, col 2"), "{err}");
    }

    proptest! {
        #[test]
        fn load_of_save_is_identity_on_f32_values(
            rows in 0usize..6, cols in 0usize..6,
            seed in proptest::collection::vec(-1e6f32..1e6, 36)
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(r, c)| f64::from(seed[r * 6 + c]));
            let mut buf = Vec::new();
            encode_emb1(m.view(), &mut buf);
            let (back, used) = decode_emb1(&buf).unwrap();
            prop_assert_eq!(used, buf.len());
            prop_assert_eq!(back, m);
        }
    }
}
