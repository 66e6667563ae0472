//! SFNM named-tensor container.
//!
//! ```text
//! "SFNM" | version u8 | dtype u8 (0 = f32, 1 = f64) | count u32
//! count × (name length u16 | name bytes | rank u8 | extents u32 × rank | scalars, little-endian)
//! ```

use crate::data::format::{put_string, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MODEL_MAGIC: [u8; 4] = *b"SFNM";
pub const MODEL_VERSION: u8 = 1;

/// Ordered list of named tensors.
pub type TensorTable<T> = Vec<(String, Tensor<T>)>;

pub fn encode_table<T: Scalar>(table: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.push(T::PRECISION.dtype_code());
    let count = u32::try_from(table.len()).map_err(|_| Error::ExtentOverflow(format!("{} tensors", table.len())))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in table {
        put_string(&mut out, name)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::ExtentOverflow(format!("rank {}", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::ExtentOverflow(format!("extent {d} of {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        t.data().iter().for_each(|v| v.write_le(&mut out));
    }
    Ok(out)
}

/// Precision recorded in an SFNM header.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    let mut r = ByteReader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u8()?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let code = r.u8()?;
    Precision::from_dtype_code(code).ok_or(Error::UnsupportedDtype(code as u32))
}

pub fn decode_table<T: Scalar>(bytes: &[u8]) -> Result<TensorTable<T>> {
    let precision = peek_precision(bytes)?;
    if precision != T::PRECISION {
        return Err(Error::InvalidData(format!(
            "checkpoint holds {precision} scalars, expected {}",
            T::PRECISION
        )));
    }
    let mut r = ByteReader::new(bytes);
    r.take(6)?;
    let count = r.u32()?;
    let mut table = Vec::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = r.u32()?;
            if d == 0 {
                return Err(Error::InvalidData(format!("zero extent in tensor {name}")));
            }
            numel = numel
                .checked_mul(d as u64)
                .ok_or_else(|| Error::ExtentOverflow(format!("tensor {name}")))?;
            shape.push(d as usize);
        }
        let data = r.scalars::<T>(numel)?;
        table.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip_and_header_checks() {
        let table: TensorTable<f32> = vec![
            ("a".into(), Tensor::scalar(1.5)),
            ("b.c".into(), Tensor::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap()),
        ];
        let bytes = encode_table(&table).unwrap();
        let back = decode_table::<f32>(&bytes).unwrap();
        assert_eq!(back, table);
        assert_eq!(encode_table(&back).unwrap(), bytes);
        assert_eq!(peek_precision(&bytes).unwrap(), Precision::Standard);
        assert!(decode_table::<f64>(&bytes).is_err());

        let mut bad = bytes.clone();
        bad[3] = b'R';
        assert!(matches!(decode_table::<f32>(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_table::<f32>(&bytes[..bytes.len() - 2]),
            Err(Error::Truncated { .. })
        ));
    }
}
