//! `SIMF` surface field files: magic, version `u32`, mesh level `u32`,
//! vertices `u64`, channels `u64`, row-major `f32` values, CRC32.

use std::io::{Read, Write};

use ndarray::Array2;

use super::bytes::*;
use crate::icosphere::SurfaceField;
use crate::{Result, SimError};

const MAGIC: &[u8; 4] = b"SIMF";
const VERSION: u32 = 1;

pub fn write_field<W: Write>(mut w: W, field: &SurfaceField) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, field.mesh_level)?;
    put_u64(&mut w, field.num_vertices() as u64)?;
    put_u64(&mut w, field.channels() as u64)?;
    let payload = f32_bytes(field.values.iter().copied());
    w.write_all(&payload)?;
    put_u32(&mut w, crc32fast::hash(&payload))?;
    w.flush()?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<SurfaceField> {
    expect_magic(&mut r, MAGIC)?;
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(SimError::Format(format!("unsupported field version {version}")));
    }
    let level = get_u32(&mut r)?;
    let rows = get_u64(&mut r)? as usize;
    let cols = get_u64(&mut r)? as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SimError::Format("field dimensions overflow".into()))?;
    let payload = get_vec(&mut r, len)?;
    check_crc(&payload, get_u32(&mut r)?, "field")?;
    let values = Array2::from_shape_vec((rows, cols), f32_from(&payload)).expect("sized payload");
    SurfaceField::new(level, values).map_err(|e| SimError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let f = SurfaceField::new(1, Array2::from_shape_fn((42, 2), |(i, j)| (i * 3 + j) as f32 * 0.25)).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap(), f);
        buf[30] ^= 1;
        assert!(read_field(&buf[..]).is_err());
    }
}
