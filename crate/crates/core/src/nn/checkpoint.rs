//! Binary tensor serialization for model checkpoints.
//!
//! Layout: `AGSMPRM1` magic, then a little-endian u32 tensor count, then per
//! tensor: u32 name length + UTF-8 name, u32 rows, u32 cols, and rows×cols
//! f32 values in row-major order. Byte-deterministic for a given ParamSet.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::optim::ParamSet;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 8] = b"AGSMPRM1";

pub fn write_params(params: &ParamSet, writer: &mut impl Write) -> std::io::Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, mat) in params.iter() {
        writer.write_all(&(name.len() as u32).to_le_bytes())?;
        writer.write_all(name.as_bytes())?;
        let (rows, cols) = mat.dim();
        writer.write_all(&(rows as u32).to_le_bytes())?;
        writer.write_all(&(cols as u32).to_le_bytes())?;
        for &v in mat.iter() {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + params.scalar_count() * 4);
    write_params(params, &mut buf).map_err(|e| CoreError::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

pub fn read_params(reader: &mut impl Read, origin: &str) -> Result<ParamSet> {
    let bad = |message: String| CoreError::Parse {
        path: origin.to_string(),
        line: 0,
        message,
    };
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|e| bad(format!("missing checkpoint magic: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a parameter checkpoint (bad magic)".into()));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read, what: &str| -> Result<u32> {
        r.read_exact(&mut u32_buf)
            .map_err(|e| bad(format!("truncated reading {what}: {e}")))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let count = read_u32(reader, "tensor count")?;
    let mut params = ParamSet::new();
    for i in 0..count {
        let name_len = read_u32(reader, "name length")? as usize;
        if name_len > 4096 {
            return Err(bad(format!("tensor {i} name length {name_len} implausible")));
        }
        let mut name_bytes = vec![0u8; name_len];
        reader
            .read_exact(&mut name_bytes)
            .map_err(|e| bad(format!("truncated reading tensor {i} name: {e}")))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad(format!("tensor {i} name is not UTF-8")))?;
        let rows = read_u32(reader, "rows")? as usize;
        let cols = read_u32(reader, "cols")? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 512 * 1024 * 1024)
            .ok_or_else(|| bad(format!("tensor {name} shape ({rows}, {cols}) implausible")))?;
        let mut data = vec![0f32; n];
        for v in data.iter_mut() {
            let mut f_buf = [0u8; 4];
            reader
                .read_exact(&mut f_buf)
                .map_err(|e| bad(format!("truncated reading tensor {name} data: {e}")))?;
            *v = f32::from_le_bytes(f_buf);
        }
        let mat = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| bad(format!("tensor {name} shape error: {e}")))?;
        params.add(&name, mat);
    }
    Ok(params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    read_params(&mut bytes.as_slice(), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::optim::init_uniform;
    use crate::seeding::derive_rng;

    fn sample_params() -> ParamSet {
        let mut rng = derive_rng(1, &["ckpt"]);
        let mut params = ParamSet::new();
        params.add("embedding", init_uniform(&mut rng, 7, 3, 0.5));
        params.add("w_out", init_uniform(&mut rng, 3, 7, 0.5));
        params.add("b_out", init_uniform(&mut rng, 1, 7, 0.5));
        params
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let params = sample_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.params");
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.len(), params.len());
        for i in 0..params.len() {
            assert_eq!(loaded.name(i), params.name(i));
            assert_eq!(loaded.get(i).dim(), params.get(i).dim());
            let same = loaded
                .get(i)
                .iter()
                .zip(params.get(i).iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "tensor {} differs", params.name(i));
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let params = sample_params();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_params(&params, &mut a).unwrap();
        write_params(&params, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.params");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_params(&path), Err(CoreError::Parse { .. })));

        // Truncated mid-tensor.
        let params = sample_params();
        let mut buf = Vec::new();
        write_params(&params, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(load_params(&path), Err(CoreError::Parse { .. })));
    }
}
