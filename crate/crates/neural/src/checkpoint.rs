//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, length-prefixed UTF-8 config
//! blob (JSON, caller-defined), then named parameter records. All integers
//! and floats are little-endian; parameter data is f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MASSCKPT";
const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, config_json: &str, params: &[(String, &Tensor)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = config_json.as_bytes();
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(NeuralError::Checkpoint("unexpected end of file".into()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 8)? != MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let config = String::from_utf8(take(&mut cursor, config_len)?.to_vec())
        .map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let ndim = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
        }
        params.push((
            name,
            Tensor::from_vec(&shape, data).map_err(|e| NeuralError::Checkpoint(e.to_string()))?,
        ));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 3.5e-7, 1.0, f64::MIN_POSITIVE, 9.9])
            .unwrap();
        let b = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let params = vec![("w".to_string(), &a), ("bias".to_string(), &b)];
        write_checkpoint(&path, "{\"kind\":\"test\"}", &params).unwrap();

        let (config, loaded) = read_checkpoint(&path).unwrap();
        assert_eq!(config, "{\"kind\":\"test\"}");
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "w");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].1, b);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
