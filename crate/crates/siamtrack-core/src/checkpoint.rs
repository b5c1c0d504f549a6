//! Named-tensor checkpoint files.
//!
//! A checkpoint is a flat sequence of records, each:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), one u32 LE per
//! dimension, then the values as IEEE f64 LE. The file ends at a record
//! boundary; anything else is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 16;

pub fn save(params: &BTreeMap<String, Tensor>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for (name, tensor) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    let mut params = BTreeMap::new();
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(
                &display,
                format!("truncated record at byte {pos}", pos = *pos),
            ));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<usize> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize)
    };

    while pos < bytes.len() {
        let name_len = take_u32(&mut pos)?;
        if name_len == 0 || name_len > MAX_NAME {
            return Err(Error::format(&display, format!("bad name length {name_len}")));
        }
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::format(&display, "tensor name is not UTF-8"))?
            .to_string();
        let rank = take_u32(&mut pos)?;
        if rank > MAX_RANK {
            return Err(Error::format(&display, format!("bad rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count = 1usize;
        for _ in 0..rank {
            let d = take_u32(&mut pos)?;
            count = count.checked_mul(d).ok_or_else(|| {
                Error::format(&display, format!("dimension overflow in `{name}`"))
            })?;
            shape.push(d);
        }
        let payload = take(&mut pos, count * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::format(&display, format!("duplicate tensor `{name}`")));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert(
            "a.weight".to_string(),
            Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, 1e-300, f64::MAX, -1.0]).unwrap(),
        );
        m.insert("b.bias".to_string(), Tensor::new(vec![1], vec![0.125]).unwrap());
        m
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("siamtrack-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let params = sample_params();
        save(&params, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = std::env::temp_dir().join("siamtrack-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (p1, p2) = (dir.join("det1.ckpt"), dir.join("det2.ckpt"));
        save(&sample_params(), &p1).unwrap();
        save(&sample_params(), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = std::env::temp_dir().join("siamtrack-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        save(&sample_params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "got {err}");
    }
}
