//! Binary checkpoints for a [`ParameterStore`].
//!
//! Layout (all header lines are ASCII, terminated by a single `\n`):
//!
//! ```text
//! seqadv-checkpoint v1
//! tensors <count>
//! <name> <offset> <d0>x<d1>x...      (one line per tensor, in name order)
//! data
//! <raw little-endian f64 values>
//! ```
//!
//! `offset` is the byte offset of the tensor's first value, counted from the
//! first byte after the `data\n` line. Tensors are stored back to back in
//! header order with row-major data, so offsets are cumulative multiples of 8.
//! Names may not contain whitespace. Writing and reading preserves every bit.

use std::fs;
use std::path::Path;

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "seqadv-checkpoint v1";

pub fn encode(store: &ParameterStore) -> Result<Vec<u8>> {
    let mut header = format!("{MAGIC}\ntensors {}\n", store.len());
    let mut offset = 0usize;
    for (name, t) in store.iter() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("parameter name `{name}` is not checkpointable")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("{name} {offset} {}\n", dims.join("x")));
        offset += t.numel() * 8;
    }
    header.push_str("data\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for (_, t) in store.iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParameterStore> {
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut pos = 0usize;
    let mut next_line = |what: &str| -> Result<String> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad(format!("truncated header while reading {what}")))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| bad(format!("non-ASCII header in {what}")))?
            .to_string();
        pos += end + 1;
        Ok(line)
    };

    if next_line("magic")? != MAGIC {
        return Err(bad("missing `seqadv-checkpoint v1` magic line".into()));
    }
    let count_line = next_line("tensor count")?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad count line `{count_line}`")))?;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line("tensor entry")?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 3 {
            return Err(bad(format!("bad tensor entry `{line}`")));
        }
        let offset: usize = parts[1]
            .parse()
            .map_err(|_| bad(format!("bad offset in `{line}`")))?;
        let shape: Vec<usize> = parts[2]
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("bad shape in `{line}`")))?;
        entries.push((parts[0].to_string(), offset, shape));
    }
    if next_line("data marker")? != "data" {
        return Err(bad("missing `data` line".into()));
    }
    let data = &bytes[pos..];

    let mut store = ParameterStore::new();
    let mut expected_offset = 0usize;
    for (name, offset, shape) in entries {
        if offset != expected_offset {
            return Err(bad(format!("tensor `{name}` at offset {offset}, expected {expected_offset}")));
        }
        let numel: usize = shape.iter().product();
        let end = offset + numel * 8;
        if end > data.len() {
            return Err(bad(format!("tensor `{name}` extends past end of file")));
        }
        let values = data[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| bad(e.to_string()))?;
        store.insert(name, t);
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(bad(format!(
            "{} trailing bytes after last tensor",
            data.len() - expected_offset
        )));
    }
    Ok(store)
}

pub fn save(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(store)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_offsets() {
        let mut s = ParameterStore::new();
        s.insert("b.bias", Tensor::vector(vec![1.0, 2.0]));
        s.insert("a.w", Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
        let bytes = encode(&s).unwrap();
        let text = String::from_utf8_lossy(&bytes[..60]);
        assert!(text.starts_with("seqadv-checkpoint v1\ntensors 2\na.w 0 2x3\nb.bias 48 2\ndata\n"));
        assert_eq!(bytes.len(), 58 + 8 * 8);
    }

    #[test]
    fn roundtrip_preserves_bits() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0, 1e300]));
        let back = decode(&encode(&s).unwrap(), Path::new("mem")).unwrap();
        let a: Vec<u64> = s.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let bytes = encode(&s).unwrap();
        let err = decode(&bytes[..bytes.len() - 3], Path::new("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("past end"), "{err}");
    }

    #[test]
    fn whitespace_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("bad name", Tensor::scalar(1.0));
        assert!(encode(&s).is_err());
    }
}
