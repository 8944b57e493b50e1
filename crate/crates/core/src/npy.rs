//! Minimal NPY (version 1.0) reader/writer for C-order little-endian f64
//! arrays. Enough for exchanging prediction tensors with numpy.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

/// Write `data` with the given shape as an NPY v1.0 file.
pub fn write(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::Shape {
            context: "npy::write".into(),
            detail: format!("shape {shape:?} implies {numel} values, got {}", data.len()),
        });
    }
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header =
        format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    // pad with spaces so that magic + version + len + header is a multiple of 64
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');

    let mut out = Vec::with_capacity(unpadded + pad + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read an NPY file containing a C-order `<f8` array.
pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    parse(&bytes).map_err(|e| match e {
        Error::InvalidArgument(msg) => {
            Error::InvalidArgument(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

fn parse(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |msg: &str| Error::InvalidArgument(format!("npy: {msg}"));
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[6] != 1 {
        return Err(bad(&format!("unsupported version {}.{}", bytes[6], bytes[7])));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    if bytes.len() < 10 + header_len {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| bad("header is not utf-8"))?;
    if !header.contains("'descr': '<f8'") {
        return Err(bad("only little-endian f64 ('<f8') is supported"));
    }
    if !header.contains("'fortran_order': False") {
        return Err(bad("only C-order arrays are supported"));
    }
    let shape = parse_shape(header).ok_or_else(|| bad("cannot parse shape"))?;
    let numel: usize = shape.iter().product();
    let payload = &bytes[10 + header_len..];
    if payload.len() != numel * 8 {
        return Err(bad(&format!("payload is {} bytes, expected {}", payload.len(), numel * 8)));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((shape, data))
}

fn parse_shape(header: &str) -> Option<Vec<usize>> {
    let start = header.find("'shape':")? + "'shape':".len();
    let rest = &header[start..];
    let open = rest.find('(')?;
    let close = rest.find(')')?;
    let inner = &rest[open + 1..close];
    let mut dims = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        dims.push(part.parse::<usize>().ok()?);
    }
    if dims.is_empty() {
        None
    } else {
        Some(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let shape = vec![2, 3, 4];
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        write(&path, &shape, &data).unwrap();
        let (s, d) = read(&path).unwrap();
        assert_eq!(s, shape);
        assert_eq!(d, data);
    }

    #[test]
    fn one_dimensional_shape_uses_trailing_comma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.npy");
        write(&path, &[5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let (s, d) = read(&path).unwrap();
        assert_eq!(s, vec![5]);
        assert_eq!(d.len(), 5);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse(b"not an npy file").is_err());
    }
}
