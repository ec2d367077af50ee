//! Name-tagged tensor records: `u16` name length, name bytes, `u8` ndim,
//! `u32` dims, then little-endian `f32` values in row-major order.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

pub fn write_tensor_record<T: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<T>) -> std::io::Result<()> {
    let nb = name.as_bytes();
    assert!(nb.len() <= u16::MAX as usize && t.ndim() <= u8::MAX as usize);
    w.write_all(&(nb.len() as u16).to_le_bytes())?;
    w.write_all(nb)?;
    w.write_all(&[t.ndim() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format("<tensor record>", format!("truncated record: {e}")))?;
    Ok(buf)
}

pub fn read_tensor_record<T: Scalar, R: Read>(r: &mut R) -> Result<(String, Tensor<T>)> {
    let len = u16::from_le_bytes(read_exact(r, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(read_exact(r, len)?)
        .map_err(|_| Error::format("<tensor record>", "tensor name is not UTF-8"))?;
    let ndim = read_exact(r, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    let bytes = read_exact(r, n * 4)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let t = Tensor::from_vec(&shape, data)
        .map_err(|e| Error::format("<tensor record>", format!("tensor {name}: {e}")))?;
    Ok((name, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout_is_exact() {
        let t = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor_record(&mut buf, "ab", &t).unwrap();
        let mut want = vec![2, 0, b'a', b'b', 2, 1, 0, 0, 0, 2, 0, 0, 0];
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
        let (name, back) = read_tensor_record::<f32, _>(&mut &buf[..]).unwrap();
        assert_eq!(name, "ab");
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_record_is_a_format_error() {
        let t = Tensor::<f32>::zeros(&[4]);
        let mut buf = Vec::new();
        write_tensor_record(&mut buf, "w", &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(
            read_tensor_record::<f32, _>(&mut &buf[..]),
            Err(Error::Format { .. })
        ));
    }
}
