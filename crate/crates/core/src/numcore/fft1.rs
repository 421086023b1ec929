//! `FFT1` tensor files: magic `FFT1`, u32 rank, rank × u32 extents, then the
//! little-endian f32 payload. No padding, all integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{ensure, Result};

pub const MAGIC: &[u8; 4] = b"FFT1";

pub fn write_fft1<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_fft1<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    ensure!(&magic == MAGIC, Format, "bad magic {:?}", magic);
    let rank = read_u32(&mut r)? as usize;
    ensure!(rank <= 16, Format, "implausible rank {}", rank);
    let shape = (0..rank).map(|_| read_u32(&mut r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let mut rest = [0u8; 1];
    ensure!(r.read(&mut rest)? == 0, Format, "trailing bytes after payload");
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(&shape, data)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fft1(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    read_fft1(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_byte_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_fft1(&mut buf, &t).unwrap();
        let mut expected = b"FFT1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-0.5f32).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(read_fft1(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_fft1(&b"FFT2\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_fft1(&mut buf, &Tensor::zeros(&[3])).unwrap();
        assert!(read_fft1(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_fft1(&buf[..]).is_err());
    }
}
