//! Dense f64 arrays in the `LPRD` binary layout:
//! magic, `u32` version, `u32` rank, `u64` dims, row-major little-endian
//! payload.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPRD";
pub const VERSION: u32 = 1;

/// Largest rank accepted on read.
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub dims: Vec<u64>,
    /// Row-major values, `dims.iter().product()` of them.
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn new(dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().try_fold(1u64, |acc, d| acc.checked_mul(*d));
        if expected != Some(data.len() as u64) {
            return Err(Error::Format(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        Self {
            dims: vec![m.nrows() as u64, m.ncols() as u64],
            data,
        }
    }

    /// Rank-1 arrays read as a single row.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (r, c) = match self.dims.as_slice() {
            [n] => (1, *n as usize),
            [r, c] => (*r as usize, *c as usize),
            other => return Err(Error::Format(format!("expected a rank-2 array, got dims {other:?}"))),
        };
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }

    pub fn read_from(reader: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad matrix file magic".into()));
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported matrix file version {version}")));
        }
        reader.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word);
        if rank > MAX_RANK {
            return Err(Error::Format(format!("matrix file rank {rank} is too large")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut long = [0u8; 8];
        for _ in 0..rank {
            reader.read_exact(&mut long)?;
            dims.push(u64::from_le_bytes(long));
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format("matrix file dims overflow".into()))?;
        let mut bytes = Vec::new();
        reader.take(count as u64 * 8).read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::Format(format!(
                "matrix payload has {} bytes, expected {}",
                bytes.len(),
                count * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, writer: &mut impl Write) -> Result<()> {
        let mut out = Vec::with_capacity(12 + 8 * (self.dims.len() + self.data.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&out)?;
        Ok(())
    }
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    MatrixFile::read_from(&mut f)?.to_matrix()
}

pub fn write_matrix_file(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    MatrixFile::from_matrix(m).write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        MatrixFile::from_matrix(&m).write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LPRD");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &2u64.to_le_bytes());
        assert_eq!(&buf[20..28], &3u64.to_le_bytes());
        // Row-major: second value is (0, 1).
        assert_eq!(&buf[36..44], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 28 + 48);
        let back = MatrixFile::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }

    #[test]
    fn rank_one_reads_as_row() {
        let f = MatrixFile::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.to_matrix().unwrap(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        assert!(MatrixFile::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn rejects_corruption() {
        let m = DMatrix::from_element(2, 2, 1.5);
        let mut buf = Vec::new();
        MatrixFile::from_matrix(&m).write_to(&mut buf).unwrap();
        assert!(MatrixFile::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(MatrixFile::read_from(&mut bad.as_slice()).is_err());
        let mut bad = buf;
        bad[4] = 2;
        assert!(MatrixFile::read_from(&mut bad.as_slice()).is_err());
    }
}
