//! Row-major `f32` matrix files used for HOG features, PCA projections and
//! reservoir state trajectories.
//!
//! Little-endian layout:
//!
//! | offset | size | field                                          |
//! |--------|------|------------------------------------------------|
//! | 0      | 8    | magic `ORCFEAT\0`                              |
//! | 8      | 4    | version (`u32`, currently 1)                   |
//! | 12     | 8    | frame (row) count (`u64`)                      |
//! | 20     | 8    | feature dimension (`u64`)                      |
//! | 28     | 16   | layout tuple (`[u32; 4]`, zeros if not HOG)    |
//! | 44     | ...  | `rows * dim` `f32` values, one row per frame   |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ORCFEAT\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub frame_count: u64,
    pub feature_dim: u64,
    pub layout: [u32; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub layout: [u32; 4],
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            layout: [0; 4],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(cols: usize, rows: impl IntoIterator<Item = Vec<f32>>) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(&r);
            n += 1;
        }
        FeatureMatrix {
            rows: n,
            cols,
            layout: [0; 4],
            data,
        }
    }

    /// Rounds a dense `f64` matrix to `f32`.
    pub fn from_mat(m: &Mat<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)] as f32);
            }
        }
        FeatureMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            layout: [0; 4],
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            layout: self.layout,
            data,
        }
    }

    pub fn to_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j] as f64)
    }

    pub fn header(&self) -> CacheHeader {
        CacheHeader {
            frame_count: self.rows as u64,
            feature_dim: self.cols as u64,
            layout: self.layout,
        }
    }
}

fn encode_header(h: &CacheHeader) -> [u8; HEADER_LEN as usize] {
    let mut b = [0u8; HEADER_LEN as usize];
    b[..8].copy_from_slice(MAGIC);
    b[8..12].copy_from_slice(&VERSION.to_le_bytes());
    b[12..20].copy_from_slice(&h.frame_count.to_le_bytes());
    b[20..28].copy_from_slice(&h.feature_dim.to_le_bytes());
    for (k, v) in h.layout.iter().enumerate() {
        b[28 + 4 * k..32 + 4 * k].copy_from_slice(&v.to_le_bytes());
    }
    b
}

fn decode_header(path: &Path, b: &[u8]) -> Result<CacheHeader> {
    if b.len() < HEADER_LEN as usize {
        return Err(Error::format(path, "truncated header"));
    }
    if &b[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(b[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let mut layout = [0u32; 4];
    for (k, v) in layout.iter_mut().enumerate() {
        *v = u32::from_le_bytes(b[28 + 4 * k..32 + 4 * k].try_into().unwrap());
    }
    Ok(CacheHeader {
        frame_count: u64_at(12),
        feature_dim: u64_at(20),
        layout,
    })
}

/// Validates magic, version and file length without reading the payload.
pub fn inspect_cache(path: &Path) -> Result<CacheHeader> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut b = [0u8; HEADER_LEN as usize];
    let got = read_up_to(&mut f, &mut b).map_err(|e| Error::io(path, e))?;
    let h = decode_header(path, &b[..got])?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let expect = h
        .frame_count
        .checked_mul(h.feature_dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expect != Some(len) {
        return Err(Error::format(
            path,
            format!("file is {len} bytes, header implies {expect:?}"),
        ));
    }
    Ok(h)
}

fn read_up_to(f: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

pub fn read_cache(path: &Path) -> Result<FeatureMatrix> {
    let h = inspect_cache(path)?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut skip = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut skip).map_err(|e| Error::io(path, e))?;
    let n = (h.frame_count * h.feature_dim) as usize;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        rows: h.frame_count as usize,
        cols: h.feature_dim as usize,
        layout: h.layout,
        data,
    })
}

pub fn write_cache(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = CacheWriter::create(path, m.header())?;
    for i in 0..m.rows {
        w.push_row(m.row(i))?;
    }
    w.finish()
}

/// Streams rows to disk; the row count is fixed up front.
pub struct CacheWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: CacheHeader,
    written: u64,
}

impl CacheWriter {
    pub fn create(path: &Path, header: CacheHeader) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, f);
        out.write_all(&encode_header(&header))
            .map_err(|e| Error::io(path, e))?;
        Ok(CacheWriter {
            path: path.to_path_buf(),
            out,
            header,
            written: 0,
        })
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() as u64 != self.header.feature_dim {
            return Err(Error::Dimension(format!(
                "row of length {} for cache of dimension {}",
                row.len(),
                self.header.feature_dim
            )));
        }
        if self.written == self.header.frame_count {
            return Err(Error::Dimension("more rows than declared".into()));
        }
        for v in row {
            self.out
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.frame_count {
            return Err(Error::Dimension(format!(
                "{} rows written, {} declared",
                self.written, self.header.frame_count
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
