//! Shared record-file container for datasets, parity vectors and estimates.
//!
//! ```text
//! offset 0   8 bytes   magic "DBMIMO\0\x01"
//! offset 8   u32 LE    header length L
//! offset 12  L bytes   UTF-8 JSON header (FileHeader)
//! then       count × stride little-endian f32 values, record-major
//! ```
//!
//! `stride` is the sum of the `len` of the layout fields, in declared order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"DBMIMO\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    /// Number of f32 values.
    pub len: usize,
}

impl FieldSpec {
    pub fn new(name: &str, len: usize) -> Self {
        FieldSpec {
            name: name.to_string(),
            len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    /// `dataset`, `parity` or `estimates`.
    pub kind: String,
    pub version: u32,
    pub m_rx: usize,
    pub m_tx: usize,
    pub count: usize,
    pub layout: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Free-form generation metadata (ranges, band, …).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl FileHeader {
    pub fn new(kind: &str, m_rx: usize, m_tx: usize, count: usize, layout: Vec<FieldSpec>) -> Self {
        FileHeader {
            kind: kind.to_string(),
            version: FORMAT_VERSION,
            m_rx,
            m_tx,
            count,
            layout,
            seed: None,
            config_hash: None,
            meta: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.layout.iter().map(|f| f.len).sum()
    }

    /// `(offset, len)` of a named field inside a record.
    pub fn field(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for f in &self.layout {
            if f.name == name {
                return Some((off, f.len));
            }
            off += f.len;
        }
        None
    }

    pub fn expect_kind(&self, path: &Path, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(format_err(path, format!("expected a {kind} file, header says {:?}", self.kind)));
        }
        Ok(())
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Streams records to disk. Dropping an unfinished writer deletes the partial file.
pub struct RecordWriter {
    path: PathBuf,
    out: Option<BufWriter<File>>,
    stride: usize,
    count: usize,
    written: usize,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, header: &FileHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let json = serde_json::to_vec(header)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = RecordWriter {
            out: Some(BufWriter::new(file)),
            path,
            stride: header.stride(),
            count: header.count,
            written: 0,
        };
        let len = u32::try_from(json.len()).map_err(|_| Error::InvalidArgument("header too large".into()))?;
        w.write_bytes(&MAGIC)?;
        w.write_bytes(&len.to_le_bytes())?;
        w.write_bytes(&json)?;
        Ok(w)
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let out = self.out.as_mut().expect("writer open");
        out.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_record(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.stride {
            return Err(Error::dims(self.stride, values.len()));
        }
        if self.written == self.count {
            return Err(Error::InvalidArgument(format!("header declares only {} records", self.count)));
        }
        let mut buf = Vec::with_capacity(4 * values.len());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.write_bytes(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.count {
            return Err(Error::InvalidArgument(format!(
                "wrote {} of {} declared records",
                self.written, self.count
            )));
        }
        let out = self.out.take().expect("writer open");
        let file = out.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

impl Drop for RecordWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.path);
        }
    }
}

/// A fully loaded record file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub header: FileHeader,
    values: Vec<f32>,
}

impl RecordFile {
    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn record(&self, i: usize) -> &[f32] {
        let s = self.header.stride();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn records(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.len()).map(move |i| self.record(i))
    }
}

pub fn read_header(path: impl AsRef<Path>) -> Result<FileHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header_from(path, &mut r)
}

fn read_header_from(path: &Path, r: &mut impl Read) -> Result<FileHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| format_err(path, "file shorter than the magic tag"))?;
    if magic != MAGIC {
        return Err(format_err(path, "bad magic tag"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| format_err(path, "missing header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| format_err(path, "truncated header"))?;
    let header: FileHeader =
        serde_json::from_slice(&json).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {}", header.version)));
    }
    Ok(header)
}

/// Reads header and records; the record count must match the file length exactly.
pub fn read_records(path: impl AsRef<Path>) -> Result<RecordFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_from(path, &mut r)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let expected = header.count * header.stride() * 4;
    if body.len() != expected {
        return Err(format_err(
            path,
            format!(
                "header declares {} records of {} values ({expected} bytes), body has {} bytes",
                header.count,
                header.stride(),
                body.len()
            ),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(RecordFile { header, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: usize) -> FileHeader {
        FileHeader::new("dataset", 2, 2, count, vec![FieldSpec::new("a", 3), FieldSpec::new("b", 2)])
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let mut w = RecordWriter::create(&p, &header(2)).unwrap();
        w.write_record(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        w.write_record(&[-1.0, -2.0, -3.0, -4.0, f32::MAX]).unwrap();
        w.finish().unwrap();
        let f = read_records(&p).unwrap();
        assert_eq!(f.header, header(2));
        assert_eq!(f.record(1)[4], f32::MAX);
        assert_eq!(f.header.field("b"), Some((3, 2)));
        assert_eq!(&std::fs::read(&p).unwrap()[..8], &MAGIC);
    }

    #[test]
    fn header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        RecordWriter::create(&p, &header(0)).unwrap().finish().unwrap();
        let f = read_records(&p).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn length_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let mut w = RecordWriter::create(&p, &header(1)).unwrap();
        w.write_record(&[0.0; 5]).unwrap();
        w.finish().unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_records(&p), Err(Error::Format { .. })));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_header(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn unfinished_writer_removes_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        {
            let mut w = RecordWriter::create(&p, &header(3)).unwrap();
            w.write_record(&[0.0; 5]).unwrap();
            assert!(w.write_record(&[0.0; 4]).is_err());
        }
        assert!(!p.exists());
        let w = RecordWriter::create(&p, &header(3)).unwrap();
        assert!(w.finish().is_err());
        assert!(!p.exists());
    }
}
