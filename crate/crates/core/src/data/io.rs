//! On-disk formats.
//!
//! Two embedding formats are supported:
//!
//! * CSV with header `id,label,e0,e1,...,e{d-1}`, one instance per row. An
//!   empty label field marks an unlabeled row.
//! * The `PEAR` v1 binary container. Bytes 0-3 hold the magic `PEAR`, byte 4
//!   the version (1), byte 5 a kind tag and bytes 6-7 are zero. For embedding
//!   files (tag 1, 32-bit floats) the header continues with `n` and `d` as
//!   little-endian `u32`, then `n·d` little-endian `f32` row-major, then the
//!   bytes `PLBL`, `n` again and `n` little-endian `i32` labels where `-1`
//!   means unlabeled.
//!
//! The same container header, with tags 2-5, wraps serialized transformers
//! and model checkpoints.

use std::fs;
use std::path::Path;

use crate::data::{LabelTable, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"PEAR";
pub const LABEL_MAGIC: &[u8; 4] = b"PLBL";
pub const VERSION: u8 = 1;
pub const UNLABELED: i32 = -1;

/// Kind tag stored at byte 5 of a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ContainerKind {
    /// Embedding matrix of 32-bit floats plus labels.
    Embeddings = 1,
    Standardizer = 2,
    Whitener = 3,
    Lda = 4,
    Model = 5,
}

impl ContainerKind {
    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Self::Embeddings,
            2 => Self::Standardizer,
            3 => Self::Whitener,
            4 => Self::Lda,
            5 => Self::Model,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// Binary when the file starts with the container magic, CSV otherwise.
    pub fn detect(path: &Path) -> Result<Self> {
        use std::io::Read;
        let mut head = [0u8; 4];
        let mut f = fs::File::open(path)?;
        let got = f.read(&mut head)?;
        Ok(if got == 4 && &head == MAGIC {
            Format::Binary
        } else {
            Format::Csv
        })
    }

    /// Format implied by a path's extension (`.csv` → CSV, anything else binary).
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Embedding rows exactly as stored, before label densification.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    /// Original label per row; `None` for unlabeled rows.
    pub labels: Vec<Option<String>>,
    pub embeddings: Matrix<f32>,
}

impl EmbeddingTable {
    /// Densifies labels; fails if any row is unlabeled.
    pub fn into_labeled(self) -> Result<LabeledDataset<f32>> {
        let mut raw = Vec::with_capacity(self.labels.len());
        for (i, l) in self.labels.into_iter().enumerate() {
            match l {
                Some(l) => raw.push(l),
                None => return Err(Error::load(format!("row {}", i + 1), "unlabeled row")),
            }
        }
        let (table, ids) = LabelTable::densify(&raw);
        LabeledDataset::new(self.embeddings, ids, table)
    }

    pub fn from_labeled(ds: &LabeledDataset<f32>) -> Self {
        Self {
            ids: (0..ds.len()).map(|i| i.to_string()).collect(),
            labels: ds
                .labels()
                .iter()
                .map(|&y| Some(ds.label_table().name(y).to_string()))
                .collect(),
            embeddings: ds.embeddings().clone(),
        }
    }
}

/// Reads an embedding file and remaps labels to dense ids.
pub fn load_embeddings(path: &Path, format: Format) -> Result<LabeledDataset<f32>> {
    read_table(path, format)?.into_labeled()
}

pub fn read_table(path: &Path, format: Format) -> Result<EmbeddingTable> {
    match format {
        Format::Binary => decode_binary(&fs::read(path)?),
        Format::Csv => parse_csv(&fs::read(path)?),
    }
}

pub fn write_table(path: &Path, format: Format, table: &EmbeddingTable) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_binary(table)?,
        Format::Csv => encode_csv(table)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes a labeled dataset as a `PEAR` v1 embedding file using its original labels.
pub fn save_binary(path: &Path, ds: &LabeledDataset<f32>) -> Result<()> {
    fs::write(path, encode_labeled_binary(ds))?;
    Ok(())
}

/// Binary encoding of a labeled dataset. Original labels that are not
/// integers are written as their dense id.
pub fn encode_labeled_binary(ds: &LabeledDataset<f32>) -> Vec<u8> {
    let labels: Vec<i32> = ds
        .labels()
        .iter()
        .map(|&y| ds.label_table().name(y).parse::<i32>().unwrap_or(y as i32))
        .collect();
    encode_binary_raw(ds.embeddings(), &labels)
}

pub fn encode_binary(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let labels = table
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            None => Ok(UNLABELED),
            Some(s) => s.parse::<i32>().map_err(|_| {
                Error::InvalidArgument(format!("row {}: label {s:?} is not a 32-bit integer", i + 1))
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(encode_binary_raw(&table.embeddings, &labels))
}

fn encode_binary_raw(x: &Matrix<f32>, labels: &[i32]) -> Vec<u8> {
    let mut w = ByteWriter::with_header(ContainerKind::Embeddings);
    w.u32(x.rows() as u32);
    w.u32(x.cols() as u32);
    for &v in x.as_slice() {
        w.f32(v);
    }
    w.bytes(LABEL_MAGIC);
    w.u32(labels.len() as u32);
    for &l in labels {
        w.i32(l);
    }
    w.finish()
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = ByteReader::open(bytes, ContainerKind::Embeddings)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::load("byte 12", "dimension must be at least 1"));
    }
    let mut values = Vec::with_capacity(n.saturating_mul(d).min(1 << 28));
    for row in 0..n {
        for _ in 0..d {
            let at = r.pos();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::load(format!("row {} (byte {at})", row + 1), "non-finite value"));
            }
            values.push(v);
        }
    }
    let at = r.pos();
    if r.take(4)? != LABEL_MAGIC {
        return Err(Error::load(format!("byte {at}"), "missing label section magic PLBL"));
    }
    let at = r.pos();
    let ln = r.u32()? as usize;
    if ln != n {
        return Err(Error::load(format!("byte {at}"), format!("label count {ln} != row count {n}")));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos();
        let l = r.i32()?;
        labels.push(match l {
            UNLABELED => None,
            l if l < 0 => return Err(Error::load(format!("byte {at}"), format!("invalid label {l}"))),
            l => Some(l.to_string()),
        });
    }
    if r.remaining() != 0 {
        return Err(Error::load(format!("byte {}", r.pos()), "trailing bytes"));
    }
    Ok(EmbeddingTable {
        ids: (0..n).map(|i| i.to_string()).collect(),
        labels,
        embeddings: Matrix::from_vec(n, d, values)?,
    })
}

pub fn parse_csv(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| Error::load("header", e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::load("header", "expected `id,label,e0,...`"));
    }
    let d = header.len() - 2;
    for (j, h) in header.iter().skip(2).enumerate() {
        if h != format!("e{j}") {
            return Err(Error::load("header", format!("column {} should be e{j}, found {h:?}", j + 2)));
        }
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::load(format!("row {row}"), e.to_string()))?;
        if rec.len() != d + 2 {
            return Err(Error::load(
                format!("row {row}"),
                format!("expected {} fields, found {}", d + 2, rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        labels.push(if rec[1].is_empty() { None } else { Some(rec[1].to_string()) });
        for field in rec.iter().skip(2) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::load(format!("row {row}"), format!("unparseable value {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::load(format!("row {row}"), "non-finite value"));
            }
            values.push(v);
        }
    }
    let n = ids.len();
    Ok(EmbeddingTable {
        ids,
        labels,
        embeddings: Matrix::from_vec(n, d, values)?,
    })
}

pub fn encode_csv(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = table.embeddings.cols();
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in table.embeddings.row_iter().enumerate() {
        let mut rec = vec![table.ids[i].clone(), table.labels[i].clone().unwrap_or_default()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Little-endian container writer.
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn with_header(kind: ContainerKind) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[VERSION, kind as u8, 0, 0]);
        Self { buf }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Little-endian container reader that reports byte offsets on failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Validates the 8-byte header and expects the given kind.
    pub(crate) fn open(buf: &'a [u8], kind: ContainerKind) -> Result<Self> {
        if buf.len() < 8 {
            return Err(Error::load(format!("byte {}", buf.len()), "unexpected end of data in header"));
        }
        if &buf[0..4] != MAGIC {
            return Err(Error::load("byte 0", "unknown magic bytes"));
        }
        if buf[4] != VERSION {
            return Err(Error::load("byte 4", format!("unsupported version {}", buf[4])));
        }
        match ContainerKind::from_tag(buf[5]) {
            Some(k) if k == kind => {}
            Some(k) => {
                return Err(Error::load("byte 5", format!("expected {kind:?} container, found {k:?}")))
            }
            None => return Err(Error::load("byte 5", format!("unknown kind tag {}", buf[5]))),
        }
        if buf[6] != 0 || buf[7] != 0 {
            return Err(Error::load("byte 6", "reserved bytes must be zero"));
        }
        Ok(Self { buf, pos: 8 })
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::load(format!("byte {}", self.pos), "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::load(format!("byte {at}"), "non-finite value"));
        }
        Ok(v)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::load(format!("byte {}", self.pos), "trailing bytes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_two_rows() {
        let ds = parse_csv(b"id,label,e0,e1\na,x,0.0,1.0\nb,y,1.0,0.0\n")
            .unwrap()
            .into_labeled()
            .unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes()), (2, 2, 2));
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.label_table().names(), &["x", "y"]);
    }

    #[test]
    fn csv_nan_names_row() {
        let err = parse_csv(b"id,label,e0,e1\na,x,NaN,1.0\n").unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at row 1");
    }

    #[test]
    fn csv_ragged_and_header_errors() {
        let err = parse_csv(b"id,label,e0,e1\na,x,1.0\n").unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(parse_csv(b"id,lbl,e0\n").is_err());
        assert!(parse_csv(b"id,label,e1\n").is_err());
    }

    #[test]
    fn binary_empty_keeps_dim() {
        let table = EmbeddingTable {
            ids: vec![],
            labels: vec![],
            embeddings: Matrix::zeros(0, 7),
        };
        let bytes = encode_binary(&table).unwrap();
        assert_eq!(bytes.len(), 16 + 8);
        let back = decode_binary(&bytes).unwrap();
        assert_eq!(back.embeddings.rows(), 0);
        assert_eq!(back.embeddings.cols(), 7);
        let ds = back.into_labeled().unwrap();
        assert_eq!((ds.len(), ds.dim()), (0, 7));
    }

    #[test]
    fn binary_layout_is_exact() {
        let table = EmbeddingTable {
            ids: vec!["0".into()],
            labels: vec![Some("3".into())],
            embeddings: Matrix::from_vec(1, 2, vec![1.0, -2.5]).unwrap(),
        };
        let bytes = encode_binary(&table).unwrap();
        let mut expected = b"PEAR".to_vec();
        expected.extend_from_slice(&[1, 1, 0, 0]);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        expected.extend_from_slice(b"PLBL");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&3i32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn binary_errors_name_offsets() {
        let err = decode_binary(b"XEARxxxxxxxxxxxx").unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");

        let table = EmbeddingTable {
            ids: vec!["0".into()],
            labels: vec![None],
            embeddings: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        };
        let mut bytes = encode_binary(&table).unwrap();
        bytes[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        let err = decode_binary(&bytes).unwrap_err();
        assert!(err.to_string().contains("non-finite value at row 1"), "{err}");

        let bytes = encode_binary(&table).unwrap();
        let err = decode_binary(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("unexpected end"), "{err}");
    }

    #[test]
    fn unlabeled_rows_rejected_for_labeled_load() {
        let t = parse_csv(b"id,label,e0\na,,1.0\n").unwrap();
        assert_eq!(t.labels, vec![None]);
        assert!(t.into_labeled().is_err());
    }
}
