//! NPY array files and the JSON dataset manifest.
//!
//! Writing always produces NPY v1.0, C order, little-endian, with the header
//! laid out exactly as numpy lays it out (including the spare room numpy keeps
//! after the dict so the leading axis can grow in place). Reading accepts
//! v1.0 and v2.0 headers and transposes Fortran-ordered payloads to row-major.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const ARRAY_ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;
/// Rank cap; keeps every writable header inside the v1.0 `u16` length field.
pub const MAX_RANK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    pub fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
            DType::I64 => "<i8",
        }
    }

    pub fn from_descr(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(DType::F32),
            "<f8" => Some(DType::F64),
            "<i8" => Some(DType::I64),
            _ => None,
        }
    }

    pub fn item_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descr())
    }
}

/// Flat row-major storage in the dtype the tensor was written with.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("bad magic at offset {offset}: expected \\x93NUMPY")]
    BadMagic { offset: usize },
    #[error("unsupported NPY version {major}.{minor} at offset {offset}")]
    UnsupportedVersion { major: u8, minor: u8, offset: usize },
    #[error("unsupported dtype {descr:?} at offset {offset}")]
    UnsupportedDtype { descr: String, offset: usize },
    #[error("malformed header at offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("payload at offset {offset} has {found} bytes, header requires {expected}")]
    LengthMismatch {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("shape {shape:?} holds {expected} elements but data has {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("rank {0} exceeds the supported maximum of {MAX_RANK}")]
    RankTooLarge(usize),
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankTooLarge(shape.len()));
        }
        let expected = element_count(&shape);
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I64(data))
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to `f64`, row-major.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_repr(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// Serializes `t` as an NPY v1.0 file.
pub fn write_array(t: &Tensor) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        t.dtype().descr(),
        shape_repr(&t.shape)
    );
    if let Some(first) = t.shape.first() {
        let digits = first.to_string().len();
        dict.push_str(&" ".repeat(GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits)));
    }
    let hlen = dict.len() + 1;
    let pad = ARRAY_ALIGN - (MAGIC.len() + 2 + 2 + hlen) % ARRAY_ALIGN;
    let header_len = u16::try_from(hlen + pad).expect("rank cap keeps header under 64 KiB");

    let payload = t.len() * t.dtype().item_size();
    let mut out = Vec::with_capacity(10 + hlen + pad + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    match &t.data {
        TensorData::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

#[derive(Debug)]
struct Header {
    dtype: DType,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses an NPY v1.0 / v2.0 file.
pub fn read_array(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(TensorError::BadMagic { offset: 0 });
    }
    let truncated = |offset: usize| TensorError::MalformedHeader {
        offset,
        reason: "file truncated inside header".into(),
    };
    if bytes.len() < 8 {
        return Err(truncated(6));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, dict_start) = match (major, minor) {
        (1, 0) => {
            let raw = bytes.get(8..10).ok_or_else(|| truncated(8))?;
            (u16::from_le_bytes([raw[0], raw[1]]) as usize, 10)
        }
        (2, 0) => {
            let raw = bytes.get(8..12).ok_or_else(|| truncated(8))?;
            (
                u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize,
                12,
            )
        }
        _ => {
            return Err(TensorError::UnsupportedVersion {
                major,
                minor,
                offset: 6,
            })
        }
    };
    let payload_start = dict_start + header_len;
    let raw_header = bytes
        .get(dict_start..payload_start)
        .ok_or_else(|| truncated(dict_start))?;
    let text = std::str::from_utf8(raw_header).map_err(|e| TensorError::MalformedHeader {
        offset: dict_start + e.valid_up_to(),
        reason: "header is not ASCII".into(),
    })?;
    let header = parse_header(text, dict_start)?;

    let count = element_count(&header.shape);
    let expected = count * header.dtype.item_size();
    let payload = &bytes[payload_start..];
    if payload.len() != expected {
        return Err(TensorError::LengthMismatch {
            offset: payload_start,
            expected,
            found: payload.len(),
        });
    }

    let data = match header.dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I64 => TensorData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    let data = if header.fortran_order && header.shape.len() > 1 {
        let perm = fortran_to_c_permutation(&header.shape);
        match data {
            TensorData::F32(v) => TensorData::F32(perm.iter().map(|&i| v[i]).collect()),
            TensorData::F64(v) => TensorData::F64(perm.iter().map(|&i| v[i]).collect()),
            TensorData::I64(v) => TensorData::I64(perm.iter().map(|&i| v[i]).collect()),
        }
    } else {
        data
    };
    Tensor::new(header.shape, data)
}

/// For each row-major position, the index of the same element in a
/// column-major buffer.
fn fortran_to_c_permutation(shape: &[usize]) -> Vec<usize> {
    let n = element_count(shape);
    let rank = shape.len();
    let mut f_strides = vec![1usize; rank];
    for axis in 1..rank {
        f_strides[axis] = f_strides[axis - 1] * shape[axis - 1];
    }
    let mut index = vec![0usize; rank];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(index.iter().zip(&f_strides).map(|(i, s)| i * s).sum());
        for axis in (0..rank).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    out
}

#[derive(Debug, PartialEq)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct HeaderParser<'a> {
    text: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn err(&self, reason: impl Into<String>) -> TensorError {
        TensorError::MalformedHeader {
            offset: self.base + self.pos,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), TensorError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string literal")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.text.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.text[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn literal(&mut self) -> Result<Literal, TensorError> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Literal::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(c) if c.is_ascii_digit() => {
                            let start = self.pos;
                            while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit()
                            {
                                self.pos += 1;
                            }
                            let digits = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
                            let dim = digits
                                .parse()
                                .map_err(|_| self.err("shape extent overflows"))?;
                            dims.push(dim);
                            if self.peek() == Some(b',') {
                                self.pos += 1;
                            } else if self.peek() != Some(b')') {
                                return Err(self.err("expected ',' or ')' in shape"));
                            }
                        }
                        _ => return Err(self.err("expected shape extent")),
                    }
                }
                Ok(Literal::Tuple(dims))
            }
            _ => {
                let rest = &self.text[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Literal::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Literal::Bool(false))
                } else {
                    Err(self.err("unrecognized literal"))
                }
            }
        }
    }
}

fn parse_header(text: &str, base: usize) -> Result<Header, TensorError> {
    let mut p = HeaderParser {
        text: text.as_bytes(),
        pos: 0,
        base,
    };
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    p.expect(b'{')?;
    loop {
        if p.peek() == Some(b'}') {
            p.pos += 1;
            if p.peek().is_some() {
                return Err(p.err("trailing characters after header dict"));
            }
            break;
        }
        let key_offset = base + p.pos;
        let key = p.string()?;
        p.expect(b':')?;
        p.skip_ws();
        let value_offset = base + p.pos;
        let value = p.literal()?;
        match (key.as_str(), value) {
            ("descr", Literal::Str(s)) => descr = Some((s, value_offset)),
            ("fortran_order", Literal::Bool(b)) => fortran = Some(b),
            ("shape", Literal::Tuple(t)) => shape = Some(t),
            (k, _) => {
                return Err(TensorError::MalformedHeader {
                    offset: key_offset,
                    reason: format!("unexpected key or value type for {k:?}"),
                })
            }
        }
        match p.peek() {
            Some(b',') => p.pos += 1,
            Some(b'}') => {}
            _ => return Err(p.err("expected ',' or '}'")),
        }
    }
    let missing = |what: &str| TensorError::MalformedHeader {
        offset: base,
        reason: format!("header lacks '{what}'"),
    };
    let (descr, descr_offset) = descr.ok_or_else(|| missing("descr"))?;
    let dtype = DType::from_descr(&descr).ok_or(TensorError::UnsupportedDtype {
        descr: descr.clone(),
        offset: descr_offset,
    })?;
    let shape = shape.ok_or_else(|| missing("shape"))?;
    if shape.len() > MAX_RANK {
        return Err(TensorError::RankTooLarge(shape.len()));
    }
    Ok(Header {
        dtype,
        fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
        shape,
    })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub label_name: String,
    pub feature_path: String,
    pub backbone: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestFile {
    class_names: Vec<String>,
    feature_dim: usize,
    entries: Vec<ManifestEntry>,
}

/// A validated manifest. `labels[i]` is the class index of `entries[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub entries: Vec<ManifestEntry>,
    pub labels: Vec<usize>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_file(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.entries[i].feature_path)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("manifest declares no class names")]
    NoClasses,
    #[error("class name {0:?} is listed twice")]
    DuplicateClass(String),
    #[error("feature_dim must be positive")]
    ZeroFeatureDim,
    #[error("duplicate sample_id {0:?}")]
    DuplicateSampleId(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("feature file for sample {sample_id:?} not found: {path}")]
    MissingFeatureFile { sample_id: String, path: PathBuf },
}

/// Loads and validates a manifest; feature paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&bytes, base)
}

/// Validates manifest bytes. Feature file existence is checked under `base_dir`.
pub fn parse_manifest(bytes: &[u8], base_dir: &Path) -> Result<DatasetManifest, ManifestError> {
    let file: ManifestFile = serde_json::from_slice(bytes)?;
    if file.class_names.is_empty() {
        return Err(ManifestError::NoClasses);
    }
    if file.feature_dim == 0 {
        return Err(ManifestError::ZeroFeatureDim);
    }
    if file.entries.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }
    let mut classes = HashSet::new();
    for name in &file.class_names {
        if !classes.insert(name.as_str()) {
            return Err(ManifestError::DuplicateClass(name.clone()));
        }
    }
    let mut ids = HashSet::new();
    let mut labels = Vec::with_capacity(file.entries.len());
    for entry in &file.entries {
        if !ids.insert(entry.sample_id.as_str()) {
            return Err(ManifestError::DuplicateSampleId(entry.sample_id.clone()));
        }
        let label = file
            .class_names
            .iter()
            .position(|c| *c == entry.label_name)
            .ok_or_else(|| ManifestError::UnknownLabel(entry.label_name.clone()))?;
        labels.push(label);
        let feature = base_dir.join(&entry.feature_path);
        if !feature.is_file() {
            return Err(ManifestError::MissingFeatureFile {
                sample_id: entry.sample_id.clone(),
                path: feature,
            });
        }
    }
    Ok(DatasetManifest {
        class_names: file.class_names,
        feature_dim: file.feature_dim,
        entries: file.entries,
        labels,
        base_dir: base_dir.to_path_buf(),
    })
}

/// Serializes a manifest in the on-disk JSON schema.
pub fn manifest_to_json(
    class_names: &[String],
    feature_dim: usize,
    entries: &[ManifestEntry],
) -> String {
    let file = ManifestFile {
        class_names: class_names.to_vec(),
        feature_dim,
        entries: entries.to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("manifest serializes")
}
