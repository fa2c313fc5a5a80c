//! On-disk tensor format, dataset manifest and activation-dump loading.
//!
//! Tensor file layout (all integers little-endian):
//!
//! | bytes       | content                          |
//! |-------------|----------------------------------|
//! | 0..4        | magic `53 58 41 49` (`"SXAI"`)   |
//! | 4..6        | format version, `u16`            |
//! | 6           | dtype code, `u8` (0 = f32)       |
//! | 7           | ndim, `u8` (1..=4)               |
//! | 8..8+8*ndim | each dim as `u64`                |
//! | rest        | payload, f32 row-major           |

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"SXAI";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_NDIM: usize = 4;
pub const MANIFEST_VERSION: u32 = 1;

pub const ROLE_NAMES: [&str; 8] = [
    "train_inputs",
    "query_inputs",
    "latents",
    "decision",
    "attributes",
    "mc_decision_samples",
    "mc_attribute_samples",
    "labels",
];
const REQUIRED_ROLES: [&str; 3] = ["latents", "decision", "attributes"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("invalid dims {0:?}: need 1..=4 nonzero axes")]
    InvalidDims(Vec<usize>),
    #[error("dimension product overflows")]
    DimensionOverflow,
    #[error("payload length {actual} does not match dims (expected {expected})")]
    PayloadLength { expected: usize, actual: usize },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest is missing required role `{0}`")]
    MissingRole(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("labels must be non-negative integers (row {row}: {value})")]
    NonIntegralLabel { row: usize, value: f32 },
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = checked_len(&dims)?;
        if expected != data.len() {
            return Err(DataError::PayloadLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_slice_1d(v: &[f32]) -> Self {
        Self {
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Views a 2-D tensor (or a 1-D one as a column) as an f64 matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (r, c) = match self.dims.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            other => {
                return Err(DataError::ShapeMismatch(format!(
                    "expected a 1-D or 2-D tensor, got dims {other:?}"
                )))
            }
        };
        Ok(Matrix::from_vec(
            r,
            c,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        ))
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_NDIM || dims.contains(&0) {
        return Err(DataError::InvalidDims(dims.to_vec()));
    }
    let mut n: usize = 1;
    for &d in dims {
        n = n.checked_mul(d).ok_or(DataError::DimensionOverflow)?;
    }
    n.checked_mul(4).ok_or(DataError::DimensionOverflow)?;
    Ok(n)
}

pub fn header_len(ndim: usize) -> usize {
    8 + 8 * ndim
}

pub fn encode_tensor(t: &TensorFile) -> Result<Vec<u8>> {
    let n = checked_len(&t.dims)?;
    let mut out = Vec::with_capacity(header_len(t.dims.len()) + 4 * n);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a tensor. Non-finite values are rejected unless `allow_non_finite`.
pub fn decode_tensor(bytes: &[u8], allow_non_finite: bool) -> Result<TensorFile> {
    if bytes.len() < 8 {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(DataError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(DataError::TruncatedPayload {
            expected: 8,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(DataError::UnsupportedDtype(bytes[6]));
    }
    let ndim = bytes[7] as usize;
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(DataError::TruncatedPayload {
            expected: hlen,
            actual: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let off = 8 + 8 * k;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| DataError::DimensionOverflow)?);
    }
    let n = checked_len(&dims)?;
    let expected = hlen + 4 * n;
    if bytes.len() < expected {
        return Err(DataError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(n);
    for (index, chunk) in bytes[hlen..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !allow_non_finite && !v.is_finite() {
            return Err(DataError::NonFiniteValue { index });
        }
        data.push(v);
    }
    Ok(TensorFile { dims, data })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorFile) -> Result<()> {
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    decode_tensor(&fs::read(path)?, false)
}

pub fn read_tensor_maskable(path: impl AsRef<Path>) -> Result<TensorFile> {
    decode_tensor(&fs::read(path)?, true)
}

/// Converts a CSV file (one header row, comma-separated numeric cells) into
/// an N×C tensor.
pub fn csv_to_tensor(csv_path: impl AsRef<Path>) -> Result<TensorFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| DataError::Csv(e.to_string()))?;
    let cols = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != cols {
            return Err(DataError::Csv(format!(
                "row {} has {} fields, header has {cols}",
                line + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f32 = field.parse().map_err(|_| {
                DataError::Csv(format!("row {}: cannot parse `{field}`", line + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Csv("no data rows".into()));
    }
    TensorFile::new(vec![rows, cols], data)
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEntry {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    /// Allows NaN/Inf values in this tensor.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub maskable: bool,
}

/// Half-open row ranges `[start, end)` into the per-example roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: [usize; 2],
    pub query: [usize; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub roles: BTreeMap<String, RoleEntry>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        for role in m.roles.keys() {
            if !ROLE_NAMES.contains(&role.as_str()) {
                return Err(DataError::UnknownRole(role.clone()));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

// ---------------------------------------------------------------------------
// Activation dump

/// T×N×W samples, flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCube {
    pub passes: usize,
    pub examples: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl SampleCube {
    pub fn new(passes: usize, examples: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(passes * examples * width, data.len());
        Self {
            passes,
            examples,
            width,
            data,
        }
    }

    pub fn get(&self, pass: usize, example: usize) -> &[f64] {
        let off = (pass * self.examples + example) * self.width;
        &self.data[off..off + self.width]
    }

    /// The T rows belonging to one example.
    pub fn example_rows(&self, example: usize) -> Vec<Vec<f64>> {
        (0..self.passes)
            .map(|t| self.get(t, example).to_vec())
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Labels(Vec<usize>),
    Probabilities(Matrix),
}

impl Decision {
    pub fn len(&self) -> usize {
        match self {
            Decision::Labels(l) => l.len(),
            Decision::Probabilities(p) => p.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard class per example; argmax with ties toward the lower index.
    pub fn class_labels(&self) -> Vec<usize> {
        match self {
            Decision::Labels(l) => l.clone(),
            Decision::Probabilities(p) => p.iter_rows().map(argmax).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Decision::Labels(l) => l.iter().max().map_or(0, |m| m + 1),
            Decision::Probabilities(p) => p.cols(),
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DumpDims {
    /// examples
    pub n: usize,
    /// latent units
    pub m: usize,
    /// attributes
    pub k: usize,
    /// decision classes
    pub c: usize,
    /// stochastic passes, when MC samples are present
    pub t: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ActivationDump {
    pub manifest: Manifest,
    pub manifest_digest: String,
    pub train_inputs: Option<Matrix>,
    pub query_inputs: Option<Matrix>,
    pub latents: Matrix,
    pub decision: Decision,
    pub attributes: Matrix,
    pub mc_decision_samples: Option<SampleCube>,
    pub mc_attribute_samples: Option<SampleCube>,
    pub labels: Option<Vec<usize>>,
    pub dims: DumpDims,
}

/// Which rows of the per-example roles an analysis runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    All,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "all" => Ok(Split::All),
            other => Err(format!("unknown split `{other}` (train|query|all)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::All => "all",
        })
    }
}

impl ActivationDump {
    /// Row indices for a split. Without split metadata every split is all rows.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        let n = self.dims.n;
        match (split, self.manifest.metadata.splits) {
            (Split::All, _) | (_, None) => (0..n).collect(),
            (Split::Train, Some(s)) => (s.train[0]..s.train[1]).collect(),
            (Split::Query, Some(s)) => (s.query[0]..s.query[1]).collect(),
        }
    }

    pub fn attribute_names(&self) -> Vec<String> {
        match &self.manifest.metadata.attribute_names {
            Some(names) if names.len() == self.dims.k => names.clone(),
            _ => (0..self.dims.k).map(|j| format!("attribute_{j}")).collect(),
        }
    }

    /// A copy without the Monte-Carlo sample roles.
    pub fn without_mc_samples(&self) -> Self {
        let mut d = self.clone();
        d.mc_decision_samples = None;
        d.mc_attribute_samples = None;
        d.dims.t = None;
        d
    }
}

fn labels_from(t: &TensorFile, role: &str) -> Result<Vec<usize>> {
    if t.ndim() != 1 {
        return Err(DataError::ShapeMismatch(format!(
            "{role} must be 1-D, got dims {:?}",
            t.dims()
        )));
    }
    t.data()
        .iter()
        .enumerate()
        .map(|(row, &value)| {
            if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(DataError::NonIntegralLabel { row, value })
            }
        })
        .collect()
}

fn cube_from(t: &TensorFile, role: &str) -> Result<SampleCube> {
    match t.dims() {
        [tt, n, w] => Ok(SampleCube::new(
            *tt,
            *n,
            *w,
            t.data().iter().map(|&v| f64::from(v)).collect(),
        )),
        other => Err(DataError::ShapeMismatch(format!(
            "{role} must be T×N×W, got dims {other:?}"
        ))),
    }
}

fn matrix_2d(t: &TensorFile, role: &str) -> Result<Matrix> {
    if t.ndim() != 2 {
        return Err(DataError::ShapeMismatch(format!(
            "{role} must be 2-D, got dims {:?}",
            t.dims()
        )));
    }
    t.to_matrix()
}

pub fn manifest_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Loads and cross-validates every role referenced by a manifest. Relative
/// paths resolve against the manifest's directory.
pub fn load_dump(manifest_path: impl AsRef<Path>) -> Result<ActivationDump> {
    let manifest_path = manifest_path.as_ref();
    let bytes = fs::read(manifest_path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| DataError::Manifest("manifest is not valid UTF-8".into()))?;
    let manifest = Manifest::parse(text)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    load_dump_from(manifest, &base, manifest_digest(&bytes))
}

pub fn load_dump_from(manifest: Manifest, base: &Path, digest: String) -> Result<ActivationDump> {
    for role in REQUIRED_ROLES {
        if !manifest.roles.contains_key(role) {
            return Err(DataError::MissingRole(role.to_string()));
        }
    }
    let mut tensors: BTreeMap<&str, TensorFile> = BTreeMap::new();
    for (role, entry) in &manifest.roles {
        let path = base.join(&entry.path);
        let t = if entry.maskable {
            read_tensor_maskable(&path)?
        } else {
            read_tensor(&path)?
        };
        if let Some(shape) = &entry.shape {
            if shape.as_slice() != t.dims() {
                return Err(DataError::ShapeMismatch(format!(
                    "{role}: manifest declares {shape:?}, file has {:?}",
                    t.dims()
                )));
            }
        }
        tensors.insert(role.as_str(), t);
    }

    let latents = matrix_2d(&tensors["latents"], "latents")?;
    let (n, m) = (latents.rows(), latents.cols());

    let decision = match tensors["decision"].ndim() {
        1 => Decision::Labels(labels_from(&tensors["decision"], "decision")?),
        2 => Decision::Probabilities(tensors["decision"].to_matrix()?),
        _ => {
            return Err(DataError::ShapeMismatch(format!(
                "decision must be N or N×C, got dims {:?}",
                tensors["decision"].dims()
            )))
        }
    };
    if decision.len() != n {
        return Err(DataError::ShapeMismatch(format!(
            "decision has {} rows, latents has {n}",
            decision.len()
        )));
    }
    let c = decision.num_classes();

    let attributes = matrix_2d(&tensors["attributes"], "attributes")?;
    if attributes.rows() != n {
        return Err(DataError::ShapeMismatch(format!(
            "attributes has {} rows, latents has {n}",
            attributes.rows()
        )));
    }
    let k = attributes.cols();

    let labels = match tensors.get("labels") {
        Some(t) => {
            let l = labels_from(t, "labels")?;
            if l.len() != n {
                return Err(DataError::ShapeMismatch(format!(
                    "labels has {} rows, latents has {n}",
                    l.len()
                )));
            }
            Some(l)
        }
        None => None,
    };

    let mc_decision_samples = match tensors.get("mc_decision_samples") {
        Some(t) => {
            let cube = cube_from(t, "mc_decision_samples")?;
            if cube.examples != n || cube.width != c {
                return Err(DataError::ShapeMismatch(format!(
                    "mc_decision_samples is {}×{}×{}, expected T×{n}×{c}",
                    cube.passes, cube.examples, cube.width
                )));
            }
            Some(cube)
        }
        None => None,
    };
    let mc_attribute_samples = match tensors.get("mc_attribute_samples") {
        Some(t) => {
            let cube = cube_from(t, "mc_attribute_samples")?;
            if cube.examples != n || cube.width != k {
                return Err(DataError::ShapeMismatch(format!(
                    "mc_attribute_samples is {}×{}×{}, expected T×{n}×{k}",
                    cube.passes, cube.examples, cube.width
                )));
            }
            Some(cube)
        }
        None => None,
    };
    if let (Some(a), Some(b)) = (&mc_decision_samples, &mc_attribute_samples) {
        if a.passes != b.passes {
            return Err(DataError::ShapeMismatch(format!(
                "mc sample pass counts differ ({} vs {})",
                a.passes, b.passes
            )));
        }
    }
    let t = mc_decision_samples
        .as_ref()
        .map(|c| c.passes)
        .or(mc_attribute_samples.as_ref().map(|c| c.passes));

    let train_inputs = tensors
        .get("train_inputs")
        .map(|t| matrix_2d(t, "train_inputs"))
        .transpose()?;
    let query_inputs = tensors
        .get("query_inputs")
        .map(|t| matrix_2d(t, "query_inputs"))
        .transpose()?;
    if let (Some(tr), Some(q)) = (&train_inputs, &query_inputs) {
        if tr.cols() != q.cols() {
            return Err(DataError::ShapeMismatch(format!(
                "train_inputs has {} features, query_inputs has {}",
                tr.cols(),
                q.cols()
            )));
        }
    }

    if let Some(s) = manifest.metadata.splits {
        for (name, [lo, hi]) in [("train", s.train), ("query", s.query)] {
            if lo > hi || hi > n {
                return Err(DataError::ShapeMismatch(format!(
                    "{name} split [{lo}, {hi}) out of range for N={n}"
                )));
            }
        }
    }

    Ok(ActivationDump {
        manifest,
        manifest_digest: digest,
        train_inputs,
        query_inputs,
        latents,
        decision,
        attributes,
        mc_decision_samples,
        mc_attribute_samples,
        labels,
        dims: DumpDims { n, m, k, c, t },
    })
}
