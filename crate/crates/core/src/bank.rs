//! Feature banks: labelled joint image+text embedding vectors.
//!
//! Two on-disk encodings are supported. The binary one is little-endian:
//!
//! ```text
//! bytes 0..8    magic  b"FBANK\x00\x01\x00"
//! bytes 8..16   n      u64
//! bytes 16..24  d      u64
//! n records     d x f64 (IEEE-754), then one label byte (0 or 1)
//! ```
//!
//! The CSV encoding has header `label,f0,f1,...,f{d-1}` and one example per
//! line, values written in shortest round-trip form.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng;

pub const BANK_MAGIC: [u8; 8] = *b"FBANK\x00\x01\x00";

/// Feature width produced by concatenating 768-d image and 768-d text embeddings.
pub const CLIP_JOINT_DIM: usize = 1536;

const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("empty path")]
    EmptyPath,
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dimension mismatch at row {row}: expected {expected} values, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("non-binary label at row {row}: {value}")]
    BadLabel { row: usize, value: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("unparsable value at row {row}, column {col}: {value:?}")]
    Parse { row: usize, col: usize, value: String },
    #[error("truncated file: header declares {declared} rows, only {found} complete")]
    Truncated { declared: u64, found: usize },
    #[error("{extra} trailing bytes after the last declared row")]
    TrailingBytes { extra: usize },
    #[error("invalid bank: {0}")]
    Invalid(String),
}

/// Binary class label. `Real` is an authentic image, `Generated` a diffusion output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Generated),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Generated => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn is_positive(self) -> bool {
        self == Label::Generated
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Real => Label::Generated,
            Label::Generated => Label::Real,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// A finite-valued embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Fails with the offending column if any value is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self, usize> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(col) => Err(col),
            None => Ok(Self(values)),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub feature: FeatureVector,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.n_pos + self.n_neg
    }

    pub fn has_both(&self) -> bool {
        self.n_pos > 0 && self.n_neg > 0
    }
}

/// Ordered collection of labelled feature vectors sharing one dimension.
///
/// Immutable once built; order is preserved from construction or file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    examples: Vec<Example>,
    source_tag: String,
}

impl FeatureBank {
    pub fn new(
        dim: usize,
        examples: Vec<Example>,
        source_tag: impl Into<String>,
    ) -> Result<Self, BankError> {
        if dim == 0 {
            return Err(BankError::Invalid("dimension must be positive".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.feature.len() != dim {
                return Err(BankError::DimensionMismatch {
                    row: i + 1,
                    expected: dim,
                    found: ex.feature.len(),
                });
            }
        }
        Ok(Self {
            dim,
            examples,
            source_tag: source_tag.into(),
        })
    }

    /// Builds a bank from raw rows, validating finiteness and width.
    pub fn from_rows(
        dim: usize,
        rows: Vec<(Vec<f64>, Label)>,
        source_tag: impl Into<String>,
    ) -> Result<Self, BankError> {
        let mut examples = Vec::with_capacity(rows.len());
        for (i, (values, label)) in rows.into_iter().enumerate() {
            if values.len() != dim {
                return Err(BankError::DimensionMismatch {
                    row: i + 1,
                    expected: dim,
                    found: values.len(),
                });
            }
            let feature =
                FeatureVector::new(values).map_err(|col| BankError::NonFinite { row: i + 1, col })?;
            examples.push(Example { feature, label });
        }
        Self::new(dim, examples, source_tag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    pub fn class_counts(&self) -> ClassCounts {
        let n_pos = self.examples.iter().filter(|e| e.label.is_positive()).count();
        ClassCounts {
            n_pos,
            n_neg: self.examples.len() - n_pos,
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Copies all feature vectors into a row-major `n x d` matrix.
    pub fn features(&self) -> Array2<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }

    /// Copies the selected rows into a row-major matrix, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim));
        for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
            row.as_slice_mut()
                .expect("fresh array is contiguous")
                .copy_from_slice(self.examples[i].feature.as_slice());
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureBank {
        FeatureBank {
            dim: self.dim,
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            source_tag: self.source_tag.clone(),
        }
    }

    /// Same vectors with every label inverted.
    pub fn with_flipped_labels(&self) -> FeatureBank {
        FeatureBank {
            dim: self.dim,
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    feature: e.feature.clone(),
                    label: e.label.flipped(),
                })
                .collect(),
            source_tag: self.source_tag.clone(),
        }
    }
}

pub fn class_counts(bank: &FeatureBank) -> ClassCounts {
    bank.class_counts()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BankFormat {
    Binary,
    Csv,
}

impl BankFormat {
    /// `.csv` files are CSV; everything else is treated as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => BankFormat::Csv,
            _ => BankFormat::Binary,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BankError + '_ {
    move |source| BankError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_bank(path: impl AsRef<Path>, format: BankFormat) -> Result<FeatureBank, BankError> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(BankError::EmptyPath);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bank = match format {
        BankFormat::Binary => decode_binary(&bytes)?,
        BankFormat::Csv => decode_csv(&bytes)?,
    };
    Ok(bank.with_source_tag(path.display().to_string()))
}

pub fn save_bank(
    bank: &FeatureBank,
    path: impl AsRef<Path>,
    format: BankFormat,
) -> Result<(), BankError> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(BankError::EmptyPath);
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        BankFormat::Binary => encode_binary(bank, &mut w),
        BankFormat::Csv => encode_csv(bank, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(io_err(path))
}

pub fn encode_binary<W: Write>(bank: &FeatureBank, w: &mut W) -> io::Result<()> {
    w.write_all(&BANK_MAGIC)?;
    w.write_all(&(bank.len() as u64).to_le_bytes())?;
    w.write_all(&(bank.dim() as u64).to_le_bytes())?;
    for ex in bank.examples() {
        for v in ex.feature.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[ex.label.as_u8()])?;
    }
    Ok(())
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeatureBank, BankError> {
    if bytes.len() < HEADER_LEN {
        return Err(BankError::Header(format!(
            "need {HEADER_LEN} header bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes[..8] != BANK_MAGIC {
        return Err(BankError::Header("bad magic".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if d == 0 {
        return Err(BankError::Header("dimension is zero".into()));
    }
    let dim = usize::try_from(d).map_err(|_| BankError::Header("dimension too large".into()))?;
    let record = dim
        .checked_mul(8)
        .and_then(|b| b.checked_add(1))
        .ok_or_else(|| BankError::Header("dimension too large".into()))?;
    let body = &bytes[HEADER_LEN..];
    let complete = body.len() / record;
    if (complete as u64) < n {
        return Err(BankError::Truncated {
            declared: n,
            found: complete,
        });
    }
    let n = n as usize;
    if body.len() != n * record {
        return Err(BankError::TrailingBytes {
            extra: body.len() - n * record,
        });
    }

    let mut examples = Vec::with_capacity(n);
    for (i, rec) in body.chunks_exact(record).enumerate() {
        let row = i + 1;
        let values: Vec<f64> = rec[..dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let feature = FeatureVector::new(values).map_err(|col| BankError::NonFinite { row, col })?;
        let raw = rec[dim * 8];
        let label = Label::from_u8(raw).ok_or(BankError::BadLabel {
            row,
            value: raw.to_string(),
        })?;
        examples.push(Example { feature, label });
    }
    FeatureBank::new(dim, examples, "")
}

pub fn encode_csv<W: Write>(bank: &FeatureBank, w: &mut W) -> io::Result<()> {
    write!(w, "label")?;
    for j in 0..bank.dim() {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for ex in bank.examples() {
        write!(w, "{}", ex.label)?;
        for v in ex.feature.as_slice() {
            // Debug formatting is shortest round-trip and switches to
            // exponent form for tiny or huge magnitudes.
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn decode_csv(bytes: &[u8]) -> Result<FeatureBank, BankError> {
    let text = std::str::from_utf8(bytes).map_err(|e| BankError::Header(e.to_string()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| BankError::Header("missing header line".into()))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("label") {
        return Err(BankError::Header("first column must be `label`".into()));
    }
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(BankError::Header("no feature columns".into()));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if c.trim() != format!("f{j}") {
            return Err(BankError::Header(format!("column {} should be f{j}, found {c:?}", j + 1)));
        }
    }

    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(BankError::DimensionMismatch {
                row,
                expected: dim,
                found: fields.len().saturating_sub(1),
            });
        }
        let label = match fields[0].trim() {
            "0" => Label::Real,
            "1" => Label::Generated,
            other => {
                return Err(BankError::BadLabel {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let mut values = Vec::with_capacity(dim);
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| BankError::Parse {
                row,
                col: j,
                value: f.to_string(),
            })?;
            if !v.is_finite() {
                return Err(BankError::NonFinite { row, col: j });
            }
            values.push(v);
        }
        rows.push((values, label));
    }
    FeatureBank::from_rows(dim, rows, "")
}

/// Two isotropic unit-variance Gaussian classes.
///
/// Negatives are centred at the origin; positives are shifted by
/// `separation` along coordinate 0. Positives come first in the output.
pub fn generate_synthetic(
    n_pos: usize,
    n_neg: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<FeatureBank, BankError> {
    if n_pos + n_neg == 0 {
        return Err(BankError::Invalid("need at least one example".into()));
    }
    if dim == 0 {
        return Err(BankError::Invalid("dimension must be positive".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(BankError::Invalid(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let mut gen = rng::seeded(seed);
    let mut examples = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let label = if i < n_pos { Label::Generated } else { Label::Real };
        let mut values: Vec<f64> = (0..dim).map(|_| gen.sample(StandardNormal)).collect();
        if label.is_positive() {
            values[0] += separation;
        }
        examples.push(Example {
            feature: FeatureVector(values),
            label,
        });
    }
    FeatureBank::new(
        dim,
        examples,
        format!("synthetic:n_pos={n_pos},n_neg={n_neg},dim={dim},sep={separation},seed={seed}"),
    )
}
