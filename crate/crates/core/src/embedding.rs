//! Per-frame embedding sequences: validation, normalization and file I/O.
//!
//! Two on-disk layouts are supported. The binary layout is
//!
//! ```text
//! b"EMB1" | u32 n | u32 d | n*d f32, little-endian, row-major
//! ```
//!
//! accompanied by a `<name>.meta.json` sidecar carrying the video id,
//! duration, per-frame timestamps and the source sampling rate. The CSV
//! layout has a `t,e0,...,e{d-1}` header and one row per frame; its sidecar
//! is optional.
//!
//! Row indices in errors are 0-based, matching the file order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch at row {row}: {detail}")]
    DimensionMismatch { row: usize, detail: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("timestamp at row {row} outside [0, duration]")]
    TimestampOutOfRange { row: usize },
    #[error("zero-norm embedding at row {row}")]
    ZeroNorm { row: usize },
    #[error("empty sequence: {0}")]
    Empty(String),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidRate(String),
    #[error("missing metadata sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sidecar json: {0}")]
    Json(#[from] serde_json::Error),
}

impl EmbeddingError {
    /// Stable short code, one per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedHeader(_) => "E_HEADER",
            Self::DimensionMismatch { .. } => "E_DIM",
            Self::NonFinite { .. } => "E_NONFINITE",
            Self::NonMonotoneTimestamps { .. } => "E_TIME_ORDER",
            Self::TimestampOutOfRange { .. } => "E_TIME_RANGE",
            Self::ZeroNorm { .. } => "E_ZERO_NORM",
            Self::Empty(_) => "E_EMPTY",
            Self::Metadata(_) => "E_META",
            Self::InvalidRate(_) => "E_RATE",
            Self::MissingSidecar(_) => "E_SIDECAR",
            Self::Io(_) => "E_IO",
            Self::Json(_) => "E_JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// On-disk embedding layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Guess from the file extension; anything other than `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Sidecar metadata stored next to an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub video_id: String,
    pub duration_s: f64,
    #[serde(default)]
    pub timestamps_s: Vec<f64>,
    pub source_fps: f64,
}

/// `n` frame embeddings of dimension `d` with their timestamps.
///
/// Rows are stored as `f64`; the binary format stores `f32`, so any sequence
/// loaded from disk round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    video_id: String,
    dim: usize,
    vectors: Vec<f64>,
    timestamps_s: Vec<f64>,
    duration_s: f64,
    source_fps: f64,
}

impl EmbeddingSequence {
    /// Build and validate a sequence from row-major `vectors` (`n * dim` values).
    pub fn new(
        video_id: impl Into<String>,
        dim: usize,
        vectors: Vec<f64>,
        timestamps_s: Vec<f64>,
        duration_s: f64,
        source_fps: f64,
    ) -> Result<Self> {
        let n = timestamps_s.len();
        if n == 0 {
            return Err(EmbeddingError::Empty("no frames".into()));
        }
        if dim == 0 {
            return Err(EmbeddingError::Empty("embedding dimension is zero".into()));
        }
        if vectors.len() != n * dim {
            let rows = vectors.len() / dim;
            return Err(EmbeddingError::DimensionMismatch {
                row: rows.min(n),
                detail: format!(
                    "expected {n} rows of {dim} values, got {} values",
                    vectors.len()
                ),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        if !duration_s.is_finite() || duration_s <= 0.0 {
            return Err(EmbeddingError::Metadata(format!(
                "duration_s must be positive, got {duration_s}"
            )));
        }
        if !source_fps.is_finite() || source_fps < 0.0 {
            return Err(EmbeddingError::Metadata(format!(
                "source_fps must be non-negative, got {source_fps}"
            )));
        }
        for (row, &t) in timestamps_s.iter().enumerate() {
            if !t.is_finite() {
                return Err(EmbeddingError::TimestampOutOfRange { row });
            }
            if row > 0 && t <= timestamps_s[row - 1] {
                return Err(EmbeddingError::NonMonotoneTimestamps { row });
            }
        }
        if timestamps_s[0] < 0.0 {
            return Err(EmbeddingError::TimestampOutOfRange { row: 0 });
        }
        if timestamps_s[n - 1] > duration_s {
            return Err(EmbeddingError::TimestampOutOfRange { row: n - 1 });
        }
        Ok(Self {
            video_id: video_id.into(),
            dim,
            vectors,
            timestamps_s,
            duration_s,
            source_fps,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn len(&self) -> usize {
        self.timestamps_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_s.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps_s
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn source_fps(&self) -> f64 {
        self.source_fps
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            video_id: self.video_id.clone(),
            duration_s: self.duration_s,
            timestamps_s: self.timestamps_s.clone(),
            source_fps: self.source_fps,
        }
    }

    /// Scale every row to unit L2 norm.
    pub fn normalize(&self) -> Result<Self> {
        let mut vectors = self.vectors.clone();
        for (row, chunk) in vectors.chunks_exact_mut(self.dim).enumerate() {
            let norm = l2_norm(chunk);
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroNorm { row });
            }
            chunk.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            vectors,
            ..self.clone()
        })
    }

    /// Write the binary file and its sidecar.
    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Binary => self.write_binary(path)?,
            Format::Csv => self.write_csv(path)?,
        }
        let meta = serde_json::to_vec_pretty(&self.metadata())?;
        fs::write(sidecar_path(path), meta)?;
        Ok(())
    }

    fn write_binary(&self, path: &Path) -> Result<()> {
        let n = u32::try_from(self.len())
            .map_err(|_| EmbeddingError::MalformedHeader("n exceeds u32".into()))?;
        let d = u32::try_from(self.dim)
            .map_err(|_| EmbeddingError::MalformedHeader("d exceeds u32".into()))?;
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(&d.to_le_bytes())?;
        for &v in &self.vectors {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|c| format!("e{c}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, row) in self.timestamps_s.iter().zip(self.rows()) {
            write!(out, "{t}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `foo/bar.emb` -> `foo/bar.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Load and validate an embedding file, merging its metadata sidecar.
pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSequence> {
    match format {
        Format::Binary => load_binary(path),
        Format::Csv => load_csv(path),
    }
}

fn read_sidecar(path: &Path) -> Result<Option<Metadata>> {
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn load_binary(path: &Path) -> Result<EmbeddingSequence> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(EmbeddingError::MalformedHeader(format!(
            "file is {} bytes, header needs 12",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(EmbeddingError::MalformedHeader("bad magic bytes".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(EmbeddingError::MalformedHeader(format!(
            "declared n={n}, d={d}; both must be positive"
        )));
    }
    let body = &bytes[12..];
    let row_bytes = d * 4;
    if body.len() != n * row_bytes {
        let present = body.len() / row_bytes;
        return Err(EmbeddingError::DimensionMismatch {
            row: present.min(n),
            detail: format!(
                "header declares {n} rows of {d} f32, body holds {} bytes ({present} full rows)",
                body.len()
            ),
        });
    }
    let vectors: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite {
            row: pos / d,
            col: pos % d,
        });
    }
    let meta =
        read_sidecar(path)?.ok_or_else(|| EmbeddingError::MissingSidecar(sidecar_path(path)))?;
    if meta.timestamps_s.len() != n {
        return Err(EmbeddingError::DimensionMismatch {
            row: meta.timestamps_s.len().min(n),
            detail: format!(
                "sidecar lists {} timestamps for {n} rows",
                meta.timestamps_s.len()
            ),
        });
    }
    EmbeddingSequence::new(
        meta.video_id,
        d,
        vectors,
        meta.timestamps_s,
        meta.duration_s,
        meta.source_fps,
    )
}

fn load_csv(path: &Path) -> Result<EmbeddingSequence> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| EmbeddingError::MalformedHeader("empty file".into()))?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(EmbeddingError::MalformedHeader(format!(
            "expected `t,e0,...`, got `{header}`"
        )));
    }
    for (c, name) in cols[1..].iter().enumerate() {
        if *name != format!("e{c}") {
            return Err(EmbeddingError::MalformedHeader(format!(
                "column {} should be `e{c}`, got `{name}`",
                c + 1
            )));
        }
    }
    let d = cols.len() - 1;
    let mut timestamps = Vec::new();
    let mut vectors = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = timestamps.len();
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(EmbeddingError::DimensionMismatch {
                row,
                detail: format!("expected {} fields, got {}", d + 1, fields.len()),
            });
        }
        let parse = |s: &str, col: Option<usize>| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| EmbeddingError::DimensionMismatch {
                row,
                detail: format!("unparsable number `{s}`"),
            })?;
            match col {
                Some(col) if !v.is_finite() => Err(EmbeddingError::NonFinite { row, col }),
                _ => Ok(v),
            }
        };
        timestamps.push(parse(fields[0], None)?);
        for (col, f) in fields[1..].iter().enumerate() {
            vectors.push(parse(f, Some(col))?);
        }
    }
    if timestamps.is_empty() {
        return Err(EmbeddingError::Empty("csv has no data rows".into()));
    }
    let n = timestamps.len();
    let (video_id, duration_s, source_fps) = match read_sidecar(path)? {
        Some(meta) => {
            if !meta.timestamps_s.is_empty() && meta.timestamps_s.len() != n {
                return Err(EmbeddingError::DimensionMismatch {
                    row: meta.timestamps_s.len().min(n),
                    detail: format!(
                        "sidecar lists {} timestamps for {n} rows",
                        meta.timestamps_s.len()
                    ),
                });
            }
            (meta.video_id, meta.duration_s, meta.source_fps)
        }
        None => {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("video")
                .to_string();
            let last = timestamps[n - 1];
            let fps = if n > 1 && last > timestamps[0] {
                (n - 1) as f64 / (last - timestamps[0])
            } else {
                0.0
            };
            (stem, last.max(f64::MIN_POSITIVE), fps)
        }
    };
    EmbeddingSequence::new(video_id, d, vectors, timestamps, duration_s, source_fps)
}

/// Center-of-cell uniform grid: `floor(duration * rate)` samples at
/// `(m + 0.5) / rate`, rate in frames per second.
pub fn uniform_timestamps(duration_s: f64, rate_fps: f64) -> Result<Vec<f64>> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(EmbeddingError::InvalidRate(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if !(rate_fps.is_finite() && rate_fps > 0.0) {
        return Err(EmbeddingError::InvalidRate(format!(
            "rate must be positive, got {rate_fps}"
        )));
    }
    let count = cell_count(duration_s, rate_fps);
    let interval = 1.0 / rate_fps;
    Ok((0..count)
        .map(|m| (m as f64 + 0.5) * interval)
        .filter(|&t| t < duration_s)
        .collect())
}

/// Same grid with the rate given in frames per minute.
pub fn uniform_timestamps_fpm(duration_s: f64, rate_fpm: f64) -> Result<Vec<f64>> {
    uniform_timestamps(duration_s, rate_fpm / 60.0)
}

/// `floor(duration * rate)`, tolerant of representation error just below an
/// integer (60 s at 1/15 Hz must give 4, not 3).
pub(crate) fn cell_count(duration_s: f64, rate_fps: f64) -> usize {
    let x = duration_s * rate_fps;
    let rounded = x.round();
    if (x - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        x.floor() as usize
    }
}
