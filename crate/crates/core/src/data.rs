//! CSV ingestion driven by schema files, z-score standardization, sliding
//! windows with any-row label propagation, a binary window cache, and a
//! synthetic multichannel generator with planted anomalies.
//!
//! Schema files map every CSV field, in order, to a role:
//!
//! ```text
//! # comment
//! @name occupancy
//! @skip_header 1
//! @delimiter ,
//! @missing_tokens ?,NA
//! @missing_policy drop      # or forward_fill
//! id: drop
//! Temperature: feature
//! Occupancy: label
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, DType, TensorEntry};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("input has no data rows")]
    Empty,
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: label `{value}` is not 0 or 1")]
    UnknownLabel { row: usize, value: String },
    #[error("every feature has zero variance")]
    AllZeroVariance,
    #[error("series has {rows} rows, fewer than the time window {time_window}")]
    TooShort { rows: usize, time_window: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("window cache metadata is invalid: {0}")]
    CacheMeta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Rows with any missing feature or label are removed.
    Drop,
    /// Missing feature cells repeat the previous row's value; rows before the
    /// first observation of a column, and rows with a missing label, are removed.
    ForwardFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub skip_header: usize,
    pub delimiter: u8,
    pub missing_tokens: Vec<String>,
    pub missing_policy: MissingPolicy,
    pub columns: Vec<(String, ColumnRole)>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut schema = Schema {
            name: String::new(),
            skip_header: 0,
            delimiter: b',',
            missing_tokens: Vec::new(),
            missing_policy: MissingPolicy::Drop,
            columns: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| DataError::Schema { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(directive) = content.strip_prefix('@') {
                let (key, value) = directive
                    .split_once(char::is_whitespace)
                    .unwrap_or((directive, ""));
                let value = value.trim();
                match key {
                    "name" => schema.name = value.to_string(),
                    "skip_header" => {
                        schema.skip_header = value
                            .parse()
                            .map_err(|_| err(format!("bad skip_header `{value}`")))?
                    }
                    "delimiter" => {
                        schema.delimiter = match value {
                            "tab" | "\\t" => b'\t',
                            v if v.len() == 1 => v.as_bytes()[0],
                            v => return Err(err(format!("delimiter must be one byte, got `{v}`"))),
                        }
                    }
                    "missing_tokens" => {
                        schema.missing_tokens =
                            value.split(',').map(|s| s.trim().to_string()).collect()
                    }
                    "missing_policy" => {
                        schema.missing_policy = match value {
                            "drop" => MissingPolicy::Drop,
                            "forward_fill" => MissingPolicy::ForwardFill,
                            v => return Err(err(format!("unknown missing_policy `{v}`"))),
                        }
                    }
                    other => return Err(err(format!("unknown directive `@{other}`"))),
                }
                continue;
            }
            let (name, role) = content
                .rsplit_once(':')
                .ok_or_else(|| err(format!("expected `column: role`, got `{content}`")))?;
            let role = match role.trim() {
                "feature" => ColumnRole::Feature,
                "label" => ColumnRole::Label,
                "drop" => ColumnRole::Drop,
                r => return Err(err(format!("unknown role `{r}` (feature, label or drop)"))),
            };
            schema.columns.push((name.trim().to_string(), role));
        }
        if schema.columns.is_empty() {
            return Err(DataError::Schema {
                line: 0,
                message: "no columns declared".into(),
            });
        }
        let labels = schema
            .columns
            .iter()
            .filter(|c| c.1 == ColumnRole::Label)
            .count();
        if labels > 1 {
            return Err(DataError::Schema {
                line: 0,
                message: format!("{labels} label columns declared, at most one allowed"),
            });
        }
        if !schema.columns.iter().any(|c| c.1 == ColumnRole::Feature) {
            return Err(DataError::Schema {
                line: 0,
                message: "no feature columns declared".into(),
            });
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Schema::parse(&read_text(path)?)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.1 == ColumnRole::Feature)
            .map(|c| c.0.clone())
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Row-major `rows × columns` feature matrix with optional row labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub columns: Vec<String>,
    pub values: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub dropped_rows: usize,
    pub filled_cells: usize,
}

impl RawSeries {
    pub fn new(
        columns: Vec<String>,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, DataError> {
        if columns.is_empty() || values.len() % columns.len() != 0 {
            return Err(DataError::Invalid(format!(
                "{} values do not fill {} columns",
                values.len(),
                columns.len()
            )));
        }
        let rows = values.len() / columns.len();
        if let Some(l) = &labels {
            if l.len() != rows || l.iter().any(|&v| v > 1) {
                return Err(DataError::Invalid("labels must be 0/1, one per row".into()));
            }
        }
        Ok(RawSeries {
            columns,
            values,
            labels,
            dropped_rows: 0,
            filled_cells: 0,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.values.len() / self.columns.len()
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.columns.len();
        &self.values[i * f..(i + 1) * f]
    }

    pub fn anomaly_ratio(&self) -> Option<f64> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&v| v as f64).sum::<f64>() / l.len() as f64)
    }
}

fn parse_label(row: usize, value: &str) -> Result<u8, DataError> {
    match value.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(DataError::UnknownLabel {
            row,
            value: value.to_string(),
        }),
    }
}

/// Reads `path` under `schema`. Row numbers in errors are 1-based file lines.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<RawSeries, DataError> {
    let text = read_text(path)?;
    ingest_str(&text, schema)
}

pub fn ingest_str(text: &str, schema: &Schema) -> Result<RawSeries, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let features: Vec<usize> = (0..schema.columns.len())
        .filter(|&i| schema.columns[i].1 == ColumnRole::Feature)
        .collect();
    let label = schema.columns.iter().position(|c| c.1 == ColumnRole::Label);
    let is_missing = |s: &str| s.is_empty() || schema.missing_tokens.iter().any(|t| t == s);

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut last: Vec<Option<f64>> = vec![None; features.len()];
    let (mut kept, mut dropped, mut filled) = (0usize, 0usize, 0usize);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if i < schema.skip_header || record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != schema.columns.len() {
            return Err(DataError::FieldCount {
                row,
                expected: schema.columns.len(),
                found: record.len(),
            });
        }
        let mut cells = Vec::with_capacity(features.len());
        let mut complete = true;
        let mut row_filled = 0;
        for (slot, &c) in features.iter().enumerate() {
            let cell = &record[c];
            if is_missing(cell) {
                match (schema.missing_policy, last[slot]) {
                    (MissingPolicy::ForwardFill, Some(prev)) => {
                        cells.push(prev);
                        row_filled += 1;
                    }
                    _ => {
                        complete = false;
                        cells.push(f64::NAN);
                    }
                }
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    row,
                    column: schema.columns[c].0.clone(),
                    value: cell.to_string(),
                })?;
            last[slot] = Some(v);
            cells.push(v);
        }
        let label_value = match label {
            Some(l) if is_missing(&record[l]) => {
                complete = false;
                None
            }
            Some(l) => Some(parse_label(row, &record[l])?),
            None => None,
        };
        if !complete {
            dropped += 1;
            continue;
        }
        filled += row_filled;
        values.extend(cells);
        labels.extend(label_value);
        kept += 1;
    }
    if kept == 0 {
        return Err(DataError::Empty);
    }
    if dropped > 0 || filled > 0 {
        log::warn!("ingest: dropped {dropped} incomplete rows, forward-filled {filled} cells");
    }
    Ok(RawSeries {
        columns: schema.feature_names(),
        values,
        labels: label.map(|_| labels),
        dropped_rows: dropped,
        filled_cells: filled,
    })
}

/// Per-feature location and scale fitted on the full series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero-variance columns removed before scaling.
    pub dropped_columns: Vec<String>,
}

/// Global z-score with population (ddof 0) standard deviation. Constant
/// columns are removed and listed in the returned parameters.
pub fn standardize(series: &RawSeries) -> Result<(RawSeries, Standardization), DataError> {
    let (n, f) = (series.num_rows(), series.num_features());
    let mut mean = vec![0.0; f];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(series.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; f];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(series.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    let keep: Vec<usize> = (0..f)
        .filter(|&c| std[c] > 1e-12 * mean[c].abs().max(1.0))
        .collect();
    if keep.is_empty() {
        return Err(DataError::AllZeroVariance);
    }
    let dropped_columns: Vec<String> = (0..f)
        .filter(|c| !keep.contains(c))
        .map(|c| series.columns[c].clone())
        .collect();
    if !dropped_columns.is_empty() {
        log::warn!(
            "standardize: dropped {} zero-variance column(s): {:?}",
            dropped_columns.len(),
            dropped_columns
        );
    }
    let mut values = Vec::with_capacity(n * keep.len());
    for r in 0..n {
        let row = series.row(r);
        values.extend(keep.iter().map(|&c| (row[c] - mean[c]) / std[c]));
    }
    let params = Standardization {
        columns: keep.iter().map(|&c| series.columns[c].clone()).collect(),
        mean: keep.iter().map(|&c| mean[c]).collect(),
        std: keep.iter().map(|&c| std[c]).collect(),
        dropped_columns,
    };
    let out = RawSeries {
        columns: params.columns.clone(),
        values,
        labels: series.labels.clone(),
        dropped_rows: series.dropped_rows,
        filled_cells: series.filled_cells,
    };
    Ok((out, params))
}

/// Applies fitted parameters to a row-major matrix over `params.columns`.
pub fn apply_standardization(values: &[f64], params: &Standardization) -> Vec<f64> {
    let f = params.mean.len();
    values
        .chunks_exact(f)
        .flat_map(|row| {
            row.iter()
                .zip(&params.mean)
                .zip(&params.std)
                .map(|((v, m), s)| (v - m) / s)
        })
        .collect()
}

pub fn destandardize(values: &[f64], params: &Standardization) -> Vec<f64> {
    let f = params.mean.len();
    values
        .chunks_exact(f)
        .flat_map(|row| {
            row.iter()
                .zip(&params.mean)
                .zip(&params.std)
                .map(|((v, m), s)| v * s + m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub time_window: usize,
    pub stride: usize,
    pub columns: Vec<String>,
    /// `[count, time_window, features]`.
    pub windows: Tensor<f64>,
    pub labels: Option<Vec<u8>>,
    pub standardization: Option<Standardization>,
    pub provenance: String,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let d = self.time_window * self.num_features();
        &self.windows.data()[i * d..(i + 1) * d]
    }

    /// `N × (tw·#f)` rows, each window flattened row-major.
    pub fn flattened(&self) -> (usize, usize, &[f64]) {
        (
            self.len(),
            self.time_window * self.num_features(),
            self.windows.data(),
        )
    }
}

/// Overlapping windows; a window is anomalous iff any row it covers is.
pub fn make_windows(
    series: &RawSeries,
    time_window: usize,
    stride: usize,
) -> Result<WindowedDataset, DataError> {
    if time_window == 0 || stride == 0 {
        return Err(DataError::Invalid(
            "time window and stride must be positive".into(),
        ));
    }
    let (n, f) = (series.num_rows(), series.num_features());
    if n < time_window {
        return Err(DataError::TooShort {
            rows: n,
            time_window,
        });
    }
    let starts: Vec<usize> = (0..=n - time_window).step_by(stride).collect();
    let mut data = Vec::with_capacity(starts.len() * time_window * f);
    for &s in &starts {
        data.extend_from_slice(&series.values[s * f..(s + time_window) * f]);
    }
    let labels = series.labels.as_ref().map(|l| {
        starts
            .iter()
            .map(|&s| l[s..s + time_window].iter().copied().max().unwrap_or(0))
            .collect()
    });
    Ok(WindowedDataset {
        time_window,
        stride,
        columns: series.columns.clone(),
        windows: Tensor::new([starts.len(), time_window, f], data)
            .expect("window data fills its shape"),
        labels,
        standardization: None,
        provenance: String::new(),
    })
}

pub const WINDOW_CACHE_MAGIC: &[u8; 4] = b"SCVW";

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    time_window: usize,
    stride: usize,
    columns: Vec<String>,
    standardization: Option<Standardization>,
    provenance: String,
}

pub fn windows_to_bytes(ds: &WindowedDataset) -> Vec<u8> {
    let meta = CacheMeta {
        time_window: ds.time_window,
        stride: ds.stride,
        columns: ds.columns.clone(),
        standardization: ds.standardization.clone(),
        provenance: ds.provenance.clone(),
    };
    let header = serde_json::to_string(&meta).expect("metadata serializes");
    let mut tensors = vec![TensorEntry {
        name: "windows".into(),
        dtype: DType::F64,
        shape: ds.windows.shape().to_vec(),
        data: ds.windows.data().to_vec(),
    }];
    if let Some(l) = &ds.labels {
        tensors.push(TensorEntry {
            name: "labels".into(),
            dtype: DType::F64,
            shape: vec![l.len()],
            data: l.iter().map(|&v| v as f64).collect(),
        });
    }
    container::encode(WINDOW_CACHE_MAGIC, &header, &tensors)
        .expect("window tensors are well-formed")
}

pub fn windows_from_bytes(bytes: &[u8]) -> Result<WindowedDataset, DataError> {
    let c = container::decode(WINDOW_CACHE_MAGIC, bytes)?;
    let meta: CacheMeta =
        serde_json::from_str(&c.header).map_err(|e| DataError::CacheMeta(e.to_string()))?;
    let mut tensors: BTreeMap<String, TensorEntry> =
        c.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let w = tensors
        .remove("windows")
        .ok_or_else(|| DataError::CacheMeta("missing `windows` tensor".into()))?;
    if w.shape.len() != 3 || w.shape[1] != meta.time_window || w.shape[2] != meta.columns.len() {
        return Err(DataError::CacheMeta(format!(
            "windows shape {:?} disagrees with metadata",
            w.shape
        )));
    }
    let labels = match tensors.remove("labels") {
        Some(l) if l.data.len() == w.shape[0] && l.data.iter().all(|&v| v == 0.0 || v == 1.0) => {
            Some(l.data.iter().map(|&v| v as u8).collect())
        }
        Some(_) => return Err(DataError::CacheMeta("labels tensor is malformed".into())),
        None => None,
    };
    Ok(WindowedDataset {
        time_window: meta.time_window,
        stride: meta.stride,
        columns: meta.columns,
        windows: Tensor::new(w.shape, w.data).map_err(|e| DataError::CacheMeta(e.to_string()))?,
        labels,
        standardization: meta.standardization,
        provenance: meta.provenance,
    })
}

pub fn save_windows(ds: &WindowedDataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, windows_to_bytes(ds)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_windows(path: &Path) -> Result<WindowedDataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    windows_from_bytes(&bytes)
}

/// Kinds of planted anomaly, cycled through in event order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    LevelShift,
    VarianceBurst,
    CorrelationBreak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start: usize,
    pub len: usize,
}

/// Multichannel AR(1) signals driven by a shared factor plus idiosyncratic
/// noise, with exactly `round(ratio·n_rows)` rows covered by planted events.
pub fn synth_cnc(
    n_rows: usize,
    n_features: usize,
    anomaly_ratio: f64,
    seed: u64,
) -> Result<(RawSeries, Vec<AnomalyEvent>), DataError> {
    if !(anomaly_ratio > 0.0 && anomaly_ratio < 0.5) {
        return Err(DataError::Invalid(format!(
            "anomaly ratio {anomaly_ratio} must lie in (0, 0.5)"
        )));
    }
    if n_features == 0 {
        return Err(DataError::Invalid(
            "at least one feature is required".into(),
        ));
    }
    let target = (anomaly_ratio * n_rows as f64).round() as usize;
    if target == 0 {
        return Err(DataError::Invalid(format!(
            "ratio {anomaly_ratio} over {n_rows} rows plants no anomalous row; at least one event is required"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Event lengths summing to `target`, then gaps of at least one normal row between events.
    let mut lengths = Vec::new();
    let mut left = target;
    while left > 0 {
        let l = rng.random_range(6..=24).min(left);
        lengths.push(l);
        left -= l;
    }
    let m = lengths.len();
    let free = n_rows - target;
    if free < m.saturating_sub(1) {
        return Err(DataError::Invalid(
            "series too short to separate planted events".into(),
        ));
    }
    let spare = free - (m - 1);
    let mut cuts: Vec<usize> = (0..m).map(|_| rng.random_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(m);
    let mut pos = 0;
    let mut prev_cut = 0;
    for (e, (&len, &cut)) in lengths.iter().zip(&cuts).enumerate() {
        pos += cut - prev_cut + usize::from(e > 0);
        prev_cut = cut;
        let kind = [
            AnomalyKind::LevelShift,
            AnomalyKind::VarianceBurst,
            AnomalyKind::CorrelationBreak,
        ][e % 3];
        events.push(AnomalyEvent {
            kind,
            start: pos,
            len,
        });
        pos += len;
    }

    let phi: Vec<f64> = (0..n_features)
        .map(|_| rng.random_range(0.6..0.95))
        .collect();
    let loading: Vec<f64> = (0..n_features)
        .map(|_| rng.random_range(0.5..0.9))
        .collect();
    let offset: Vec<f64> = (0..n_features)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let scale: Vec<f64> = (0..n_features)
        .map(|_| rng.random_range(0.5..3.0))
        .collect();

    let mut labels = vec![0u8; n_rows];
    let mut kind_at: Vec<Option<(usize, AnomalyKind)>> = vec![None; n_rows];
    for (e, ev) in events.iter().enumerate() {
        for t in ev.start..ev.start + ev.len {
            labels[t] = 1;
            kind_at[t] = Some((e, ev.kind));
        }
    }
    // Per-event channel subsets and shift directions.
    let plans: Vec<(Vec<bool>, Vec<f64>)> = events
        .iter()
        .map(|_| {
            let mut affected: Vec<bool> = (0..n_features).map(|_| rng.random_bool(0.5)).collect();
            let pick = rng.random_range(0..n_features);
            affected[pick] = true;
            let shift = (0..n_features)
                .map(|_| rng.random_range(3.0..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            (affected, shift)
        })
        .collect();

    let mut state = vec![0.0; n_features];
    let mut values = Vec::with_capacity(n_rows * n_features);
    for t in 0..n_rows {
        let common: f64 = rng.sample(StandardNormal);
        let event = kind_at[t];
        for c in 0..n_features {
            let idio: f64 = rng.sample(StandardNormal);
            let lam = loading[c];
            let mut innovation = lam * common + (1.0 - lam * lam).sqrt() * idio;
            let mut level = 0.0;
            if let Some((e, kind)) = event {
                let (affected, shift) = &plans[e];
                if affected[c] {
                    match kind {
                        AnomalyKind::LevelShift => level = shift[c],
                        AnomalyKind::VarianceBurst => innovation *= 5.0,
                        AnomalyKind::CorrelationBreak => {
                            innovation = -2.5 * lam * common + (1.0 - lam * lam).sqrt() * idio
                        }
                    }
                }
            }
            // Unit stationary variance before the per-channel affine map.
            state[c] = phi[c] * state[c] + (1.0 - phi[c] * phi[c]).sqrt() * innovation;
            values.push(offset[c] + scale[c] * (state[c] + level));
        }
    }
    let columns = (0..n_features).map(|c| format!("ch{c}")).collect();
    let series = RawSeries::new(columns, values, Some(labels))?;
    Ok((series, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str =
        "@skip_header 1\n@missing_tokens ?\nid: drop\na: feature\nb: feature\ny: label\n";

    #[test]
    fn schema_and_ingest() {
        let schema = Schema::parse(SCHEMA).unwrap();
        let s = ingest_str("id,a,b,y\n1,0.5,2,0\n2,?,3,1\n3,1.5,4,1\n", &schema).unwrap();
        assert_eq!(s.columns, ["a", "b"]);
        assert_eq!(s.values, [0.5, 2.0, 1.5, 4.0]);
        assert_eq!(s.labels, Some(vec![0, 1]));
        assert_eq!(s.dropped_rows, 1);
    }

    #[test]
    fn forward_fill_keeps_rows() {
        let schema = Schema::parse(&format!("@missing_policy forward_fill\n{SCHEMA}")).unwrap();
        let s = ingest_str("id,a,b,y\n1,?,2,0\n2,0.5,2,0\n3,?,3,1\n", &schema).unwrap();
        assert_eq!(s.values, [0.5, 2.0, 0.5, 3.0]);
        assert_eq!((s.dropped_rows, s.filled_cells), (1, 1));
    }

    #[test]
    fn ingest_errors_are_distinct() {
        let schema = Schema::parse(SCHEMA).unwrap();
        assert!(matches!(ingest_str("", &schema), Err(DataError::Empty)));
        assert!(matches!(ingest_str("h\n", &schema), Err(DataError::Empty)));
        match ingest_str("h\n1,x,2,0\n", &schema) {
            Err(DataError::Parse { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "a"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ingest_str("h\n1,1,2,7\n", &schema),
            Err(DataError::UnknownLabel { row: 2, .. })
        ));
        assert!(matches!(
            ingest_str("h\n1,1,2\n", &schema),
            Err(DataError::FieldCount { .. })
        ));
        assert!(Schema::parse("a: weird\n").is_err());
    }

    #[test]
    fn constant_column_dropped() {
        let s = RawSeries::new(
            vec!["a".into(), "k".into()],
            vec![1.0, 5.0, 2.0, 5.0, 4.0, 5.0],
            None,
        )
        .unwrap();
        let (z, p) = standardize(&s).unwrap();
        assert_eq!(p.dropped_columns, ["k"]);
        assert_eq!(z.columns, ["a"]);
        let k = RawSeries::new(vec!["k".into()], vec![3.0; 4], None).unwrap();
        assert!(matches!(standardize(&k), Err(DataError::AllZeroVariance)));
    }

    #[test]
    fn window_labels_follow_any_row_rule() {
        let s = RawSeries::new(vec!["a".into()], vec![0.0; 5], Some(vec![0, 0, 1, 0, 0])).unwrap();
        assert_eq!(make_windows(&s, 4, 1).unwrap().labels, Some(vec![1, 1]));
        let s = RawSeries::new(vec!["a".into()], vec![0.0; 100], Some(vec![0; 100])).unwrap();
        let w = make_windows(&s, 16, 1).unwrap();
        assert_eq!(w.len(), 85);
        assert!(w.labels.unwrap().iter().all(|&l| l == 0));
        assert!(matches!(
            make_windows(&s, 101, 1),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn window_contents_are_consecutive_rows() {
        let s = RawSeries::new(
            vec!["a".into(), "b".into()],
            (0..12).map(f64::from).collect(),
            None,
        )
        .unwrap();
        let w = make_windows(&s, 3, 1).unwrap();
        assert_eq!(w.window(1), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn synth_ratio_and_determinism() {
        let (a, events) = synth_cnc(2000, 8, 0.05, 3).unwrap();
        assert!((a.anomaly_ratio().unwrap() - 0.05).abs() <= 0.005);
        assert_eq!(events.iter().map(|e| e.len).sum::<usize>(), 100);
        let (b, _) = synth_cnc(2000, 8, 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert!(synth_cnc(10, 2, 0.01, 0).is_err());
        assert!(synth_cnc(100, 2, 0.5, 0).is_err());
        assert!(synth_cnc(100, 2, 0.0, 0).is_err());
    }

    #[test]
    fn synth_events_do_not_touch() {
        let (_, events) = synth_cnc(500, 3, 0.3, 9).unwrap();
        for pair in events.windows(2) {
            assert!(pair[0].start + pair[0].len < pair[1].start);
        }
        let last = events.last().unwrap();
        assert!(last.start + last.len <= 500);
    }
}
