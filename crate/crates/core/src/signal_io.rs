//! Raw record ingestion, windowing, resegmentation, z-score normalization
//! and train/test splitting.
//!
//! Two text formats are supported, both UTF-8 with LF line endings:
//!
//! * records: header `subject_id,label,fs,samples...`, then one record per
//!   line (`id,label,fs,s0,s1,...`, row lengths may differ);
//! * segment datasets: header `label,s0,s1,...,s{L-1}`, one segment per line.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng;

/// Binary class label. Class 1 (CAD) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonCad = 0,
    Cad = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::NonCad => Label::Cad,
            Label::Cad => Label::NonCad,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::NonCad),
            1 => Ok(Label::Cad),
            other => Err(Error::Schema(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl TryFrom<usize> for Label {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        u8::try_from(v)
            .map_err(|_| Error::Schema(format!("label must be 0 or 1, got {v}")))
            .and_then(Label::try_from)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One subject's single-lead waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub subject_id: String,
    pub samples: Vec<f64>,
    pub fs: f64,
    pub label: Label,
}

impl SignalRecord {
    pub fn new(subject_id: impl Into<String>, samples: Vec<f64>, fs: f64, label: Label) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Schema("record has no samples".into()));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::Schema(format!("sampling frequency must be positive, got {fs}")));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            samples,
            fs,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub label: Label,
    pub source_id: String,
    pub normalized: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDataset {
    pub segments: Vec<Segment>,
    pub segment_length: usize,
    pub metadata: KeyValues,
}

impl SegmentDataset {
    pub fn new(segments: Vec<Segment>, segment_length: usize) -> Result<Self> {
        if segment_length == 0 {
            return Err(Error::Argument("segment length must be positive".into()));
        }
        if let Some(bad) = segments.iter().position(|s| s.len() != segment_length) {
            return Err(Error::Shape(format!(
                "segment {bad} has length {}, dataset declares {segment_length}",
                segments[bad].len()
            )));
        }
        Ok(Self {
            segments,
            segment_length,
            metadata: KeyValues::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.segments.iter().map(|s| s.label).collect()
    }

    /// Segment counts per class, indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for s in &self.segments {
            counts[s.label.index()] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    CsvRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Shuffle individual segments.
    #[default]
    PerSegment,
    /// Shuffle whole subjects so no subject appears on both sides.
    PerSubject,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" | "per_segment" => Ok(SplitMode::PerSegment),
            "subject" | "per_subject" => Ok(SplitMode::PerSubject),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from {field:?}"),
    })
}

fn parse_label(field: &str, line: usize) -> Result<Label> {
    let raw: u8 = parse_field(field, line, "label")?;
    Label::try_from(raw).map_err(|_| Error::Schema(format!("line {line}: label must be 0 or 1, got {raw}")))
}

pub fn load_records(path: &Path, format: RecordFormat) -> Result<Vec<SignalRecord>> {
    match format {
        RecordFormat::CsvRecords => load_csv_records(path),
    }
}

fn load_csv_records(path: &Path) -> Result<Vec<SignalRecord>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "subject_id" || cols[1] != "label" || cols[2] != "fs" {
        return Err(Error::Schema(format!(
            "record header must start with subject_id,label,fs; got {:?}",
            cols.iter().take(3).collect::<Vec<_>>()
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() < 4 {
            return Err(Error::Parse {
                line,
                message: "record needs subject_id, label, fs and at least one sample".into(),
            });
        }
        let label = parse_label(&row[1], line)?;
        let fs: f64 = parse_field(&row[2], line, "fs")?;
        let samples = row
            .iter()
            .skip(3)
            .map(|f| parse_field::<f64>(f, line, "sample"))
            .collect::<Result<Vec<_>>>()?;
        let record = SignalRecord::new(&row[0], samples, fs, label)
            .map_err(|e| Error::Schema(format!("line {line}: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[SignalRecord]) -> Result<()> {
    let mut out = String::from("subject_id,label,fs,samples...\n");
    for r in records {
        out.push_str(&r.subject_id);
        out.push(',');
        out.push_str(&r.label.to_string());
        out.push(',');
        out.push_str(&r.fs.to_string());
        for s in &r.samples {
            out.push(',');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads a segment dataset. Source ids are synthesised as `row<N>`.
pub fn load_segments(path: &Path) -> Result<SegmentDataset> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.len() < 2 || &headers[0] != "label" {
        return Err(Error::Schema("segment header must be label,s0,s1,...".into()));
    }
    let length = headers.len() - 1;
    let mut segments = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != length + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} sample columns, found {}", length, row.len().saturating_sub(1)),
            });
        }
        let label = parse_label(&row[0], line)?;
        let values = row
            .iter()
            .skip(1)
            .map(|f| parse_field::<f64>(f, line, "sample"))
            .collect::<Result<Vec<_>>>()?;
        segments.push(Segment {
            values,
            label,
            source_id: format!("row{i}"),
            normalized: false,
        });
    }
    let mut ds = SegmentDataset::new(segments, length)?;
    ds.metadata.set("source", path.display());
    Ok(ds)
}

pub fn write_segments(path: &Path, dataset: &SegmentDataset) -> Result<()> {
    let mut out = String::from("label");
    for i in 0..dataset.segment_length {
        out.push_str(&format!(",s{i}"));
    }
    out.push('\n');
    for seg in &dataset.segments {
        out.push_str(&seg.label.to_string());
        for v in &seg.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Copies `samples[start..end]` out of a record.
pub fn extract_window(record: &SignalRecord, start: usize, end: usize) -> Result<Segment> {
    if start >= end {
        return Err(Error::OutOfRange(format!("window start {start} must be below end {end}")));
    }
    if end > record.len() {
        return Err(Error::OutOfRange(format!(
            "window end {end} exceeds record {} of length {}",
            record.subject_id,
            record.len()
        )));
    }
    Ok(Segment {
        values: record.samples[start..end].to_vec(),
        label: record.label,
        source_id: record.subject_id.clone(),
        normalized: false,
    })
}

/// Cuts every input into `floor(len / length)` consecutive, non-overlapping
/// pieces. Remainders (and inputs shorter than `length`) are dropped.
pub fn resegment(windows: &[Segment], length: usize) -> Result<SegmentDataset> {
    if length == 0 {
        return Err(Error::Argument("segment length must be at least 1".into()));
    }
    let segments: Vec<Segment> = windows
        .iter()
        .flat_map(|w| {
            w.values.chunks_exact(length).map(move |piece| Segment {
                values: piece.to_vec(),
                label: w.label,
                source_id: w.source_id.clone(),
                normalized: false,
            })
        })
        .collect();
    if segments.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "segment length {length} exceeds every input window"
        )));
    }
    let mut ds = SegmentDataset::new(segments, length)?;
    ds.metadata.set("segment_length", length);
    ds.metadata.set("source_windows", windows.len());
    Ok(ds)
}

/// Mean and sample (N−1) standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn zscore(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::DegenerateSignal(format!(
            "{what} needs at least 2 samples, has {}",
            values.len()
        )));
    }
    let (mean, std) = mean_and_std(values);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateSignal(format!("{what} has zero variance")));
    }
    Ok(values.iter().map(|x| (x - mean) / std).collect())
}

/// `x' = (x − mean) / s`, with `s` the sample standard deviation.
pub fn normalize_segment(segment: &Segment) -> Result<Segment> {
    Ok(Segment {
        values: zscore(&segment.values, &format!("segment from {}", segment.source_id))?,
        label: segment.label,
        source_id: segment.source_id.clone(),
        normalized: true,
    })
}

/// Normalizes every segment; degenerate segments are rejected with an error.
pub fn normalize_dataset(dataset: &SegmentDataset) -> Result<SegmentDataset> {
    let segments = dataset
        .segments
        .iter()
        .map(normalize_segment)
        .collect::<Result<Vec<_>>>()?;
    let mut out = SegmentDataset::new(segments, dataset.segment_length)?;
    out.metadata = dataset.metadata.clone();
    out.metadata.set("normalization", "per_segment");
    Ok(out)
}

/// Whole-record z-score, for the per-record normalization mode. Windows cut
/// from the result keep `normalized = false` since they need not have unit
/// variance themselves.
pub fn normalize_record(record: &SignalRecord) -> Result<SignalRecord> {
    Ok(SignalRecord {
        samples: zscore(&record.samples, &format!("record {}", record.subject_id))?,
        ..record.clone()
    })
}

fn subset(dataset: &SegmentDataset, idx: &[usize], part: &str) -> SegmentDataset {
    let mut metadata = dataset.metadata.clone();
    metadata.set("partition", part);
    SegmentDataset {
        segments: idx.iter().map(|&i| dataset.segments[i].clone()).collect(),
        segment_length: dataset.segment_length,
        metadata,
    }
}

/// Seeded shuffle, then the first `round(fraction · n)` items go to train.
/// In [`SplitMode::PerSubject`] the items are subjects (by `source_id`).
pub fn split(
    dataset: &SegmentDataset,
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(SegmentDataset, SegmentDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let mut rng = rng::seeded(seed);
    let (train_idx, test_idx) = match mode {
        SplitMode::PerSegment => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            let n_train = (train_fraction * order.len() as f64).round() as usize;
            let test = order.split_off(n_train);
            (order, test)
        }
        SplitMode::PerSubject => {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut by_id: HashMap<&str, usize> = HashMap::new();
            for (i, s) in dataset.segments.iter().enumerate() {
                let g = *by_id.entry(s.source_id.as_str()).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            groups.shuffle(&mut rng);
            let n_train = (train_fraction * groups.len() as f64).round() as usize;
            let test: Vec<usize> = groups.split_off(n_train).into_iter().flatten().collect();
            (groups.into_iter().flatten().collect(), test)
        }
    };
    Ok((
        subset(dataset, &train_idx, "train"),
        subset(dataset, &test_idx, "test"),
    ))
}
