//! Sample-length sweep and dropout ablation.
//!
//! Seeds: the training pool is drawn from `derive(seed, DATA)` and the two
//! unseen sets (reported as surrogate-D2 and surrogate-D3) from
//! `derive(seed, HOLDOUT_A)` and `derive(seed, HOLDOUT_B)`. A row at sample
//! length `L` trains with `derive(derive(seed, ROW), L)` and splits with
//! `derive(row_seed, SPLIT)`, so a row depends only on its own length and
//! adding or removing other lengths leaves it unchanged. Every ablation row
//! uses the same row seed and therefore the same data, split, initial
//! weights and shuffling; only the dropout layers differ.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::ecg_synth::{synth_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::metrics::{fmt_metric, ConfusionMatrix, MetricsReport};
use crate::model::{build_model, CadModel, ModelConfig};
use crate::nn::Real;
use crate::rng::{self, stream};
use crate::signal_io::{
    extract_window, load_records, normalize_dataset, normalize_record, resegment, split, RecordFormat,
    SegmentDataset, SignalRecord, SplitMode,
};
use crate::training::{evaluate, train};

pub const DEFAULT_LENGTHS: [usize; 6] = [150, 200, 250, 300, 500, 1000];

const DEFAULT_RECORDS_PER_CLASS: usize = 20;
const DEFAULT_HOLDOUT_RECORDS_PER_CLASS: usize = 10;
const DEFAULT_FS: f64 = 250.0;
const DEFAULT_DURATION_S: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Records per class of the training pool and of each unseen set.
    Synthetic {
        records_per_class: usize,
        holdout_records_per_class: usize,
        fs: f64,
        duration_s: f64,
        synth: SynthConfig,
    },
    /// Record CSV files: the training pool and the two unseen sets.
    Files {
        pool: PathBuf,
        holdout_d2: PathBuf,
        holdout_d3: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            records_per_class: DEFAULT_RECORDS_PER_CLASS,
            holdout_records_per_class: DEFAULT_HOLDOUT_RECORDS_PER_CLASS,
            fs: DEFAULT_FS,
            duration_s: DEFAULT_DURATION_S,
            synth: SynthConfig::shipped(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    PerSegment,
    PerRecord,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" | "per_segment" => Ok(Normalization::PerSegment),
            "record" | "per_record" => Ok(Normalization::PerRecord),
            other => Err(Error::Argument(format!(
                "normalization must be 'segment' or 'record', got '{other}'"
            ))),
        }
    }
}

/// Windowing, resegmentation, normalization and split settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preparation {
    pub window_start: usize,
    pub window_end: usize,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    pub normalization: Normalization,
}

impl Default for Preparation {
    fn default() -> Self {
        Self {
            window_start: 0,
            window_end: 1000,
            train_fraction: 0.7,
            split_mode: SplitMode::PerSegment,
            normalization: Normalization::PerSegment,
        }
    }
}

impl Preparation {
    /// Window → resegment to `length` → normalize.
    pub fn segments(&self, records: &[SignalRecord], length: usize) -> Result<SegmentDataset> {
        let normalized;
        let records = match self.normalization {
            Normalization::PerRecord => {
                normalized = records.iter().map(normalize_record).collect::<Result<Vec<_>>>()?;
                &normalized[..]
            }
            Normalization::PerSegment => records,
        };
        let windows = records
            .iter()
            .map(|r| extract_window(r, self.window_start, self.window_end))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = resegment(&windows, length)?;
        if self.normalization == Normalization::PerSegment {
            ds = normalize_dataset(&ds)?;
        } else {
            ds.metadata.set("normalization", "per_record");
        }
        Ok(ds)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            window_start: kv.get_or("window_start", d.window_start)?,
            window_end: kv.get_or("window_end", d.window_end)?,
            train_fraction: kv.get_or("train_fraction", d.train_fraction)?,
            split_mode: kv.get_or("split_mode", d.split_mode)?,
            normalization: kv.get_or("normalization", d.normalization)?,
        })
    }
}

/// Training pool plus the two unseen record sets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub pool: Vec<SignalRecord>,
    pub holdout_d2: Vec<SignalRecord>,
    pub holdout_d3: Vec<SignalRecord>,
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Corpus> {
        match self {
            DataSource::Synthetic {
                records_per_class: n,
                holdout_records_per_class: h,
                fs,
                duration_s,
                synth,
            } => {
                let make = |count, stream| {
                    synth_dataset(count, count, *fs, *duration_s, rng::derive_seed(seed, stream), synth)
                };
                Ok(Corpus {
                    pool: make(*n, stream::DATA)?,
                    holdout_d2: make(*h, stream::HOLDOUT_A)?,
                    holdout_d3: make(*h, stream::HOLDOUT_B)?,
                })
            }
            DataSource::Files {
                pool,
                holdout_d2,
                holdout_d3,
            } => Ok(Corpus {
                pool: load_records(pool, RecordFormat::CsvRecords)?,
                holdout_d2: load_records(holdout_d2, RecordFormat::CsvRecords)?,
                holdout_d3: load_records(holdout_d3, RecordFormat::CsvRecords)?,
            }),
        }
    }

    /// Reads `pool`/`holdout_d2`/`holdout_d3` paths if `pool` is present,
    /// otherwise synthetic settings (and any synth morphology keys).
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        if let Some(pool) = kv.get_str("pool") {
            let path = |key: &str| {
                kv.get_str(key)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config(format!("'pool' is set but '{key}' is missing")))
            };
            return Ok(DataSource::Files {
                pool: PathBuf::from(pool),
                holdout_d2: path("holdout_d2")?,
                holdout_d3: path("holdout_d3")?,
            });
        }
        let mut synth_kv = SynthConfig::shipped().to_kv();
        synth_kv.extend(kv);
        Ok(DataSource::Synthetic {
            records_per_class: kv.get_or("records_per_class", DEFAULT_RECORDS_PER_CLASS)?,
            holdout_records_per_class: kv.get_or("holdout_records_per_class", DEFAULT_HOLDOUT_RECORDS_PER_CLASS)?,
            fs: kv.get_or("fs", DEFAULT_FS)?,
            duration_s: kv.get_or("duration", DEFAULT_DURATION_S)?,
            synth: SynthConfig::from_kv(&synth_kv)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub lengths: Vec<usize>,
    pub data: DataSource,
    pub preparation: Preparation,
    /// Everything but `input_length` and `seed`, which each row sets.
    pub base: ModelConfig,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            data: DataSource::default(),
            preparation: Preparation::default(),
            base: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::Config("sweep needs at least one sample length".into()));
        }
        if let Some(l) = self.lengths.iter().find(|&&l| l < 2) {
            return Err(Error::Config(format!("sample length {l} is below 2")));
        }
        Ok(())
    }

    /// Model, preparation and data keys from one key=value file; `lengths`
    /// is a comma-separated list.
    pub fn from_kv(kv: &KeyValues, seed: u64) -> Result<Self> {
        let spec = Self {
            lengths: kv.get_list("lengths")?.unwrap_or_else(|| DEFAULT_LENGTHS.to_vec()),
            data: DataSource::from_kv(kv)?,
            preparation: Preparation::from_kv(kv)?,
            base: ModelConfig::from_kv(kv)?,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn row_seed(seed: u64, length: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, stream::ROW), length as u64)
}

/// Outcome of one trained configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub epochs: usize,
    pub train: MetricsReport,
    pub test: Option<MetricsReport>,
    pub holdout_d2: MetricsReport,
    pub holdout_d3: MetricsReport,
    pub init_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub length: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RowResult, String>,
}

/// SHA-256 over every parameter, tensor by tensor, as little-endian values.
pub fn fingerprint<T: Real>(model: &CadModel<T>) -> String {
    let mut h = Sha256::new();
    for p in model.network().params() {
        for v in p {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn run_row(corpus: &Corpus, prep: &Preparation, config: &ModelConfig) -> Result<RowResult> {
    let length = config.input_length;
    let data = prep.segments(&corpus.pool, length)?;
    let (train_set, test_set) = split(
        &data,
        prep.train_fraction,
        rng::derive_seed(config.seed, stream::SPLIT),
        prep.split_mode,
    )?;
    let d2 = prep.segments(&corpus.holdout_d2, length)?;
    let d3 = prep.segments(&corpus.holdout_d3, length)?;
    let mut model = build_model::<f32>(config)?;
    let init_fingerprint = fingerprint(&model);
    let report = train(&mut model, &train_set, &test_set, config)?;
    Ok(RowResult {
        epochs: report.final_epoch,
        train: evaluate(&model, &train_set)?,
        test: if test_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, &test_set)?)
        },
        holdout_d2: evaluate(&model, &d2)?,
        holdout_d3: evaluate(&model, &d3)?,
        init_fingerprint,
    })
}

/// One row per length; a failing row records its error and the sweep
/// continues. `progress` is called after each row.
pub fn run_length_sweep(spec: &SweepSpec, mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let corpus = spec.data.load(spec.seed)?;
    let mut rows = Vec::with_capacity(spec.lengths.len());
    for &length in &spec.lengths {
        let seed = row_seed(spec.seed, length);
        let config = ModelConfig {
            input_length: length,
            seed,
            ..spec.base.clone()
        };
        let row = SweepRow {
            length,
            seed,
            outcome: run_row(&corpus, &spec.preparation, &config).map_err(|e| e.to_string()),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

const METRIC_SETS: [&str; 4] = ["train", "test", "d2", "d3"];

fn metric_header() -> Vec<String> {
    METRIC_SETS
        .iter()
        .flat_map(|set| ["acc", "tp", "tn", "fp", "fn"].map(|f| format!("{set}_{f}")))
        .collect()
}

fn metric_fields(result: Option<&RowResult>) -> Vec<String> {
    let sets = match result {
        Some(r) => [Some(&r.train), r.test.as_ref(), Some(&r.holdout_d2), Some(&r.holdout_d3)],
        None => [None; 4],
    };
    sets.iter()
        .flat_map(|m| match m {
            Some(m) => {
                let ConfusionMatrix { tp, tn, fp, fn_ } = m.confusion;
                vec![fmt_metric(m.accuracy), tp.to_string(), tn.to_string(), fp.to_string(), fn_.to_string()]
            }
            None => vec![String::new(); 5],
        })
        .collect()
}

fn write_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    // writing into memory cannot fail
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

fn status_fields<T>(outcome: &std::result::Result<T, String>) -> (String, String) {
    match outcome {
        Ok(_) => ("ok".into(), String::new()),
        Err(e) => ("error".into(), e.clone()),
    }
}

/// `length,seed,status,epochs,{train,test,d2,d3}_{acc,tp,tn,fp,fn},error`,
/// where d2/d3 are the surrogate unseen sets. Accuracies are printed in
/// shortest round-trip form and equal `(tp + tn) / total` exactly.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut header: Vec<String> = ["length", "seed", "status", "epochs"].map(String::from).to_vec();
    header.extend(metric_header());
    header.push("error".into());
    let body = rows
        .iter()
        .map(|row| {
            let (status, error) = status_fields(&row.outcome);
            let ok = row.outcome.as_ref().ok();
            let mut f = vec![
                row.length.to_string(),
                row.seed.to_string(),
                status,
                ok.map(|r| r.epochs.to_string()).unwrap_or_default(),
            ];
            f.extend(metric_fields(ok));
            f.push(error);
            f
        })
        .collect();
    write_csv(header, body)
}

/// One ablation arm: dropout after each conv block plus the head dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutConfig {
    pub name: String,
    pub conv_dropout: Vec<f64>,
    pub head_dropout: f64,
}

impl DropoutConfig {
    fn new(name: &str, conv_dropout: [f64; 4], head_dropout: f64) -> Self {
        Self {
            name: name.into(),
            conv_dropout: conv_dropout.to_vec(),
            head_dropout,
        }
    }

    /// No dropout; one, two or three 0.2 layers after the first conv
    /// blocks; three 0.2 layers plus 0.5 before the output layer.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::new("none", [0.0; 4], 0.0),
            Self::new("one_0.2", [0.2, 0.0, 0.0, 0.0], 0.0),
            Self::new("two_0.2", [0.2, 0.2, 0.0, 0.0], 0.0),
            Self::new("three_0.2", [0.2, 0.2, 0.2, 0.0], 0.0),
            Self::new("three_0.2_plus_0.5", [0.2, 0.2, 0.2, 0.0], 0.5),
        ]
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            conv_dropout: self.conv_dropout.clone(),
            head_dropout: self.head_dropout,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub configurations: Vec<DropoutConfig>,
    pub length: usize,
    pub data: DataSource,
    pub preparation: Preparation,
    pub base: ModelConfig,
    pub seed: u64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            configurations: DropoutConfig::standard_set(),
            length: 250,
            data: DataSource::default(),
            preparation: Preparation::default(),
            base: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.configurations.is_empty() {
            return Err(Error::Config("ablation needs at least one configuration".into()));
        }
        if self.length < 2 {
            return Err(Error::Config(format!("sample length {} is below 2", self.length)));
        }
        for c in &self.configurations {
            c.apply(&self.base)
                .validate()
                .map_err(|e| Error::Config(format!("configuration {}: {e}", c.name)))?;
        }
        Ok(())
    }

    /// Like [`SweepSpec::from_kv`]; `length` sets the sample length.
    pub fn from_kv(kv: &KeyValues, seed: u64) -> Result<Self> {
        let spec = Self {
            configurations: DropoutConfig::standard_set(),
            length: kv.get_or("length", 250)?,
            data: DataSource::from_kv(kv)?,
            preparation: Preparation::from_kv(kv)?,
            base: ModelConfig::from_kv(kv)?,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub configuration: DropoutConfig,
    pub seed: u64,
    pub outcome: std::result::Result<RowResult, String>,
}

pub fn run_dropout_ablation(spec: &AblationSpec, mut progress: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    let corpus = spec.data.load(spec.seed)?;
    let seed = row_seed(spec.seed, spec.length);
    let mut rows = Vec::with_capacity(spec.configurations.len());
    for c in &spec.configurations {
        let config = ModelConfig {
            input_length: spec.length,
            seed,
            ..c.apply(&spec.base)
        };
        let row = AblationRow {
            configuration: c.clone(),
            seed,
            outcome: run_row(&corpus, &spec.preparation, &config).map_err(|e| e.to_string()),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// `configuration,conv_dropout,head_dropout,seed,status,epochs,<metrics>,
/// init_sha256,error` with the same metric columns as [`sweep_csv`];
/// `conv_dropout` is `;`-separated.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut header: Vec<String> = ["configuration", "conv_dropout", "head_dropout", "seed", "status", "epochs"]
        .map(String::from)
        .to_vec();
    header.extend(metric_header());
    header.extend(["init_sha256", "error"].map(String::from));
    let body = rows
        .iter()
        .map(|row| {
            let (status, error) = status_fields(&row.outcome);
            let ok = row.outcome.as_ref().ok();
            let c = &row.configuration;
            let rates: Vec<String> = c.conv_dropout.iter().map(|r| r.to_string()).collect();
            let mut f = vec![
                c.name.clone(),
                rates.join(";"),
                c.head_dropout.to_string(),
                row.seed.to_string(),
                status,
                ok.map(|r| r.epochs.to_string()).unwrap_or_default(),
            ];
            f.extend(metric_fields(ok));
            f.push(ok.map(|r| r.init_fingerprint.clone()).unwrap_or_default());
            f.push(error);
            f
        })
        .collect();
    write_csv(header, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> ModelConfig {
        ModelConfig {
            conv_filters: vec![4, 4, 4, 4],
            kernel: 5,
            dense_units: 8,
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            ..ModelConfig::default()
        }
    }

    fn small_data() -> DataSource {
        DataSource::Synthetic {
            records_per_class: 2,
            holdout_records_per_class: 1,
            fs: 250.0,
            duration_s: 4.5,
            synth: SynthConfig::shipped(),
        }
    }

    fn sweep(lengths: &[usize]) -> Vec<SweepRow> {
        let spec = SweepSpec {
            lengths: lengths.to_vec(),
            data: small_data(),
            base: small_base(),
            seed: 9,
            ..SweepSpec::default()
        };
        run_length_sweep(&spec, |_| {}).unwrap()
    }

    #[test]
    fn rows_are_independent_of_other_lengths() {
        let all = sweep(&[150, 250, 500]);
        let some = sweep(&[500, 150]);
        assert_eq!(all[0], some[1]);
        assert_eq!(all[2], some[0]);
        for row in &all {
            let r = row.outcome.as_ref().unwrap();
            for m in [&r.train, r.test.as_ref().unwrap(), &r.holdout_d2, &r.holdout_d3] {
                assert!((0.0..=1.0).contains(&m.accuracy.unwrap()));
            }
        }
    }

    #[test]
    fn failing_row_does_not_stop_the_sweep() {
        let rows = sweep(&[1500, 3]);
        assert!(rows[0].outcome.as_ref().unwrap_err().contains("exceeds every input window"));
        // length 3 runs with the pool spanning the whole input
        assert!(rows[1].outcome.is_ok());
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1500,") && lines[1].contains(",error,"));
        assert!(lines[2].starts_with("3,") && lines[2].contains(",ok,"));
    }

    #[test]
    fn csv_accuracies_recompute_from_counts() {
        let csv = sweep_csv(&sweep(&[200]));
        let mut r = csv::Reader::from_reader(csv.as_bytes());
        let header = r.headers().unwrap().clone();
        let rec = r.records().next().unwrap().unwrap();
        let get = |name: &str| &rec[header.iter().position(|h| h == name).unwrap()];
        for set in METRIC_SETS {
            let n = |f: &str| get(&format!("{set}_{f}")).parse::<u64>().unwrap();
            let acc: f64 = get(&format!("{set}_acc")).parse().unwrap();
            let total = n("tp") + n("tn") + n("fp") + n("fn");
            assert_eq!(acc, (n("tp") + n("tn")) as f64 / total as f64);
        }
    }

    #[test]
    fn ablation_shares_initial_weights() {
        let spec = AblationSpec {
            data: small_data(),
            base: ModelConfig { epochs: 1, ..small_base() },
            seed: 4,
            ..AblationSpec::default()
        };
        let rows = run_dropout_ablation(&spec, |_| {}).unwrap();
        assert_eq!(rows.len(), 5);
        let prints: Vec<&str> = rows
            .iter()
            .map(|r| r.outcome.as_ref().unwrap().init_fingerprint.as_str())
            .collect();
        assert!(prints.iter().all(|p| *p == prints[0]));
        assert_eq!(ablation_csv(&rows).lines().count(), 6);
    }

    #[test]
    fn no_dropout_arm_has_no_dropout_layers() {
        let set = DropoutConfig::standard_set();
        let none = build_model::<f32>(&set[0].apply(&small_base())).unwrap();
        let full = build_model::<f32>(&set[4].apply(&small_base())).unwrap();
        let count = |m: &CadModel<f32>| m.network().layers().iter().filter(|l| l.kind() == "dropout").count();
        assert_eq!(count(&none), 0);
        assert_eq!(count(&full), 4);
        assert_eq!(none.num_params(), full.num_params());
    }

    #[test]
    fn spec_validation() {
        let bad = SweepSpec { lengths: vec![], ..SweepSpec::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SweepSpec { lengths: vec![250, 1], ..SweepSpec::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let kv = KeyValues::parse("lengths=150,300\nepochs=3\nrecords_per_class=5\ncad.st_offset=-0.4\n").unwrap();
        let spec = SweepSpec::from_kv(&kv, 2).unwrap();
        assert_eq!(spec.lengths, vec![150, 300]);
        assert_eq!(spec.base.epochs, 3);
        match spec.data {
            DataSource::Synthetic { records_per_class, synth, .. } => {
                assert_eq!(records_per_class, 5);
                assert_eq!(synth.cad.st_offset, -0.4);
            }
            _ => panic!("expected synthetic data"),
        }
    }
}
