use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cadcnn::checkpoint::{load_checkpoint, save_checkpoint};
use cadcnn::complexity::audit;
use cadcnn::ecg_synth::{synth_dataset, SynthConfig};
use cadcnn::experiments::{
    ablation_csv, run_dropout_ablation, run_length_sweep, sweep_csv, AblationSpec, Preparation, SweepSpec,
};
use cadcnn::kv::KeyValues;
use cadcnn::model::{build_model, ModelConfig};
use cadcnn::nn::{GradCheck, Tensor3};
use cadcnn::rng::{self, stream};
use cadcnn::signal_io::{load_records, load_segments, split, write_records, write_segments, RecordFormat, SplitMode};
use cadcnn::training::{evaluate, train};
use cadcnn::{Error, Result};

use rand_distr::{Distribution, StandardNormal};

/// CAD vs non-CAD ECG classifier: data, training, evaluation and audits.
#[derive(Parser)]
#[command(name = "cadcnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Top-level seed; overrides any `seed` key in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labelled ECG records as a record CSV.
    Synth {
        #[arg(long)]
        cad: usize,
        #[arg(long)]
        noncad: usize,
        #[arg(long, default_value_t = 250.0)]
        fs: f64,
        /// Record duration in seconds.
        #[arg(long, default_value_t = 8.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synth morphology overrides (key=value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output record CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Window, resegment, normalize and split records into train.csv/test.csv.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 250)]
        length: usize,
        #[arg(long)]
        split_mode: Option<SplitMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Train from segment CSVs; writes model.ckpt, history.csv, summary.txt.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a segment CSV; writes metrics.txt.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample-length sweep; writes sweep.csv.
    Sweep {
        /// Comma-separated; overrides `lengths` in the config.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Dropout ablation; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Parameter and FLOPs audit; writes complexity.csv.
    Audit {
        #[arg(long, default_value_t = 250)]
        length: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient check of the full model in f64.
    Gradcheck {
        #[arg(long, default_value_t = 150)]
        length: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn kv(&self) -> Result<KeyValues> {
        match &self.config {
            Some(p) => KeyValues::read(p),
            None => Ok(KeyValues::new()),
        }
    }

    fn seed(&self, kv: &KeyValues) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => kv.get_or("seed", 0),
        }
    }

    fn model_config(&self, kv: &KeyValues) -> Result<ModelConfig> {
        Ok(ModelConfig {
            seed: self.seed(kv)?,
            ..ModelConfig::from_kv(kv)?
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            cad,
            noncad,
            fs,
            duration,
            seed,
            config,
            out,
        } => {
            let synth = match config {
                Some(p) => SynthConfig::load(&p)?,
                None => SynthConfig::shipped(),
            };
            let records = synth_dataset(cad, noncad, fs, duration, seed, &synth)?;
            write_records(&out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Prepare {
            input,
            length,
            split_mode,
            common,
        } => {
            let kv = common.kv()?;
            let mut prep = Preparation::from_kv(&kv)?;
            if let Some(m) = split_mode {
                prep.split_mode = m;
            }
            let records = load_records(&input, RecordFormat::CsvRecords)?;
            let data = prep.segments(&records, length)?;
            let seed = rng::derive_seed(common.seed(&kv)?, stream::SPLIT);
            let (train_set, test_set) = split(&data, prep.train_fraction, seed, prep.split_mode)?;
            let dir = common.out_dir()?;
            write_segments(&dir.join("train.csv"), &train_set)?;
            write_segments(&dir.join("test.csv"), &test_set)?;
            println!("{} train / {} test segments of length {length}", train_set.len(), test_set.len());
        }
        Command::Train {
            train: train_path,
            test,
            epochs,
            common,
        } => {
            let kv = common.kv()?;
            let train_set = load_segments(&train_path)?;
            let test_set = match test {
                Some(p) => load_segments(&p)?,
                None => cadcnn::signal_io::SegmentDataset::new(Vec::new(), train_set.segment_length)?,
            };
            let base = common.model_config(&kv)?;
            let config = ModelConfig {
                input_length: train_set.segment_length,
                epochs: epochs.unwrap_or(base.epochs),
                ..base
            };
            let mut model = build_model::<f32>(&config)?;
            let report = train(&mut model, &train_set, &test_set, &config)?;
            let dir = common.out_dir()?;
            save_checkpoint(&model, &dir.join("model.ckpt"))?;
            report.write(&dir.join("history.csv"), &dir.join("summary.txt"))?;
            print!("{}", report.summary(true).render());
        }
        Command::Evaluate { model, data, common } => {
            let model = load_checkpoint(&model)?;
            let metrics = evaluate(&model, &load_segments(&data)?)?;
            write(&common.out_dir()?.join("metrics.txt"), &metrics.to_kv().render())?;
            print!("{}{}", metrics.confusion.render_table(), metrics);
        }
        Command::Sweep { lengths, common } => {
            let kv = common.kv()?;
            let mut spec = SweepSpec::from_kv(&kv, common.seed(&kv)?)?;
            if let Some(l) = lengths {
                spec.lengths = l;
            }
            let rows = run_length_sweep(&spec, |row| match &row.outcome {
                Ok(r) => eprintln!("length {}: {} epochs", row.length, r.epochs),
                Err(e) => eprintln!("length {}: failed: {e}", row.length),
            })?;
            let path = common.out_dir()?.join("sweep.csv");
            write(&path, &sweep_csv(&rows))?;
            println!("wrote {}", path.display());
        }
        Command::Ablate { common } => {
            let kv = common.kv()?;
            let spec = AblationSpec::from_kv(&kv, common.seed(&kv)?)?;
            let rows = run_dropout_ablation(&spec, |row| match &row.outcome {
                Ok(r) => eprintln!("{}: {} epochs", row.configuration.name, r.epochs),
                Err(e) => eprintln!("{}: failed: {e}", row.configuration.name),
            })?;
            let path = common.out_dir()?.join("ablation.csv");
            write(&path, &ablation_csv(&rows))?;
            println!("wrote {}", path.display());
        }
        Command::Audit { length, common } => {
            let kv = common.kv()?;
            let config = ModelConfig {
                input_length: length,
                ..common.model_config(&kv)?
            };
            let model = build_model::<f32>(&config)?;
            let report = audit(model.network(), length)?;
            write(&common.out_dir()?.join("complexity.csv"), &report.to_csv())?;
            print!("{}", report.render_table());
        }
        Command::Gradcheck {
            length,
            batch,
            samples,
            h,
            common,
        } => {
            let kv = common.kv()?;
            let seed = common.seed(&kv)?;
            let config = ModelConfig {
                input_length: length,
                ..common.model_config(&kv)?
            };
            let mut model = build_model::<f64>(&config)?;
            let mut r = rng::seeded(rng::derive_seed(seed, stream::DATA));
            let x: Vec<f64> = (0..batch * length).map(|_| StandardNormal.sample(&mut r)).collect();
            let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
            let check = GradCheck {
                samples,
                h,
                seed,
                ..GradCheck::default()
            };
            let report = check.run(model.network_mut(), &Tensor3::from_vec(x, batch, 1, length)?, &labels)?;
            let mut kv = KeyValues::new();
            kv.set("max_rel_error", report.max_rel_error);
            kv.set("checked", report.checked);
            kv.set("kinks_skipped", report.kinks_skipped);
            kv.set("kinks_tolerated", report.kinks_tolerated);
            if let Some(w) = &report.worst {
                kv.set("worst_tensor", &w.tensor);
                kv.set("worst_index", w.index);
                kv.set("worst_analytic", w.analytic);
                kv.set("worst_numeric", w.numeric);
            }
            write(&common.out_dir()?.join("gradcheck.txt"), &kv.render())?;
            print!("{}", kv.render());
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: kind={kind} message={one_line}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.to_string()),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
