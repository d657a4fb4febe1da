//! Synthetic single-lead ECG.
//!
//! Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed at
//! fractions of the beat period. The CAD class adds a constant ST-segment
//! offset between the end of the S wave (`center + width`) and the start of
//! the T wave (`center − width`).

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng::{self, Rng};
use crate::signal_io::{Label, SignalRecord};

const DEFAULT_CONFIG: &str = include_str!("../config/synth_default.conf");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Wave {
    fn at(&self, t: f64) -> f64 {
        let z = (t - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatParams {
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    pub st_offset: f64,
    pub noise_std: f64,
}

impl BeatParams {
    pub fn waves(&self) -> [&Wave; 5] {
        [&self.p, &self.q, &self.r, &self.s, &self.t]
    }

    pub fn validate(&self) -> Result<()> {
        let waves = self.waves();
        if waves.iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::Argument("wave widths must be positive".into()));
        }
        if waves.iter().any(|w| !(w.center > 0.0 && w.center < 1.0)) {
            return Err(Error::Argument("wave centers must lie in (0, 1)".into()));
        }
        if waves.windows(2).any(|pair| pair[0].center >= pair[1].center) {
            return Err(Error::Argument("wave centers must be ordered P < Q < R < S < T".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Argument("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    /// ST window as a half-open fraction-of-period interval.
    pub fn st_window(&self) -> (f64, f64) {
        (self.s.center + self.s.width, self.t.center - self.t.width)
    }

    fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let num = |key: String| -> Result<f64> {
            kv.get::<f64>(&key)?
                .ok_or_else(|| Error::Config(format!("missing synth key {key}")))
        };
        let wave = |name: &str| -> Result<Wave> {
            Ok(Wave {
                amplitude: num(format!("{prefix}.{name}.amplitude"))?,
                center: num(format!("{prefix}.{name}.center"))?,
                width: num(format!("{prefix}.{name}.width"))?,
            })
        };
        let params = BeatParams {
            p: wave("p")?,
            q: wave("q")?,
            r: wave("r")?,
            s: wave("s")?,
            t: wave("t")?,
            st_offset: num(format!("{prefix}.st_offset"))?,
            noise_std: num(format!("{prefix}.noise_std"))?,
        };
        params.validate()?;
        Ok(params)
    }

    fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        for (name, w) in ["p", "q", "r", "s", "t"].iter().zip(self.waves()) {
            kv.set(&format!("{prefix}.{name}.amplitude"), w.amplitude);
            kv.set(&format!("{prefix}.{name}.center"), w.center);
            kv.set(&format!("{prefix}.{name}.width"), w.width);
        }
        kv.set(&format!("{prefix}.st_offset"), self.st_offset);
        kv.set(&format!("{prefix}.noise_std"), self.noise_std);
    }
}

/// Morphology for both classes plus the rhythm model: each record draws a
/// base rate uniformly from `heart_rate_bpm ± heart_rate_spread_bpm`, and
/// each beat perturbs it uniformly by `± beat_jitter_bpm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub normal: BeatParams,
    pub cad: BeatParams,
    pub heart_rate_bpm: f64,
    pub heart_rate_spread_bpm: f64,
    pub beat_jitter_bpm: f64,
}

impl SynthConfig {
    /// The parameter set shipped in `config/synth_default.conf`.
    pub fn shipped() -> Self {
        Self::from_kv(&KeyValues::parse(DEFAULT_CONFIG).expect("shipped synth config parses"))
            .expect("shipped synth config is valid")
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let cfg = SynthConfig {
            normal: BeatParams::from_kv(kv, "normal")?,
            cad: BeatParams::from_kv(kv, "cad")?,
            heart_rate_bpm: kv
                .get("heart_rate_bpm")?
                .ok_or_else(|| Error::Config("missing synth key heart_rate_bpm".into()))?,
            heart_rate_spread_bpm: kv.get_or("heart_rate_spread_bpm", 0.0)?,
            beat_jitter_bpm: kv.get_or("beat_jitter_bpm", 0.0)?,
        };
        if cfg.heart_rate_spread_bpm < 0.0 || cfg.beat_jitter_bpm < 0.0 {
            return Err(Error::Config("heart-rate spread and jitter must be non-negative".into()));
        }
        Ok(cfg)
    }

    /// Shipped defaults overlaid with any keys present in `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(DEFAULT_CONFIG)?;
        kv.extend(&KeyValues::read(path)?);
        Self::from_kv(&kv)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("heart_rate_bpm", self.heart_rate_bpm);
        kv.set("heart_rate_spread_bpm", self.heart_rate_spread_bpm);
        kv.set("beat_jitter_bpm", self.beat_jitter_bpm);
        self.normal.write_kv(&mut kv, "normal");
        self.cad.write_kv(&mut kv, "cad");
        kv
    }

    pub fn params(&self, label: Label) -> &BeatParams {
        match label {
            Label::NonCad => &self.normal,
            Label::Cad => &self.cad,
        }
    }

    /// Sets the ST offset of the CAD class and the noise of both classes.
    pub fn with_cad_offset_and_noise(mut self, st_offset: f64, noise_std: f64) -> Self {
        self.cad.st_offset = st_offset;
        self.cad.noise_std = noise_std;
        self.normal.noise_std = noise_std;
        self
    }

    pub fn without_rate_variation(mut self) -> Self {
        self.heart_rate_spread_bpm = 0.0;
        self.beat_jitter_bpm = 0.0;
        self
    }
}

pub fn beat_length(fs: f64, heart_rate_bpm: f64) -> usize {
    (fs * 60.0 / heart_rate_bpm).round() as usize
}

pub fn synth_beat(params: &BeatParams, fs: f64, heart_rate_bpm: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::Argument(format!("sampling frequency must be positive, got {fs}")));
    }
    if !(20.0..=240.0).contains(&heart_rate_bpm) {
        return Err(Error::Argument(format!(
            "heart rate must lie in [20, 240] bpm, got {heart_rate_bpm}"
        )));
    }
    params.validate()?;
    let n = beat_length(fs, heart_rate_bpm).max(1);
    let (st_lo, st_hi) = params.st_window();
    let noise = if params.noise_std > 0.0 {
        Some(Normal::new(0.0, params.noise_std).map_err(|e| Error::Argument(e.to_string()))?)
    } else {
        None
    };
    let beat = (0..n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let mut v: f64 = params.waves().iter().map(|w| w.at(t)).sum();
            if t >= st_lo && t < st_hi {
                v += params.st_offset;
            }
            if let Some(dist) = &noise {
                v += dist.sample(rng);
            }
            v
        })
        .collect();
    Ok(beat)
}

fn uniform_jitter(rng: &mut Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Concatenates whole beats until at least `round(fs · duration_s)` samples
/// exist; the last beat is never truncated.
pub fn synth_record(
    label: Label,
    fs: f64,
    duration_s: f64,
    seed: u64,
    config: &SynthConfig,
) -> Result<SignalRecord> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Argument(format!("duration must be positive, got {duration_s}")));
    }
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::Argument(format!("sampling frequency must be positive, got {fs}")));
    }
    let params = config.params(label);
    let mut rng = rng::seeded(seed);
    let target = ((fs * duration_s).round() as usize).max(1);
    let base = config.heart_rate_bpm + uniform_jitter(&mut rng, config.heart_rate_spread_bpm);
    let mut samples = Vec::with_capacity(target + fs as usize * 3);
    while samples.len() < target {
        let hr = (base + uniform_jitter(&mut rng, config.beat_jitter_bpm)).clamp(20.0, 240.0);
        samples.extend(synth_beat(params, fs, hr, &mut rng)?);
    }
    let id = match label {
        Label::Cad => format!("syn-cad-{seed:016x}"),
        Label::NonCad => format!("syn-noncad-{seed:016x}"),
    };
    SignalRecord::new(id, samples, fs, label)
}

/// `n_cad` CAD records followed by `n_noncad` non-CAD records. Record `i`
/// of a class uses seed `derive(derive(seed, label), i)`, so adding records
/// of one class never changes the other class.
pub fn synth_dataset(
    n_cad: usize,
    n_noncad: usize,
    fs: f64,
    duration_s: f64,
    seed: u64,
    config: &SynthConfig,
) -> Result<Vec<SignalRecord>> {
    if n_cad + n_noncad == 0 {
        return Err(Error::Argument("need at least one record".into()));
    }
    let mut out = Vec::with_capacity(n_cad + n_noncad);
    for (label, count) in [(Label::Cad, n_cad), (Label::NonCad, n_noncad)] {
        let class_seed = rng::derive_seed(seed, 100 + label.index() as u64);
        for i in 0..count {
            let mut rec = synth_record(label, fs, duration_s, rng::derive_seed(class_seed, i as u64), config)?;
            rec.subject_id = format!("syn-{}-{i:04}", if label == Label::Cad { "cad" } else { "noncad" });
            out.push(rec);
        }
    }
    Ok(out)
}
