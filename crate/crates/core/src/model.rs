//! The CAD classifier: four same-padded convolution blocks, a max-pool,
//! a 128-unit hidden layer and a two-way softmax head.

use std::fmt;

use crate::error::{Error, Result};
use crate::kv::{join_list, KeyValues};
use crate::nn::{Conv1d, Dense, Layer, Network, Real, Tensor3};
use crate::rng::{self, Rng};
use crate::signal_io::Segment;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_length: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    /// Dropout rate after each conv block; `0` omits the layer.
    pub conv_dropout: Vec<f64>,
    pub pool: usize,
    pub dense_units: usize,
    /// Dropout before the output layer; `0` omits the layer.
    pub head_dropout: f64,
    pub classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a lower test loss.
    pub early_stopping_patience: Option<usize>,
    /// Stop as soon as the post-epoch train accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_length: 250,
            conv_filters: vec![512, 256, 256, 256],
            kernel: 32,
            conv_dropout: vec![0.2, 0.2, 0.2, 0.0],
            pool: 128,
            dense_units: 128,
            head_dropout: 0.5,
            classes: 2,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            early_stopping_patience: None,
            target_train_accuracy: None,
        }
    }
}

impl ModelConfig {
    pub fn with_length(input_length: usize) -> Self {
        Self {
            input_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_length", self.input_length),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("dense_units", self.dense_units),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::Config("conv_filters must be a non-empty list of positive counts".into()));
        }
        if self.conv_dropout.len() != self.conv_filters.len() {
            return Err(Error::Config(format!(
                "conv_dropout has {} rates for {} conv blocks",
                self.conv_dropout.len(),
                self.conv_filters.len()
            )));
        }
        let rates = self.conv_dropout.iter().chain(std::iter::once(&self.head_dropout));
        if rates.clone().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.classes != 2 {
            return Err(Error::Config(format!("classes must be 2, got {}", self.classes)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be a non-negative number".into()));
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("target_train_accuracy must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Length after the pool: `max(1, ⌊L / pool⌋)`.
    pub fn pooled_length(&self) -> usize {
        (self.input_length / self.pool).max(1)
    }

    pub fn flatten_size(&self) -> usize {
        self.conv_filters.last().copied().unwrap_or(0) * self.pooled_length()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("input_length", self.input_length);
        kv.set("conv_filters", join_list(&self.conv_filters));
        kv.set("kernel", self.kernel);
        kv.set("conv_dropout", join_list(&self.conv_dropout));
        kv.set("pool", self.pool);
        kv.set("dense_units", self.dense_units);
        kv.set("head_dropout", self.head_dropout);
        kv.set("classes", self.classes);
        kv.set("learning_rate", self.learning_rate);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        if let Some(p) = self.early_stopping_patience {
            kv.set("early_stopping_patience", p);
        }
        if let Some(t) = self.target_train_accuracy {
            kv.set("target_train_accuracy", t);
        }
        kv
    }

    /// Missing keys take their defaults; unrelated keys are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            input_length: kv.get_or("input_length", d.input_length)?,
            conv_filters: kv.get_list("conv_filters")?.unwrap_or(d.conv_filters),
            kernel: kv.get_or("kernel", d.kernel)?,
            conv_dropout: kv.get_list("conv_dropout")?.unwrap_or(d.conv_dropout),
            pool: kv.get_or("pool", d.pool)?,
            dense_units: kv.get_or("dense_units", d.dense_units)?,
            head_dropout: kv.get_or("head_dropout", d.head_dropout)?,
            classes: kv.get_or("classes", d.classes)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            seed: kv.get_or("seed", d.seed)?,
            early_stopping_patience: kv.get("early_stopping_patience")?,
            target_train_accuracy: kv.get("target_train_accuracy")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render())
    }
}

#[derive(Debug, Clone)]
pub struct CadModel<T> {
    config: ModelConfig,
    net: Network<T>,
}

fn conv<T: Real>(f: usize, c: usize, k: usize, rng: Option<&mut Rng>) -> Result<Conv1d<T>> {
    match rng {
        Some(r) => Conv1d::he_init(f, c, k, r),
        None => Conv1d::new(vec![T::zero(); f * c * k], vec![T::zero(); f], f, c, k),
    }
}

fn dense<T: Real>(o: usize, i: usize, rng: Option<&mut Rng>) -> Result<Dense<T>> {
    match rng {
        Some(r) => Dense::he_init(o, i, r),
        None => Dense::new(vec![T::zero(); o * i], vec![T::zero(); o], o, i),
    }
}

fn layers<T: Real>(config: &ModelConfig, mut rng: Option<&mut Rng>) -> Result<Vec<Layer<T>>> {
    let mut layers = Vec::new();
    let mut channels = 1;
    for (&filters, &rate) in config.conv_filters.iter().zip(&config.conv_dropout) {
        layers.push(Layer::Conv(conv(filters, channels, config.kernel, rng.as_deref_mut())?));
        layers.push(Layer::Relu);
        if rate > 0.0 {
            layers.push(Layer::Dropout { rate });
        }
        channels = filters;
    }
    layers.push(Layer::MaxPool { pool: config.pool });
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(dense(config.dense_units, config.flatten_size(), rng.as_deref_mut())?));
    layers.push(Layer::Relu);
    if config.head_dropout > 0.0 {
        layers.push(Layer::Dropout {
            rate: config.head_dropout,
        });
    }
    layers.push(Layer::Dense(dense(config.classes, config.dense_units, rng.as_deref_mut())?));
    layers.push(Layer::Softmax);
    Ok(layers)
}

/// Builds the classifier with He-initialised weights drawn from
/// `derive_seed(config.seed, INIT)`.
pub fn build_model<T: Real>(config: &ModelConfig) -> Result<CadModel<T>> {
    config.validate()?;
    let mut rng = rng::seeded(rng::derive_seed(config.seed, rng::stream::INIT));
    Ok(CadModel {
        config: config.clone(),
        net: Network::new(layers(config, Some(&mut rng))?),
    })
}

/// Same structure as [`build_model`] with every parameter zero.
pub(crate) fn build_zeroed<T: Real>(config: &ModelConfig) -> Result<CadModel<T>> {
    config.validate()?;
    Ok(CadModel {
        config: config.clone(),
        net: Network::new(layers(config, None)?),
    })
}

impl<T: Real> CadModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn input_length(&self) -> usize {
        self.config.input_length
    }

    /// Input width of the first dense layer.
    pub fn flatten_size(&self) -> usize {
        self.net
            .layers()
            .iter()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.inputs()),
                _ => None,
            })
            .expect("model has a dense layer")
    }

    pub fn check_batch(&self, batch: &Tensor3<T>) -> Result<()> {
        let (_, c, l) = batch.shape();
        if c != 1 || l != self.config.input_length {
            return Err(Error::Shape(format!(
                "model expects (B, 1, {}) input, got (B, {c}, {l})",
                self.config.input_length
            )));
        }
        Ok(())
    }

    /// Inference-mode class probabilities, shape `(B, 2, 1)`.
    pub fn predict(&self, batch: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_batch(batch)?;
        self.net.predict(batch)
    }

    /// Argmax class per row (ties resolve to class 0).
    pub fn predict_classes(&self, batch: &Tensor3<T>) -> Result<Vec<usize>> {
        let probs = self.predict(batch)?;
        Ok(argmax_rows(&probs))
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

pub fn argmax_rows<T: Real>(probs: &Tensor3<T>) -> Vec<usize> {
    probs
        .data()
        .chunks_exact(probs.sample_len())
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Stacks segments into a `(B, 1, L)` batch.
pub fn batch_from_segments<T: Real>(segments: &[&Segment]) -> Result<Tensor3<T>> {
    let length = segments
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
    if segments.iter().any(|s| s.len() != length) {
        return Err(Error::Shape("segments in a batch differ in length".into()));
    }
    let data = segments
        .iter()
        .flat_map(|s| s.values.iter().map(|&v| T::from_f64(v)))
        .collect();
    Tensor3::from_vec(data, segments.len(), 1, length)
}
