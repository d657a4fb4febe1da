use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::{
    apply_mask, conv1d_backward_prefix, conv1d_forward_prefix, dense_backward, dense_forward, dropout_backward, dropout_forward,
    maxpool1d_backward, maxpool1d_forward, maxpool_span, relu_backward, relu_forward, softmax, softmax_backward, DropoutMode,
    Layer,
};
use super::{Real, Tensor3};

/// How dropout behaves during a recorded forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Dropout is the identity.
    Infer,
    /// Fresh masks are drawn from the supplied generator.
    Train,
    /// Masks recorded by the previous pass are applied again.
    ReuseMasks,
}

#[derive(Debug, Clone)]
struct Tape<T> {
    inputs: Vec<Tensor3<T>>,
    masks: Vec<Option<Vec<T>>>,
    argmax: Vec<Option<Vec<usize>>>,
    output: Tensor3<T>,
}

/// Parameter and input gradients from one backward pass. `params` follows
/// [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor3<T>,
}

/// Location of one parameter tensor inside the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub name: String,
    pub len: usize,
}

/// An ordered stack of layers plus the tape of the last recorded forward
/// pass.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    tape: Option<Tape<T>>,
    checked: bool,
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self {
            layers,
            tape: None,
            checked: true,
        }
    }

    /// Checked mode rejects non-finite layer outputs with a numeric error.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = match layer {
                Layer::Conv(c) => (c.weights.len(), c.bias.len()),
                Layer::Dense(d) => (d.weights.len(), d.bias.len()),
                _ => continue,
            };
            slots.push(ParamSlot { layer: i, name: format!("{}{i}.weight", layer.kind()), len: w });
            slots.push(ParamSlot { layer: i, name: format!("{}{i}.bias", layer.kind()), len: b });
        }
        slots
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weights.as_slice(), c.bias.as_slice()]),
                Layer::Dense(d) => out.extend([d.weights.as_slice(), d.bias.as_slice()]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weights.as_mut_slice(), c.bias.as_mut_slice()]),
                Layer::Dense(d) => out.extend([d.weights.as_mut_slice(), d.bias.as_mut_slice()]),
                _ => {}
            }
        }
        out
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// Output of the last recorded forward pass.
    pub fn recorded_output(&self) -> Option<&Tensor3<T>> {
        self.tape.as_ref().map(|t| &t.output)
    }

    /// Input that layer `index` received in the last recorded pass.
    pub fn recorded_input(&self, index: usize) -> Option<&Tensor3<T>> {
        self.tape.as_ref().and_then(|t| t.inputs.get(index))
    }

    /// For each layer, how many leading positions of its output can reach
    /// the network output for an input of `length` samples. A max-pool reads
    /// only whole windows, so with `L mod pool ≠ 0` the tail of the conv
    /// stack is dead and is neither computed nor differentiated.
    fn live_lengths(&self, length: usize) -> Vec<usize> {
        let mut lengths = Vec::with_capacity(self.layers.len());
        let mut l = length;
        for layer in &self.layers {
            lengths.push(l);
            l = match layer {
                Layer::MaxPool { pool } => (l / pool).max(1),
                Layer::Flatten | Layer::Dense(_) => 1,
                _ => l,
            };
        }
        let mut live = vec![0; self.layers.len()];
        let mut need = usize::MAX;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input_len = lengths[i];
            live[i] = need.min(input_len);
            need = match layer {
                Layer::Conv(c) => need.saturating_add(c.pad_right()).min(input_len),
                Layer::Relu | Layer::Dropout { .. } => need,
                Layer::MaxPool { pool } => maxpool_span(input_len, *pool),
                Layer::Flatten | Layer::Dense(_) | Layer::Softmax => input_len,
            };
        }
        live
    }

    fn check(&self, x: &Tensor3<T>, index: usize) -> Result<()> {
        if self.checked {
            x.ensure_finite(&format!("output of layer {index} ({})", self.layers[index].kind()))?;
        }
        Ok(())
    }

    /// Recorded forward pass; the tape makes a following `backward` possible.
    pub fn forward(&mut self, input: &Tensor3<T>, pass: Pass, rng: &mut Rng) -> Result<Tensor3<T>> {
        let old_masks = match pass {
            Pass::ReuseMasks => {
                let tape = self
                    .tape
                    .take()
                    .ok_or_else(|| Error::State("mask reuse requested without a recorded pass".into()))?;
                if tape.inputs.first().map(|t| t.shape()) != Some(input.shape()) {
                    return Err(Error::Shape("mask reuse requires the recorded batch shape".into()));
                }
                Some(tape.masks)
            }
            _ => None,
        };
        self.tape = None;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut masks = vec![None; n];
        let mut argmax = vec![None; n];
        let live = self.live_lengths(input.length());
        let mut x = input.clone();
        for i in 0..n {
            let y = match &self.layers[i] {
                Layer::Conv(c) => conv1d_forward_prefix(&x, c, live[i])?,
                Layer::Dropout { rate } => match pass {
                    Pass::Infer => x.clone(),
                    Pass::Train => {
                        let (y, m) = dropout_forward(&x, *rate, DropoutMode::Train, rng)?;
                        masks[i] = m;
                        y
                    }
                    Pass::ReuseMasks => {
                        let m = old_masks.as_ref().and_then(|ms| ms[i].clone());
                        let y = match &m {
                            Some(m) => apply_mask(&x, m),
                            None => x.clone(),
                        };
                        masks[i] = m;
                        y
                    }
                },
                Layer::MaxPool { pool } => {
                    let (y, idx) = maxpool1d_forward(&x, *pool)?;
                    argmax[i] = Some(idx);
                    y
                }
                layer => apply_stateless(layer, &x)?,
            };
            self.check(&y, i)?;
            inputs.push(x);
            x = y;
        }
        self.tape = Some(Tape {
            inputs,
            masks,
            argmax,
            output: x.clone(),
        });
        Ok(x)
    }

    /// Unrecorded inference pass (dropout is the identity).
    pub fn predict(&self, input: &Tensor3<T>) -> Result<Tensor3<T>> {
        let live = self.live_lengths(input.length());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv(c) => conv1d_forward_prefix(&x, c, live[i])?,
                Layer::Dropout { .. } => x,
                Layer::MaxPool { pool } => maxpool1d_forward(&x, *pool)?.0,
                layer => apply_stateless(layer, &x)?,
            };
            self.check(&x, i)?;
        }
        Ok(x)
    }

    /// Re-runs layers `start..` on `input` with the recorded dropout masks,
    /// without touching the tape.
    pub fn replay_from(&self, start: usize, input: &Tensor3<T>) -> Result<Tensor3<T>> {
        let tape = self.tape_ref()?;
        Ok(self.replay(tape, start, input, None)?.0)
    }

    /// [`Network::replay_from`] starting from the input layer `start`
    /// received in the recorded pass.
    pub fn replay_recorded(&self, start: usize) -> Result<Tensor3<T>> {
        let tape = self.tape_ref()?;
        Ok(self.replay(tape, start, recorded(tape, start)?, None)?.0)
    }

    /// Replays from the recorded input of layer `start` and also returns a
    /// first-order bound on how far the loss moved off the recorded
    /// piecewise-linear branch.
    ///
    /// `output_grads[i]` is the recorded gradient at the output of layer `i`
    /// (see [`Network::backward_trace_from_logits`]). Each ReLU unit whose
    /// sign flipped contributes `|g|·|z|` (its new pre-activation `z`), and
    /// each max-pool window whose selection moved contributes
    /// `|g|·|x_new − x_old|`.
    pub fn replay_with_kink_bound(
        &self,
        start: usize,
        output_grads: &[Option<Tensor3<T>>],
    ) -> Result<(Tensor3<T>, f64)> {
        let tape = self.tape_ref()?;
        self.replay(tape, start, recorded(tape, start)?, Some(output_grads))
    }

    fn tape_ref(&self) -> Result<&Tape<T>> {
        self.tape
            .as_ref()
            .ok_or_else(|| Error::State("replay requires a recorded forward pass".into()))
    }

    fn replay(
        &self,
        tape: &Tape<T>,
        start: usize,
        input: &Tensor3<T>,
        output_grads: Option<&[Option<Tensor3<T>>]>,
    ) -> Result<(Tensor3<T>, f64)> {
        let mut bound = 0.0;
        let live = self.live_lengths(tape.inputs[0].length());
        let mut x = input.clone();
        for i in start..self.layers.len() {
            let grad = output_grads.and_then(|g| g.get(i)).and_then(Option::as_ref);
            x = match &self.layers[i] {
                Layer::Conv(c) => conv1d_forward_prefix(&x, c, live[i])?,
                Layer::Dropout { .. } => match &tape.masks[i] {
                    Some(m) => apply_mask(&x, m),
                    None => x,
                },
                Layer::MaxPool { pool } => {
                    let (y, idx) = maxpool1d_forward(&x, *pool)?;
                    if let (Some(g), Some(old)) = (grad, tape.argmax[i].as_ref()) {
                        for ((&new_i, &old_i), &gv) in idx.iter().zip(old).zip(g.data()) {
                            if new_i != old_i {
                                bound += gv.as_f64().abs() * (x.data()[new_i] - x.data()[old_i]).as_f64().abs();
                            }
                        }
                    }
                    y
                }
                Layer::Relu => {
                    if let Some(g) = grad {
                        let base = &tape.inputs[i];
                        for ((&z, &z0), &gv) in x.data().iter().zip(base.data()).zip(g.data()) {
                            if (z > T::zero()) != (z0 > T::zero()) {
                                bound += gv.as_f64().abs() * z.as_f64().abs();
                            }
                        }
                    }
                    relu_forward(&x)
                }
                layer => apply_stateless(layer, &x)?,
            };
            self.check(&x, i)?;
        }
        Ok((x, bound))
    }

    /// Reverse pass seeded with the gradient of the loss at the network
    /// output.
    pub fn backward(&self, seed: &Tensor3<T>) -> Result<Gradients<T>> {
        self.backward_range(self.layers.len(), seed, None)
    }

    /// Reverse pass seeded at the input of a terminal softmax (the logits),
    /// e.g. with the fused cross-entropy gradient `(p − onehot(y)) / B`.
    pub fn backward_from_logits(&self, seed: &Tensor3<T>) -> Result<Gradients<T>> {
        self.backward_range(self.logits_index()?, seed, None)
    }

    /// [`Network::backward_from_logits`] that also keeps the gradient at the
    /// output of every ReLU and max-pool layer, indexed by layer.
    pub fn backward_trace_from_logits(&self, seed: &Tensor3<T>) -> Result<(Gradients<T>, Vec<Option<Tensor3<T>>>)> {
        let mut trace = vec![None; self.layers.len()];
        let grads = self.backward_range(self.logits_index()?, seed, Some(&mut trace))?;
        Ok((grads, trace))
    }

    fn logits_index(&self) -> Result<usize> {
        match self.layers.last() {
            Some(Layer::Softmax) => Ok(self.layers.len() - 1),
            _ => Err(Error::State("network does not end in softmax".into())),
        }
    }

    fn backward_range(
        &self,
        top: usize,
        seed: &Tensor3<T>,
        mut trace: Option<&mut Vec<Option<Tensor3<T>>>>,
    ) -> Result<Gradients<T>> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let expected = if top == self.layers.len() {
            tape.output.shape()
        } else {
            tape.inputs[top].shape()
        };
        if seed.shape() != expected {
            return Err(Error::Shape(format!(
                "seed gradient has shape {:?}, expected {expected:?}",
                seed.shape()
            )));
        }
        let live = self.live_lengths(tape.inputs[0].length());
        let mut layer_grads: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; self.layers.len()];
        let mut g = seed.clone();
        for i in (0..top).rev() {
            let x = &tape.inputs[i];
            if let Some(trace) = trace.as_deref_mut() {
                if matches!(self.layers[i], Layer::Relu | Layer::MaxPool { .. }) {
                    trace[i] = Some(g.clone());
                }
            }
            g = match &self.layers[i] {
                Layer::Conv(c) => {
                    let (gx, gw, gb) = conv1d_backward_prefix(x, c, &g, true, live[i])?;
                    let gx = gx.expect("input gradient requested");
                    layer_grads[i] = Some((gw, gb));
                    gx
                }
                Layer::Dense(d) => {
                    let (gx, gw, gb) = dense_backward(x, d, &g)?;
                    layer_grads[i] = Some((gw, gb));
                    gx
                }
                Layer::Relu => relu_backward(x, &g),
                Layer::Dropout { .. } => dropout_backward(&g, tape.masks[i].as_deref()),
                Layer::MaxPool { .. } => {
                    let idx = tape.argmax[i].as_ref().expect("pool argmax recorded");
                    maxpool1d_backward(&g, idx, x.shape())
                }
                Layer::Flatten => g.reshaped(x.channels(), x.length())?,
                Layer::Softmax => {
                    let out = if i + 1 == self.layers.len() { &tape.output } else { &tape.inputs[i + 1] };
                    softmax_backward(out, &g)
                }
            };
        }
        let mut params = Vec::new();
        for (layer, grads) in self.layers.iter().zip(layer_grads) {
            let (w, b) = match layer {
                Layer::Conv(c) => (c.weights.len(), c.bias.len()),
                Layer::Dense(d) => (d.weights.len(), d.bias.len()),
                _ => continue,
            };
            // layers above `top` receive no gradient
            let (gw, gb) = grads.unwrap_or_else(|| (vec![T::zero(); w], vec![T::zero(); b]));
            params.push(gw);
            params.push(gb);
        }
        Ok(Gradients { params, input: g })
    }
}

fn recorded<T>(tape: &Tape<T>, start: usize) -> Result<&Tensor3<T>> {
    tape.inputs
        .get(start)
        .ok_or_else(|| Error::Argument(format!("no layer {start} to replay from")))
}

fn apply_stateless<T: Real>(layer: &Layer<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
    match layer {
        Layer::Relu => Ok(relu_forward(x)),
        Layer::Flatten => Ok(x.clone().flattened()),
        Layer::Dense(d) => dense_forward(x, d),
        Layer::Softmax => softmax(x),
        Layer::Conv(_) | Layer::Dropout { .. } | Layer::MaxPool { .. } => {
            unreachable!("conv, dropout and pool are handled by the caller")
        }
    }
}
