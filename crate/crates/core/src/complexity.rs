//! Analytic parameter and FLOPs accounting.
//!
//! Conventions: a conv layer has `F·C·K + F` parameters and
//! `2·F·(C·K + 1)·L_out` FLOPs; a dense layer has `O·I + O` parameters and
//! `2·O·(I + 1)` FLOPs (the bias counted as one multiply-accumulate).
//! Activations, dropout, pooling and reshapes count zero.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{Layer, Network, Real};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    /// `(channels, length)` per sample.
    pub output_shape: (usize, usize),
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub input_length: usize,
    pub rows: Vec<LayerRow>,
    pub total_params: u64,
    pub total_flops: u64,
    /// FLOPs of the dense layers only.
    pub dense_flops: u64,
    /// Row of the hidden dense layer, whose FLOPs stand alone as the
    /// commonly quoted figure for this architecture.
    pub reference_row: Option<usize>,
}

pub fn conv_params(filters: usize, in_channels: usize, kernel: usize) -> u64 {
    (filters * in_channels * kernel + filters) as u64
}

pub fn dense_params(outputs: usize, inputs: usize) -> u64 {
    (outputs * inputs + outputs) as u64
}

pub fn conv_flops(filters: usize, in_channels: usize, kernel: usize, out_length: usize) -> u64 {
    2 * (filters * (in_channels * kernel + 1) * out_length) as u64
}

pub fn dense_flops(outputs: usize, inputs: usize) -> u64 {
    2 * (outputs * (inputs + 1)) as u64
}

/// Per-layer rows for a network fed single-channel input of `input_length`.
pub fn audit<T: Real>(net: &Network<T>, input_length: usize) -> Result<ComplexityReport> {
    let mut shape = (1usize, input_length);
    let mut rows = Vec::new();
    let (mut n_conv, mut n_dense, mut n_drop, mut n_relu) = (0, 0, 0, 0);
    let mut reference_row = None;
    for layer in net.layers() {
        let (name, params, flops) = match layer {
            Layer::Conv(c) => {
                if c.in_channels() != shape.0 {
                    return Err(Error::Shape(format!(
                        "conv expects {} channels, shape trace has {}",
                        c.in_channels(),
                        shape.0
                    )));
                }
                n_conv += 1;
                shape.0 = c.filters();
                (
                    format!("conv{n_conv}"),
                    conv_params(c.filters(), c.in_channels(), c.kernel()),
                    conv_flops(c.filters(), c.in_channels(), c.kernel(), shape.1),
                )
            }
            Layer::Relu => {
                n_relu += 1;
                (format!("relu{n_relu}"), 0, 0)
            }
            Layer::Dropout { rate } => {
                n_drop += 1;
                (format!("dropout{n_drop}({rate})"), 0, 0)
            }
            Layer::MaxPool { pool } => {
                shape.1 = (shape.1 / pool).max(1);
                (format!("maxpool({pool})"), 0, 0)
            }
            Layer::Flatten => {
                shape = (shape.0 * shape.1, 1);
                ("flatten".to_string(), 0, 0)
            }
            Layer::Dense(d) => {
                if d.inputs() != shape.0 * shape.1 {
                    return Err(Error::Shape(format!(
                        "dense expects {} inputs, shape trace gives {}",
                        d.inputs(),
                        shape.0 * shape.1
                    )));
                }
                n_dense += 1;
                if n_dense == 1 {
                    reference_row = Some(rows.len());
                }
                shape = (d.outputs(), 1);
                (
                    format!("dense{n_dense}"),
                    dense_params(d.outputs(), d.inputs()),
                    dense_flops(d.outputs(), d.inputs()),
                )
            }
            Layer::Softmax => ("softmax".to_string(), 0, 0),
        };
        rows.push(LayerRow {
            name,
            output_shape: shape,
            params,
            flops,
        });
    }
    let dense_total = net
        .layers()
        .iter()
        .zip(&rows)
        .filter(|(l, _)| matches!(l, Layer::Dense(_)))
        .map(|(_, r)| r.flops)
        .sum();
    Ok(ComplexityReport {
        input_length,
        total_params: rows.iter().map(|r| r.params).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        dense_flops: dense_total,
        reference_row,
        rows,
    })
}

/// Parameter rows; FLOPs are filled in as well since both come from the
/// same shape trace.
pub fn count_params<T: Real>(net: &Network<T>, input_length: usize) -> Result<ComplexityReport> {
    audit(net, input_length)
}

pub fn count_flops<T: Real>(net: &Network<T>, input_length: usize) -> Result<ComplexityReport> {
    audit(net, input_length)
}

fn group(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl ComplexityReport {
    pub fn row(&self, name: &str) -> Option<&LayerRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "input length: {}", self.input_length);
        let _ = writeln!(out, "{:<16} {:>14} {:>12} {:>16}", "layer", "output", "params", "flops");
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if Some(i) == self.reference_row { "  *" } else { "" };
            let _ = writeln!(
                out,
                "{:<16} {:>14} {:>12} {:>16}{mark}",
                r.name,
                format!("({}, {})", r.output_shape.0, r.output_shape.1),
                group(r.params),
                group(r.flops)
            );
        }
        let _ = writeln!(out, "{:<16} {:>14} {:>12} {:>16}", "total", "", group(self.total_params), group(self.total_flops));
        let _ = writeln!(out, "dense-only flops subtotal: {}", group(self.dense_flops));
        let _ = writeln!(out, "full-model flops total:    {}", group(self.total_flops));
        if let Some(i) = self.reference_row {
            let _ = writeln!(
                out,
                "* {} alone: {} flops (the reference figure counts only this layer)",
                self.rows[i].name,
                group(self.rows[i].flops)
            );
        }
        out
    }

    /// CSV with one row per layer followed by `subtotal:*` / `total` rows.
    /// The `reference` column marks the hidden dense layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,out_channels,out_length,params,flops,reference\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.name,
                r.output_shape.0,
                r.output_shape.1,
                r.params,
                r.flops,
                u8::from(Some(i) == self.reference_row)
            );
        }
        let _ = writeln!(out, "subtotal:dense,,,,{},0", self.dense_flops);
        let _ = writeln!(out, "total,,,{},{},0", self.total_params, self.total_flops);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv1d, Dense};

    #[test]
    fn layer_formulas() {
        assert_eq!(conv_params(512, 1, 32), 16_896);
        assert_eq!(dense_params(128, 256), 32_896);
        assert_eq!(dense_flops(128, 256), 65_792);
        assert_eq!(dense_flops(1, 1), 4);
        assert_eq!(conv_flops(1, 1, 1, 1), 4);
    }

    #[test]
    fn doubling_outputs_doubles_dense_cost() {
        for (o, i) in [(3, 7), (128, 256), (2, 128)] {
            assert_eq!(dense_params(2 * o, i), 2 * dense_params(o, i));
            assert_eq!(dense_flops(2 * o, i), 2 * dense_flops(o, i));
        }
    }

    #[test]
    fn totals_are_column_sums() {
        let net: Network<f32> = Network::new(vec![
            Layer::Conv(Conv1d::new(vec![0.0; 6], vec![0.0; 2], 2, 1, 3).unwrap()),
            Layer::Relu,
            Layer::MaxPool { pool: 2 },
            Layer::Flatten,
            Layer::Dense(Dense::new(vec![0.0; 12], vec![0.0; 2], 2, 6).unwrap()),
            Layer::Softmax,
        ]);
        let r = audit(&net, 7).unwrap();
        assert_eq!(r.total_params, 8 + 14);
        assert_eq!(r.total_flops, conv_flops(2, 1, 3, 7) + dense_flops(2, 6));
        assert_eq!(r.dense_flops, dense_flops(2, 6));
        assert_eq!(r.row("maxpool(2)").unwrap().output_shape, (2, 3));
        assert!(audit(&net, 9).is_err());
    }
}
