use rand::Rng as _;

use crate::error::Result;
use crate::rng;

use super::layers::{cross_entropy_loss, fused_softmax_ce_grad};
use super::network::{Gradients, Network, Pass};
use super::{Real, Tensor3};

/// Central finite-difference check of the analytic cross-entropy gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Number of parameters compared.
    pub samples: usize,
    /// Perturbation `h` in `(L(θ+h) − L(θ−h)) / 2h`.
    pub h: f64,
    pub seed: u64,
    /// Draw one set of training-mode dropout masks and hold it fixed; when
    /// false dropout runs in inference mode.
    pub fixed_masks: bool,
    /// Redraw a parameter when ReLU sign flips or max-pool switches in the
    /// perturbed passes could, to first order, move the central difference
    /// by more than `kink_tolerance` relative to the analytic gradient.
    /// Across such a switch the loss is not differentiable and the finite
    /// difference no longer estimates the gradient.
    pub skip_kinks: bool,
    pub kink_tolerance: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            samples: 200,
            h: 1e-3,
            seed: 0,
            fixed_masks: true,
            skip_kinks: true,
            kink_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    /// `max |ga − gn| / max(|ga|, |gn|, 1e-8)` over the compared parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected by the kink bound.
    pub kinks_skipped: usize,
    /// Compared draws whose perturbations crossed a kink within the bound.
    pub kinks_tolerated: usize,
    pub worst: Option<GradSample>,
}

impl GradCheck {
    pub fn run<T: Real>(&self, net: &mut Network<T>, batch: &Tensor3<T>, labels: &[usize]) -> Result<GradCheckReport> {
        self.run_with(net, batch, labels, |_| {})
    }

    /// Like [`GradCheck::run`] but lets the caller alter the analytic
    /// gradients before comparison (fault injection).
    pub fn run_with<T: Real>(
        &self,
        net: &mut Network<T>,
        batch: &Tensor3<T>,
        labels: &[usize],
        tamper: impl FnOnce(&mut Gradients<T>),
    ) -> Result<GradCheckReport> {
        let slots = net.param_slots();
        if slots.is_empty() || self.samples == 0 {
            return Ok(GradCheckReport::default());
        }
        let mut rng = rng::seeded(self.seed);
        let pass = if self.fixed_masks { Pass::Train } else { Pass::Infer };
        let probs = net.forward(batch, pass, &mut rng)?;
        let (mut analytic, output_grads) = net.backward_trace_from_logits(&fused_softmax_ce_grad(&probs, labels)?)?;
        tamper(&mut analytic);

        let mut report = GradCheckReport::default();
        let max_attempts = self.samples * 20;
        let mut attempts = 0;
        while report.checked < self.samples && attempts < max_attempts {
            attempts += 1;
            let t = rng.gen_range(0..slots.len());
            let slot = &slots[t];
            let idx = rng.gen_range(0..slot.len);

            let original = net.params()[t][idx];
            let mut eval = |value: T| -> Result<(f64, f64)> {
                net.params_mut()[t][idx] = value;
                let (out, bound) = net.replay_with_kink_bound(slot.layer, &output_grads)?;
                Ok((cross_entropy_loss(&out, labels)?, bound))
            };
            let plus = eval(original + T::from_f64(self.h));
            let minus = eval(original - T::from_f64(self.h));
            net.params_mut()[t][idx] = original;
            let ((lp, bound_p), (lm, bound_m)) = (plus?, minus?);
            let ga = analytic.params[t][idx].as_f64();
            let kink_error = (bound_p + bound_m) / (2.0 * self.h);
            if kink_error > 0.0 {
                if self.skip_kinks && kink_error > self.kink_tolerance * ga.abs().max(1e-8) {
                    report.kinks_skipped += 1;
                    continue;
                }
                report.kinks_tolerated += 1;
            }
            let numeric = (lp - lm) / (2.0 * self.h);
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(GradSample {
                    tensor: slot.name.clone(),
                    index: idx,
                    analytic: ga,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv1d, Dense, Layer};

    fn net(seed: u64) -> Network<f64> {
        let mut r = rng::seeded(seed);
        Network::new(vec![
            Layer::Conv(Conv1d::he_init(4, 1, 5, &mut r).unwrap()),
            Layer::Relu,
            Layer::Dropout { rate: 0.2 },
            Layer::Conv(Conv1d::he_init(3, 4, 4, &mut r).unwrap()),
            Layer::Relu,
            Layer::MaxPool { pool: 5 },
            Layer::Flatten,
            Layer::Dense(Dense::he_init(6, 6, &mut r).unwrap()),
            Layer::Relu,
            Layer::Dropout { rate: 0.5 },
            Layer::Dense(Dense::he_init(2, 6, &mut r).unwrap()),
            Layer::Softmax,
        ])
    }

    fn batch() -> Tensor3<f64> {
        let data: Vec<f64> = (0..36).map(|i| ((i as f64) * 0.37).sin() + 0.1 * (i % 3) as f64).collect();
        Tensor3::from_vec(data, 3, 1, 12).unwrap()
    }

    #[test]
    fn small_network_passes() {
        let check = GradCheck { samples: 150, seed: 11, ..GradCheck::default() };
        let report = check.run(&mut net(1), &batch(), &[0, 1, 1]).unwrap();
        assert_eq!(report.checked, 150);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let check = GradCheck { samples: 20, seed: 3, ..GradCheck::default() };
        let mut n = net(2);
        let report = check
            .run_with(&mut n, &batch(), &[1, 0, 1], |g| {
                for grads in &mut g.params {
                    for v in grads.iter_mut() {
                        *v *= 2.0;
                    }
                }
            })
            .unwrap();
        assert!(report.max_rel_error > 0.3, "{report:?}");
    }

    #[test]
    fn parameterless_network_is_vacuous() {
        let mut n: Network<f64> = Network::new(vec![Layer::Relu, Layer::Flatten, Layer::Softmax]);
        let x = Tensor3::from_vec(vec![0.5, -0.5], 1, 2, 1).unwrap();
        let report = GradCheck::default().run(&mut n, &x, &[0]).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn parameters_are_restored() {
        let mut n = net(4);
        let before: Vec<Vec<f64>> = n.params().iter().map(|p| p.to_vec()).collect();
        GradCheck { samples: 30, ..GradCheck::default() }.run(&mut n, &batch(), &[0, 0, 1]).unwrap();
        let after: Vec<Vec<f64>> = n.params().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
    }
}
