use std::sync::Arc;

use super::replay::{EncodedState, Transition};
use crate::environment::{ACTION_COUNT, BUNDLE_SIZE};
use crate::error::{Error, Result};
use crate::features::{mean_vector, FeatureVector};
use crate::nn::{
    apply_update, softmax_in_place, Activation, DenseNet, OptimizerKind, OptimizerState, ParamGrads, ParamSet, Tensor,
};
use crate::rng::SeededRng;
use crate::vae::{argmax, VaeModel};

/// Action-value network.
///
/// `Plain` reads the three observation vectors concatenated with the
/// position. `Encoded` reuses the VAE's class encoder: the class posterior
/// of the mean observation, joined with the position, feeds an extra hidden
/// layer and an 8-way linear head.
#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    Plain(DenseNet),
    Encoded {
        encoder: DenseNet,
        head: DenseNet,
        train_encoder: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGrads {
    pub head: ParamGrads,
    pub encoder: Option<ParamGrads>,
}

impl QGrads {
    /// Flat, in [`ParamSet`] order of [`QFunction`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.head.flatten();
        if let Some(e) = &self.encoder {
            v.extend(e.flatten());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct QOptimizer {
    pub head: OptimizerState,
    pub encoder: Option<OptimizerState>,
}

impl QOptimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, q: &QFunction) -> Result<Self> {
        Ok(match q {
            QFunction::Plain(net) => Self {
                head: OptimizerState::new(kind, learning_rate, net)?,
                encoder: None,
            },
            QFunction::Encoded {
                encoder,
                head,
                train_encoder,
            } => Self {
                head: OptimizerState::new(kind, learning_rate, head)?,
                encoder: if *train_encoder {
                    Some(OptimizerState::new(kind, learning_rate, encoder)?)
                } else {
                    None
                },
            },
        })
    }
}

fn q_spec(hidden: &[usize]) -> Vec<(usize, Activation)> {
    hidden
        .iter()
        .map(|&h| (h, Activation::Relu))
        .chain(std::iter::once((ACTION_COUNT, Activation::Identity)))
        .collect()
}

impl QFunction {
    /// Fully connected network over `3 * feature_dim + 2` inputs.
    pub fn plain(feature_dim: usize, hidden: &[usize], rng: &mut SeededRng) -> Result<Self> {
        Self::from_net(DenseNet::new(BUNDLE_SIZE * feature_dim + 2, &q_spec(hidden), rng)?)
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.output_dim() != ACTION_COUNT {
            return Err(Error::invalid(format!(
                "Q network must have {ACTION_COUNT} outputs, has {}",
                net.output_dim()
            )));
        }
        Ok(QFunction::Plain(net))
    }

    /// Head on top of a copy of the VAE's class encoder.
    pub fn from_vae(vae: &VaeModel, hidden: &[usize], train_encoder: bool, rng: &mut SeededRng) -> Result<Self> {
        let head = DenseNet::new(vae.class_count() + 2, &q_spec(hidden), rng)?;
        Self::encoded(vae.encoder_y.clone(), head, train_encoder)
    }

    pub fn encoded(encoder: DenseNet, head: DenseNet, train_encoder: bool) -> Result<Self> {
        if head.output_dim() != ACTION_COUNT || head.input_dim() != encoder.output_dim() + 2 {
            return Err(Error::invalid("Q head does not fit the encoder"));
        }
        Ok(QFunction::Encoded {
            encoder,
            head,
            train_encoder,
        })
    }

    pub fn is_encoded(&self) -> bool {
        matches!(self, QFunction::Encoded { .. })
    }

    /// Length of the `observation` part of an [`EncodedState`].
    pub fn observation_dim(&self) -> usize {
        match self {
            QFunction::Plain(net) => net.input_dim() - 2,
            QFunction::Encoded {
                encoder,
                train_encoder: true,
                ..
            } => encoder.input_dim(),
            QFunction::Encoded { encoder, .. } => encoder.output_dim(),
        }
    }

    /// Per-episode observation encoding. With a frozen encoder the class
    /// posterior is computed once here instead of at every step.
    pub fn encode_observation(&self, observations: &[FeatureVector; BUNDLE_SIZE]) -> Result<Arc<[f64]>> {
        let v = match self {
            QFunction::Plain(_) => observations
                .iter()
                .flat_map(|o| o.values.iter().copied())
                .collect::<Vec<f64>>(),
            QFunction::Encoded {
                encoder,
                train_encoder,
                ..
            } => {
                let mean = mean_vector(observations)?;
                if *train_encoder {
                    mean
                } else {
                    let mut p = encoder.predict_row(&mean)?;
                    softmax_in_place(&mut p);
                    p
                }
            }
        };
        if v.len() != self.observation_dim() {
            return Err(Error::invalid(format!(
                "observation encodes to {} values, network expects {}",
                v.len(),
                self.observation_dim()
            )));
        }
        Ok(Arc::from(v))
    }

    fn check_states(&self, states: &[&EncodedState]) -> Result<()> {
        let want = self.observation_dim();
        if let Some(s) = states.iter().find(|s| s.observation.len() != want) {
            return Err(Error::invalid(format!(
                "state observation has {} values, expected {want}",
                s.observation.len()
            )));
        }
        Ok(())
    }

    fn stack(states: &[&EncodedState]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = states.iter().map(|s| s.to_vec()).collect();
        Tensor::from_rows(&rows)
    }

    /// Joins class posteriors with positions.
    fn head_rows(probs: &Tensor, states: &[&EncodedState]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut p = probs.row(i).to_vec();
                softmax_in_place(&mut p);
                p.extend_from_slice(&s.position);
                p
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    /// Q-values for a batch of states, `[n, 8]`.
    pub fn q_batch(&self, states: &[&EncodedState]) -> Result<Tensor> {
        self.check_states(states)?;
        match self {
            QFunction::Plain(net) => net.predict(&Self::stack(states)?),
            QFunction::Encoded {
                encoder,
                head,
                train_encoder,
            } => {
                if *train_encoder {
                    let obs: Vec<&[f64]> = states.iter().map(|s| &s.observation[..]).collect();
                    let logits = encoder.predict(&Tensor::from_rows(&obs)?)?;
                    head.predict(&Self::head_rows(&logits, states)?)
                } else {
                    head.predict(&Self::stack(states)?)
                }
            }
        }
    }

    pub fn q_values(&self, state: &EncodedState) -> Result<Vec<f64>> {
        Ok(self.q_batch(&[state])?.into_data())
    }

    /// `mean_i (targets[i] - Q(s_i, a_i))^2` and its gradient, the targets
    /// held constant.
    pub fn loss_and_grad(&mut self, batch: &[Transition], targets: &[f64]) -> Result<(f64, QGrads)> {
        if batch.is_empty() {
            return Err(Error::invalid("TD minibatch must not be empty"));
        }
        if targets.len() != batch.len() {
            return Err(Error::invalid("one target per transition required"));
        }
        let states: Vec<&EncodedState> = batch.iter().map(|t| &t.state).collect();
        self.check_states(&states)?;
        let n = batch.len();

        // Forward with caches.
        let probs_for_backward;
        let q = match self {
            QFunction::Plain(net) => {
                probs_for_backward = None;
                net.forward(&Self::stack(&states)?)?
            }
            QFunction::Encoded {
                encoder,
                head,
                train_encoder,
            } => {
                if *train_encoder {
                    let obs: Vec<&[f64]> = states.iter().map(|s| &s.observation[..]).collect();
                    let logits = encoder.forward(&Tensor::from_rows(&obs)?)?;
                    let rows = Self::head_rows(&logits, &states)?;
                    probs_for_backward = Some(rows.clone());
                    head.forward(&rows)?
                } else {
                    probs_for_backward = None;
                    head.forward(&Self::stack(&states)?)?
                }
            }
        };

        let mut loss = 0.0;
        let mut grad = vec![0.0; n * ACTION_COUNT];
        for (i, t) in batch.iter().enumerate() {
            if t.action >= ACTION_COUNT {
                return Err(Error::invalid(format!("action {} out of range", t.action)));
            }
            let diff = q.row(i)[t.action] - targets[i];
            loss += diff * diff;
            grad[i * ACTION_COUNT + t.action] = 2.0 * diff / n as f64;
        }
        loss /= n as f64;
        let grad = Tensor::new(vec![n, ACTION_COUNT], grad)?;

        let grads = match self {
            QFunction::Plain(net) => QGrads {
                head: net.backward_with(&grad, false)?,
                encoder: None,
            },
            QFunction::Encoded { encoder, head, .. } => match probs_for_backward {
                None => QGrads {
                    head: head.backward_with(&grad, false)?,
                    encoder: None,
                },
                Some(rows) => {
                    let mut hg = head.backward_with(&grad, true)?;
                    let din = hg.input.take().expect("input gradient requested");
                    let k = encoder.output_dim();
                    let mut dlogits = vec![0.0; n * k];
                    for i in 0..n {
                        let p = &rows.row(i)[..k];
                        let g = &din.row(i)[..k];
                        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            dlogits[i * k + j] = p[j] * (g[j] - dot);
                        }
                    }
                    let eg = encoder.backward_with(&Tensor::new(vec![n, k], dlogits)?, false)?;
                    QGrads {
                        head: hg,
                        encoder: Some(eg),
                    }
                }
            },
        };
        Ok((loss, grads))
    }

    /// Bellman targets for `batch` under the current parameters.
    pub fn targets(&self, batch: &[Transition], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let live: Vec<&EncodedState> = batch.iter().filter(|t| !t.terminal).map(|t| &t.next_state).collect();
        let next = if live.is_empty() || gamma == 0.0 {
            None
        } else {
            Some(self.q_batch(&live)?)
        };
        let mut row = 0;
        Ok(batch
            .iter()
            .map(|t| {
                if t.terminal {
                    t.reward
                } else {
                    let m = next.as_ref().map(|q| max(q.row(row))).unwrap_or(0.0);
                    row += 1;
                    t.reward + gamma * m
                }
            })
            .collect())
    }

    /// One gradient step on the TD loss; returns the loss before the step.
    pub fn td_update(&mut self, batch: &[Transition], opt: &mut QOptimizer, gamma: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("TD minibatch must not be empty"));
        }
        let targets = self.targets(batch, gamma)?;
        let (loss, grads) = self.loss_and_grad(batch, &targets)?;
        match self {
            QFunction::Plain(net) => apply_update(net, &grads.head, &mut opt.head)?,
            QFunction::Encoded { encoder, head, .. } => {
                apply_update(head, &grads.head, &mut opt.head)?;
                if let (Some(g), Some(o)) = (&grads.encoder, opt.encoder.as_mut()) {
                    apply_update(encoder, g, o)?;
                }
            }
        }
        Ok(loss)
    }

    fn nets(&self) -> (&DenseNet, Option<&DenseNet>) {
        match self {
            QFunction::Plain(net) => (net, None),
            QFunction::Encoded {
                encoder,
                head,
                train_encoder,
            } => (head, train_encoder.then_some(encoder)),
        }
    }

    fn nets_mut(&mut self) -> (&mut DenseNet, Option<&mut DenseNet>) {
        match self {
            QFunction::Plain(net) => (net, None),
            QFunction::Encoded {
                encoder,
                head,
                train_encoder,
            } => (head, train_encoder.then_some(encoder)),
        }
    }

    /// The network producing the 8 action values.
    pub fn head(&self) -> &DenseNet {
        self.nets().0
    }

    pub fn head_mut(&mut self) -> &mut DenseNet {
        self.nets_mut().0
    }
}

impl ParamSet for QFunction {
    fn param_count(&self) -> usize {
        let (h, e) = self.nets();
        h.param_count() + e.map_or(0, DenseNet::param_count)
    }

    fn param(&self, index: usize) -> f64 {
        let (h, e) = self.nets();
        if index < h.param_count() {
            h.param(index)
        } else {
            e.expect("index in range").param(index - h.param_count())
        }
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (h, e) = self.nets_mut();
        let n = h.param_count();
        if index < n {
            h.set_param(index, value)
        } else {
            e.expect("index in range").set_param(index - n, value)
        }
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

/// Epsilon-greedy: a uniform random action with probability `epsilon`,
/// otherwise the greedy one (lowest index on ties).
pub fn select_action(q: &QFunction, state: &EncodedState, epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if epsilon > 0.0 && rng.uniform() < epsilon {
        return Ok(rng.below(ACTION_COUNT));
    }
    Ok(argmax(&q.q_values(state)?))
}

/// `r` for terminal transitions, else `r + gamma * max_a Q(s', a)`.
pub fn q_target(reward: f64, next_state: &EncodedState, terminal: bool, q: &QFunction, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if terminal || gamma == 0.0 {
        return Ok(reward);
    }
    Ok(reward + gamma * max(&q.q_values(next_state)?))
}
