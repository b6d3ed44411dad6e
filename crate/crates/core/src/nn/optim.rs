use super::{DenseNet, ParamGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Per-network optimizer state. Adam moments are flat arrays in
/// [`DenseNet::params`] order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &DenseNet) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let n = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => net.param_count(),
        };
        Ok(Self {
            kind,
            learning_rate,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        })
    }

    pub fn sgd(learning_rate: f64, net: &DenseNet) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, net)
    }

    pub fn adam(learning_rate: f64, net: &DenseNet) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate, net)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one descent step. Rejects the whole update (leaving `net`
/// untouched) if any gradient is non-finite.
pub fn apply_update(net: &mut DenseNet, grads: &ParamGrads, opt: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers().len()
        || grads.layers.iter().zip(net.layers()).any(|(g, l)| {
            g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len()
        })
    {
        return Err(Error::invalid("gradients are not congruent with the network"));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient".into(),
            index,
        });
    }
    if opt.kind == OptimizerKind::Adam && opt.first_moment.len() != net.param_count() {
        return Err(Error::invalid("optimizer moments are not congruent with the network"));
    }

    opt.step += 1;
    let lr = opt.learning_rate;
    match opt.kind {
        OptimizerKind::Sgd => {
            for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                layer.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= lr * d);
                layer.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
            }
        }
        OptimizerKind::Adam => {
            let t = opt.step as f64;
            let c1 = 1.0 - ADAM_BETA1.powf(t);
            let c2 = 1.0 - ADAM_BETA2.powf(t);
            let mut idx = 0;
            for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
                for (p, &d) in params.zip(g.weights.iter().chain(&g.bias)) {
                    let m = &mut opt.first_moment[idx];
                    let v = &mut opt.second_moment[idx];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * d * d;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    idx += 1;
                }
            }
        }
    }
    Ok(())
}
