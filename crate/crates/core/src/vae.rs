//! Semi-supervised variational autoencoder (the M2 generative model).
//!
//! Three networks make up the model:
//!
//! * `encoder_y`: `x -> logits`, giving `q(y|x) = Cat(softmax(logits))`;
//! * `encoder_z`: `(x, onehot(y)) -> (mu, v)` with `sigma = softplus(v) + 1e-6`;
//! * `decoder`:   `(onehot(y), z) -> parameters of p(x|y,z)`.
//!
//! The decoder output is read per coordinate: continuous features get a
//! unit-variance Gaussian with the output as its mean, binary features a
//! Bernoulli with the output as its logit. The class prior is uniform and
//! `p(z) = N(0, I)`.
//!
//! Losses are the negated bounds: `labeled(x, y)` is reconstruction NLL plus
//! `KL(q(z|x,y) || p(z))` plus `log K`; `unlabeled(x)` marginalizes the class
//! exactly, `sum_y q(y|x) labeled(x, y) - H(q(y|x))`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::CoordKind;
use crate::nn::{
    apply_update, sigmoid, snapshot, softmax_in_place, softplus, Activation, DenseNet, OptimizerKind,
    OptimizerState, ParamGrads, ParamSet, Tensor,
};
use crate::rng::SeededRng;

/// Lower bound on the encoder standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    /// Hidden layer widths shared by all three networks (ReLU).
    pub hidden: Vec<usize>,
    pub alpha: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: vec![64],
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboReport {
    pub labeled_bound: f64,
    pub unlabeled_bound: f64,
    pub classification_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads {
    pub encoder_y: ParamGrads,
    pub encoder_z: ParamGrads,
    pub decoder: ParamGrads,
}

impl VaeGrads {
    fn zeros_like(m: &VaeModel) -> Self {
        Self {
            encoder_y: ParamGrads::zeros_like(&m.encoder_y),
            encoder_z: ParamGrads::zeros_like(&m.encoder_z),
            decoder: ParamGrads::zeros_like(&m.decoder),
        }
    }

    /// Flat, in [`ParamSet`] order of [`VaeModel`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder_y.flatten();
        v.extend(self.encoder_z.flatten());
        v.extend(self.decoder.flatten());
        v
    }
}

/// One Adam/SGD state per sub-network.
#[derive(Debug, Clone)]
pub struct VaeOptimizer {
    pub encoder_y: OptimizerState,
    pub encoder_z: OptimizerState,
    pub decoder: OptimizerState,
}

impl VaeOptimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &VaeModel) -> Result<Self> {
        Ok(Self {
            encoder_y: OptimizerState::new(kind, learning_rate, &model.encoder_y)?,
            encoder_z: OptimizerState::new(kind, learning_rate, &model.encoder_z)?,
            decoder: OptimizerState::new(kind, learning_rate, &model.decoder)?,
        })
    }
}

pub struct LabeledPoint<'a> {
    pub x: &'a [f64],
    pub y: usize,
    pub noise: &'a [f64],
}

pub struct UnlabeledPoint<'a> {
    pub x: &'a [f64],
    pub noise: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder_y: DenseNet,
    pub encoder_z: DenseNet,
    pub decoder: DenseNet,
    coord_kinds: Vec<CoordKind>,
    latent_dim: usize,
    class_count: usize,
    alpha: f64,
}

/// `z = mu + sigma * noise`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I))`.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| {
            let s2 = s * s;
            m * m + s2 - 1.0 - s2.ln()
        })
        .sum::<f64>()
}

/// Categorical entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Negative log-likelihood of `x` under decoder output `out`.
pub fn reconstruction_nll(kinds: &[CoordKind], x: &[f64], out: &[f64]) -> f64 {
    kinds
        .iter()
        .zip(x)
        .zip(out)
        .map(|((k, &xi), &o)| match k {
            CoordKind::Continuous => 0.5 * (xi - o) * (xi - o) + HALF_LN_2PI,
            CoordKind::Binary => softplus(o) - xi * o,
        })
        .sum()
}

fn reconstruction_grad(kinds: &[CoordKind], x: &[f64], out: &[f64], scale: f64, dst: &mut [f64]) {
    for (((d, k), &xi), &o) in dst.iter_mut().zip(kinds).zip(x).zip(out) {
        *d = scale
            * match k {
                CoordKind::Continuous => o - xi,
                CoordKind::Binary => sigmoid(o) - xi,
            };
    }
}

/// The unsupervised latent-feature model's (M1) loss for one point: negated
/// `E_q[log p(x|z)] - KL(q(z|x) || p(z))` with a single reparameterized
/// sample. `encoder` maps `x -> (mu, v)` and `decoder` maps `z -> x`.
pub fn m1_loss(encoder: &DenseNet, decoder: &DenseNet, kinds: &[CoordKind], x: &[f64], noise: &[f64]) -> Result<f64> {
    let d = noise.len();
    if encoder.output_dim() != 2 * d || decoder.input_dim() != d {
        return Err(Error::invalid("M1 networks do not match the latent dimension"));
    }
    if decoder.output_dim() != x.len() || kinds.len() != x.len() {
        return Err(Error::invalid("M1 decoder output does not match the input"));
    }
    let enc = encoder.predict_row(x)?;
    let (mu, sigma) = split_gaussian(&enc, d);
    let z = reparameterize(&mu, &sigma, noise);
    let out = decoder.predict_row(&z)?;
    Ok(reconstruction_nll(kinds, x, &out) + kl_gaussian(&mu, &sigma))
}

fn split_gaussian(enc: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = enc[..d].to_vec();
    let sigma = enc[d..2 * d].iter().map(|&v| softplus(v) + SIGMA_FLOOR).collect();
    (mu, sigma)
}

fn one_hot(k: usize, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i == k { 1.0 } else { 0.0 })
}

fn hidden_spec(hidden: &[usize], out: usize) -> Vec<(usize, Activation)> {
    hidden
        .iter()
        .map(|&h| (h, Activation::Relu))
        .chain(std::iter::once((out, Activation::Identity)))
        .collect()
}

/// Intermediate values of a batched `labeled` evaluation.
struct LabeledPass {
    losses: Vec<f64>,
    mu: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    dec_out: Tensor,
}

impl VaeModel {
    pub fn new(coord_kinds: Vec<CoordKind>, class_count: usize, config: &VaeConfig, rng: &mut SeededRng) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class_count must be at least 1"));
        }
        if config.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        if !(config.alpha >= 0.0 && config.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        let x_dim = coord_kinds.len();
        let d = config.latent_dim;
        let encoder_y = DenseNet::new(x_dim, &hidden_spec(&config.hidden, class_count), rng)?;
        let encoder_z = DenseNet::new(x_dim + class_count, &hidden_spec(&config.hidden, 2 * d), rng)?;
        let decoder = DenseNet::new(class_count + d, &hidden_spec(&config.hidden, x_dim), rng)?;
        Self::from_parts(encoder_y, encoder_z, decoder, coord_kinds, d, class_count, config.alpha)
    }

    pub fn from_parts(
        encoder_y: DenseNet,
        encoder_z: DenseNet,
        decoder: DenseNet,
        coord_kinds: Vec<CoordKind>,
        latent_dim: usize,
        class_count: usize,
        alpha: f64,
    ) -> Result<Self> {
        let x_dim = coord_kinds.len();
        let ok = latent_dim >= 1
            && class_count >= 1
            && encoder_y.input_dim() == x_dim
            && encoder_y.output_dim() == class_count
            && encoder_z.input_dim() == x_dim + class_count
            && encoder_z.output_dim() == 2 * latent_dim
            && decoder.input_dim() == class_count + latent_dim
            && decoder.output_dim() == x_dim;
        if !ok {
            return Err(Error::invalid("VAE sub-network dimensions are inconsistent"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        Ok(Self {
            encoder_y,
            encoder_z,
            decoder,
            coord_kinds,
            latent_dim,
            class_count,
            alpha,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.coord_kinds.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn coord_kinds(&self) -> &[CoordKind] {
        &self.coord_kinds
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "VAE expects {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: usize) -> Result<()> {
        if y >= self.class_count {
            return Err(Error::invalid(format!(
                "class {y} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    fn check_noise(&self, noise: &[f64]) -> Result<()> {
        if noise.len() != self.latent_dim {
            return Err(Error::invalid(format!(
                "noise has length {}, latent dimension is {}",
                noise.len(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    /// `q(y|x)`.
    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut p = self.encoder_y.predict_row(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Most probable class, lowest index on ties.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let p = self.classify(x)?;
        Ok(argmax(&p))
    }

    /// Mean and standard deviation of `q(z|x,y)`.
    pub fn encode_z(&self, x: &[f64], y: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_x(x)?;
        self.check_y(y)?;
        let input: Vec<f64> = x.iter().copied().chain(one_hot(y, self.class_count)).collect();
        let out = self.encoder_z.predict_row(&input)?;
        Ok(split_gaussian(&out, self.latent_dim))
    }

    fn encoder_z_input(&self, rows: &[(&[f64], usize)]) -> Result<Tensor> {
        let width = self.input_dim() + self.class_count;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &(x, y) in rows {
            data.extend_from_slice(x);
            data.extend(one_hot(y, self.class_count));
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    /// Evaluates `labeled(x, y)` for every row. Caches forward passes in the
    /// encoder/decoder when `train` is set.
    fn labeled_pass(&mut self, rows: &[(&[f64], usize)], noises: &[&[f64]], train: bool) -> Result<LabeledPass> {
        let d = self.latent_dim;
        let k = self.class_count;
        let enc_in = self.encoder_z_input(rows)?;
        let enc_out = if train {
            self.encoder_z.forward(&enc_in)?
        } else {
            self.encoder_z.predict(&enc_in)?
        };
        let mut mu = Vec::with_capacity(rows.len());
        let mut sigma = Vec::with_capacity(rows.len());
        let mut v = Vec::with_capacity(rows.len());
        let mut dec_in = Vec::with_capacity(rows.len() * (k + d));
        for (i, &(_, y)) in rows.iter().enumerate() {
            let e = enc_out.row(i);
            let (m, s) = split_gaussian(e, d);
            dec_in.extend(one_hot(y, k));
            dec_in.extend(reparameterize(&m, &s, noises[i]));
            v.push(e[d..2 * d].to_vec());
            mu.push(m);
            sigma.push(s);
        }
        let dec_in = Tensor::new(vec![rows.len(), k + d], dec_in)?;
        let dec_out = if train {
            self.decoder.forward(&dec_in)?
        } else {
            self.decoder.predict(&dec_in)?
        };
        let log_k = (k as f64).ln();
        let losses = rows
            .iter()
            .enumerate()
            .map(|(i, &(x, _))| {
                reconstruction_nll(&self.coord_kinds, x, dec_out.row(i)) + kl_gaussian(&mu[i], &sigma[i]) + log_k
            })
            .collect();
        Ok(LabeledPass {
            losses,
            mu,
            sigma,
            v,
            dec_out,
        })
    }

    /// Back-propagates `sum_i weights[i] * labeled_i` from a cached
    /// [`LabeledPass`] into `grads`.
    fn labeled_backward(
        &mut self,
        rows: &[(&[f64], usize)],
        noises: &[&[f64]],
        pass: &LabeledPass,
        weights: &[f64],
        grads: &mut VaeGrads,
    ) -> Result<()> {
        let d = self.latent_dim;
        let k = self.class_count;
        let x_dim = self.input_dim();
        let mut dec_grad = vec![0.0; rows.len() * x_dim];
        for (i, &(x, _)) in rows.iter().enumerate() {
            reconstruction_grad(
                &self.coord_kinds,
                x,
                pass.dec_out.row(i),
                weights[i],
                &mut dec_grad[i * x_dim..(i + 1) * x_dim],
            );
        }
        let g = self
            .decoder
            .backward(&Tensor::new(vec![rows.len(), x_dim], dec_grad)?)?;
        let dz = g.input.as_ref().expect("input gradient requested");
        grads.decoder.add_assign(&g);

        let mut enc_grad = vec![0.0; rows.len() * 2 * d];
        for i in 0..rows.len() {
            let dzi = &dz.row(i)[k..k + d];
            let w = weights[i];
            let out = &mut enc_grad[i * 2 * d..(i + 1) * 2 * d];
            for j in 0..d {
                let (m, s, e) = (pass.mu[i][j], pass.sigma[i][j], noises[i][j]);
                // d/dmu: through z and the KL term; d/dsigma likewise, then
                // chained through sigma = softplus(v) + floor.
                out[j] = dzi[j] + w * m;
                let dsigma = dzi[j] * e + w * (s - 1.0 / s);
                out[d + j] = dsigma * sigmoid(pass.v[i][j]);
            }
        }
        let g = self
            .encoder_z
            .backward_with(&Tensor::new(vec![rows.len(), 2 * d], enc_grad)?, false)?;
        grads.encoder_z.add_assign(&g);
        Ok(())
    }

    /// `labeled(x, y)` for a single point.
    pub fn labeled_loss(&self, x: &[f64], y: usize, noise: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_y(y)?;
        self.check_noise(noise)?;
        let (mu, sigma) = self.encode_z(x, y)?;
        let z = reparameterize(&mu, &sigma, noise);
        let dec_in: Vec<f64> = one_hot(y, self.class_count).chain(z).collect();
        let out = self.decoder.predict_row(&dec_in)?;
        Ok(reconstruction_nll(&self.coord_kinds, x, &out) + kl_gaussian(&mu, &sigma) + (self.class_count as f64).ln())
    }

    /// `unlabeled(x)` by exact marginalization over classes, with one
    /// shared noise draw for every class.
    pub fn unlabeled_loss(&self, x: &[f64], noise: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_noise(noise)?;
        let q = self.classify(x)?;
        let rows: Vec<(&[f64], usize)> = (0..self.class_count).map(|y| (x, y)).collect();
        let noises = vec![noise; self.class_count];
        // labeled_pass needs &mut only for caching; evaluate on a clone-free path.
        let pass = self.eval_labeled(&rows, &noises)?;
        let expected: f64 = q.iter().zip(&pass).map(|(p, l)| p * l).sum();
        Ok(expected - entropy(&q))
    }

    fn eval_labeled(&self, rows: &[(&[f64], usize)], noises: &[&[f64]]) -> Result<Vec<f64>> {
        let d = self.latent_dim;
        let k = self.class_count;
        let enc_out = self.encoder_z.predict(&self.encoder_z_input(rows)?)?;
        let mut dec_in = Vec::with_capacity(rows.len() * (k + d));
        let mut kl = Vec::with_capacity(rows.len());
        for (i, &(_, y)) in rows.iter().enumerate() {
            let (m, s) = split_gaussian(enc_out.row(i), d);
            dec_in.extend(one_hot(y, k));
            dec_in.extend(reparameterize(&m, &s, noises[i]));
            kl.push(kl_gaussian(&m, &s));
        }
        let dec_out = self.decoder.predict(&Tensor::new(vec![rows.len(), k + d], dec_in)?)?;
        let log_k = (k as f64).ln();
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, &(x, _))| reconstruction_nll(&self.coord_kinds, x, dec_out.row(i)) + kl[i] + log_k)
            .collect())
    }

    /// `-log q(y|x)`.
    pub fn classification_loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_y(y)?;
        let mut logits = self.encoder_y.predict_row(x)?;
        Ok(-log_softmax_at(&mut logits, y))
    }

    /// Value and gradient of
    /// `J = sum labeled + sum unlabeled + alpha * sum -log q(y|x)`.
    pub fn objective_loss_and_grad(
        &mut self,
        labeled: &[LabeledPoint<'_>],
        unlabeled: &[UnlabeledPoint<'_>],
    ) -> Result<(ElboReport, VaeGrads)> {
        if labeled.is_empty() && unlabeled.is_empty() {
            return Err(Error::invalid("objective needs at least one labeled or unlabeled point"));
        }
        for p in labeled {
            self.check_x(p.x)?;
            self.check_y(p.y)?;
            self.check_noise(p.noise)?;
        }
        for p in unlabeled {
            self.check_x(p.x)?;
            self.check_noise(p.noise)?;
        }
        let k = self.class_count;
        let mut grads = VaeGrads::zeros_like(self);

        // Class posteriors for every point, labeled first.
        let xs: Vec<&[f64]> = labeled.iter().map(|p| p.x).chain(unlabeled.iter().map(|p| p.x)).collect();
        let logits = self.encoder_y.forward(&Tensor::from_rows(&xs)?)?;
        let mut q: Vec<Vec<f64>> = logits.rows().map(<[f64]>::to_vec).collect();
        q.iter_mut().for_each(|r| softmax_in_place(r));

        // encoder_z/decoder rows: one per labeled point, K per unlabeled point.
        let mut rows: Vec<(&[f64], usize)> = labeled.iter().map(|p| (p.x, p.y)).collect();
        let mut noises: Vec<&[f64]> = labeled.iter().map(|p| p.noise).collect();
        for p in unlabeled {
            rows.extend((0..k).map(|y| (p.x, y)));
            noises.extend(std::iter::repeat(p.noise).take(k));
        }
        let pass = self.labeled_pass(&rows, &noises, true)?;

        let n_l = labeled.len();
        let mut weights = vec![1.0; n_l];
        let mut logit_grad = vec![0.0; xs.len() * k];
        let mut report = ElboReport::default();

        for (i, p) in labeled.iter().enumerate() {
            report.labeled_bound += pass.losses[i];
            let qi = &q[i];
            report.classification_loss += -qi[p.y].max(f64::MIN_POSITIVE).ln();
            for j in 0..k {
                let target = if j == p.y { 1.0 } else { 0.0 };
                logit_grad[i * k + j] = self.alpha * (qi[j] - target);
            }
        }
        for u in 0..unlabeled.len() {
            let qi = &q[n_l + u];
            let ls = &pass.losses[n_l + u * k..n_l + (u + 1) * k];
            let expected: f64 = qi.iter().zip(ls).map(|(a, b)| a * b).sum();
            report.unlabeled_bound += expected - entropy(qi);
            // dU/dq_j = L_j + log q_j + 1, then through the softmax.
            let g: Vec<f64> = qi
                .iter()
                .zip(ls)
                .map(|(&p, &l)| l + p.max(f64::MIN_POSITIVE).ln() + 1.0)
                .collect();
            let mean: f64 = qi.iter().zip(&g).map(|(a, b)| a * b).sum();
            for j in 0..k {
                logit_grad[(n_l + u) * k + j] = qi[j] * (g[j] - mean);
            }
            weights.extend_from_slice(qi);
        }
        report.total = report.labeled_bound + report.unlabeled_bound + self.alpha * report.classification_loss;

        self.labeled_backward(&rows, &noises, &pass, &weights, &mut grads)?;
        let g = self
            .encoder_y
            .backward_with(&Tensor::new(vec![xs.len(), k], logit_grad)?, false)?;
        grads.encoder_y.add_assign(&g);
        Ok((report, grads))
    }

    /// One optimizer step on the minibatch objective.
    pub fn objective_step(
        &mut self,
        labeled: &[LabeledPoint<'_>],
        unlabeled: &[UnlabeledPoint<'_>],
        opt: &mut VaeOptimizer,
    ) -> Result<ElboReport> {
        let (report, grads) = self.objective_loss_and_grad(labeled, unlabeled)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                context: "VAE objective".into(),
                index: 0,
            });
        }
        apply_update(&mut self.encoder_y, &grads.encoder_y, &mut opt.encoder_y)?;
        apply_update(&mut self.encoder_z, &grads.encoder_z, &mut opt.encoder_z)?;
        apply_update(&mut self.decoder, &grads.decoder, &mut opt.decoder)?;
        Ok(report)
    }

    /// Writes `vae.hdr` plus one snapshot per sub-network into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = VaeHeader {
            class_count: self.class_count,
            latent_dim: self.latent_dim,
            alpha: self.alpha,
            coord_kinds: self.coord_kinds.clone(),
        };
        let p = dir.join("vae.hdr");
        fs::write(&p, header.encode()).map_err(|e| Error::io(&p, e))?;
        snapshot::save(&self.encoder_y, dir.join("encoder_y.bdrl"))?;
        snapshot::save(&self.encoder_z, dir.join("encoder_z.bdrl"))?;
        snapshot::save(&self.decoder, dir.join("decoder.bdrl"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("vae.hdr");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let h = VaeHeader::parse(&text)?;
        Self::from_parts(
            snapshot::load(dir.join("encoder_y.bdrl"))?,
            snapshot::load(dir.join("encoder_z.bdrl"))?,
            snapshot::load(dir.join("decoder.bdrl"))?,
            h.coord_kinds,
            h.latent_dim,
            h.class_count,
            h.alpha,
        )
    }
}

fn log_softmax_at(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[y] - lse
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ParamSet for VaeModel {
    fn param_count(&self) -> usize {
        self.encoder_y.param_count() + self.encoder_z.param_count() + self.decoder.param_count()
    }

    fn param(&self, index: usize) -> f64 {
        let (a, b) = (self.encoder_y.param_count(), self.encoder_z.param_count());
        if index < a {
            self.encoder_y.param(index)
        } else if index < a + b {
            self.encoder_z.param(index - a)
        } else {
            self.decoder.param(index - a - b)
        }
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (a, b) = (self.encoder_y.param_count(), self.encoder_z.param_count());
        if index < a {
            self.encoder_y.set_param(index, value)
        } else if index < a + b {
            self.encoder_z.set_param(index - a, value)
        } else {
            self.decoder.set_param(index - a - b, value)
        }
    }
}

/// Checkpoint header: flat `key = value` lines.
///
/// ```text
/// class_count = 64
/// latent_dim = 8
/// alpha = 0.1
/// coord_kinds = cccc...bbbb
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct VaeHeader {
    pub class_count: usize,
    pub latent_dim: usize,
    pub alpha: f64,
    pub coord_kinds: Vec<CoordKind>,
}

impl VaeHeader {
    pub fn encode(&self) -> String {
        let kinds: String = self
            .coord_kinds
            .iter()
            .map(|k| match k {
                CoordKind::Continuous => 'c',
                CoordKind::Binary => 'b',
            })
            .collect();
        format!(
            "class_count = {}\nlatent_dim = {}\nalpha = {}\ncoord_kinds = {}\n",
            self.class_count, self.latent_dim, self.alpha, kinds
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut class_count = None;
        let mut latent_dim = None;
        let mut alpha = None;
        let mut coord_kinds = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::Parse { line: i + 1, message: m };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "class_count" => class_count = Some(value.parse::<usize>().map_err(|e| err(e.to_string()))?),
                "latent_dim" => latent_dim = Some(value.parse::<usize>().map_err(|e| err(e.to_string()))?),
                "alpha" => alpha = Some(value.parse::<f64>().map_err(|e| err(e.to_string()))?),
                "coord_kinds" => {
                    coord_kinds = Some(
                        value
                            .chars()
                            .map(|c| match c {
                                'c' => Ok(CoordKind::Continuous),
                                'b' => Ok(CoordKind::Binary),
                                other => Err(err(format!("unknown coordinate kind `{other}`"))),
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            message: format!("missing key `{k}`"),
        };
        let h = Self {
            class_count: class_count.ok_or_else(|| missing("class_count"))?,
            latent_dim: latent_dim.ok_or_else(|| missing("latent_dim"))?,
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            coord_kinds: coord_kinds.ok_or_else(|| missing("coord_kinds"))?,
        };
        if h.class_count == 0 || h.latent_dim == 0 || h.coord_kinds.is_empty() || !(h.alpha >= 0.0 && h.alpha.is_finite())
        {
            return Err(Error::Parse {
                line: 0,
                message: "header values out of range".into(),
            });
        }
        Ok(h)
    }
}

/// Minibatch training loop for the VAE over fixed labeled/unlabeled pools.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl VaeTrainer {
    /// Runs `epochs` passes; each step mixes labeled and unlabeled points in
    /// proportion to the pool sizes. Returns the per-epoch summed report.
    pub fn train(
        &self,
        model: &mut VaeModel,
        labeled: &[(Vec<f64>, usize)],
        unlabeled: &[Vec<f64>],
        rng: &mut SeededRng,
    ) -> Result<Vec<ElboReport>> {
        if labeled.is_empty() && unlabeled.is_empty() {
            return Err(Error::invalid("VAE training needs data"));
        }
        let batch = self.batch_size.max(1);
        let total = labeled.len() + unlabeled.len();
        let steps = total.div_ceil(batch);
        let mut opt = VaeOptimizer::new(OptimizerKind::Adam, self.learning_rate, model)?;
        let d = model.latent_dim();
        let mut history = Vec::with_capacity(self.epochs);
        let mut li: Vec<usize> = (0..labeled.len()).collect();
        let mut ui: Vec<usize> = (0..unlabeled.len()).collect();
        for _ in 0..self.epochs {
            shuffle(&mut li, rng);
            shuffle(&mut ui, rng);
            let mut epoch = ElboReport::default();
            for s in 0..steps {
                let lab = chunk(&li, s, steps);
                let unl = chunk(&ui, s, steps);
                if lab.is_empty() && unl.is_empty() {
                    continue;
                }
                let ln: Vec<Vec<f64>> = lab.iter().map(|_| rng.normal_vec(d)).collect();
                let un: Vec<Vec<f64>> = unl.iter().map(|_| rng.normal_vec(d)).collect();
                let lp: Vec<LabeledPoint<'_>> = lab
                    .iter()
                    .zip(&ln)
                    .map(|(&i, n)| LabeledPoint {
                        x: &labeled[i].0,
                        y: labeled[i].1,
                        noise: n,
                    })
                    .collect();
                let up: Vec<UnlabeledPoint<'_>> = unl
                    .iter()
                    .zip(&un)
                    .map(|(&i, n)| UnlabeledPoint {
                        x: &unlabeled[i],
                        noise: n,
                    })
                    .collect();
                let r = model.objective_step(&lp, &up, &mut opt)?;
                epoch.labeled_bound += r.labeled_bound;
                epoch.unlabeled_bound += r.unlabeled_bound;
                epoch.classification_loss += r.classification_loss;
                epoch.total += r.total;
            }
            history.push(epoch);
        }
        Ok(history)
    }
}

/// `s`-th of `steps` near-equal contiguous slices of `items`.
fn chunk(items: &[usize], s: usize, steps: usize) -> &[usize] {
    let lo = items.len() * s / steps;
    let hi = items.len() * (s + 1) / steps;
    &items[lo..hi]
}

/// Fisher-Yates on the crate RNG.
pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}
