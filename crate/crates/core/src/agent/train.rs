use std::cell::Cell as Counter;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use super::qfunc::{select_action, QFunction, QOptimizer};
use super::replay::{EncodedState, ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
use crate::environment::{Cell, FingerprintSample, GridWorld, BUNDLE_SIZE};
use crate::error::{Error, Result};
use crate::features::{mean_vector, FeatureVector, Featurizer};
use crate::nn::OptimizerKind;
use crate::rng::SeededRng;
use crate::vae::{shuffle, VaeConfig, VaeModel, VaeTrainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Supervised,
    SemiSupervised,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Supervised, Mode::SemiSupervised];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::SemiSupervised => "semi_supervised",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "semi_supervised" | "semi-supervised" | "semi" => Ok(Mode::SemiSupervised),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Passes over the training samples; one episode per sample per epoch.
    pub epochs: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the epochs over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    /// Minimum replay size before TD updates start.
    pub warmup: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    /// Hidden widths of the plain Q network.
    pub q_hidden: Vec<usize>,
    /// Hidden widths of the head stacked on the VAE encoder.
    pub head_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    /// Weight of the classification term; `None` means `0.1 * labeled count`.
    pub vae_alpha: Option<f64>,
    pub vae_epochs: usize,
    pub vae_batch_size: usize,
    pub vae_learning_rate: f64,
    pub unfreeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Supervised,
            epochs: 200,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_fraction: 0.5,
            batch_size: 32,
            warmup: 32,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            learning_rate: 1e-3,
            q_hidden: vec![64, 32],
            head_hidden: vec![32],
            latent_dim: 8,
            vae_hidden: vec![64],
            vae_alpha: None,
            vae_epochs: 30,
            vae_batch_size: 32,
            vae_learning_rate: 3e-3,
            unfreeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return Err(Error::invalid("epsilon_decay_fraction must lie in (0, 1]"));
        }
        if let Some(a) = self.vae_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("vae_alpha must be non-negative, got {a}")));
            }
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.vae_batch_size == 0 {
            return Err(Error::invalid("batch sizes and replay capacity must be positive"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("vae_learning_rate", self.vae_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of the epochs, flat afterwards.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        let span = self.epsilon_decay_fraction * self.epochs as f64;
        let t = if span <= 0.0 { 1.0 } else { (epoch as f64 / span).min(1.0) };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// Per-sample data prepared once: featurized observations and the Q input
/// encoding of those observations.
#[derive(Debug, Clone)]
pub struct Episode {
    pub observations: Arc<[FeatureVector; BUNDLE_SIZE]>,
    pub encoding: Arc<[f64]>,
    pub target: Option<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub final_reward: f64,
    pub start_distance: f64,
    pub final_distance: f64,
    /// Mean over every visited position, the start included.
    pub mean_distance: f64,
    pub steps: usize,
}

/// Everything that learns during the DQN loop.
#[derive(Debug, Clone)]
pub struct Learner {
    pub q: QFunction,
    pub opt: QOptimizer,
    pub replay: ReplayBuffer,
    pub gamma: f64,
    pub batch_size: usize,
    pub warmup: usize,
    pub updates: usize,
}

impl Learner {
    pub fn new(q: QFunction, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            opt: QOptimizer::new(OptimizerKind::Adam, config.learning_rate, &q)?,
            q,
            replay: ReplayBuffer::new(config.replay_capacity)?,
            gamma: config.gamma,
            batch_size: config.batch_size,
            warmup: config.warmup,
            updates: 0,
        })
    }
}

pub fn normalized_position(world: &GridWorld, cell: Cell) -> [f64; 2] {
    let scale = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
    [scale(cell.row, world.rows), scale(cell.col, world.cols)]
}

/// Cell of `argmax_y q(y | mean observation)`.
pub fn infer_label(vae: Option<&VaeModel>, world: &GridWorld, observations: &[FeatureVector]) -> Result<Cell> {
    let vae = vae.ok_or_else(|| Error::state("label inference needs a VAE (semi-supervised mode)"))?;
    if vae.class_count() != world.cell_count() {
        return Err(Error::invalid("VAE class count differs from the grid's cell count"));
    }
    let mean = mean_vector(observations)?;
    Ok(world.cell_of(vae.predict_class(&mean)?))
}

/// One episode. With a learner the agent explores with `epsilon`, stores
/// every transition and trains after each step; without one it acts
/// greedily and nothing is updated.
///
/// Unlabeled episodes are rewarded (and terminated) against the cell
/// inferred by the VAE; their distances are measured against that cell.
pub fn run_episode(
    world: &GridWorld,
    episode: &Episode,
    q: Option<&QFunction>,
    vae: Option<&VaeModel>,
    learner: Option<&mut Learner>,
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<EpisodeStats> {
    let inferred = match episode.target {
        Some(_) => None,
        None => Some(infer_label(vae, world, &episode.observations[..])?),
    };
    let goal = episode.target.or(inferred).expect("target or inferred cell");
    let mut state = world.reset_with(Arc::clone(&episode.observations), episode.target, rng)?;
    let start = world.distance(state.position, goal);
    if world.horizon == 0 {
        return Ok(EpisodeStats::default());
    }
    let mut stats = EpisodeStats {
        start_distance: start,
        final_distance: start,
        mean_distance: start,
        ..Default::default()
    };
    if state.position == goal {
        let r = world.reward(state.position, goal);
        stats.total_reward = r;
        stats.final_reward = r;
        return Ok(stats);
    }
    let mut learner = learner;
    let mut distance_sum = start;
    let mut current = EncodedState::new(Arc::clone(&episode.encoding), normalized_position(world, state.position));
    while !state.terminal {
        let action = {
            let q = match (&learner, q) {
                (Some(l), _) => &l.q,
                (None, Some(q)) => q,
                (None, None) => return Err(Error::invalid("run_episode needs a Q-function or a learner")),
            };
            select_action(q, &current, epsilon, rng)?
        };
        let res = world.step(&state, action, inferred)?;
        let next = EncodedState::new(
            Arc::clone(&episode.encoding),
            normalized_position(world, res.next_state.position),
        );
        if let Some(l) = learner.as_deref_mut() {
            l.replay.push(Transition {
                state: current,
                action,
                reward: res.reward,
                next_state: next.clone(),
                terminal: res.terminal,
            })?;
            if l.replay.len() >= l.warmup.max(1) {
                let batch = l.replay.sample(l.batch_size, rng)?;
                l.q.td_update(&batch, &mut l.opt, l.gamma)?;
                l.updates += 1;
            }
        }
        current = next;
        state = res.next_state;
        let d = world.distance(state.position, goal);
        stats.total_reward += res.reward;
        stats.final_reward = res.reward;
        stats.final_distance = d;
        stats.steps += 1;
        distance_sum += d;
    }
    stats.mean_distance = distance_sum / (stats.steps + 1) as f64;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub mode: Mode,
    /// Mean reward of the last step of each episode.
    pub mean_reward: f64,
    /// Mean final distance to the true label over labeled episodes.
    pub mean_distance_m: f64,
    /// Mean final distance to the inferred cell over unlabeled episodes.
    pub pseudo_distance_m: Option<f64>,
    pub epsilon: f64,
    pub labeled_fraction: f64,
    pub episodes: usize,
}

pub const METRICS_HEADER: &str = "epoch,mode,mean_reward,mean_distance_m,epsilon,labeled_fraction";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.mode, self.mean_reward, self.mean_distance_m, self.epsilon, self.labeled_fraction
        )
    }
}

/// Metrics CSV writer, flushed after every row.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}").map_err(|e| Error::io("<metrics>", e))?;
        out.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(Self { out })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_row()).map_err(|e| Error::io("<metrics>", e))?;
        self.out.flush().map_err(|e| Error::io("<metrics>", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Training samples behind read counters, so tests can check which pool a
/// training loop touched.
pub struct SampleSet<'a> {
    samples: &'a [FingerprintSample],
    labeled_reads: Counter<usize>,
    unlabeled_reads: Counter<usize>,
}

impl<'a> SampleSet<'a> {
    pub fn new(samples: &'a [FingerprintSample]) -> Self {
        Self {
            samples,
            labeled_reads: Counter::new(0),
            unlabeled_reads: Counter::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Label metadata only; not counted as a read.
    pub fn is_labeled(&self, i: usize) -> bool {
        self.samples[i].is_labeled()
    }

    pub fn get(&self, i: usize) -> &'a FingerprintSample {
        let s = &self.samples[i];
        let c = if s.is_labeled() { &self.labeled_reads } else { &self.unlabeled_reads };
        c.set(c.get() + 1);
        s
    }

    pub fn labeled_reads(&self) -> usize {
        self.labeled_reads.get()
    }

    pub fn unlabeled_reads(&self) -> usize {
        self.unlabeled_reads.get()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub mode: Mode,
    pub q: QFunction,
    pub vae: Option<VaeModel>,
}

impl TrainedAgent {
    pub fn prepare(&self, featurizer: &Featurizer, sample: &FingerprintSample) -> Result<Episode> {
        prepare_episode(&self.q, featurizer, sample)
    }
}

fn featurize_bundle(featurizer: &Featurizer, sample: &FingerprintSample) -> Result<[FeatureVector; BUNDLE_SIZE]> {
    Ok([
        featurizer.featurize(&sample.readings[0])?,
        featurizer.featurize(&sample.readings[1])?,
        featurizer.featurize(&sample.readings[2])?,
    ])
}

fn prepare_episode(q: &QFunction, featurizer: &Featurizer, sample: &FingerprintSample) -> Result<Episode> {
    let obs = featurize_bundle(featurizer, sample)?;
    let encoding = q.encode_observation(&obs)?;
    Ok(Episode {
        observations: Arc::new(obs),
        encoding,
        target: sample.label,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: TrainedAgent,
    pub metrics: Vec<EpochMetrics>,
}

/// Full training run: optional VAE pretraining, then `epochs` passes of the
/// DQN loop. `on_epoch` sees the agent after every epoch (for checkpoint
/// evaluation) and may abort the run by returning an error.
pub fn train<F>(
    world: &GridWorld,
    featurizer: &Featurizer,
    samples: &SampleSet<'_>,
    config: &TrainConfig,
    rng: &SeededRng,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics, &TrainedAgent) -> Result<()>,
{
    config.validate()?;
    world.validate()?;
    let indices: Vec<usize> = match config.mode {
        Mode::Supervised => (0..samples.len()).filter(|&i| samples.is_labeled(i)).collect(),
        Mode::SemiSupervised => (0..samples.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::invalid(match config.mode {
            Mode::Supervised => "supervised training needs labeled samples",
            Mode::SemiSupervised => "no training samples",
        }));
    }

    let vae = match config.mode {
        Mode::Supervised => None,
        Mode::SemiSupervised => {
            let mut labeled = Vec::new();
            let mut unlabeled = Vec::new();
            for &i in &indices {
                let s = samples.get(i);
                let mean = mean_vector(&featurize_bundle(featurizer, s)?)?;
                match s.label {
                    Some(cell) => {
                        if !world.contains(cell) {
                            return Err(Error::invalid(format!("label {cell} is outside the grid")));
                        }
                        labeled.push((mean, world.class_of(cell)))
                    }
                    None => unlabeled.push(mean),
                }
            }
            let kinds = featurizer.layout().coord_kinds();
            let vae_config = VaeConfig {
                latent_dim: config.latent_dim,
                hidden: config.vae_hidden.clone(),
                alpha: config.vae_alpha.unwrap_or(0.1 * labeled.len() as f64),
            };
            let mut vae = VaeModel::new(kinds, world.cell_count(), &vae_config, &mut rng.fork(1))?;
            VaeTrainer {
                epochs: config.vae_epochs,
                batch_size: config.vae_batch_size,
                learning_rate: config.vae_learning_rate,
            }
            .train(&mut vae, &labeled, &unlabeled, &mut rng.fork(2))?;
            Some(vae)
        }
    };

    let q = match &vae {
        None => QFunction::plain(featurizer.dim(), &config.q_hidden, &mut rng.fork(3))?,
        Some(v) => QFunction::from_vae(v, &config.head_hidden, config.unfreeze_encoder, &mut rng.fork(3))?,
    };
    let episodes: Vec<Episode> = indices
        .iter()
        .map(|&i| prepare_episode(&q, featurizer, samples.get(i)))
        .collect::<Result<_>>()?;

    let mut learner = Learner::new(q, config)?;
    let mut episode_rng = rng.fork(4);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut agent = TrainedAgent {
        mode: config.mode,
        q: learner.q.clone(),
        vae,
    };
    for epoch in 0..config.epochs {
        let epsilon = config.epsilon(epoch);
        shuffle(&mut order, &mut episode_rng);
        let mut reward_sum = 0.0;
        let mut labeled_dist = (0.0, 0usize);
        let mut pseudo_dist = (0.0, 0usize);
        for &i in &order {
            let ep = &episodes[i];
            let stats = run_episode(
                world,
                ep,
                None,
                agent.vae.as_ref(),
                Some(&mut learner),
                epsilon,
                &mut episode_rng,
            )?;
            reward_sum += stats.final_reward;
            let acc = if ep.target.is_some() { &mut labeled_dist } else { &mut pseudo_dist };
            acc.0 += stats.final_distance;
            acc.1 += 1;
        }
        let n = order.len();
        let m = EpochMetrics {
            epoch: epoch + 1,
            mode: config.mode,
            mean_reward: reward_sum / n as f64,
            mean_distance_m: if labeled_dist.1 > 0 { labeled_dist.0 / labeled_dist.1 as f64 } else { 0.0 },
            pseudo_distance_m: (pseudo_dist.1 > 0).then(|| pseudo_dist.0 / pseudo_dist.1 as f64),
            epsilon,
            labeled_fraction: labeled_dist.1 as f64 / n as f64,
            episodes: n,
        };
        agent.q = learner.q.clone();
        on_epoch(&m, &agent)?;
        metrics.push(m);
    }
    agent.q = learner.q;
    Ok(TrainOutcome { agent, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalStats {
    pub mean_reward: f64,
    pub mean_distance_m: f64,
    pub start_distance_m: f64,
    pub end_distance_m: f64,
    pub episodes: usize,
}

/// Greedy rollouts on labeled samples, distances against the true labels.
/// Unlabeled samples are skipped.
pub fn evaluate(
    world: &GridWorld,
    featurizer: &Featurizer,
    agent: &TrainedAgent,
    samples: &[FingerprintSample],
    rng: &mut SeededRng,
) -> Result<EvalStats> {
    let mut out = EvalStats::default();
    for s in samples.iter().filter(|s| s.is_labeled()) {
        let ep = agent.prepare(featurizer, s)?;
        let st = run_episode(world, &ep, Some(&agent.q), agent.vae.as_ref(), None, 0.0, rng)?;
        out.mean_reward += st.final_reward;
        out.mean_distance_m += st.mean_distance;
        out.start_distance_m += st.start_distance;
        out.end_distance_m += st.final_distance;
        out.episodes += 1;
    }
    if out.episodes == 0 {
        return Err(Error::invalid("evaluation needs labeled samples"));
    }
    let n = out.episodes as f64;
    out.mean_reward /= n;
    out.mean_distance_m /= n;
    out.start_distance_m /= n;
    out.end_distance_m /= n;
    Ok(out)
}
