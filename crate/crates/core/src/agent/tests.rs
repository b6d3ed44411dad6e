use std::sync::Arc;

use super::*;
use crate::environment::{Cell, FingerprintSample, GridWorld};
use crate::features::{FeatureConfig, Featurizer};
use crate::rng::SeededRng;
use crate::vae::{VaeConfig, VaeModel};

fn noiseless(rows: usize, cols: usize) -> GridWorld {
    let mut w = GridWorld::new(rows, cols).unwrap();
    w.noise_sigma = 0.0;
    w
}

fn featurizer() -> Featurizer {
    Featurizer::new(FeatureConfig::default()).unwrap()
}

fn small_config(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig {
        mode,
        epochs,
        q_hidden: vec![16],
        head_hidden: vec![16],
        latent_dim: 2,
        vae_hidden: vec![16],
        vae_alpha: Some(1.0),
        vae_epochs: 2,
        ..TrainConfig::default()
    }
}

fn episode_for(q: &QFunction, f: &Featurizer, s: &FingerprintSample) -> Episode {
    let obs = [
        f.featurize(&s.readings[0]).unwrap(),
        f.featurize(&s.readings[1]).unwrap(),
        f.featurize(&s.readings[2]).unwrap(),
    ];
    Episode {
        encoding: q.encode_observation(&obs).unwrap(),
        observations: Arc::new(obs),
        target: s.label,
    }
}

#[test]
fn zero_horizon_episode_is_empty() {
    let mut w = noiseless(3, 3);
    w.horizon = 0;
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let cfg = small_config(Mode::Supervised, 1);
    let q = QFunction::plain(f.dim(), &cfg.q_hidden, &mut SeededRng::new(1)).unwrap();
    let ep = episode_for(&q, &f, &data[4]);
    let mut learner = Learner::new(q, &cfg).unwrap();
    let st = run_episode(&w, &ep, None, None, Some(&mut learner), 0.5, &mut SeededRng::new(2)).unwrap();
    assert_eq!(st, EpisodeStats::default());
    assert!(learner.replay.is_empty());
}

#[test]
fn start_on_target_is_immediately_terminal() {
    let w = noiseless(1, 1);
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let cfg = small_config(Mode::Supervised, 1);
    let q = QFunction::plain(f.dim(), &cfg.q_hidden, &mut SeededRng::new(1)).unwrap();
    let ep = episode_for(&q, &f, &data[0]);
    let mut learner = Learner::new(q, &cfg).unwrap();
    let st = run_episode(&w, &ep, None, None, Some(&mut learner), 0.5, &mut SeededRng::new(2)).unwrap();
    assert_eq!(st.steps, 0);
    assert!((st.final_reward - 1.0 / (w.cell_size / 2.0)).abs() < 1e-12);
    assert_eq!(st.final_distance, 0.0);
    assert!(learner.replay.is_empty());
}

#[test]
fn replay_grows_by_steps() {
    let w = noiseless(4, 4);
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let cfg = small_config(Mode::Supervised, 1);
    let q = QFunction::plain(f.dim(), &cfg.q_hidden, &mut SeededRng::new(1)).unwrap();
    let mut learner = Learner::new(q, &cfg).unwrap();
    let mut rng = SeededRng::new(3);
    for s in &data {
        let ep = episode_for(&learner.q, &f, s);
        let before = learner.replay.len();
        let st = run_episode(&w, &ep, None, None, Some(&mut learner), 1.0, &mut rng).unwrap();
        assert_eq!(learner.replay.len(), before + st.steps);
        assert!(st.steps <= w.horizon);
    }
}

#[test]
fn infer_label_requires_vae() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let obs = vec![f.featurize(&vec![-50.0; 13]).unwrap(); 3];
    assert!(matches!(infer_label(None, &w, &obs), Err(crate::Error::State(_))));
}

#[test]
fn uniform_classifier_infers_cell_zero() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let mut vae = VaeModel::new(f.layout().coord_kinds(), 9, &VaeConfig::default(), &mut SeededRng::new(0)).unwrap();
    let last = vae.encoder_y.layers_mut().last_mut().unwrap();
    last.weights.fill(0.0);
    last.bias.fill(0.0);
    let obs = vec![f.featurize(&vec![-70.0; 13]).unwrap(); 3];
    assert_eq!(infer_label(Some(&vae), &w, &obs).unwrap(), Cell::new(0, 0));
}

#[test]
fn vae_infers_noiseless_cells() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let cfg = TrainConfig {
        vae_epochs: 60,
        vae_learning_rate: 1e-2,
        vae_batch_size: 9,
        ..small_config(Mode::SemiSupervised, 0)
    };
    let set = SampleSet::new(&data);
    let out = train(&w, &f, &set, &cfg, &SeededRng::new(5), |_, _| Ok(())).unwrap();
    let vae = out.agent.vae.as_ref().unwrap();
    let mut hits = 0;
    for s in &data {
        let obs: Vec<_> = s.readings.iter().map(|r| f.featurize(r).unwrap()).collect();
        let c = infer_label(Some(vae), &w, &obs).unwrap();
        assert!(w.contains(c));
        hits += (Some(c) == s.label) as usize;
    }
    assert!(hits >= 8, "{hits}/9 cells inferred");
}

#[test]
fn zero_epochs_leave_q_untouched() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let cfg = small_config(Mode::Supervised, 0);
    let set = SampleSet::new(&data);
    let rng = SeededRng::new(8);
    let out = train(&w, &f, &set, &cfg, &rng, |_, _| Ok(())).unwrap();
    assert!(out.metrics.is_empty());
    let fresh = QFunction::plain(f.dim(), &cfg.q_hidden, &mut rng.fork(3)).unwrap();
    assert_eq!(out.agent.q, fresh);
}

#[test]
fn supervised_needs_labels_and_never_reads_unlabeled() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let mut rng = SeededRng::new(1);
    let unl = w.generate_dataset(0, 5, &mut rng).unwrap();
    let set = SampleSet::new(&unl);
    assert!(train(&w, &f, &set, &small_config(Mode::Supervised, 1), &rng, |_, _| Ok(())).is_err());

    let data = w.generate_dataset(1, 20, &mut rng).unwrap();
    let set = SampleSet::new(&data);
    let out = train(&w, &f, &set, &small_config(Mode::Supervised, 3), &rng, |_, _| Ok(())).unwrap();
    assert_eq!(set.unlabeled_reads(), 0);
    assert!(set.labeled_reads() > 0);
    assert!(out.metrics.iter().all(|m| m.labeled_fraction == 1.0 && m.episodes == 9));

    let set = SampleSet::new(&data);
    let out = train(&w, &f, &set, &small_config(Mode::SemiSupervised, 1), &rng, |_, _| Ok(())).unwrap();
    assert!(set.unlabeled_reads() > 0);
    assert_eq!(out.metrics[0].episodes, 29);
    assert!(out.metrics[0].pseudo_distance_m.is_some());
}

#[test]
fn training_is_deterministic() {
    let w = GridWorld::new(3, 3).unwrap();
    let f = featurizer();
    let data = w.generate_dataset(1, 6, &mut SeededRng::new(2)).unwrap();
    let run = |mode| {
        let set = SampleSet::new(&data);
        let mut buf = MetricsWriter::new(Vec::new()).unwrap();
        train(&w, &f, &set, &small_config(mode, 4), &SeededRng::new(11), |m, _| buf.write(m)).unwrap();
        String::from_utf8(buf.into_inner()).unwrap()
    };
    for mode in Mode::ALL {
        let a = run(mode);
        assert_eq!(a, run(mode));
        assert!(a.starts_with(METRICS_HEADER));
        assert_eq!(a.lines().count(), 5);
    }
}

#[test]
fn epsilon_schedule() {
    let cfg = small_config(Mode::Supervised, 100);
    assert_eq!(cfg.epsilon(0), 1.0);
    assert!((cfg.epsilon(25) - 0.55).abs() < 1e-12);
    assert!((cfg.epsilon(50) - 0.1).abs() < 1e-12);
    assert!((cfg.epsilon(99) - 0.1).abs() < 1e-12);
}

#[test]
fn supervised_converges_on_small_grid() {
    let w = noiseless(3, 3);
    let f = featurizer();
    let data = w.generate_dataset(1, 0, &mut SeededRng::new(1)).unwrap();
    let set = SampleSet::new(&data);
    let cfg = TrainConfig {
        q_hidden: vec![64, 32],
        ..small_config(Mode::Supervised, 200)
    };
    let out = train(&w, &f, &set, &cfg, &SeededRng::new(4), |_, _| Ok(())).unwrap();
    let stats = evaluate(&w, &f, &out.agent, &data, &mut SeededRng::new(9)).unwrap();
    assert!(
        stats.end_distance_m < stats.start_distance_m,
        "end {} start {}",
        stats.end_distance_m,
        stats.start_distance_m
    );
}

#[test]
fn mode_round_trip() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
    }
    assert!("other".parse::<Mode>().is_err());
}
