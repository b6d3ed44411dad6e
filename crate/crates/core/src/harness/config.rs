//! Flat `key = value` experiment configuration.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{Mode, TrainConfig};
use crate::environment::{default_beacons, load_beacons, GridWorld, DEFAULT_CELL_SIZE};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub noise_sigma: f64,
    pub pathloss_n: f64,
    pub offset_a: f64,
    pub hearing_radius: f64,
    pub delta: f64,
    pub horizon: usize,
    /// `None` uses the built-in 13-beacon layout.
    pub beacons: Option<PathBuf>,
    /// `None` generates a synthetic dataset per seed.
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub labeled_per_cell: usize,
    pub unlabeled: usize,
    pub test_per_cell: usize,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<usize>,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    /// The desk-scale benchmark: 8x8 grid, 2 labeled bundles per cell, 1000
    /// unlabeled bundles, one test bundle per cell, ten seeds.
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            cell_size: DEFAULT_CELL_SIZE,
            noise_sigma: 2.0,
            pathloss_n: 2.0,
            offset_a: -60.0,
            hearing_radius: 25.0,
            delta: 3.0,
            horizon: 10,
            beacons: None,
            dataset: None,
            test_dataset: None,
            labeled_per_cell: 2,
            unlabeled: 1000,
            test_per_cell: 1,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            modes: Mode::ALL.to_vec(),
            seeds: (0..10).collect(),
            checkpoints: vec![25, 50, 100, 150, 200],
            threads: 1,
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| bad(key, format!("`{value}`: {e}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("`{value}` is not a boolean"))),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or(value: &str, none: &str) -> Option<PathBuf> {
    (value != none && !value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>, none: &str) -> String {
    p.as_ref().map_or(none.to_string(), |p| p.display().to_string())
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one key. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let t = &mut self.train;
        let f = &mut self.features;
        match k {
            "rows" => self.rows = num(k, value)?,
            "cols" => self.cols = num(k, value)?,
            "cell_size" => self.cell_size = num(k, value)?,
            "noise_sigma" => self.noise_sigma = num(k, value)?,
            "pathloss_n" => self.pathloss_n = num(k, value)?,
            "offset_a" => self.offset_a = num(k, value)?,
            "hearing_radius" => self.hearing_radius = num(k, value)?,
            "delta" => self.delta = num(k, value)?,
            "horizon" => self.horizon = num(k, value)?,
            "beacons" => self.beacons = path_or(value, "default"),
            "dataset" => self.dataset = path_or(value, "synthetic"),
            "test_dataset" => self.test_dataset = path_or(value, "none"),
            "labeled_per_cell" => self.labeled_per_cell = num(k, value)?,
            "unlabeled" => self.unlabeled = num(k, value)?,
            "test_per_cell" => self.test_per_cell = num(k, value)?,
            "use_raw" => f.use_raw = boolean(k, value)?,
            "use_s1" => f.use_s1 = boolean(k, value)?,
            "use_s2" => f.use_s2 = boolean(k, value)?,
            "s1_ordered" => f.s1_ordered = boolean(k, value)?,
            "range_count" => f.range_count = num(k, value)?,
            "range_width" => f.range_width = if value == "auto" { None } else { Some(num(k, value)?) },
            "gamma" => t.gamma = num(k, value)?,
            "epsilon_start" => t.epsilon_start = num(k, value)?,
            "epsilon_end" => t.epsilon_end = num(k, value)?,
            "epsilon_decay_fraction" => t.epsilon_decay_fraction = num(k, value)?,
            "batch_size" => t.batch_size = num(k, value)?,
            "warmup" => t.warmup = num(k, value)?,
            "replay_capacity" => t.replay_capacity = num(k, value)?,
            "learning_rate" => t.learning_rate = num(k, value)?,
            "q_hidden" => t.q_hidden = list(k, value)?,
            "head_hidden" => t.head_hidden = list(k, value)?,
            "latent_dim" => t.latent_dim = num(k, value)?,
            "vae_hidden" => t.vae_hidden = list(k, value)?,
            "vae_alpha" => t.vae_alpha = if value == "auto" { None } else { Some(num(k, value)?) },
            "vae_epochs" => t.vae_epochs = num(k, value)?,
            "vae_batch_size" => t.vae_batch_size = num(k, value)?,
            "vae_learning_rate" => t.vae_learning_rate = num(k, value)?,
            "unfreeze_encoder" => t.unfreeze_encoder = boolean(k, value)?,
            "modes" | "mode" => {
                self.modes = value
                    .split(',')
                    .map(|m| m.trim().parse::<Mode>().map_err(|e| bad(k, e.to_string())))
                    .collect::<Result<_>>()?
            }
            "seeds" => self.seeds = list(k, value)?,
            "seed" => self.seeds = vec![num(k, value)?],
            "checkpoints" => self.checkpoints = list(k, value)?,
            "epochs" => self.checkpoints = vec![num(k, value)?],
            "threads" => self.threads = num(k, value)?,
            _ => return Err(bad(k, "unknown key")),
        }
        Ok(())
    }

    /// Every result-affecting setting, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let f = &self.features;
        vec![
            ("rows", self.rows.to_string()),
            ("cols", self.cols.to_string()),
            ("cell_size", self.cell_size.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("pathloss_n", self.pathloss_n.to_string()),
            ("offset_a", self.offset_a.to_string()),
            ("hearing_radius", self.hearing_radius.to_string()),
            ("delta", self.delta.to_string()),
            ("horizon", self.horizon.to_string()),
            ("beacons", show_path(&self.beacons, "default")),
            ("dataset", show_path(&self.dataset, "synthetic")),
            ("test_dataset", show_path(&self.test_dataset, "none")),
            ("labeled_per_cell", self.labeled_per_cell.to_string()),
            ("unlabeled", self.unlabeled.to_string()),
            ("test_per_cell", self.test_per_cell.to_string()),
            ("use_raw", f.use_raw.to_string()),
            ("use_s1", f.use_s1.to_string()),
            ("use_s2", f.use_s2.to_string()),
            ("s1_ordered", f.s1_ordered.to_string()),
            ("range_count", f.range_count.to_string()),
            ("range_width", f.range_width.map_or("auto".into(), |w| w.to_string())),
            ("gamma", t.gamma.to_string()),
            ("epsilon_start", t.epsilon_start.to_string()),
            ("epsilon_end", t.epsilon_end.to_string()),
            ("epsilon_decay_fraction", t.epsilon_decay_fraction.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("warmup", t.warmup.to_string()),
            ("replay_capacity", t.replay_capacity.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("q_hidden", join(&t.q_hidden)),
            ("head_hidden", join(&t.head_hidden)),
            ("latent_dim", t.latent_dim.to_string()),
            ("vae_hidden", join(&t.vae_hidden)),
            ("vae_alpha", t.vae_alpha.map_or("auto".into(), |a| a.to_string())),
            ("vae_epochs", t.vae_epochs.to_string()),
            ("vae_batch_size", t.vae_batch_size.to_string()),
            ("vae_learning_rate", t.vae_learning_rate.to_string()),
            ("unfreeze_encoder", t.unfreeze_encoder.to_string()),
            ("modes", join(&self.modes)),
            ("seeds", join(&self.seeds)),
            ("checkpoints", join(&self.checkpoints)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        if self.modes.is_empty() {
            return Err(bad("modes", "at least one mode is required"));
        }
        if self.checkpoints.is_empty() {
            return Err(bad("checkpoints", "at least one checkpoint is required"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(bad("checkpoints", "must be positive and strictly ascending"));
        }
        if self.threads == 0 {
            return Err(bad("threads", "must be at least 1"));
        }
        if self.dataset.is_none() && self.test_per_cell == 0 {
            return Err(bad("test_per_cell", "synthetic runs need a test split"));
        }
        self.features.validate().map_err(|e| bad("features", e.to_string()))?;
        self.train.validate().map_err(|e| bad("train", e.to_string()))?;
        Ok(())
    }

    /// Total training epochs: the last checkpoint.
    pub fn epochs(&self) -> usize {
        *self.checkpoints.last().expect("validated")
    }

    pub fn world(&self) -> Result<GridWorld> {
        let beacons = match &self.beacons {
            Some(p) => load_beacons(p)?,
            None => default_beacons(self.rows, self.cols, self.cell_size),
        };
        let world = GridWorld {
            rows: self.rows,
            cols: self.cols,
            cell_size: self.cell_size,
            beacons,
            pathloss_n: self.pathloss_n,
            offset_a: self.offset_a,
            noise_sigma: self.noise_sigma,
            hearing_radius: self.hearing_radius,
            delta: self.delta,
            horizon: self.horizon,
        };
        world.validate()?;
        Ok(world)
    }

    /// Feature config with the beacon count taken from the layout.
    pub fn feature_config(&self, world: &GridWorld) -> FeatureConfig {
        FeatureConfig {
            beacon_count: world.beacons.len(),
            ..self.features.clone()
        }
    }

    pub fn train_config(&self, mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: self.epochs(),
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_benchmark() {
        let c = ExperimentConfig::default();
        assert_eq!((c.rows, c.cols, c.labeled_per_cell, c.unlabeled, c.test_per_cell), (8, 8, 2, 1000, 1));
        assert_eq!(c.checkpoints, vec![25, 50, 100, 150, 200]);
        assert_eq!(c.epochs(), 200);
        assert_eq!(c.world().unwrap().beacons.len(), 13);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("rows", "5").unwrap();
        c.set("vae-alpha", "2.5").unwrap();
        c.set("modes", "semi_supervised").unwrap();
        c.set("q_hidden", "32,16").unwrap();
        c.set("range_width", "8").unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        match ExperimentConfig::parse("rows = 3\nbogus = 1\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("gamma = lots\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "gamma"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("checkpoints = 50,25\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "checkpoints"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("seeds =\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "seeds"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("rows 3\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let c = ExperimentConfig::parse("# grid\n\nrows = 4\n  cols=6  \n").unwrap();
        assert_eq!((c.rows, c.cols), (4, 6));
    }
}
