//! RSSI feature engineering: raw readings, pairwise differences (S1), and
//! Boolean range membership (S2).

use std::sync::Arc;

use crate::error::{Error, Result};

pub const RSSI_MIN: f64 = -100.0;
pub const RSSI_MAX: f64 = 0.0;
/// Reading recorded for a beacon that was not heard.
pub const RSSI_SENTINEL: f64 = -200.0;
pub const DEFAULT_BEACONS: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub beacon_count: usize,
    pub use_raw: bool,
    pub use_s1: bool,
    pub use_s2: bool,
    /// Emit both `r_i - r_j` and `r_j - r_i` instead of unordered pairs.
    pub s1_ordered: bool,
    pub range_count: usize,
    /// Bucket width in dBm; `None` spreads `range_count` buckets over [-100, 0].
    pub range_width: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            beacon_count: DEFAULT_BEACONS,
            use_raw: true,
            use_s1: false,
            use_s2: true,
            s1_ordered: false,
            range_count: 12,
            range_width: None,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_raw || self.use_s1 || self.use_s2) {
            return Err(Error::invalid("at least one feature block must be enabled"));
        }
        if self.beacon_count == 0 {
            return Err(Error::invalid("beacon_count must be positive"));
        }
        if self.range_count == 0 {
            return Err(Error::invalid("range_count must be at least 1"));
        }
        if let Some(w) = self.range_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("range_width must be positive, got {w}")));
            }
        }
        Ok(())
    }

    pub fn bucket_width(&self) -> f64 {
        self.range_width
            .unwrap_or((RSSI_MAX - RSSI_MIN) / self.range_count as f64)
    }

    fn s1_len(&self) -> usize {
        let n = self.beacon_count;
        let pairs = n * n.saturating_sub(1) / 2;
        if self.s1_ordered {
            2 * pairs
        } else {
            pairs
        }
    }

    pub fn layout(&self) -> Result<FeatureLayout> {
        self.validate()?;
        let mut blocks = Vec::new();
        let mut start = 0;
        if self.use_raw {
            blocks.push(Block {
                kind: BlockKind::Raw,
                start,
                len: self.beacon_count,
            });
            start += self.beacon_count;
        }
        if self.use_s1 {
            let len = self.s1_len();
            blocks.push(Block {
                kind: BlockKind::S1,
                start,
                len,
            });
            start += len;
        }
        if self.use_s2 {
            for beacon in 0..self.beacon_count {
                blocks.push(Block {
                    kind: BlockKind::S2 { beacon },
                    start,
                    len: self.range_count,
                });
                start += self.range_count;
            }
        }
        Ok(FeatureLayout { blocks, dim: start })
    }
}

/// Length of the feature vector produced under `config`.
pub fn feature_dim(config: &FeatureConfig) -> usize {
    let n = config.beacon_count;
    let mut d = 0;
    if config.use_raw {
        d += n;
    }
    if config.use_s1 {
        d += config.s1_len();
    }
    if config.use_s2 {
        d += n * config.range_count;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Raw,
    S1,
    S2 { beacon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

/// How each coordinate should be modelled by a generative decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl FeatureLayout {
    pub fn coord_kinds(&self) -> Vec<CoordKind> {
        let mut kinds = vec![CoordKind::Continuous; self.dim];
        for b in &self.blocks {
            if let BlockKind::S2 { .. } = b.kind {
                kinds[b.start..b.start + b.len].fill(CoordKind::Binary);
            }
        }
        kinds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Arc<FeatureLayout>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&[f64]> {
        self.layout
            .blocks
            .iter()
            .find(|b| b.kind == kind)
            .map(|b| &self.values[b.start..b.start + b.len])
    }
}

/// Stateless featurizer that shares one layout across all produced vectors.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeatureConfig,
    layout: Arc<FeatureLayout>,
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let layout = Arc::new(config.layout()?);
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<FeatureLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn featurize(&self, rssi: &[f64]) -> Result<FeatureVector> {
        let cfg = &self.config;
        if rssi.len() != cfg.beacon_count {
            return Err(Error::invalid(format!(
                "expected {} beacon readings, got {}",
                cfg.beacon_count,
                rssi.len()
            )));
        }
        if let Some(i) = rssi.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid(format!("reading {i} is not finite")));
        }
        let clamped: Vec<f64> = rssi.iter().map(|&r| r.clamp(RSSI_MIN, RSSI_MAX)).collect();
        let mut values = Vec::with_capacity(self.layout.dim);
        if cfg.use_raw {
            values.extend(clamped.iter().map(|r| (r - RSSI_MIN) / (RSSI_MAX - RSSI_MIN)));
        }
        if cfg.use_s1 {
            let n = clamped.len();
            for i in 0..n {
                for j in i + 1..n {
                    values.push((clamped[i] - clamped[j]) / 100.0);
                }
            }
            if cfg.s1_ordered {
                for i in 0..n {
                    for j in i + 1..n {
                        values.push((clamped[j] - clamped[i]) / 100.0);
                    }
                }
            }
        }
        if cfg.use_s2 {
            let width = cfg.bucket_width();
            for &r in &clamped {
                let bucket = (((r - RSSI_MIN) / width).floor() as usize).min(cfg.range_count - 1);
                let base = values.len();
                values.resize(base + cfg.range_count, 0.0);
                values[base + bucket] = 1.0;
            }
        }
        debug_assert_eq!(values.len(), self.layout.dim);
        Ok(FeatureVector {
            values,
            layout: Arc::clone(&self.layout),
        })
    }
}

/// One-shot convenience: build a featurizer and apply it once.
pub fn featurize(config: &FeatureConfig, rssi: &[f64]) -> Result<FeatureVector> {
    Featurizer::new(config.clone())?.featurize(rssi)
}

/// Coordinate-wise mean of several vectors sharing one layout.
pub fn mean_vector(vectors: &[FeatureVector]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("cannot average zero feature vectors"))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::invalid("feature vectors differ in length"));
        }
        acc.iter_mut().zip(&v.values).for_each(|(a, x)| *a += x);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
