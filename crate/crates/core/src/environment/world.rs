use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Featurizer, RSSI_MAX, RSSI_MIN, RSSI_SENTINEL};
use crate::rng::SeededRng;

/// Number of readings bundled per localization episode.
pub const BUNDLE_SIZE: usize = 3;

/// Ten feet, in meters.
pub const DEFAULT_CELL_SIZE: f64 = 3.048;

/// Grid cell; rows grow southward, columns eastward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    West = 0,
    East = 1,
    North = 2,
    South = 3,
    NorthWest = 4,
    NorthEast = 5,
    SouthWest = 6,
    SouthEast = 7,
}

pub const ACTION_COUNT: usize = 8;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::West,
        Action::East,
        Action::North,
        Action::South,
        Action::NorthWest,
        Action::NorthEast,
        Action::SouthWest,
        Action::SouthEast,
    ];

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("action index {index} is not in 0..8")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(d_row, d_col)`.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Action::West => (0, -1),
            Action::East => (0, 1),
            Action::North => (-1, 0),
            Action::South => (1, 0),
            Action::NorthWest => (-1, -1),
            Action::NorthEast => (-1, 1),
            Action::SouthWest => (1, -1),
            Action::SouthEast => (1, 1),
        }
    }
}

/// One scan bundle, optionally labelled with the cell it was taken in.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSample {
    pub readings: [Vec<f64>; BUNDLE_SIZE],
    pub label: Option<Cell>,
}

pub fn check_reading(v: f64) -> Result<()> {
    if v == RSSI_SENTINEL || (RSSI_MIN..=RSSI_MAX).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "RSSI {v} outside [{RSSI_MIN}, {RSSI_MAX}] and not the {RSSI_SENTINEL} sentinel"
        )))
    }
}

impl FingerprintSample {
    pub fn new(readings: [Vec<f64>; BUNDLE_SIZE], label: Option<Cell>) -> Result<Self> {
        let n = readings[0].len();
        if n == 0 || readings.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("all readings in a bundle need the same non-zero beacon count"));
        }
        for v in readings.iter().flatten() {
            check_reading(*v)?;
        }
        Ok(Self { readings, label })
    }

    pub fn beacon_count(&self) -> usize {
        self.readings[0].len()
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

/// Per-episode agent state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub position: Cell,
    pub observations: Arc<[FeatureVector; BUNDLE_SIZE]>,
    pub target: Option<Cell>,
    pub step_index: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: AgentState,
    pub reward: f64,
    pub terminal: bool,
}

/// Floor geometry, beacon layout and propagation model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    /// Beacon positions in meters, `(x east, y south)` from the north-west corner.
    pub beacons: Vec<(f64, f64)>,
    pub pathloss_n: f64,
    pub offset_a: f64,
    pub noise_sigma: f64,
    pub hearing_radius: f64,
    pub delta: f64,
    pub horizon: usize,
}

impl GridWorld {
    /// Defaults for everything except the grid size; 13 beacons on a
    /// jittered 4x4 lattice with three corners removed.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        let world = Self {
            rows,
            cols,
            cell_size: DEFAULT_CELL_SIZE,
            beacons: default_beacons(rows, cols, DEFAULT_CELL_SIZE),
            pathloss_n: 2.0,
            offset_a: -60.0,
            noise_sigma: 2.0,
            hearing_radius: 25.0,
            delta: 3.0,
            horizon: 10,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("grid needs at least one row and column"));
        }
        if self.beacons.is_empty() {
            return Err(Error::invalid("at least one beacon required"));
        }
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("cell_size", self.cell_size)?;
        positive("pathloss_n", self.pathloss_n)?;
        positive("delta", self.delta)?;
        positive("hearing_radius", self.hearing_radius)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if !self.offset_a.is_finite() {
            return Err(Error::invalid("offset_a must be finite"));
        }
        if self
            .beacons
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::invalid("beacon coordinates must be finite"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn class_of(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_of(&self, class: usize) -> Cell {
        Cell::new(class / self.cols, class % self.cols)
    }

    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.col as f64 + 0.5) * self.cell_size,
            (cell.row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Center-to-center Euclidean distance in meters.
    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        let dr = a.row as f64 - b.row as f64;
        let dc = a.col as f64 - b.col as f64;
        dr.hypot(dc) * self.cell_size
    }

    /// Log-distance path loss with Gaussian shadowing, one value per beacon.
    /// Pass `None` for a noiseless reading.
    pub fn synth_rssi(&self, pos: (f64, f64), mut rng: Option<&mut SeededRng>) -> Result<Vec<f64>> {
        let (x, y) = pos;
        if !(x >= 0.0 && x <= self.width_m() && y >= 0.0 && y <= self.height_m()) {
            return Err(Error::invalid(format!(
                "position ({x}, {y}) is outside the {}x{} m floor",
                self.width_m(),
                self.height_m()
            )));
        }
        Ok(self
            .beacons
            .iter()
            .map(|&(bx, by)| {
                let d = (x - bx).hypot(y - by);
                if d > self.hearing_radius {
                    return RSSI_SENTINEL;
                }
                let mut r = -10.0 * self.pathloss_n * d.max(0.1).log10() + self.offset_a;
                if let Some(rng) = rng.as_deref_mut() {
                    if self.noise_sigma > 0.0 {
                        r += self.noise_sigma * rng.normal();
                    }
                }
                r.clamp(RSSI_MIN, RSSI_MAX)
            })
            .collect())
    }

    /// Moves one cell; coordinates that would leave the grid are clamped.
    pub fn apply_action(&self, position: Cell, action: usize) -> Result<Cell> {
        if !self.contains(position) {
            return Err(Error::invalid(format!("position {position} is outside the grid")));
        }
        let (dr, dc) = Action::from_index(action)?.offset();
        let clamp = |v: usize, d: isize, n: usize| -> usize { (v as isize + d).clamp(0, n as isize - 1) as usize };
        Ok(Cell::new(
            clamp(position.row, dr, self.rows),
            clamp(position.col, dc, self.cols),
        ))
    }

    pub fn reward(&self, observed: Cell, target: Cell) -> f64 {
        reward_for_distance(self.distance(observed, target), self.delta, self.cell_size)
    }

    /// Starts an episode at a uniformly random cell.
    pub fn reset(&self, sample: &FingerprintSample, featurizer: &Featurizer, rng: &mut SeededRng) -> Result<AgentState> {
        let obs = [
            featurizer.featurize(&sample.readings[0])?,
            featurizer.featurize(&sample.readings[1])?,
            featurizer.featurize(&sample.readings[2])?,
        ];
        self.reset_with(Arc::new(obs), sample.label, rng)
    }

    /// Like [`GridWorld::reset`] for observations that were featurized ahead of time.
    pub fn reset_with(
        &self,
        observations: Arc<[FeatureVector; BUNDLE_SIZE]>,
        target: Option<Cell>,
        rng: &mut SeededRng,
    ) -> Result<AgentState> {
        if let Some(t) = target {
            if !self.contains(t) {
                return Err(Error::invalid(format!("label {t} is outside the grid")));
            }
        }
        let class = rng.below(self.cell_count());
        Ok(AgentState {
            position: self.cell_of(class),
            observations,
            target,
            step_index: 0,
            terminal: false,
        })
    }

    /// Applies `action`. The goal is the state's true target when present,
    /// otherwise `inferred` (the pseudo-label supplied by the agent).
    pub fn step(&self, state: &AgentState, action: usize, inferred: Option<Cell>) -> Result<StepResult> {
        if state.terminal || state.step_index >= self.horizon {
            return Err(Error::state("episode already terminated"));
        }
        let goal = state
            .target
            .or(inferred)
            .ok_or_else(|| Error::state("unlabeled episode stepped without an inferred cell"))?;
        if !self.contains(goal) {
            return Err(Error::invalid(format!("goal {goal} is outside the grid")));
        }
        let position = self.apply_action(state.position, action)?;
        let reward = self.reward(position, goal);
        let step_index = state.step_index + 1;
        let terminal = position == goal || step_index >= self.horizon;
        Ok(StepResult {
            next_state: AgentState {
                position,
                observations: Arc::clone(&state.observations),
                target: state.target,
                step_index,
                terminal,
            },
            reward,
            terminal,
        })
    }

    /// Synthetic dataset: labelled bundles at every cell center followed by
    /// unlabelled bundles at uniformly random continuous positions.
    pub fn generate_dataset(
        &self,
        labeled_per_cell: usize,
        unlabeled_total: usize,
        rng: &mut SeededRng,
    ) -> Result<Vec<FingerprintSample>> {
        let mut out = Vec::with_capacity(labeled_per_cell * self.cell_count() + unlabeled_total);
        for class in 0..self.cell_count() {
            let cell = self.cell_of(class);
            let center = self.cell_center(cell);
            for _ in 0..labeled_per_cell {
                out.push(FingerprintSample::new(self.bundle_at(center, rng)?, Some(cell))?);
            }
        }
        for _ in 0..unlabeled_total {
            let pos = (
                rng.uniform_range(0.0, self.width_m()),
                rng.uniform_range(0.0, self.height_m()),
            );
            out.push(FingerprintSample::new(self.bundle_at(pos, rng)?, None)?);
        }
        Ok(out)
    }

    fn bundle_at(&self, pos: (f64, f64), rng: &mut SeededRng) -> Result<[Vec<f64>; BUNDLE_SIZE]> {
        Ok([
            self.synth_rssi(pos, Some(rng))?,
            self.synth_rssi(pos, Some(rng))?,
            self.synth_rssi(pos, Some(rng))?,
        ])
    }
}

/// Reciprocal-distance reward: `1/d` inside `(0, delta]`, `-d` beyond it,
/// and `1/(cell_size/2)` at `d == 0` where the reciprocal is undefined.
pub fn reward_for_distance(dist: f64, delta: f64, cell_size: f64) -> f64 {
    if dist <= 0.0 {
        1.0 / (cell_size / 2.0)
    } else if dist <= delta {
        1.0 / dist
    } else {
        -dist
    }
}

/// Lattice points of a 4x4 grid spanning the floor, minus the NE, SW and SE
/// corners, each nudged by a fixed pseudo-random jitter of up to 10% of the
/// lattice spacing.
pub fn default_beacons(rows: usize, cols: usize, cell_size: f64) -> Vec<(f64, f64)> {
    let w = cols as f64 * cell_size;
    let h = rows as f64 * cell_size;
    let (sx, sy) = (w / 4.0, h / 4.0);
    let mut jitter = SeededRng::new(0x6265_6163_6f6e);
    let mut out = Vec::with_capacity(13);
    for i in 0..4 {
        for j in 0..4 {
            let corner = (i, j);
            let keep = !matches!(corner, (0, 3) | (3, 0) | (3, 3));
            let jx = jitter.uniform_range(-0.1, 0.1) * sx;
            let jy = jitter.uniform_range(-0.1, 0.1) * sy;
            if keep {
                out.push((((j as f64) + 0.5) * sx + jx, ((i as f64) + 0.5) * sy + jy));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use proptest::prelude::*;

    fn noiseless(rows: usize, cols: usize) -> GridWorld {
        GridWorld {
            noise_sigma: 0.0,
            ..GridWorld::new(rows, cols).unwrap()
        }
    }

    fn single_beacon_world() -> GridWorld {
        GridWorld {
            beacons: vec![(0.0, 0.0)],
            ..noiseless(10, 10)
        }
    }

    #[test]
    fn default_layout_has_thirteen_beacons_inside_floor() {
        let w = GridWorld::new(8, 8).unwrap();
        assert_eq!(w.beacons.len(), 13);
        for &(x, y) in &w.beacons {
            assert!(x > 0.0 && x < w.width_m() && y > 0.0 && y < w.height_m());
        }
    }

    #[test]
    fn path_loss_reference_values() {
        let w = single_beacon_world();
        assert_eq!(w.synth_rssi((1.0, 0.0), None).unwrap(), vec![-60.0]);
        assert_eq!(w.synth_rssi((0.0, 10.0), None).unwrap(), vec![-80.0]);
    }

    #[test]
    fn equidistant_positions_read_equal() {
        let w = single_beacon_world();
        let a = w.synth_rssi((3.0, 4.0), None).unwrap();
        let b = w.synth_rssi((4.0, 3.0), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_hearing_radius_is_sentinel() {
        let w = single_beacon_world();
        assert_eq!(w.synth_rssi((20.0, 20.0), None).unwrap(), vec![RSSI_SENTINEL]);
    }

    #[test]
    fn position_outside_floor_rejected() {
        let w = single_beacon_world();
        assert!(w.synth_rssi((-0.1, 1.0), None).is_err());
        assert!(w.synth_rssi((1.0, 31.0), None).is_err());
    }

    #[test]
    fn action_examples() {
        let w = noiseless(5, 5);
        assert_eq!(w.apply_action(Cell::new(2, 2), 1).unwrap(), Cell::new(2, 3));
        assert_eq!(w.apply_action(Cell::new(0, 0), 4).unwrap(), Cell::new(0, 0));
        assert_eq!(w.apply_action(Cell::new(2, 2), 2).unwrap(), Cell::new(1, 2));
        assert_eq!(w.apply_action(Cell::new(2, 2), 7).unwrap(), Cell::new(3, 3));
        assert!(w.apply_action(Cell::new(2, 2), 8).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_for_distance(2.0, 3.0, 3.048), 0.5);
        assert_eq!(reward_for_distance(5.0, 3.0, 3.048), -5.0);
        let w = noiseless(3, 3);
        let cap = w.reward(Cell::new(1, 1), Cell::new(1, 1));
        assert!((cap - 1.0 / 1.524).abs() < 1e-12);
        assert!((cap - 0.656).abs() < 1e-3);
    }

    fn featurizer() -> Featurizer {
        Featurizer::new(FeatureConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_keeps_label() {
        let w = noiseless(5, 5);
        let mut rng = SeededRng::new(1);
        let data = w.generate_dataset(1, 1, &mut rng).unwrap();
        let f = featurizer();
        let a = w.reset(&data[0], &f, &mut SeededRng::new(9)).unwrap();
        let b = w.reset(&data[0], &f, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a.position, b.position);
        assert_eq!(a.target, data[0].label);
        let u = w.reset(&data[25], &f, &mut rng).unwrap();
        assert!(u.target.is_none());
    }

    #[test]
    fn reset_covers_every_cell() {
        // P(some cell missed in 1e4 draws) <= 25 * (24/25)^1e4, astronomically small.
        let w = noiseless(5, 5);
        let mut rng = SeededRng::new(2);
        let data = w.generate_dataset(1, 0, &mut rng).unwrap();
        let f = featurizer();
        let obs = w.reset(&data[0], &f, &mut rng).unwrap().observations;
        let mut seen = [false; 25];
        for _ in 0..10_000 {
            let s = w.reset_with(Arc::clone(&obs), None, &mut rng).unwrap();
            seen[w.class_of(s.position)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    fn state_at(w: &GridWorld, pos: Cell, target: Option<Cell>) -> AgentState {
        let data = w.generate_dataset(1, 0, &mut SeededRng::new(0)).unwrap();
        let mut s = w.reset(&data[0], &featurizer(), &mut SeededRng::new(0)).unwrap();
        s.position = pos;
        s.target = target;
        s
    }

    #[test]
    fn step_onto_target_is_terminal_with_cap() {
        let w = noiseless(5, 5);
        let s = state_at(&w, Cell::new(2, 2), Some(Cell::new(2, 3)));
        let r = w.step(&s, Action::East.index(), None).unwrap();
        assert!(r.terminal);
        assert!((r.reward - 1.0 / 1.524).abs() < 1e-12);
        assert!(w.step(&r.next_state, 0, None).is_err());
    }

    #[test]
    fn horizon_one_terminates_after_one_step() {
        let w = GridWorld {
            horizon: 1,
            ..noiseless(5, 5)
        };
        let s = state_at(&w, Cell::new(0, 0), Some(Cell::new(4, 4)));
        let r = w.step(&s, Action::West.index(), None).unwrap();
        assert!(r.terminal);
    }

    #[test]
    fn moving_away_is_negative() {
        let w = noiseless(5, 5);
        let s = state_at(&w, Cell::new(2, 2), Some(Cell::new(2, 3)));
        let r = w.step(&s, Action::West.index(), None).unwrap();
        assert!(!r.terminal);
        assert!(r.reward < 0.0);
        assert!((r.reward + 2.0 * 3.048).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_step_needs_inferred_cell() {
        let w = noiseless(5, 5);
        let s = state_at(&w, Cell::new(2, 2), None);
        assert!(matches!(w.step(&s, 0, None), Err(Error::State(_))));
        let r = w.step(&s, 0, Some(Cell::new(2, 1))).unwrap();
        assert!(r.terminal);
    }

    #[test]
    fn dataset_counts_and_noiseless_bundles() {
        let w = noiseless(5, 5);
        let mut rng = SeededRng::new(4);
        let d = w.generate_dataset(1, 7, &mut rng).unwrap();
        assert_eq!(d.iter().filter(|s| s.is_labeled()).count(), 25);
        assert_eq!(d.iter().filter(|s| !s.is_labeled()).count(), 7);
        for s in &d {
            assert_eq!(s.readings[0], s.readings[1]);
            assert_eq!(s.readings[1], s.readings[2]);
        }
        let noisy = GridWorld::new(5, 5).unwrap();
        let d = noisy.generate_dataset(2, 0, &mut rng).unwrap();
        assert_eq!(d.len(), 50);
        assert_ne!(d[0].readings[0], d[0].readings[1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn action_closure(rows in 1usize..12, cols in 1usize..12, r in 0usize..12, c in 0usize..12, a in 0usize..8) {
            let w = GridWorld { beacons: vec![(0.0, 0.0)], ..noiseless(rows, cols) };
            let p = Cell::new(r % rows, c % cols);
            prop_assert!(w.contains(w.apply_action(p, a).unwrap()));
        }

        #[test]
        fn inverse_actions_on_interior(rows in 3usize..12, cols in 3usize..12, r in 0usize..12, c in 0usize..12, pair in 0usize..4) {
            let w = GridWorld { beacons: vec![(0.0, 0.0)], ..noiseless(rows, cols) };
            let p = Cell::new(1 + r % (rows - 2), 1 + c % (cols - 2));
            let (a, b) = [(0, 1), (2, 3), (4, 7), (5, 6)][pair];
            prop_assert_eq!(w.apply_action(w.apply_action(p, a).unwrap(), b).unwrap(), p);
            prop_assert_eq!(w.apply_action(w.apply_action(p, b).unwrap(), a).unwrap(), p);
        }

        #[test]
        fn rssi_decreases_with_distance(d1 in 0.1f64..14.0, step in 0.01f64..5.0) {
            let w = single_beacon_world();
            let d2 = d1 + step;
            let r1 = w.synth_rssi((d1, 0.0), None).unwrap()[0];
            let r2 = w.synth_rssi((d2, 0.0), None).unwrap()[0];
            // -60 - 20 log10(d) hits -100 at d = 100 m, well past this range.
            prop_assert!(r2 < r1);
        }
    }
}
