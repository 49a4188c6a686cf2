//! Small episodic MDPs with sparse or dense rewards.
//!
//! * [`Chain`]: a line of states with a tiny reward for bumping the left wall
//!   and the real reward at the far right end.
//! * [`Rooms`]: a gridworld of rooms joined by doorways, loaded from a text
//!   layout, with a single rewarding goal cell in the last room.
//! * [`DenseGrid`]: an open grid whose reward is the negative normalised
//!   Manhattan distance to the goal.
//!
//! Step functions are pure in `(state, action, rng)`.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{one_hot, tile_code, BinaryFeatureVector, TileCodingConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    type State: Clone + PartialEq + std::fmt::Debug;

    fn num_actions(&self) -> usize;
    /// Dimension `M` of [`features`](Self::features).
    fn feature_dim(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> Result<EnvStep<Self::State>>;
    fn features(&self, state: &Self::State) -> BinaryFeatureVector;
    /// Episode step budget.
    fn max_steps(&self) -> usize;
}

/// State feature map for environments with coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureMap {
    /// One indicator per cell.
    #[default]
    OneHot,
    /// Tile coding of the normalised coordinates.
    Tiles { tiles_per_dim: usize, num_tilings: usize },
}

impl FeatureMap {
    fn tile_config(&self, dims: usize) -> Result<Option<TileCodingConfig>> {
        match *self {
            FeatureMap::OneHot => Ok(None),
            FeatureMap::Tiles { tiles_per_dim, num_tilings } => {
                TileCodingConfig::uniform(vec![(0.0, 1.0); dims], tiles_per_dim, num_tilings).map(Some)
            }
        }
    }
}

fn invalid_action(action: usize, n: usize) -> Error {
    Error::InvalidInput(format!("action {action} out of range for {n} actions"))
}

// ---------------------------------------------------------------------------
// Chain

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub length: usize,
    pub left_reward: f64,
    pub goal_reward: f64,
    /// Probability that the chosen direction is reversed.
    pub slip_prob: f64,
    pub max_steps: usize,
    pub start: usize,
    pub features: FeatureMap,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            length: 30,
            left_reward: 0.001,
            goal_reward: 1.0,
            slip_prob: 0.0,
            max_steps: 120,
            start: 0,
            features: FeatureMap::OneHot,
        }
    }
}

impl ChainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.length < 3 {
            out.push(format!("chain length must be at least 3, got {}", self.length));
        }
        if !(0.0..0.5).contains(&self.slip_prob) {
            out.push(format!("slip_prob must lie in [0, 0.5), got {}", self.slip_prob));
        }
        if !(self.left_reward.is_finite() && self.goal_reward.is_finite()) {
            out.push("chain rewards must be finite".into());
        } else if self.left_reward.abs() > self.goal_reward.abs() {
            out.push("left_reward must not exceed goal_reward in magnitude".into());
        }
        if self.max_steps == 0 {
            out.push("max_steps must be positive".into());
        }
        if self.start + 1 >= self.length.max(1) {
            out.push(format!("start {} must lie left of the goal state", self.start));
        }
        out
    }
}

/// One chain transition from `position`.
pub fn chain_step<R: Rng + ?Sized>(
    position: usize,
    action: usize,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<EnvStep<usize>> {
    if action > RIGHT {
        return Err(invalid_action(action, 2));
    }
    if position >= cfg.length {
        return Err(Error::InvalidInput(format!(
            "position {position} out of range for chain of length {}",
            cfg.length
        )));
    }
    let reversed = cfg.slip_prob > 0.0 && rng.gen::<f64>() < cfg.slip_prob;
    let right = (action == RIGHT) != reversed;
    let step = if right {
        let next = (position + 1).min(cfg.length - 1);
        let terminal = next == cfg.length - 1;
        EnvStep { next_state: next, reward: if terminal { cfg.goal_reward } else { 0.0 }, terminal }
    } else if position == 0 {
        EnvStep { next_state: 0, reward: cfg.left_reward, terminal: false }
    } else {
        EnvStep { next_state: position - 1, reward: 0.0, terminal: false }
    };
    Ok(step)
}

#[derive(Clone, Debug)]
pub struct Chain {
    cfg: ChainConfig,
    tiles: Option<TileCodingConfig>,
}

impl Chain {
    pub fn new(cfg: ChainConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let tiles = cfg.features.tile_config(1)?;
        Ok(Self { cfg, tiles })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }
}

impl Environment for Chain {
    type State = usize;

    fn num_actions(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        self.tiles.as_ref().map_or(self.cfg.length, |t| t.output_dimension())
    }

    fn initial_state(&self) -> usize {
        self.cfg.start
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> Result<EnvStep<usize>> {
        chain_step(*state, action, &self.cfg, rng)
    }

    fn features(&self, state: &usize) -> BinaryFeatureVector {
        match &self.tiles {
            None => one_hot(*state, self.cfg.length).expect("chain state in range"),
            Some(t) => {
                let x = *state as f64 / (self.cfg.length - 1) as f64;
                tile_code(&[x], t).expect("one input dimension")
            }
        }
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
}

// ---------------------------------------------------------------------------
// Rooms

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const WEST: usize = 2;
pub const EAST: usize = 3;

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// The four-room layout shipped with the crate.
pub const FOUR_ROOMS: &str = include_str!("../layouts/four_rooms.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cell {
    Wall,
    Floor,
    Door,
}

/// A parsed room layout.
///
/// Text format, one character per cell, all rows the same width:
///
/// | char | meaning |
/// |------|---------|
/// | `#`  | wall |
/// | `.`  | floor |
/// | `D`  | doorway between two rooms |
/// | `S`  | start cell (floor), exactly one |
/// | `G`  | goal cell (floor), exactly one |
///
/// Rooms are the 4-connected regions of floor cells once walls and doorways
/// are removed, numbered in row-major order of their first cell. A doorway
/// belongs to the lowest-numbered room it touches. Blank lines are ignored.
#[derive(Clone, Debug)]
pub struct RoomLayout {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    room_of: Vec<usize>,
    num_rooms: usize,
    start: (usize, usize),
    goal: (usize, usize),
    /// Feature index of every non-wall cell.
    index_of: HashMap<(usize, usize), usize>,
}

impl RoomLayout {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::InvalidInput("room layout is empty".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut cells = Vec::with_capacity(rows * cols);
        let (mut start, mut goal) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::InvalidInput(format!(
                    "layout row {r} has width {}, expected {cols}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Floor,
                    'D' => Cell::Door,
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::InvalidInput(format!("layout has more than one `{ch}`")));
                        }
                        Cell::Floor
                    }
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "unknown layout character `{other}` at row {r}, column {c}"
                        )))
                    }
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or_else(|| Error::InvalidInput("layout has no start `S`".into()))?;
        let goal = goal.ok_or_else(|| Error::InvalidInput("layout has no goal `G`".into()))?;

        // Label floor regions.
        let mut room_of = vec![usize::MAX; rows * cols];
        let mut num_rooms = 0;
        for seed in 0..rows * cols {
            if cells[seed] != Cell::Floor || room_of[seed] != usize::MAX {
                continue;
            }
            let mut stack = vec![seed];
            room_of[seed] = num_rooms;
            while let Some(k) = stack.pop() {
                let (r, c) = (k / cols, k % cols);
                for (dr, dc) in MOVES {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let n = nr as usize * cols + nc as usize;
                    if cells[n] == Cell::Floor && room_of[n] == usize::MAX {
                        room_of[n] = num_rooms;
                        stack.push(n);
                    }
                }
            }
            num_rooms += 1;
        }
        for k in 0..rows * cols {
            if cells[k] == Cell::Door {
                let (r, c) = (k / cols, k % cols);
                room_of[k] = MOVES
                    .iter()
                    .filter_map(|(dr, dc)| {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        (nr >= 0 && nc >= 0 && nr < rows as isize && nc < cols as isize)
                            .then(|| room_of[nr as usize * cols + nc as usize])
                    })
                    .filter(|&room| room != usize::MAX)
                    .min()
                    .ok_or_else(|| Error::InvalidInput(format!("doorway at row {r}, column {c} touches no room")))?;
            }
        }

        let mut index_of = HashMap::new();
        for (k, cell) in cells.iter().enumerate() {
            if *cell != Cell::Wall {
                let next = index_of.len();
                index_of.insert((k / cols, k % cols), next);
            }
        }
        Ok(Self { rows, cols, cells, room_of, num_rooms, start, goal, index_of })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn four_rooms() -> Self {
        Self::parse(FOUR_ROOMS).expect("shipped layout parses")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_rooms(&self) -> usize {
        self.num_rooms
    }

    pub fn num_cells(&self) -> usize {
        self.index_of.len()
    }

    pub fn is_open(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols && self.cells[row * self.cols + col] != Cell::Wall
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<RoomState> {
        self.is_open(row, col).then(|| RoomState { room: self.room_of[row * self.cols + col], row, col })
    }

    pub fn start(&self) -> RoomState {
        self.state_at(self.start.0, self.start.1).expect("start is open")
    }

    pub fn goal(&self) -> RoomState {
        self.state_at(self.goal.0, self.goal.1).expect("goal is open")
    }

    fn cell_index(&self, s: &RoomState) -> Option<usize> {
        self.index_of.get(&(s.row, s.col)).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoomState {
    pub room: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomsConfig {
    /// Layout file; the shipped four-room layout when absent.
    pub layout: Option<String>,
    /// Probability that the chosen action is replaced by a uniformly random one.
    pub slip_prob: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl Default for RoomsConfig {
    fn default() -> Self {
        Self { layout: None, slip_prob: 0.0, goal_reward: 1.0, max_steps: 500 }
    }
}

impl RoomsConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..0.5).contains(&self.slip_prob) {
            out.push(format!("slip_prob must lie in [0, 0.5), got {}", self.slip_prob));
        }
        if !self.goal_reward.is_finite() {
            out.push("goal_reward must be finite".into());
        }
        if self.max_steps == 0 {
            out.push("max_steps must be positive".into());
        }
        out
    }
}

/// One gridworld transition; walls and the outer boundary block movement.
pub fn rooms_step<R: Rng + ?Sized>(
    state: &RoomState,
    action: usize,
    layout: &RoomLayout,
    cfg: &RoomsConfig,
    rng: &mut R,
) -> Result<EnvStep<RoomState>> {
    if action >= MOVES.len() {
        return Err(invalid_action(action, MOVES.len()));
    }
    if layout.state_at(state.row, state.col) != Some(*state) {
        return Err(Error::InvalidInput(format!("{state:?} is not a valid cell of the layout")));
    }
    let action =
        if cfg.slip_prob > 0.0 && rng.gen::<f64>() < cfg.slip_prob { rng.gen_range(0..MOVES.len()) } else { action };
    let (dr, dc) = MOVES[action];
    let (nr, nc) = (state.row as isize + dr, state.col as isize + dc);
    let next = if nr >= 0 && nc >= 0 { layout.state_at(nr as usize, nc as usize).unwrap_or(*state) } else { *state };
    let terminal = next == layout.goal();
    Ok(EnvStep { next_state: next, reward: if terminal { cfg.goal_reward } else { 0.0 }, terminal })
}

#[derive(Clone, Debug)]
pub struct Rooms {
    layout: RoomLayout,
    cfg: RoomsConfig,
}

impl Rooms {
    pub fn new(cfg: RoomsConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let layout = match &cfg.layout {
            Some(path) => RoomLayout::load(path)?,
            None => RoomLayout::four_rooms(),
        };
        Ok(Self { layout, cfg })
    }

    pub fn with_layout(layout: RoomLayout, cfg: RoomsConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        Ok(Self { layout, cfg })
    }

    pub fn layout(&self) -> &RoomLayout {
        &self.layout
    }
}

impl Environment for Rooms {
    type State = RoomState;

    fn num_actions(&self) -> usize {
        MOVES.len()
    }

    fn feature_dim(&self) -> usize {
        self.layout.num_cells()
    }

    fn initial_state(&self) -> RoomState {
        self.layout.start()
    }

    fn step<R: Rng + ?Sized>(&self, state: &RoomState, action: usize, rng: &mut R) -> Result<EnvStep<RoomState>> {
        rooms_step(state, action, &self.layout, &self.cfg, rng)
    }

    fn features(&self, state: &RoomState) -> BinaryFeatureVector {
        let i = self.layout.cell_index(state).expect("state is an open cell");
        one_hot(i, self.layout.num_cells()).expect("index in range")
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
}

// ---------------------------------------------------------------------------
// Dense grid

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseGridConfig {
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub features: FeatureMap,
}

impl Default for DenseGridConfig {
    fn default() -> Self {
        Self { width: 10, height: 10, max_steps: 200, features: FeatureMap::OneHot }
    }
}

impl DenseGridConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width == 0 || self.height == 0 || self.width * self.height < 2 {
            out.push(format!("grid {}x{} must have at least two cells", self.width, self.height));
        }
        if self.max_steps == 0 {
            out.push("max_steps must be positive".into());
        }
        out
    }

    pub fn goal(&self) -> (usize, usize) {
        (self.width - 1, self.height - 1)
    }

    fn normaliser(&self) -> f64 {
        (self.width + self.height - 2) as f64
    }

    pub fn distance_to_goal(&self, (x, y): (usize, usize)) -> usize {
        let (gx, gy) = self.goal();
        gx.abs_diff(x) + gy.abs_diff(y)
    }
}

/// Open-grid transition from `(x, y)`; the reward is
/// `-distance(next, goal) / (width + height - 2)`, zero on reaching the goal.
pub fn dense_grid_step(state: (usize, usize), action: usize, cfg: &DenseGridConfig) -> Result<EnvStep<(usize, usize)>> {
    if action >= MOVES.len() {
        return Err(invalid_action(action, MOVES.len()));
    }
    let (x, y) = state;
    if x >= cfg.width || y >= cfg.height {
        return Err(Error::InvalidInput(format!("cell {state:?} outside {}x{} grid", cfg.width, cfg.height)));
    }
    let (dy, dx) = MOVES[action];
    let nx = (x as isize + dx).clamp(0, cfg.width as isize - 1) as usize;
    let ny = (y as isize + dy).clamp(0, cfg.height as isize - 1) as usize;
    let d = cfg.distance_to_goal((nx, ny));
    Ok(EnvStep { next_state: (nx, ny), reward: -(d as f64) / cfg.normaliser(), terminal: d == 0 })
}

#[derive(Clone, Debug)]
pub struct DenseGrid {
    cfg: DenseGridConfig,
    tiles: Option<TileCodingConfig>,
}

impl DenseGrid {
    pub fn new(cfg: DenseGridConfig) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let tiles = cfg.features.tile_config(2)?;
        Ok(Self { cfg, tiles })
    }

    pub fn config(&self) -> &DenseGridConfig {
        &self.cfg
    }
}

impl Environment for DenseGrid {
    type State = (usize, usize);

    fn num_actions(&self) -> usize {
        MOVES.len()
    }

    fn feature_dim(&self) -> usize {
        self.tiles.as_ref().map_or(self.cfg.width * self.cfg.height, |t| t.output_dimension())
    }

    fn initial_state(&self) -> (usize, usize) {
        (0, 0)
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &(usize, usize),
        action: usize,
        _rng: &mut R,
    ) -> Result<EnvStep<(usize, usize)>> {
        dense_grid_step(*state, action, &self.cfg)
    }

    fn features(&self, &(x, y): &(usize, usize)) -> BinaryFeatureVector {
        match &self.tiles {
            None => one_hot(y * self.cfg.width + x, self.cfg.width * self.cfg.height).expect("cell in range"),
            Some(t) => {
                let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
                tile_code(&[norm(x, self.cfg.width), norm(y, self.cfg.height)], t).expect("two input dimensions")
            }
        }
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn chain_examples() {
        let cfg = ChainConfig::default();
        let s = chain_step(0, LEFT, &cfg, &mut rng()).unwrap();
        assert_eq!(s, EnvStep { next_state: 0, reward: 0.001, terminal: false });
        let s = chain_step(cfg.length - 2, RIGHT, &cfg, &mut rng()).unwrap();
        assert_eq!(s, EnvStep { next_state: cfg.length - 1, reward: 1.0, terminal: true });
        let s = chain_step(5, LEFT, &cfg, &mut rng()).unwrap();
        assert_eq!(s, EnvStep { next_state: 4, reward: 0.0, terminal: false });
        assert!(chain_step(0, 2, &cfg, &mut rng()).is_err());
        assert!(chain_step(cfg.length, LEFT, &cfg, &mut rng()).is_err());
    }

    #[test]
    fn chain_slip_frequency() {
        let cfg = ChainConfig { slip_prob: 0.1, ..ChainConfig::default() };
        let mut r = rng();
        let n = 100_000;
        let reversed = (0..n).filter(|_| chain_step(10, RIGHT, &cfg, &mut r).unwrap().next_state == 9).count();
        let freq = reversed as f64 / n as f64;
        assert!((freq - 0.1).abs() < 0.01, "{freq}");
    }

    #[test]
    fn chain_config_validation() {
        let bad = ChainConfig { length: 2, slip_prob: 0.5, max_steps: 0, ..ChainConfig::default() };
        assert!(bad.problems().len() >= 3);
        assert!(Chain::new(bad).is_err());
    }

    #[test]
    fn chain_tile_features() {
        let chain = Chain::new(ChainConfig {
            features: FeatureMap::Tiles { tiles_per_dim: 6, num_tilings: 4 },
            ..ChainConfig::default()
        })
        .unwrap();
        assert_eq!(chain.feature_dim(), 24);
        for s in 0..30 {
            assert_eq!(chain.features(&s).num_active(), 4);
        }
    }

    #[test]
    fn layout_parsing() {
        let layout = RoomLayout::four_rooms();
        assert_eq!(layout.num_rooms(), 4);
        assert_eq!((layout.rows(), layout.cols()), (6, 21));
        assert_eq!(layout.start().room, 0);
        assert_eq!(layout.goal().room, 3);
        assert_eq!(layout.num_cells(), 4 * 16 + 3);

        assert!(RoomLayout::parse("###\n#S#\n###").is_err());
        assert!(RoomLayout::parse("#SG\n##").is_err());
        assert!(RoomLayout::parse("#SGx").is_err());
        assert!(RoomLayout::parse("SSG").is_err());
    }

    #[test]
    fn rooms_wall_and_goal() {
        let env = Rooms::new(RoomsConfig::default()).unwrap();
        let start = env.initial_state();
        let s = env.step(&start, UP, &mut rng()).unwrap();
        assert_eq!(s, EnvStep { next_state: start, reward: 0.0, terminal: false });
        let goal = env.layout().goal();
        let beside = env.layout().state_at(goal.row, goal.col - 1).unwrap();
        let s = env.step(&beside, EAST, &mut rng()).unwrap();
        assert_eq!(s, EnvStep { next_state: goal, reward: 1.0, terminal: true });
        assert!(env.step(&start, 4, &mut rng()).is_err());
        let bogus = RoomState { room: 2, ..start };
        assert!(env.step(&bogus, UP, &mut rng()).is_err());
    }

    #[test]
    fn shortest_path_matches_hand_count() {
        // Hand count for the shipped layout: 5 steps to the first doorway,
        // then 7, 7 and 6 steps between successive doorways and the goal.
        let hand_count = 5 + 7 + 7 + 6;
        let env = Rooms::new(RoomsConfig::default()).unwrap();
        let mut dist = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(env.initial_state(), 0usize);
        queue.push_back(env.initial_state());
        let mut r = rng();
        while let Some(s) = queue.pop_front() {
            let d = dist[&s];
            for a in 0..4 {
                let next = env.step(&s, a, &mut r).unwrap().next_state;
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(next) {
                    e.insert(d + 1);
                    queue.push_back(next);
                }
            }
        }
        assert_eq!(dist[&env.layout().goal()], hand_count);
        assert_eq!(dist.len(), env.layout().num_cells());
    }

    #[test]
    fn dense_grid_rewards() {
        let cfg = DenseGridConfig { width: 5, height: 4, ..DenseGridConfig::default() };
        let s = dense_grid_step((4, 2), DOWN, &cfg).unwrap();
        assert!(s.terminal);
        assert_eq!(s.reward, 0.0);
        // Rewards order strictly by distance.
        let mut by_distance: Vec<(usize, f64)> = Vec::new();
        for x in 0..5 {
            for y in 0..4 {
                for a in 0..4 {
                    let st = dense_grid_step((x, y), a, &cfg).unwrap();
                    by_distance.push((cfg.distance_to_goal(st.next_state), st.reward));
                    assert!(st.reward.abs() <= 1.0);
                }
            }
        }
        for &(d1, r1) in &by_distance {
            for &(d2, r2) in &by_distance {
                if d1 < d2 {
                    assert!(r1 > r2);
                }
            }
        }
    }

    #[test]
    fn greedy_rollout_takes_manhattan_steps() {
        let cfg = DenseGridConfig { width: 7, height: 5, ..DenseGridConfig::default() };
        let mut s = (0, 0);
        let mut steps = 0;
        loop {
            let best = (0..4)
                .map(|a| dense_grid_step(s, a, &cfg).unwrap())
                .max_by(|a, b| a.reward.partial_cmp(&b.reward).unwrap())
                .unwrap();
            steps += 1;
            s = best.next_state;
            if best.terminal {
                break;
            }
            assert!(steps < 100);
        }
        assert_eq!(steps, cfg.distance_to_goal((0, 0)));
    }

    #[test]
    fn fixed_seed_fixed_trajectory() {
        let env = Rooms::new(RoomsConfig { slip_prob: 0.3, ..RoomsConfig::default() }).unwrap();
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut s = env.initial_state();
            let mut path = vec![s];
            for k in 0..200 {
                s = env.step(&s, k % 4, &mut r).unwrap().next_state;
                path.push(s);
            }
            path
        };
        assert_eq!(run(4), run(4));
    }
}
