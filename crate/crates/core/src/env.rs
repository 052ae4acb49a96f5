//! Jewel-collection gridworld.
//!
//! An 11x11 maze of walls with blue (+1) and red (-1) jewels. The agent
//! starts every episode at the center cell and moves in the four cardinal
//! directions; walls and the border block movement. Entering a jewel cell
//! collects it. Observations are 11x11x4 one-hot cell types flattened
//! row-major as `[row][col][channel]` with channel order
//! `[EMPTY, WALL, BLUE, RED]`; the agent's cell is encoded as all-zero.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::rng;

pub const GRID_SIZE: usize = 11;
pub const N_CELLS: usize = GRID_SIZE * GRID_SIZE;
pub const N_CHANNELS: usize = 4;
pub const OBS_LEN: usize = N_CELLS * N_CHANNELS;
pub const N_ACTIONS: usize = 4;
pub const CENTER: Pos = Pos {
    row: GRID_SIZE / 2,
    col: GRID_SIZE / 2,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wall,
    Blue,
    Red,
}

impl Cell {
    pub fn channel(self) -> usize {
        match self {
            Cell::Empty => 0,
            Cell::Wall => 1,
            Cell::Blue => 2,
            Cell::Red => 3,
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Wall => '#',
            Cell::Blue => 'B',
            Cell::Red => 'R',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn index(self) -> usize {
        self.row * GRID_SIZE + self.col
    }

    pub fn from_index(i: usize) -> Self {
        Pos {
            row: i / GRID_SIZE,
            col: i % GRID_SIZE,
        }
    }

    /// Neighbor in direction `a`, or `None` at the border.
    pub fn moved(self, a: Action) -> Option<Pos> {
        let (r, c) = (self.row as isize, self.col as isize);
        let (r, c) = match a {
            Action::Up => (r - 1, c),
            Action::Down => (r + 1, c),
            Action::Left => (r, c - 1),
            Action::Right => (r, c + 1),
        };
        let n = GRID_SIZE as isize;
        (r >= 0 && r < n && c >= 0 && c < n).then(|| Pos {
            row: r as usize,
            col: c as usize,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_blue: usize,
    pub n_red: usize,
    pub wall_density: f64,
    pub max_steps: usize,
    /// End the episode once every blue jewel has been collected.
    pub end_when_blue_collected: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_blue: 4,
            n_red: 2,
            wall_density: 0.15,
            max_steps: 100,
            end_when_blue_collected: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..0.9).contains(&self.wall_density) || self.max_steps == 0 {
            return Err(EnvError::Config(format!(
                "wall_density must be in [0, 0.9) and max_steps > 0, got {} / {}",
                self.wall_density, self.max_steps
            )));
        }
        if self.n_blue + self.n_red >= N_CELLS / 2 {
            return Err(EnvError::Config("too many jewels for the grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("invalid action index {0}")]
    BadAction(usize),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("malformed grid text: {0}")]
    Parse(String),
}

/// Cell contents of the full grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    cells: [Cell; N_CELLS],
}

impl Grid {
    pub fn empty() -> Self {
        Self {
            cells: [Cell::Empty; N_CELLS],
        }
    }

    pub fn get(&self, p: Pos) -> Cell {
        self.cells[p.index()]
    }

    pub fn set(&mut self, p: Pos, c: Cell) {
        self.cells[p.index()] = c;
    }

    pub fn cells(&self) -> &[Cell; N_CELLS] {
        &self.cells
    }

    pub fn count(&self, c: Cell) -> usize {
        self.cells.iter().filter(|&&x| x == c).count()
    }

    /// Cells reachable from `start` through non-wall 4-neighbors.
    pub fn reachable_from(&self, start: Pos) -> Vec<bool> {
        let mut seen = vec![false; N_CELLS];
        if self.get(start) == Cell::Wall {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start.index()] = true;
        while let Some(p) = queue.pop_front() {
            for a in Action::ALL {
                if let Some(q) = p.moved(a) {
                    if !seen[q.index()] && self.get(q) != Cell::Wall {
                        seen[q.index()] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        seen
    }

    /// One line per row, one character per cell; `A` marks `agent` if given.
    pub fn to_ascii(&self, agent: Option<Pos>) -> String {
        let mut s = String::with_capacity(N_CELLS + GRID_SIZE);
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                let p = Pos { row: r, col: c };
                s.push(if Some(p) == agent {
                    'A'
                } else {
                    self.get(p).to_char()
                });
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of [`Grid::to_ascii`]; returns the agent position if marked.
    pub fn from_ascii(text: &str) -> Result<(Grid, Option<Pos>), EnvError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != GRID_SIZE {
            return Err(EnvError::Parse(format!("expected {GRID_SIZE} rows, got {}", lines.len())));
        }
        let mut grid = Grid::empty();
        let mut agent = None;
        for (r, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.trim_end().chars().collect();
            if chars.len() != GRID_SIZE {
                return Err(EnvError::Parse(format!("row {r} has {} cells", chars.len())));
            }
            for (c, ch) in chars.into_iter().enumerate() {
                let p = Pos { row: r, col: c };
                let cell = match ch {
                    '.' => Cell::Empty,
                    '#' => Cell::Wall,
                    'B' => Cell::Blue,
                    'R' => Cell::Red,
                    'A' => {
                        if agent.replace(p).is_some() {
                            return Err(EnvError::Parse("more than one agent".into()));
                        }
                        Cell::Empty
                    }
                    other => return Err(EnvError::Parse(format!("unknown cell '{other}'"))),
                };
                grid.set(p, cell);
            }
        }
        Ok((grid, agent))
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_ascii(None))
    }
}

/// Outcome of a single [`GridworldInstance::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// One sampled maze with its running episode state.
#[derive(Clone, Debug, PartialEq)]
pub struct GridworldInstance {
    seed: u64,
    layout: Grid,
    grid: Grid,
    agent: Pos,
    steps: usize,
    done: bool,
    blue_left: usize,
    max_steps: usize,
    end_when_blue_collected: bool,
}

impl GridworldInstance {
    /// Deterministic layout for `seed`: walls, then jewels on cells reachable
    /// from the center. Layouts with too few reachable cells are redrawn.
    pub fn sample(seed: u64, config: &EnvConfig) -> Self {
        let mut r = rng::Rng::seed_from_u64(seed ^ 0x5EED_0F_6A1D);
        loop {
            let mut grid = Grid::empty();
            for i in 0..N_CELLS {
                let p = Pos::from_index(i);
                if p != CENTER && r.random_bool(config.wall_density) {
                    grid.set(p, Cell::Wall);
                }
            }
            let reach = grid.reachable_from(CENTER);
            let mut open: Vec<Pos> = (0..N_CELLS)
                .filter(|&i| reach[i] && i != CENTER.index())
                .map(Pos::from_index)
                .collect();
            let needed = config.n_blue + config.n_red;
            if open.len() < needed.max(1) {
                continue;
            }
            open.shuffle(&mut r);
            for (j, &p) in open.iter().take(needed).enumerate() {
                grid.set(p, if j < config.n_blue { Cell::Blue } else { Cell::Red });
            }
            return Self::from_layout(seed, grid, config);
        }
    }

    pub fn from_layout(seed: u64, layout: Grid, config: &EnvConfig) -> Self {
        Self {
            seed,
            grid: layout.clone(),
            blue_left: layout.count(Cell::Blue),
            layout,
            agent: CENTER,
            steps: 0,
            done: false,
            max_steps: config.max_steps,
            end_when_blue_collected: config.end_when_blue_collected,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> &Grid {
        &self.layout
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.grid = self.layout.clone();
        self.agent = CENTER;
        self.steps = 0;
        self.done = false;
        self.blue_left = self.layout.count(Cell::Blue);
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut out = vec![0.0; OBS_LEN];
        self.write_observation(&mut out);
        out
    }

    /// Writes the flattened one-hot observation into `out[..OBS_LEN]`.
    pub fn write_observation(&self, out: &mut [f64]) {
        let out = &mut out[..OBS_LEN];
        out.fill(0.0);
        for (i, &cell) in self.grid.cells().iter().enumerate() {
            if i != self.agent.index() {
                out[i * N_CHANNELS + cell.channel()] = 1.0;
            }
        }
    }

    /// Advance one step without materializing the observation.
    pub fn advance(&mut self, action: Action) -> Result<(f64, bool), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let mut reward = 0.0;
        if let Some(next) = self.agent.moved(action) {
            match self.grid.get(next) {
                Cell::Wall => {}
                cell => {
                    self.agent = next;
                    reward = match cell {
                        Cell::Blue => 1.0,
                        Cell::Red => -1.0,
                        _ => 0.0,
                    };
                    if reward != 0.0 {
                        self.grid.set(next, Cell::Empty);
                    }
                    if cell == Cell::Blue {
                        self.blue_left -= 1;
                    }
                }
            }
        }
        self.steps += 1;
        self.done = self.steps >= self.max_steps
            || (self.end_when_blue_collected && self.blue_left == 0 && reward > 0.0);
        Ok((reward, self.done))
    }

    pub fn step(&mut self, action: Action) -> Result<Step, EnvError> {
        let (reward, done) = self.advance(action)?;
        Ok(Step {
            obs: self.observation(),
            reward,
            done,
        })
    }

    pub fn step_index(&mut self, action: usize) -> Result<Step, EnvError> {
        let a = Action::from_index(action).ok_or(EnvError::BadAction(action))?;
        self.step(a)
    }
}
