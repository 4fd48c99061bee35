//! Four-room gridworld with deterministic dynamics.
//!
//! Coordinates are (x, y) with y = 0 at the top row. Moves into walls or the
//! boundary leave the cell unchanged.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The 13x13 four-room layout. Doorways at (6,3), (2,6), (9,7), (6,10);
/// 104 free cells.
pub const FOUR_ROOM_MAP: [&str; 13] = [
    "#############",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "## ####     #",
    "#     ### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#############",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];

    pub fn index(self) -> usize {
        match self {
            GridAction::Up => 0,
            GridAction::Down => 1,
            GridAction::Left => 2,
            GridAction::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        GridAction::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument { context: format!("action index {i} out of range") })
    }

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
        }
    }
}

/// How cells are encoded as observation vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridObs {
    /// One-hot over free cells scaled by sqrt(n_free); lies on the
    /// radius-sqrt(d) hypersphere by construction.
    OneHotSphere,
    /// (x, y) scaled to [0, 1].
    XyNorm,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    free_cells: Vec<(usize, usize)>,
    cell_index: Vec<Option<usize>>,
    pub obs: GridObs,
}

impl GridWorld {
    pub fn from_map(rows: &[&str], obs: GridObs) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument { context: "grid map rows must be non-empty and equal length".into() });
        }
        let mut walls = vec![false; width * height];
        let mut free_cells = Vec::new();
        let mut cell_index = vec![None; width * height];
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    walls[y * width + x] = true;
                } else {
                    cell_index[y * width + x] = Some(free_cells.len());
                    free_cells.push((x, y));
                }
            }
        }
        Ok(GridWorld { width, height, walls, free_cells, cell_index, obs })
    }

    pub fn four_room(obs: GridObs) -> Self {
        Self::from_map(&FOUR_ROOM_MAP, obs).expect("static map is valid")
    }

    pub fn n_free(&self) -> usize {
        self.free_cells.len()
    }

    pub fn free_cells(&self) -> &[(usize, usize)] {
        &self.free_cells
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && !self.walls[y * self.width + x]
    }

    /// Index of a free cell in the one-hot layout.
    pub fn cell_id(&self, x: usize, y: usize) -> Result<usize> {
        self.cell_index
            .get(y * self.width + x)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidArgument { context: format!("({x},{y}) is not a free cell") })
    }

    pub fn cell_at(&self, id: usize) -> (usize, usize) {
        self.free_cells[id]
    }

    /// Deterministic transition; blocked moves stay in place.
    pub fn step(&self, cell: (usize, usize), action: GridAction) -> (usize, usize) {
        let (dx, dy) = action.delta();
        let nx = cell.0 as isize + dx;
        let ny = cell.1 as isize + dy;
        if nx >= 0 && ny >= 0 && self.is_free(nx as usize, ny as usize) {
            (nx as usize, ny as usize)
        } else {
            cell
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.obs {
            GridObs::OneHotSphere => self.n_free(),
            GridObs::XyNorm => 2,
        }
    }

    pub fn observe(&self, cell: (usize, usize)) -> Vec<f64> {
        match self.obs {
            GridObs::OneHotSphere => {
                let d = self.n_free();
                let mut v = vec![0.0; d];
                let id = self.cell_id(cell.0, cell.1).expect("observe() on a free cell");
                v[id] = (d as f64).sqrt();
                v
            }
            GridObs::XyNorm => vec![
                cell.0 as f64 / (self.width - 1) as f64,
                cell.1 as f64 / (self.height - 1) as f64,
            ],
        }
    }

    /// Recover the cell an observation encodes.
    pub fn decode(&self, obs: &[f64]) -> (usize, usize) {
        match self.obs {
            GridObs::OneHotSphere => {
                let id = obs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite obs"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                self.free_cells[id]
            }
            GridObs::XyNorm => (
                (obs[0] * (self.width - 1) as f64).round() as usize,
                (obs[1] * (self.height - 1) as f64).round() as usize,
            ),
        }
    }
}
