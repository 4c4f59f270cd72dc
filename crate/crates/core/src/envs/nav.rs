//! Two-agent grid navigation: both agents must `enter` the target room on the
//! same step. Neither agent sees the other.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Observation, StepResult};
use crate::error::{Error, Result};

pub const SUCCESS_REWARD: f64 = 1.0;
pub const SOLO_PENALTY: f64 = -0.5;
pub const STEP_COST: f64 = -0.01;
pub const DEFAULT_T_MAX: usize = 64;

const THREE_ROOMS: &str = include_str!("../../layouts/three_rooms.json");

/// Layouts shipped with the crate, by id.
pub const BUNDLED_LAYOUTS: &[&str] = &["three_rooms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Room(usize),
    /// Door cell belonging to the given room.
    Door(usize),
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Wall => s.serialize_str("wall"),
            Cell::Room(r) => s.serialize_u64(*r as u64),
            Cell::Door(r) => s.serialize_str(&format!("door:{r}")),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(r) => Ok(Cell::Room(r)),
            Raw::Text(t) if t == "wall" => Ok(Cell::Wall),
            Raw::Text(t) => {
                if let Some(id) = t.strip_prefix("door:") {
                    id.parse()
                        .map(Cell::Door)
                        .map_err(|_| serde::de::Error::custom(format!("bad door cell `{t}`")))
                } else {
                    t.parse()
                        .map(Cell::Room)
                        .map_err(|_| serde::de::Error::custom(format!("bad cell `{t}`")))
                }
            }
        }
    }
}

/// Grid map: row-major cells plus room names, the target room and per-agent start cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub rooms: Vec<String>,
    pub target_room: usize,
    pub starts: [Vec<(usize, usize)>; 2],
    pub cells: Vec<Cell>,
}

impl Layout {
    pub fn bundled(id: &str) -> Result<Layout> {
        let text = match id {
            "three_rooms" => THREE_ROOMS,
            other => {
                return Err(Error::Config(format!(
                    "unknown navigation layout `{other}` (bundled: {BUNDLED_LAYOUTS:?})"
                )))
            }
        };
        let layout: Layout = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.width + c]
    }

    /// Out-of-bounds reads as wall.
    pub fn cell_at(&self, r: isize, c: isize) -> Cell {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            Cell::Wall
        } else {
            self.cell(r as usize, c as usize)
        }
    }

    /// Cells an agent can stand on by moving: everything except walls and the
    /// target room's interior (reachable only through `enter`).
    pub fn walkable(&self, r: usize, c: usize) -> bool {
        match self.cell(r, c) {
            Cell::Wall => false,
            Cell::Room(id) => id != self.target_room,
            Cell::Door(_) => true,
        }
    }

    pub fn is_target_door(&self, r: usize, c: usize) -> bool {
        self.cell(r, c) == Cell::Door(self.target_room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.width * self.height {
            return Err(Error::Config(format!(
                "layout has {} cells, expected {}x{}",
                self.cells.len(),
                self.width,
                self.height
            )));
        }
        if self.target_room >= self.rooms.len() {
            return Err(Error::Config("target room id out of range".into()));
        }
        for cell in &self.cells {
            if let Cell::Room(id) | Cell::Door(id) = cell {
                if *id >= self.rooms.len() {
                    return Err(Error::Config(format!("cell refers to unknown room {id}")));
                }
            }
        }
        for (agent, starts) in self.starts.iter().enumerate() {
            if starts.is_empty() {
                return Err(Error::Config(format!("agent {agent} has no start cells")));
            }
            for &(r, c) in starts {
                if r >= self.height || c >= self.width || !self.walkable(r, c) {
                    return Err(Error::Config(format!(
                        "start ({r},{c}) of agent {agent} is not walkable"
                    )));
                }
                if !self.reaches_target_door(r, c) {
                    return Err(Error::Config(format!(
                        "target room unreachable from ({r},{c})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn reaches_target_door(&self, r: usize, c: usize) -> bool {
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([(r, c)]);
        seen[r * self.width + c] = true;
        while let Some((r, c)) = queue.pop_front() {
            if self.is_target_door(r, c) {
                return true;
            }
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.cell_at(nr, nc) == Cell::Wall {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if self.walkable(nr, nc) && !seen[nr * self.width + nc] {
                    seen[nr * self.width + nc] = true;
                    queue.push_back((nr, nc));
                }
            }
        }
        false
    }

    /// Path length from every cell to the nearest of `sources`, moving through
    /// walkable cells; `None` where unreachable.
    pub fn distances_from(&self, sources: &[(usize, usize)]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        let mut queue = VecDeque::new();
        for &(r, c) in sources {
            dist[r * self.width + c] = Some(0);
            queue.push_back((r, c));
        }
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r * self.width + c].expect("queued cells have a distance");
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.cell_at(nr, nc) == Cell::Wall {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if self.walkable(nr, nc) && dist[nr * self.width + nc].is_none() {
                    dist[nr * self.width + nc] = Some(d + 1);
                    queue.push_back((nr, nc));
                }
            }
        }
        dist
    }

    pub fn target_doors(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_target_door(r, c))
            .collect()
    }

    /// Number of distinct cell kinds in the neighborhood encoding.
    pub fn cell_kinds(&self) -> usize {
        1 + 2 * self.rooms.len()
    }

    fn kind_index(&self, cell: Cell) -> usize {
        match cell {
            Cell::Wall => 0,
            Cell::Room(r) => 1 + r,
            Cell::Door(r) => 1 + self.rooms.len() + r,
        }
    }

    /// Width of [`NavObs::features`] under this layout.
    pub fn feature_width(&self) -> usize {
        self.height + self.width + 9 * self.cell_kinds() + 1
    }
}

/// Training starts that widen outward from each agent's target door.
///
/// Level `k` draws an agent's start from its own target doors and start cells
/// at path distance `<= k` from them. Once the level reaches the farthest start
/// cell, the layout's own start cells are used unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct StartCurriculum {
    ranked: [Vec<(usize, (usize, usize))>; 2],
    max_level: usize,
    pub level: usize,
}

impl StartCurriculum {
    pub fn new(layout: &Layout) -> StartCurriculum {
        let nearest = |cells: &[(usize, usize)], door: (usize, usize)| {
            let d = layout.distances_from(&[door]);
            cells
                .iter()
                .filter_map(|&(r, c)| d[r * layout.width + c])
                .min()
                .unwrap_or(usize::MAX)
        };
        let ranked: [Vec<(usize, (usize, usize))>; 2] = std::array::from_fn(|agent| {
            // a door belongs to the agent whose start cells are closer to it
            let own: Vec<(usize, usize)> = layout
                .target_doors()
                .into_iter()
                .filter(|&door| nearest(&layout.starts[agent], door) <= nearest(&layout.starts[1 - agent], door))
                .collect();
            let d = layout.distances_from(&own);
            let mut cells: Vec<(usize, (usize, usize))> = own.iter().map(|&door| (0, door)).collect();
            for &(r, c) in &layout.starts[agent] {
                if !own.contains(&(r, c)) {
                    cells.push((d[r * layout.width + c].unwrap_or(usize::MAX), (r, c)));
                }
            }
            cells.sort();
            cells
        });
        let max_level = ranked
            .iter()
            .flat_map(|cells| cells.iter().map(|&(d, _)| d))
            .filter(|&d| d != usize::MAX)
            .max()
            .unwrap_or(0);
        StartCurriculum {
            ranked,
            max_level,
            level: 0,
        }
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn complete(&self) -> bool {
        self.level > self.max_level
    }

    /// Start cells for `agent` at the current level.
    pub fn cells(&self, agent: usize, layout: &Layout) -> Vec<(usize, usize)> {
        if self.complete() {
            return layout.starts[agent].clone();
        }
        self.ranked[agent]
            .iter()
            .take_while(|&&(d, _)| d <= self.level)
            .map(|&(_, cell)| cell)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Enter,
}

impl NavAction {
    pub const ALL: [NavAction; 6] = [
        NavAction::Up,
        NavAction::Down,
        NavAction::Left,
        NavAction::Right,
        NavAction::Stay,
        NavAction::Enter,
    ];

    pub fn from_index(i: usize) -> Result<NavAction> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Protocol(format!("navigation action {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What one agent perceives: own position, 3x3 neighborhood, target-door flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavObs {
    pub pos: (usize, usize),
    pub neighborhood: [Cell; 9],
    pub at_target_door: bool,
}

impl NavObs {
    pub fn features(&self, layout: &Layout) -> Vec<f64> {
        let mut f = vec![0.0; layout.feature_width()];
        f[self.pos.0] = 1.0;
        f[layout.height + self.pos.1] = 1.0;
        let base = layout.height + layout.width;
        let kinds = layout.cell_kinds();
        for (i, cell) in self.neighborhood.iter().enumerate() {
            f[base + i * kinds + layout.kind_index(*cell)] = 1.0;
        }
        if self.at_target_door {
            f[base + 9 * kinds] = 1.0;
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub layout: Arc<Layout>,
    pub positions: [(usize, usize); 2],
    pub inside: [bool; 2],
    pub step: usize,
    pub t_max: usize,
    pub done: bool,
}

impl NavState {
    pub fn target_room(&self) -> usize {
        self.layout.target_room
    }

    pub fn observe(&self, agent: usize) -> NavObs {
        let (r, c) = self.positions[agent];
        let mut neighborhood = [Cell::Wall; 9];
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                neighborhood[((dr + 1) * 3 + dc + 1) as usize] =
                    self.layout.cell_at(r as isize + dr, c as isize + dc);
            }
        }
        NavObs {
            pos: (r, c),
            neighborhood,
            at_target_door: self.layout.is_target_door(r, c),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..2).map(|i| Observation::Nav(self.observe(i))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NavGame {
    pub layout: Arc<Layout>,
    pub t_max: usize,
}

impl NavGame {
    pub fn new(layout_id: &str, t_max: usize) -> Result<NavGame> {
        if t_max == 0 {
            return Err(Error::Config("navigation horizon must be positive".into()));
        }
        Ok(NavGame {
            layout: Arc::new(Layout::bundled(layout_id)?),
            t_max,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.layout.feature_width()
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (NavState, Vec<Observation>) {
        let starts = [self.layout.starts[0].as_slice(), self.layout.starts[1].as_slice()];
        self.reset_from(starts, rng).expect("layout starts are validated")
    }

    /// Starts each agent on a cell drawn uniformly from its own list.
    pub fn reset_from<R: Rng + ?Sized>(
        &self,
        starts: [&[(usize, usize)]; 2],
        rng: &mut R,
    ) -> Result<(NavState, Vec<Observation>)> {
        for (agent, cells) in starts.iter().enumerate() {
            if cells.is_empty() {
                return Err(Error::Config(format!("agent {agent} has no start cells")));
            }
            if let Some(&(r, c)) = cells
                .iter()
                .find(|&&(r, c)| r >= self.layout.height || c >= self.layout.width || !self.layout.walkable(r, c))
            {
                return Err(Error::Config(format!("start ({r},{c}) of agent {agent} is not walkable")));
            }
        }
        let positions = [
            *starts[0].choose(rng).expect("checked non-empty"),
            *starts[1].choose(rng).expect("checked non-empty"),
        ];
        let state = NavState {
            layout: Arc::clone(&self.layout),
            positions,
            inside: [false; 2],
            step: 0,
            t_max: self.t_max,
            done: false,
        };
        let obs = state.observations();
        Ok((state, obs))
    }

    /// Applies a joint action.
    ///
    /// Reward: +1 when both agents enter on this step, -0.5 when exactly one
    /// agent is inside, 0 on the horizon step, -0.01 otherwise.
    pub fn step(state: &mut NavState, actions: &[NavAction]) -> Result<StepResult> {
        if state.done {
            return Err(Error::Protocol("navigation episode already finished".into()));
        }
        if actions.len() != 2 {
            return Err(Error::Protocol(format!(
                "joint action must have 2 entries, got {}",
                actions.len()
            )));
        }
        let mut entered = [false; 2];
        for (agent, &action) in actions.iter().enumerate() {
            if state.inside[agent] {
                continue;
            }
            let (r, c) = state.positions[agent];
            let delta = match action {
                NavAction::Up => Some((-1isize, 0isize)),
                NavAction::Down => Some((1, 0)),
                NavAction::Left => Some((0, -1)),
                NavAction::Right => Some((0, 1)),
                NavAction::Stay => None,
                NavAction::Enter => {
                    if state.layout.is_target_door(r, c) {
                        state.inside[agent] = true;
                        entered[agent] = true;
                    }
                    None
                }
            };
            if let Some((dr, dc)) = delta {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if state.layout.cell_at(nr, nc) != Cell::Wall
                    && state.layout.walkable(nr as usize, nc as usize)
                {
                    state.positions[agent] = (nr as usize, nc as usize);
                }
            }
        }
        state.step += 1;
        let n_inside = state.inside.iter().filter(|&&b| b).count();
        let (reward, done, outcome) = if entered[0] && entered[1] {
            (SUCCESS_REWARD, true, 1.0)
        } else if n_inside == 1 {
            (SOLO_PENALTY, true, -1.0)
        } else if state.step >= state.t_max {
            (0.0, true, 0.0)
        } else {
            (STEP_COST, false, 0.0)
        };
        state.done = done;
        let mut info = BTreeMap::new();
        info.insert("success".to_string(), if outcome > 0.0 { 1.0 } else { 0.0 });
        info.insert("solo_entry".to_string(), if outcome < 0.0 { 1.0 } else { 0.0 });
        info.insert("step".to_string(), state.step as f64);
        Ok(StepResult {
            observations: state.observations(),
            reward,
            done,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use NavAction::*;

    fn game() -> NavGame {
        NavGame::new("three_rooms", DEFAULT_T_MAX).unwrap()
    }

    fn at_doors(g: &NavGame) -> NavState {
        let (mut s, _) = g.reset(&mut ChaCha8Rng::seed_from_u64(0));
        s.positions = [(5, 2), (5, 8)];
        s
    }

    #[test]
    fn bundled_layout_is_valid_and_sized() {
        let l = Layout::bundled("three_rooms").unwrap();
        assert_eq!((l.width, l.height, l.rooms.len()), (11, 11, 3));
        assert!(l.is_target_door(5, 2) && l.is_target_door(5, 8));
    }

    #[test]
    fn unknown_layout_is_config_error() {
        assert!(matches!(NavGame::new("mansion", 64), Err(Error::Config(_))));
    }

    #[test]
    fn layout_json_round_trips() {
        let l = Layout::bundled("three_rooms").unwrap();
        let back: Layout = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn simultaneous_entry_succeeds() {
        let g = game();
        let mut s = at_doors(&g);
        let r = NavGame::step(&mut s, &[Enter, Enter]).unwrap();
        assert_eq!((r.reward, r.done), (1.0, true));
        assert!(matches!(NavGame::step(&mut s, &[Stay, Stay]), Err(Error::Protocol(_))));
    }

    #[test]
    fn solo_entry_is_punished() {
        let g = game();
        let mut s = at_doors(&g);
        let r = NavGame::step(&mut s, &[Enter, Stay]).unwrap();
        assert_eq!((r.reward, r.done), (-0.5, true));
    }

    #[test]
    fn enter_away_from_target_door_does_nothing() {
        let g = game();
        let mut s = at_doors(&g);
        s.positions[0] = (3, 5); // door of the bedroom, not the target
        let r = NavGame::step(&mut s, &[Enter, Stay]).unwrap();
        assert_eq!((r.reward, r.done), (-0.01, false));
    }

    #[test]
    fn staying_costs_a_step() {
        let g = game();
        let (mut s, _) = g.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let r = NavGame::step(&mut s, &[Stay, Stay]).unwrap();
        assert_eq!((r.reward, r.done), (-0.01, false));
    }

    #[test]
    fn walls_and_target_interior_block_movement() {
        let g = game();
        let mut s = at_doors(&g);
        NavGame::step(&mut s, &[Down, Left]).unwrap();
        assert_eq!(s.positions, [(5, 2), (5, 8)]);
        s.positions[0] = (1, 1);
        NavGame::step(&mut s, &[Up, Stay]).unwrap();
        assert_eq!(s.positions[0], (1, 1));
    }

    #[test]
    fn horizon_ends_with_zero_reward() {
        let g = NavGame::new("three_rooms", 3).unwrap();
        let (mut s, _) = g.reset(&mut ChaCha8Rng::seed_from_u64(2));
        let rewards: Vec<f64> = (0..3)
            .map(|_| NavGame::step(&mut s, &[Stay, Stay]).unwrap().reward)
            .collect();
        assert_eq!(rewards, vec![-0.01, -0.01, 0.0]);
        assert!(s.done);
    }

    #[test]
    fn malformed_joint_action_is_rejected() {
        let g = game();
        let (mut s, _) = g.reset(&mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(NavGame::step(&mut s, &[Stay]), Err(Error::Protocol(_))));
        assert!(NavAction::from_index(6).is_err());
    }

    #[test]
    fn replaying_actions_reproduces_rewards() {
        let g = game();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut s, _) = g.reset(&mut rng);
            let mut rewards = Vec::new();
            while !s.done {
                let a = [
                    *NavAction::ALL.choose(&mut rng).unwrap(),
                    *NavAction::ALL.choose(&mut rng).unwrap(),
                ];
                rewards.push(NavGame::step(&mut s, &a).unwrap().reward);
            }
            rewards
        };
        assert_eq!(run(17), run(17));
    }

    #[test]
    fn distances_follow_walkable_paths() {
        let l = Layout::bundled("three_rooms").unwrap();
        let d = l.distances_from(&[(5, 2)]);
        assert_eq!(d[4 * l.width + 2], Some(1));
        assert_eq!(d[l.width + 1], Some(5));
        assert_eq!(d[0], None);
        assert_eq!(d[7 * l.width + 2], None, "target interior is not walkable");
    }

    #[test]
    fn curriculum_widens_from_each_agents_door() {
        let l = Layout::bundled("three_rooms").unwrap();
        let mut c = StartCurriculum::new(&l);
        assert_eq!(c.cells(0, &l), vec![(5, 2)]);
        assert_eq!(c.cells(1, &l), vec![(5, 8)]);
        c.level = 1;
        assert_eq!(c.cells(0, &l), vec![(5, 2), (4, 2)]);
        let mut sizes = Vec::new();
        while !c.complete() {
            sizes.push(c.cells(0, &l).len());
            c.level += 1;
        }
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
        assert_eq!(c.level, c.max_level() + 1);
        assert_eq!(c.cells(0, &l), l.starts[0]);
    }

    #[test]
    fn reset_from_rejects_bad_starts() {
        let g = game();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (s, _) = g.reset_from([&[(5, 2)], &[(4, 8)]], &mut rng).unwrap();
        assert_eq!(s.positions, [(5, 2), (4, 8)]);
        assert!(g.reset_from([&[], &[(4, 8)]], &mut rng).is_err());
        assert!(g.reset_from([&[(0, 0)], &[(4, 8)]], &mut rng).is_err());
        assert!(g.reset_from([&[(7, 2)], &[(4, 8)]], &mut rng).is_err());
    }

    #[test]
    fn observation_marks_target_door() {
        let g = game();
        let s = at_doors(&g);
        let o = s.observe(0);
        assert!(o.at_target_door);
        assert_eq!(o.neighborhood[7], Cell::Room(2));
        let f = o.features(&g.layout);
        assert_eq!(f.len(), g.feature_width());
        assert_eq!(*f.last().unwrap(), 1.0);
    }
}
