//! Symbolic scenes for the referential game.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID: usize = 3;
pub const MAX_OBJECTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    White,
    Magenta,
}

impl Color {
    pub const ALL: [Color; 7] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::White,
        Color::Magenta,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::White => "white",
            Color::Magenta => "magenta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Ball,
    Pyramid,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Box, Shape::Ball, Shape::Pyramid];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Ball => "ball",
            Shape::Pyramid => "pyramid",
        }
    }
}

pub const ROW_WORDS: [&str; GRID] = ["top", "middle", "bottom"];
pub const COL_WORDS: [&str; GRID] = ["left", "center", "right"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
}

/// A background plus one to three objects on a 3x3 grid.
///
/// Serializes as `{background, objects: [{shape, color, row, col}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub background: Color,
    pub objects: Vec<SceneObject>,
}

/// Width of [`Scene::features`].
pub const SCENE_FEATURES: usize = Color::ALL.len() + MAX_OBJECTS * OBJECT_FEATURES;
const OBJECT_FEATURES: usize = 1 + Color::ALL.len() + Shape::ALL.len() + 2 * GRID;

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(Error::Config(format!(
                "scene must have 1..={MAX_OBJECTS} objects, has {}",
                self.objects.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.row >= GRID || o.col >= GRID {
                return Err(Error::Config(format!("object {i} is off the grid")));
            }
            if o.color == self.background {
                return Err(Error::Config(format!(
                    "object {i} has the background color"
                )));
            }
            if self.objects[..i]
                .iter()
                .any(|p| (p.row, p.col) == (o.row, o.col))
            {
                return Err(Error::Config(format!("object {i} shares a cell")));
            }
        }
        Ok(())
    }

    /// Draws a valid scene with `1..=max_objects` objects.
    pub fn random<R: Rng + ?Sized>(max_objects: usize, rng: &mut R) -> Scene {
        let n = rng.gen_range(1..=max_objects.clamp(1, MAX_OBJECTS));
        let mut cells: Vec<(usize, usize)> = (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .collect();
        cells.shuffle(rng);
        let objects: Vec<SceneObject> = cells[..n]
            .iter()
            .map(|&(row, col)| SceneObject {
                shape: *Shape::ALL.choose(rng).unwrap(),
                color: *Color::ALL.choose(rng).unwrap(),
                row,
                col,
            })
            .collect();
        let background = Scene::random_background(&objects, rng);
        Scene {
            background,
            objects,
        }
    }

    /// A background color differing from every object color.
    pub fn random_background<R: Rng + ?Sized>(objects: &[SceneObject], rng: &mut R) -> Color {
        let free: Vec<Color> = Color::ALL
            .into_iter()
            .filter(|c| objects.iter().all(|o| o.color != *c))
            .collect();
        *free.choose(rng).expect("at most 3 of 7 colors are taken")
    }

    /// Same objects, independently re-drawn background: the other agent's viewpoint.
    pub fn with_new_background<R: Rng + ?Sized>(&self, rng: &mut R) -> Scene {
        Scene {
            background: Scene::random_background(&self.objects, rng),
            objects: self.objects.clone(),
        }
    }

    /// True when the two scenes differ in some non-background attribute.
    pub fn differs_from(&self, other: &Scene) -> bool {
        self.objects != other.objects
    }

    /// One-hot encoding: background color, then per object slot a presence
    /// bit and color/shape/row/col one-hots.
    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; SCENE_FEATURES];
        f[self.background.index()] = 1.0;
        for (i, o) in self.objects.iter().enumerate() {
            let base = Color::ALL.len() + i * OBJECT_FEATURES;
            f[base] = 1.0;
            f[base + 1 + o.color.index()] = 1.0;
            f[base + 1 + Color::ALL.len() + o.shape.index()] = 1.0;
            f[base + 1 + Color::ALL.len() + Shape::ALL.len() + o.row] = 1.0;
            f[base + 1 + Color::ALL.len() + Shape::ALL.len() + GRID + o.col] = 1.0;
        }
        f
    }
}

/// Disjoint train/test scene pools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneDataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl SceneDataset {
    /// Draws `n_train + n_test` distinct scenes (distinct in objects and
    /// background) and splits them.
    pub fn generate<R: Rng + ?Sized>(
        n_train: usize,
        n_test: usize,
        max_objects: usize,
        rng: &mut R,
    ) -> Result<SceneDataset> {
        let want = n_train + n_test;
        if n_train < 2 || n_test < 2 {
            return Err(Error::Config("need at least two train and two test scenes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut all = Vec::with_capacity(want);
        let mut attempts = 0usize;
        while all.len() < want {
            attempts += 1;
            if attempts > want * 1000 {
                return Err(Error::Config(format!(
                    "cannot draw {want} distinct scenes with max_objects={max_objects}"
                )));
            }
            let s = Scene::random(max_objects, rng);
            if seen.insert(s.clone()) {
                all.push(s);
            }
        }
        let test = all.split_off(n_train);
        Ok(SceneDataset { train: all, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_scenes_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = Scene::random(3, &mut rng);
            s.validate().unwrap();
        }
    }

    #[test]
    fn json_layout_matches_wire_format() {
        let s = Scene {
            background: Color::White,
            objects: vec![SceneObject {
                shape: Shape::Box,
                color: Color::Red,
                row: 0,
                col: 2,
            }],
        };
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "background": "white",
                "objects": [{"shape": "box", "color": "red", "row": 0, "col": 2}]
            })
        );
        let back: Scene = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validation_rejects_background_clash_and_shared_cells() {
        let o = SceneObject {
            shape: Shape::Ball,
            color: Color::Blue,
            row: 1,
            col: 1,
        };
        let clash = Scene {
            background: Color::Blue,
            objects: vec![o],
        };
        assert!(clash.validate().is_err());
        let shared = Scene {
            background: Color::Red,
            objects: vec![o, SceneObject { color: Color::Green, ..o }],
        };
        assert!(shared.validate().is_err());
    }

    #[test]
    fn dataset_is_distinct_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = SceneDataset::generate(900, 100, 1, &mut rng).unwrap();
        assert_eq!(d.train.len(), 900);
        assert_eq!(d.test.len(), 100);
        let set: std::collections::HashSet<_> = d.train.iter().chain(&d.test).collect();
        assert_eq!(set.len(), 1000);
    }

    #[test]
    fn features_are_one_hot_per_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Scene::random(3, &mut rng);
        let f = s.features();
        assert_eq!(f.len(), SCENE_FEATURES);
        let ones = f.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 1 + 5 * s.objects.len());
    }
}
