//! Scripted annotator: a compositional description grammar, minimal
//! distinguishing descriptions, and synthetic pretraining corpora.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::envs::scene::{COL_WORDS, ROW_WORDS};
use crate::envs::{Color, Layout, NavObs, Observation, Scene, SceneObject, Shape};
use crate::error::{Error, Result};

fn object_clause(o: &SceneObject) -> [&'static str; 5] {
    [o.color.word(), o.shape.word(), "at", ROW_WORDS[o.row], COL_WORDS[o.col]]
}

/// `"<color> <shape> at <row> <col> [and ...] on <bg> background"`.
pub fn describe_full(scene: &Scene) -> Vec<String> {
    let mut out: Vec<&str> = Vec::new();
    for (i, o) in scene.objects.iter().enumerate() {
        if i > 0 {
            out.push("and");
        }
        out.extend(object_clause(o));
    }
    out.extend(["on", scene.background.word(), "background"]);
    out.into_iter().map(String::from).collect()
}

/// Mentions only the attributes of the target that differ from the
/// distractor, ordered color, shape, row, column. With several objects the
/// lowest-index target object that differs is described; when the target's
/// objects are all matched and the distractor has more, the first extra one
/// is negated (`not <color> <shape> <row> <col>`). Backgrounds are never
/// mentioned.
pub fn describe_distinguishing(target: &Scene, distractor: &Scene) -> Result<Vec<String>> {
    for (i, t) in target.objects.iter().enumerate() {
        let words: Vec<&str> = match distractor.objects.get(i) {
            None => object_clause(t).into_iter().filter(|w| *w != "at").collect(),
            Some(d) if d == t => continue,
            Some(d) => {
                let mut w = Vec::new();
                if t.color != d.color {
                    w.push(t.color.word());
                }
                if t.shape != d.shape {
                    w.push(t.shape.word());
                }
                if t.row != d.row {
                    w.push(ROW_WORDS[t.row]);
                }
                if t.col != d.col {
                    w.push(COL_WORDS[t.col]);
                }
                w
            }
        };
        return Ok(words.into_iter().map(String::from).collect());
    }
    if let Some(extra) = distractor.objects.get(target.objects.len()) {
        let mut words = vec!["not"];
        words.extend(object_clause(extra).into_iter().filter(|w| *w != "at"));
        return Ok(words.into_iter().map(String::from).collect());
    }
    Err(Error::Oracle(
        "target and distractor share every described object".into(),
    ))
}

/// Navigation annotation: whether the agent stands at a door of the target room.
pub fn describe_nav(obs: &NavObs) -> Vec<String> {
    let words: &[&str] = if obs.at_target_door {
        &["at", "target", "door"]
    } else {
        &["not", "at", "door"]
    };
    words.iter().map(|s| s.to_string()).collect()
}

/// What the oracle annotator says for a speaker observation.
pub fn describe(obs: &Observation) -> Result<Vec<String>> {
    match obs {
        Observation::RefSpeaker { scenes, target } => {
            if *target > 1 {
                return Err(Error::Oracle("target index must be 0 or 1".into()));
            }
            describe_distinguishing(&scenes[*target], &scenes[1 - target])
        }
        Observation::Nav(o) => Ok(describe_nav(o)),
        Observation::RefListener { .. } => Err(Error::Oracle(
            "listener observations carry no target to describe".into(),
        )),
    }
}

/// Full descriptions of independently drawn scenes.
pub fn gen_pretrain_corpus<R: Rng + ?Sized>(
    n: usize,
    max_objects: usize,
    rng: &mut R,
) -> Vec<Vec<String>> {
    (0..n)
        .map(|_| describe_full(&Scene::random(max_objects, rng)))
        .collect()
}

/// Templated first-person location sentences for a navigation layout.
pub fn gen_nav_corpus<R: Rng + ?Sized>(n: usize, layout: &Layout, rng: &mut R) -> Vec<Vec<String>> {
    let target = layout.rooms[layout.target_room].as_str();
    (0..n)
        .map(|_| {
            let room = layout.rooms.choose(rng).expect("layouts have rooms").as_str();
            let words: Vec<&str> = match rng.gen_range(0..6) {
                0 => vec!["i", "am", "in", "the", room],
                1 => vec!["i", "am", "at", "the", "door", "of", "the", target],
                2 => vec!["i", "am", "not", "near", "the", "door"],
                3 => vec!["at", "target", "door"],
                4 => vec!["not", "at", "door"],
                _ => vec!["wait", "here"],
            };
            words.into_iter().map(String::from).collect()
        })
        .collect()
}

/// Attribute constraints read back from an utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedMention {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
    pub row: Option<usize>,
    pub col: Option<usize>,
}

impl ParsedMention {
    pub fn matches(&self, o: &SceneObject) -> bool {
        self.color.is_none_or(|c| c == o.color)
            && self.shape.is_none_or(|s| s == o.shape)
            && self.row.is_none_or(|r| r == o.row)
            && self.col.is_none_or(|c| c == o.col)
    }

    pub fn is_empty(&self) -> bool {
        *self == ParsedMention::default()
    }
}

/// Reads the first attribute word of each kind; unrelated words are ignored.
pub fn parse_mention<S: AsRef<str>>(words: &[S]) -> ParsedMention {
    let mut m = ParsedMention::default();
    for w in words {
        let w = w.as_ref();
        if let Some(c) = Color::ALL.into_iter().find(|c| c.word() == w) {
            m.color.get_or_insert(c);
        } else if let Some(s) = Shape::ALL.into_iter().find(|s| s.word() == w) {
            m.shape.get_or_insert(s);
        } else if let Some(r) = ROW_WORDS.iter().position(|x| *x == w) {
            m.row.get_or_insert(r);
        } else if let Some(c) = COL_WORDS.iter().position(|x| *x == w) {
            m.col.get_or_insert(c);
        }
    }
    m
}

/// Symbolic listener: picks the unique candidate whose first object matches
/// every attribute mentioned, or `None` when the utterance is ambiguous.
pub fn rule_listener<S: AsRef<str>>(words: &[S], candidates: &[Scene; 2]) -> Option<usize> {
    let m = parse_mention(words);
    if m.is_empty() {
        return None;
    }
    let hits: Vec<usize> = (0..2)
        .filter(|&i| candidates[i].objects.first().is_some_and(|o| m.matches(o)))
        .collect();
    match hits.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// True when `words` is exactly a full description of some single-object scene.
pub fn is_full_template<S: AsRef<str>>(words: &[S]) -> bool {
    let w: Vec<&str> = words.iter().map(|s| s.as_ref()).collect();
    if w.len() != 8 {
        return false;
    }
    let color = |x: &str| Color::ALL.iter().any(|c| c.word() == x);
    color(w[0])
        && Shape::ALL.iter().any(|s| s.word() == w[1])
        && w[2] == "at"
        && ROW_WORDS.contains(&w[3])
        && COL_WORDS.contains(&w[4])
        && w[5] == "on"
        && color(w[6])
        && w[7] == "background"
        && w[0] != w[6]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::SceneDataset;
    use crate::speaker::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(color: Color, shape: Shape, row: usize, col: usize) -> SceneObject {
        SceneObject {
            shape,
            color,
            row,
            col,
        }
    }

    fn single(o: SceneObject, bg: Color) -> Scene {
        Scene {
            background: bg,
            objects: vec![o],
        }
    }

    #[test]
    fn full_description_template() {
        let s = single(obj(Color::Red, Shape::Box, 0, 0), Color::White);
        assert_eq!(
            describe_full(&s).join(" "),
            "red box at top left on white background"
        );
        assert_eq!(describe_full(&s), describe_full(&s));
        assert!(is_full_template(&describe_full(&s)));
    }

    #[test]
    fn color_change_alters_only_color_token() {
        let a = describe_full(&single(obj(Color::Red, Shape::Ball, 1, 2), Color::White));
        let b = describe_full(&single(obj(Color::Blue, Shape::Ball, 1, 2), Color::White));
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diffs, vec![0]);
    }

    #[test]
    fn multi_object_clauses_joined_with_and() {
        let s = Scene {
            background: Color::Green,
            objects: vec![
                obj(Color::Red, Shape::Box, 0, 0),
                obj(Color::Blue, Shape::Ball, 2, 1),
            ],
        };
        assert_eq!(
            describe_full(&s).join(" "),
            "red box at top left and blue ball at bottom center on green background"
        );
    }

    #[test]
    fn distinguishing_descriptions() {
        let t = single(obj(Color::Purple, Shape::Box, 0, 2), Color::White);
        let color_only = single(obj(Color::Red, Shape::Box, 0, 2), Color::Green);
        assert_eq!(describe_distinguishing(&t, &color_only).unwrap(), vec!["purple"]);
        let color_col = single(obj(Color::Red, Shape::Box, 0, 0), Color::White);
        assert_eq!(
            describe_distinguishing(&t, &color_col).unwrap().join(" "),
            "purple right"
        );
        let all = single(obj(Color::Red, Shape::Ball, 2, 0), Color::White);
        assert_eq!(
            describe_distinguishing(&t, &all).unwrap().join(" "),
            "purple box top right"
        );
        let same_objects = single(t.objects[0], Color::Green);
        assert!(matches!(
            describe_distinguishing(&t, &same_objects),
            Err(Error::Oracle(_))
        ));
        let superset = Scene {
            background: Color::Green,
            objects: vec![t.objects[0], obj(Color::Red, Shape::Ball, 2, 0)],
        };
        assert_eq!(
            describe_distinguishing(&t, &superset).unwrap().join(" "),
            "not red ball bottom left"
        );
    }

    #[test]
    fn pretrain_corpus_is_grammatical_and_in_vocabulary() {
        let vocab = Vocabulary::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = gen_pretrain_corpus(10_000, 1, &mut rng);
        let mut counts = [0usize; 7];
        for s in &corpus {
            assert!(is_full_template(s));
            vocab.encode(s).unwrap();
            counts[Color::ALL.iter().position(|c| c.word() == s[0]).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 7.0).abs() < 0.03);
        }
        let layout = Layout::bundled("three_rooms").unwrap();
        for s in gen_nav_corpus(200, &layout, &mut rng) {
            vocab.encode(&s).unwrap();
        }
    }

    #[test]
    fn distinguishing_is_economical_and_sufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = SceneDataset::generate(300, 2, 1, &mut rng).unwrap();
        for (i, t) in data.train.iter().enumerate() {
            let d = &data.train[(i + 1) % data.train.len()];
            if !t.differs_from(d) {
                continue;
            }
            let words = describe_distinguishing(t, d).unwrap();
            assert!(words.len() <= describe_full(t).len());
            assert_eq!(rule_listener(&words, &[t.clone(), d.clone()]), Some(0));
            assert_eq!(rule_listener(&words, &[d.clone(), t.clone()]), Some(1));
        }
    }

    #[test]
    fn describe_dispatches_on_observation() {
        let t = single(obj(Color::Purple, Shape::Box, 0, 2), Color::White);
        let d = single(obj(Color::Red, Shape::Box, 0, 2), Color::Green);
        let obs = Observation::RefSpeaker {
            scenes: [d.clone(), t.clone()],
            target: 1,
        };
        assert_eq!(describe(&obs).unwrap(), vec!["purple"]);
        let listener = Observation::RefListener { candidates: [t, d] };
        assert!(describe(&listener).is_err());
    }
}
