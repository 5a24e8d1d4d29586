use super::{Clarification, ClarificationSlot, Hazard, HazardKind, Interpretation, ParseResult, Place, TaskKind, TaskSpec};
use crate::constraints::SemanticMap;
use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    Point(Vec2),
    Sep,
}

const SEPARATOR_WORDS: &[&str] = &["and", "then", "but", "while", "also"];
const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "my", "our", "your"];
const GROUND_HAZARD: &[&str] = &["spill", "spilled", "spilt", "wet", "puddle", "slippery", "leak", "leaking", "leaked"];
const PRONOUNS: &[&str] = &[
    "him", "her", "them", "me", "us", "someone", "somebody", "person", "guest", "visitor", "he", "she", "they",
];
const VIA_MARKERS: &[&str] = &["near", "past", "via", "by", "through", "beside"];
const FILLER: &[&str] = &["please", "now", "quickly", "slowly", "first", "again", "with", "for", "carefully"];

fn verb_kind(w: &str) -> Option<TaskKind> {
    match w {
        "go" | "navigate" | "move" | "head" | "drive" => Some(TaskKind::PointToPoint),
        "follow" => Some(TaskKind::Following),
        "guide" | "lead" | "take" | "escort" => Some(TaskKind::Guiding),
        _ => None,
    }
}

fn tokenize(text: &str) -> Vec<Tok> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let starts_number = |i: usize| -> bool {
        let c = chars[i];
        let next_digit = chars.get(i + 1).is_some_and(|c| c.is_ascii_digit());
        c.is_ascii_digit() || ((c == '-' || c == '.') && next_digit)
    };
    let read_number = |i: &mut usize| -> Option<f64> {
        let start = *i;
        if chars[*i] == '-' {
            *i += 1;
        }
        while *i < chars.len() && (chars[*i].is_ascii_digit() || (chars[*i] == '.' && chars.get(*i + 1).is_some_and(|c| c.is_ascii_digit()))) {
            *i += 1;
        }
        chars[start..*i].iter().collect::<String>().parse().ok()
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '(' {
            // "(x, y)" coordinates; anything else inside parentheses is dropped.
            let mut j = i + 1;
            let skip_ws = |j: &mut usize| {
                while *j < chars.len() && chars[*j].is_whitespace() {
                    *j += 1;
                }
            };
            skip_ws(&mut j);
            let x = (j < chars.len() && starts_number(j)).then(|| read_number(&mut j)).flatten();
            skip_ws(&mut j);
            let comma = j < chars.len() && chars[j] == ',';
            if comma {
                j += 1;
            }
            skip_ws(&mut j);
            let y = (comma && j < chars.len() && starts_number(j)).then(|| read_number(&mut j)).flatten();
            skip_ws(&mut j);
            if let (Some(x), Some(y)) = (x, y) {
                if j < chars.len() && chars[j] == ')' {
                    out.push(Tok::Point(Vec2::new(x, y)));
                    i = j + 1;
                    continue;
                }
            }
            i += 1;
        } else if starts_number(i) {
            match read_number(&mut i) {
                Some(v) => out.push(Tok::Num(v)),
                None => i += 1,
            }
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '\'' | '’' | '-')) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase().replace('’', "'");
            let word = word.trim_end_matches(['\'', '-']);
            let expanded: Vec<&str> = match word {
                "don't" | "dont" => vec!["do", "not"],
                "never" => vec!["not"],
                w if w.ends_with("n't") => vec![&w[..w.len() - 3], "not"],
                w if w.ends_with("'s") => vec![&w[..w.len() - 2]],
                w => vec![w],
            };
            for w in expanded {
                if SEPARATOR_WORDS.contains(&w) {
                    out.push(Tok::Sep);
                } else if !w.is_empty() {
                    out.push(Tok::Word(w.to_string()));
                }
            }
        } else {
            if matches!(c, ',' | ';' | '.' | '!' | '?' | ':') {
                out.push(Tok::Sep);
            }
            i += 1;
        }
    }
    out
}

fn word_at(toks: &[Tok], i: usize) -> Option<&str> {
    match toks.get(i) {
        Some(Tok::Word(w)) => Some(w.as_str()),
        _ => None,
    }
}

struct Lexicon<'a> {
    /// Fixture names split into lowercase words, with the canonical name.
    fixtures: Vec<(Vec<String>, &'a str)>,
    pedestrians: &'a [String],
}

impl<'a> Lexicon<'a> {
    fn new(map: &'a SemanticMap, pedestrians: &'a [String]) -> Self {
        let fixtures = map
            .fixtures()
            .iter()
            .map(|f| {
                let words = tokenize(&f.name)
                    .into_iter()
                    .filter_map(|t| match t {
                        Tok::Word(w) => Some(w),
                        Tok::Num(n) => Some(n.to_string()),
                        _ => None,
                    })
                    .collect();
                (words, f.name.as_str())
            })
            .collect();
        Lexicon { fixtures, pedestrians }
    }

    /// Longest fixture name starting at `i`; returns the name and its word count.
    fn fixture_at(&self, toks: &[Tok], i: usize) -> Option<(&'a str, usize)> {
        self.fixtures
            .iter()
            .filter(|(words, _)| {
                !words.is_empty()
                    && words.iter().enumerate().all(|(k, w)| match toks.get(i + k) {
                        Some(Tok::Word(t)) => t == w,
                        Some(Tok::Num(n)) => n.to_string() == *w,
                        _ => false,
                    })
            })
            .max_by_key(|(words, _)| words.len())
            .map(|(words, name)| (*name, words.len()))
    }

    fn pedestrian(&self, w: &str) -> Option<&'a str> {
        self.pedestrians.iter().find(|p| p.eq_ignore_ascii_case(w)).map(String::as_str)
    }

    fn is_keyword(&self, w: &str) -> bool {
        verb_kind(w).is_some()
            || VIA_MARKERS.contains(&w)
            || FILLER.contains(&w)
            || matches!(w, "to" | "towards" | "toward" | "next" | "close")
            || self.pedestrian(w).is_some()
            || looks_like_id(w)
    }
}

/// Tokens like "vip05" or "p3": letters followed by digits.
fn looks_like_id(w: &str) -> bool {
    let split = w.find(|c: char| c.is_ascii_digit());
    match split {
        Some(k) if k > 0 => w[..k].chars().all(|c| c.is_ascii_alphabetic()) && w[k..].chars().all(|c| c.is_ascii_digit()),
        _ => false,
    }
}

enum PlaceRef {
    Known(Place),
    Unknown(String),
    Missing,
}

/// Reads a place phrase starting at `i`; returns it and the index after it.
fn read_place(lex: &Lexicon, toks: &[Tok], mut i: usize) -> (PlaceRef, usize) {
    while let Some(w) = word_at(toks, i) {
        if DETERMINERS.contains(&w) {
            i += 1;
        } else {
            break;
        }
    }
    match toks.get(i) {
        Some(Tok::Point(p)) => return (PlaceRef::Known(Place::Point(*p)), i + 1),
        Some(Tok::Word(_)) | Some(Tok::Num(_)) => {}
        _ => return (PlaceRef::Missing, i),
    }
    if let Some((name, n)) = lex.fixture_at(toks, i) {
        return (PlaceRef::Known(Place::Fixture(name.to_string())), i + n);
    }
    let mut words = Vec::new();
    let mut j = i;
    while let Some(w) = word_at(toks, j) {
        if words.len() == 3 || lex.is_keyword(w) || lex.fixture_at(toks, j).is_some() {
            break;
        }
        words.push(w.to_string());
        j += 1;
    }
    if words.is_empty() {
        (PlaceRef::Missing, i)
    } else {
        (PlaceRef::Unknown(words.join(" ")), j)
    }
}

fn unknown_place(phrase: &str) -> ParseResult {
    ParseResult::clarify(
        format!("I can't find '{phrase}' on the map. Which place do you mean?"),
        ClarificationSlot::Fixture(phrase.to_string()),
    )
}

fn split_clauses(toks: Vec<Tok>) -> Vec<Vec<Tok>> {
    let mut clauses = vec![Vec::new()];
    for t in toks {
        if t == Tok::Sep {
            if !clauses.last().is_some_and(Vec::is_empty) {
                clauses.push(Vec::new());
            }
        } else {
            clauses.last_mut().expect("non-empty").push(t);
        }
    }
    clauses.retain(|c| !c.is_empty());
    clauses
}

fn contains_seq(words: &[&str], seq: &[&str]) -> bool {
    words.windows(seq.len()).any(|w| w == seq)
}

fn hazard_kind(toks: &[Tok]) -> Option<HazardKind> {
    let words: Vec<&str> = toks
        .iter()
        .filter_map(|t| match t {
            Tok::Word(w) => Some(w.as_str()),
            _ => None,
        })
        .collect();
    if words.iter().any(|w| GROUND_HAZARD.contains(w)) {
        return Some(HazardKind::VirtualObstacle);
    }
    let avoid = words.contains(&"avoid")
        || (words.iter().any(|w| matches!(*w, "keep" | "stay")) && words.iter().any(|w| matches!(*w, "away" | "clear" | "out")))
        || words
            .iter()
            .enumerate()
            .any(|(k, w)| *w == "not" && words[k + 1..].iter().take(2).any(|n| matches!(*n, "enter" | "go" | "approach" | "drive")));
    if avoid || contains_seq(&words, &["off", "limits"]) {
        return Some(HazardKind::KeepOut);
    }
    None
}

/// Explicit distance in a clause ("1 m", "50 cm"); bare numbers are meters.
fn radius_in(toks: &[Tok]) -> Option<f64> {
    toks.iter().enumerate().find_map(|(k, t)| match t {
        Tok::Num(v) if *v >= 0.0 => {
            let scale = match word_at(toks, k + 1) {
                Some("cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres") => 0.01,
                _ => 1.0,
            };
            Some(v * scale)
        }
        _ => None,
    })
}

fn hazard_clause(lex: &Lexicon, toks: &[Tok], kind: HazardKind) -> Result<Hazard, ParseResult> {
    let r = radius_in(toks);
    for i in 0..toks.len() {
        if let Some((name, _)) = lex.fixture_at(toks, i) {
            return Ok(Hazard { kind, fixture: name.to_string(), r });
        }
    }
    // No known fixture: name the unknown location if a preposition points at one.
    for i in 0..toks.len() {
        if let Some("near" | "on" | "by" | "around" | "from" | "at" | "in" | "beside" | "under" | "of" | "enter" | "avoid" | "approach") =
            word_at(toks, i)
        {
            if let (PlaceRef::Unknown(phrase), _) = read_place(lex, toks, i + 1) {
                return Err(unknown_place(&phrase));
            }
        }
    }
    Err(ParseResult::clarify("Where is that? Please name a place on the map.", ClarificationSlot::HazardLocation))
}

#[derive(Default)]
struct Reading {
    interp: Interpretation,
    vague_person: bool,
}

fn task_clause(lex: &Lexicon, toks: &[Tok], reading: &mut Reading) -> Result<(), ParseResult> {
    let mut i = 0;
    let interp = &mut reading.interp;
    while i < toks.len() {
        let Some(w) = word_at(toks, i) else {
            i += 1;
            continue;
        };
        if let Some(kind) = verb_kind(w) {
            // "take the route near ..." and "lead the way" describe the path, not the task.
            let route_phrase = matches!(w, "take" | "lead")
                && word_at(toks, i + 1).is_some_and(|d| DETERMINERS.contains(&d))
                && word_at(toks, i + 2).is_some_and(|n| matches!(n, "route" | "path" | "way"));
            if !route_phrase {
                match interp.task {
                    Some(k) if k != kind => {
                        return Err(ParseResult::clarify(
                            "I can only do one task at a time. Should I go somewhere, follow someone, or guide someone?",
                            ClarificationSlot::Task,
                        ))
                    }
                    _ => interp.task = Some(kind),
                }
            }
            i += 1;
            continue;
        }
        let goal_marker = match w {
            "to" | "towards" | "toward" => !matches!(word_at(toks, i.wrapping_sub(1)), Some("next" | "close")),
            _ => false,
        };
        let via_marker = VIA_MARKERS.contains(&w) || (w == "to" && !goal_marker);
        if goal_marker || via_marker {
            if goal_marker && word_at(toks, i + 1).is_some_and(|n| verb_kind(n).is_some()) {
                i += 1;
                continue;
            }
            let (place, next) = read_place(lex, toks, i + 1);
            match place {
                PlaceRef::Known(p) if goal_marker => {
                    if interp.goal.as_ref().is_some_and(|g| *g != p) {
                        return Err(ParseResult::clarify(
                            "I can only head to one destination. Which one should it be?",
                            ClarificationSlot::Task,
                        ));
                    }
                    interp.goal = Some(p);
                }
                PlaceRef::Known(p) => interp.via.push(p),
                PlaceRef::Unknown(phrase) => return Err(unknown_place(&phrase)),
                PlaceRef::Missing => {}
            }
            i = next.max(i + 1);
            continue;
        }
        if let Some(id) = lex.pedestrian(w) {
            if interp.vip.as_deref().is_some_and(|v| !v.eq_ignore_ascii_case(id)) {
                return Err(ParseResult::clarify("I can only serve one pedestrian at a time. Which one?", ClarificationSlot::Vip));
            }
            interp.vip = Some(id.to_string());
        } else if looks_like_id(w) && lex.fixture_at(toks, i).is_none() {
            interp.vip.get_or_insert_with(|| w.to_uppercase());
        } else if PRONOUNS.contains(&w) {
            reading.vague_person = true;
        }
        i += 1;
    }
    Ok(())
}

/// Deterministic grammar backend. Total: every input yields a result.
pub fn parse_instruction(text: &str, map: &SemanticMap, known_pedestrians: &[String]) -> ParseResult {
    let lex = Lexicon::new(map, known_pedestrians);
    let clauses = split_clauses(tokenize(text));
    if clauses.is_empty() {
        return ParseResult::clarify(
            "What would you like me to do? I can go to a place, follow someone, or guide someone.",
            ClarificationSlot::Task,
        );
    }
    let mut reading = Reading::default();
    for clause in &clauses {
        let outcome = match hazard_kind(clause) {
            Some(kind) => hazard_clause(&lex, clause, kind).map(|h| reading.interp.constraints.push(h)),
            None => task_clause(&lex, clause, &mut reading),
        };
        if let Err(q) = outcome {
            return q;
        }
    }
    reading.interp.finalize(map, known_pedestrians)
}

fn place_phrase(p: &Place) -> String {
    match p {
        Place::Fixture(name) => format!("the {name}"),
        Place::Point(v) => format!("({}, {})", v.x, v.y),
    }
}

/// Canonical sentence for a task; parses back to the same spec.
pub fn render_canonical(spec: &TaskSpec) -> String {
    let vip = spec.vip_id.as_deref().unwrap_or("");
    let mut s = match (spec.task, &spec.goal) {
        (TaskKind::Following, _) => format!("Follow {vip}"),
        (TaskKind::Guiding, Some(g)) => format!("Guide {vip} to {}", place_phrase(g)),
        (TaskKind::Guiding, None) => format!("Guide {vip}"),
        (TaskKind::PointToPoint, Some(g)) => format!("Go to {}", place_phrase(g)),
        (TaskKind::PointToPoint, None) => "Go".to_string(),
    };
    for v in &spec.via {
        s.push_str(&format!(", taking a route near {}", place_phrase(v)));
    }
    s
}

fn strip_determiner(answer: &str) -> &str {
    let a = answer.trim();
    for d in DETERMINERS {
        if let Some(rest) = a.strip_prefix(d) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    a
}

/// Merges the user's answer into the pending instruction and parses again.
pub fn answer_clarification(
    original: &str,
    pending: &Clarification,
    answer: &str,
    map: &SemanticMap,
    known_pedestrians: &[String],
) -> ParseResult {
    let merged = match &pending.slot {
        ClarificationSlot::Task => format!("{answer}, {original}"),
        ClarificationSlot::Goal => {
            let a = answer.trim();
            let lower = a.to_ascii_lowercase();
            if lower.starts_with("to ") {
                format!("{original}, {a}")
            } else {
                format!("{original}, to {a}")
            }
        }
        ClarificationSlot::Vip => {
            // Drop the vague or unknown person reference, then add the answer.
            let kept: Vec<String> = original
                .split_whitespace()
                .map(|tok| {
                    let core: String = tok.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
                    let is_person = PRONOUNS.contains(&core.as_str())
                        || (looks_like_id(&core) && map.get(&core).is_none());
                    if is_person {
                        tok.chars().filter(|c| !c.is_alphanumeric()).collect()
                    } else {
                        tok.to_string()
                    }
                })
                .collect();
            format!("{} {}", kept.join(" "), answer.trim())
        }
        ClarificationSlot::Fixture(word) => {
            let lower = original.to_ascii_lowercase();
            let replacement = strip_determiner(answer);
            match lower.find(word.as_str()) {
                Some(at) if original.is_char_boundary(at) && original.is_char_boundary(at + word.len()) => {
                    format!("{}{}{}", &original[..at], replacement, &original[at + word.len()..])
                }
                _ => format!("{original} near {replacement}"),
            }
        }
        ClarificationSlot::HazardLocation => format!("{original} near {}", strip_determiner(answer)),
    };
    parse_instruction(&merged, map, known_pedestrians)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Fixture;

    fn map() -> SemanticMap {
        SemanticMap::new(vec![
            Fixture::new("fridge", Vec2::new(8.0, 8.0), 0.8, 0.7),
            Fixture::new("bookshelf", Vec2::new(2.0, 7.0), 1.5, 0.4),
            Fixture::new("table", Vec2::new(5.0, 5.0), 1.2, 0.8),
            Fixture::new("coffee table", Vec2::new(3.0, 3.0), 1.0, 0.6),
            Fixture::new("sofa", Vec2::new(1.5, 2.0), 2.0, 0.9),
        ])
        .unwrap()
    }

    fn peds() -> Vec<String> {
        vec!["VIP05".to_string()]
    }

    #[test]
    fn tokenizer_reads_coordinates_and_contractions() {
        let t = tokenize("Don't go to (1.5, -2)");
        assert_eq!(
            t,
            vec![
                Tok::Word("do".into()),
                Tok::Word("not".into()),
                Tok::Word("go".into()),
                Tok::Word("to".into()),
                Tok::Point(Vec2::new(1.5, -2.0))
            ]
        );
    }

    #[test]
    fn guiding_instruction_with_route() {
        let r = parse_instruction("Guide VIP05 to the fridge, taking a route near the bookshelf", &map(), &peds());
        let spec = r.task().unwrap();
        assert_eq!(spec.task, TaskKind::Guiding);
        assert_eq!(spec.vip_id.as_deref(), Some("VIP05"));
        assert_eq!(spec.goal, Some(Place::Fixture("fridge".into())));
        assert_eq!(spec.via, vec![Place::Fixture("bookshelf".into())]);
        assert!(r.constraints().unwrap().is_empty());
    }

    #[test]
    fn longest_fixture_name_wins() {
        let r = parse_instruction("go to the coffee table", &map(), &[]);
        assert_eq!(r.task().unwrap().goal, Some(Place::Fixture("coffee table".into())));
    }

    #[test]
    fn unknown_fixture_asks() {
        let r = parse_instruction("Go to the unicorn", &map(), &[]);
        match r {
            ParseResult::NeedsClarification(c) => assert_eq!(c.slot, ClarificationSlot::Fixture("unicorn".into())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn answers_fill_the_pending_slot() {
        let m = map();
        let original = "Go to the unicorn";
        let ParseResult::NeedsClarification(c) = parse_instruction(original, &m, &[]) else { panic!() };
        let r = answer_clarification(original, &c, "the sofa", &m, &[]);
        assert_eq!(r.task().unwrap().goal, Some(Place::Fixture("sofa".into())));

        let original = "Follow him";
        let ParseResult::NeedsClarification(c) = parse_instruction(original, &m, &peds()) else { panic!() };
        let r = answer_clarification(original, &c, "VIP05", &m, &peds());
        assert_eq!(r.task().unwrap().vip_id.as_deref(), Some("VIP05"));

        let original = "Guide VIP05";
        let ParseResult::NeedsClarification(c) = parse_instruction(original, &m, &peds()) else { panic!() };
        assert_eq!(c.slot, ClarificationSlot::Goal);
        let r = answer_clarification(original, &c, "fridge", &m, &peds());
        assert_eq!(r.task().unwrap().goal, Some(Place::Fixture("fridge".into())));
    }

    #[test]
    fn keep_away_radius_in_centimeters() {
        let r = parse_instruction("Keep 50 cm away from the table", &map(), &[]);
        let c = r.constraints().unwrap();
        assert!(r.task().is_none());
        assert_eq!(c.keep_out_zones.len(), 1);
        let z = &c.keep_out_zones[0];
        let xs: Vec<f64> = z.vertices.iter().map(|v| v.x).collect();
        let max_x = xs.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max_x - (5.0 + 0.6 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn garbage_is_a_question_not_a_crash() {
        for s in ["", "   ", "((((", "to to to", "-", "(1,", "follow follow guide", "²³¹"] {
            let _ = parse_instruction(s, &map(), &peds());
        }
    }
}
