//! Deterministic generator for bAbI-style restaurant dialogues.
//!
//! Three styles are produced:
//!
//! - `slots`: the user reveals cuisine, location, party size and price over
//!   several turns, the system asks for each missing slot with a fixed
//!   question and finishes with `api_call <cuisine> <location> <size> <price>`.
//! - `kb_lookup`: the user names a restaurant and asks about its attributes,
//!   sometimes naming it again in the question; every answer interpolates
//!   the value stored in the dialogue KB.
//! - `full`: a `slots` dialogue that continues into a suggestion and
//!   `kb_lookup` questions about the suggested restaurant.
//!
//! Slot values, restaurant names and attribute values are all KB subjects or
//! objects, so they are entity words in their dialogue.

use std::str::FromStr;

use super::{Dialogue, KbTriple, Turn};
use crate::numerics::RngState;
use crate::{Error, Result};

pub const CUISINES: [&str; 10] = [
    "italian",
    "french",
    "indian",
    "spanish",
    "british",
    "japanese",
    "thai",
    "chinese",
    "korean",
    "vietnamese",
];
pub const LOCATIONS: [&str; 10] = [
    "rome", "paris", "london", "madrid", "bombay", "tokyo", "bangkok", "beijing", "seoul", "hanoi",
];
pub const PARTY_SIZES: [&str; 4] = ["two", "four", "six", "eight"];
pub const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskStyle {
    Slots,
    KbLookup,
    Full,
}

impl TaskStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStyle::Slots => "slots",
            TaskStyle::KbLookup => "kb_lookup",
            TaskStyle::Full => "full",
        }
    }
}

impl FromStr for TaskStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slots" => Ok(TaskStyle::Slots),
            "kb_lookup" => Ok(TaskStyle::KbLookup),
            "full" => Ok(TaskStyle::Full),
            _ => Err(Error::Config(format!("unknown task style {s:?}"))),
        }
    }
}

impl std::fmt::Display for TaskStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_restaurants: usize,
    pub n_dialogues: usize,
    pub style: TaskStyle,
    pub seed: u64,
}

#[derive(Clone, Debug)]
struct Restaurant {
    name: String,
    cuisine: &'static str,
    location: &'static str,
    price: &'static str,
    seats: &'static str,
    rating: String,
}

impl Restaurant {
    fn phone(&self) -> String {
        format!("{}_phone", self.name)
    }

    fn address(&self) -> String {
        format!("{}_address", self.name)
    }

    fn slot_triples(&self) -> Vec<KbTriple> {
        vec![
            KbTriple::new(&self.name, "r_cuisine", self.cuisine),
            KbTriple::new(&self.name, "r_location", self.location),
            KbTriple::new(&self.name, "r_number", self.seats),
            KbTriple::new(&self.name, "r_price", self.price),
        ]
    }

    fn all_triples(&self) -> Vec<KbTriple> {
        let mut t = self.slot_triples();
        t.push(KbTriple::new(&self.name, "r_phone", self.phone()));
        t.push(KbTriple::new(&self.name, "r_address", self.address()));
        t.push(KbTriple::new(&self.name, "r_rating", &self.rating));
        t
    }
}

const GREETINGS: [&str; 3] = ["hi", "hello", "good morning"];
const GREETING_REPLY: &str = "hello what can i help you with today";
const REQUEST_OPENERS: [&str; 3] = [
    "can you book a table",
    "may i have a table",
    "i'd like to book a table",
];
const LOOKING: &str = "ok let me look into some options for you";

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Cuisine,
    Location,
    Party,
    Price,
}

const SLOT_ORDER: [Slot; 4] = [Slot::Cuisine, Slot::Location, Slot::Party, Slot::Price];

impl Slot {
    fn question(self) -> &'static str {
        match self {
            Slot::Cuisine => "any preference on a type of cuisine",
            Slot::Location => "where should it be",
            Slot::Party => "how many people would be in your party",
            Slot::Price => "which price range are looking for",
        }
    }

    fn value(self, r: &Restaurant) -> &'static str {
        match self {
            Slot::Cuisine => r.cuisine,
            Slot::Location => r.location,
            Slot::Party => r.seats,
            Slot::Price => r.price,
        }
    }

    fn request_phrase(self, v: &str) -> String {
        match self {
            Slot::Cuisine => format!("with {v} food"),
            Slot::Location => format!("in {v}"),
            Slot::Party => format!("for {v} people"),
            Slot::Price => format!("in a {v} price range"),
        }
    }

    fn answer(self, v: &str, rng: &mut RngState) -> String {
        let options: [String; 2] = match self {
            Slot::Cuisine => [format!("with {v} food"), format!("i love {v} food")],
            Slot::Location => [format!("{v} please"), format!("in {v}")],
            Slot::Party => [format!("for {v} people please"), format!("we will be {v}")],
            Slot::Price => [
                format!("in a {v} price range please"),
                format!("i am looking for a {v} restaurant"),
            ],
        };
        rng.choose(&options).clone()
    }
}

fn restaurant_pool(n: usize, rng: &mut RngState) -> Vec<Restaurant> {
    (0..n)
        .map(|i| {
            let cuisine = *rng.choose(&CUISINES);
            let location = *rng.choose(&LOCATIONS);
            let price = *rng.choose(&PRICES);
            let seats = *rng.choose(&PARTY_SIZES);
            let rating = (1 + rng.below(8)).to_string();
            Restaurant {
                name: format!("resto_{location}_{price}_{cuisine}_{i}"),
                cuisine,
                location,
                price,
                seats,
                rating,
            }
        })
        .collect()
}

/// `count` distinct pool indices other than `target`, in random order.
fn distractors(pool: usize, target: usize, count: usize, rng: &mut RngState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).filter(|&i| i != target).collect();
    rng.shuffle(&mut idx);
    idx.truncate(count);
    idx
}

fn slot_turns(r: &Restaurant, rng: &mut RngState) -> Vec<Turn> {
    let mut turns = vec![Turn::new(rng.choose(&GREETINGS), GREETING_REPLY)];
    let revealed: Vec<bool> = SLOT_ORDER.iter().map(|_| rng.bernoulli(0.5)).collect();
    let mut request = rng.choose(&REQUEST_OPENERS).to_string();
    // phrase order in the request is varied; slot questions follow SLOT_ORDER
    let mut phrase_order = [2usize, 1, 0, 3];
    rng.shuffle(&mut phrase_order);
    for &i in &phrase_order {
        if revealed[i] {
            let s = SLOT_ORDER[i];
            request.push(' ');
            request.push_str(&s.request_phrase(s.value(r)));
        }
    }
    turns.push(Turn::new(&request, "i'm on it"));

    let missing: Vec<Slot> = SLOT_ORDER
        .iter()
        .zip(&revealed)
        .filter(|(_, &r)| !r)
        .map(|(s, _)| *s)
        .collect();
    let next_prompt = |k: usize| missing.get(k).map_or(LOOKING, |s| s.question());
    turns.push(Turn::new("<silence>", next_prompt(0)));
    for (k, s) in missing.iter().enumerate() {
        turns.push(Turn::new(&s.answer(s.value(r), rng), next_prompt(k + 1)));
    }
    let api = format!(
        "api_call {} {} {} {}",
        r.cuisine, r.location, r.seats, r.price
    );
    turns.push(Turn::new("<silence>", &api));
    turns
}

fn lookup_turns(r: &Restaurant, rng: &mut RngState) -> Vec<Turn> {
    let name = &r.name;
    let mut ask = |plain: &[&str], named: String| {
        if rng.bernoulli(0.5) {
            named
        } else {
            rng.choose(plain).to_string()
        }
    };
    let mut asks: Vec<(String, String)> = vec![
        (
            ask(
                &[
                    "may i have the phone number of the restaurant",
                    "what is the phone number",
                ],
                format!("what is the phone number of {name}"),
            ),
            format!("here it is {}", r.phone()),
        ),
        (
            ask(
                &["can you provide the address", "where is it located"],
                format!("where is {name} located"),
            ),
            format!("here it is {}", r.address()),
        ),
        (
            ask(
                &["what kind of food do they serve"],
                format!("what kind of food does {name} serve"),
            ),
            format!("they serve {} food", r.cuisine),
        ),
        (
            ask(
                &["which part of town is it in"],
                format!("which part of town is {name} in"),
            ),
            format!("it is located in {}", r.location),
        ),
    ];
    rng.shuffle(&mut asks);
    asks.truncate(1 + rng.below(3));
    let mut turns: Vec<Turn> = asks.iter().map(|(q, a)| Turn::new(q, a)).collect();
    turns.push(Turn::new(
        rng.choose(&["thank you", "thanks"]),
        "you're welcome",
    ));
    turns
}

fn one_dialogue(style: TaskStyle, pool: &[Restaurant], rng: &mut RngState) -> Dialogue {
    let target = rng.below(pool.len());
    let r = &pool[target];
    let others = distractors(
        pool.len(),
        target,
        if style == TaskStyle::Slots { 2 } else { 1 },
        rng,
    );

    let mut members: Vec<&Restaurant> = others.iter().map(|&i| &pool[i]).collect();
    members.insert(rng.below(members.len() + 1), r);
    let kb: Vec<KbTriple> = members
        .iter()
        .flat_map(|m| {
            if style == TaskStyle::Slots {
                m.slot_triples()
            } else {
                m.all_triples()
            }
        })
        .collect();

    let turns = match style {
        TaskStyle::Slots => slot_turns(r, rng),
        TaskStyle::KbLookup => {
            let mut t = vec![Turn::new(rng.choose(&GREETINGS), GREETING_REPLY)];
            let ask = rng.choose(&[
                "i want to go to",
                "can you make a restaurant reservation at",
            ]);
            t.push(Turn::new(
                &format!("{ask} {}", r.name),
                "great let me do the reservation",
            ));
            t.extend(lookup_turns(r, rng));
            t
        }
        TaskStyle::Full => {
            let mut t = slot_turns(r, rng);
            t.push(Turn::new(
                "<silence>",
                &format!("what do you think of this option: {}", r.name),
            ));
            t.push(Turn::new("let's do it", "great let me do the reservation"));
            t.extend(lookup_turns(r, rng));
            t
        }
    };
    Dialogue {
        turns,
        kb,
        domain: Some(style.as_str().to_string()),
    }
}

/// Generates `n_dialogues` dialogues; equal configs give identical output.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Dialogue>> {
    if config.n_restaurants < 4 {
        return Err(Error::Config(format!(
            "n_restaurants must be >= 4, got {}",
            config.n_restaurants
        )));
    }
    if config.n_dialogues < 1 {
        return Err(Error::Config("n_dialogues must be >= 1".into()));
    }
    let base = RngState::new(config.seed);
    let pool = restaurant_pool(config.n_restaurants, &mut base.fork(0));
    let mut rng = base.fork(1);
    Ok((0..config.n_dialogues)
        .map(|_| one_dialogue(config.style, &pool, &mut rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySet;

    fn cfg(style: TaskStyle) -> SynthConfig {
        SynthConfig {
            n_restaurants: 12,
            n_dialogues: 60,
            style,
            seed: 21,
        }
    }

    #[test]
    fn deterministic() {
        for style in [TaskStyle::Slots, TaskStyle::KbLookup, TaskStyle::Full] {
            assert_eq!(
                generate_synthetic(&cfg(style)).unwrap(),
                generate_synthetic(&cfg(style)).unwrap()
            );
        }
        let mut other = cfg(TaskStyle::Slots);
        other.seed = 22;
        assert_ne!(
            generate_synthetic(&other).unwrap(),
            generate_synthetic(&cfg(TaskStyle::Slots)).unwrap()
        );
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(TaskStyle::Slots);
        c.n_restaurants = 3;
        assert!(matches!(generate_synthetic(&c), Err(Error::Config(_))));
        let mut c = cfg(TaskStyle::Slots);
        c.n_dialogues = 0;
        assert!(matches!(generate_synthetic(&c), Err(Error::Config(_))));
        assert!("bogus".parse::<TaskStyle>().is_err());
    }

    #[test]
    fn api_call_values_appear_in_history_as_entities() {
        for d in generate_synthetic(&cfg(TaskStyle::Slots)).unwrap() {
            let entities = EntitySet::from_kb(&d.kb);
            let (last, before) = d.turns.split_last().unwrap();
            assert_eq!(last.system[0], "api_call");
            let history: Vec<&String> = before
                .iter()
                .flat_map(|t| t.user.iter().chain(&t.system))
                .collect();
            for v in &last.system[1..] {
                assert!(history.contains(&v), "{v} missing from history");
                assert!(entities.contains(v));
            }
        }
    }

    #[test]
    fn lookup_entities_are_kb_objects() {
        let all = generate_synthetic(&cfg(TaskStyle::KbLookup)).unwrap();
        let lexicon = EntitySet::from_dialogues(&all);
        for d in &all {
            let objects: Vec<&String> = d.kb.iter().map(|t| &t.object).collect();
            for t in &d.turns[2..] {
                for w in t.system.iter().filter(|w| lexicon.contains(w)) {
                    assert!(objects.contains(&w), "{w} not a KB object");
                }
            }
        }
    }

    #[test]
    fn full_style_has_both_kinds_of_turns() {
        for d in generate_synthetic(&cfg(TaskStyle::Full)).unwrap() {
            assert!(d
                .turns
                .iter()
                .any(|t| t.system.first().map(String::as_str) == Some("api_call")));
            assert!(d
                .turns
                .iter()
                .any(|t| t.system.starts_with(&["here".to_string()])
                    || t.system.starts_with(&["they".to_string()])
                    || t.system.starts_with(&["it".to_string()])));
        }
    }
}
