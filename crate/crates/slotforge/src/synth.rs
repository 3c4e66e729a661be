//! Built-in template grammar for a small flight-booking domain.
//!
//! Templates are grouped by semantic frame. The last template of every frame
//! is reserved for the test split, so test data contains phrasings that never
//! occur in training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{bio_tags, Corpus, SlotTag, Utterance};

pub const SLOT_VALUES: &[(&str, &[&str])] = &[
    (
        "from_city",
        &[
            "boston",
            "denver",
            "dallas",
            "seattle",
            "atlanta",
            "chicago",
            "phoenix",
            "new york",
            "san francisco",
            "salt lake city",
            "miami",
            "detroit",
        ],
    ),
    (
        "to_city",
        &[
            "boston",
            "denver",
            "dallas",
            "seattle",
            "atlanta",
            "chicago",
            "phoenix",
            "new york",
            "los angeles",
            "las vegas",
            "houston",
            "st. louis",
        ],
    ),
    (
        "date",
        &[
            "monday",
            "tuesday",
            "wednesday",
            "thursday",
            "friday",
            "saturday",
            "sunday",
            "tomorrow",
            "next friday",
            "june first",
            "the weekend",
        ],
    ),
    (
        "time",
        &[
            "morning",
            "noon",
            "afternoon",
            "night",
            "midnight",
            "5 pm",
            "8 am",
            "10 pm",
            "early evening",
            "late morning",
        ],
    ),
    (
        "airline",
        &[
            "delta",
            "united",
            "jetblue",
            "southwest",
            "frontier",
            "spirit",
            "american airlines",
            "alaska airlines",
            "air canada",
            "us air",
        ],
    ),
];

/// Frame bodies; `{slot}` marks a slot occurrence.
pub const TEMPLATES: &[&[&str]] = &[
    &[
        "flights from {from_city} to {to_city}",
        "show me flights from {from_city} to {to_city}",
        "i need a flight from {from_city} to {to_city}",
        "what flights go from {from_city} to {to_city}",
        "fly from {from_city} to {to_city}",
        "list flights to {to_city} from {from_city}",
        "is there a flight between {from_city} and {to_city}",
    ],
    &[
        "flights from {from_city} to {to_city} on {date}",
        "i want to fly from {from_city} to {to_city} {date}",
        "on {date} show flights from {from_city} to {to_city}",
        "book a flight {date} from {from_city} to {to_city}",
        "what leaves {from_city} for {to_city} on {date}",
        "i need to get to {to_city} from {from_city} by {date}",
    ],
    &[
        "flights to {to_city} in the {time}",
        "what goes to {to_city} around {time}",
        "i want to arrive in {to_city} at {time}",
        "show me {time} flights to {to_city}",
        "any flight into {to_city} before {time}",
        "get me to {to_city} by {time}",
    ],
    &[
        "{airline} flights to {to_city}",
        "does {airline} fly to {to_city}",
        "show {airline} service to {to_city}",
        "i prefer {airline} going to {to_city}",
        "list {to_city} flights on {airline}",
        "which {airline} flights arrive in {to_city}",
        "to {to_city} with {airline} please",
    ],
    &[
        "{airline} from {from_city} to {to_city} on {date} at {time}",
        "on {date} fly {airline} from {from_city} to {to_city} in the {time}",
        "i need a {time} {airline} flight from {from_city} to {to_city} {date}",
        "book {airline} {from_city} to {to_city} {date} {time}",
        "from {from_city} to {to_city} {date} {time} on {airline}",
        "is there an {airline} flight {date} {time} from {from_city} to {to_city}",
    ],
];

const PREFIXES: &[&str] = &["", "", "please", "can you", "hi"];
const SUFFIXES: &[&str] = &["", "", "please", "thanks"];

pub fn template_count() -> usize {
    TEMPLATES.iter().map(|f| f.len()).sum()
}

fn values(slot_type: &str) -> &'static [&'static str] {
    SLOT_VALUES
        .iter()
        .find(|(t, _)| *t == slot_type)
        .map(|(_, v)| *v)
        .expect("template slot has values")
}

fn push_plain(tokens: &mut Vec<String>, tags: &mut Vec<SlotTag>, text: &str) {
    for w in text.split_whitespace() {
        tokens.push(w.to_string());
        tags.push(SlotTag::Outside);
    }
}

fn sample<R: Rng>(rng: &mut R, template: &str) -> Utterance {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let prefix = *PREFIXES.choose(rng).expect("non-empty");
    let suffix = *SUFFIXES.choose(rng).expect("non-empty");
    push_plain(&mut tokens, &mut tags, prefix);
    for piece in template.split_whitespace() {
        match piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
            Some(slot_type) => {
                let value = *values(slot_type).choose(rng).expect("non-empty");
                let words: Vec<&str> = value.split_whitespace().collect();
                tags.extend(bio_tags(slot_type, words.len()));
                tokens.extend(words.into_iter().map(String::from));
            }
            None => push_plain(&mut tokens, &mut tags, piece),
        }
    }
    push_plain(&mut tokens, &mut tags, suffix);
    Utterance::new(tokens, tags).expect("grammar yields valid utterances")
}

fn sample_split<R: Rng>(rng: &mut R, n: usize, held_out: bool) -> Corpus {
    let utterances = (0..n)
        .map(|_| {
            let frame = TEMPLATES.choose(rng).expect("non-empty");
            let pool = if held_out {
                &frame[..]
            } else {
                &frame[..frame.len() - 1]
            };
            let template = *pool.choose(rng).expect("non-empty");
            sample(rng, template)
        })
        .collect();
    Corpus::new(utterances)
}

/// Samples `(train, dev, test)`. Dev has `max(1, n_train / 5)` utterances
/// from the training templates; test draws from every template.
pub fn make_synthetic(seed: u64, n_train: usize, n_test: usize) -> (Corpus, Corpus, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = sample_split(&mut rng, n_train, false);
    let mut dev = sample_split(&mut rng, (n_train / 5).max(1), false);
    let mut test = sample_split(&mut rng, n_test, true);
    train.provenance = format!("synthetic:seed={seed}:train");
    dev.provenance = format!("synthetic:seed={seed}:dev");
    test.provenance = format!("synthetic:seed={seed}:test");
    (train, dev, test)
}
