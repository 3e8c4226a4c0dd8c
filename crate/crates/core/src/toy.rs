//! Synthetic two-attribute review corpus.
//!
//! Documents are short multi-sentence "reviews" assembled from templates. A
//! fraction of sentences carry an attribute slot filled from the class's word
//! list; the rest are attribute-neutral. Occasionally an attribute slot is
//! filled from the opposite list, so neither class model is a pure keyword
//! detector.
//!
//! Documents come in pairs: the positive and negative review at the same
//! index share one sentence plan and differ only in how attribute slots are
//! filled. The two class models therefore agree on neutral text up to
//! smoothing, and their disagreement is concentrated on attribute words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const POSITIVE_WORDS: [&str; 30] = [
    "good", "great", "wonderful", "excellent", "beautiful", "delightful", "brilliant",
    "charming", "superb", "lovely", "moving", "perfect", "stunning", "gorgeous", "touching",
    "clever", "fresh", "elegant", "inspiring", "joyful", "masterful", "memorable", "warm",
    "funny", "vivid", "graceful", "splendid", "fantastic", "magical", "heartfelt",
];

pub const NEGATIVE_WORDS: [&str; 30] = [
    "bad", "terrible", "awful", "boring", "dull", "horrible", "poor", "dreadful", "weak",
    "ugly", "tedious", "pointless", "bland", "clumsy", "lifeless", "painful", "shallow",
    "sloppy", "stale", "messy", "forgettable", "lazy", "annoying", "hollow", "tiresome",
    "flat", "cheap", "miserable", "pathetic", "disappointing",
];

const SUBJECTS: [&str; 40] = [
    "the film", "the painting", "the story", "the acting", "the music", "the book",
    "the show", "the ending", "the plot", "the cast", "the movie", "the city", "the album",
    "the novel", "the concert", "the play", "the hotel", "the restaurant", "the meal",
    "the script", "the museum", "the exhibit", "the series", "the game", "the trip",
    "the tour", "the opera", "the sequel", "the soundtrack", "the poem", "the dinner",
    "the festival", "the lecture", "the garden", "the design", "the camera work",
    "the dialogue", "the chapter", "the performance", "the documentary",
];

const NOUNS: [&str; 161] = [
    "house", "garden", "river", "train", "window", "table", "letter", "road", "village",
    "kitchen", "market", "station", "morning", "evening", "winter", "summer", "bridge",
    "harbor", "forest", "mountain", "valley", "island", "castle", "tower", "church", "school",
    "library", "office", "factory", "farm", "field", "meadow", "lake", "beach", "desert",
    "street", "square", "park", "hospital", "prison", "palace", "cottage", "cabin", "barn",
    "attic", "cellar", "hallway", "balcony", "rooftop", "courtyard", "alley", "tunnel",
    "highway", "airport", "ship", "boat", "car", "bus", "bicycle", "horse", "dog", "cat",
    "bird", "fox", "wolf", "bear", "deer", "rabbit", "owl", "crow", "lamp", "clock",
    "mirror", "chair", "bed", "door", "wall", "roof", "floor", "stair", "fence", "gate",
    "well", "fountain", "statue", "painting", "photograph", "map", "diary", "notebook",
    "newspaper", "radio", "piano", "guitar", "violin", "drum", "song", "dance", "party",
    "wedding", "funeral", "storm", "flood", "fire", "snow", "rain", "fog", "wind",
    "spring", "autumn", "night", "afternoon", "holiday", "weekend", "journey", "voyage",
    "war", "election", "trial", "crime", "mystery", "secret", "promise", "dream", "memory",
    "family", "marriage", "friendship", "childhood", "career", "company", "army", "crew",
    "team", "band", "choir", "class", "club", "town", "country", "kingdom", "empire",
    "colony", "planet", "moon", "star", "sky", "ocean", "sea", "shore", "cliff", "cave",
    "mine", "quarry", "orchard", "vineyard", "bakery", "shop", "theater", "studio",
    "gallery",
];

const PEOPLE: [&str; 40] = [
    "my friend", "my sister", "the director", "the writer", "my father", "the critic",
    "a neighbor", "the teacher", "my mother", "my brother", "the doctor", "a stranger",
    "the captain", "the soldier", "the farmer", "the singer", "the painter", "the mayor",
    "the detective", "the priest", "the nurse", "the pilot", "the sailor", "the baker",
    "an old man", "a young woman", "the children", "the family", "my uncle", "my aunt",
    "my cousin", "the guide", "the driver", "the lawyer", "the student", "the professor",
    "the king", "the queen", "the hero", "the villain",
];

const VERBS: [&str; 40] = [
    "walked to", "looked at", "talked about", "drove past", "waited near", "came back to",
    "read about", "thought about", "stayed at", "returned to", "ran from", "searched for",
    "dreamed of", "wrote about", "sang about", "painted", "visited", "left", "found",
    "lost", "built", "sold", "bought", "cleaned", "fixed", "opened", "closed", "watched",
    "remembered", "forgot", "described", "explored", "crossed", "guarded", "followed",
    "carried", "hid", "burned", "climbed", "photographed",
];

const PLAIN_ADJECTIVES: [&str; 40] = [
    "old", "new", "small", "large", "quiet", "busy", "distant", "nearby", "red", "blue",
    "green", "white", "black", "grey", "wooden", "stone", "narrow", "wide", "empty",
    "crowded", "northern", "southern", "eastern", "western", "rural", "urban", "ancient",
    "modern", "tall", "short", "long", "hidden", "famous", "local", "foreign", "private",
    "public", "cold", "hot", "wet",
];

const ADVERBS: [&str; 6] = ["really", "quite", "very", "truly", "rather", "so"];

/// Default prompts, in the style of review openings.
pub const PROMPTS: [&str; 8] = [
    "the painting", "the film", "the story", "the book", "the music", "the show",
    "the city", "the plot",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub docs_per_class: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a sentence carries an attribute slot.
    pub attribute_rate: f64,
    /// Probability that an attribute slot takes a word of the other class.
    pub leak_rate: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            docs_per_class: 5000,
            min_sentences: 3,
            max_sentences: 6,
            attribute_rate: 0.85,
            leak_rate: 0.05,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl ToyCorpus {
    pub const POSITIVE: &'static str = "positive";
    pub const NEGATIVE: &'static str = "negative";

    pub fn generate(config: &ToyCorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut positive = Vec::with_capacity(config.docs_per_class);
        let mut negative = Vec::with_capacity(config.docs_per_class);
        for _ in 0..config.docs_per_class {
            let plan = plan_review(&mut rng, config);
            positive.push(render(&plan, &mut rng, config, &POSITIVE_WORDS, &NEGATIVE_WORDS));
            negative.push(render(&plan, &mut rng, config, &NEGATIVE_WORDS, &POSITIVE_WORDS));
        }
        ToyCorpus { positive, negative }
    }

    pub fn labeled(&self) -> Vec<(String, Vec<String>)> {
        vec![
            (Self::POSITIVE.to_owned(), self.positive.clone()),
            (Self::NEGATIVE.to_owned(), self.negative.clone()),
        ]
    }

    /// Both classes, interleaved.
    pub fn all_docs(&self) -> Vec<String> {
        self.positive
            .iter()
            .zip(&self.negative)
            .flat_map(|(p, n)| [p.clone(), n.clone()])
            .collect()
    }
}

/// Attribute words of the named class.
pub fn attribute_words(label: &str) -> &'static [&'static str] {
    match label {
        ToyCorpus::POSITIVE => &POSITIVE_WORDS,
        ToyCorpus::NEGATIVE => &NEGATIVE_WORDS,
        _ => &[],
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

enum Sentence {
    Neutral(String),
    /// Template index, subject, adverb and noun; the attribute words are filled per class.
    Attribute(usize, &'static str, &'static str, &'static str),
}

fn plan_review<R: Rng>(rng: &mut R, config: &ToyCorpusConfig) -> Vec<Sentence> {
    let n = rng.gen_range(config.min_sentences..=config.max_sentences);
    let subject = pick(rng, &SUBJECTS);
    (0..n)
        .map(|i| {
            let subj = if i == 0 { subject } else { pick(rng, &SUBJECTS) };
            if rng.gen_bool(config.attribute_rate) {
                Sentence::Attribute(rng.gen_range(0..5), subj, pick(rng, &ADVERBS), pick(rng, &NOUNS))
            } else {
                Sentence::Neutral(neutral_sentence(rng, subj))
            }
        })
        .collect()
}

fn render<R: Rng>(
    plan: &[Sentence],
    rng: &mut R,
    config: &ToyCorpusConfig,
    own: &[&str],
    other: &[&str],
) -> String {
    let fill = |rng: &mut R| {
        let words = if rng.gen_bool(config.leak_rate) { other } else { own };
        pick(rng, words)
    };
    let sentences: Vec<String> = plan
        .iter()
        .map(|s| match *s {
            Sentence::Neutral(ref text) => text.clone(),
            Sentence::Attribute(template, subj, adverb, noun) => {
                let a = fill(rng);
                match template {
                    0 => format!("{subj} was {a} ."),
                    1 => format!("{subj} was {adverb} {a} ."),
                    2 => format!("{subj} was {a} and {} .", fill(rng)),
                    3 => format!("i thought {subj} was {a} ."),
                    _ => format!("it was a {a} {noun} ."),
                }
            }
        })
        .collect();
    sentences.join(" ")
}

fn neutral_sentence<R: Rng>(rng: &mut R, subj: &str) -> String {
    match rng.gen_range(0..6) {
        0 => format!("{subj} is about a {} near the {} .", pick(rng, &NOUNS), pick(rng, &NOUNS)),
        1 => format!(
            "{} {} the {} in the {} .",
            pick(rng, &PEOPLE),
            pick(rng, &VERBS),
            pick(rng, &NOUNS),
            pick(rng, &NOUNS)
        ),
        2 => format!("{subj} was made in the {} {} .", pick(rng, &PLAIN_ADJECTIVES), pick(rng, &NOUNS)),
        3 => format!("we saw {subj} with {} .", pick(rng, &PEOPLE)),
        4 => format!(
            "{} {} a {} {} .",
            pick(rng, &PEOPLE),
            pick(rng, &VERBS),
            pick(rng, &PLAIN_ADJECTIVES),
            pick(rng, &NOUNS)
        ),
        _ => format!(
            "{subj} takes place in a {} {} by the {} .",
            pick(rng, &PLAIN_ADJECTIVES),
            pick(rng, &NOUNS),
            pick(rng, &NOUNS)
        ),
    }
}
