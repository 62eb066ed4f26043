//! Template-based synthetic corpus: drug-trade chatter whose drug slot is
//! filled by a seed, mixed with unrelated everyday sentences.
//!
//! Both sentence families share some slot words (cities, times), and a few
//! homographs (`candy`, `ice`) occasionally take the drug slot, so the
//! benchmark is not separable by vocabulary alone.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, RawCorpus, RawSentence, Split};
use crate::error::{Error, Result};

pub const DEFAULT_SEEDS: [&str; 5] = ["cocaine", "heroin", "ketamine", "mescaline", "oxycodone"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sentences: usize,
    /// Share of sentences drawn from the drug templates.
    pub drug_fraction: f64,
    pub seeds: Vec<String>,
    /// Probability that a drug slot holds a homograph instead of a seed.
    pub homograph_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sentences: 5000,
            drug_fraction: 0.2,
            seeds: DEFAULT_SEEDS.iter().map(|s| s.to_string()).collect(),
            homograph_rate: 0.05,
            seed: 42,
        }
    }
}

const HOMOGRAPHS: [&str; 2] = ["candy", "ice"];

const DRUG_TEMPLATES: &[&str] = &[
    "i need to $buy a $qty of $D from my $dealer before $day",
    "my $dealer says the $D is $qual this time",
    "anyone know where to $buy $qual $D near the $spot",
    "just $use some $D and now i feel $feel",
    "the $D from the $spot was $qual but the price was $price",
    "how much for a $qty of $D in $city these days",
    "my $dealer got a fresh batch of $D on $day",
    "never $use $D alone it is way too $risk",
    "cops raided the $spot and found $D everywhere",
    "i have been clean off $D for $time now",
    "mixing $D with booze is $risk man",
    "he sold me a $qty of $D for $price cash",
    "pretty sure my $dealer cut the $D with something $qual",
    "looking for $D around $city tonight hit me up",
    "she was hooked on $D for $time before rehab",
    "the withdrawal from $D is the worst thing i ever felt",
    "can you $ship a $qty of $D discreetly to $city",
    "that $qty of $D i got last $day was $qual",
    "what is the going rate for $D around $city right now",
    "tried $D once at a $party and felt $feel all night",
    "my $dealer only takes cash for $D no exceptions",
    "is $D from the $spot safe or is it $qual",
];

const BENIGN_TEMPLATES: &[&str] = &[
    "i had $food for lunch at the $venue with my $person",
    "we went to the $venue after the $sport game",
    "the weather in $city is $weather today",
    "my $person loves $activity on the weekend",
    "does anyone know a good $venue for $food in $city",
    "i just bought a new $tech and it is $adj",
    "our $animal keeps chasing the next door $animal in the yard",
    "the $sport match last night was $adj",
    "can someone recommend a $adj book about $topic",
    "i spent $time learning $topic and it was $adj",
    "we are planning a trip to $city next $month",
    "she made $food with fresh $produce from the market",
    "the $venue downtown has the best $drink in $city",
    "my $tech stopped working after the update on $day",
    "it was $weather so we stayed home and watched $show",
    "my $person and i went $activity by the $nature",
    "anyone watching $show tonight it looks $adj",
    "i need advice on fixing my $vehicle before $month",
    "the kids played $sport near the $nature all afternoon",
    "he cooked $food and $food for the whole $group",
    "we adopted a $animal from the shelter last $month",
    "is the new $tech worth the money or should i wait",
    "the $group meeting moved to the $venue on $day",
    "my $person recommended $show and it was $adj",
    "a cold $drink tastes $adj when it is $weather outside",
    "i finally finished reading about $topic on $day",
    "there is a $adj festival in $city this $month",
    "who else is going $activity on $day morning",
    "my $vehicle needs new tires before the trip to $city",
    "the $venue had live music and $adj $food",
    "grabbed some $food and $drink for the $group on $day",
    "our $group won the $sport league for $time straight",
];

fn slot(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "buy" => &[
            "buy", "cop", "score", "grab", "pick", "get", "order", "snag",
        ],
        "qty" => &[
            "gram", "ounce", "eighth", "half", "point", "baggie", "brick", "quarter", "zip",
            "bundle",
        ],
        "dealer" => &[
            "dealer",
            "plug",
            "connect",
            "supplier",
            "runner",
            "guy",
            "source",
            "middleman",
        ],
        "qual" => &[
            "pure",
            "strong",
            "cheap",
            "clean",
            "potent",
            "uncut",
            "weak",
            "stepped-on",
            "dirty",
            "fire",
            "garbage",
            "legit",
        ],
        "use" => &[
            "snort", "smoke", "inject", "take", "try", "dose", "bump", "shoot",
        ],
        "feel" => &[
            "numb",
            "wired",
            "sick",
            "euphoric",
            "paranoid",
            "dizzy",
            "invincible",
            "nauseous",
            "floaty",
            "jittery",
        ],
        "spot" => &[
            "trap", "corner", "alley", "stash", "squat", "block", "hood", "projects", "motel",
            "lot",
        ],
        "price" => &[
            "forty", "sixty", "eighty", "hundred", "fifty", "ninety", "seventy", "thirty",
        ],
        "risk" => &[
            "risky",
            "dangerous",
            "sketchy",
            "reckless",
            "deadly",
            "stupid",
        ],
        "ship" => &["ship", "mail", "send", "drop"],
        "party" => &[
            "rave",
            "festival",
            "club",
            "party",
            "afterparty",
            "warehouse",
        ],
        "time" => &[
            "months",
            "weeks",
            "years",
            "ages",
            "decades",
            "seasons",
            "days",
            "ten years",
        ],
        "city" => &[
            "boston", "chicago", "denver", "seattle", "austin", "miami", "detroit", "portland",
            "phoenix", "atlanta", "dallas", "houston", "memphis", "oakland", "tampa", "omaha",
            "tulsa", "reno", "fresno", "toledo",
        ],
        "day" => &[
            "monday",
            "tuesday",
            "wednesday",
            "thursday",
            "friday",
            "saturday",
            "sunday",
        ],
        "food" => &[
            "pizza",
            "tacos",
            "sushi",
            "pasta",
            "burgers",
            "salad",
            "soup",
            "ramen",
            "curry",
            "pancakes",
            "waffles",
            "sandwiches",
            "noodles",
            "dumplings",
            "steak",
            "chili",
            "lasagna",
            "burritos",
            "bagels",
            "cookies",
            "pie",
            "cake",
            "candy",
            "muffins",
            "omelets",
            "risotto",
            "falafel",
            "kebabs",
            "nachos",
            "brownies",
        ],
        "person" => &[
            "sister", "brother", "mom", "dad", "cousin", "roommate", "neighbor", "coworker",
            "boss", "aunt", "uncle", "grandma", "grandpa", "wife", "husband",
        ],
        "venue" => &[
            "cafe",
            "diner",
            "bakery",
            "bistro",
            "pub",
            "restaurant",
            "brewery",
            "library",
            "museum",
            "gym",
            "mall",
            "theater",
            "bookstore",
            "arcade",
            "park",
            "stadium",
            "market",
            "bar",
            "deli",
            "pizzeria",
        ],
        "sport" => &[
            "soccer",
            "baseball",
            "basketball",
            "hockey",
            "tennis",
            "football",
            "volleyball",
            "rugby",
            "cricket",
            "golf",
            "lacrosse",
            "softball",
        ],
        "weather" => &[
            "sunny", "rainy", "windy", "cloudy", "foggy", "humid", "freezing", "snowy", "mild",
            "stormy",
        ],
        "activity" => &[
            "hiking",
            "fishing",
            "camping",
            "cycling",
            "swimming",
            "running",
            "skating",
            "kayaking",
            "gardening",
            "painting",
            "climbing",
            "sailing",
            "bowling",
            "dancing",
            "birdwatching",
        ],
        "tech" => &[
            "laptop",
            "phone",
            "tablet",
            "printer",
            "router",
            "camera",
            "headset",
            "monitor",
            "keyboard",
            "console",
            "speaker",
            "smartwatch",
            "drone",
            "projector",
            "microwave",
        ],
        "animal" => &[
            "dog", "cat", "puppy", "kitten", "rabbit", "hamster", "parrot", "squirrel", "raccoon",
            "goose", "duck", "ferret", "tortoise", "pony", "lizard",
        ],
        "adj" => &[
            "great",
            "awesome",
            "boring",
            "amazing",
            "terrible",
            "decent",
            "fantastic",
            "okay",
            "lovely",
            "weird",
            "fun",
            "solid",
            "hilarious",
            "brilliant",
            "mediocre",
            "charming",
            "cozy",
            "delicious",
            "noisy",
            "relaxing",
        ],
        "topic" => &[
            "history",
            "astronomy",
            "gardening",
            "cooking",
            "physics",
            "poetry",
            "economics",
            "chemistry",
            "geology",
            "philosophy",
            "architecture",
            "photography",
            "biology",
            "music",
            "painting",
            "linguistics",
            "sculpture",
            "robotics",
            "statistics",
            "carpentry",
        ],
        "month" => &[
            "january",
            "february",
            "march",
            "april",
            "may",
            "june",
            "july",
            "august",
            "september",
            "october",
            "november",
            "december",
        ],
        "produce" => &[
            "tomatoes",
            "basil",
            "spinach",
            "peppers",
            "onions",
            "garlic",
            "carrots",
            "berries",
            "apples",
            "lemons",
            "zucchini",
            "mushrooms",
        ],
        "drink" => &[
            "coffee",
            "tea",
            "lemonade",
            "cider",
            "smoothie",
            "espresso",
            "cocoa",
            "milkshake",
            "soda",
            "juice",
            "ice",
            "latte",
        ],
        "show" => &[
            "documentaries",
            "cartoons",
            "sitcoms",
            "movies",
            "baking shows",
            "the news",
            "reruns",
            "anime",
            "westerns",
            "game shows",
            "dramas",
            "musicals",
        ],
        "nature" => &[
            "lake",
            "river",
            "beach",
            "forest",
            "mountains",
            "creek",
            "pond",
            "meadow",
            "bay",
            "canyon",
            "trail",
            "harbor",
        ],
        "vehicle" => &[
            "car",
            "truck",
            "bike",
            "van",
            "scooter",
            "motorcycle",
            "jeep",
            "minivan",
        ],
        "group" => &[
            "team",
            "family",
            "club",
            "class",
            "crew",
            "band",
            "office",
            "neighborhood",
            "choir",
            "troop",
        ],
        _ => return None,
    })
}

fn fill<R: Rng>(template: &str, drug: &str, rng: &mut R) -> Vec<String> {
    let mut out = Vec::new();
    for word in template.split_whitespace() {
        match word.strip_prefix('$') {
            Some("D") => out.push(drug.to_string()),
            Some(name) => {
                let choices =
                    slot(name).unwrap_or_else(|| panic!("template slot `{name}` has no word list"));
                out.extend(
                    choices
                        .choose(rng)
                        .unwrap()
                        .split_whitespace()
                        .map(str::to_string),
                );
            }
            None => out.push(word.to_string()),
        }
    }
    out
}

/// Generates the corpus. Drug sentences cycle through the seeds so each seed
/// gets an equal share; they land in the dedup split, the rest in white.
pub fn generate(cfg: &SynthConfig) -> Result<RawCorpus> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidInput(
            "synthetic corpus needs at least one seed".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.drug_fraction) || !(0.0..=1.0).contains(&cfg.homograph_rate) {
        return Err(Error::InvalidInput("fractions must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_drug = (cfg.drug_fraction * cfg.n_sentences as f64).round() as usize;
    let mut kinds: Vec<bool> = (0..cfg.n_sentences).map(|i| i < n_drug).collect();
    rand::seq::SliceRandom::shuffle(kinds.as_mut_slice(), &mut rng);
    let mut sentences = Vec::with_capacity(cfg.n_sentences);
    let mut drug_count = 0usize;
    for (id, is_drug) in kinds.into_iter().enumerate() {
        let (tokens, split) = if is_drug {
            let drug = if rng.random_bool(cfg.homograph_rate) {
                HOMOGRAPHS.choose(&mut rng).unwrap().to_string()
            } else {
                cfg.seeds[drug_count % cfg.seeds.len()].clone()
            };
            drug_count += 1;
            (
                fill(DRUG_TEMPLATES.choose(&mut rng).unwrap(), &drug, &mut rng),
                Split::Dedup,
            )
        } else {
            (
                fill(BENIGN_TEMPLATES.choose(&mut rng).unwrap(), "", &mut rng),
                Split::White,
            )
        };
        sentences.push(RawSentence {
            id: id as u64,
            raw: detokenize(&tokens),
            tokens,
            split,
        });
    }
    Ok(RawCorpus {
        sentences,
        skipped_lines: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize};
    use std::collections::HashSet;

    #[test]
    fn every_slot_resolves() {
        for t in DRUG_TEMPLATES.iter().chain(BENIGN_TEMPLATES) {
            for w in t.split_whitespace().filter_map(|w| w.strip_prefix('$')) {
                assert!(w == "D" || slot(w).is_some(), "{t}: {w}");
            }
        }
    }

    #[test]
    fn default_corpus_shape() {
        let cfg = SynthConfig::default();
        let c = generate(&cfg).unwrap();
        assert_eq!(c.len(), 5000);
        let drug = c
            .sentences
            .iter()
            .filter(|s| s.split == Split::Dedup)
            .count();
        assert_eq!(drug, 1000);
        for seed in &cfg.seeds {
            let n = c
                .sentences
                .iter()
                .filter(|s| s.tokens.contains(seed))
                .count();
            assert!(n > 150, "{seed}: {n}");
        }
        let vocab = build_vocab(&c, 1);
        assert!((400..650).contains(&vocab.n_terms()), "{}", vocab.n_terms());
        // text re-tokenizes to the stored tokens
        for s in c.sentences.iter().take(200) {
            assert_eq!(tokenize(&s.raw), s.tokens);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig {
            n_sentences: 300,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SynthConfig {
            seed: 7,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn seeds_only_in_drug_sentences() {
        let cfg = SynthConfig {
            n_sentences: 1000,
            ..Default::default()
        };
        let seeds: HashSet<&String> = cfg.seeds.iter().collect();
        for s in &generate(&cfg).unwrap().sentences {
            if s.split == Split::White {
                assert!(s.tokens.iter().all(|t| !seeds.contains(t)));
            }
        }
    }
}
