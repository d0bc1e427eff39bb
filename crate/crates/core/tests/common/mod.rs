#![allow(dead_code)]

use epireader::error::ParseErrorKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 24] = [
    "the", "king", "walked", "to", "a", "river", "and", "saw", "fox", "who", "was", "hungry", "queen", "garden",
    "stone", "bird", "sang", "old", "tree", "under", "moon", "bread", "boy", "girl",
];

/// A CBT stream of `n` lowercase blocks, 20 context lines each, written
/// exactly as the renderer would produce them.
pub fn cbt_fixture(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..n {
        for line in 1..=20 {
            let len = rng.gen_range(3..12);
            let s: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            out.push_str(&format!("{line} {} .\n", s.join(" ")));
        }
        let mut cands: Vec<&str> = WORDS.choose_multiple(&mut rng, 10).copied().collect();
        cands.shuffle(&mut rng);
        let answer = cands[rng.gen_range(0..10)];
        let hole = rng.gen_range(0..5);
        let q: Vec<&str> = (0..5)
            .map(|i| {
                if i == hole {
                    "XXXXX"
                } else {
                    WORDS.choose(&mut rng).unwrap()
                }
            })
            .collect();
        out.push_str(&format!("21 {} .\t{answer}\t\t{}\n\n", q.join(" "), cands.join("|")));
    }
    out
}

pub const CNN_STORY: &str = "http://www.cnn.com/2015/04/01/example\n\
\n\
@entity1 , the capital of @entity2 , hosted the summit on monday .\n\
leaders from @entity3 and @entity4 attended , and @entity3 spoke first .\n\
\n\
@placeholder spoke first at the summit in @entity1\n\
\n\
@entity3\n\
\n\
@entity1:Paris\n\
@entity2:France\n\
@entity3:Germany\n\
@entity4:Italy\n";

/// Five broken variants of [`CNN_STORY`] and the error each must raise.
pub fn cnn_mutations() -> Vec<(&'static str, String, ParseErrorKind)> {
    vec![
        (
            "placeholder removed",
            CNN_STORY.replace("@placeholder spoke", "@entity3 spoke"),
            ParseErrorKind::MissingPlaceholder,
        ),
        (
            "placeholder doubled",
            CNN_STORY.replace("summit in @entity1\n", "summit in @placeholder\n"),
            ParseErrorKind::MultiplePlaceholders,
        ),
        (
            "answer not an entity",
            CNN_STORY.replace("\n@entity3\n\n", "\nGermany\n\n"),
            ParseErrorKind::AnswerNotEntity,
        ),
        (
            "sections truncated",
            CNN_STORY.split("\n\n").take(2).collect::<Vec<_>>().join("\n\n"),
            ParseErrorKind::MissingSection,
        ),
        (
            "mapping line broken",
            CNN_STORY.replace("@entity2:France", "entity2 France"),
            ParseErrorKind::BadEntityMapping,
        ),
    ]
}
