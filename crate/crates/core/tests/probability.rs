use epireader::autodiff::Tape;
use epireader::data::vocab::PLACEHOLDER_TOKEN;
use epireader::data::{build_vocab, RawCloze};
use epireader::extractor::aggregate_word_probs;
use epireader::micro::MICRO_DIMS;
use epireader::model::{combine_probabilities, EpiReader, Evidence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 10_000;
const TOL: f64 = 1e-9;

fn assert_distribution(p: &[f64], what: &str) {
    assert!(!p.is_empty(), "{what}: empty");
    for &x in p {
        assert!(x.is_finite() && (0.0..=1.0 + TOL).contains(&x), "{what}: entry {x}");
    }
    let total: f64 = p.iter().sum();
    assert!((total - 1.0).abs() <= TOL, "{what}: sums to {total}");
}

#[test]
fn softmax_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..40);
        let scale = 10f64.powi(rng.gen_range(-2..4));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let mut tape = Tape::new();
        let v = tape.constant(&[n], x).unwrap();
        let p = tape.softmax(v, None).unwrap();
        assert_distribution(tape.value(p), "softmax");
        if mask.iter().any(|&m| m) {
            let q = tape.softmax(v, Some(&mask)).unwrap();
            let q = tape.value(q);
            assert_distribution(q, "masked softmax");
            assert!(q.iter().zip(&mask).all(|(&x, &m)| m || x == 0.0));
        }
    }
}

/// Groups positions by word with nested loops, in text order.
fn brute_force_groups(s: &[f64], ids: &[usize]) -> Vec<(usize, f64, Vec<usize>)> {
    let mut out: Vec<(usize, f64, Vec<usize>)> = Vec::new();
    for (i, &w) in ids.iter().enumerate() {
        if out.iter().any(|g| g.0 == w) {
            continue;
        }
        let mut total = 0.0;
        let mut pos = Vec::new();
        for (j, &v) in ids.iter().enumerate().skip(i) {
            if v == w {
                total += s[j];
                pos.push(j);
            }
        }
        out.push((w, total, pos));
    }
    out
}

#[test]
fn word_aggregation_matches_grouping_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..60);
        let vocab = rng.gen_range(1..15);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let s: Vec<f64> = raw.iter().map(|x| x / z).collect();

        let wp = aggregate_word_probs(&s, &ids, None).unwrap();
        let oracle = brute_force_groups(&s, &ids);
        assert_eq!(wp.entries.len(), oracle.len());
        for (e, (w, total, pos)) in wp.entries.iter().zip(&oracle) {
            assert_eq!(e.word, *w);
            assert_eq!(e.prob.to_bits(), total.to_bits());
            assert_eq!(&e.positions, pos);
        }
        assert!((wp.total() - 1.0).abs() <= TOL);
    }
}

#[test]
fn combination_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..TRIALS {
        let k = rng.gen_range(1..12);
        let mut e: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-6..1.0)).collect();
        let ze: f64 = e.iter().sum();
        e.iter_mut().for_each(|x| *x /= ze);
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-6..1.0) / k as f64).collect();
        let pi = combine_probabilities(&e, &p).unwrap();
        assert_distribution(&pi, "combination");
    }
}

fn random_example(rng: &mut ChaCha8Rng, i: usize) -> RawCloze {
    let words: Vec<String> = (0..8).map(|w| format!("w{w}")).collect();
    let mut text = Vec::new();
    let mut starts = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        starts.push(text.len());
        for _ in 0..rng.gen_range(3..7) {
            text.push(words[rng.gen_range(0..words.len())].clone());
        }
    }
    let answer = text[rng.gen_range(0..text.len())].clone();
    let mut question: Vec<String> = (0..rng.gen_range(2..6))
        .map(|_| words[rng.gen_range(0..words.len())].clone())
        .collect();
    let at = rng.gen_range(0..=question.len());
    question.insert(at, PLACEHOLDER_TOKEN.to_string());
    RawCloze {
        source: format!("random:{i}"),
        text,
        sentence_starts: Some(starts),
        question,
        answer,
        candidates: words,
        entity_map: Vec::new(),
    }
}

#[test]
fn reasoner_and_combined_outputs_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raws: Vec<RawCloze> = (0..TRIALS).map(|i| random_example(&mut rng, i)).collect();
    let vocab = build_vocab(&raws, 1);
    let mut dims = MICRO_DIMS;
    dims.k = 3;
    let (reader, params) = EpiReader::new(dims, vocab.len(), 5);
    for raw in &raws {
        let ex = vocab.encode(raw).unwrap();
        let pred = reader.predict(&params, &ex, Evidence::Reasoner, true).unwrap();
        let c = pred.combined.expect("full prediction");
        assert_distribution(&c.e, "reasoner softmax");
        assert_distribution(&c.pi, "combined");
        assert!(c.p.iter().all(|&x| x > 0.0 && x <= 1.0 + TOL));
    }
}
