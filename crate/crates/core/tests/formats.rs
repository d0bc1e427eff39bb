mod common;

use epireader::data::vocab::PLACEHOLDER_TOKEN;
use epireader::data::{build_vocab, parse_cbt, parse_cnn, render_cbt_corpus};

#[test]
fn cbt_round_trip_is_byte_identical() {
    let text = common::cbt_fixture(100, 11);
    let corpus = parse_cbt(text.as_bytes()).unwrap();
    assert_eq!(corpus.examples.len(), 100);
    assert_eq!(corpus.rejected_multiword, 0);
    for ex in &corpus.examples {
        assert_eq!(ex.sentences().len(), 20);
        assert_eq!(ex.candidates.len(), 10);
    }
    assert_eq!(render_cbt_corpus(&corpus.examples), text);
    let again = parse_cbt(render_cbt_corpus(&corpus.examples).as_bytes()).unwrap();
    assert_eq!(again, corpus);
}

#[test]
fn cbt_examples_encode() {
    let corpus = parse_cbt(common::cbt_fixture(10, 3).as_bytes()).unwrap();
    let vocab = build_vocab(&corpus.examples, 1);
    for raw in &corpus.examples {
        let ex = vocab.encode(raw).unwrap();
        assert_eq!(ex.text.len(), raw.text.len());
        assert_eq!(ex.sentences().len(), 20);
    }
}

#[test]
fn cnn_conforming_story() {
    let ex = parse_cnn(common::CNN_STORY.as_bytes()).unwrap();
    assert_eq!(ex.source, "http://www.cnn.com/2015/04/01/example");
    assert_eq!(ex.answer, "@entity3");
    assert_eq!(ex.candidates, ["@entity1", "@entity2", "@entity3", "@entity4"]);
    assert_eq!(ex.question.iter().filter(|w| *w == PLACEHOLDER_TOKEN).count(), 1);
    assert_eq!(ex.entity_map.len(), 4);
    assert!(ex.has_support());
}

#[test]
fn cnn_mutations_are_rejected_with_their_class() {
    for (what, story, kind) in common::cnn_mutations() {
        let err = parse_cnn(story.as_bytes()).expect_err(what);
        assert_eq!(err.parse_kind(), Some(kind), "{what}: {err}");
        assert_eq!(err.exit_code(), 2, "{what}");
    }
}
