mod common;

use jptdp::conllu::{is_projective, is_projective_heads, parse_conllu, read_conllu, to_conllu_string, write_conllu};
use jptdp::model::seeded_rng;
use rand::Rng;

use common::oracles::{crossing_free, is_tree};
use common::{data_path, fixture_files};

#[test]
fn every_fixture_round_trips_byte_for_byte() {
    let files = fixture_files();
    assert!(files.len() >= 4);
    let dir = tempfile::tempdir().unwrap();
    for path in files {
        let original = std::fs::read(&path).unwrap();
        let tb = read_conllu(&path).unwrap();
        let out = dir.path().join(path.file_name().unwrap());
        write_conllu(&tb, &out).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), original, "{}", path.display());
    }
}

#[test]
fn sample_keeps_comments_multiword_and_empty_nodes() {
    let tb = read_conllu(data_path("en_sample.conllu")).unwrap();
    assert_eq!(tb.len(), 8);
    let s2 = &tb.sentences[1];
    assert_eq!(s2.len(), 7);
    assert_eq!(s2.tokens[1].form, "do");
    assert_eq!(tb.sentences[2].len(), 7);
    assert!(tb.sentences[7].tokens.iter().any(|t| t.form == "Zürich"));
    assert!(tb.sentences.iter().all(|s| is_projective(s).unwrap()));
}

#[test]
fn unannotated_input_parses_without_heads() {
    let tb = read_conllu(data_path("unannotated.conllu")).unwrap();
    assert_eq!(tb.token_count(), 7);
    assert!(tb
        .sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .all(|t| t.head.is_none() && t.upos == "_"));
}

#[test]
fn crossing_arcs_are_detected() {
    let tb = read_conllu(data_path("nonprojective.conllu")).unwrap();
    assert!(!is_projective(&tb.sentences[0]).unwrap());
}

#[test]
fn projectivity_matches_pairwise_crossing_oracle() {
    let mut rng = seeded_rng(12);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(1..=9);
        let heads: Vec<usize> = (1..=n)
            .map(|m| loop {
                let h = rng.random_range(0..=n);
                if h != m {
                    break h;
                }
            })
            .collect();
        if !is_tree(&heads) {
            continue;
        }
        assert_eq!(is_projective_heads(&heads).unwrap(), crossing_free(&heads), "{heads:?}");
        checked += 1;
    }
}

#[test]
fn string_round_trip_of_generated_text() {
    let text = "# c\n1\tx\t_\tX\t_\t_\t0\troot\t_\t_\n\n";
    let tb = parse_conllu(text, "inline").unwrap();
    assert_eq!(to_conllu_string(&tb), text);
}
