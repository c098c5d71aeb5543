use std::collections::BTreeSet;

use entrex::rdf::{Literal, Object, Quad};
use entrex::store::{corpus_stats, EntityStore};
use entrex::vocab::{default_title_predicates, OWL_SAME_AS, RDFS_LABEL, UNTYPED};
use proptest::prelude::*;

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

fn quad() -> impl Strategy<Value = Quad> {
    let subject = (0..6u8).prop_map(|i| format!("http://ex/e{i}"));
    let predicate = prop_oneof![
        Just(RDF_TYPE.to_string()),
        Just(RDFS_LABEL.to_string()),
        Just(OWL_SAME_AS.to_string()),
        (0..3u8).prop_map(|i| format!("http://ex/p{i}")),
    ];
    let object = prop_oneof![
        (0..6u8).prop_map(|i| Object::Iri(format!("http://ex/e{i}"))),
        (0..3u8).prop_map(|i| Object::Iri(format!("http://ex/T{i}"))),
        "[a-z ]{0,8}".prop_map(|s| Object::Literal(Literal {
            lexical_form: s,
            language_tag: None,
            datatype: None,
        })),
    ];
    let graph = proptest::option::of((0..2u8).prop_map(|g| format!("http://ex/g{g}")));
    (subject, predicate, object, graph).prop_filter_map("rdf:type needs an IRI object", |(s, p, o, g)| {
        (p != RDF_TYPE || matches!(o, Object::Iri(_))).then_some(Quad {
            subject: s,
            predicate: p,
            object: o,
            graph: g,
        })
    })
}

fn saved_bytes(store: &EntityStore) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    names.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

proptest! {
    #[test]
    fn input_order_does_not_matter(mut quads in proptest::collection::vec(quad(), 0..40), seed in any::<u64>()) {
        let titles = default_title_predicates();
        let a = EntityStore::assemble(&quads, &titles).unwrap();
        let n = quads.len();
        for i in 0..n {
            let j = (seed as usize).wrapping_mul(i + 7) % n;
            quads.swap(i, j);
        }
        let b = EntityStore::assemble(&quads, &titles).unwrap();
        prop_assert_eq!(saved_bytes(&a), saved_bytes(&b));
    }

    #[test]
    fn every_distinct_triple_lands_once(quads in proptest::collection::vec(quad(), 0..40)) {
        let store = EntityStore::assemble(&quads, &default_title_predicates()).unwrap();
        let distinct: BTreeSet<(&str, &str, &Object)> =
            quads.iter().map(|q| (q.subject.as_str(), q.predicate.as_str(), &q.object)).collect();
        let mut placed = 0;
        for p in store.iter() {
            placed += p.types.iter().filter(|t| *t != UNTYPED).count();
            placed += p.body_literals.len() + p.object_properties.len();
            prop_assert!(p.title_literals.len() <= p.body_literals.len());
        }
        prop_assert_eq!(placed, distinct.len());
        let subjects: BTreeSet<&str> = quads.iter().map(|q| q.subject.as_str()).collect();
        prop_assert_eq!(store.len(), subjects.len());
        let histogram_total: usize = store.manifest().type_histogram.values().sum();
        let type_total: usize = store.iter().map(|p| p.types.len()).sum();
        prop_assert_eq!(histogram_total, type_total);
    }

    #[test]
    fn save_load_preserves_profiles(quads in proptest::collection::vec(quad(), 0..30)) {
        let store = EntityStore::assemble(&quads, &default_title_predicates()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let loaded = EntityStore::load(dir.path()).unwrap();
        prop_assert_eq!(loaded.manifest(), store.manifest());
        prop_assert!(loaded.iter().eq(store.iter()));
    }

    #[test]
    fn similarity_statements_never_exceed_object_properties(quads in proptest::collection::vec(quad(), 0..40)) {
        for s in corpus_stats(&quads).values() {
            prop_assert!(s.explicit_similarity_statements <= s.object_property_statements);
        }
    }
}

#[test]
fn corrupt_index_is_rejected() {
    let quads = vec![Quad {
        subject: "http://ex/a".into(),
        predicate: RDFS_LABEL.into(),
        object: Object::Literal(Literal {
            lexical_form: "A".into(),
            language_tag: None,
            datatype: None,
        }),
        graph: None,
    }];
    let store = EntityStore::assemble(&quads, &default_title_predicates()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    std::fs::write(dir.path().join(entrex::store::INDEX_FILE), "http://ex/a\tnope\n").unwrap();
    assert!(EntityStore::load(dir.path()).is_err());
}
