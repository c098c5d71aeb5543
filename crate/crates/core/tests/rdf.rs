use std::io::Write;

use entrex::rdf::{open_source, parse_line, read_all, ErrorKind, Literal, Object, ParseMode, ParseOutcome, Quad, QuadStream};
use flate2::write::GzEncoder;
use proptest::prelude::*;

fn iri() -> impl Strategy<Value = String> {
    "[a-z]{1,8}://[A-Za-z0-9._~/#-]{0,16}"
}

fn literal() -> impl Strategy<Value = Literal> {
    let lexical = any::<String>();
    let lang = proptest::option::of("[a-z]{2,3}(-[a-z0-9]{1,8})?");
    (lexical, lang, proptest::option::of(iri())).prop_map(|(lexical_form, language_tag, dt)| Literal {
        lexical_form,
        datatype: if language_tag.is_some() { None } else { dt },
        language_tag,
    })
}

fn quad() -> impl Strategy<Value = Quad> {
    let object = prop_oneof![iri().prop_map(Object::Iri), literal().prop_map(Object::Literal)];
    (iri(), iri(), object, proptest::option::of(iri())).prop_map(|(subject, predicate, object, graph)| Quad {
        subject,
        predicate,
        object,
        graph,
    })
}

proptest! {
    #[test]
    fn serialization_round_trips(q in quad()) {
        let line = q.to_nquads();
        match parse_line(&line) {
            ParseOutcome::Quad(parsed) => prop_assert_eq!(parsed, q),
            other => prop_assert!(false, "{line:?} -> {other:?}"),
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let (_, report) = read_all(&bytes[..], ParseMode::Tolerant).unwrap();
        prop_assert_eq!(report.quads_ok + report.skipped() <= report.lines_total, true);
    }

    #[test]
    fn arbitrary_lines_never_panic(line in "\\PC{0,120}") {
        let _ = parse_line(&line);
    }

    #[test]
    fn mutated_statements_never_panic(q in quad(), cut in 0usize..200, junk in "[<>\"\\\\@^ .#_:]{0,3}") {
        let mut line = q.to_nquads();
        let at = line.char_indices().map(|(i, _)| i).nth(cut % line.chars().count().max(1)).unwrap_or(0);
        line.insert_str(at, &junk);
        let _ = parse_line(&line);
    }
}

#[test]
fn tolerant_mode_tallies_errors() {
    let input = "\
<http://ex/a> <http://ex/p> <http://ex/b> .
# comment

<http://ex/a> <http://ex/p> \"open .
<http://ex/a> <http://ex/p> <http://ex/b>
<http://ex/a <http://ex/p> <http://ex/b> .
<http://ex/a> <http://ex/p> \"x\\q\" .
<http://ex/c> <http://ex/p> \"ok\"@EN <http://ex/g> .
";
    let (quads, report) = read_all(input.as_bytes(), ParseMode::Tolerant).unwrap();
    assert_eq!(quads.len(), 2);
    assert_eq!(report.lines_total, 8);
    assert_eq!(report.quads_ok, 2);
    assert_eq!(report.skipped(), 4);
    assert_eq!(report.lines_skipped.get(&ErrorKind::UnterminatedLiteral), Some(&1));
    assert_eq!(report.lines_skipped.get(&ErrorKind::MissingTerminator), Some(&1));
    assert_eq!(report.lines_skipped.get(&ErrorKind::MalformedIri), Some(&1));
    assert_eq!(report.lines_skipped.get(&ErrorKind::BadEscape), Some(&1));
    match &quads[1].object {
        Object::Literal(l) => assert_eq!(l.language_tag.as_deref(), Some("en")),
        o => panic!("{o:?}"),
    }
    assert!(read_all(input.as_bytes(), ParseMode::Strict).is_err());
}

#[test]
fn stream_is_lazy_and_reports() {
    let input = "<http://ex/a> <http://ex/p> <http://ex/b> .\nbroken\n";
    let mut stream = QuadStream::new(input.as_bytes(), ParseMode::Tolerant);
    assert!(stream.next().unwrap().is_ok());
    assert!(stream.next().is_none());
    assert_eq!(stream.report().skipped(), 1);
}

#[test]
fn gzip_input_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let text = "<http://ex/a> <http://ex/p> \"v\" .\n<http://ex/b> <http://ex/p> <http://ex/a> .\n";
    let plain = dir.path().join("c.nt");
    std::fs::write(&plain, text).unwrap();
    let gz = dir.path().join("c.nt.gz");
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(text.as_bytes()).unwrap();
    std::fs::write(&gz, enc.finish().unwrap()).unwrap();

    let (a, _) = read_all(open_source(&plain).unwrap(), ParseMode::Strict).unwrap();
    let (b, _) = read_all(open_source(&gz).unwrap(), ParseMode::Strict).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
}
