//! Line-oriented N-Triples / N-Quads reader.
//!
//! Each physical line is parsed independently, so a file can be split into
//! shards and parsed in parallel. Crawl data is noisy, so the default
//! [`ParseMode::Tolerant`] skips malformed lines and tallies them by
//! [`ErrorKind`] in an [`IngestReport`].
//!
//! Blank nodes (`_:label`) are kept verbatim in the IRI slots and behave like
//! any other identifier downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// A literal with its escapes resolved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub lexical_form: String,
    pub language_tag: Option<String>,
    pub datatype: Option<String>,
}

impl Literal {
    pub fn plain(text: impl Into<String>) -> Self {
        Literal {
            lexical_form: text.into(),
            language_tag: None,
            datatype: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Object {
    Iri(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quad {
    pub subject: String,
    pub predicate: String,
    pub object: Object,
    pub graph: Option<String>,
}

impl Quad {
    /// Canonical N-Quads serialization (terminated by ` .`, no newline).
    pub fn to_nquads(&self) -> String {
        let mut out = String::new();
        write_node(&mut out, &self.subject);
        out.push(' ');
        write_node(&mut out, &self.predicate);
        out.push(' ');
        match &self.object {
            Object::Iri(iri) => write_node(&mut out, iri),
            Object::Literal(lit) => {
                out.push('"');
                escape_literal(&mut out, &lit.lexical_form);
                out.push('"');
                if let Some(lang) = &lit.language_tag {
                    out.push('@');
                    out.push_str(lang);
                } else if let Some(dt) = &lit.datatype {
                    out.push_str("^^");
                    write_node(&mut out, dt);
                }
            }
        }
        if let Some(g) = &self.graph {
            out.push(' ');
            write_node(&mut out, g);
        }
        out.push_str(" .");
        out
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_nquads())
    }
}

fn write_node(out: &mut String, id: &str) {
    if id.starts_with("_:") {
        out.push_str(id);
    } else {
        out.push('<');
        for c in id.chars() {
            // characters that cannot appear raw inside IRIREF
            if matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\') || c <= ' ' {
                out.push_str(&format!("\\u{:04X}", c as u32));
            } else {
                out.push(c);
            }
        }
        out.push('>');
    }
}

fn escape_literal(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    MalformedIri,
    UnterminatedLiteral,
    MissingTerminator,
    BadEscape,
    InvalidToken,
    InvalidUtf8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {offset}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Quad(Quad),
    Blank,
    Error(ParseError),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn err(&self, kind: ErrorKind) -> ParseError {
        ParseError {
            kind,
            offset: self.pos,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    /// `\uXXXX` / `\UXXXXXXXX`, with the cursor just past the `u`/`U`.
    fn unicode_escape(&mut self, digits: usize, start: usize) -> Result<char, ParseError> {
        let bad = ParseError {
            kind: ErrorKind::BadEscape,
            offset: start,
        };
        let end = self.pos + digits;
        let hex = self.src.get(self.pos..end).ok_or(bad.clone())?;
        if !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad);
        }
        let code = u32::from_str_radix(hex, 16).map_err(|_| bad.clone())?;
        self.pos = end;
        char::from_u32(code).ok_or(bad)
    }

    fn iri(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        if self.bump() != Some('<') {
            return Err(ParseError {
                kind: ErrorKind::MalformedIri,
                offset: start,
            });
        }
        let mut out = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None => {
                    return Err(ParseError {
                        kind: ErrorKind::MalformedIri,
                        offset: start,
                    })
                }
                Some('>') => break,
                Some('\\') => match self.bump() {
                    Some('u') => out.push(self.unicode_escape(4, here)?),
                    Some('U') => out.push(self.unicode_escape(8, here)?),
                    _ => {
                        return Err(ParseError {
                            kind: ErrorKind::BadEscape,
                            offset: here,
                        })
                    }
                },
                Some(c) if c <= ' ' || matches!(c, '<' | '"' | '{' | '}' | '|' | '^' | '`') => {
                    return Err(ParseError {
                        kind: ErrorKind::MalformedIri,
                        offset: here,
                    })
                }
                Some(c) => out.push(c),
            }
        }
        let trimmed = out.trim();
        if trimmed.is_empty() {
            return Err(ParseError {
                kind: ErrorKind::MalformedIri,
                offset: start,
            });
        }
        Ok(trimmed.to_string())
    }

    fn blank_node(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        // caller guarantees "_:" prefix
        self.pos += 2;
        let label_start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':') {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        // a trailing '.' belongs to the statement terminator
        while self.pos > label_start && self.src[..self.pos].ends_with('.') {
            self.pos -= 1;
        }
        if self.pos == label_start {
            return Err(ParseError {
                kind: ErrorKind::InvalidToken,
                offset: start,
            });
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn node(&mut self) -> Result<String, ParseError> {
        if self.src[self.pos..].starts_with("_:") {
            self.blank_node()
        } else {
            self.iri()
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let start = self.pos;
        self.bump(); // opening quote
        let mut text = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None => {
                    return Err(ParseError {
                        kind: ErrorKind::UnterminatedLiteral,
                        offset: start,
                    })
                }
                Some('"') => break,
                Some('\\') => {
                    let decoded = match self.bump() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('\'') => '\'',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        Some('b') => '\u{8}',
                        Some('f') => '\u{c}',
                        Some('u') => self.unicode_escape(4, here)?,
                        Some('U') => self.unicode_escape(8, here)?,
                        _ => {
                            return Err(ParseError {
                                kind: ErrorKind::BadEscape,
                                offset: here,
                            })
                        }
                    };
                    text.push(decoded);
                }
                Some(c) => text.push(c),
            }
        }
        let mut lit = Literal::plain(text);
        match self.peek() {
            Some('@') => {
                self.bump();
                let tag_start = self.pos;
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '-' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let tag = &self.src[tag_start..self.pos];
                if tag.is_empty() || !tag.as_bytes()[0].is_ascii_alphabetic() || tag.ends_with('-')
                {
                    return Err(ParseError {
                        kind: ErrorKind::InvalidToken,
                        offset: tag_start,
                    });
                }
                lit.language_tag = Some(tag.to_ascii_lowercase());
            }
            Some('^') => {
                if !self.src[self.pos..].starts_with("^^") {
                    return Err(self.err(ErrorKind::InvalidToken));
                }
                self.pos += 2;
                lit.datatype = Some(self.iri()?);
            }
            _ => {}
        }
        Ok(lit)
    }
}

/// Parses one physical line of an N-Triples or N-Quads file.
pub fn parse_line(line: &str) -> ParseOutcome {
    match parse_statement(line) {
        Ok(Some(q)) => ParseOutcome::Quad(q),
        Ok(None) => ParseOutcome::Blank,
        Err(e) => ParseOutcome::Error(e),
    }
}

fn parse_statement(line: &str) -> Result<Option<Quad>, ParseError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut cur = Cursor { src: line, pos: 0 };
    cur.skip_ws();
    if cur.at_end() || cur.peek() == Some('#') {
        return Ok(None);
    }

    let subject = match cur.peek() {
        Some('<') | Some('_') => cur.node()?,
        _ => return Err(cur.err(ErrorKind::MalformedIri)),
    };
    cur.skip_ws();
    if cur.peek() != Some('<') {
        return Err(cur.err(ErrorKind::MalformedIri));
    }
    let predicate = cur.iri()?;
    cur.skip_ws();
    let object = match cur.peek() {
        Some('<') | Some('_') => Object::Iri(cur.node()?),
        Some('"') => Object::Literal(cur.literal()?),
        None => return Err(cur.err(ErrorKind::MissingTerminator)),
        _ => return Err(cur.err(ErrorKind::InvalidToken)),
    };
    cur.skip_ws();
    let graph = match cur.peek() {
        Some('<') | Some('_') => {
            let g = cur.node()?;
            cur.skip_ws();
            Some(g)
        }
        _ => None,
    };
    if cur.peek() != Some('.') {
        return Err(cur.err(ErrorKind::MissingTerminator));
    }
    cur.bump();
    cur.skip_ws();
    if !cur.at_end() && cur.peek() != Some('#') {
        return Err(cur.err(ErrorKind::MissingTerminator));
    }
    Ok(Some(Quad {
        subject,
        predicate,
        object,
        graph,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Tolerant,
    Strict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines_total: u64,
    pub quads_ok: u64,
    pub lines_skipped: BTreeMap<ErrorKind, u64>,
}

impl IngestReport {
    pub fn skipped(&self) -> u64 {
        self.lines_skipped.values().sum()
    }

    /// Folds a shard's report into this one.
    pub fn merge(&mut self, other: &IngestReport) {
        self.lines_total += other.lines_total;
        self.quads_ok += other.quads_ok;
        for (k, v) in &other.lines_skipped {
            *self.lines_skipped.entry(*k).or_default() += v;
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error while reading input: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: u64, source: ParseError },
}

/// Lazily yields quads from a line-delimited source.
pub struct QuadStream<R> {
    reader: R,
    mode: ParseMode,
    report: IngestReport,
    buf: Vec<u8>,
    finished: bool,
}

impl<R: BufRead> QuadStream<R> {
    pub fn new(reader: R, mode: ParseMode) -> Self {
        QuadStream {
            reader,
            mode,
            report: IngestReport::default(),
            buf: Vec::new(),
            finished: false,
        }
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }
}

impl<R: BufRead> Iterator for QuadStream<R> {
    type Item = Result<Quad, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.finished {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.finished = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.finished = true;
                    return Some(Err(IngestError::Io(e)));
                }
            }
            self.report.lines_total += 1;
            let outcome = match std::str::from_utf8(&self.buf) {
                Ok(text) => parse_line(text),
                Err(e) => ParseOutcome::Error(ParseError {
                    kind: ErrorKind::InvalidUtf8,
                    offset: e.valid_up_to(),
                }),
            };
            match outcome {
                ParseOutcome::Quad(q) => {
                    self.report.quads_ok += 1;
                    return Some(Ok(q));
                }
                ParseOutcome::Blank => continue,
                ParseOutcome::Error(e) => {
                    *self.report.lines_skipped.entry(e.kind).or_default() += 1;
                    if self.mode == ParseMode::Strict {
                        self.finished = true;
                        return Some(Err(IngestError::Parse {
                            line: self.report.lines_total,
                            source: e,
                        }));
                    }
                }
            }
        }
        None
    }
}

/// Opens a file for streaming, transparently decompressing gzip input
/// (detected by its magic bytes, not the file name).
pub fn open_source(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = read_up_to(&mut file, &mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Parses a whole source into memory.
pub fn read_all<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<(Vec<Quad>, IngestReport), IngestError> {
    let mut stream = QuadStream::new(reader, mode);
    let mut quads = Vec::new();
    for q in stream.by_ref() {
        quads.push(q?);
    }
    Ok((quads, stream.into_report()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor as IoCursor;

    fn quad(line: &str) -> Quad {
        match parse_line(line) {
            ParseOutcome::Quad(q) => q,
            other => panic!("expected quad, got {other:?}"),
        }
    }

    fn error_kind(line: &str) -> ErrorKind {
        match parse_line(line) {
            ParseOutcome::Error(e) => e.kind,
            other => panic!("expected error, got {other:?}"),
        }
    }

    #[test]
    fn type_triple() {
        let q = quad("<http://ex/e1> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://ex/Person> .");
        assert_eq!(q.subject, "http://ex/e1");
        assert_eq!(q.predicate, RDF_TYPE);
        assert_eq!(q.object, Object::Iri("http://ex/Person".into()));
        assert_eq!(q.graph, None);
    }

    #[test]
    fn language_literal() {
        let q = quad(
            r#"<http://ex/e1> <http://www.w3.org/2000/01/rdf-schema#label> "Barack Obama"@EN ."#,
        );
        assert_eq!(
            q.object,
            Object::Literal(Literal {
                lexical_form: "Barack Obama".into(),
                language_tag: Some("en".into()),
                datatype: None,
            })
        );
    }

    #[test]
    fn missing_terminator() {
        assert_eq!(
            error_kind(r#"<http://ex/e1> <http://ex/p> "x""#),
            ErrorKind::MissingTerminator
        );
        assert_eq!(
            error_kind("<http://ex/e1> <http://ex/p> <http://ex/o> . extra"),
            ErrorKind::MissingTerminator
        );
    }

    #[test]
    fn error_categories_carry_offsets() {
        let e = match parse_line(r#"<http://ex/e1> <http://ex/p> "open"#) {
            ParseOutcome::Error(e) => e,
            _ => unreachable!(),
        };
        assert_eq!(e.kind, ErrorKind::UnterminatedLiteral);
        assert_eq!(e.offset, 29);

        let e = match parse_line(r#"<http://ex/e1> <http://ex/p> "a\qb" ."#) {
            ParseOutcome::Error(e) => e,
            _ => unreachable!(),
        };
        assert_eq!(e.kind, ErrorKind::BadEscape);
        assert_eq!(e.offset, 31);

        assert_eq!(error_kind("<http://ex/a b> <http://ex/p> <http://ex/o> ."), ErrorKind::MalformedIri);
        assert_eq!(error_kind("<http://ex/e1 <http://ex/p> <http://ex/o> ."), ErrorKind::MalformedIri);
        assert_eq!(error_kind(r#""lit" <http://ex/p> <http://ex/o> ."#), ErrorKind::MalformedIri);
    }

    #[test]
    fn escapes_decoded() {
        let q = quad(r#"<http://ex/e> <http://ex/p> "a\"b\\c\nd\teé\U0001F600" ."#);
        match q.object {
            Object::Literal(l) => assert_eq!(l.lexical_form, "a\"b\\c\nd\te\u{e9}\u{1F600}"),
            _ => panic!(),
        }
        assert_eq!(
            error_kind(r#"<http://ex/e> <http://ex/p> "\u00G9" ."#),
            ErrorKind::BadEscape
        );
    }

    #[test]
    fn quads_and_blank_nodes() {
        let q = quad("_:b1 <http://ex/p> _:b2 <http://ex/g> .");
        assert_eq!(q.subject, "_:b1");
        assert_eq!(q.object, Object::Iri("_:b2".into()));
        assert_eq!(q.graph.as_deref(), Some("http://ex/g"));

        let q = quad("_:b1 <http://ex/p> _:b2.");
        assert_eq!(q.object, Object::Iri("_:b2".into()));
    }

    #[test]
    fn typed_literal() {
        let q = quad(r#"<http://ex/e> <http://ex/p> "42"^^<http://www.w3.org/2001/XMLSchema#integer> ."#);
        match q.object {
            Object::Literal(l) => {
                assert_eq!(l.lexical_form, "42");
                assert_eq!(l.language_tag, None);
                assert_eq!(l.datatype.as_deref(), Some("http://www.w3.org/2001/XMLSchema#integer"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn blank_and_comment_lines() {
        assert_eq!(parse_line(""), ParseOutcome::Blank);
        assert_eq!(parse_line("   \t "), ParseOutcome::Blank);
        assert_eq!(parse_line("# a comment"), ParseOutcome::Blank);
    }

    const VALID: &str = "<http://ex/a> <http://ex/p> <http://ex/b> .\n";
    const BAD: &str = "<http://ex/a> <http://ex/p> \"x\"\n";

    #[test]
    fn stream_counts_comments_and_valid_lines() {
        let input = format!("{VALID}# comment\n{VALID}{VALID}");
        let (quads, report) = read_all(IoCursor::new(input), ParseMode::Tolerant).unwrap();
        assert_eq!(quads.len(), 3);
        assert_eq!(report.skipped(), 0);
        assert_eq!(report.lines_total, 4);
    }

    #[test]
    fn tolerant_skips_malformed() {
        let input = format!("{VALID}{BAD}{VALID}");
        let (quads, report) = read_all(IoCursor::new(input), ParseMode::Tolerant).unwrap();
        assert_eq!(quads.len(), 2);
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.lines_skipped[&ErrorKind::MissingTerminator], 1);
    }

    #[test]
    fn strict_aborts_at_malformed_line() {
        let input = format!("{VALID}{BAD}{VALID}");
        let err = read_all(IoCursor::new(input), ParseMode::Strict).unwrap_err();
        match err {
            IngestError::Parse { line, source } => {
                assert_eq!(line, 2);
                assert_eq!(source.kind, ErrorKind::MissingTerminator);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_counted_not_fatal() {
        let mut bytes = VALID.as_bytes().to_vec();
        bytes.extend_from_slice(b"<http://ex/\xff> <http://ex/p> <http://ex/o> .\n");
        let (quads, report) = read_all(IoCursor::new(bytes), ParseMode::Tolerant).unwrap();
        assert_eq!(quads.len(), 1);
        assert_eq!(report.lines_skipped[&ErrorKind::InvalidUtf8], 1);
    }

    #[test]
    fn gzip_detected_by_magic() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.nq");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::default());
        enc.write_all(VALID.as_bytes()).unwrap();
        enc.write_all(VALID.as_bytes()).unwrap();
        enc.finish().unwrap();
        let (quads, _) = read_all(open_source(&path).unwrap(), ParseMode::Strict).unwrap();
        assert_eq!(quads.len(), 2);
    }
}
