//! IRIs the engine treats specially.

pub use crate::rdf::RDF_TYPE;

pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
pub const FOAF_NAME: &str = "http://xmlns.com/foaf/0.1/name";
pub const DC_TITLE: &str = "http://purl.org/dc/elements/1.1/title";
pub const DCTERMS_TITLE: &str = "http://purl.org/dc/terms/title";
pub const SKOS_PREF_LABEL: &str = "http://www.w3.org/2004/02/skos/core#prefLabel";

pub const OWL_SAME_AS: &str = "http://www.w3.org/2002/07/owl#sameAs";
pub const SKOS_RELATED: &str = "http://www.w3.org/2004/02/skos/core#related";

/// Pseudo-type given to subjects without any `rdf:type`.
pub const UNTYPED: &str = "urn:entrex:untyped";

pub const DEFAULT_TITLE_PREDICATES: [&str; 5] =
    [RDFS_LABEL, FOAF_NAME, DC_TITLE, DCTERMS_TITLE, SKOS_PREF_LABEL];

/// Predicates asserting equivalence or relatedness between entities.
/// The DBpedia ones are published under both the property and ontology
/// namespaces, so both spellings are accepted.
pub const SIMILARITY_PREDICATES: [&str; 8] = [
    OWL_SAME_AS,
    SKOS_RELATED,
    "http://dbpedia.org/property/wikiPageExternalLink",
    "http://dbpedia.org/property/wikiPageDisambiguates",
    "http://dbpedia.org/property/synonym",
    "http://dbpedia.org/ontology/wikiPageExternalLink",
    "http://dbpedia.org/ontology/wikiPageDisambiguates",
    "http://dbpedia.org/ontology/synonym",
];

pub fn is_similarity_predicate(p: &str) -> bool {
    SIMILARITY_PREDICATES.contains(&p)
}

pub fn default_title_predicates() -> Vec<String> {
    DEFAULT_TITLE_PREDICATES.iter().map(|s| s.to_string()).collect()
}
