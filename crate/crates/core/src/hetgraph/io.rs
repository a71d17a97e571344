use std::collections::HashMap;
use std::path::Path;

use super::{GraphError, HeteroGraph, NodeId, NodeLabels, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
    NTriples,
}

impl std::str::FromStr for TripleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "ntriples" | "nt" => Ok(Self::NTriples),
            other => Err(format!("unknown triple format {:?}", other)),
        }
    }
}

/// A loaded graph plus the number of duplicate triples dropped.
#[derive(Debug, Clone)]
pub struct GraphLoad {
    pub graph: HeteroGraph,
    pub duplicates: usize,
}

pub fn load_triples(path: &Path, format: TripleFormat) -> Result<GraphLoad, GraphError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        TripleFormat::Tsv => parse_tsv(&text),
        TripleFormat::NTriples => parse_ntriples(&text),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// `head<TAB>relation<TAB>tail` per line; `#` comments and blank lines skipped.
pub fn parse_tsv(text: &str) -> Result<GraphLoad, GraphError> {
    let mut rows = Vec::new();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::Parse { line, msg: format!("expected 3 tab-separated fields, got {:?}", l) });
        }
        rows.push((fields[0], fields[1], fields[2]));
    }
    let (graph, duplicates) = HeteroGraph::from_named(rows)?;
    Ok(GraphLoad { graph, duplicates })
}

/// Minimal N-Triples reader: IRIs, blank nodes and literals (with optional
/// language tag or datatype). Literals become ordinary nodes named by their
/// full lexical form.
pub fn parse_ntriples(text: &str) -> Result<GraphLoad, GraphError> {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    for (line, l) in content_lines(text) {
        let err = |msg: &str| GraphError::Parse { line, msg: msg.to_string() };
        let mut rest = l.trim();
        let mut terms = Vec::with_capacity(3);
        for _ in 0..3 {
            let (term, tail) = next_term(rest).map_err(|m| err(&m))?;
            terms.push(term);
            rest = tail.trim_start();
        }
        if rest != "." {
            return Err(err("expected terminating ` .`"));
        }
        let o = terms.pop().unwrap();
        let p = terms.pop().unwrap();
        let s = terms.pop().unwrap();
        if s.starts_with('"') {
            return Err(err("literal in subject position"));
        }
        if !p.starts_with('<') {
            return Err(err("predicate must be an IRI"));
        }
        rows.push((s, p, o));
    }
    let (graph, duplicates) =
        HeteroGraph::from_named(rows.iter().map(|(s, p, o)| (s.as_str(), p.as_str(), o.as_str())))?;
    Ok(GraphLoad { graph, duplicates })
}

fn next_term(s: &str) -> Result<(String, &str), String> {
    if s.starts_with('<') {
        let end = s.find('>').ok_or("unterminated IRI")?;
        Ok((s[..=end].to_string(), &s[end + 1..]))
    } else if s.starts_with("_:") {
        let end = s.find(char::is_whitespace).ok_or("blank node not followed by whitespace")?;
        Ok((s[..end].to_string(), &s[end..]))
    } else if s.starts_with('"') {
        let bytes = s.as_bytes();
        let mut k = 1;
        loop {
            match bytes.get(k) {
                None => return Err("unterminated literal".into()),
                Some(b'\\') => k += 2,
                Some(b'"') => break,
                Some(_) => k += 1,
            }
        }
        let mut end = k + 1;
        let tail = &s[end..];
        if tail.starts_with('@') {
            end += tail.find(char::is_whitespace).ok_or("unterminated language tag")?;
        } else if tail.starts_with("^^<") {
            end += tail.find('>').ok_or("unterminated datatype IRI")? + 1;
        }
        Ok((s[..end].to_string(), &s[end..]))
    } else {
        Err(format!("unexpected term start in {:?}", s))
    }
}

/// `node<TAB>label` lines. Class indices are assigned in first-seen order.
pub fn load_labels(path: &Path, graph: &HeteroGraph) -> Result<NodeLabels, GraphError> {
    parse_labels(&std::fs::read_to_string(path)?, graph)
}

pub(crate) fn parse_labels(text: &str, graph: &HeteroGraph) -> Result<NodeLabels, GraphError> {
    let lookup = graph.node_lookup();
    let mut classes: HashMap<&str, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut pairs = Vec::new();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(GraphError::Parse { line, msg: "expected node<TAB>label".into() });
        }
        let node = *lookup.get(fields[0]).ok_or_else(|| GraphError::UnknownNode(fields[0].to_string()))?;
        let class = *classes.entry(fields[1]).or_insert_with(|| {
            class_names.push(fields[1].to_string());
            class_names.len() - 1
        });
        pairs.push((node, class));
    }
    Ok(NodeLabels::new(graph.num_nodes(), &pairs, class_names.len())?.with_class_names(class_names))
}

/// One node name per line.
pub fn load_node_list(path: &Path, graph: &HeteroGraph) -> Result<Vec<NodeId>, GraphError> {
    let text = std::fs::read_to_string(path)?;
    let lookup = graph.node_lookup();
    content_lines(&text)
        .map(|(_, l)| {
            let name = l.trim();
            lookup.get(name).copied().ok_or_else(|| GraphError::UnknownNode(name.to_string()))
        })
        .collect()
}

/// One `head<TAB>relation<TAB>tail` triple per line, resolved against `graph`.
pub fn load_triple_list(path: &Path, graph: &HeteroGraph) -> Result<Vec<Triple>, GraphError> {
    let text = std::fs::read_to_string(path)?;
    let lookup = graph.node_lookup();
    let node = |n: &str| lookup.get(n).copied().ok_or_else(|| GraphError::UnknownNode(n.to_string()));
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 3 {
            return Err(GraphError::Parse { line, msg: "expected 3 tab-separated fields".into() });
        }
        let rel = graph.relation_id(f[1]).ok_or_else(|| GraphError::UnknownRelation(f[1].to_string()))?;
        out.push(Triple::new(node(f[0])?, rel, node(f[2])?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_three_lines() {
        let load = parse_tsv("a\tr\tb\nb\tr\tc\na\ts\tc\n").unwrap();
        assert_eq!(load.graph.num_nodes(), 3);
        assert_eq!(load.graph.num_relations(), 2);
        assert_eq!(load.graph.num_triples(), 3);
        assert_eq!(load.duplicates, 0);
        assert_eq!(load.graph.node_names(), &["a", "b", "c"]);
    }

    #[test]
    fn tsv_duplicate_is_counted() {
        let load = parse_tsv("a\tr\tb\nb\tr\tc\na\ts\tc\na\tr\tb\n").unwrap();
        assert_eq!(load.graph.num_triples(), 3);
        assert_eq!(load.duplicates, 1);
    }

    #[test]
    fn tsv_arity_error_has_line_number() {
        let err = parse_tsv("# header\na\tr\tb\na\tr\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 3, .. }), "{:?}", err);
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(parse_tsv("# nothing\n\n"), Err(GraphError::EmptyGraph)));
    }

    #[test]
    fn ntriples_with_literals() {
        let text = r#"<http://x/movieA> <http://x/length> "2 hours" .
<http://x/movieA> <http://x/actor> <http://x/p1> .
_:b0 <http://x/label> "Film"@en .
<http://x/p1> <http://x/age> "42"^^<http://www.w3.org/2001/XMLSchema#integer> .
<http://x/p1> <http://x/quote> "say \"hi\"" .
"#;
        let load = parse_ntriples(text).unwrap();
        let g = &load.graph;
        assert_eq!(g.num_triples(), 5);
        assert!(g.node_id("\"2 hours\"").is_some());
        assert!(g.node_id("\"Film\"@en").is_some());
        assert!(g.node_id("\"say \\\"hi\\\"\"").is_some());
        assert_eq!(g.num_relations(), 5);
    }

    #[test]
    fn ntriples_missing_dot() {
        let err = parse_ntriples("<a> <b> <c>\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 1, .. }));
    }

    #[test]
    fn labels_resolve_names() {
        let g = parse_tsv("a\tr\tb\nb\tr\tc\n").unwrap().graph;
        let labels = parse_labels("a\tx\nc\ty\nb\tx\n", &g).unwrap();
        assert_eq!(labels.num_classes(), 2);
        assert_eq!(labels.label(g.node_id("c").unwrap()), Some(1));
        assert!(matches!(parse_labels("zz\tx\n", &g), Err(GraphError::UnknownNode(_))));
    }
}
