//! In-memory knowledge base: interned entities, attributes and relationships,
//! set-semantics triple storage, and the adjacency indexes used by every
//! downstream stage.
//!
//! Input is two TSV files per KB:
//!
//! ```text
//! entity<TAB>attribute<TAB>literal<TAB>kind      kind in {string, number, date}
//! head<TAB>relationship<TAB>tail
//! ```
//!
//! Lines starting with `#` are comments. Tabs and newlines inside literals are
//! written as `\t` and `\n` (a literal backslash is `\\`).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_sim;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Dense id of an entity inside one knowledge base.
    EntityId
);
id_type!(
    /// Dense id of an attribute inside one knowledge base.
    AttrId
);
id_type!(
    /// Dense id of a relationship inside one knowledge base.
    RelId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    String,
    Number,
    Date,
}

impl LiteralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LiteralKind::String => "string",
            LiteralKind::Number => "number",
            LiteralKind::Date => "date",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "string" => Some(LiteralKind::String),
            "number" => Some(LiteralKind::Number),
            "date" => Some(LiteralKind::Date),
            _ => None,
        }
    }
}

impl fmt::Display for LiteralKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A literal value with its declared kind.
///
/// Numbers hold their parsed value; dates hold days since 1970-01-01; strings
/// cache their normalized token set so repeated similarity calls stay cheap.
/// Equality and hashing only look at `(kind, raw)`.
#[derive(Debug, Clone)]
pub struct TypedLiteral {
    raw: String,
    kind: LiteralKind,
    numeric: f64,
    tokens: Vec<String>,
}

impl TypedLiteral {
    /// Builds a literal of the declared kind, or `None` when `raw` does not
    /// parse as that kind.
    pub fn new(raw: impl Into<String>, kind: LiteralKind) -> Option<Self> {
        let raw = raw.into();
        match kind {
            LiteralKind::String => Some(Self::string(raw)),
            LiteralKind::Number => {
                let v: f64 = raw.trim().parse().ok()?;
                v.is_finite().then(|| TypedLiteral {
                    raw,
                    kind,
                    numeric: v,
                    tokens: Vec::new(),
                })
            }
            LiteralKind::Date => {
                let days = parse_date_days(raw.trim())?;
                Some(TypedLiteral {
                    raw,
                    kind,
                    numeric: days as f64,
                    tokens: Vec::new(),
                })
            }
        }
    }

    pub fn string(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = text_sim::normalize_label(&raw).into_iter().collect();
        TypedLiteral {
            raw,
            kind: LiteralKind::String,
            numeric: 0.0,
            tokens,
        }
    }

    pub fn number(v: f64) -> Self {
        Self::new(format!("{v}"), LiteralKind::Number).expect("finite number")
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn kind(&self) -> LiteralKind {
        self.kind
    }

    /// Numeric value for numbers, days since epoch for dates, 0 for strings.
    pub fn numeric(&self) -> f64 {
        self.numeric
    }

    /// Sorted, deduplicated normalized tokens (strings only).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl PartialEq for TypedLiteral {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.raw == other.raw
    }
}

impl Eq for TypedLiteral {}

impl Hash for TypedLiteral {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.raw.hash(state);
    }
}

impl PartialOrd for TypedLiteral {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TypedLiteral {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.kind, &self.raw).cmp(&(other.kind, &other.raw))
    }
}

fn parse_date_days(s: &str) -> Option<i64> {
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?;
    Some((date - epoch).num_days())
}

#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// A knowledge base `(U, L, A, R, T)`. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: Interner,
    attributes: Interner,
    relationships: Interner,
    literals: Vec<TypedLiteral>,
    attr_triples: Vec<(EntityId, AttrId, u32)>,
    rel_triples: Vec<(EntityId, RelId, EntityId)>,
    values: HashMap<(EntityId, AttrId), Vec<u32>>,
    attrs_of: Vec<Vec<AttrId>>,
    out: HashMap<(EntityId, RelId), Vec<EntityId>>,
    inc: HashMap<(EntityId, RelId), Vec<EntityId>>,
    out_of: Vec<Vec<(RelId, EntityId)>>,
}

impl KnowledgeBase {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_relationships(&self) -> usize {
        self.relationships.len()
    }

    pub fn num_literals(&self) -> usize {
        self.literals.len()
    }

    pub fn num_attr_triples(&self) -> usize {
        self.attr_triples.len()
    }

    pub fn num_rel_triples(&self) -> usize {
        self.rel_triples.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn attribute_ids(&self) -> impl Iterator<Item = AttrId> + '_ {
        (0..self.attributes.len() as u32).map(AttrId)
    }

    pub fn relationship_ids(&self) -> impl Iterator<Item = RelId> + '_ {
        (0..self.relationships.len() as u32).map(RelId)
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn attribute(&self, name: &str) -> Option<AttrId> {
        self.attributes.get(name).map(AttrId)
    }

    pub fn relationship(&self, name: &str) -> Option<RelId> {
        self.relationships.get(name).map(RelId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.index()]
    }

    pub fn attribute_name(&self, id: AttrId) -> &str {
        &self.attributes.names[id.index()]
    }

    pub fn relationship_name(&self, id: RelId) -> &str {
        &self.relationships.names[id.index()]
    }

    /// `N_u^r`: objects of the triples `(u, r, ·)`. Unknown ids give an empty slice.
    pub fn neighbors(&self, u: EntityId, r: RelId) -> &[EntityId] {
        self.out.get(&(u, r)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Subjects of the triples `(·, r, u)`.
    pub fn inverse_neighbors(&self, u: EntityId, r: RelId) -> &[EntityId] {
        self.inc.get(&(u, r)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All outgoing `(relationship, object)` pairs of `u`, sorted.
    pub fn out_edges(&self, u: EntityId) -> &[(RelId, EntityId)] {
        self.out_of.get(u.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Attributes for which `u` has at least one value, sorted.
    pub fn attributes_of(&self, u: EntityId) -> &[AttrId] {
        self.attrs_of.get(u.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `N_u^a`: the literal values of `(u, a, ·)`.
    pub fn attr_values(&self, u: EntityId, a: AttrId) -> Vec<&TypedLiteral> {
        self.values
            .get(&(u, a))
            .map(|ids| ids.iter().map(|&l| &self.literals[l as usize]).collect())
            .unwrap_or_default()
    }

    pub fn attr_triples(&self) -> impl Iterator<Item = (EntityId, AttrId, &TypedLiteral)> + '_ {
        self.attr_triples
            .iter()
            .map(|&(u, a, l)| (u, a, &self.literals[l as usize]))
    }

    pub fn rel_triples(&self) -> &[(EntityId, RelId, EntityId)] {
        &self.rel_triples
    }

    /// Writes the KB back out in the input TSV formats.
    pub fn write_tsv<W1: Write, W2: Write>(&self, mut attrs: W1, mut rels: W2) -> std::io::Result<()> {
        for (u, a, l) in self.attr_triples() {
            writeln!(
                attrs,
                "{}\t{}\t{}\t{}",
                escape(self.entity_name(u)),
                escape(self.attribute_name(a)),
                escape(l.raw()),
                l.kind()
            )?;
        }
        for &(h, r, t) in &self.rel_triples {
            writeln!(
                rels,
                "{}\t{}\t{}",
                escape(self.entity_name(h)),
                escape(self.relationship_name(r)),
                escape(self.entity_name(t))
            )?;
        }
        Ok(())
    }
}

/// Incrementally collects triples; [`KbBuilder::build`] dedups and indexes.
#[derive(Debug, Default)]
pub struct KbBuilder {
    kb: KnowledgeBase,
    literal_index: HashMap<TypedLiteral, u32>,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_attribute(&mut self, entity: &str, attribute: &str, literal: TypedLiteral) -> &mut Self {
        let u = EntityId(self.kb.entities.intern(entity));
        let a = AttrId(self.kb.attributes.intern(attribute));
        let next = self.kb.literals.len() as u32;
        let l = *self.literal_index.entry(literal.clone()).or_insert(next);
        if l == next {
            self.kb.literals.push(literal);
        }
        self.kb.attr_triples.push((u, a, l));
        self
    }

    pub fn add_relationship(&mut self, head: &str, relationship: &str, tail: &str) -> &mut Self {
        let h = EntityId(self.kb.entities.intern(head));
        let r = RelId(self.kb.relationships.intern(relationship));
        let t = EntityId(self.kb.entities.intern(tail));
        self.kb.rel_triples.push((h, r, t));
        self
    }

    /// Number of triples added so far, duplicates included.
    pub fn raw_triple_count(&self) -> usize {
        self.kb.attr_triples.len() + self.kb.rel_triples.len()
    }

    pub fn build(self) -> KnowledgeBase {
        let mut kb = self.kb;
        kb.attr_triples.sort_unstable();
        kb.attr_triples.dedup();
        kb.rel_triples.sort_unstable();
        kb.rel_triples.dedup();

        let n = kb.entities.len();
        kb.attrs_of = vec![Vec::new(); n];
        for &(u, a, l) in &kb.attr_triples {
            kb.values.entry((u, a)).or_default().push(l);
            let attrs = &mut kb.attrs_of[u.index()];
            if attrs.last() != Some(&a) {
                attrs.push(a);
            }
        }
        kb.out_of = vec![Vec::new(); n];
        for &(h, r, t) in &kb.rel_triples {
            kb.out.entry((h, r)).or_default().push(t);
            kb.inc.entry((t, r)).or_default().push(h);
            kb.out_of[h.index()].push((r, t));
        }
        for v in kb.inc.values_mut() {
            v.sort_unstable();
        }
        kb
    }
}

/// Counters describing what happened while parsing the TSV input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub attr_lines: usize,
    pub rel_lines: usize,
    pub comment_lines: usize,
    /// Lines with the wrong field count or empty ids. They are skipped.
    pub malformed: Vec<MalformedLine>,
    /// Literals whose kind was unknown or whose value did not parse as the
    /// declared kind; they were loaded as strings.
    pub kind_fallbacks: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
}

impl LoadReport {
    pub fn well_formed_lines(&self) -> usize {
        self.attr_lines + self.rel_lines
    }
}

/// Loads a KB from its attribute and relationship TSV files.
pub fn load_kb(attr_file: impl AsRef<Path>, rel_file: impl AsRef<Path>) -> Result<(KnowledgeBase, LoadReport)> {
    let attr_file = attr_file.as_ref();
    let rel_file = rel_file.as_ref();
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));
    let attrs = open(attr_file)?;
    let rels = open(rel_file)?;
    read_kb(attrs, attr_file, rels, rel_file)
}

/// Parses a KB from readers; `*_name` is only used in diagnostics.
pub fn read_kb<R1: BufRead, R2: BufRead>(
    attrs: R1,
    attr_name: &Path,
    rels: R2,
    rel_name: &Path,
) -> Result<(KnowledgeBase, LoadReport)> {
    let mut builder = KbBuilder::new();
    let mut report = LoadReport::default();

    for (i, line) in attrs.lines().enumerate() {
        let line = line.map_err(|e| Error::io(attr_name, e))?;
        let Some(line) = content(&line, &mut report) else { continue };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields[0].is_empty() || fields[1].is_empty() {
            report.malformed.push(MalformedLine {
                file: attr_name.to_owned(),
                line: i + 1,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
            continue;
        }
        let raw = unescape(fields[2]);
        let literal = match LiteralKind::parse(fields[3]).and_then(|k| TypedLiteral::new(raw.clone(), k)) {
            Some(l) => l,
            None => {
                report.kind_fallbacks += 1;
                TypedLiteral::string(raw)
            }
        };
        builder.add_attribute(&unescape(fields[0]), &unescape(fields[1]), literal);
        report.attr_lines += 1;
    }

    for (i, line) in rels.lines().enumerate() {
        let line = line.map_err(|e| Error::io(rel_name, e))?;
        let Some(line) = content(&line, &mut report) else { continue };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            report.malformed.push(MalformedLine {
                file: rel_name.to_owned(),
                line: i + 1,
                reason: format!("expected 3 non-empty tab-separated fields, found {}", fields.len()),
            });
            continue;
        }
        builder.add_relationship(&unescape(fields[0]), &unescape(fields[1]), &unescape(fields[2]));
        report.rel_lines += 1;
    }

    let raw = builder.raw_triple_count();
    let kb = builder.build();
    report.duplicates = raw - kb.num_attr_triples() - kb.num_rel_triples();
    if !report.malformed.is_empty() || report.kind_fallbacks > 0 {
        tracing::warn!(
            malformed = report.malformed.len(),
            kind_fallbacks = report.kind_fallbacks,
            "knowledge base loaded with warnings"
        );
    }
    Ok((kb, report))
}

fn content<'a>(line: &'a str, report: &mut LoadReport) -> Option<&'a str> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.is_empty() {
        return None;
    }
    if line.starts_with('#') {
        report.comment_lines += 1;
        return None;
    }
    Some(line)
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> String {
    if !s.contains('\\') {
        return s.to_owned();
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(attrs: &str, rels: &str) -> (KnowledgeBase, LoadReport) {
        read_kb(
            Cursor::new(attrs.to_owned()),
            Path::new("attrs.tsv"),
            Cursor::new(rels.to_owned()),
            Path::new("rels.tsv"),
        )
        .unwrap()
    }

    #[test]
    fn empty_files() {
        let (kb, report) = parse("", "");
        assert_eq!(kb.num_entities(), 0);
        assert_eq!(kb.num_attributes(), 0);
        assert_eq!(kb.num_relationships(), 0);
        assert_eq!(kb.num_literals(), 0);
        assert_eq!(kb.num_attr_triples() + kb.num_rel_triples(), 0);
        assert_eq!(report, LoadReport::default());
    }

    #[test]
    fn single_attribute_triple() {
        let (kb, _) = parse("e1\tlabel\tMona Lisa\tstring\n", "");
        assert_eq!(kb.num_entities(), 1);
        assert_eq!(kb.num_attributes(), 1);
        assert_eq!(kb.num_attr_triples(), 1);
        let u = kb.entity("e1").unwrap();
        let a = kb.attribute("label").unwrap();
        let vals = kb.attr_values(u, a);
        assert_eq!(vals.len(), 1);
        assert_eq!(vals[0].raw(), "Mona Lisa");
        assert_eq!(vals[0].tokens(), ["lisa", "mona"]);
    }

    #[test]
    fn fig1_fragment_neighbors() {
        let rels = "y:Tim\tdirected\ty:Cradle\ny:Tim\tdirected\ty:Player\ny:Joan\tactedIn\ty:Cradle\n";
        let (kb, _) = parse("", rels);
        let tim = kb.entity("y:Tim").unwrap();
        let directed = kb.relationship("directed").unwrap();
        let mut got: Vec<&str> = kb.neighbors(tim, directed).iter().map(|&e| kb.entity_name(e)).collect();
        got.sort();
        assert_eq!(got, ["y:Cradle", "y:Player"]);

        let cradle = kb.entity("y:Cradle").unwrap();
        let inv: Vec<&str> = kb
            .inverse_neighbors(cradle, directed)
            .iter()
            .map(|&e| kb.entity_name(e))
            .collect();
        assert_eq!(inv, ["y:Tim"]);
    }

    #[test]
    fn unknown_ids_give_empty_sets() {
        let (kb, _) = parse("e1\tlabel\tx\tstring\n", "e1\tr\te2\n");
        let e2 = kb.entity("e2").unwrap();
        let r = kb.relationship("r").unwrap();
        assert!(kb.neighbors(e2, r).is_empty());
        assert!(kb.neighbors(EntityId(99), RelId(42)).is_empty());
        assert!(kb.attr_values(e2, AttrId(7)).is_empty());
    }

    #[test]
    fn two_label_values_both_returned() {
        let (kb, _) = parse("e\tlabel\tA\tstring\ne\tlabel\tB\tstring\n", "");
        let vals = kb.attr_values(kb.entity("e").unwrap(), kb.attribute("label").unwrap());
        let mut raws: Vec<&str> = vals.iter().map(|l| l.raw()).collect();
        raws.sort();
        assert_eq!(raws, ["A", "B"]);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let attrs = "# header\ne1\tlabel\tok\tstring\nbroken line\ne2\tlabel\tx\n";
        let rels = "a\tr\n\na\tr\tb\n";
        let (kb, report) = parse(attrs, rels);
        assert_eq!(report.comment_lines, 1);
        assert_eq!(report.malformed.len(), 3);
        assert_eq!(report.malformed[0].line, 3);
        assert_eq!(kb.num_attr_triples(), 1);
        assert_eq!(kb.num_rel_triples(), 1);
    }

    #[test]
    fn bad_kind_falls_back_to_string() {
        let (kb, report) = parse("e\tyear\tabc\tnumber\ne\tx\t1\tinteger\ne\td\t2001-02-30\tdate\n", "");
        assert_eq!(report.kind_fallbacks, 3);
        assert!(kb.attr_triples().all(|(_, _, l)| l.kind() == LiteralKind::String));
    }

    #[test]
    fn duplicates_are_removed() {
        let (kb, report) = parse("e\ta\t1\tnumber\ne\ta\t1\tnumber\n", "e\tr\tf\ne\tr\tf\n");
        assert_eq!(report.duplicates, 2);
        assert_eq!(kb.num_attr_triples() + kb.num_rel_triples(), report.well_formed_lines() - report.duplicates);
    }

    #[test]
    fn dates_are_days_since_epoch() {
        let d = TypedLiteral::new("1970-01-11", LiteralKind::Date).unwrap();
        assert_eq!(d.numeric(), 10.0);
        let d = TypedLiteral::new("1452-4-15", LiteralKind::Date).unwrap();
        assert!(d.numeric() < 0.0);
        assert!(TypedLiteral::new("inf", LiteralKind::Number).is_none());
    }

    #[test]
    fn escapes_round_trip() {
        let s = "a\tb\nc\\d";
        assert_eq!(unescape(&escape(s)), s);
        let (kb, _) = parse("e\tnote\tline1\\nline2\\tx\tstring\n", "");
        let (_, _, l) = kb.attr_triples().next().unwrap();
        assert_eq!(l.raw(), "line1\nline2\tx");
    }
}
