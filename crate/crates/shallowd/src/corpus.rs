//! In-memory corpus representation and ingestion/emission of the JSON corpus
//! formats: a parses file keyed by document id and newline-delimited relation
//! records with `[char_begin, char_end, doc_tok_index, sent_index, tok_index]`
//! token lists.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::syntax::{self, Tree};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON in {context}: {message} (line {line}, column {column})")]
    Json {
        context: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },
    #[error(
        "document {doc_id}: token {sent_index}:{tok_index} surface {surface:?} \
         does not match raw text slice {slice:?}"
    )]
    Integrity {
        doc_id: String,
        sent_index: usize,
        tok_index: usize,
        surface: String,
        slice: String,
    },
    #[error("relations line {line}: {message}")]
    RelationFormat { line: usize, message: String },
    #[error("parse tree error in document {doc_id}, sentence {sent_index}: {source}")]
    Tree {
        doc_id: String,
        sent_index: usize,
        source: syntax::TreeError,
    },
}

/// A single token of a pre-parsed document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    /// Character offset of the first character in the raw document text.
    pub char_begin: usize,
    /// Exclusive character end offset.
    pub char_end: usize,
    pub sent_index: usize,
    pub tok_index: usize,
    pub doc_tok_index: usize,
}

/// A sentence with its tokens and constituency parse.
#[derive(Debug, Clone)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub tree: Tree,
    pub paragraph_id: usize,
}

/// A document: ordered sentences plus the optional raw text they index into.
#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub raw_text: Option<String>,
}

impl Document {
    pub fn token(&self, doc_tok_index: usize) -> Option<&Token> {
        let mut remaining = doc_tok_index;
        for sentence in &self.sentences {
            if remaining < sentence.tokens.len() {
                return Some(&sentence.tokens[remaining]);
            }
            remaining -= sentence.tokens.len();
        }
        None
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

/// One token reference inside a relation span, mirroring the five-integer
/// `TokenList` entries of the relations file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TokenRef {
    pub char_begin: usize,
    pub char_end: usize,
    pub doc_tok_index: usize,
    pub sent_index: usize,
    pub tok_index: usize,
}

impl TokenRef {
    pub fn for_token(token: &Token) -> Self {
        TokenRef {
            char_begin: token.char_begin,
            char_end: token.char_end,
            doc_tok_index: token.doc_tok_index,
            sent_index: token.sent_index,
            tok_index: token.tok_index,
        }
    }
}

/// An ordered, possibly discontinuous set of tokens in one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSpan {
    refs: Vec<TokenRef>,
}

impl TokenSpan {
    pub fn empty() -> Self {
        TokenSpan { refs: Vec::new() }
    }

    /// Builds a span from token references; sorts and deduplicates by
    /// document token index.
    pub fn new(mut refs: Vec<TokenRef>) -> Self {
        refs.sort_by_key(|r| r.doc_tok_index);
        refs.dedup_by_key(|r| r.doc_tok_index);
        TokenSpan { refs }
    }

    pub fn from_tokens<'a, I: IntoIterator<Item = &'a Token>>(tokens: I) -> Self {
        Self::new(tokens.into_iter().map(TokenRef::for_token).collect())
    }

    pub fn refs(&self) -> &[TokenRef] {
        &self.refs
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.refs.iter().map(|r| r.doc_tok_index)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn contains(&self, doc_tok_index: usize) -> bool {
        self.refs
            .binary_search_by_key(&doc_tok_index, |r| r.doc_tok_index)
            .is_ok()
    }

    pub fn first(&self) -> Option<&TokenRef> {
        self.refs.first()
    }

    pub fn last(&self) -> Option<&TokenRef> {
        self.refs.last()
    }

    pub fn overlap_count(&self, other: &TokenSpan) -> usize {
        self.indices().filter(|i| other.contains(*i)).count()
    }

    pub fn intersects(&self, other: &TokenSpan) -> bool {
        self.indices().any(|i| other.contains(i))
    }

    /// Set difference, keeping tokens of `self` that are not in `other`.
    pub fn minus(&self, other: &TokenSpan) -> TokenSpan {
        TokenSpan {
            refs: self
                .refs
                .iter()
                .filter(|r| !other.contains(r.doc_tok_index))
                .copied()
                .collect(),
        }
    }

    pub fn union(&self, other: &TokenSpan) -> TokenSpan {
        let mut refs = self.refs.clone();
        refs.extend_from_slice(&other.refs);
        TokenSpan::new(refs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelType {
    Explicit,
    Implicit,
    AltLex,
    EntRel,
}

impl RelType {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelType::Explicit => "Explicit",
            RelType::Implicit => "Implicit",
            RelType::AltLex => "AltLex",
            RelType::EntRel => "EntRel",
        }
    }

    pub fn parse(s: &str) -> Option<RelType> {
        match s {
            "Explicit" => Some(RelType::Explicit),
            "Implicit" => Some(RelType::Implicit),
            "AltLex" => Some(RelType::AltLex),
            "EntRel" => Some(RelType::EntRel),
            _ => None,
        }
    }
}

impl fmt::Display for RelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A discourse relation: a typed link between two argument spans, with a
/// connective span when the relation is explicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub relation_id: u64,
    pub doc_id: String,
    pub rel_type: RelType,
    pub connective: TokenSpan,
    pub arg1: TokenSpan,
    pub arg2: TokenSpan,
    pub senses: Vec<String>,
}

impl Relation {
    /// Checks the structural invariants shared by loaded and emitted
    /// relations. Explicit relations must carry a connective and
    /// Implicit/EntRel ones must not; AltLex records may store the
    /// alternative lexicalization in the connective field, as shared-task
    /// data does.
    pub fn validate(&self) -> Result<(), String> {
        if self.senses.is_empty() {
            return Err("relation must carry at least one sense".into());
        }
        match self.rel_type {
            RelType::Explicit => {
                if self.connective.is_empty() {
                    return Err("Explicit relation with empty connective".into());
                }
            }
            RelType::AltLex => {}
            other => {
                if !self.connective.is_empty() {
                    return Err(format!("{other} relation with non-empty connective"));
                }
                if other == RelType::EntRel && self.senses != ["EntRel"] {
                    return Err("EntRel relation must have senses [\"EntRel\"]".into());
                }
            }
        }
        if self.arg1.is_empty() || self.arg2.is_empty() {
            return Err("relation arguments must be non-empty".into());
        }
        if self.arg1.intersects(&self.arg2) {
            return Err("arg1 and arg2 overlap".into());
        }
        Ok(())
    }
}

/// A closed set of sense labels loaded from a one-label-per-line file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenseInventory {
    labels: Vec<String>,
}

impl SenseInventory {
    pub fn new(labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut seen = std::collections::BTreeSet::new();
        for label in &labels {
            if !seen.insert(label.clone()) {
                return Err(CorpusError::Document {
                    doc_id: "<inventory>".into(),
                    message: format!("duplicate sense label {label:?}"),
                });
            }
        }
        Ok(SenseInventory { labels })
    }

    /// Loads labels from a UTF-8 text file, one per line; `#` starts a
    /// comment line and blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

#[derive(Deserialize)]
struct RawSentence {
    words: Vec<(String, RawWordAttrs)>,
    parsetree: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "PascalCase")]
struct RawWordAttrs {
    character_offset_begin: usize,
    character_offset_end: usize,
    part_of_speech: String,
}

#[derive(Deserialize)]
struct RawDocument {
    sentences: Vec<RawSentence>,
}

/// Loads the parses file: a JSON object mapping document ids to sentence
/// lists with word attributes and bracketed parse trees. When `raw_dir` is
/// given, the file named by each document id supplies the raw text used for
/// offset verification and paragraph derivation.
pub fn load_corpus(
    parses_path: &Path,
    raw_dir: Option<&Path>,
) -> Result<Vec<Document>, CorpusError> {
    let bytes = fs::read_to_string(parses_path)?;
    let raw_docs: BTreeMap<String, RawDocument> =
        serde_json::from_str(&bytes).map_err(|e| CorpusError::Json {
            context: parses_path.display().to_string(),
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;

    let mut documents = Vec::with_capacity(raw_docs.len());
    for (doc_id, raw_doc) in raw_docs {
        let raw_text = match raw_dir {
            Some(dir) => {
                let path = dir.join(&doc_id);
                if path.exists() {
                    Some(fs::read_to_string(&path)?)
                } else {
                    None
                }
            }
            None => None,
        };
        documents.push(build_document(doc_id, raw_doc, raw_text)?);
    }
    Ok(documents)
}

fn build_document(
    doc_id: String,
    raw_doc: RawDocument,
    raw_text: Option<String>,
) -> Result<Document, CorpusError> {
    let mut sentences = Vec::with_capacity(raw_doc.sentences.len());
    let mut doc_tok_index = 0usize;
    for (sent_index, raw_sentence) in raw_doc.sentences.into_iter().enumerate() {
        let mut tokens = Vec::with_capacity(raw_sentence.words.len());
        for (tok_index, (surface, attrs)) in raw_sentence.words.into_iter().enumerate() {
            if attrs.character_offset_begin >= attrs.character_offset_end {
                return Err(CorpusError::Document {
                    doc_id,
                    message: format!(
                        "token {sent_index}:{tok_index} has empty character range \
                         [{}, {})",
                        attrs.character_offset_begin, attrs.character_offset_end
                    ),
                });
            }
            if let Some(raw) = &raw_text {
                let slice = raw
                    .get(attrs.character_offset_begin..attrs.character_offset_end)
                    .unwrap_or("");
                if slice != surface {
                    return Err(CorpusError::Integrity {
                        doc_id,
                        sent_index,
                        tok_index,
                        surface,
                        slice: slice.to_owned(),
                    });
                }
            }
            tokens.push(Token {
                surface,
                pos: attrs.part_of_speech,
                char_begin: attrs.character_offset_begin,
                char_end: attrs.character_offset_end,
                sent_index,
                tok_index,
                doc_tok_index,
            });
            doc_tok_index += 1;
        }
        let tree = syntax::parse_bracketed(&raw_sentence.parsetree).map_err(|source| {
            CorpusError::Tree {
                doc_id: doc_id.clone(),
                sent_index,
                source,
            }
        })?;
        if tree.leaf_count() != tokens.len() {
            return Err(CorpusError::Document {
                doc_id,
                message: format!(
                    "sentence {sent_index}: parse tree has {} leaves but {} tokens",
                    tree.leaf_count(),
                    tokens.len()
                ),
            });
        }
        sentences.push(Sentence {
            tokens,
            tree,
            paragraph_id: 0,
        });
    }

    if let Some(raw) = &raw_text {
        assign_paragraphs(&mut sentences, raw);
    }

    Ok(Document {
        doc_id,
        sentences,
        raw_text,
    })
}

/// A paragraph break is two or more consecutive newlines in the raw text;
/// a sentence starts a new paragraph when such a break falls between the
/// previous sentence's last token and its own first token.
fn assign_paragraphs(sentences: &mut [Sentence], raw: &str) {
    let mut paragraph_id = 0usize;
    let mut prev_end: Option<usize> = None;
    for sentence in sentences.iter_mut() {
        if let (Some(end), Some(first)) = (prev_end, sentence.tokens.first()) {
            let between = raw.get(end..first.char_begin).unwrap_or("");
            if between.matches('\n').count() >= 2 {
                paragraph_id += 1;
            }
        }
        sentence.paragraph_id = paragraph_id;
        if let Some(last) = sentence.tokens.last() {
            prev_end = Some(last.char_end);
        }
    }
}

fn token_list_to_span(value: &Value, line: usize, field: &str) -> Result<TokenSpan, CorpusError> {
    let entries = value
        .get("TokenList")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::RelationFormat {
            line,
            message: format!("{field} is missing a TokenList array"),
        })?;
    let mut refs = Vec::with_capacity(entries.len());
    for entry in entries {
        let nums: Option<Vec<usize>> = entry.as_array().map(|a| {
            a.iter()
                .filter_map(Value::as_u64)
                .map(|n| n as usize)
                .collect()
        });
        match nums {
            Some(nums) if nums.len() == 5 => refs.push(TokenRef {
                char_begin: nums[0],
                char_end: nums[1],
                doc_tok_index: nums[2],
                sent_index: nums[3],
                tok_index: nums[4],
            }),
            _ => {
                return Err(CorpusError::RelationFormat {
                    line,
                    message: format!("{field} TokenList entries must be 5-integer arrays"),
                })
            }
        }
    }
    Ok(TokenSpan::new(refs))
}

/// Loads relations from newline-delimited JSON, one relation per line,
/// preserving file order.
pub fn load_relations(relations_path: &Path) -> Result<Vec<Relation>, CorpusError> {
    let text = fs::read_to_string(relations_path)?;
    parse_relations(&text)
}

/// Parses NDJSON relation records from a string. Line numbers in errors are
/// 1-based.
pub fn parse_relations(text: &str) -> Result<Vec<Relation>, CorpusError> {
    let mut relations = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(trimmed).map_err(|e| CorpusError::Json {
            context: format!("relations line {line_no}"),
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
        relations.push(relation_from_value(&value, line_no)?);
    }
    Ok(relations)
}

fn relation_from_value(value: &Value, line: usize) -> Result<Relation, CorpusError> {
    let doc_id = value
        .get("DocID")
        .and_then(Value::as_str)
        .ok_or_else(|| CorpusError::RelationFormat {
            line,
            message: "missing DocID".into(),
        })?
        .to_owned();
    let relation_id =
        value
            .get("ID")
            .and_then(Value::as_u64)
            .ok_or_else(|| CorpusError::RelationFormat {
                line,
                message: "missing integer ID".into(),
            })?;
    let type_str =
        value
            .get("Type")
            .and_then(Value::as_str)
            .ok_or_else(|| CorpusError::RelationFormat {
                line,
                message: "missing Type".into(),
            })?;
    let rel_type = RelType::parse(type_str).ok_or_else(|| CorpusError::RelationFormat {
        line,
        message: format!("unknown relation type {type_str:?}"),
    })?;
    let senses: Vec<String> = value
        .get("Sense")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();
    let connective = token_list_to_span(
        value.get("Connective").unwrap_or(&Value::Null),
        line,
        "Connective",
    )?;
    let arg1 = token_list_to_span(value.get("Arg1").unwrap_or(&Value::Null), line, "Arg1")?;
    let arg2 = token_list_to_span(value.get("Arg2").unwrap_or(&Value::Null), line, "Arg2")?;

    let relation = Relation {
        relation_id,
        doc_id,
        rel_type,
        connective,
        arg1,
        arg2,
        senses,
    };
    relation
        .validate()
        .map_err(|message| CorpusError::RelationFormat { line, message })?;
    Ok(relation)
}

fn span_to_token_list(span: &TokenSpan) -> Value {
    Value::Array(
        span.refs()
            .iter()
            .map(|r| {
                Value::Array(vec![
                    Value::from(r.char_begin as u64),
                    Value::from(r.char_end as u64),
                    Value::from(r.doc_tok_index as u64),
                    Value::from(r.sent_index as u64),
                    Value::from(r.tok_index as u64),
                ])
            })
            .collect(),
    )
}

/// Serializes one relation to its JSON object form.
pub fn relation_to_value(relation: &Relation) -> Value {
    let mut object = serde_json::Map::new();
    object.insert("DocID".into(), Value::from(relation.doc_id.clone()));
    object.insert("ID".into(), Value::from(relation.relation_id));
    object.insert("Type".into(), Value::from(relation.rel_type.as_str()));
    object.insert(
        "Sense".into(),
        Value::Array(
            relation
                .senses
                .iter()
                .map(|s| Value::from(s.clone()))
                .collect(),
        ),
    );
    let mut connective = serde_json::Map::new();
    connective.insert("TokenList".into(), span_to_token_list(&relation.connective));
    object.insert("Connective".into(), Value::Object(connective));
    let mut arg1 = serde_json::Map::new();
    arg1.insert("TokenList".into(), span_to_token_list(&relation.arg1));
    object.insert("Arg1".into(), Value::Object(arg1));
    let mut arg2 = serde_json::Map::new();
    arg2.insert("TokenList".into(), span_to_token_list(&relation.arg2));
    object.insert("Arg2".into(), Value::Object(arg2));
    Value::Object(object)
}

/// Writes relations as newline-delimited JSON in input order and returns the
/// number of bytes written.
pub fn emit_relations<W: Write>(
    relations: &[Relation],
    sink: &mut W,
) -> Result<usize, CorpusError> {
    let mut bytes = 0usize;
    for relation in relations {
        let line = serde_json::to_string(&relation_to_value(relation)).expect("serializable value");
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
        bytes += line.len() + 1;
    }
    Ok(bytes)
}

/// Joins the surfaces of the referenced tokens with single spaces.
pub fn span_text(doc: &Document, span: &TokenSpan) -> Result<String, CorpusError> {
    let mut parts = Vec::with_capacity(span.len());
    for index in span.indices() {
        let token = doc.token(index).ok_or_else(|| CorpusError::Document {
            doc_id: doc.doc_id.clone(),
            message: format!("token index {index} out of range"),
        })?;
        parts.push(token.surface.as_str());
    }
    Ok(parts.join(" "))
}
