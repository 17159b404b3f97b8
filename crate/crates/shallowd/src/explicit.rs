//! Explicit relation annotation: lexicon-driven connective candidates, the
//! ten connective features, decision-tree detection and sense labeling, CRF
//! argument segmentation over candidate constituents with the
//! previous-sentence fallback, and decision-tree argument trimming.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Document, RelType, Relation, Sentence, TokenSpan};
use crate::crf::{viterbi, CrfModel, CrfSequence};
use crate::dtree::{DecisionTree, FeatureMap, FeatureValue};
use crate::syntax::{
    self, candidate_constituents, head_token, node_context, production_rule, root_path, HeadRules,
    NodeId, Tree,
};

pub const LABEL_ARG1: &str = "part-of-Arg1";
pub const LABEL_ARG2: &str = "part-of-Arg2";
pub const LABEL_NON: &str = "Non";
/// CRF label set in tie-break order.
pub fn segmenter_labels() -> Vec<String> {
    vec![LABEL_ARG1.into(), LABEL_ARG2.into(), LABEL_NON.into()]
}

pub const LABEL_DISCOURSE: &str = "discourse";
pub const LABEL_NON_DISCOURSE: &str = "non-discourse";
pub const LABEL_PART: &str = "part-of-Argument";
pub const LABEL_NOT_PART: &str = "Not-part-of-Argument";

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pattern {
    /// Words of the contiguous pattern, or of the first part when
    /// discontinuous.
    first: Vec<String>,
    /// Words of the second part; empty for contiguous patterns.
    second: Vec<String>,
    raw: String,
}

impl Pattern {
    fn total_len(&self) -> usize {
        self.first.len() + self.second.len()
    }

    fn discontinuous(&self) -> bool {
        !self.second.is_empty()
    }
}

/// The connective lexicon: lowercase patterns, with discontinuous pairs
/// written `first .. second`.
#[derive(Debug, Clone)]
pub struct ConnectiveLexicon {
    patterns: Vec<Pattern>,
}

impl ConnectiveLexicon {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut patterns = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let raw = trimmed.to_lowercase();
            let parts: Vec<&str> = raw.split("..").map(str::trim).collect();
            let words = |s: &str| -> Vec<String> {
                s.split_whitespace().map(str::to_owned).collect()
            };
            let pattern = match parts.as_slice() {
                [only] => Pattern {
                    first: words(only),
                    second: Vec::new(),
                    raw: raw.clone(),
                },
                [first, second] if !words(first).is_empty() && !words(second).is_empty() => {
                    Pattern {
                        first: words(first),
                        second: words(second),
                        raw: raw.clone(),
                    }
                }
                [_, _] => {
                    return Err(LexiconError::Format {
                        line: idx + 1,
                        message: "empty part around '..'".into(),
                    })
                }
                _ => {
                    return Err(LexiconError::Format {
                        line: idx + 1,
                        message: "more than one '..' separator".into(),
                    })
                }
            };
            if pattern.first.is_empty() {
                return Err(LexiconError::Format {
                    line: idx + 1,
                    message: "empty pattern".into(),
                });
            }
            patterns.push(pattern);
        }
        Ok(ConnectiveLexicon { patterns })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// The 100-pattern lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/connectives.txt")).expect("bundled lexicon is valid")
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// A lexicon match within one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveCandidate {
    pub span: TokenSpan,
    pub pattern: String,
    pub discontinuous: bool,
    pub sent_index: usize,
}

impl ConnectiveCandidate {
    /// Sentence-local token indices of the connective.
    pub fn local_indices(&self) -> Vec<usize> {
        self.span.refs().iter().map(|r| r.tok_index).collect()
    }
}

fn match_at(tokens: &[String], start: usize, words: &[String]) -> bool {
    start + words.len() <= tokens.len()
        && tokens[start..start + words.len()]
            .iter()
            .zip(words)
            .all(|(t, w)| t == w)
}

/// Finds connective candidates: the longest pattern wins at each start
/// token, and matches overlapping an already-accepted longer match are
/// suppressed. Discontinuous patterns match their two parts in order within
/// the sentence.
pub fn match_connectives(
    sentence: &Sentence,
    lexicon: &ConnectiveLexicon,
) -> Vec<ConnectiveCandidate> {
    let lowered: Vec<String> = sentence
        .tokens
        .iter()
        .map(|t| t.surface.to_lowercase())
        .collect();

    // (start, -len, contiguous-first, pattern, local indices)
    let mut matches: Vec<(usize, usize, bool, &Pattern, Vec<usize>)> = Vec::new();
    for pattern in &lexicon.patterns {
        for start in 0..lowered.len() {
            if !match_at(&lowered, start, &pattern.first) {
                continue;
            }
            if pattern.discontinuous() {
                let mut found = None;
                for second_start in start + pattern.first.len()..lowered.len() {
                    if match_at(&lowered, second_start, &pattern.second) {
                        found = Some(second_start);
                        break;
                    }
                }
                if let Some(second_start) = found {
                    let mut indices: Vec<usize> = (start..start + pattern.first.len()).collect();
                    indices.extend(second_start..second_start + pattern.second.len());
                    matches.push((start, pattern.total_len(), true, pattern, indices));
                }
            } else {
                let indices: Vec<usize> = (start..start + pattern.first.len()).collect();
                matches.push((start, pattern.total_len(), false, pattern, indices));
            }
        }
    }
    matches.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.raw.cmp(&b.3.raw))
    });

    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut candidates = Vec::new();
    for (_, _, _, pattern, indices) in matches {
        if indices.iter().any(|i| taken.contains(i)) {
            continue;
        }
        taken.extend(indices.iter().copied());
        candidates.push(ConnectiveCandidate {
            span: TokenSpan::from_tokens(indices.iter().map(|&i| &sentence.tokens[i])),
            pattern: pattern.raw.clone(),
            discontinuous: pattern.discontinuous(),
            sent_index: sentence.tokens[0].sent_index,
        });
    }
    candidates.sort_by_key(|c| c.span.first().map(|r| r.doc_tok_index).unwrap_or(0));
    candidates
}

/// The ten connective features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveFeatures {
    pub conn_lower: String,
    pub case_class: String,
    pub selfcat_label: String,
    pub selfcat_parent: String,
    pub selfcat_left_sib: String,
    pub selfcat_right_sib: String,
    pub left_word: String,
    pub left_pos: String,
    pub right_word: String,
    pub right_pos: String,
}

impl ConnectiveFeatures {
    pub fn to_feature_map(&self) -> FeatureMap {
        let mut map = FeatureMap::new();
        map.insert("conn_lower".into(), FeatureValue::cat(&self.conn_lower));
        map.insert("case_class".into(), FeatureValue::cat(&self.case_class));
        map.insert(
            "selfcat_label".into(),
            FeatureValue::cat(&self.selfcat_label),
        );
        map.insert(
            "selfcat_parent".into(),
            FeatureValue::cat(&self.selfcat_parent),
        );
        map.insert(
            "selfcat_left_sib".into(),
            FeatureValue::cat(&self.selfcat_left_sib),
        );
        map.insert(
            "selfcat_right_sib".into(),
            FeatureValue::cat(&self.selfcat_right_sib),
        );
        map.insert("left_word".into(), FeatureValue::cat(&self.left_word));
        map.insert("left_pos".into(), FeatureValue::cat(&self.left_pos));
        map.insert("right_word".into(), FeatureValue::cat(&self.right_word));
        map.insert("right_pos".into(), FeatureValue::cat(&self.right_pos));
        map
    }

    fn to_bag(&self) -> Vec<String> {
        vec![
            format!("conn={}", self.conn_lower),
            format!("case={}", self.case_class),
            format!("sc={}", self.selfcat_label),
            format!("sc_parent={}", self.selfcat_parent),
            format!("sc_left={}", self.selfcat_left_sib),
            format!("sc_right={}", self.selfcat_right_sib),
            format!("lw={}", self.left_word),
            format!("lp={}", self.left_pos),
            format!("rw={}", self.right_word),
            format!("rp={}", self.right_pos),
        ]
    }
}

fn case_class(surfaces: &[&str]) -> &'static str {
    let any_upper = surfaces
        .iter()
        .flat_map(|s| s.chars())
        .any(char::is_uppercase);
    if !any_upper {
        return "all-lowercase";
    }
    let mut chars = surfaces.iter().flat_map(|s| s.chars());
    let first_upper = chars.next().map(char::is_uppercase).unwrap_or(false);
    if first_upper && !chars.any(char::is_uppercase) {
        "initial-uppercase"
    } else {
        "other"
    }
}

/// SelfCat of a candidate within its sentence tree.
pub fn candidate_selfcat(cand: &ConnectiveCandidate, sentence: &Sentence) -> NodeId {
    syntax::self_cat(&sentence.tree, &cand.local_indices())
        .expect("connective indices are within the sentence")
}

/// Extracts the ten connective features, with `<BOS>`/`<EOS>` sentinels at
/// sentence boundaries.
pub fn extract_connective_features(
    cand: &ConnectiveCandidate,
    sentence: &Sentence,
) -> ConnectiveFeatures {
    let surfaces: Vec<&str> = cand
        .span
        .refs()
        .iter()
        .map(|r| sentence.tokens[r.tok_index].surface.as_str())
        .collect();
    let selfcat = candidate_selfcat(cand, sentence);
    let ctx = node_context(&sentence.tree, selfcat);

    let local = cand.local_indices();
    let first = *local.first().expect("non-empty connective");
    let last = *local.last().expect("non-empty connective");
    let (left_word, left_pos) = match first.checked_sub(1) {
        Some(i) => (
            sentence.tokens[i].surface.clone(),
            sentence.tokens[i].pos.clone(),
        ),
        None => (BOS.to_owned(), BOS.to_owned()),
    };
    let (right_word, right_pos) = match sentence.tokens.get(last + 1) {
        Some(token) => (token.surface.clone(), token.pos.clone()),
        None => (EOS.to_owned(), EOS.to_owned()),
    };

    ConnectiveFeatures {
        conn_lower: surfaces.join(" ").to_lowercase(),
        case_class: case_class(&surfaces).to_owned(),
        selfcat_label: ctx.label,
        selfcat_parent: ctx.parent_label,
        selfcat_left_sib: ctx.left_sibling_label,
        selfcat_right_sib: ctx.right_sibling_label,
        left_word,
        left_pos,
        right_word,
        right_pos,
    }
}

/// Runs the lexicon and the detector over a document, then labels the
/// surviving candidates with the sense classifier.
pub fn detect_and_sense(
    doc: &Document,
    lexicon: &ConnectiveLexicon,
    detector: &DecisionTree,
    senser: &DecisionTree,
) -> Vec<(ConnectiveCandidate, String)> {
    let mut results = Vec::new();
    for sentence in &doc.sentences {
        if sentence.tokens.is_empty() {
            continue;
        }
        for cand in match_connectives(sentence, lexicon) {
            let features = extract_connective_features(&cand, sentence).to_feature_map();
            let (decision, _) = detector.predict(&features);
            if decision != LABEL_DISCOURSE {
                continue;
            }
            let (sense, _) = senser.predict(&features);
            results.push((cand, sense));
        }
    }
    results
}

/// CRF feature bag for one candidate constituent.
fn arg_candidate_bag(
    conn_features: &ConnectiveFeatures,
    sentence: &Sentence,
    selfcat: NodeId,
    candidate: NodeId,
    rules: &HeadRules,
) -> Vec<String> {
    let tree = &sentence.tree;
    let mut bag = conn_features.to_bag();

    // Path from the candidate up to its parent on the SelfCat root path,
    // then down to SelfCat.
    let sc_path = root_path(tree, selfcat);
    let parent = tree.parent(candidate).expect("candidate has a path parent");
    let k = sc_path
        .iter()
        .position(|&n| n == parent)
        .expect("parent lies on the SelfCat root path");
    let mut chain = vec![tree.label(candidate).to_owned()];
    for i in (0..=k).rev() {
        chain.push(tree.label(sc_path[i]).to_owned());
    }
    bag.push(format!("path={}", chain.join(">")));
    bag.push(format!("path_len={}", chain.len() - 1));

    let ctx = node_context(tree, candidate);
    bag.push(format!(
        "ctx={}/{}/{}/{}",
        ctx.label, ctx.parent_label, ctx.left_sibling_label, ctx.right_sibling_label
    ));

    let side = if tree.span(candidate).1 < tree.span(selfcat).0 {
        "left"
    } else {
        "right"
    };
    bag.push(format!("side={side}"));
    bag.push(format!("prod={}", production_rule(tree, candidate)));

    let head = head_token(tree, candidate, sentence, rules);
    bag.push(format!("head={}", head.surface));
    let (first, last) = tree.span(candidate);
    bag.push(format!("first={}", sentence.tokens[first].surface));
    let before = match first.checked_sub(1) {
        Some(i) => sentence.tokens[i].surface.as_str(),
        None => BOS,
    };
    bag.push(format!("before_first={before}"));
    bag.push(format!("last={}", sentence.tokens[last].surface));
    let after = match sentence.tokens.get(last + 1) {
        Some(t) => t.surface.as_str(),
        None => EOS,
    };
    bag.push(format!("after_last={after}"));
    bag
}

/// The CRF observation sequence for one connective: candidate constituents
/// in left-to-right order with their feature bags. `None` when the SelfCat
/// path has no attached constituents.
pub fn segment_sequence(
    cand: &ConnectiveCandidate,
    sentence: &Sentence,
    rules: &HeadRules,
) -> Option<(Vec<NodeId>, CrfSequence)> {
    let selfcat = candidate_selfcat(cand, sentence);
    let candidates = candidate_constituents(&sentence.tree, selfcat);
    if candidates.is_empty() {
        return None;
    }
    let conn_features = extract_connective_features(cand, sentence);
    let bags: Vec<Vec<String>> = candidates
        .iter()
        .map(|&node| arg_candidate_bag(&conn_features, sentence, selfcat, node, rules))
        .collect();
    Some((candidates, CrfSequence::new(bags)))
}

/// Merges labeled candidate constituents into argument spans, applying the
/// previous-sentence fallback for a missing first argument and the
/// sentence-remainder repair for a missing second argument. Connective
/// tokens never enter either argument.
pub fn merge_labeled_candidates(
    cand: &ConnectiveCandidate,
    doc: &Document,
    nodes: &[NodeId],
    labels: &[&str],
) -> SegmentedArgs {
    let sentence = &doc.sentences[cand.sent_index];
    let tree = &sentence.tree;
    let mut arg1_tokens = Vec::new();
    let mut arg2_tokens = Vec::new();
    for (&node, &label) in nodes.iter().zip(labels) {
        let (first, last) = tree.span(node);
        let bucket = match label {
            LABEL_ARG1 => &mut arg1_tokens,
            LABEL_ARG2 => &mut arg2_tokens,
            _ => continue,
        };
        bucket.extend(sentence.tokens[first..=last].iter());
    }
    let mut arg1 = TokenSpan::from_tokens(arg1_tokens).minus(&cand.span);
    let mut arg2 = TokenSpan::from_tokens(arg2_tokens).minus(&cand.span);

    let sentence_span = TokenSpan::from_tokens(&sentence.tokens);
    if arg2.is_empty() {
        arg2 = sentence_span.minus(&cand.span).minus(&arg1);
    }
    let mut arg1_from_previous_sentence = false;
    if arg1.is_empty() {
        if cand.sent_index > 0 {
            arg1 = TokenSpan::from_tokens(&doc.sentences[cand.sent_index - 1].tokens);
            arg1_from_previous_sentence = true;
        } else {
            // Document-initial sentence: fall back to the same-sentence
            // remainder, which may be empty in degenerate cases.
            arg1 = sentence_span.minus(&cand.span).minus(&arg2);
        }
    }
    SegmentedArgs {
        arg1,
        arg2,
        arg1_from_previous_sentence,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedArgs {
    pub arg1: TokenSpan,
    pub arg2: TokenSpan,
    pub arg1_from_previous_sentence: bool,
}

/// Segments the two arguments of a connective with the CRF.
pub fn segment_arguments(
    cand: &ConnectiveCandidate,
    doc: &Document,
    model: &CrfModel,
    rules: &HeadRules,
) -> SegmentedArgs {
    let sentence = &doc.sentences[cand.sent_index];
    let (nodes, labels) = match segment_sequence(cand, sentence, rules) {
        Some((nodes, seq)) => {
            let (path, _) = viterbi(model, &seq);
            let labels: Vec<&str> = path.iter().map(|&i| model.labels()[i].as_str()).collect();
            (nodes, labels)
        }
        None => (Vec::new(), Vec::new()),
    };
    merge_labeled_candidates(cand, doc, &nodes, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Arg1,
    Arg2,
}

impl ArgType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArgType::Arg1 => "Arg1",
            ArgType::Arg2 => "Arg2",
        }
    }
}

/// One classifiable unit inside an argument span: a maximal constituent
/// fully inside the span, or a single token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrimUnit {
    Constituent { sent_index: usize, node: NodeId },
    Token { doc_tok_index: usize },
}

impl TrimUnit {
    /// Document-level token indices covered by the unit.
    pub fn covered(&self, doc: &Document) -> Vec<usize> {
        match self {
            TrimUnit::Token { doc_tok_index } => vec![*doc_tok_index],
            TrimUnit::Constituent { sent_index, node } => {
                let sentence = &doc.sentences[*sent_index];
                let (first, last) = sentence.tree.span(*node);
                (first..=last)
                    .map(|i| sentence.tokens[i].doc_tok_index)
                    .collect()
            }
        }
    }
}

fn position_feature(unit_first: usize, unit_last: usize, span: &TokenSpan) -> &'static str {
    let span_first = span.first().map(|r| r.doc_tok_index).unwrap_or(0);
    let span_last = span.last().map(|r| r.doc_tok_index).unwrap_or(0);
    if unit_first == span_first {
        "begin"
    } else if unit_last == span_last {
        "end"
    } else {
        "inside"
    }
}

/// Maximal constituents whose yield lies entirely inside the local index
/// set, found by top-down descent.
fn maximal_inside(tree: &Tree, node: NodeId, local: &BTreeSet<usize>, out: &mut Vec<NodeId>) {
    let (first, last) = tree.span(node);
    if (first..=last).all(|i| local.contains(&i)) {
        out.push(node);
        return;
    }
    for &child in tree.children(node) {
        maximal_inside(tree, child, local, out);
    }
}

/// Builds the trimmer's classification units and feature maps for a span.
pub fn trim_instances(
    span: &TokenSpan,
    arg_type: ArgType,
    doc: &Document,
    rules: &HeadRules,
) -> Vec<(TrimUnit, FeatureMap)> {
    let mut instances = Vec::new();
    let mut by_sentence: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for r in span.refs() {
        by_sentence
            .entry(r.sent_index)
            .or_default()
            .insert(r.tok_index);
    }

    for (&sent_index, local) in &by_sentence {
        let sentence = &doc.sentences[sent_index];
        let tree = &sentence.tree;
        let mut nodes = Vec::new();
        maximal_inside(tree, tree.root(), local, &mut nodes);

        for node in nodes {
            let (first, last) = tree.span(node);
            let head = head_token(tree, node, sentence, rules);
            let ctx = node_context(tree, node);
            let parent_production = tree
                .parent(node)
                .map(|p| production_rule(tree, p))
                .unwrap_or_else(|| "null".to_owned());
            let grandparent_production = tree
                .parent(node)
                .and_then(|p| tree.parent(p))
                .map(|g| production_rule(tree, g))
                .unwrap_or_else(|| "null".to_owned());
            let mut map = FeatureMap::new();
            map.insert("head_or_text".into(), FeatureValue::cat(&head.surface));
            map.insert("label_or_pos".into(), FeatureValue::cat(tree.label(node)));
            map.insert(
                "position".into(),
                FeatureValue::cat(position_feature(
                    sentence.tokens[first].doc_tok_index,
                    sentence.tokens[last].doc_tok_index,
                    span,
                )),
            );
            map.insert(
                "parent_production".into(),
                FeatureValue::cat(&parent_production),
            );
            map.insert(
                "grandparent_production".into(),
                FeatureValue::cat(&grandparent_production),
            );
            map.insert("arg_type".into(), FeatureValue::cat(arg_type.as_str()));
            map.insert(
                "left_sibling_label".into(),
                FeatureValue::cat(&ctx.left_sibling_label),
            );
            map.insert(
                "right_sibling_label".into(),
                FeatureValue::cat(&ctx.right_sibling_label),
            );
            instances.push((TrimUnit::Constituent { sent_index, node }, map));
        }

        for &tok in local.iter() {
            let token = &sentence.tokens[tok];
            let leaf = tree.leaf(tok).expect("token has a leaf");
            let ctx = node_context(tree, leaf);
            let mut map = FeatureMap::new();
            map.insert("head_or_text".into(), FeatureValue::cat(&token.surface));
            map.insert("label_or_pos".into(), FeatureValue::cat(&token.pos));
            map.insert(
                "position".into(),
                FeatureValue::cat(position_feature(
                    token.doc_tok_index,
                    token.doc_tok_index,
                    span,
                )),
            );
            map.insert("parent_production".into(), FeatureValue::cat("null"));
            map.insert("grandparent_production".into(), FeatureValue::cat("null"));
            map.insert("arg_type".into(), FeatureValue::cat(arg_type.as_str()));
            map.insert(
                "left_sibling_label".into(),
                FeatureValue::cat(&ctx.left_sibling_label),
            );
            map.insert(
                "right_sibling_label".into(),
                FeatureValue::cat(&ctx.right_sibling_label),
            );
            instances.push((
                TrimUnit::Token {
                    doc_tok_index: token.doc_tok_index,
                },
                map,
            ));
        }
    }
    instances
}

/// Trims an argument span: tokens classified out, directly or through an
/// enclosing constituent, are removed. An all-dropped result keeps the
/// original span.
pub fn trim_argument(
    span: &TokenSpan,
    arg_type: ArgType,
    doc: &Document,
    model: &DecisionTree,
    rules: &HeadRules,
) -> TokenSpan {
    let mut dropped: BTreeSet<usize> = BTreeSet::new();
    for (unit, features) in trim_instances(span, arg_type, doc, rules) {
        let (label, _) = model.predict(&features);
        if label == LABEL_NOT_PART {
            dropped.extend(unit.covered(doc));
        }
    }
    let trimmed = TokenSpan::new(
        span.refs()
            .iter()
            .filter(|r| !dropped.contains(&r.doc_tok_index))
            .copied()
            .collect(),
    );
    if trimmed.is_empty() {
        span.clone()
    } else {
        trimmed
    }
}

/// The four explicit-stage models plus head rules.
pub struct ExplicitModels {
    pub detector: DecisionTree,
    pub senser: DecisionTree,
    pub segmenter: CrfModel,
    pub trimmer: DecisionTree,
    pub head_rules: HeadRules,
}

/// Full explicit annotation of one document: detect, sense-label, segment,
/// trim. Relations are ordered by connective position and numbered from
/// `first_id`. Degenerate segmentations that cannot produce two non-empty
/// arguments are skipped.
pub fn annotate_explicit(
    doc: &Document,
    lexicon: &ConnectiveLexicon,
    models: &ExplicitModels,
) -> Vec<Relation> {
    annotate_explicit_from(doc, lexicon, models, 0)
}

pub fn annotate_explicit_from(
    doc: &Document,
    lexicon: &ConnectiveLexicon,
    models: &ExplicitModels,
    first_id: u64,
) -> Vec<Relation> {
    let mut relations = Vec::new();
    let mut next_id = first_id;
    for (cand, sense) in detect_and_sense(doc, lexicon, &models.detector, &models.senser) {
        let segmented = segment_arguments(&cand, doc, &models.segmenter, &models.head_rules);
        if segmented.arg1.is_empty() || segmented.arg2.is_empty() {
            continue;
        }
        let arg1 = trim_argument(
            &segmented.arg1,
            ArgType::Arg1,
            doc,
            &models.trimmer,
            &models.head_rules,
        );
        let arg2 = trim_argument(
            &segmented.arg2,
            ArgType::Arg2,
            doc,
            &models.trimmer,
            &models.head_rules,
        );
        if arg1.intersects(&arg2) {
            // Cannot happen from disjoint inputs; trimming only removes.
            continue;
        }
        relations.push(Relation {
            relation_id: next_id,
            doc_id: doc.doc_id.clone(),
            rel_type: RelType::Explicit,
            connective: cand.span.clone(),
            arg1,
            arg2,
            senses: vec![sense],
        });
        next_id += 1;
    }
    relations
}
