//! Non-explicit relation annotation: adjacent same-paragraph sentence pairs
//! not already covered by an explicit relation are filtered with a binary
//! convolutional net and sense-labeled with a multiclass one.

use crate::corpus::{Document, RelType, Relation, TokenSpan};
use crate::neural::{build_input, predict, ConvNetModel, NeuralError};

/// Binary net class names, in class-list order.
pub const CLASS_NO_RELATION: &str = "no-relation";
pub const CLASS_RELATION: &str = "relation";
/// Multiclass label for entity-based coherence relations.
pub const CLASS_ENTREL: &str = "EntRel";

/// POS tags treated as discourse punctuation when trailing an argument.
const TRAILING_PUNCT_POS: [&str; 6] = [".", ",", ":", ";", "''", "``"];

/// Two adjacent full-sentence argument candidates, trailing punctuation
/// removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePair {
    pub arg1: TokenSpan,
    pub arg2: TokenSpan,
    pub sent1: usize,
    pub sent2: usize,
}

/// Removes trailing tokens whose POS is discourse punctuation. Idempotent.
pub fn trim_trailing_punctuation(span: &TokenSpan, doc: &Document) -> TokenSpan {
    let mut refs = span.refs().to_vec();
    while let Some(last) = refs.last() {
        let token = doc
            .token(last.doc_tok_index)
            .expect("span token in document");
        if TRAILING_PUNCT_POS.contains(&token.pos.as_str()) {
            refs.pop();
        } else {
            break;
        }
    }
    TokenSpan::new(refs)
}

fn sentence_material(relation: &Relation) -> TokenSpan {
    relation
        .arg1
        .union(&relation.arg2)
        .union(&relation.connective)
}

/// Generates adjacent-sentence candidate pairs. A pair is skipped when both
/// of its sentences intersect the material (arguments or connective) of one
/// explicit relation, when the sentences sit in different paragraphs
/// (unless `cross_paragraph`), or when punctuation trimming empties a side.
pub fn candidate_pairs(
    doc: &Document,
    explicit_rels: &[Relation],
    cross_paragraph: bool,
) -> Vec<CandidatePair> {
    let explicit_material: Vec<TokenSpan> = explicit_rels
        .iter()
        .filter(|r| r.doc_id == doc.doc_id && r.rel_type == RelType::Explicit)
        .map(sentence_material)
        .collect();

    let mut pairs = Vec::new();
    for window in doc.sentences.windows(2) {
        let (s1, s2) = (&window[0], &window[1]);
        if s1.tokens.is_empty() || s2.tokens.is_empty() {
            continue;
        }
        if !cross_paragraph && s1.paragraph_id != s2.paragraph_id {
            continue;
        }
        let span1 = TokenSpan::from_tokens(&s1.tokens);
        let span2 = TokenSpan::from_tokens(&s2.tokens);
        let covered = explicit_material
            .iter()
            .any(|m| m.intersects(&span1) && m.intersects(&span2));
        if covered {
            continue;
        }
        let arg1 = trim_trailing_punctuation(&span1, doc);
        let arg2 = trim_trailing_punctuation(&span2, doc);
        if arg1.is_empty() || arg2.is_empty() {
            continue;
        }
        pairs.push(CandidatePair {
            arg1,
            arg2,
            sent1: s1.tokens[0].sent_index,
            sent2: s2.tokens[0].sent_index,
        });
    }
    pairs
}

/// Argument surfaces for the network input.
pub fn span_words(doc: &Document, span: &TokenSpan) -> Vec<String> {
    span.indices()
        .map(|i| {
            doc.token(i)
                .expect("span token in document")
                .surface
                .clone()
        })
        .collect()
}

fn pair_probs(
    pair: &CandidatePair,
    net: &ConvNetModel,
    doc: &Document,
) -> Result<Vec<f64>, NeuralError> {
    let input = build_input(
        &span_words(doc, &pair.arg1),
        &span_words(doc, &pair.arg2),
        net.limit1,
        net.limit2,
        &net.embedding,
    );
    predict(net, &input)
}

/// True when the binary net assigns the relation class at least probability
/// 0.5; exact ties count as positive.
pub fn detect_relation(
    pair: &CandidatePair,
    net: &ConvNetModel,
    doc: &Document,
) -> Result<bool, NeuralError> {
    let probs = pair_probs(pair, net, doc)?;
    let relation_idx = net
        .class_index(CLASS_RELATION)
        .ok_or_else(|| NeuralError::Shape(format!("binary net lacks class {CLASS_RELATION:?}")))?;
    Ok(probs[relation_idx] >= 0.5)
}

/// Argmax sense from the multiclass net; ties resolve to the earlier class.
pub fn label_nonexplicit(
    pair: &CandidatePair,
    net: &ConvNetModel,
    doc: &Document,
) -> Result<String, NeuralError> {
    let probs = pair_probs(pair, net, doc)?;
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(net.classes[best].clone())
}

/// Runs the non-explicit stage over one document. Relations are numbered
/// from `first_id`; `EntRel` labels map to EntRel relations, every other
/// sense to Implicit.
pub fn annotate_nonexplicit(
    doc: &Document,
    explicit_rels: &[Relation],
    binary: &ConvNetModel,
    multiclass: &ConvNetModel,
    first_id: u64,
    cross_paragraph: bool,
) -> Result<Vec<Relation>, NeuralError> {
    let mut relations = Vec::new();
    let mut next_id = first_id;
    for pair in candidate_pairs(doc, explicit_rels, cross_paragraph) {
        if !detect_relation(&pair, binary, doc)? {
            continue;
        }
        let label = label_nonexplicit(&pair, multiclass, doc)?;
        let rel_type = if label == CLASS_ENTREL {
            RelType::EntRel
        } else {
            RelType::Implicit
        };
        relations.push(Relation {
            relation_id: next_id,
            doc_id: doc.doc_id.clone(),
            rel_type,
            connective: TokenSpan::empty(),
            arg1: pair.arg1,
            arg2: pair.arg2,
            senses: vec![label],
        });
        next_id += 1;
    }
    Ok(relations)
}
