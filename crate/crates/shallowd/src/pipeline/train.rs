//! Training-set construction and the harness that fits all six learners:
//! connective detector, sense labeler, argument segmenter, argument trimmer,
//! and the two convolutional nets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, RelType, Relation, SenseInventory, TokenSpan};
use crate::crf::{train_crf, CrfSequence};
use crate::dtree::{train_c45, Instance};
use crate::explicit::{
    self, merge_labeled_candidates, segment_arguments, segment_sequence, ArgType,
    ConnectiveCandidate, ConnectiveLexicon, SegmentedArgs, LABEL_ARG1, LABEL_ARG2, LABEL_DISCOURSE,
    LABEL_NON, LABEL_NON_DISCOURSE, LABEL_NOT_PART, LABEL_PART,
};
use crate::neural::{
    self, build_input, load_embeddings, ConvNetModel, DiscourseInput, EmbeddingMatrix, NetConfig,
};
use crate::nonexplicit::{self, CLASS_ENTREL, CLASS_NO_RELATION, CLASS_RELATION};
use crate::syntax::HeadRules;

use super::config::{PipelineConfig, TrimTrainOn};
use super::{ModelBundle, PipelineError};

// Per-learner seed offsets from the run seed.
const SEED_SEGMENTER: u64 = 1;
const SEED_BINARY_INIT: u64 = 2;
const SEED_BINARY_TRAIN: u64 = 3;
const SEED_MULTI_INIT: u64 = 4;
const SEED_MULTI_TRAIN: u64 = 5;
const SEED_EMBEDDING: u64 = 6;
const SEED_NEGATIVES: u64 = 7;
const SEED_DEV_SPLIT: u64 = 8;

fn data_err<T>(message: String) -> Result<T, PipelineError> {
    Err(PipelineError::Data(message))
}

/// Rebuilds a gold span's token references from the document, validating
/// indices along the way.
fn resolve_span(
    doc: &Document,
    span: &TokenSpan,
    what: &str,
    relation_id: u64,
) -> Result<TokenSpan, PipelineError> {
    let mut tokens = Vec::with_capacity(span.len());
    for r in span.refs() {
        let token = match doc.token(r.doc_tok_index) {
            Some(token) => token,
            None => {
                return data_err(format!(
                    "relation {relation_id} in {}: {what} token {} out of range",
                    doc.doc_id, r.doc_tok_index
                ))
            }
        };
        if token.sent_index != r.sent_index || token.tok_index != r.tok_index {
            return data_err(format!(
                "relation {relation_id} in {}: {what} token {} has sentence/token \
                 indices {}:{} but the corpus says {}:{}",
                doc.doc_id,
                r.doc_tok_index,
                r.sent_index,
                r.tok_index,
                token.sent_index,
                token.tok_index
            ));
        }
        tokens.push(token);
    }
    Ok(TokenSpan::from_tokens(tokens))
}

/// A gold explicit relation resolved against its document, with the
/// connective recast as a candidate.
struct ResolvedExplicit<'a> {
    doc: &'a Document,
    cand: ConnectiveCandidate,
    arg1: TokenSpan,
    arg2: TokenSpan,
    sense: String,
}

fn connective_candidate_from_gold(
    doc: &Document,
    connective: &TokenSpan,
) -> Option<ConnectiveCandidate> {
    let refs = connective.refs();
    let sent_index = refs.first()?.sent_index;
    if refs.iter().any(|r| r.sent_index != sent_index) {
        // Cross-sentence connectives fall outside the sentence-level
        // feature extractors and are skipped for training.
        return None;
    }
    let sentence = &doc.sentences[sent_index];
    let surfaces: Vec<String> = refs
        .iter()
        .map(|r| sentence.tokens[r.tok_index].surface.to_lowercase())
        .collect();
    let contiguous = refs
        .windows(2)
        .all(|w| w[1].tok_index == w[0].tok_index + 1);
    Some(ConnectiveCandidate {
        span: connective.clone(),
        pattern: surfaces.join(" "),
        discontinuous: !contiguous,
        sent_index,
    })
}

/// Projects gold argument spans onto candidate constituents: a constituent
/// is part of an argument when at least half of its tokens are, ties and
/// everything else are Non.
fn project_gold_labels(
    doc: &Document,
    cand: &ConnectiveCandidate,
    nodes: &[crate::syntax::NodeId],
    arg1: &TokenSpan,
    arg2: &TokenSpan,
) -> Vec<&'static str> {
    let sentence = &doc.sentences[cand.sent_index];
    nodes
        .iter()
        .map(|&node| {
            let (first, last) = sentence.tree.span(node);
            let total = (last - first + 1) as f64;
            let in1 = sentence.tokens[first..=last]
                .iter()
                .filter(|t| arg1.contains(t.doc_tok_index))
                .count() as f64;
            let in2 = sentence.tokens[first..=last]
                .iter()
                .filter(|t| arg2.contains(t.doc_tok_index))
                .count() as f64;
            let (f1, f2) = (in1 / total, in2 / total);
            if f1 >= 0.5 && f1 > f2 {
                LABEL_ARG1
            } else if f2 >= 0.5 && f2 > f1 {
                LABEL_ARG2
            } else {
                LABEL_NON
            }
        })
        .collect()
}

fn trimmer_instances_for(
    doc: &Document,
    span: &TokenSpan,
    arg_type: ArgType,
    gold: &TokenSpan,
    rules: &HeadRules,
    out: &mut Vec<Instance>,
) {
    for (unit, features) in explicit::trim_instances(span, arg_type, doc, rules) {
        let keep = unit.covered(doc).iter().any(|&i| gold.contains(i));
        let label = if keep { LABEL_PART } else { LABEL_NOT_PART };
        out.push(Instance {
            features,
            label: label.to_owned(),
        });
    }
}

/// 99.5th-percentile argument length (nearest rank), at least 1.
fn percentile_995(lengths: &[usize]) -> usize {
    assert!(!lengths.is_empty());
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = ((0.995 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1].max(1)
}

/// Deterministic dev split: shuffles indices and holds out the requested
/// fraction (possibly none).
fn dev_split<T: Clone>(data: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut dev_n = (data.len() as f64 * fraction).floor() as usize;
    if dev_n >= data.len() {
        dev_n = data.len().saturating_sub(1);
    }
    let dev = order[..dev_n].iter().map(|&i| data[i].clone()).collect();
    let train = order[dev_n..].iter().map(|&i| data[i].clone()).collect();
    (train, dev)
}

struct Resources {
    lexicon: ConnectiveLexicon,
    lexicon_text: String,
    head_rules: HeadRules,
    head_rules_text: String,
    senses_nonexplicit: SenseInventory,
    senses_explicit: SenseInventory,
}

fn load_resources(config: &PipelineConfig) -> Result<Resources, PipelineError> {
    let (lexicon_text, lexicon) = match &config.lexicon {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            let lexicon = ConnectiveLexicon::parse(&text)?;
            (text, lexicon)
        }
        None => (
            include_str!("../../data/connectives.txt").to_owned(),
            ConnectiveLexicon::bundled(),
        ),
    };
    let (head_rules_text, head_rules) = match &config.head_rules {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            let rules = HeadRules::parse(&text)?;
            (text, rules)
        }
        None => (
            include_str!("../../data/head_rules.txt").to_owned(),
            HeadRules::bundled(),
        ),
    };
    let senses_explicit = match &config.senses_explicit {
        Some(path) => SenseInventory::load(path)?,
        None => SenseInventory::new(
            include_str!("../../data/senses_explicit.txt")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
        )?,
    };
    if senses_explicit.len() != 14 {
        return Err(PipelineError::Config(format!(
            "explicit sense inventory must have 14 labels, found {}",
            senses_explicit.len()
        )));
    }
    let senses_nonexplicit = match &config.senses_nonexplicit {
        Some(path) => SenseInventory::load(path)?,
        None => SenseInventory::new(
            include_str!("../../data/senses_nonexplicit.txt")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
        )?,
    };
    Ok(Resources {
        lexicon,
        lexicon_text,
        head_rules,
        head_rules_text,
        senses_nonexplicit,
        senses_explicit,
    })
}

/// Trains the full bundle from a corpus and its gold relations.
///
/// Training sets are built as follows: lexicon matches labeled by gold
/// connective spans (detector); gold connectives labeled with their senses
/// (sense labeler); gold arguments projected onto candidate constituents
/// (segmenter); segmenter-stage spans labeled token-wise against gold
/// arguments (trimmer); gold adjacent-sentence non-explicit relations as
/// positives with 1:1 downsampled unrelated adjacent pairs as negatives
/// (binary net); the positives with their senses (multiclass net).
pub fn train_all(
    corpus: &[Document],
    gold: &[Relation],
    config: &PipelineConfig,
) -> Result<ModelBundle, PipelineError> {
    let resources = load_resources(config)?;
    let docs: BTreeMap<&str, &Document> = corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();

    // Resolve gold relations against the corpus.
    let mut explicit_gold: Vec<ResolvedExplicit> = Vec::new();
    let mut nonexplicit_gold: Vec<&Relation> = Vec::new();
    for relation in gold {
        let Some(&doc) = docs.get(relation.doc_id.as_str()) else {
            return data_err(format!(
                "relation {} references unknown document {:?}",
                relation.relation_id, relation.doc_id
            ));
        };
        match relation.rel_type {
            RelType::Explicit => {
                let connective = resolve_span(
                    doc,
                    &relation.connective,
                    "connective",
                    relation.relation_id,
                )?;
                let arg1 = resolve_span(doc, &relation.arg1, "arg1", relation.relation_id)?;
                let arg2 = resolve_span(doc, &relation.arg2, "arg2", relation.relation_id)?;
                let Some(cand) = connective_candidate_from_gold(doc, &connective) else {
                    continue;
                };
                let sense = relation.senses[0].clone();
                if !resources.senses_explicit.contains(&sense) {
                    return data_err(format!(
                        "relation {} in {}: sense {:?} not in the explicit inventory",
                        relation.relation_id, doc.doc_id, sense
                    ));
                }
                explicit_gold.push(ResolvedExplicit {
                    doc,
                    cand,
                    arg1,
                    arg2,
                    sense,
                });
            }
            _ => {
                resolve_span(doc, &relation.arg1, "arg1", relation.relation_id)?;
                resolve_span(doc, &relation.arg2, "arg2", relation.relation_id)?;
                nonexplicit_gold.push(relation);
            }
        }
    }

    // --- Connective detector -------------------------------------------
    let gold_connectives: BTreeMap<&str, BTreeSet<Vec<usize>>> = {
        let mut map: BTreeMap<&str, BTreeSet<Vec<usize>>> = BTreeMap::new();
        for resolved in &explicit_gold {
            map.entry(resolved.doc.doc_id.as_str())
                .or_default()
                .insert(resolved.cand.span.indices().collect());
        }
        map
    };
    let mut detector_data: Vec<Instance> = Vec::new();
    for doc in corpus {
        let doc_gold = gold_connectives.get(doc.doc_id.as_str());
        for sentence in &doc.sentences {
            if sentence.tokens.is_empty() {
                continue;
            }
            for cand in explicit::match_connectives(sentence, &resources.lexicon) {
                let indices: Vec<usize> = cand.span.indices().collect();
                let positive = doc_gold.map(|g| g.contains(&indices)).unwrap_or(false);
                let features = explicit::extract_connective_features(&cand, sentence);
                detector_data.push(Instance {
                    features: features.to_feature_map(),
                    label: if positive {
                        LABEL_DISCOURSE
                    } else {
                        LABEL_NON_DISCOURSE
                    }
                    .to_owned(),
                });
            }
        }
    }
    if detector_data.is_empty() {
        return Err(PipelineError::Train {
            component: "connective detector".into(),
            message: "no lexicon matches in the corpus".into(),
        });
    }
    let detector = train_c45(&detector_data, &config.detector.to_train_config())?;

    // --- Sense labeler ---------------------------------------------------
    let senser_data: Vec<Instance> = explicit_gold
        .iter()
        .map(|resolved| {
            let sentence = &resolved.doc.sentences[resolved.cand.sent_index];
            let features = explicit::extract_connective_features(&resolved.cand, sentence);
            Instance {
                features: features.to_feature_map(),
                label: resolved.sense.clone(),
            }
        })
        .collect();
    if senser_data.is_empty() {
        return Err(PipelineError::Train {
            component: "sense labeler".into(),
            message: "no explicit gold relations".into(),
        });
    }
    let senser = train_c45(&senser_data, &config.senser.to_train_config())?;

    // --- Argument segmenter ----------------------------------------------
    struct SegmentCase<'a> {
        resolved: &'a ResolvedExplicit<'a>,
        nodes: Vec<crate::syntax::NodeId>,
        labels: Vec<&'static str>,
    }
    let mut crf_data: Vec<(CrfSequence, Vec<String>)> = Vec::new();
    let mut cases: Vec<SegmentCase> = Vec::new();
    for resolved in &explicit_gold {
        let sentence = &resolved.doc.sentences[resolved.cand.sent_index];
        match segment_sequence(&resolved.cand, sentence, &resources.head_rules) {
            Some((nodes, seq)) => {
                let labels = project_gold_labels(
                    resolved.doc,
                    &resolved.cand,
                    &nodes,
                    &resolved.arg1,
                    &resolved.arg2,
                );
                crf_data.push((seq, labels.iter().map(|s| (*s).to_owned()).collect()));
                cases.push(SegmentCase {
                    resolved,
                    nodes,
                    labels,
                });
            }
            None => cases.push(SegmentCase {
                resolved,
                nodes: Vec::new(),
                labels: Vec::new(),
            }),
        }
    }
    if crf_data.is_empty() {
        return Err(PipelineError::Train {
            component: "argument segmenter".into(),
            message: "no candidate-constituent sequences in the gold data".into(),
        });
    }
    let segmenter = train_crf(
        &crf_data,
        &explicit::segmenter_labels(),
        &config
            .segmenter
            .to_train_config(config.seed.wrapping_add(SEED_SEGMENTER)),
    )?;

    // --- Argument trimmer --------------------------------------------------
    let mut trimmer_data: Vec<Instance> = Vec::new();
    for case in &cases {
        let spans: SegmentedArgs = match config.trim_train_on {
            TrimTrainOn::Predicted => segment_arguments(
                &case.resolved.cand,
                case.resolved.doc,
                &segmenter,
                &resources.head_rules,
            ),
            TrimTrainOn::Gold => merge_labeled_candidates(
                &case.resolved.cand,
                case.resolved.doc,
                &case.nodes,
                &case.labels,
            ),
        };
        if !spans.arg1.is_empty() {
            trimmer_instances_for(
                case.resolved.doc,
                &spans.arg1,
                ArgType::Arg1,
                &case.resolved.arg1,
                &resources.head_rules,
                &mut trimmer_data,
            );
        }
        if !spans.arg2.is_empty() {
            trimmer_instances_for(
                case.resolved.doc,
                &spans.arg2,
                ArgType::Arg2,
                &case.resolved.arg2,
                &resources.head_rules,
                &mut trimmer_data,
            );
        }
    }
    if trimmer_data.is_empty() {
        return Err(PipelineError::Train {
            component: "argument trimmer".into(),
            message: "no trimmable spans in the gold data".into(),
        });
    }
    let trimmer = train_c45(&trimmer_data, &config.trimmer.to_train_config())?;

    // --- Convolutional nets -------------------------------------------------
    let Some(embeddings_path) = &config.embeddings else {
        return Err(PipelineError::Config(
            "net training requires an embeddings file (config key `embeddings`)".into(),
        ));
    };

    // Positive pairs: gold non-explicit relations between adjacent
    // sentences, as (arg1 words, arg2 words, sense).
    let mut positives: Vec<(Vec<String>, Vec<String>, String)> = Vec::new();
    for relation in &nonexplicit_gold {
        let doc = docs[relation.doc_id.as_str()];
        let s1 = relation
            .arg1
            .refs()
            .iter()
            .map(|r| r.sent_index)
            .collect::<BTreeSet<_>>();
        let s2 = relation
            .arg2
            .refs()
            .iter()
            .map(|r| r.sent_index)
            .collect::<BTreeSet<_>>();
        if s1.len() != 1 || s2.len() != 1 {
            continue;
        }
        let (s1, s2) = (
            *s1.iter().next().expect("one sentence"),
            *s2.iter().next().expect("one sentence"),
        );
        if s2 != s1 + 1 {
            continue;
        }
        positives.push((
            nonexplicit::span_words(doc, &relation.arg1),
            nonexplicit::span_words(doc, &relation.arg2),
            relation.senses[0].clone(),
        ));
    }
    if positives.is_empty() {
        return Err(PipelineError::Train {
            component: "binary net".into(),
            message: "no adjacent-sentence non-explicit gold relations (empty positives)".into(),
        });
    }

    // Negative pairs: adjacent same-paragraph sentence pairs with no gold
    // relation material touching both sentences.
    let gold_material: BTreeMap<&str, Vec<TokenSpan>> = {
        let mut map: BTreeMap<&str, Vec<TokenSpan>> = BTreeMap::new();
        for relation in gold {
            map.entry(relation.doc_id.as_str()).or_default().push(
                relation
                    .arg1
                    .union(&relation.arg2)
                    .union(&relation.connective),
            );
        }
        map
    };
    let mut negatives: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    for doc in corpus {
        let material = gold_material.get(doc.doc_id.as_str());
        for pair in nonexplicit::candidate_pairs(doc, &[], config.cross_paragraph) {
            let related = material
                .map(|spans| {
                    let sent1 = TokenSpan::from_tokens(&doc.sentences[pair.sent1].tokens);
                    let sent2 = TokenSpan::from_tokens(&doc.sentences[pair.sent2].tokens);
                    spans
                        .iter()
                        .any(|m| m.intersects(&sent1) && m.intersects(&sent2))
                })
                .unwrap_or(false);
            if !related {
                negatives.push((
                    nonexplicit::span_words(doc, &pair.arg1),
                    nonexplicit::span_words(doc, &pair.arg2),
                ));
            }
        }
    }
    let keep =
        ((positives.len() as f64 * config.negative_ratio).round() as usize).min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SEED_NEGATIVES));
    negatives.shuffle(&mut rng);
    negatives.truncate(keep);

    // Argument-length caps from the 99.5th percentile of the training data.
    let mut len1: Vec<usize> = positives.iter().map(|(a, _, _)| a.len()).collect();
    len1.extend(negatives.iter().map(|(a, _)| a.len()));
    let mut len2: Vec<usize> = positives.iter().map(|(_, b, _)| b.len()).collect();
    len2.extend(negatives.iter().map(|(_, b)| b.len()));
    let limit1 = config.net.limit1.unwrap_or_else(|| percentile_995(&len1));
    let limit2 = config.net.limit2.unwrap_or_else(|| percentile_995(&len2));

    // Shared embedding built over the corpus vocabulary; each net owns its
    // own copy and trains it independently.
    let vocab_hint: BTreeSet<String> = corpus
        .iter()
        .flat_map(|d| d.sentences.iter())
        .flat_map(|s| s.tokens.iter())
        .map(|t| t.surface.to_lowercase())
        .collect();
    let embedding = load_embeddings(
        Path::new(embeddings_path),
        &vocab_hint,
        config.seed.wrapping_add(SEED_EMBEDDING),
    )?;

    let net_config = |seed: u64| NetConfig {
        widths: config.net.widths.clone(),
        n_filters: config.net.n_filters,
        alpha_elu: config.net.alpha_elu,
        dropout_p: config.net.dropout_p,
        limit1,
        limit2,
        seed,
    };
    let train_config = |seed: u64| neural::TrainConfig {
        batch_size: config.net.batch_size,
        epochs: config.net.epochs,
        adam: config.net.adam(),
        seed,
        early_stop_patience: config.net.early_stop_patience,
    };
    let make_input = |emb: &EmbeddingMatrix, a: &[String], b: &[String]| -> DiscourseInput {
        build_input(a, b, limit1, limit2, emb)
    };

    // Binary net.
    let mut binary_net = ConvNetModel::new(
        embedding.clone(),
        vec![CLASS_NO_RELATION.to_owned(), CLASS_RELATION.to_owned()],
        &net_config(config.seed.wrapping_add(SEED_BINARY_INIT)),
    )?;
    let mut binary_data: Vec<(DiscourseInput, usize)> = Vec::new();
    for (a, b, _) in &positives {
        binary_data.push((make_input(&binary_net.embedding, a, b), 1));
    }
    for (a, b) in &negatives {
        binary_data.push((make_input(&binary_net.embedding, a, b), 0));
    }
    let (binary_train, binary_dev) = dev_split(
        &binary_data,
        config.dev_fraction,
        config.seed.wrapping_add(SEED_DEV_SPLIT),
    );
    neural::train(
        &mut binary_net,
        &binary_train,
        &binary_dev,
        &train_config(config.seed.wrapping_add(SEED_BINARY_TRAIN)),
    )?;

    // Multiclass net over the non-explicit inventory plus EntRel.
    let mut classes: Vec<String> = resources.senses_nonexplicit.labels().to_vec();
    classes.push(CLASS_ENTREL.to_owned());
    let mut multiclass_net = ConvNetModel::new(
        embedding,
        classes.clone(),
        &net_config(config.seed.wrapping_add(SEED_MULTI_INIT)),
    )?;
    let mut multi_data: Vec<(DiscourseInput, usize)> = Vec::new();
    for (a, b, sense) in &positives {
        let Some(class) = classes.iter().position(|c| c == sense) else {
            return data_err(format!("non-explicit sense {sense:?} not in the inventory"));
        };
        multi_data.push((make_input(&multiclass_net.embedding, a, b), class));
    }
    let (multi_train, multi_dev) = dev_split(
        &multi_data,
        config.dev_fraction,
        config.seed.wrapping_add(SEED_DEV_SPLIT),
    );
    neural::train(
        &mut multiclass_net,
        &multi_train,
        &multi_dev,
        &train_config(config.seed.wrapping_add(SEED_MULTI_TRAIN)),
    )?;

    Ok(ModelBundle {
        detector,
        senser,
        segmenter,
        trimmer,
        binary_net,
        multiclass_net,
        lexicon: resources.lexicon,
        lexicon_text: resources.lexicon_text,
        head_rules: resources.head_rules,
        head_rules_text: resources.head_rules_text,
        config: config.clone(),
    })
}
