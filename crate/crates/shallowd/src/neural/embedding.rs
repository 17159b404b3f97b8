//! Word-embedding storage and the word2vec text/binary file loader, plus
//! construction of the padded two-argument network input.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NeuralError;

/// Padding word; its row is all zeros and stays frozen during training.
pub const PAD_WORD: &str = "<PAD>";
/// Row used for words without a vocabulary entry.
pub const OOV_WORD: &str = "<OOV>";

/// Vocabulary plus one embedding row per word. Rows for words missing from
/// the pretrained file are drawn uniformly from [-0.25, 0.25].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: BTreeMap<String, usize>,
    words: Vec<String>,
    vectors: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Builds the matrix from explicit rows; used by the loader and by
    /// model deserialization. `words` must start with `<PAD>`, `<OOV>`.
    pub fn from_rows(words: Vec<String>, vectors: Array2<f64>) -> Result<Self, NeuralError> {
        if words.len() != vectors.nrows() {
            return Err(NeuralError::Shape(format!(
                "{} words but {} rows",
                words.len(),
                vectors.nrows()
            )));
        }
        if words.first().map(String::as_str) != Some(PAD_WORD)
            || words.get(1).map(String::as_str) != Some(OOV_WORD)
        {
            return Err(NeuralError::EmbeddingFormat(format!(
                "rows must start with {PAD_WORD}, {OOV_WORD}"
            )));
        }
        let vocab = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(EmbeddingMatrix {
            vocab,
            words,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn pad_index(&self) -> usize {
        0
    }

    pub fn oov_index(&self) -> usize {
        1
    }

    /// Row lookup: the word as given first, then its lowercase form, then
    /// the out-of-vocabulary row.
    pub fn index_of(&self, word: &str) -> usize {
        if let Some(&i) = self.vocab.get(word) {
            return i;
        }
        let lower = word.to_lowercase();
        self.vocab.get(&lower).copied().unwrap_or(self.oov_index())
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(index)
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }
}

/// One network input: row indices for the two padded, concatenated
/// arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscourseInput {
    pub indices: Vec<usize>,
}

impl DiscourseInput {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Builds the network input: each argument keeps its first `limit` tokens,
/// is left-padded to exactly that limit, and the two blocks are concatenated
/// first argument first. Token lookup lowercases via [`EmbeddingMatrix::index_of`].
pub fn build_input(
    arg1_words: &[String],
    arg2_words: &[String],
    limit1: usize,
    limit2: usize,
    emb: &EmbeddingMatrix,
) -> DiscourseInput {
    let mut indices = Vec::with_capacity(limit1 + limit2);
    pad_block(&mut indices, arg1_words, limit1, emb);
    pad_block(&mut indices, arg2_words, limit2, emb);
    DiscourseInput { indices }
}

fn pad_block(out: &mut Vec<usize>, words: &[String], limit: usize, emb: &EmbeddingMatrix) {
    let kept = &words[..words.len().min(limit)];
    for _ in kept.len()..limit {
        out.push(emb.pad_index());
    }
    out.extend(kept.iter().map(|w| emb.index_of(w)));
}

struct FileEntries {
    dim: usize,
    entries: Vec<(String, Vec<f64>)>,
}

fn parse_text_format(
    bytes: &[u8],
    keep: Option<&BTreeSet<String>>,
) -> Result<FileEntries, NeuralError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| NeuralError::EmbeddingFormat("file is not valid UTF-8 text".into()))?;
    let mut entries = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        // A two-integer first line is the optional "count dim" header.
        if idx == 0 && word.parse::<usize>().is_ok() {
            let rest: Vec<&str> = parts.clone().collect();
            if rest.len() == 1 {
                if let Ok(declared) = rest[0].parse::<usize>() {
                    if declared > 0 {
                        dim = Some(declared);
                        continue;
                    }
                }
            }
        }
        let wanted = keep.map(|k| k.contains(word)).unwrap_or(true);
        if wanted {
            let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|_| {
                NeuralError::EmbeddingFormat(format!(
                    "line {}: unparseable vector component",
                    idx + 1
                ))
            })?;
            if values.is_empty() {
                return Err(NeuralError::EmbeddingFormat(format!(
                    "line {}: no vector components",
                    idx + 1
                )));
            }
            check_dim(&mut dim, values.len(), seen)?;
            entries.push((word.to_owned(), values));
        } else {
            // Cheap structural check for skipped entries.
            check_dim(&mut dim, parts.count(), seen)?;
        }
        seen += 1;
    }
    let dim = dim.ok_or_else(|| NeuralError::EmbeddingFormat("empty embedding file".into()))?;
    Ok(FileEntries { dim, entries })
}

fn check_dim(dim: &mut Option<usize>, found: usize, entry: usize) -> Result<(), NeuralError> {
    match *dim {
        None => {
            *dim = Some(found);
            Ok(())
        }
        Some(expected) if expected != found => Err(NeuralError::DimensionMismatch {
            expected,
            found,
            entry,
        }),
        Some(_) => Ok(()),
    }
}

fn parse_binary_format(
    bytes: &[u8],
    keep: Option<&BTreeSet<String>>,
) -> Result<FileEntries, NeuralError> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NeuralError::EmbeddingFormat("missing binary header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| NeuralError::EmbeddingFormat("binary header is not ASCII".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NeuralError::EmbeddingFormat("binary header: bad word count".into()))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NeuralError::EmbeddingFormat("binary header: bad dimension".into()))?;

    let mut entries = Vec::new();
    let mut pos = header_end + 1;
    for entry in 0..count {
        let word_end = bytes[pos..]
            .iter()
            .position(|&b| b == b' ')
            .ok_or_else(|| {
                NeuralError::EmbeddingFormat(format!(
                    "binary entry {entry}: missing word delimiter"
                ))
            })?;
        let word = String::from_utf8_lossy(&bytes[pos..pos + word_end])
            .trim_start_matches('\n')
            .to_owned();
        pos += word_end + 1;
        let byte_len = dim * 4;
        if pos + byte_len > bytes.len() {
            return Err(NeuralError::EmbeddingFormat(format!(
                "binary entry {entry}: truncated vector"
            )));
        }
        if keep.map(|k| k.contains(&word)).unwrap_or(true) {
            let values: Vec<f64> = bytes[pos..pos + byte_len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            entries.push((word, values));
        }
        pos += byte_len;
    }
    Ok(FileEntries { dim, entries })
}

fn parse_filtered(
    bytes: &[u8],
    keep: Option<&BTreeSet<String>>,
) -> Result<FileEntries, NeuralError> {
    match parse_text_format(bytes, keep) {
        Ok(parsed) => Ok(parsed),
        Err(text_err) => match parse_binary_format(bytes, keep) {
            Ok(parsed) => Ok(parsed),
            Err(_) => Err(text_err),
        },
    }
}

/// Parses embedding bytes in word2vec text or binary format. The text form
/// is tried first; files that fail strict text parsing fall back to the
/// binary layout described by the `count dim` header.
pub fn parse_embeddings(bytes: &[u8]) -> Result<Vec<(String, Vec<f64>)>, NeuralError> {
    Ok(parse_filtered(bytes, None)?.entries)
}

/// Loads pretrained vectors for the hinted vocabulary. Words absent from
/// the file get seeded uniform rows in [-0.25, 0.25]; `<PAD>` is all zeros.
/// Only file entries for hinted words (or their lowercase forms) are
/// materialized, so large pretrained files stay cheap to load.
pub fn load_embeddings(
    path: &Path,
    vocab_hint: &BTreeSet<String>,
    seed: u64,
) -> Result<EmbeddingMatrix, NeuralError> {
    let bytes = fs::read(path)?;
    let mut keep: BTreeSet<String> = vocab_hint.clone();
    keep.extend(vocab_hint.iter().map(|w| w.to_lowercase()));
    let FileEntries { dim, entries } = parse_filtered(&bytes, Some(&keep))?;
    let by_word: BTreeMap<&str, &Vec<f64>> = entries.iter().map(|(w, v)| (w.as_str(), v)).collect();

    let mut words = vec![PAD_WORD.to_owned(), OOV_WORD.to_owned()];
    words.extend(vocab_hint.iter().cloned());
    let mut vectors = Array2::<f64>::zeros((words.len(), dim));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (row, word) in words.iter().enumerate().skip(1) {
        let found = by_word
            .get(word.as_str())
            .or_else(|| by_word.get(word.to_lowercase().as_str()));
        match found {
            Some(vector) if word != OOV_WORD => {
                for (slot, &value) in vectors.row_mut(row).iter_mut().zip(vector.iter()) {
                    *slot = value;
                }
            }
            _ => {
                for slot in vectors.row_mut(row).iter_mut() {
                    *slot = rng.gen_range(-0.25..=0.25);
                }
            }
        }
    }
    EmbeddingMatrix::from_rows(words, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn hint(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| (*s).to_owned()).collect()
    }

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content).unwrap();
        file
    }

    #[test]
    fn text_file_row_accounting() {
        let file = write_temp(b"alpha 0.1 0.2 0.3\nbeta -0.5 0.5 1.5\n");
        let emb = load_embeddings(file.path(), &hint(&["alpha", "beta"]), 1).unwrap();
        assert_eq!(emb.vocab_size(), 4);
        assert_eq!(emb.dim(), 3);
        assert_eq!(emb.words()[0], PAD_WORD);
        assert_eq!(emb.words()[1], OOV_WORD);
        let alpha = emb.row(emb.index_of("alpha"));
        assert_eq!(alpha.to_vec(), vec![0.1, 0.2, 0.3]);
        assert!(emb.row(emb.pad_index()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_word_gets_bounded_random_row() {
        let file = write_temp(b"alpha 0.1 0.2 0.3\n");
        let emb = load_embeddings(file.path(), &hint(&["alpha", "missing"]), 42).unwrap();
        let row = emb.row(emb.index_of("missing"));
        assert!(row.iter().all(|&v| (-0.25..=0.25).contains(&v)));
        assert!(row.iter().any(|&v| v != 0.0));
        // Seeded: two loads agree.
        let again = load_embeddings(file.path(), &hint(&["alpha", "missing"]), 42).unwrap();
        assert_eq!(emb, again);
    }

    #[test]
    fn header_line_sets_dimension() {
        let mut content = String::from("2 300\n");
        for word in ["alpha", "beta"] {
            content.push_str(word);
            for _ in 0..300 {
                content.push_str(" 0.125");
            }
            content.push('\n');
        }
        let file = write_temp(content.as_bytes());
        let emb = load_embeddings(file.path(), &hint(&["alpha"]), 0).unwrap();
        assert_eq!(emb.dim(), 300);
        assert_eq!(emb.vocab_size(), 3);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let file = write_temp(b"alpha 0.1 0.2 0.3\nbeta 0.1 0.2\n");
        let err = load_embeddings(file.path(), &hint(&["alpha"]), 0).unwrap_err();
        assert!(
            matches!(err, NeuralError::DimensionMismatch { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn binary_format_round_trips() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"2 3\n");
        for (word, values) in [("alpha", [0.5f32, -1.0, 2.0]), ("beta", [0.0, 0.25, -0.25])] {
            bytes.extend_from_slice(word.as_bytes());
            bytes.push(b' ');
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.push(b'\n');
        }
        let file = write_temp(&bytes);
        let emb = load_embeddings(file.path(), &hint(&["alpha", "beta"]), 0).unwrap();
        assert_eq!(
            emb.row(emb.index_of("alpha")).to_vec(),
            vec![0.5, -1.0, 2.0]
        );
        assert_eq!(
            emb.row(emb.index_of("beta")).to_vec(),
            vec![0.0, 0.25, -0.25]
        );
    }

    #[test]
    fn lookup_prefers_exact_then_lowercase_then_oov() {
        let file = write_temp(b"The 1 0\nthe 0 1\nlaw 0.5 0.5\n");
        let emb = load_embeddings(file.path(), &hint(&["The", "the", "law"]), 0).unwrap();
        assert_ne!(emb.index_of("The"), emb.index_of("the"));
        assert_eq!(emb.row(emb.index_of("The")).to_vec(), vec![1.0, 0.0]);
        // "LAW" is not in the vocabulary; its lowercase form is.
        assert_eq!(emb.index_of("LAW"), emb.index_of("law"));
        assert_eq!(emb.index_of("unseen"), emb.oov_index());
    }

    #[test]
    fn build_input_has_exact_length() {
        let file = write_temp(b"it 0.1 0.2\nrained 0.3 0.4\n");
        let emb = load_embeddings(file.path(), &hint(&["it", "rained"]), 0).unwrap();
        let arg1: Vec<String> = vec!["it".into(), "rained".into()];
        let arg2: Vec<String> = vec!["rained".into()];
        let input = build_input(&arg1, &arg2, 60, 61, &emb);
        assert_eq!(input.len(), 121);
    }

    #[test]
    fn build_input_left_pads_empty_argument() {
        let file = write_temp(b"it 0.1 0.2\n");
        let emb = load_embeddings(file.path(), &hint(&["it"]), 0).unwrap();
        let arg2: Vec<String> = vec!["it".into()];
        let input = build_input(&[], &arg2, 60, 61, &emb);
        assert!(input.indices[..60].iter().all(|&i| i == emb.pad_index()));
        assert!(input.indices[60..120].iter().all(|&i| i == emb.pad_index()));
        assert_eq!(input.indices[120], emb.index_of("it"));
    }

    #[test]
    fn build_input_truncates_to_first_tokens() {
        let file = write_temp(b"w0 0.1 0.2\n");
        let emb = load_embeddings(file.path(), &hint(&["w0", "w1"]), 0).unwrap();
        let arg1: Vec<String> = (0..100).map(|i| format!("w{}", i % 2)).collect();
        let input = build_input(&arg1, &[], 60, 61, &emb);
        // First 60 words kept, none padded.
        assert_eq!(input.indices[0], emb.index_of("w0"));
        assert_eq!(input.indices[59], emb.index_of("w1"));
        assert!(input.indices[60..].iter().all(|&i| i == emb.pad_index()));
    }
}
