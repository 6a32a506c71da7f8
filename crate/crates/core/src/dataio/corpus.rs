use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingTable;
use super::features::{read_features, FeatureGrid};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub story_id: String,
    pub feature_file: String,
    pub sentences: Vec<Vec<String>>,
}

/// Story length `N` and padded sentence length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusShape {
    pub images_per_story: usize,
    pub sentence_len: usize,
}

/// A story ready for the decoder: features, padded token ids and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryRecord {
    pub story_id: String,
    pub features: Vec<FeatureGrid>,
    /// Cleaned surface tokens, unpadded.
    pub words: Vec<Vec<String>>,
    /// Word ids padded with `<NULL>` to exactly `L`.
    pub tokens: Vec<Vec<usize>>,
    /// 1 where `tokens` holds an in-vocabulary word.
    pub masks: Vec<Vec<u8>>,
    /// Row in the sentence table, when the sentence is listed there.
    pub sentence_ids: Vec<Option<usize>>,
}

impl StoryRecord {
    pub fn images(&self) -> usize {
        self.features.len()
    }

    pub fn masked_tokens(&self) -> usize {
        self.masks.iter().flatten().map(|&m| m as usize).sum()
    }

    /// Position of the `<NULL>` that ends sentence `t`: the first padding
    /// slot, when the sentence is shorter than `L` and has a real word.
    pub fn stop_position(&self, t: usize) -> Option<usize> {
        let len = self.words[t].len();
        (len < self.tokens[t].len() && self.masks[t].contains(&1)).then_some(len)
    }

    /// Whether position `k` of sentence `t` is scored by the loss.
    pub fn is_target(&self, t: usize, k: usize, learn_stop: bool) -> bool {
        self.masks[t][k] == 1 || (learn_stop && self.stop_position(t) == Some(k))
    }
}

/// Lowercases and strips punctuation; tokens left empty are dropped.
pub fn clean_tokens(raw: &[String]) -> Vec<String> {
    raw.iter()
        .map(|t| t.chars().filter(|c| !c.is_ascii_punctuation()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn sentence_key(words: &[String]) -> String {
    words.join(" ")
}

pub fn read_corpus_entries(path: &Path) -> Result<Vec<CorpusEntry>> {
    let file = std::fs::File::open(path)?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_corpus_entries(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a corpus and its feature files.
///
/// Feature paths resolve against `features_dir`, or against the corpus
/// file's directory when none is given. Stories containing a sentence longer
/// than `L` are skipped. Out-of-vocabulary words become `<NULL>` with mask 0.
pub fn load_corpus(
    path: &Path,
    features_dir: Option<&Path>,
    word_table: &EmbeddingTable,
    sentence_table: Option<&EmbeddingTable>,
    shape: CorpusShape,
) -> Result<Vec<StoryRecord>> {
    let base: PathBuf = match features_dir {
        Some(d) => d.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let entries = read_corpus_entries(path)?;
    let mut records = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let line = i + 1;
        let malformed = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if entry.sentences.len() != shape.images_per_story {
            return Err(malformed(format!(
                "story {:?} has {} sentences, expected {}",
                entry.story_id,
                entry.sentences.len(),
                shape.images_per_story
            )));
        }
        let features = read_features(&base.join(&entry.feature_file))?;
        if features.len() != shape.images_per_story {
            return Err(malformed(format!(
                "feature file {:?} holds {} images, expected {}",
                entry.feature_file,
                features.len(),
                shape.images_per_story
            )));
        }
        match build_record(entry, features, word_table, sentence_table, shape.sentence_len)? {
            Some(r) => records.push(r),
            None => info!("skipping story {:?}: sentence longer than {}", entry.story_id, shape.sentence_len),
        }
    }
    Ok(records)
}

/// Builds a record from an entry whose features are already loaded; `None`
/// when a sentence exceeds `sentence_len`.
pub fn build_record(
    entry: &CorpusEntry,
    features: Vec<FeatureGrid>,
    word_table: &EmbeddingTable,
    sentence_table: Option<&EmbeddingTable>,
    sentence_len: usize,
) -> Result<Option<StoryRecord>> {
    let null = word_table.null_id()?;
    let mut words = Vec::new();
    let mut tokens = Vec::new();
    let mut masks = Vec::new();
    let mut sentence_ids = Vec::new();
    for raw in &entry.sentences {
        let cleaned = clean_tokens(raw);
        if cleaned.len() > sentence_len {
            return Ok(None);
        }
        let (ids, mask) = pad_sentence(&cleaned, word_table, null, sentence_len);
        sentence_ids.push(sentence_table.and_then(|t| t.id(&sentence_key(&cleaned))));
        words.push(cleaned);
        tokens.push(ids);
        masks.push(mask);
    }
    Ok(Some(StoryRecord {
        story_id: entry.story_id.clone(),
        features,
        words,
        tokens,
        masks,
        sentence_ids,
    }))
}

fn pad_sentence(words: &[String], table: &EmbeddingTable, null: usize, len: usize) -> (Vec<usize>, Vec<u8>) {
    let mut ids = vec![null; len];
    let mut mask = vec![0u8; len];
    for (k, w) in words.iter().enumerate() {
        if let Some(id) = table.id(w).filter(|&id| id != null) {
            ids[k] = id;
            mask[k] = 1;
        }
    }
    (ids, mask)
}

/// Mean of the word vectors of the non-`<NULL>` tokens.
pub fn sentence_vector_of(tokens: &[usize], word_table: &EmbeddingTable) -> Result<RealArray> {
    let null = word_table.null_id()?;
    let dim = word_table.dim();
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for &t in tokens.iter().filter(|&&t| t != null) {
        if t >= word_table.len() {
            return Err(Error::TokenOutOfRange {
                id: t,
                size: word_table.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(word_table.vector(t)) {
            *a += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySentence);
    }
    let inv = 1.0 / count as f64;
    Ok(RealArray::vector(acc.into_iter().map(|a| a * inv).collect()))
}
