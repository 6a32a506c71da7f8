//! Deterministic synthetic corpus standing in for real image features and
//! pretrained text embeddings.
//!
//! Every topic owns one anchor word and one fixed sentence (anchor followed
//! by filler words). An image showing topic `t` has a third of its locations
//! carrying a topic prototype vector plus noise; the rest carry a faint copy
//! of it. The image→sentence mapping is therefore learnable from features.

use std::path::Path;

use serde::Serialize;

use super::corpus::{build_record, sentence_key, write_corpus_entries, CorpusEntry, StoryRecord};
use super::embedding::{EmbeddingTable, NULL_TOKEN, SOS_TOKEN};
use super::features::{write_features, FeatureGrid};
use crate::error::{Error, Result};
use crate::numerics::RealArray;
use crate::rng::SplitMix64;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const FEATURES_DIR: &str = "features";
pub const WORD_EMB_FILE: &str = "words.emb";
pub const SENT_EMB_FILE: &str = "sentences.emb";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub stories: usize,
    pub vocab_size: usize,
    pub topics: usize,
    pub images_per_story: usize,
    pub sentence_len: usize,
    pub locations: usize,
    pub raw_dim: usize,
    pub embed_dim: usize,
    pub noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            stories: 20,
            vocab_size: 60,
            topics: 8,
            images_per_story: 5,
            sentence_len: 15,
            locations: 9,
            raw_dim: 32,
            embed_dim: 64,
            noise: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub entries: Vec<CorpusEntry>,
    pub features: Vec<Vec<FeatureGrid>>,
    /// Topic id of every image, story-major.
    pub topics: Vec<Vec<usize>>,
    pub word_table: EmbeddingTable,
    pub sentence_table: EmbeddingTable,
}

const RESERVED: usize = 2;

pub fn gen_toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    if cfg.topics == 0 || cfg.vocab_size < cfg.topics + RESERVED {
        return Err(Error::Config(format!(
            "vocab_size {} must be at least topics {} + {RESERVED} reserved tokens",
            cfg.vocab_size, cfg.topics
        )));
    }
    if [cfg.images_per_story, cfg.sentence_len, cfg.locations, cfg.raw_dim, cfg.embed_dim].contains(&0) {
        return Err(Error::Config("toy corpus dimensions must be positive".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be finite and non-negative", cfg.noise)));
    }
    let mut rng = SplitMix64::new(cfg.seed);

    let mut vocab: Vec<String> = vec![NULL_TOKEN.into(), SOS_TOKEN.into()];
    vocab.extend((0..cfg.vocab_size - RESERVED).map(|i| format!("w{i:03}")));
    let word_vectors: Vec<Vec<f64>> = (0..vocab.len()).map(|_| unit_vector(&mut rng, cfg.embed_dim)).collect();

    let fillers = RESERVED + cfg.topics..vocab.len();
    let max_len = cfg.sentence_len.min(8);
    let min_len = cfg.sentence_len.min(3);
    let topic_sentences: Vec<Vec<usize>> = (0..cfg.topics)
        .map(|t| {
            let len = if fillers.is_empty() { 1 } else { min_len + rng.below(max_len - min_len + 1) };
            let mut s = vec![RESERVED + t];
            s.extend((1..len).map(|_| fillers.start + rng.below(fillers.len())));
            s
        })
        .collect();

    let scale = 3.0 / (cfg.raw_dim as f64).sqrt();
    let prototypes: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| (0..cfg.raw_dim).map(|_| rng.gaussian() * scale).collect())
        .collect();

    let mut entries = Vec::with_capacity(cfg.stories);
    let mut features = Vec::with_capacity(cfg.stories);
    let mut topics = Vec::with_capacity(cfg.stories);
    for s in 0..cfg.stories {
        let story_id = format!("s{s:04}");
        let story_topics: Vec<usize> = (0..cfg.images_per_story).map(|_| rng.below(cfg.topics)).collect();
        let grids = story_topics
            .iter()
            .map(|&t| image_grid(&mut rng, &prototypes[t], cfg))
            .collect::<Result<Vec<_>>>()?;
        entries.push(CorpusEntry {
            feature_file: format!("{FEATURES_DIR}/{story_id}.feat"),
            story_id,
            sentences: story_topics
                .iter()
                .map(|&t| topic_sentences[t].iter().map(|&w| vocab[w].clone()).collect())
                .collect(),
        });
        features.push(grids);
        topics.push(story_topics);
    }

    let sentence_tokens: Vec<String> = topic_sentences
        .iter()
        .map(|s| sentence_key(&s.iter().map(|&w| vocab[w].clone()).collect::<Vec<_>>()))
        .collect();
    let sentence_data: Vec<f64> = topic_sentences
        .iter()
        .flat_map(|s| {
            let mut mean = vec![0.0; cfg.embed_dim];
            for &w in s {
                for (m, v) in mean.iter_mut().zip(&word_vectors[w]) {
                    *m += v;
                }
            }
            mean.into_iter().map(move |m| m / s.len() as f64)
        })
        .collect();

    // Tables hold what the EMB1 files will hold, so in-memory and on-disk
    // corpora behave identically.
    let word_table = EmbeddingTable::new(vocab, f32_matrix(word_vectors.concat(), cfg.embed_dim)?)?;
    let sentence_table = EmbeddingTable::new(sentence_tokens, f32_matrix(sentence_data, cfg.embed_dim)?)?;

    Ok(ToyCorpus {
        entries,
        features,
        topics,
        word_table,
        sentence_table,
    })
}

fn f32_matrix(data: Vec<f64>, cols: usize) -> Result<RealArray> {
    let rows = data.len() / cols;
    RealArray::matrix(rows, cols, data.into_iter().map(|v| v as f32 as f64).collect())
}

fn unit_vector(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn image_grid(rng: &mut SplitMix64, prototype: &[f64], cfg: &ToyConfig) -> Result<FeatureGrid> {
    let salient = (cfg.locations / 3).max(1);
    let mut order: Vec<usize> = (0..cfg.locations).collect();
    rng.shuffle(&mut order);
    let mut strength = vec![0.15; cfg.locations];
    for &j in &order[..salient] {
        strength[j] = 1.0;
    }
    let mut data = Vec::with_capacity(cfg.locations * cfg.raw_dim);
    for s in strength {
        for &p in prototype {
            data.push((s * p + cfg.noise * rng.gaussian()) as f32 as f64);
        }
    }
    FeatureGrid::new(RealArray::matrix(cfg.locations, cfg.raw_dim, data)?)
}

impl ToyCorpus {
    /// Decoder-ready records, built without touching the filesystem.
    pub fn records(&self, sentence_len: usize) -> Result<Vec<StoryRecord>> {
        self.entries
            .iter()
            .zip(&self.features)
            .filter_map(|(e, f)| {
                build_record(e, f.clone(), &self.word_table, Some(&self.sentence_table), sentence_len).transpose()
            })
            .collect()
    }

    /// Writes `corpus.jsonl`, `features/*.feat`, `words.emb` and
    /// `sentences.emb` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join(FEATURES_DIR))?;
        write_corpus_entries(&dir.join(CORPUS_FILE), &self.entries)?;
        for (entry, grids) in self.entries.iter().zip(&self.features) {
            write_features(&dir.join(&entry.feature_file), grids)?;
        }
        self.word_table.write(&dir.join(WORD_EMB_FILE))?;
        self.sentence_table.write(&dir.join(SENT_EMB_FILE))?;
        Ok(())
    }
}
