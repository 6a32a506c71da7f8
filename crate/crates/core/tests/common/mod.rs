//! Shared test support: small fixtures, a finite-difference checker and a
//! plain-loop reimplementation of the model used as an oracle.

#![allow(dead_code, clippy::needless_range_loop)]

use hstory::dataio::{build_record, gen_toy_corpus, CorpusEntry, EmbeddingTable, FeatureGrid, StoryRecord, ToyConfig};
use hstory::decoder::{ModelDims, ModelParameters};
use hstory::numerics::{Graph, RealArray, Var};
use hstory::recurrent::LstmParams;
use hstory::rng::SplitMix64;

pub fn random_array(rng: &mut SplitMix64, shape: &[usize], scale: f64) -> RealArray {
    let n = shape.iter().product();
    RealArray::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

/// Overwrites every parameter with uniform noise in `±scale`, so that no
/// component (attention in particular) sits in a degenerate regime.
pub fn randomize(params: &mut ModelParameters, rng: &mut SplitMix64, scale: f64) {
    for (t, _) in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-scale, scale));
    }
}

/// A small toy corpus and freshly initialised parameters for it.
pub struct Fixture {
    pub records: Vec<StoryRecord>,
    pub params: ModelParameters,
}

pub fn fixture(toy: ToyConfig, seed: u64) -> Fixture {
    let corpus = gen_toy_corpus(&toy).unwrap();
    let records = corpus.records(toy.sentence_len).unwrap();
    let params = ModelParameters::init(
        ModelDims::new(toy.raw_dim, toy.embed_dim),
        corpus.word_table,
        corpus.sentence_table,
        seed,
    )
    .unwrap();
    Fixture { records, params }
}

pub fn small_toy(seed: u64) -> ToyConfig {
    ToyConfig {
        seed,
        stories: 4,
        vocab_size: 14,
        topics: 4,
        images_per_story: 3,
        sentence_len: 5,
        locations: 3,
        raw_dim: 4,
        embed_dim: 6,
        noise: 0.25,
    }
}

/// Word table with `<NULL>`, `<SOS>` and `extra` plain words, random rows.
pub fn word_table(rng: &mut SplitMix64, extra: usize, dim: usize) -> EmbeddingTable {
    let mut tokens = vec!["<NULL>".to_string(), "<SOS>".to_string()];
    tokens.extend((0..extra).map(|i| format!("w{i}")));
    let n = tokens.len();
    EmbeddingTable::new(tokens, random_array(rng, &[n, dim], 1.0)).unwrap()
}

/// Builds a record straight from word strings and feature grids.
pub fn record(
    sentences: &[&str],
    features: Vec<FeatureGrid>,
    words: &EmbeddingTable,
    sentences_table: Option<&EmbeddingTable>,
    len: usize,
) -> StoryRecord {
    let entry = CorpusEntry {
        story_id: "t".into(),
        feature_file: "t.feat".into(),
        sentences: sentences
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect(),
    };
    build_record(&entry, features, words, sentences_table, len).unwrap().unwrap()
}

pub fn grids(rng: &mut SplitMix64, n: usize, m: usize, raw: usize) -> Vec<FeatureGrid> {
    (0..n)
        .map(|_| FeatureGrid::new(random_array(rng, &[m, raw], 1.0)).unwrap())
        .collect()
}

/// Relative error with an absolute floor.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central-difference check of `f` with respect to every entry of every
/// input. A non-scalar output is reduced with fixed random weights first.
/// Returns the largest relative error.
pub fn fd_check(f: &dyn Fn(&mut Graph<'_>, &[Var]) -> Var, inputs: &[RealArray], seed: u64) -> f64 {
    let h = 1e-5;
    let eval = |xs: &[RealArray], g: &mut Graph<'_>| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = xs.iter().map(|x| g.param_owned(x.clone())).collect();
        let out = f(g, &vars);
        let shape = g.shape(out).to_vec();
        let mut rng = SplitMix64::new(seed);
        let w = g.constant(random_array(&mut rng, &shape, 1.0));
        let weighted = g.mul(out, w).unwrap();
        (g.sum(weighted), vars)
    };
    let mut g = Graph::new();
    let (root, vars) = eval(inputs, &mut g);
    let grads = g.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], x.shape());
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let mut gp = Graph::new();
            let (rp, _) = eval(&plus, &mut gp);
            let mut gm = Graph::new();
            let (rm, _) = eval(&minus, &mut gm);
            let numeric = (gp.value(rp).item() - gm.value(rm).item()) / (2.0 * h);
            worst = worst.max(rel(analytic.data()[j], numeric, 1e-6));
        }
    }
    worst
}

/// Plain-loop model: every quantity recomputed from raw parameter slices.
pub mod oracle {
    use super::*;

    pub fn vm(x: &[f64], w: &RealArray) -> Vec<f64> {
        let (r, c) = (w.rows(), w.cols());
        assert_eq!(x.len(), r);
        let mut out = vec![0.0; c];
        for j in 0..c {
            for i in 0..r {
                out[j] += x[i] * w.data()[i * c + j];
            }
        }
        out
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn lstm(x: &[f64], z: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let d = h.len();
        let mut gates = Vec::new();
        for k in 0..4 {
            let a = vm(x, &p.w_x[k]);
            let b = vm(h, &p.w_h[k]);
            let e = vm(z, &p.w_z[k]);
            let pre: Vec<f64> = (0..d).map(|i| a[i] + b[i] + e[i] + p.b[k].data()[i]).collect();
            gates.push(pre);
        }
        let mut hn = vec![0.0; d];
        let mut cn = vec![0.0; d];
        for i in 0..d {
            let (ig, fg, og, qg) = (sig(gates[0][i]), sig(gates[1][i]), sig(gates[2][i]), gates[3][i].tanh());
            cn[i] = fg * c[i] + ig * qg;
            hn[i] = og * cn[i].tanh();
        }
        (hn, cn)
    }

    pub fn attend(h: &[f64], locs: &[Vec<f64>], p: &hstory::attention::AttentionParams) -> (Vec<f64>, Vec<f64>) {
        let q = vm(h, &p.w_h);
        let a = q.len();
        let scores: Vec<f64> = locs
            .iter()
            .map(|x| {
                let k = vm(x, &p.w_x);
                (0..a)
                    .map(|i| p.w_score.data()[i] * (q[i] + p.b_attn.data()[i] + k[i]).tanh())
                    .sum()
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let alpha: Vec<f64> = e.iter().map(|v| v / total).collect();
        let mut z = vec![0.0; h.len()];
        for (j, x) in locs.iter().enumerate() {
            for i in 0..z.len() {
                z[i] += alpha[j] * x[i];
            }
        }
        (alpha, z)
    }

    pub struct Projected {
        pub per_image: Vec<Vec<Vec<f64>>>,
        pub means: Vec<Vec<f64>>,
        pub full: Vec<f64>,
    }

    pub fn project(features: &[FeatureGrid], p: &ModelParameters) -> Projected {
        let d = p.hidden();
        let mut per_image = Vec::new();
        let mut means = Vec::new();
        for grid in features {
            let rows: Vec<Vec<f64>> = (0..grid.values.rows()).map(|j| vm(grid.values.row(j), &p.proj_raw)).collect();
            let mut mean = vec![0.0; d];
            for r in &rows {
                for i in 0..d {
                    mean[i] += r[i] / rows.len() as f64;
                }
            }
            per_image.push(rows);
            means.push(mean);
        }
        let mut full = vec![0.0; d];
        for m in &means {
            for i in 0..d {
                full[i] += m[i] / means.len() as f64;
            }
        }
        Projected { per_image, means, full }
    }

    fn affine(x: &[f64], w: &RealArray, b: &RealArray) -> Vec<f64> {
        vm(x, w).iter().zip(b.data()).map(|(a, b)| a + b).collect()
    }

    pub fn gold_vector(record: &StoryRecord, p: &ModelParameters, t: usize) -> Vec<f64> {
        if let Some(id) = record.sentence_ids[t] {
            return p.sentence_table.vector(id).to_vec();
        }
        let ids: Vec<usize> = (0..record.tokens[t].len())
            .filter(|&k| record.masks[t][k] == 1)
            .map(|k| record.tokens[t][k])
            .collect();
        if ids.is_empty() {
            return p.s0.data().to_vec();
        }
        let mut v = vec![0.0; p.hidden()];
        for id in &ids {
            for (a, b) in v.iter_mut().zip(p.word_table.vector(*id)) {
                *a += b / ids.len() as f64;
            }
        }
        v
    }

    /// Sentence-layer hidden states, one per sentence.
    pub fn sentence_states(proj: &Projected, vectors: &[Vec<f64>], p: &ModelParameters) -> Vec<Vec<f64>> {
        let d = p.hidden();
        let mut h = affine(&proj.full, &p.sent_init_w, &p.sent_init_b);
        let mut c = vec![0.0; d];
        let mut out = Vec::new();
        for t in 0..proj.means.len() {
            let x = if t == 0 { p.s0.data().to_vec() } else { vectors[t - 1].clone() };
            (h, c) = lstm(&x, &proj.means[t], &h, &c, &p.s_lstm);
            out.push(h.clone());
        }
        out
    }

    /// Teacher-forced logits for one sentence.
    pub fn word_logits(h_s: &[f64], locs: &[Vec<f64>], mean: &[f64], gold: &[usize], p: &ModelParameters) -> Vec<Vec<f64>> {
        let d = p.hidden();
        let mut h = affine(mean, &p.word_init_w, &p.word_init_b);
        let mut c = vec![0.0; d];
        let mut out = Vec::new();
        for k in 0..gold.len() {
            let (_, z) = attend(&h, locs, &p.attn);
            let x = if k == 0 { h_s.to_vec() } else { p.word_table.vector(gold[k - 1]).to_vec() };
            (h, c) = lstm(&x, &z, &h, &c, &p.w_lstm);
            out.push(affine(&h, &p.out_w, &p.out_b));
        }
        out
    }

    pub fn story_logits(record: &StoryRecord, p: &ModelParameters) -> Vec<Vec<Vec<f64>>> {
        let proj = project(&record.features, p);
        let vectors: Vec<Vec<f64>> = (0..record.images()).map(|t| gold_vector(record, p, t)).collect();
        let states = sentence_states(&proj, &vectors, p);
        (0..record.images())
            .map(|t| word_logits(&states[t], &proj.per_image[t], &proj.means[t], &record.tokens[t], p))
            .collect()
    }

    pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        xs.iter().map(|x| x - lse).collect()
    }

    /// Negative log-likelihood over the scored positions.
    pub fn story_nll(record: &StoryRecord, p: &ModelParameters, learn_stop: bool) -> f64 {
        let logits = story_logits(record, p);
        let mut nll = 0.0;
        for t in 0..record.images() {
            let stop = record.words[t].len();
            let has_real = record.masks[t].contains(&1);
            for k in 0..record.tokens[t].len() {
                let scored = record.masks[t][k] == 1 || (learn_stop && has_real && k == stop);
                if scored {
                    nll -= log_softmax(&logits[t][k])[record.tokens[t][k]];
                }
            }
        }
        nll
    }
}

/// Random model with small random dimensions; `extra` plain words.
pub struct TinyModel {
    pub params: ModelParameters,
    pub grids: Vec<FeatureGrid>,
    pub len: usize,
}

pub fn tiny_model(rng: &mut SplitMix64, images: usize, extra: usize, len: usize) -> TinyModel {
    let hidden = 2 + rng.below(4);
    let raw = 2 + rng.below(4);
    let m = 1 + rng.below(4);
    let words = word_table(rng, extra, hidden);
    let tokens: Vec<String> = (0..images).map(|i| format!("#{i}")).collect();
    let sentences = EmbeddingTable::new(tokens, random_array(rng, &[images, hidden], 1.0)).unwrap();
    let mut params = ModelParameters::init(ModelDims::new(raw, hidden), words, sentences, rng.next_u64()).unwrap();
    randomize(&mut params, rng, 0.8);
    TinyModel {
        params,
        grids: grids(rng, images, m, raw),
        len,
    }
}

/// Checks the attention invariants on one random input.
pub fn attention_trial(rng: &mut SplitMix64) -> Result<(), String> {
    use hstory::attention::{attend, AttentionParams};
    let d = 1 + rng.below(6);
    let m = 1 + rng.below(8);
    let a = 1 + rng.below(4);
    let mut params = AttentionParams::init(rng, d, a);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
    }
    let h = random_array(rng, &[d], 1.0);
    let locs = random_array(rng, &[m, d], 2.0);
    let (alpha, z) = attend(&h, &locs, &params).map_err(|e| e.to_string())?;
    let total: f64 = alpha.data().iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("alpha sums to {total}"));
    }
    if alpha.data().iter().any(|&v| v <= 0.0) {
        return Err("non-positive alpha".into());
    }
    for i in 0..d {
        let col = (0..m).map(|j| locs.data()[j * d + i]);
        let lo = col.clone().fold(f64::INFINITY, f64::min);
        let hi = col.fold(f64::NEG_INFINITY, f64::max);
        if z.data()[i] < lo - 1e-12 || z.data()[i] > hi + 1e-12 {
            return Err(format!("z[{i}] = {} outside [{lo}, {hi}]", z.data()[i]));
        }
    }
    let mut perm: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut perm);
    let rows: Vec<Vec<f64>> = perm.iter().map(|&j| locs.row(j).to_vec()).collect();
    let permuted = RealArray::from_rows(&rows).unwrap();
    let (alpha_p, z_p) = attend(&h, &permuted, &params).map_err(|e| e.to_string())?;
    for (i, &j) in perm.iter().enumerate() {
        if alpha_p.data()[i] != alpha.data()[j] {
            return Err("alpha is not permuted with the locations".into());
        }
    }
    if z_p != z {
        return Err("z changed under permutation".into());
    }
    Ok(())
}

fn logits_of(params: &ModelParameters, grids: &[FeatureGrid], vectors: &[RealArray], tokens: &[Vec<usize>]) -> Vec<Vec<RealArray>> {
    use hstory::decoder::{project_features, sentence_pass, word_logits};
    let bundle = project_features(grids, params).unwrap();
    let states = sentence_pass(&bundle, vectors, params).unwrap();
    (0..grids.len())
        .map(|t| word_logits(&states[t].h, &bundle.per_image[t], &tokens[t], params).unwrap())
        .collect()
}

/// Forward differencing on one random configuration: a perturbed sentence
/// vector may only move later sentences, a perturbed gold word only later
/// positions of its own sentence.
pub fn causality_trial(rng: &mut SplitMix64) -> Result<(), String> {
    let n = 2 + rng.below(3);
    let len = 2 + rng.below(4);
    let extra = 3 + rng.below(4);
    let model = tiny_model(rng, n, extra, len);
    let v = model.params.vocab();
    let d = model.params.hidden();
    let vectors: Vec<RealArray> = (0..n).map(|_| random_array(rng, &[d], 1.0)).collect();
    let tokens: Vec<Vec<usize>> = (0..n).map(|_| (0..len).map(|_| rng.below(v)).collect()).collect();
    let base = logits_of(&model.params, &model.grids, &vectors, &tokens);

    let j = rng.below(n);
    let mut moved = vectors.clone();
    moved[j].data_mut().iter_mut().for_each(|x| *x += rng.uniform(0.1, 1.0));
    let after = logits_of(&model.params, &model.grids, &moved, &tokens);
    for t in 0..n {
        let same = after[t] == base[t];
        if t <= j && !same {
            return Err(format!("sentence vector {j} changed the logits of sentence {t}"));
        }
        if t == j + 1 && same {
            return Err(format!("sentence vector {j} left sentence {t} untouched"));
        }
    }

    let (t, k) = (rng.below(n), rng.below(len));
    let mut swapped = tokens.clone();
    swapped[t][k] = (tokens[t][k] + 1 + rng.below(v - 1)) % v;
    let after = logits_of(&model.params, &model.grids, &vectors, &swapped);
    for s in 0..n {
        for p in 0..len {
            let same = after[s][p] == base[s][p];
            let may_change = s == t && p > k;
            if !may_change && !same {
                return Err(format!("word ({t},{k}) changed logits at ({s},{p})"));
            }
            if s == t && p == k + 1 && same {
                return Err(format!("word ({t},{k}) left position {p} untouched"));
            }
        }
    }
    Ok(())
}

/// Best complete sentence by exhaustive enumeration with the plain-loop
/// model: `(tokens, logprob)`, lexicographically smallest on ties.
pub fn brute_force_sentence(params: &ModelParameters, h_s: &[f64], locs: &[Vec<f64>], mean: &[f64], max_len: usize) -> (Vec<usize>, f64) {
    let null = params.word_table.null_id().unwrap();
    let h0 = oracle::vm(mean, &params.word_init_w)
        .iter()
        .zip(params.word_init_b.data())
        .map(|(a, b)| a + b)
        .collect::<Vec<_>>();
    let c0 = vec![0.0; h0.len()];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0, h0, c0)];
    while let Some((tokens, score, h, c)) = stack.pop() {
        let x = match tokens.last() {
            None => h_s.to_vec(),
            Some(&w) => params.word_table.vector(w).to_vec(),
        };
        let (_, z) = oracle::attend(&h, locs, &params.attn);
        let (h2, c2) = oracle::lstm(&x, &z, &h, &c, &params.w_lstm);
        let logits: Vec<f64> = oracle::vm(&h2, &params.out_w).iter().zip(params.out_b.data()).map(|(a, b)| a + b).collect();
        let logp = oracle::log_softmax(&logits);
        for (w, lp) in logp.iter().enumerate() {
            let mut next = tokens.clone();
            next.push(w);
            let s = score + lp;
            if w == null || next.len() == max_len {
                let better = match &best {
                    None => true,
                    Some((bt, bs)) => s > *bs || (s == *bs && next < *bt),
                };
                if better {
                    best = Some((next, s));
                }
            } else {
                stack.push((next, s, h2.clone(), c2.clone()));
            }
        }
    }
    best.unwrap()
}

fn same_bytes(what: &str, a: &[u8], b: &[u8]) -> Result<(), String> {
    if a == b {
        Ok(())
    } else {
        Err(format!("{what}: rewritten file differs ({} vs {} bytes)", a.len(), b.len()))
    }
}

fn random_token(rng: &mut SplitMix64) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'z', '0', '_', '<', '>', 'é', '字', '-'];
    let len = 1 + rng.below(12);
    (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len())]).collect()
}

/// EMB1 write → read → write on a random table.
pub fn emb_trial(rng: &mut SplitMix64, dir: &std::path::Path) -> Result<(), String> {
    let n = 1 + rng.below(20);
    let dim = 1 + rng.below(8);
    let mut tokens = std::collections::BTreeSet::new();
    while tokens.len() < n {
        tokens.insert(random_token(rng));
    }
    let table = EmbeddingTable::new(tokens.into_iter().collect(), random_array(rng, &[n, dim], 1e3)).unwrap();
    let (a, b) = (dir.join("a.emb"), dir.join("b.emb"));
    table.write(&a).map_err(|e| e.to_string())?;
    let back = EmbeddingTable::read(&a).map_err(|e| e.to_string())?;
    back.write(&b).map_err(|e| e.to_string())?;
    if back.tokens() != table.tokens() {
        return Err("EMB1: tokens changed".into());
    }
    same_bytes("EMB1", &std::fs::read(&a).unwrap(), &std::fs::read(&b).unwrap())
}

/// FEAT1 write → read → write on random grids.
pub fn feat_trial(rng: &mut SplitMix64, dir: &std::path::Path) -> Result<(), String> {
    use hstory::dataio::{read_features, write_features};
    let (n, m, d) = (1 + rng.below(5), 1 + rng.below(6), 1 + rng.below(6));
    let g = grids(rng, n, m, d);
    let (a, b) = (dir.join("a.feat"), dir.join("b.feat"));
    write_features(&a, &g).map_err(|e| e.to_string())?;
    let back = read_features(&a).map_err(|e| e.to_string())?;
    write_features(&b, &back).map_err(|e| e.to_string())?;
    same_bytes("FEAT1", &std::fs::read(&a).unwrap(), &std::fs::read(&b).unwrap())
}

/// CKPT1 write → read → write on random tensors, values compared bit for bit.
pub fn ckpt_trial(rng: &mut SplitMix64, dir: &std::path::Path) -> Result<(), String> {
    use hstory::decoder::Checkpoint;
    let count = 1 + rng.below(6);
    let tensors = (0..count)
        .map(|i| {
            let rank = 1 + rng.below(3);
            let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(4)).collect();
            let mut t = random_array(rng, &shape, 1.0);
            for v in t.data_mut() {
                *v = f64::from_bits(rng.next_u64()).clamp(-f64::MAX, f64::MAX);
                if v.is_nan() {
                    *v = 0.0;
                }
            }
            (format!("t{i}.{}", random_token(rng).replace(|c: char| !c.is_ascii_alphanumeric(), "x")), t)
        })
        .collect();
    let ckpt = Checkpoint { tensors };
    let (a, b) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    ckpt.write(&a).map_err(|e| e.to_string())?;
    let back = Checkpoint::read(&a).map_err(|e| e.to_string())?;
    back.write(&b).map_err(|e| e.to_string())?;
    for ((n1, t1), (n2, t2)) in ckpt.tensors.iter().zip(&back.tensors) {
        let bits = |t: &RealArray| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if n1 != n2 || t1.shape() != t2.shape() || bits(t1) != bits(t2) {
            return Err(format!("CKPT1: tensor {n1} changed"));
        }
    }
    same_bytes("CKPT1", &std::fs::read(&a).unwrap(), &std::fs::read(&b).unwrap())
}

/// Word-decoding problem on the first image of a random tiny model.
pub struct DecodeCase {
    pub params: ModelParameters,
    pub locations: RealArray,
    pub mean: RealArray,
    pub h_s: RealArray,
}

pub fn decode_case(rng: &mut SplitMix64, extra: usize) -> DecodeCase {
    let model = tiny_model(rng, 1, extra, 1);
    let bundle = hstory::decoder::project_features(&model.grids, &model.params).unwrap();
    let d = model.params.hidden();
    let mut params = model.params;
    // Sharper output distributions make early stops and long sentences both likely.
    params.out_w.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    DecodeCase {
        params,
        locations: bundle.per_image[0].clone(),
        mean: bundle.image_means[0].clone(),
        h_s: random_array(rng, &[d], 1.0),
    }
}

/// Width-1 beam search must reproduce greedy decoding token for token.
pub fn beam_one_trial(rng: &mut SplitMix64) -> Result<(), String> {
    let extra = 2 + rng.below(8);
    let case = decode_case(rng, extra);
    let len = 1 + rng.below(8);
    let dec = hstory::inference::WordDecoder::new(&case.params, &case.locations).map_err(|e| e.to_string())?;
    let greedy = dec.greedy(&case.h_s, &case.mean, len).map_err(|e| e.to_string())?;
    let beam = dec.beam_search(&case.h_s, &case.mean, len, 1).map_err(|e| e.to_string())?;
    if greedy.tokens != beam.tokens || greedy.logprob != beam.logprob {
        return Err(format!("greedy {:?} vs beam {:?}", greedy.tokens, beam.tokens));
    }
    Ok(())
}

/// Beam search wide enough to keep every prefix must find the brute-force
/// optimum; `|V| = 4`, `L ≤ 5`.
pub fn exhaustive_beam_trial(rng: &mut SplitMix64, len: usize) -> Result<(), String> {
    let case = decode_case(rng, 2);
    let dec = hstory::inference::WordDecoder::new(&case.params, &case.locations).map_err(|e| e.to_string())?;
    let width = 4usize.pow(len as u32);
    let got = dec.beam_search(&case.h_s, &case.mean, len, width).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = (0..case.locations.rows()).map(|j| case.locations.row(j).to_vec()).collect();
    let (tokens, logprob) = brute_force_sentence(&case.params, case.h_s.data(), &rows, case.mean.data(), len);
    if got.tokens != tokens || (got.logprob - logprob).abs() > 1e-9 {
        return Err(format!("beam {:?} ({}) vs brute force {:?} ({})", got.tokens, got.logprob, tokens, logprob));
    }
    Ok(())
}

/// Brute-force metric definitions on plain lists.
pub mod metric_oracle {
    fn grams(s: &[String], n: usize) -> Vec<Vec<String>> {
        if s.len() < n {
            return Vec::new();
        }
        (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
    }

    fn count(list: &[Vec<String>], g: &[String]) -> usize {
        list.iter().filter(|x| x.as_slice() == g).count()
    }

    fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for g in list {
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }

    pub fn bleu(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
        let mut log_p = 0.0;
        for n in 1..=4 {
            let (mut hit, mut all) = (0, 0);
            for (c, rs) in cands.iter().zip(refs) {
                let cg = grams(c, n);
                all += cg.len();
                for g in distinct(&cg) {
                    let best = rs.iter().map(|r| count(&grams(r, n), &g)).max().unwrap();
                    hit += count(&cg, &g).min(best);
                }
            }
            if all == 0 {
                continue;
            }
            if hit == 0 {
                return 0.0;
            }
            log_p += (hit as f64 / all as f64).ln() / 4.0;
        }
        let c: usize = cands.iter().map(Vec::len).sum();
        let mut r = 0;
        for (cand, rs) in cands.iter().zip(refs) {
            let mut best = rs[0].len();
            for x in rs {
                let (d, bd) = (x.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
                if d < bd || (d == bd && x.len() < best) {
                    best = x.len();
                }
            }
            r += best;
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        100.0 * bp * log_p.exp()
    }

    pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
        let items = cands.len() as f64;
        let mut total = 0.0;
        for (c, rs) in cands.iter().zip(refs) {
            let mut per_order = Vec::new();
            for n in 1..=4 {
                let idf = |g: &[String]| {
                    let df = refs.iter().filter(|rs| rs.iter().any(|r| count(&grams(r, n), g) > 0)).count();
                    items.ln() - (df.max(1) as f64).ln()
                };
                let vector = |s: &[String]| -> Vec<(Vec<String>, f64)> {
                    let gs = grams(s, n);
                    distinct(&gs)
                        .into_iter()
                        .map(|g| {
                            let w = count(&gs, &g) as f64 / gs.len() as f64 * idf(&g);
                            (g, w)
                        })
                        .collect()
                };
                let cv = vector(c);
                let mut sims = Vec::new();
                for r in rs {
                    let (cg, rg) = (grams(c, n), grams(r, n));
                    if cg.is_empty() && rg.is_empty() {
                        continue;
                    }
                    let same = cg.len() == rg.len() && distinct(&cg).iter().all(|g| count(&cg, g) == count(&rg, g));
                    if same {
                        sims.push(1.0);
                        continue;
                    }
                    let rv = vector(r);
                    let dot: f64 = cv
                        .iter()
                        .map(|(g, w)| w * rv.iter().find(|(h, _)| h == g).map_or(0.0, |(_, v)| *v))
                        .sum();
                    let na = cv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                    let nb = rv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                    sims.push(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) });
                }
                if !sims.is_empty() {
                    per_order.push(sims.iter().sum::<f64>() / sims.len() as f64);
                }
            }
            if !per_order.is_empty() {
                total += per_order.iter().sum::<f64>() / per_order.len() as f64;
            }
        }
        10.0 * total / items
    }

    pub fn words(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    /// The three-item corpus used by the oracle comparisons.
    pub fn hand_corpus() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
        let cands = vec![
            words("the family went to the beach and played in the sand"),
            words("we had a great time at the park today"),
            words("the dog ran"),
        ];
        let refs = vec![
            vec![
                words("the family went to the beach to play in the sand"),
                words("a family trip to the beach"),
            ],
            vec![words("we had a great day at the park"), words("the park was great fun today")],
            vec![words("the dog ran fast"), words("a dog ran away"), words("the cat sat")],
        ];
        (cands, refs)
    }
}

/// Runs the `hstory` binary; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_hstory"))
        .args(args)
        .env("HSTORY_LOG", "error")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn run_ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = run_cli(args);
    assert_eq!(code, 0, "hstory {args:?} failed: {stderr}");
    stdout
}

/// A small config file so CLI runs finish in well under a second.
pub fn small_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{
  "model": {"hidden": 8, "locations": 3, "raw_dim": 4, "images_per_story": 3,
            "sentence_len": 8, "epochs": 3, "batch_size": 4, "dropout_p": 0.3},
  "toy": {"stories": 6, "vocab_size": 16, "topics": 4}
}"#,
    )
    .unwrap();
    path
}

/// gen-toy, train and generate with `jobs` workers; returns the loss log,
/// the checkpoint bytes and the generated JSON lines.
pub fn pipeline(dir: &std::path::Path, jobs: usize, beam: usize) -> (String, Vec<u8>, String) {
    let cfg = small_config(dir);
    let cfg = cfg.to_str().unwrap();
    let data = dir.join("data");
    let model = dir.join(format!("model{jobs}"));
    let gen = dir.join(format!("gen{jobs}.jsonl"));
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    let jobs = jobs.to_string();
    let beam = beam.to_string();
    run_ok(&["--config", cfg, "gen-toy", "--out", &s(&data)]);
    let corpus = s(&data.join(hstory::dataio::CORPUS_FILE));
    let words = s(&data.join(hstory::dataio::WORD_EMB_FILE));
    let sents = s(&data.join(hstory::dataio::SENT_EMB_FILE));
    run_ok(&[
        "--config", cfg, "--jobs", &jobs, "train", "--corpus", &corpus, "--word-emb", &words, "--sent-emb", &sents,
        "--out", &s(&model),
    ]);
    let ckpt = s(&model.join("model.ckpt"));
    run_ok(&[
        "--config", cfg, "--jobs", &jobs, "generate", "--corpus", &corpus, "--word-emb", &words, "--ckpt", &ckpt,
        "--beam", &beam, "--out", &s(&gen),
    ]);
    (
        std::fs::read_to_string(model.join("loss.csv")).unwrap(),
        std::fs::read(model.join("model.ckpt")).unwrap(),
        std::fs::read_to_string(gen).unwrap(),
    )
}
