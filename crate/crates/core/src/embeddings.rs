//! Skip-gram word embeddings with negative sampling, trained from scratch on
//! the encoded corpus.
//!
//! Training follows the canonical recipe: dynamic context windows (the
//! effective window is drawn uniformly from `1..=window` per center word),
//! a unigram^0.75 noise distribution, zero-initialized output vectors, and a
//! linearly decaying learning rate. Input vectors are what gets exported.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::numerics::{add_scaled, cosine_similarity, dot, DenseMatrix};
use crate::{Error, Result};

/// Skip-gram training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to 1e-4 of itself over training.
    pub learning_rate: f64,
    /// Exponent of the unigram noise distribution.
    pub unigram_power: f64,
    /// Words rarer than this are skipped during training (the vocabulary cap
    /// has usually already removed them).
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dimension: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            unigram_power: 0.75,
            min_count: 1,
            seed: 1,
        }
    }
}

/// Input and output (context) vectors for every vocabulary word.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    pub input: DenseMatrix,
    pub output: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, input: DenseMatrix, output: DenseMatrix) -> Result<Self> {
        let v = vocab.len();
        if input.rows() != v || output.rows() != v || input.cols() != output.cols() {
            return Err(Error::ShapeMismatch(format!(
                "vocabulary of {v} words with {}x{} input and {}x{} output tables",
                input.rows(),
                input.cols(),
                output.rows(),
                output.cols()
            )));
        }
        Ok(Self {
            vocab,
            input,
            output,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dimension(&self) -> usize {
        self.input.cols()
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        self.input.row(id as usize)
    }

    /// Word2vec text format: a `V d` header line, then one `word v1 .. vd`
    /// line per word in id order. Floats use shortest round-trip formatting,
    /// so save -> load -> save is byte-stable.
    pub fn save_text<W: Write>(&self, writer: &mut W) -> Result<()> {
        writeln!(writer, "{} {}", self.vocab.len(), self.dimension())?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            write!(writer, "{word}")?;
            for v in self.input.row(i) {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Loads the text format. Output vectors are not part of the format and
    /// come back zeroed; word frequencies are unknown and come back zero.
    pub fn load_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))??;
        let mut parts = header.split_whitespace();
        let v: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad embedding header".into()))?;
        let d: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad embedding header".into()))?;
        let mut words = Vec::with_capacity(v);
        let mut values = Vec::with_capacity(v * d);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let word = fields
                .next()
                .ok_or_else(|| Error::Format("embedding line without word".into()))?;
            words.push(word.to_string());
            let before = values.len();
            for field in fields {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("bad float for word {word:?}")))?;
                values.push(x);
            }
            if values.len() - before != d {
                return Err(Error::Format(format!(
                    "word {word:?} has {} components, expected {d}",
                    values.len() - before
                )));
            }
        }
        if words.len() != v {
            return Err(Error::Format(format!(
                "embedding file declares {v} words but has {}",
                words.len()
            )));
        }
        let frequencies = vec![0; words.len()];
        let vocab = Vocabulary::from_ranked(words, frequencies, v)?;
        let input = DenseMatrix::from_flat(v, d, values)?;
        let output = DenseMatrix::zeros(v, d);
        Self::new(vocab, input, output)
    }
}

/// All (center, context) pairs with distance at most `window`, in position
/// order. This is the fixed-window case of pair generation.
pub fn training_pairs_fixed(sentence: &[u32], window: usize) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for i in 0..sentence.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(sentence.len().saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                pairs.push((sentence[i], sentence[j]));
            }
        }
    }
    pairs
}

/// Dynamic-window pair generation: the effective window for each center is
/// drawn uniformly from `1..=window`.
pub fn training_pairs<R: Rng>(sentence: &[u32], window: usize, rng: &mut R) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for i in 0..sentence.len() {
        let effective = rng.random_range(1..=window.max(1));
        let lo = i.saturating_sub(effective);
        let hi = (i + effective).min(sentence.len().saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                pairs.push((sentence[i], sentence[j]));
            }
        }
    }
    pairs
}

/// Noise distribution for negative sampling: `P(w) ∝ freq(w)^power`.
pub fn negative_sampling_distribution(frequencies: &[u64], power: f64) -> Result<Vec<f64>> {
    if frequencies.is_empty() {
        return Err(Error::InvalidInput("empty vocabulary".into()));
    }
    if frequencies.iter().any(|&f| f == 0) {
        return Err(Error::InvalidInput(
            "negative sampling needs frequencies >= 1".into(),
        ));
    }
    let weights: Vec<f64> = frequencies.iter().map(|&f| (f as f64).powf(power)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Samples word ids from a fixed distribution by inverse-CDF lookup.
pub struct NegativeSampler {
    cdf: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(distribution: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(distribution.len());
        let mut acc = 0.0;
        for &p in distribution {
            acc += p;
            cdf.push(acc);
        }
        Self { cdf }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let x: f64 = rng.random();
        match self.cdf.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) | Err(i) => (i.min(self.cdf.len() - 1)) as u32,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss of one training example before any update:
/// `-log σ(u_ctx · v_center) - Σ_n log σ(-u_n · v_center)`.
pub fn sgns_pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = -sigmoid(dot(context, center)).ln();
    for neg in negatives {
        loss -= sigmoid(-dot(neg, center)).ln();
    }
    loss
}

/// One SGD step on a (center, context, negatives) example. Returns the
/// pre-update loss.
pub fn sgns_train_step(
    table: &mut EmbeddingTable,
    center: u32,
    context: u32,
    negatives: &[u32],
    lr: f64,
) -> Result<f64> {
    let v = table.vocab.len() as u32;
    if center >= v || context >= v || negatives.iter().any(|&n| n >= v) {
        return Err(Error::InvalidInput(format!(
            "token id out of range for vocabulary of {v} words"
        )));
    }
    let dim = table.dimension();
    let center_vec: Vec<f64> = table.input.row(center as usize).to_vec();
    let mut center_grad = vec![0.0; dim];
    let mut loss = 0.0;

    {
        let out = table.output.row_mut(context as usize);
        let score = dot(out, &center_vec);
        loss -= sigmoid(score).ln();
        let coeff = sigmoid(score) - 1.0;
        add_scaled(&mut center_grad, out, coeff);
        add_scaled(out, &center_vec, -lr * coeff);
    }
    for &neg in negatives {
        let out = table.output.row_mut(neg as usize);
        let score = dot(out, &center_vec);
        loss -= sigmoid(-score).ln();
        let coeff = sigmoid(score);
        add_scaled(&mut center_grad, out, coeff);
        add_scaled(out, &center_vec, -lr * coeff);
    }
    add_scaled(table.input.row_mut(center as usize), &center_grad, -lr);
    Ok(loss)
}

/// Per-epoch mean pair loss, for convergence checks.
#[derive(Debug, Clone)]
pub struct SgnsTrainReport {
    pub epoch_loss: Vec<f64>,
}

/// Trains skip-gram embeddings over the corpus sentences. Deterministic for a
/// fixed seed (single-threaded by construction).
pub fn train_embeddings(
    corpus: &EncodedCorpus,
    vocab: &Vocabulary,
    config: &SgnsConfig,
) -> Result<(EmbeddingTable, SgnsTrainReport)> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let v = vocab.len();
    for s in &corpus.sentences {
        if s.token_ids.iter().any(|&id| id as usize >= v) {
            return Err(Error::InvalidInput(format!(
                "sentence {}:{} has token ids outside the {v}-word vocabulary",
                s.review_id, s.position
            )));
        }
    }
    let dim = config.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = DenseMatrix::zeros(v, dim);
    for x in input.values_mut() {
        *x = (rng.random::<f64>() - 0.5) / dim as f64;
    }
    let output = DenseMatrix::zeros(v, dim);
    let mut table = EmbeddingTable::new(vocab.clone(), input, output)?;

    let distribution = negative_sampling_distribution(vocab.frequencies(), config.unigram_power)?;
    let sampler = NegativeSampler::new(&distribution);

    let trainable = |id: u32| -> bool { vocab.frequency(id) >= config.min_count };
    let total_tokens: usize = corpus.sentences.iter().map(|s| s.token_ids.len()).sum();
    let planned = (config.epochs * total_tokens).max(1) as f64;
    let mut processed = 0usize;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for &si in &order {
            let tokens = &corpus.sentences[si].token_ids;
            let mut negatives = Vec::with_capacity(config.negatives);
            for i in 0..tokens.len() {
                processed += 1;
                let center = tokens[i];
                if !trainable(center) {
                    continue;
                }
                let effective = rng.random_range(1..=config.window.max(1));
                let lo = i.saturating_sub(effective);
                let hi = (i + effective).min(tokens.len() - 1);
                for j in lo..=hi {
                    if j == i || !trainable(tokens[j]) {
                        continue;
                    }
                    let context = tokens[j];
                    negatives.clear();
                    while negatives.len() < config.negatives {
                        let n = sampler.sample(&mut rng);
                        if n != context {
                            negatives.push(n);
                        }
                    }
                    let decay = 1.0 - processed as f64 / planned;
                    let lr = config.learning_rate * decay.max(1e-4);
                    loss_sum += sgns_train_step(&mut table, center, context, &negatives, lr)?;
                    pair_count += 1;
                }
            }
        }
        epoch_loss.push(if pair_count == 0 {
            0.0
        } else {
            loss_sum / pair_count as f64
        });
    }
    Ok((table, SgnsTrainReport { epoch_loss }))
}

/// The `k` vocabulary words closest to `query` by cosine, in descending
/// order with ties broken by word id. Zero-norm table rows rank last.
pub fn nearest_words(table: &EmbeddingTable, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    if k > table.vocab.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds vocabulary size {}",
            table.vocab.len()
        )));
    }
    if crate::numerics::norm(query) == 0.0 {
        return Err(Error::InvalidInput("zero-norm input".into()));
    }
    let mut scored: Vec<(usize, f64)> = (0..table.vocab.len())
        .map(|i| {
            let sim = cosine_similarity(table.input.row(i), query).unwrap_or(f64::NEG_INFINITY);
            (i, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, sim)| (table.vocab.word(i as u32).to_string(), sim))
        .collect())
}

/// Uniformly-weighted bag-of-words embedding: the mean of the word vectors.
pub fn bow_mean(embeddings: &DenseMatrix, tokens: &[u32]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty sentence".into()));
    }
    let mut out = vec![0.0; embeddings.cols()];
    for &t in tokens {
        add_scaled(&mut out, embeddings.row(t as usize), 1.0);
    }
    crate::numerics::scale(&mut out, 1.0 / tokens.len() as f64);
    Ok(out)
}

/// Unnormalized bag-of-words embedding: the sum of the word vectors.
pub fn bow_sum(embeddings: &DenseMatrix, tokens: &[u32]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty sentence".into()));
    }
    let mut out = vec![0.0; embeddings.cols()];
    for &t in tokens {
        add_scaled(&mut out, embeddings.row(t as usize), 1.0);
    }
    Ok(out)
}
