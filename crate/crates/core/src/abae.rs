//! Attention-based aspect autoencoder.
//!
//! A sentence is encoded as an attention-weighted bag of word vectors `z`,
//! classified into a distribution `p` over `K` aspects, and reconstructed as
//! the convex combination `r` of the aspect embedding rows. Training pushes
//! `r` closer (in cosine) to `z` than to sampled negative sentences by a
//! margin, with an orthogonality penalty keeping the aspect rows diverse.
//! Word embeddings are frozen throughout; the gradients for the attention
//! matrix, classifier, and aspect embeddings are derived by hand and verified
//! against finite differences in the test suite.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::KMeansModel;
use crate::corpus::EncodedCorpus;
use crate::embeddings::{bow_sum, EmbeddingTable};
use crate::numerics::{add_scaled, dot, norm, softmax, AdamState, DenseMatrix};
use crate::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AbaeConfig {
    /// Number of aspects `K`.
    pub aspects: usize,
    pub batch_size: usize,
    /// Negative sentences sampled per training sentence.
    pub negative_samples: usize,
    /// Weight of the orthogonality penalty.
    pub ortho_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for AbaeConfig {
    fn default() -> Self {
        Self {
            aspects: 30,
            batch_size: 50,
            negative_samples: 20,
            ortho_weight: 0.1,
            learning_rate: 0.001,
            epochs: 10,
            margin: 1.0,
            seed: 1,
        }
    }
}

impl AbaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aspects < 2 {
            return Err(Error::InvalidInput("need at least 2 aspects".into()));
        }
        if self.negative_samples < 1 {
            return Err(Error::InvalidInput(
                "need at least 1 negative sample".into(),
            ));
        }
        if self.ortho_weight < 0.0 {
            return Err(Error::InvalidInput(
                "orthogonality weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A probability distribution over the `K` aspects.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectDistribution {
    probs: Vec<f64>,
}

impl AspectDistribution {
    /// Validates the simplex constraints: non-negative entries summing to 1
    /// within 1e-6.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty aspect distribution".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "aspect distribution has negative or non-finite entries".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "aspect distribution sums to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Model parameters. The word embedding matrix is frozen: training never
/// writes to it, and it is excluded from the checkpoint format (the
/// vocabulary hash binds a checkpoint to the embedding table instead).
#[derive(Debug, Clone)]
pub struct AbaeModel {
    word_embeddings: DenseMatrix,
    pub attention: DenseMatrix,
    pub classifier_weight: DenseMatrix,
    pub classifier_bias: Vec<f64>,
    pub aspect_embeddings: DenseMatrix,
    vocab_hash: [u8; 32],
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ABAE";
const CHECKPOINT_VERSION: u32 = 1;

impl AbaeModel {
    pub fn from_parts(
        word_embeddings: DenseMatrix,
        attention: DenseMatrix,
        classifier_weight: DenseMatrix,
        classifier_bias: Vec<f64>,
        aspect_embeddings: DenseMatrix,
        vocab_hash: [u8; 32],
    ) -> Result<Self> {
        let d = word_embeddings.cols();
        let k = aspect_embeddings.rows();
        if attention.rows() != d || attention.cols() != d {
            return Err(Error::ShapeMismatch(format!(
                "attention is {}x{}, embeddings have dimension {d}",
                attention.rows(),
                attention.cols()
            )));
        }
        if classifier_weight.rows() != k
            || classifier_weight.cols() != d
            || classifier_bias.len() != k
            || aspect_embeddings.cols() != d
        {
            return Err(Error::ShapeMismatch(format!(
                "classifier {}x{} + bias {} with {k} aspect rows of width {}",
                classifier_weight.rows(),
                classifier_weight.cols(),
                classifier_bias.len(),
                aspect_embeddings.cols()
            )));
        }
        Ok(Self {
            word_embeddings,
            attention,
            classifier_weight,
            classifier_bias,
            aspect_embeddings,
            vocab_hash,
        })
    }

    pub fn aspects(&self) -> usize {
        self.aspect_embeddings.rows()
    }

    pub fn dimension(&self) -> usize {
        self.word_embeddings.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.word_embeddings.rows()
    }

    pub fn vocab_hash(&self) -> [u8; 32] {
        self.vocab_hash
    }

    pub fn word_embeddings(&self) -> &DenseMatrix {
        &self.word_embeddings
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty sentence".into()));
        }
        let v = self.vocab_size() as u32;
        if tokens.iter().any(|&t| t >= v) {
            return Err(Error::InvalidInput(format!(
                "token id out of range for vocabulary of {v} words"
            )));
        }
        Ok(())
    }

    /// Attention over token positions: `a = softmax(e_i . (M y))` where `y`
    /// is the unweighted sum of the word vectors.
    pub fn attention_weights(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let y = bow_sum(&self.word_embeddings, tokens)?;
        let my = self.attention.matvec(&y)?;
        let logits: Vec<f64> = tokens
            .iter()
            .map(|&t| dot(self.word_embeddings.row(t as usize), &my))
            .collect();
        softmax(&logits)
    }

    /// Attention-weighted sentence embedding `z`.
    pub fn sentence_embedding(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let weights = self.attention_weights(tokens)?;
        let mut z = vec![0.0; self.dimension()];
        for (&t, &a) in tokens.iter().zip(&weights) {
            add_scaled(&mut z, self.word_embeddings.row(t as usize), a);
        }
        Ok(z)
    }

    /// `p = softmax(W z + b)`.
    pub fn aspect_probabilities(&self, z: &[f64]) -> Result<AspectDistribution> {
        let mut logits = self.classifier_weight.matvec(z)?;
        add_scaled(&mut logits, &self.classifier_bias, 1.0);
        AspectDistribution::new(softmax(&logits)?)
    }

    /// Reconstruction `r`: the convex combination of aspect rows under `p`.
    pub fn reconstruct(&self, p: &AspectDistribution) -> Result<Vec<f64>> {
        self.aspect_embeddings.tr_matvec(p.probs())
    }

    /// Aspect distribution and sentence embedding for one sentence.
    pub fn infer_sentence(&self, tokens: &[u32]) -> Result<(AspectDistribution, Vec<f64>)> {
        let z = self.sentence_embedding(tokens)?;
        let p = self.aspect_probabilities(&z)?;
        Ok((p, z))
    }

    /// Contrastive max-margin loss of one sentence against sampled negative
    /// sentence embeddings.
    pub fn hinge_loss(&self, tokens: &[u32], negatives: &[Vec<f64>], margin: f64) -> Result<f64> {
        let (p, z) = self.infer_sentence(tokens)?;
        let r = self.reconstruct(&p)?;
        hinge_terms(&r, &z, negatives, margin)
    }

    /// Mean sentence hinge loss over the batch plus the weighted
    /// orthogonality penalty. `negatives[i]` holds the bag-of-words
    /// embeddings of sentence `i`'s negative samples.
    pub fn batch_objective(
        &self,
        batch: &[&[u32]],
        negatives: &[Vec<Vec<f64>>],
        ortho_weight: f64,
        margin: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if batch.len() != negatives.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sentences with {} negative sets",
                batch.len(),
                negatives.len()
            )));
        }
        let mut total = 0.0;
        for (tokens, negs) in batch.iter().zip(negatives) {
            total += self.hinge_loss(tokens, negs, margin)?;
        }
        Ok(total / batch.len() as f64
            + ortho_weight * orthogonality_penalty(&self.aspect_embeddings)?)
    }

    /// Gradients of [`Self::batch_objective`] for the trainable tensors. The
    /// word embeddings receive no gradient. Returns the objective value too.
    pub fn backward(
        &self,
        batch: &[&[u32]],
        negatives: &[Vec<Vec<f64>>],
        ortho_weight: f64,
        margin: f64,
    ) -> Result<(f64, AbaeGradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if batch.len() != negatives.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sentences with {} negative sets",
                batch.len(),
                negatives.len()
            )));
        }
        let per_sentence: Vec<Result<(f64, SentenceGrads)>> = batch
            .par_iter()
            .zip(negatives.par_iter())
            .map(|(tokens, negs)| self.backward_sentence(tokens, negs, margin))
            .collect();

        let d = self.dimension();
        let k = self.aspects();
        let mut grads = AbaeGradients {
            attention: DenseMatrix::zeros(d, d),
            classifier_weight: DenseMatrix::zeros(k, d),
            classifier_bias: vec![0.0; k],
            aspect_embeddings: DenseMatrix::zeros(k, d),
        };
        let scale = 1.0 / batch.len() as f64;
        let mut objective = 0.0;
        // Accumulation stays in batch order so gradient sums are
        // deterministic regardless of how the map above was scheduled.
        for entry in per_sentence {
            let (loss, sg) = entry?;
            objective += scale * loss;
            grads
                .attention
                .add_outer(&sg.attention_delta, &sg.bow, scale)?;
            grads
                .classifier_weight
                .add_outer(&sg.class_delta, &sg.sentence, scale)?;
            add_scaled(&mut grads.classifier_bias, &sg.class_delta, scale);
            grads
                .aspect_embeddings
                .add_outer(&sg.probs, &sg.recon_delta, scale)?;
        }
        if ortho_weight > 0.0 {
            objective += ortho_weight * orthogonality_penalty(&self.aspect_embeddings)?;
            let penalty_grad = orthogonality_penalty_gradient(&self.aspect_embeddings)?;
            grads
                .aspect_embeddings
                .add_scaled_matrix(&penalty_grad, ortho_weight)?;
        }
        Ok((objective, grads))
    }

    /// Forward + hand-derived backward for one sentence. Returns the hinge
    /// loss and the rank-one factors of each tensor gradient.
    fn backward_sentence(
        &self,
        tokens: &[u32],
        negatives: &[Vec<f64>],
        margin: f64,
    ) -> Result<(f64, SentenceGrads)> {
        self.check_tokens(tokens)?;
        let d = self.dimension();

        let y = bow_sum(&self.word_embeddings, tokens)?;
        let my = self.attention.matvec(&y)?;
        let logits: Vec<f64> = tokens
            .iter()
            .map(|&t| dot(self.word_embeddings.row(t as usize), &my))
            .collect();
        let att = softmax(&logits)?;
        let mut z = vec![0.0; d];
        for (&t, &a) in tokens.iter().zip(&att) {
            add_scaled(&mut z, self.word_embeddings.row(t as usize), a);
        }
        let mut class_logits = self.classifier_weight.matvec(&z)?;
        add_scaled(&mut class_logits, &self.classifier_bias, 1.0);
        let probs = softmax(&class_logits)?;
        let recon = self.aspect_embeddings.tr_matvec(&probs)?;

        let nr = norm(&recon);
        let nz = norm(&z);
        if nr == 0.0 || nz == 0.0 {
            return Err(Error::InvalidInput("zero-norm input".into()));
        }
        let recon_unit: Vec<f64> = recon.iter().map(|x| x / nr).collect();
        let z_unit: Vec<f64> = z.iter().map(|x| x / nz).collect();
        let cos_rz = dot(&recon_unit, &z_unit);

        let mut loss = 0.0;
        let mut recon_delta = vec![0.0; d];
        let mut z_delta_direct = vec![0.0; d];
        for neg in negatives {
            let ng = norm(neg);
            if ng == 0.0 {
                return Err(Error::InvalidInput("zero-norm input".into()));
            }
            let neg_unit: Vec<f64> = neg.iter().map(|x| x / ng).collect();
            let cos_rg = dot(&recon_unit, &neg_unit);
            let term = margin - cos_rz + cos_rg;
            if term <= 0.0 {
                continue;
            }
            loss += term;
            // d cos(r, x)/dr = (x_unit - cos * r_unit) / |r|
            for i in 0..d {
                recon_delta[i] += (-(z_unit[i] - cos_rz * recon_unit[i])
                    + (neg_unit[i] - cos_rg * recon_unit[i]))
                    / nr;
                z_delta_direct[i] += -(recon_unit[i] - cos_rz * z_unit[i]) / nz;
            }
        }

        // p = softmax(q): dq = p o (dp - p.dp)
        let dp = self.aspect_embeddings.matvec(&recon_delta)?;
        let p_dot = dot(&probs, &dp);
        let class_delta: Vec<f64> = probs
            .iter()
            .zip(&dp)
            .map(|(&pk, &dpk)| pk * (dpk - p_dot))
            .collect();

        let mut z_delta = self.classifier_weight.tr_matvec(&class_delta)?;
        add_scaled(&mut z_delta, &z_delta_direct, 1.0);

        let att_delta: Vec<f64> = tokens
            .iter()
            .map(|&t| dot(self.word_embeddings.row(t as usize), &z_delta))
            .collect();
        let a_dot = dot(&att, &att_delta);
        let logit_delta: Vec<f64> = att
            .iter()
            .zip(&att_delta)
            .map(|(&ai, &dai)| ai * (dai - a_dot))
            .collect();
        let mut attention_delta = vec![0.0; d];
        for (&t, &dl) in tokens.iter().zip(&logit_delta) {
            add_scaled(
                &mut attention_delta,
                self.word_embeddings.row(t as usize),
                dl,
            );
        }

        Ok((
            loss,
            SentenceGrads {
                attention_delta,
                bow: y,
                class_delta,
                sentence: z,
                probs,
                recon_delta,
            },
        ))
    }

    /// Checkpoint layout: `ABAE` magic, version, K/d/V header, the
    /// vocabulary hash, then M, W, b, T as little-endian f32 arrays.
    pub fn save_checkpoint<W: Write>(&self, writer: &mut W) -> Result<()> {
        writer.write_all(CHECKPOINT_MAGIC)?;
        writer.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        writer.write_all(&(self.aspects() as u32).to_le_bytes())?;
        writer.write_all(&(self.dimension() as u32).to_le_bytes())?;
        writer.write_all(&(self.vocab_size() as u32).to_le_bytes())?;
        writer.write_all(&self.vocab_hash)?;
        for tensor in [
            self.attention.values(),
            self.classifier_weight.values(),
            self.classifier_bias.as_slice(),
            self.aspect_embeddings.values(),
        ] {
            for &x in tensor {
                writer.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint and rebinds it to `table`'s word embeddings. Fails
    /// if the stored vocabulary hash does not match the table.
    pub fn load_checkpoint<R: Read>(reader: &mut R, table: &EmbeddingTable) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an aspect-model checkpoint".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let version = read_u32(reader)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let k = read_u32(reader)? as usize;
        let d = read_u32(reader)? as usize;
        let v = read_u32(reader)? as usize;
        let mut vocab_hash = [0u8; 32];
        reader.read_exact(&mut vocab_hash)?;
        if vocab_hash != table.vocab().hash() {
            return Err(Error::InvalidInput(
                "checkpoint vocabulary hash does not match the embedding table".into(),
            ));
        }
        if v != table.vocab().len() || d != table.dimension() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint V={v} d={d} vs table V={} d={}",
                table.vocab().len(),
                table.dimension()
            )));
        }
        let read_tensor = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut buf = [0u8; 4];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                out.push(f32::from_le_bytes(buf) as f64);
            }
            Ok(out)
        };
        let attention = DenseMatrix::from_flat(d, d, read_tensor(reader, d * d)?)?;
        let classifier_weight = DenseMatrix::from_flat(k, d, read_tensor(reader, k * d)?)?;
        let classifier_bias = read_tensor(reader, k)?;
        let aspect_embeddings = DenseMatrix::from_flat(k, d, read_tensor(reader, k * d)?)?;
        Self::from_parts(
            table.input.clone(),
            attention,
            classifier_weight,
            classifier_bias,
            aspect_embeddings,
            vocab_hash,
        )
    }
}

/// Gradients for the trainable tensors.
#[derive(Debug, Clone)]
pub struct AbaeGradients {
    pub attention: DenseMatrix,
    pub classifier_weight: DenseMatrix,
    pub classifier_bias: Vec<f64>,
    pub aspect_embeddings: DenseMatrix,
}

/// Rank-one gradient factors of one sentence.
struct SentenceGrads {
    attention_delta: Vec<f64>,
    bow: Vec<f64>,
    class_delta: Vec<f64>,
    sentence: Vec<f64>,
    probs: Vec<f64>,
    recon_delta: Vec<f64>,
}

/// `sum_n max(0, margin - cos(r, z) + cos(r, g_n))` over negative embeddings.
pub fn hinge_terms(
    recon: &[f64],
    target: &[f64],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<f64> {
    let cos_rz = crate::numerics::cosine_similarity(recon, target)?;
    let mut loss = 0.0;
    for neg in negatives {
        let cos_rg = crate::numerics::cosine_similarity(recon, neg)?;
        loss += (margin - cos_rz + cos_rg).max(0.0);
    }
    Ok(loss)
}

/// `||U U^T - I||_F` where `U` is the aspect matrix with unit-normalized
/// rows. Zero at orthonormal rows.
pub fn orthogonality_penalty(aspects: &DenseMatrix) -> Result<f64> {
    let unit = normalized_rows(aspects)?;
    let k = unit.rows();
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let gram = dot(unit.row(i), unit.row(j)) - if i == j { 1.0 } else { 0.0 };
            sq += gram * gram;
        }
    }
    Ok(sq.sqrt())
}

/// Gradient of [`orthogonality_penalty`] with respect to the aspect rows.
/// Returns zeros at the (non-differentiable) minimum where the penalty is 0.
pub fn orthogonality_penalty_gradient(aspects: &DenseMatrix) -> Result<DenseMatrix> {
    let unit = normalized_rows(aspects)?;
    let k = unit.rows();
    let d = unit.cols();
    let penalty = orthogonality_penalty(aspects)?;
    let mut grad = DenseMatrix::zeros(k, d);
    if penalty < 1e-12 {
        return Ok(grad);
    }
    // S = (U U^T - I) / penalty; the row gradient before the normalization
    // chain is v_k = 2 (S U)_k, then projected onto the unit sphere tangent.
    for row in 0..k {
        let mut v = vec![0.0; d];
        for j in 0..k {
            let s =
                (dot(unit.row(row), unit.row(j)) - if row == j { 1.0 } else { 0.0 }) / penalty;
            add_scaled(&mut v, unit.row(j), 2.0 * s);
        }
        let u = unit.row(row);
        let v_dot_u = dot(&v, u);
        let row_norm = norm(aspects.row(row));
        let g = grad.row_mut(row);
        for i in 0..d {
            g[i] = (v[i] - v_dot_u * u[i]) / row_norm;
        }
    }
    Ok(grad)
}

fn normalized_rows(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut unit = m.clone();
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n == 0.0 {
            return Err(Error::InvalidInput(format!("aspect row {i} has zero norm")));
        }
        crate::numerics::scale(unit.row_mut(i), 1.0 / n);
    }
    Ok(unit)
}

/// Per-epoch mean objective, for convergence checks.
#[derive(Debug, Clone)]
pub struct AbaeTrainReport {
    pub epoch_objective: Vec<f64>,
}

/// Trains the autoencoder on the given training sentences.
///
/// Aspect rows start from the k-means centroids over word embeddings, the
/// attention matrix from identity plus small noise, and the classifier from
/// small uniform noise. Negatives are resampled uniformly (with replacement)
/// from the training pool for every batch. Deterministic for a fixed seed.
pub fn train_abae(
    corpus: &EncodedCorpus,
    train_indices: &[usize],
    table: &EmbeddingTable,
    config: &AbaeConfig,
    init: &KMeansModel,
) -> Result<(AbaeModel, AbaeTrainReport)> {
    config.validate()?;
    if train_indices.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if init.clusters() != config.aspects {
        return Err(Error::InvalidInput(format!(
            "k-means init has {} centroids, config wants {} aspects",
            init.clusters(),
            config.aspects
        )));
    }
    let d = table.dimension();
    if init.dimension() != d {
        return Err(Error::ShapeMismatch(format!(
            "centroid dimension {} vs embedding dimension {d}",
            init.dimension()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut attention = DenseMatrix::identity(d);
    for x in attention.values_mut() {
        *x += (rng.random::<f64>() - 0.5) * 0.02;
    }
    let mut classifier_weight = DenseMatrix::zeros(config.aspects, d);
    for x in classifier_weight.values_mut() {
        *x = (rng.random::<f64>() - 0.5) * 0.1;
    }
    let classifier_bias: Vec<f64> = (0..config.aspects)
        .map(|_| (rng.random::<f64>() - 0.5) * 0.1)
        .collect();
    let mut model = AbaeModel::from_parts(
        table.input.clone(),
        attention,
        classifier_weight,
        classifier_bias,
        init.centroids().clone(),
        table.vocab().hash(),
    )?;

    // The negative pool: frozen bag-of-words sums of every training sentence.
    let pool: Vec<Vec<f64>> = train_indices
        .iter()
        .map(|&i| bow_sum(&model.word_embeddings, &corpus.sentences[i].token_ids))
        .collect::<Result<Vec<_>>>()?;

    let mut adam_attention = AdamState::new(d * d).with_learning_rate(config.learning_rate);
    let mut adam_weight =
        AdamState::new(config.aspects * d).with_learning_rate(config.learning_rate);
    let mut adam_bias = AdamState::new(config.aspects).with_learning_rate(config.learning_rate);
    let mut adam_aspects =
        AdamState::new(config.aspects * d).with_learning_rate(config.learning_rate);

    let mut order: Vec<usize> = (0..train_indices.len()).collect();
    let mut epoch_objective = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut objective_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[u32]> = chunk
                .iter()
                .map(|&i| corpus.sentences[train_indices[i]].token_ids.as_slice())
                .collect();
            let negatives: Vec<Vec<Vec<f64>>> = (0..batch.len())
                .map(|_| {
                    (0..config.negative_samples)
                        .map(|_| pool[rng.random_range(0..pool.len())].clone())
                        .collect()
                })
                .collect();
            let (objective, grads) =
                model.backward(&batch, &negatives, config.ortho_weight, config.margin)?;
            objective_sum += objective;
            batches += 1;
            adam_attention.step(model.attention.values_mut(), grads.attention.values())?;
            adam_weight.step(
                model.classifier_weight.values_mut(),
                grads.classifier_weight.values(),
            )?;
            adam_bias.step(&mut model.classifier_bias, &grads.classifier_bias)?;
            adam_aspects.step(
                model.aspect_embeddings.values_mut(),
                grads.aspect_embeddings.values(),
            )?;
        }
        epoch_objective.push(objective_sum / batches as f64);
    }
    Ok((model, AbaeTrainReport { epoch_objective }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::baselines::{kmeans_fit, KMeansConfig};
    use crate::corpus::{EncodedSentence, Vocabulary};
    use crate::numerics::finite_difference_check;

    fn toy_model(embeddings: Vec<Vec<f64>>, aspects: Vec<Vec<f64>>) -> AbaeModel {
        let e = DenseMatrix::from_rows(&embeddings).unwrap();
        let d = e.cols();
        let t = DenseMatrix::from_rows(&aspects).unwrap();
        let k = t.rows();
        AbaeModel::from_parts(
            e,
            DenseMatrix::identity(d),
            DenseMatrix::zeros(k, d),
            vec![0.0; k],
            t,
            [0u8; 32],
        )
        .unwrap()
    }

    #[test]
    fn attention_single_word_is_one() {
        let model = toy_model(vec![vec![1.0, 2.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(model.attention_weights(&[0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn attention_zero_matrix_is_uniform() {
        let mut model = toy_model(
            vec![vec![2.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        model.attention = DenseMatrix::zeros(2, 2);
        let w = model.attention_weights(&[0, 1, 2]).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_identity_two_word_example() {
        // e0=(2,0), e1=(0,1), M=I: y=(2,1), logits=(4,1).
        let model = toy_model(
            vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let w = model.attention_weights(&[0, 1]).unwrap();
        assert!((w[0] - 0.9526).abs() < 1e-4);
        assert!((w[1] - 0.0474).abs() < 1e-4);

        let z = model.sentence_embedding(&[0, 1]).unwrap();
        assert!((z[0] - 2.0 * w[0]).abs() < 1e-12);
        assert!((z[1] - w[1]).abs() < 1e-12);
    }

    #[test]
    fn sentence_embedding_degenerate_cases() {
        let model = toy_model(
            vec![vec![2.0, 0.5], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        assert_eq!(model.sentence_embedding(&[0]).unwrap(), vec![2.0, 0.5]);
        // Two identical tokens: weights 0.5 + 0.5 recover the embedding.
        let z = model.sentence_embedding(&[0, 0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12);
        assert!((z[1] - 0.5).abs() < 1e-12);
        assert!(model.sentence_embedding(&[]).is_err());
    }

    #[test]
    fn aspect_probabilities_cases() {
        let model = toy_model(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        // W = 0, b = 0: uniform.
        let p = model.aspect_probabilities(&[0.3, 0.4]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);

        let mut saturated = model.clone();
        saturated.classifier_bias = vec![10.0, -10.0];
        let p = saturated.aspect_probabilities(&[0.0, 0.0]).unwrap();
        assert!(p.probs()[0] > 0.999999);

        // Logits (1, 0) through the classifier bias.
        let mut logistic = model.clone();
        logistic.classifier_bias = vec![1.0, 0.0];
        let p = logistic.aspect_probabilities(&[0.0, 0.0]).unwrap();
        assert!((p.probs()[0] - 0.7311).abs() < 1e-4);
        assert!((p.probs()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn reconstruct_is_convex_combination() {
        let model = toy_model(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let one_hot = AspectDistribution::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(model.reconstruct(&one_hot).unwrap(), vec![0.0, 2.0]);

        let uniform = AspectDistribution::uniform(2);
        assert_eq!(model.reconstruct(&uniform).unwrap(), vec![0.5, 1.0]);

        let mixed = AspectDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(model.reconstruct(&mixed).unwrap(), vec![0.25, 1.5]);
    }

    #[test]
    fn hinge_term_values() {
        // r = z, negative orthogonal: 1 - 1 + 0 = 0.
        let r = vec![1.0, 0.0];
        let loss = hinge_terms(&r, &[1.0, 0.0], &[vec![0.0, 1.0]], 1.0).unwrap();
        assert!(loss.abs() < 1e-12);

        // r orthogonal to z, negative orthogonal to r: one margin per negative.
        let loss = hinge_terms(&r, &[0.0, 1.0], &[vec![0.0, 1.0], vec![0.0, -1.0]], 1.0).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);

        // cos(r,z)=0.8, cos(r,n)=0.1 -> 0.3.
        let z = vec![0.8, 0.6];
        let n = vec![0.1, (1.0f64 - 0.01).sqrt()];
        let loss = hinge_terms(&r, &z, &[n], 1.0).unwrap();
        assert!((loss - 0.3).abs() < 1e-9);

        assert!(hinge_terms(&r, &[0.0, 0.0], &[], 1.0).is_err());
    }

    #[test]
    fn penalty_values() {
        let orthonormal = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(orthogonality_penalty(&orthonormal).unwrap() < 1e-12);

        let duplicated = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = orthogonality_penalty(&duplicated).unwrap();
        assert!((p - std::f64::consts::SQRT_2).abs() < 1e-12);

        // Rotating a duplicated row toward orthogonal strictly lowers the
        // penalty: theta = 30 deg vs 60 deg.
        let at = |theta: f64| {
            let rows = vec![vec![1.0, 0.0], vec![theta.cos(), theta.sin()]];
            orthogonality_penalty(&DenseMatrix::from_rows(&rows).unwrap()).unwrap()
        };
        let p30 = at(30f64.to_radians());
        let p60 = at(60f64.to_radians());
        assert!(p60 < p30);

        let zero_row = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(orthogonality_penalty(&zero_row).is_err());
    }

    #[test]
    fn penalty_gradient_zero_at_orthonormal() {
        let orthonormal = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = orthogonality_penalty_gradient(&orthonormal).unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 4;
        let d = 5;
        let mut params: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = DenseMatrix::from_flat(k, d, params.clone()).unwrap();
        let analytic = orthogonality_penalty_gradient(&t).unwrap();
        let coords: Vec<usize> = (0..k * d).collect();
        let report = finite_difference_check(
            |p| {
                let t = DenseMatrix::from_flat(k, d, p.to_vec()).unwrap();
                orthogonality_penalty(&t).unwrap()
            },
            &mut params,
            analytic.values(),
            &coords,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn backward_zero_in_flat_region() {
        // The classifier pins p to aspect 0 whose row equals z, so
        // cos(r, z) = 1 while the negative sits at cos(r, g) = -1: every
        // hinge term is inactive and the whole gradient vanishes.
        let e = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let model = AbaeModel::from_parts(
            e,
            DenseMatrix::identity(2),
            DenseMatrix::from_rows(&[vec![50.0, 0.0], vec![-50.0, 0.0]]).unwrap(),
            vec![0.0, 0.0],
            t,
            [0u8; 32],
        )
        .unwrap();
        let batch: Vec<&[u32]> = vec![&[0]];
        let negatives = vec![vec![vec![-1.0, 0.0]]];
        let (objective, grads) = model.backward(&batch, &negatives, 0.0, 1.0).unwrap();
        assert!(objective.abs() < 1e-9, "objective {objective}");
        assert!(grads.attention.values().iter().all(|&x| x == 0.0));
        assert!(grads.classifier_weight.values().iter().all(|&x| x == 0.0));
        assert!(grads.classifier_bias.iter().all(|&x| x == 0.0));
        assert!(grads.aspect_embeddings.values().iter().all(|&x| x == 0.0));
    }

    /// Packs the four trainable tensors into one flat parameter vector.
    fn flatten_params(model: &AbaeModel) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(model.attention.values());
        out.extend_from_slice(model.classifier_weight.values());
        out.extend_from_slice(&model.classifier_bias);
        out.extend_from_slice(model.aspect_embeddings.values());
        out
    }

    fn unflatten_params(model: &AbaeModel, flat: &[f64]) -> AbaeModel {
        let d = model.dimension();
        let k = model.aspects();
        let mut offset = 0;
        let attention =
            DenseMatrix::from_flat(d, d, flat[offset..offset + d * d].to_vec()).unwrap();
        offset += d * d;
        let weight = DenseMatrix::from_flat(k, d, flat[offset..offset + k * d].to_vec()).unwrap();
        offset += k * d;
        let bias = flat[offset..offset + k].to_vec();
        offset += k;
        let aspects = DenseMatrix::from_flat(k, d, flat[offset..offset + k * d].to_vec()).unwrap();
        AbaeModel::from_parts(
            model.word_embeddings.clone(),
            attention,
            weight,
            bias,
            aspects,
            model.vocab_hash(),
        )
        .unwrap()
    }

    pub(crate) fn random_model(seed: u64, v: usize, d: usize, k: usize) -> AbaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_matrix = |rows: usize, cols: usize| {
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            DenseMatrix::from_flat(rows, cols, values).unwrap()
        };
        let embeddings = rand_matrix(v, d);
        let attention = rand_matrix(d, d);
        let weight = rand_matrix(k, d);
        let aspects = rand_matrix(k, d);
        let bias: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        AbaeModel::from_parts(embeddings, attention, weight, bias, aspects, [0u8; 32]).unwrap()
    }

    /// Finite-difference check of the full batch objective at a random
    /// initialization, over a shuffled coordinate sample. Shared with the
    /// acceptance suite.
    pub(crate) fn check_full_objective_gradient(seed: u64, sample_coords: usize) -> f64 {
        let v = 12;
        let d = 6;
        let k = 4;
        let model = random_model(seed, v, d, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let batch_tokens: Vec<Vec<u32>> = (0..5)
            .map(|_| {
                (0..rng.random_range(2..6))
                    .map(|_| rng.random_range(0..v as u32))
                    .collect()
            })
            .collect();
        let batch: Vec<&[u32]> = batch_tokens.iter().map(|t| t.as_slice()).collect();
        let negatives: Vec<Vec<Vec<f64>>> = (0..batch.len())
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let tokens: Vec<u32> =
                            (0..3).map(|_| rng.random_range(0..v as u32)).collect();
                        bow_sum(&model.word_embeddings, &tokens).unwrap()
                    })
                    .collect()
            })
            .collect();
        let ortho_weight = 0.1;
        let margin = 1.0;

        let (_, grads) = model
            .backward(&batch, &negatives, ortho_weight, margin)
            .unwrap();
        let mut analytic = Vec::new();
        analytic.extend_from_slice(grads.attention.values());
        analytic.extend_from_slice(grads.classifier_weight.values());
        analytic.extend_from_slice(&grads.classifier_bias);
        analytic.extend_from_slice(grads.aspect_embeddings.values());

        let mut params = flatten_params(&model);
        let total = params.len();
        let mut coords: Vec<usize> = (0..total).collect();
        coords.shuffle(&mut rng);
        coords.truncate(sample_coords.min(total));

        let report = finite_difference_check(
            |p| {
                let m = unflatten_params(&model, p);
                m.batch_objective(&batch, &negatives, ortho_weight, margin)
                    .unwrap()
            },
            &mut params,
            &analytic,
            &coords,
            1e-5,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let err = check_full_objective_gradient(21, 60);
        assert!(err < 1e-4, "max rel error {err}");
    }

    fn planted_setup() -> (EncodedCorpus, EmbeddingTable) {
        let topics = 3u32;
        let words_per_topic = 6u32;
        let mut words = Vec::new();
        for t in 0..topics {
            for w in 0..words_per_topic {
                words.push(format!("t{t}w{w}"));
            }
        }
        let v = words.len();
        let vocab = Vocabulary::from_ranked(words, vec![10; v], 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = 8;
        // Word vectors clustered by topic around well-separated anchors.
        let mut input = DenseMatrix::zeros(v, d);
        for t in 0..topics as usize {
            for w in 0..words_per_topic as usize {
                let row = input.row_mut(t * words_per_topic as usize + w);
                row[t] = 1.0;
                for x in row.iter_mut() {
                    *x += rng.random_range(-0.15..0.15);
                }
            }
        }
        let table = EmbeddingTable::new(vocab, input, DenseMatrix::zeros(v, d)).unwrap();
        let mut sentences = Vec::new();
        let mut texts = Vec::new();
        for s in 0..270 {
            let topic = s % topics;
            let base = topic * words_per_topic;
            let ids: Vec<u32> = (0..5)
                .map(|_| base + rng.random_range(0..words_per_topic))
                .collect();
            sentences.push(EncodedSentence {
                token_ids: ids,
                review_id: format!("r{s}"),
                listing_id: "l".into(),
                guest_id: "g".into(),
                position: 0,
            });
            texts.push(String::new());
        }
        (EncodedCorpus::new(sentences, texts).unwrap(), table)
    }

    #[test]
    fn training_recovers_planted_aspects() {
        let (corpus, table) = planted_setup();
        let train: Vec<usize> = (0..corpus.len()).collect();
        let kmeans = kmeans_fit(
            &table.input,
            &KMeansConfig {
                clusters: 3,
                max_iterations: 50,
                tolerance: 1e-6,
                seed: 5,
            },
        )
        .unwrap();
        let config = AbaeConfig {
            aspects: 3,
            batch_size: 30,
            negative_samples: 5,
            ortho_weight: 0.1,
            learning_rate: 0.01,
            epochs: 4,
            margin: 1.0,
            seed: 11,
        };
        let frozen_before = table.input.clone();
        let (model, report) = train_abae(&corpus, &train, &table, &config, &kmeans).unwrap();

        // Frozen embeddings are bit-identical after training.
        assert_eq!(model.word_embeddings().values(), frozen_before.values());

        // Objective does not increase over the first two epochs.
        assert!(
            report.epoch_objective[1] <= report.epoch_objective[0],
            "epoch objectives {:?}",
            report.epoch_objective
        );

        // Majority-topic purity over sentences.
        let topics = 3;
        let mut counts = vec![vec![0usize; topics]; config.aspects];
        for s in &corpus.sentences {
            let (p, _) = model.infer_sentence(&s.token_ids).unwrap();
            let topic = (s.token_ids[0] / 6) as usize;
            counts[p.argmax()][topic] += 1;
        }
        let pure: usize = counts.iter().map(|c| *c.iter().max().unwrap()).sum();
        let purity = pure as f64 / corpus.len() as f64;
        assert!(purity >= 0.8, "purity {purity}");

        // Training should leave the aspect rows more orthogonal than a
        // duplicated-row initialization.
        let trained_penalty = orthogonality_penalty(&model.aspect_embeddings).unwrap();
        let duplicated = DenseMatrix::from_rows(&vec![
            model.aspect_embeddings.row(0).to_vec();
            config.aspects
        ])
        .unwrap();
        let duplicated_penalty = orthogonality_penalty(&duplicated).unwrap();
        assert!(trained_penalty < duplicated_penalty);
    }

    #[test]
    fn training_requires_matching_centroids() {
        let (corpus, table) = planted_setup();
        let train: Vec<usize> = (0..corpus.len()).collect();
        let kmeans = kmeans_fit(
            &table.input,
            &KMeansConfig {
                clusters: 4,
                max_iterations: 10,
                tolerance: 1e-6,
                seed: 5,
            },
        )
        .unwrap();
        let config = AbaeConfig {
            aspects: 3,
            batch_size: 30,
            negative_samples: 2,
            ortho_weight: 0.1,
            learning_rate: 0.01,
            epochs: 1,
            margin: 1.0,
            seed: 11,
        };
        assert!(train_abae(&corpus, &train, &table, &config, &kmeans).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_hash_binding() {
        let (_, table) = planted_setup();
        let model = AbaeModel::from_parts(
            table.input.clone(),
            DenseMatrix::identity(table.dimension()),
            DenseMatrix::zeros(4, table.dimension()),
            vec![0.25, -0.5, 0.125, 1.0],
            {
                let mut t = DenseMatrix::zeros(4, table.dimension());
                for (i, x) in t.values_mut().iter_mut().enumerate() {
                    *x = (i as f64).sin();
                }
                t
            },
            table.vocab().hash(),
        )
        .unwrap();

        let mut bytes = Vec::new();
        model.save_checkpoint(&mut bytes).unwrap();
        let loaded1 = AbaeModel::load_checkpoint(&mut bytes.as_slice(), &table).unwrap();
        let mut bytes2 = Vec::new();
        loaded1.save_checkpoint(&mut bytes2).unwrap();
        let loaded2 = AbaeModel::load_checkpoint(&mut bytes2.as_slice(), &table).unwrap();

        // f32 storage: load -> save -> load is exact.
        assert_eq!(loaded1.attention.values(), loaded2.attention.values());
        assert_eq!(
            loaded1.classifier_weight.values(),
            loaded2.classifier_weight.values()
        );
        assert_eq!(loaded1.classifier_bias, loaded2.classifier_bias);
        assert_eq!(
            loaded1.aspect_embeddings.values(),
            loaded2.aspect_embeddings.values()
        );

        // A table with a different vocabulary must be rejected.
        let other_vocab = Vocabulary::from_ranked(
            (0..table.vocab().len())
                .map(|i| format!("other{i}"))
                .collect(),
            vec![1; table.vocab().len()],
            100,
        )
        .unwrap();
        let other = EmbeddingTable::new(
            other_vocab,
            table.input.clone(),
            DenseMatrix::zeros(table.vocab().len(), table.dimension()),
        )
        .unwrap();
        let err = AbaeModel::load_checkpoint(&mut bytes.as_slice(), &other).unwrap_err();
        assert!(err.to_string().contains("hash"));
    }

    #[test]
    fn inference_outputs_are_simplexes() {
        let model = random_model(17, 10, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let tokens: Vec<u32> = (0..rng.random_range(1..7))
                .map(|_| rng.random_range(0..10))
                .collect();
            let weights = model.attention_weights(&tokens).unwrap();
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(weights.iter().all(|&w| w >= 0.0));
            let (p, z) = model.infer_sentence(&tokens).unwrap();
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(z.iter().all(|x| x.is_finite()));
            // r lies in the convex hull of the aspect rows: its coordinates
            // are bounded by the extremes of each column.
            let r = model.reconstruct(&p).unwrap();
            for j in 0..model.dimension() {
                let col: Vec<f64> = (0..model.aspects())
                    .map(|k| model.aspect_embeddings.get(k, j))
                    .collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(r[j] >= lo - 1e-9 && r[j] <= hi + 1e-9);
            }
        }
    }
}
