//! Baseline aspect models: k-means over embedding space and LDA with
//! collapsed Gibbs sampling. Both expose the same sentence-level aspect
//! surface as the autoencoder so downstream stages can swap methods.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abae::AspectDistribution;
use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// k-means hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iterations: usize,
    /// Lloyd iterations stop once the largest centroid shift drops below
    /// this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            clusters: 30,
            max_iterations: 100,
            tolerance: 1e-6,
            seed: 1,
        }
    }
}

/// Fitted centroids plus the per-iteration inertia trace.
#[derive(Debug, Clone)]
pub struct KMeansModel {
    centroids: DenseMatrix,
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeansModel {
    pub fn new(centroids: DenseMatrix) -> Self {
        Self {
            centroids,
            inertia_history: Vec::new(),
        }
    }

    pub fn clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dimension(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &DenseMatrix {
        &self.centroids
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        self.centroids.row(k)
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest id.
    pub fn assign(&self, point: &[f64]) -> Result<(usize, f64)> {
        if point.len() != self.dimension() {
            return Err(Error::ShapeMismatch(format!(
                "point dimension {} vs centroid dimension {}",
                point.len(),
                self.dimension()
            )));
        }
        let mut best = 0usize;
        let mut best_sq = squared_distance(point, self.centroids.row(0));
        for k in 1..self.clusters() {
            let d = squared_distance(point, self.centroids.row(k));
            if d < best_sq {
                best_sq = d;
                best = k;
            }
        }
        Ok((best, best_sq.sqrt()))
    }

    /// Text format: a `K d` header, then one centroid row per line.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        writeln!(writer, "{} {}", self.clusters(), self.dimension())?;
        for k in 0..self.clusters() {
            let row = self.centroids.row(k);
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    write!(writer, " ")?;
                }
                write!(writer, "{x}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty k-means file".into()))??;
        let mut parts = header.split_whitespace();
        let k: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad k-means header".into()))?;
        let d: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad k-means header".into()))?;
        let mut values = Vec::with_capacity(k * d);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            for field in line.split(' ') {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::Format("bad centroid value".into()))?;
                values.push(x);
            }
        }
        Ok(Self::new(DenseMatrix::from_flat(k, d, values)?))
    }
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// with the point farthest from its assigned centroid.
pub fn kmeans_fit(points: &DenseMatrix, config: &KMeansConfig) -> Result<KMeansModel> {
    let n = points.rows();
    let k = config.clusters;
    let d = points.cols();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one cluster".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} points for {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // k-means++ seeding.
    let mut centroids = DenseMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist_sq: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist_sq.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist_sq.iter().enumerate() {
                x -= w;
                if x <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points): fall back to a
            // deterministic sweep.
            c.min(n - 1)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for i in 0..n {
            let nd = squared_distance(points.row(i), centroids.row(c));
            if nd < dist_sq[i] {
                dist_sq[i] = nd;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut inertia_history = Vec::new();
    for _ in 0..config.max_iterations {
        // Assignment step (ties to the lowest centroid id).
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let p = points.row(i);
                let mut best = 0usize;
                let mut best_sq = squared_distance(p, centroids.row(0));
                for c in 1..k {
                    let dsq = squared_distance(p, centroids.row(c));
                    if dsq < best_sq {
                        best_sq = dsq;
                        best = c;
                    }
                }
                (best, best_sq)
            })
            .collect();
        let mut best_sq: Vec<f64> = Vec::with_capacity(n);
        for (i, (c, dsq)) in assigned.into_iter().enumerate() {
            assignment[i] = c;
            best_sq.push(dsq);
        }

        // Re-seed empty clusters with the farthest point.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (far, _) = best_sq
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            counts[assignment[far]] -= 1;
            assignment[far] = c;
            counts[c] = 1;
            centroids.row_mut(c).copy_from_slice(points.row(far));
            best_sq[far] = 0.0;
        }

        inertia_history.push(best_sq.iter().sum());

        // Update step.
        let mut sums = DenseMatrix::zeros(k, d);
        for i in 0..n {
            let row = sums.row_mut(assignment[i]);
            for (s, &x) in row.iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let count = counts[c] as f64;
            let new_row: Vec<f64> = sums.row(c).iter().map(|s| s / count).collect();
            shift = shift.max(squared_distance(&new_row, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new_row);
        }
        if shift < config.tolerance {
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        inertia_history,
    })
}

/// LDA hyperparameters. `alpha`/`beta` default to `1/K` when unset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub topics: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: usize,
    /// Gibbs sweeps used when inferring held-out sentences.
    pub infer_iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 30,
            alpha: None,
            beta: None,
            iterations: 200,
            infer_iterations: 25,
            seed: 1,
        }
    }
}

impl LdaConfig {
    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.topics as f64)
    }

    pub fn resolved_beta(&self) -> f64 {
        self.beta.unwrap_or(1.0 / self.topics as f64)
    }
}

/// Collapsed Gibbs state: topic-word counts, per-document topic counts, and
/// the current token-topic assignments.
#[derive(Debug, Clone)]
pub struct LdaModel {
    topics: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    topic_word: Vec<Vec<u64>>,
    topic_totals: Vec<u64>,
    doc_topic: Vec<Vec<u64>>,
    assignments: Vec<Vec<usize>>,
    documents: Vec<Vec<u32>>,
}

/// Unnormalized collapsed-Gibbs conditional for one word:
/// `(n_dk + alpha) * (n_kw + beta) / (n_k + V * beta)` per topic.
pub fn gibbs_conditional(
    doc_topic: &[u64],
    word_topic: &[u64],
    topic_totals: &[u64],
    alpha: f64,
    beta: f64,
    vocab_size: usize,
) -> Vec<f64> {
    let vb = vocab_size as f64 * beta;
    let mut weights = Vec::with_capacity(doc_topic.len());
    for k in 0..doc_topic.len() {
        let w = (doc_topic[k] as f64 + alpha) * (word_topic[k] as f64 + beta)
            / (topic_totals[k] as f64 + vb);
        weights.push(w);
    }
    weights
}

fn sample_from_weights<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Fits LDA by collapsed Gibbs sampling over the documents (sentences).
/// Empty documents are filtered out.
pub fn lda_fit(documents: &[Vec<u32>], vocab_size: usize, config: &LdaConfig) -> Result<LdaModel> {
    let docs: Vec<Vec<u32>> = documents
        .iter()
        .filter(|d| !d.is_empty())
        .cloned()
        .collect();
    if docs.is_empty() {
        return Err(Error::InvalidInput("all documents are empty".into()));
    }
    let k = config.topics;
    if k < 1 {
        return Err(Error::InvalidInput("need at least one topic".into()));
    }
    for d in &docs {
        if d.iter().any(|&w| w as usize >= vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id out of range for vocabulary of {vocab_size} words"
            )));
        }
    }
    let alpha = config.resolved_alpha();
    let beta = config.resolved_beta();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut topic_word = vec![vec![0u64; vocab_size]; k];
    let mut topic_totals = vec![0u64; k];
    let mut doc_topic = vec![vec![0u64; k]; docs.len()];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let mut zs = Vec::with_capacity(doc.len());
        for &w in doc {
            let z = rng.random_range(0..k);
            topic_word[z][w as usize] += 1;
            topic_totals[z] += 1;
            doc_topic[d][z] += 1;
            zs.push(z);
        }
        assignments.push(zs);
    }

    for _ in 0..config.iterations {
        for d in 0..docs.len() {
            for (i, &w) in docs[d].iter().enumerate() {
                let w = w as usize;
                let old = assignments[d][i];
                topic_word[old][w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[d][old] -= 1;

                let word_counts: Vec<u64> = (0..k).map(|t| topic_word[t][w]).collect();
                let weights = gibbs_conditional(
                    &doc_topic[d],
                    &word_counts,
                    &topic_totals,
                    alpha,
                    beta,
                    vocab_size,
                );
                let new = sample_from_weights(&weights, &mut rng);

                topic_word[new][w] += 1;
                topic_totals[new] += 1;
                doc_topic[d][new] += 1;
                assignments[d][i] = new;
            }
        }
    }

    Ok(LdaModel {
        topics: k,
        vocab_size,
        alpha,
        beta,
        topic_word,
        topic_totals,
        doc_topic,
        assignments,
        documents: docs,
    })
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn doc_topic_counts(&self) -> &[Vec<u64>] {
        &self.doc_topic
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Smoothed topic-word probability `phi_{k,w}`.
    pub fn phi(&self, topic: usize, word: u32) -> f64 {
        (self.topic_word[topic][word as usize] as f64 + self.beta)
            / (self.topic_totals[topic] as f64 + self.vocab_size as f64 * self.beta)
    }

    /// Count invariants: per-document topic counts sum to the document
    /// length, and per-topic word counts match the topic totals.
    pub fn counts_consistent(&self) -> bool {
        for (d, doc) in self.documents.iter().enumerate() {
            let sum: u64 = self.doc_topic[d].iter().sum();
            if sum != doc.len() as u64 {
                return false;
            }
        }
        for k in 0..self.topics {
            let sum: u64 = self.topic_word[k].iter().sum();
            if sum != self.topic_totals[k] {
                return false;
            }
        }
        let tokens: u64 = self.documents.iter().map(|d| d.len() as u64).sum();
        self.topic_totals.iter().sum::<u64>() == tokens
    }

    /// Held-out inference: Gibbs sweeps over the sentence with frozen
    /// topic-word counts, returning smoothed document-topic proportions.
    pub fn infer(
        &self,
        tokens: &[u32],
        iterations: usize,
        seed: u64,
    ) -> Result<AspectDistribution> {
        let observed: Vec<u32> = tokens
            .iter()
            .copied()
            .filter(|&w| (w as usize) < self.vocab_size)
            .collect();
        if observed.is_empty() {
            return Err(Error::InvalidInput("no observed tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.topics;
        let mut doc_topic = vec![0u64; k];
        let mut zs = Vec::with_capacity(observed.len());
        for &w in &observed {
            let word_counts: Vec<u64> = (0..k).map(|t| self.topic_word[t][w as usize]).collect();
            let weights = gibbs_conditional(
                &doc_topic,
                &word_counts,
                &self.topic_totals,
                self.alpha,
                self.beta,
                self.vocab_size,
            );
            let z = sample_from_weights(&weights, &mut rng);
            doc_topic[z] += 1;
            zs.push(z);
        }
        for _ in 0..iterations {
            for (i, &w) in observed.iter().enumerate() {
                let old = zs[i];
                doc_topic[old] -= 1;
                let word_counts: Vec<u64> =
                    (0..k).map(|t| self.topic_word[t][w as usize]).collect();
                let weights = gibbs_conditional(
                    &doc_topic,
                    &word_counts,
                    &self.topic_totals,
                    self.alpha,
                    self.beta,
                    self.vocab_size,
                );
                let z = sample_from_weights(&weights, &mut rng);
                doc_topic[z] += 1;
                zs[i] = z;
            }
        }
        let denom = observed.len() as f64 + k as f64 * self.alpha;
        let probs: Vec<f64> = doc_topic
            .iter()
            .map(|&c| (c as f64 + self.alpha) / denom)
            .collect();
        AspectDistribution::new(probs)
    }

    /// The `n` highest-phi words of a topic; ties go to the lower word id.
    pub fn top_words(&self, topic: usize, n: usize) -> Result<Vec<u32>> {
        if topic >= self.topics {
            return Err(Error::InvalidInput(format!(
                "topic {topic} out of range for {} topics",
                self.topics
            )));
        }
        let mut ids: Vec<u32> = (0..self.vocab_size as u32).collect();
        ids.sort_by(|&a, &b| {
            self.topic_word[topic][b as usize]
                .cmp(&self.topic_word[topic][a as usize])
                .then(a.cmp(&b))
        });
        ids.truncate(n.min(self.vocab_size));
        Ok(ids)
    }

    /// Text format: a header with K/V/alpha/beta, topic totals, then one
    /// row of word counts per topic.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        writeln!(
            writer,
            "{} {} {} {}",
            self.topics, self.vocab_size, self.alpha, self.beta
        )?;
        for (j, t) in self.topic_totals.iter().enumerate() {
            if j > 0 {
                write!(writer, " ")?;
            }
            write!(writer, "{t}")?;
        }
        writeln!(writer)?;
        for k in 0..self.topics {
            for (j, c) in self.topic_word[k].iter().enumerate() {
                if j > 0 {
                    write!(writer, " ")?;
                }
                write!(writer, "{c}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Loads the persisted counts. Training-time document state is not part
    /// of the format; the loaded model supports inference and top words.
    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty LDA file".into()))??;
        let mut parts = header.split_whitespace();
        let mut next_field = || {
            parts
                .next()
                .ok_or_else(|| Error::Format("bad LDA header".into()))
        };
        let topics: usize = next_field()?
            .parse()
            .map_err(|_| Error::Format("bad LDA header".into()))?;
        let vocab_size: usize = next_field()?
            .parse()
            .map_err(|_| Error::Format("bad LDA header".into()))?;
        let alpha: f64 = next_field()?
            .parse()
            .map_err(|_| Error::Format("bad LDA header".into()))?;
        let beta: f64 = next_field()?
            .parse()
            .map_err(|_| Error::Format("bad LDA header".into()))?;
        let totals_line = lines
            .next()
            .ok_or_else(|| Error::Format("LDA file missing topic totals".into()))??;
        let topic_totals: Vec<u64> = totals_line
            .split(' ')
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::Format("bad topic total".into()))
            })
            .collect::<Result<_>>()?;
        if topic_totals.len() != topics {
            return Err(Error::Format("topic totals length mismatch".into()));
        }
        let mut topic_word = Vec::with_capacity(topics);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: Vec<u64> = line
                .split(' ')
                .map(|f| {
                    f.parse()
                        .map_err(|_| Error::Format("bad word count".into()))
                })
                .collect::<Result<_>>()?;
            if row.len() != vocab_size {
                return Err(Error::Format("word count row length mismatch".into()));
            }
            topic_word.push(row);
        }
        if topic_word.len() != topics {
            return Err(Error::Format("topic row count mismatch".into()));
        }
        Ok(Self {
            topics,
            vocab_size,
            alpha,
            beta,
            topic_word,
            topic_totals,
            doc_topic: Vec::new(),
            assignments: Vec::new(),
            documents: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_each_point_its_own_centroid() {
        let points =
            DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let config = KMeansConfig {
            clusters: 3,
            max_iterations: 20,
            tolerance: 1e-9,
            seed: 2,
        };
        let model = kmeans_fit(&points, &config).unwrap();
        assert!(model.inertia_history.last().unwrap() < &1e-12);
        for i in 0..3 {
            let (_, dist) = model.assign(points.row(i)).unwrap();
            assert!(dist < 1e-9);
        }
    }

    /// Brute force over every 2-partition of the points.
    fn brute_force_two_means(points: &[f64]) -> (f64, f64) {
        let n = points.len();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for mask in 1..(1u32 << n) - 1 {
            let (mut a, mut b): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
            for (i, &p) in points.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    a.push(p);
                } else {
                    b.push(p);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let sse = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            };
            let total = sse(&a) + sse(&b);
            if total < best.0 {
                best = (total, mean(&a), mean(&b));
            }
        }
        let (_, x, y) = best;
        if x < y {
            (x, y)
        } else {
            (y, x)
        }
    }

    #[test]
    fn kmeans_matches_brute_force_on_line() {
        let raw = [0.0, 1.0, 10.0, 11.0];
        let (lo, hi) = brute_force_two_means(&raw);
        assert_eq!((lo, hi), (0.5, 10.5));

        let points =
            DenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        for seed in 0..5 {
            let config = KMeansConfig {
                clusters: 2,
                max_iterations: 50,
                tolerance: 1e-9,
                seed,
            };
            let model = kmeans_fit(&points, &config).unwrap();
            let mut got = [model.centroid(0)[0], model.centroid(1)[0]];
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((got[0] - lo).abs() < 1e-9 && (got[1] - hi).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_inertia_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let points = DenseMatrix::from_rows(&rows).unwrap();
        let config = KMeansConfig {
            clusters: 5,
            max_iterations: 40,
            tolerance: 0.0,
            seed: 3,
        };
        let model = kmeans_fit(&points, &config).unwrap();
        for w in model.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia rose: {w:?}");
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let points = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        let config = KMeansConfig {
            clusters: 1,
            max_iterations: 10,
            tolerance: 1e-9,
            seed: 1,
        };
        let model = kmeans_fit(&points, &config).unwrap();
        assert_eq!(model.centroid(0), &[2.0, 4.0]);
    }

    #[test]
    fn kmeans_errors() {
        let points = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let config = KMeansConfig {
            clusters: 2,
            max_iterations: 10,
            tolerance: 1e-9,
            seed: 1,
        };
        assert!(kmeans_fit(&points, &config).is_err());

        let one = kmeans_fit(
            &points,
            &KMeansConfig {
                clusters: 1,
                max_iterations: 5,
                tolerance: 1e-9,
                seed: 1,
            },
        )
        .unwrap();
        assert!(one.assign(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn kmeans_model_roundtrip() {
        let model = KMeansModel::new(
            DenseMatrix::from_rows(&[vec![0.5, -1.25], vec![1.0 / 3.0, 7.0]]).unwrap(),
        );
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = KMeansModel::load(buf.as_slice()).unwrap();
        assert_eq!(model.centroids().values(), loaded.centroids().values());
    }

    #[test]
    fn gibbs_conditional_worked_example() {
        // Two topics over a 2-word vocabulary, alpha = beta = 1.
        let weights = gibbs_conditional(&[1, 0], &[2, 0], &[3, 1], 1.0, 1.0, 2);
        let total: f64 = weights.iter().sum();
        let p0 = weights[0] / total;
        assert!((p0 - 0.7826).abs() < 1e-3, "p0 {p0}");
    }

    #[test]
    fn gibbs_conditional_symmetry() {
        let weights = gibbs_conditional(&[2, 2], &[3, 3], &[7, 7], 0.5, 0.5, 4);
        assert!((weights[0] - weights[1]).abs() < 1e-15);
    }

    fn planted_documents() -> (Vec<Vec<u32>>, usize) {
        // Three disjoint 5-word topics.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut docs = Vec::new();
        for s in 0..180 {
            let topic = s % 3;
            let base = topic as u32 * 5;
            let doc: Vec<u32> = (0..7).map(|_| base + rng.random_range(0..5)).collect();
            docs.push(doc);
        }
        (docs, 15)
    }

    #[test]
    fn lda_count_conservation_after_sweeps() {
        let (docs, v) = planted_documents();
        let config = LdaConfig {
            topics: 3,
            alpha: None,
            beta: None,
            iterations: 5,
            infer_iterations: 5,
            seed: 17,
        };
        let model = lda_fit(&docs, v, &config).unwrap();
        assert!(model.counts_consistent());
        for (d, doc) in docs.iter().enumerate() {
            let sum: u64 = model.doc_topic_counts()[d].iter().sum();
            assert_eq!(sum, doc.len() as u64);
        }
    }

    #[test]
    fn lda_recovers_planted_topics() {
        let (docs, v) = planted_documents();
        let config = LdaConfig {
            topics: 3,
            alpha: None,
            beta: None,
            iterations: 120,
            infer_iterations: 20,
            seed: 4,
        };
        let model = lda_fit(&docs, v, &config).unwrap();

        // Token-level purity: tokens assigned to each topic should come from
        // one planted vocabulary block.
        let mut counts = vec![vec![0usize; 3]; 3];
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let z = model.assignments()[d][i];
                counts[z][(w / 5) as usize] += 1;
            }
        }
        let total: usize = counts.iter().flatten().sum();
        let pure: usize = counts.iter().map(|c| *c.iter().max().unwrap()).sum();
        let purity = pure as f64 / total as f64;
        assert!(purity >= 0.8, "purity {purity}");

        // Top words of each topic stay inside one planted block.
        for k in 0..3 {
            let top = model.top_words(k, 3).unwrap();
            let block = top[0] / 5;
            assert!(top.iter().all(|&w| w / 5 == block));
        }
    }

    #[test]
    fn lda_infer_is_deterministic_and_valid() {
        let (docs, v) = planted_documents();
        let config = LdaConfig {
            topics: 3,
            alpha: None,
            beta: None,
            iterations: 60,
            infer_iterations: 15,
            seed: 9,
        };
        let model = lda_fit(&docs, v, &config).unwrap();
        let sentence = vec![0u32, 1, 2, 3];
        let a = model.infer(&sentence, 15, 77).unwrap();
        let b = model.infer(&sentence, 15, 77).unwrap();
        assert_eq!(a.probs(), b.probs());
        assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let err = model.infer(&[], 10, 1).unwrap_err();
        assert!(err.to_string().contains("no observed tokens"));
    }

    #[test]
    fn lda_fit_rejects_empty_corpus() {
        let docs: Vec<Vec<u32>> = vec![vec![], vec![]];
        let config = LdaConfig::default();
        assert!(lda_fit(&docs, 5, &config).is_err());
    }

    #[test]
    fn lda_top_words_ties_break_by_id() {
        let (docs, v) = planted_documents();
        let config = LdaConfig {
            topics: 2,
            alpha: None,
            beta: None,
            iterations: 2,
            infer_iterations: 5,
            seed: 5,
        };
        let model = lda_fit(&docs, v, &config).unwrap();
        let all = model.top_words(0, v).unwrap();
        assert_eq!(all.len(), v);
        for w in all.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ca = model.phi(0, a);
            let cb = model.phi(0, b);
            assert!(ca > cb || (ca == cb && a < b));
        }
    }

    #[test]
    fn lda_model_roundtrip() {
        let (docs, v) = planted_documents();
        let config = LdaConfig {
            topics: 3,
            alpha: None,
            beta: None,
            iterations: 10,
            infer_iterations: 5,
            seed: 13,
        };
        let model = lda_fit(&docs, v, &config).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = LdaModel::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.topics(), 3);
        assert_eq!(loaded.vocab_size(), v);
        let sentence = vec![1u32, 2, 3];
        assert_eq!(
            model.infer(&sentence, 10, 3).unwrap().probs(),
            loaded.infer(&sentence, 10, 3).unwrap().probs()
        );
    }
}
