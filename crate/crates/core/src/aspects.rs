//! Aspect labeling and analysis: mapping clusters to named aspects,
//! extracting representative words, coherence scoring, multi-cluster
//! merging, and soft-count prevalence.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::abae::{AbaeModel, AspectDistribution};
use crate::baselines::{KMeansModel, LdaModel};
use crate::corpus::Vocabulary;
use crate::embeddings::{bow_mean, nearest_words, EmbeddingTable};
use crate::numerics::{add_scaled, cosine_similarity, scale, softmax};
use crate::{Error, Result};

/// The fixed label set used for evaluation, plus the catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AspectLabel {
    Location,
    Cleanliness,
    Communication,
    Other,
}

impl AspectLabel {
    pub const ALL: [AspectLabel; 4] = [
        AspectLabel::Location,
        AspectLabel::Cleanliness,
        AspectLabel::Communication,
        AspectLabel::Other,
    ];
}

impl fmt::Display for AspectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AspectLabel::Location => "location",
            AspectLabel::Cleanliness => "cleanliness",
            AspectLabel::Communication => "communication",
            AspectLabel::Other => "other",
        };
        f.write_str(s)
    }
}

impl FromStr for AspectLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location" => Ok(AspectLabel::Location),
            "cleanliness" => Ok(AspectLabel::Cleanliness),
            "communication" => Ok(AspectLabel::Communication),
            "other" => Ok(AspectLabel::Other),
            other => Err(Error::Parse(format!("unknown aspect label {other:?}"))),
        }
    }
}

/// Which model family produced a set of clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodTag {
    Abae,
    KMeans,
    Lda,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodTag::Abae => "abae",
            MethodTag::KMeans => "kmeans",
            MethodTag::Lda => "lda",
        };
        f.write_str(s)
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abae" => Ok(MethodTag::Abae),
            "kmeans" => Ok(MethodTag::KMeans),
            "lda" => Ok(MethodTag::Lda),
            other => Err(Error::Parse(format!("unknown method {other:?}"))),
        }
    }
}

/// A total, many-to-one mapping from cluster id to label. These are edited
/// by hand after inspecting the top words of each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectLabeling {
    pub method: MethodTag,
    labels: Vec<AspectLabel>,
}

impl AspectLabeling {
    pub fn new(method: MethodTag, labels: Vec<AspectLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("empty labeling".into()));
        }
        Ok(Self { method, labels })
    }

    pub fn clusters(&self) -> usize {
        self.labels.len()
    }

    pub fn label_of(&self, cluster: usize) -> AspectLabel {
        self.labels[cluster]
    }

    pub fn clusters_for(&self, label: AspectLabel) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&k| self.labels[k] == label)
            .collect()
    }

    /// File format: one `cluster_id TAB label` line per cluster.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        for (k, label) in self.labels.iter().enumerate() {
            writeln!(writer, "{k}\t{label}")?;
        }
        Ok(())
    }

    /// Loads a mapping file; every cluster in `0..clusters` must appear
    /// exactly once.
    pub fn load<R: BufRead>(reader: R, method: MethodTag, clusters: usize) -> Result<Self> {
        let mut labels = vec![None; clusters];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, label) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("mapping line {}: missing tab", lineno + 1))
            })?;
            let id: usize = id.parse().map_err(|_| {
                Error::Parse(format!("mapping line {}: bad cluster id", lineno + 1))
            })?;
            if id >= clusters {
                return Err(Error::InvalidInput(format!(
                    "cluster id {id} out of range for {clusters} clusters"
                )));
            }
            if labels[id].is_some() {
                return Err(Error::InvalidInput(format!("cluster {id} mapped twice")));
            }
            labels[id] = Some(label.parse()?);
        }
        let labels: Vec<AspectLabel> = labels
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.ok_or_else(|| Error::InvalidInput(format!("cluster {k} unmapped"))))
            .collect::<Result<_>>()?;
        Self::new(method, labels)
    }
}

/// A trained aspect model of any method, with everything needed to score
/// sentences and name clusters.
pub enum AspectModel<'a> {
    Abae {
        model: &'a AbaeModel,
        embeddings: &'a EmbeddingTable,
    },
    KMeans {
        model: &'a KMeansModel,
        embeddings: &'a EmbeddingTable,
    },
    Lda {
        model: &'a LdaModel,
        vocab: &'a Vocabulary,
        infer_iterations: usize,
    },
}

impl AspectModel<'_> {
    pub fn method(&self) -> MethodTag {
        match self {
            AspectModel::Abae { .. } => MethodTag::Abae,
            AspectModel::KMeans { .. } => MethodTag::KMeans,
            AspectModel::Lda { .. } => MethodTag::Lda,
        }
    }

    pub fn cluster_count(&self) -> usize {
        match self {
            AspectModel::Abae { model, .. } => model.aspects(),
            AspectModel::KMeans { model, .. } => model.clusters(),
            AspectModel::Lda { model, .. } => model.topics(),
        }
    }

    fn vocab_len(&self) -> usize {
        match self {
            AspectModel::Abae { embeddings, .. } | AspectModel::KMeans { embeddings, .. } => {
                embeddings.vocab().len()
            }
            AspectModel::Lda { vocab, .. } => vocab.len(),
        }
    }

    /// The `n` words most associated with a cluster: nearest by cosine for
    /// the embedding-space methods, highest smoothed probability for LDA.
    pub fn top_words(&self, cluster: usize, n: usize) -> Result<Vec<String>> {
        if cluster >= self.cluster_count() {
            return Err(Error::InvalidInput(format!(
                "cluster {cluster} out of range for {} clusters",
                self.cluster_count()
            )));
        }
        if n > self.vocab_len() {
            return Err(Error::InvalidInput(format!(
                "n = {n} exceeds vocabulary size {}",
                self.vocab_len()
            )));
        }
        match self {
            AspectModel::Abae { model, embeddings } => {
                let row = model.aspect_embeddings.row(cluster);
                Ok(nearest_words(embeddings, row, n)?
                    .into_iter()
                    .map(|(w, _)| w)
                    .collect())
            }
            AspectModel::KMeans { model, embeddings } => {
                Ok(nearest_words(embeddings, model.centroid(cluster), n)?
                    .into_iter()
                    .map(|(w, _)| w)
                    .collect())
            }
            AspectModel::Lda { model, vocab, .. } => Ok(model
                .top_words(cluster, n)?
                .into_iter()
                .map(|id| vocab.word(id).to_string())
                .collect()),
        }
    }

    /// Similarity of one sentence to every cluster. Cosine between the
    /// method-specific sentence embedding and each cluster representative for
    /// the embedding-space methods; posterior topic mass for LDA.
    pub fn sentence_similarities(&self, tokens: &[u32], seed: u64) -> Result<Vec<f64>> {
        match self {
            AspectModel::Abae { model, .. } => {
                let (_, z) = model.infer_sentence(tokens)?;
                (0..model.aspects())
                    .map(|k| cosine_similarity(&z, model.aspect_embeddings.row(k)))
                    .collect()
            }
            AspectModel::KMeans { model, embeddings } => {
                let bow = bow_mean(&embeddings.input, tokens)?;
                (0..model.clusters())
                    .map(|k| cosine_similarity(&bow, model.centroid(k)))
                    .collect()
            }
            AspectModel::Lda {
                model,
                infer_iterations,
                ..
            } => Ok(model
                .infer(tokens, *infer_iterations, seed)?
                .probs()
                .to_vec()),
        }
    }

    /// The sentence's aspect distribution under this method: the classifier
    /// output for the autoencoder, softmax over centroid cosines for k-means,
    /// and the Gibbs posterior for LDA.
    pub fn aspect_distribution(&self, tokens: &[u32], seed: u64) -> Result<AspectDistribution> {
        match self {
            AspectModel::Abae { model, .. } => Ok(model.infer_sentence(tokens)?.0),
            AspectModel::KMeans { .. } => {
                let sims = self.sentence_similarities(tokens, seed)?;
                AspectDistribution::new(softmax(&sims)?)
            }
            AspectModel::Lda {
                model,
                infer_iterations,
                ..
            } => model.infer(tokens, *infer_iterations, seed),
        }
    }

    /// Unweighted mean of the cluster representatives mapped to `label`.
    /// Only defined for the embedding-space methods; LDA merges by summing
    /// posterior mass instead.
    pub fn merged_embedding(
        &self,
        labeling: &AspectLabeling,
        label: AspectLabel,
    ) -> Result<Vec<f64>> {
        let clusters = labeling.clusters_for(label);
        if clusters.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no cluster is mapped to label {label}"
            )));
        }
        let row = |k: usize| -> Result<&[f64]> {
            match self {
                AspectModel::Abae { model, .. } => Ok(model.aspect_embeddings.row(k)),
                AspectModel::KMeans { model, .. } => Ok(model.centroid(k)),
                AspectModel::Lda { .. } => Err(Error::InvalidInput(
                    "LDA clusters have no embedding; merge posterior mass instead".into(),
                )),
            }
        };
        let mut out = vec![0.0; row(clusters[0])?.len()];
        for &k in &clusters {
            add_scaled(&mut out, row(k)?, 1.0);
        }
        scale(&mut out, 1.0 / clusters.len() as f64);
        Ok(out)
    }
}

/// Log co-document-frequency coherence over an ordered top-word list:
/// `sum_{m=2}^{M} sum_{l<m} log((D(v_m, v_l) + 1) / D(v_l))` where documents
/// are sentences.
pub fn coherence_score(top_words: &[u32], docs: &[&[u32]], vocab: &Vocabulary) -> Result<f64> {
    let m = top_words.len();
    if m <= 1 {
        return Ok(0.0);
    }
    let mut query: HashMap<u32, usize> = HashMap::new();
    for (i, &w) in top_words.iter().enumerate() {
        if query.insert(w, i).is_some() {
            return Err(Error::InvalidInput(format!(
                "word {:?} appears twice in the top-word list",
                vocab.word(w)
            )));
        }
    }
    let mut doc_freq = vec![0u64; m];
    let mut co_freq = vec![vec![0u64; m]; m];
    let mut present: Vec<usize> = Vec::new();
    for doc in docs {
        present.clear();
        for &t in doc.iter() {
            if let Some(&qi) = query.get(&t) {
                if !present.contains(&qi) {
                    present.push(qi);
                }
            }
        }
        present.sort_unstable();
        for (a, &i) in present.iter().enumerate() {
            doc_freq[i] += 1;
            for &j in &present[a + 1..] {
                co_freq[i][j] += 1;
                co_freq[j][i] += 1;
            }
        }
    }
    for (i, &f) in doc_freq.iter().enumerate() {
        if f == 0 {
            return Err(Error::InvalidInput(format!(
                "word {:?} does not occur in any document",
                vocab.word(top_words[i])
            )));
        }
    }
    let mut score = 0.0;
    for a in 1..m {
        for l in 0..a {
            score += ((co_freq[a][l] as f64 + 1.0) / doc_freq[l] as f64).ln();
        }
    }
    Ok(score)
}

/// Per-aspect coherence at several top-word counts, plus the column sums.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    pub method: MethodTag,
    pub word_counts: Vec<usize>,
    /// `per_aspect[k][i]` is the coherence of aspect `k` at
    /// `word_counts[i]` top words.
    pub per_aspect: Vec<Vec<f64>>,
    /// Sum across aspects for each word count.
    pub sums: Vec<f64>,
}

impl CoherenceReport {
    pub fn compute(
        model: &AspectModel,
        docs: &[&[u32]],
        vocab: &Vocabulary,
        word_counts: &[usize],
    ) -> Result<Self> {
        let k = model.cluster_count();
        let mut per_aspect = Vec::with_capacity(k);
        for cluster in 0..k {
            let mut row = Vec::with_capacity(word_counts.len());
            for &n in word_counts {
                let words = model.top_words(cluster, n.min(vocab.len()))?;
                // Words that never occur in the scoring documents contribute
                // nothing; they only arise on tiny fixtures.
                let ids: Vec<u32> = words
                    .iter()
                    .filter_map(|w| vocab.id(w))
                    .filter(|&w| docs.iter().any(|d| d.contains(&w)))
                    .collect();
                row.push(coherence_score(&ids, docs, vocab)?);
            }
            per_aspect.push(row);
        }
        let sums = (0..word_counts.len())
            .map(|i| per_aspect.iter().map(|row| row[i]).sum())
            .collect();
        Ok(Self {
            method: model.method(),
            word_counts: word_counts.to_vec(),
            per_aspect,
            sums,
        })
    }

    /// Tab-separated table: one row per aspect, one column per word count,
    /// and a final sum row.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        write!(writer, "aspect")?;
        for n in &self.word_counts {
            write!(writer, "\t{n}")?;
        }
        writeln!(writer)?;
        for (k, row) in self.per_aspect.iter().enumerate() {
            write!(writer, "{k}")?;
            for v in row {
                write!(writer, "\t{v:.4}")?;
            }
            writeln!(writer)?;
        }
        write!(writer, "sum")?;
        for v in &self.sums {
            write!(writer, "\t{v:.4}")?;
        }
        writeln!(writer)?;
        Ok(())
    }
}

/// Soft-count prevalence: each sentence distributes one unit of mass over
/// clusters via a softmax of its cluster similarities; mass is folded into
/// labels and normalized by the sentence count.
pub fn aspect_prevalence(
    sentences: &[&[u32]],
    labeling: &AspectLabeling,
    model: &AspectModel,
    seed: u64,
) -> Result<BTreeMap<AspectLabel, f64>> {
    if sentences.is_empty() {
        return Err(Error::InvalidInput("empty sentence set".into()));
    }
    if labeling.clusters() != model.cluster_count() {
        return Err(Error::ShapeMismatch(format!(
            "labeling covers {} clusters, model has {}",
            labeling.clusters(),
            model.cluster_count()
        )));
    }
    let mut totals: BTreeMap<AspectLabel, f64> = BTreeMap::new();
    for (i, tokens) in sentences.iter().enumerate() {
        let sims = model.sentence_similarities(tokens, seed.wrapping_add(i as u64))?;
        let soft = softmax(&sims)?;
        for (k, &mass) in soft.iter().enumerate() {
            *totals.entry(labeling.label_of(k)).or_insert(0.0) += mass;
        }
    }
    for v in totals.values_mut() {
        *v /= sentences.len() as f64;
    }
    Ok(totals)
}
