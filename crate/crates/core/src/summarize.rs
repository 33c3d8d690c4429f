//! Extractive summarization and its evaluation metrics: top-k sentence
//! retrieval per (listing, aspect), precision@k over human judgments, Fleiss'
//! kappa for inter-annotator agreement, and blind evaluation sheets.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aspects::{AspectLabel, AspectLabeling, AspectModel, MethodTag};
use crate::corpus::EncodedCorpus;
use crate::embeddings::bow_mean;
use crate::numerics::cosine_similarity;
use crate::{Error, Result};

/// One retrieved sentence for a (listing, aspect, method) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedSentence {
    pub listing_id: String,
    pub aspect: AspectLabel,
    pub method: MethodTag,
    /// Index of the sentence in the source corpus.
    pub sentence_index: usize,
    pub text: String,
    /// 1-based rank within the (listing, aspect, method) group.
    pub rank: u32,
    pub score: f64,
    /// Set when the listing had fewer candidates than requested.
    pub short_list: bool,
}

/// Scores every candidate sentence for `label` and returns the top `k`.
///
/// Scoring per method: cosine between the attention-weighted sentence
/// embedding and the merged aspect embedding; negated Euclidean distance
/// between the mean bag-of-words embedding and the merged centroid; summed
/// posterior mass over the label's topics for LDA. Ties break by sentence
/// position. If fewer than `k` candidates exist, all are returned flagged.
pub fn extract_top_sentences(
    corpus: &EncodedCorpus,
    candidates: &[usize],
    listing_id: &str,
    label: AspectLabel,
    labeling: &AspectLabeling,
    model: &AspectModel,
    k: usize,
    seed: u64,
) -> Result<Vec<ExtractedSentence>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "listing {listing_id} has no candidate sentences"
        )));
    }
    let clusters = labeling.clusters_for(label);
    if clusters.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no cluster is mapped to label {label}"
        )));
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    match model {
        AspectModel::Abae { model: abae, .. } => {
            let target = model.merged_embedding(labeling, label)?;
            for &i in candidates {
                let z = abae.sentence_embedding(&corpus.sentences[i].token_ids)?;
                scored.push((i, cosine_similarity(&z, &target)?));
            }
        }
        AspectModel::KMeans { embeddings, .. } => {
            let target = model.merged_embedding(labeling, label)?;
            for &i in candidates {
                let bow = bow_mean(&embeddings.input, &corpus.sentences[i].token_ids)?;
                let dist = bow
                    .iter()
                    .zip(&target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                scored.push((i, -dist));
            }
        }
        AspectModel::Lda {
            model: lda,
            infer_iterations,
            ..
        } => {
            for &i in candidates {
                let posterior = lda.infer(
                    &corpus.sentences[i].token_ids,
                    *infer_iterations,
                    seed.wrapping_add(i as u64),
                )?;
                let mass: f64 = clusters.iter().map(|&c| posterior.probs()[c]).sum();
                scored.push((i, mass));
            }
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let short_list = scored.len() < k;
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (i, score))| ExtractedSentence {
            listing_id: listing_id.to_string(),
            aspect: label,
            method: model.method(),
            sentence_index: i,
            text: corpus.texts[i].clone(),
            rank: rank as u32 + 1,
            score,
            short_list,
        })
        .collect())
}

/// Mean over groups of (positive verdicts among the top `k`) / `k`. Each
/// group is a verdict list ordered by rank.
pub fn precision_at_k(groups: &[Vec<u8>], k: usize) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidInput("no judgment groups".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut total = 0.0;
    for (g, verdicts) in groups.iter().enumerate() {
        if verdicts.len() < k {
            return Err(Error::InvalidInput(format!(
                "group {g} is missing ranks: has {} verdicts, needs {k}",
                verdicts.len()
            )));
        }
        if verdicts.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("verdicts must be 0 or 1".into()));
        }
        let positives: u32 = verdicts[..k].iter().map(|&v| v as u32).sum();
        total += positives as f64 / k as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Fleiss' kappa over an items x categories count matrix. Every item must be
/// rated by the same number of raters (at least 2). Returns 1 by convention
/// when chance agreement is exactly 1 (all mass in one category).
pub fn fleiss_kappa(counts: &[Vec<u32>]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no items".into()));
    }
    let categories = counts[0].len();
    if categories < 2 {
        return Err(Error::InvalidInput("need at least 2 categories".into()));
    }
    let raters: u32 = counts[0].iter().sum();
    if raters < 2 {
        return Err(Error::InvalidInput("need at least 2 raters".into()));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != categories {
            return Err(Error::ShapeMismatch(format!(
                "item {i} has {} categories, expected {categories}",
                row.len()
            )));
        }
        if row.iter().sum::<u32>() != raters {
            return Err(Error::InvalidInput(format!(
                "item {i} rated by {} raters, expected {raters}",
                row.iter().sum::<u32>()
            )));
        }
    }
    let n_items = counts.len() as f64;
    let n = raters as f64;

    // Per-item agreement.
    let p_bar: f64 = counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_items;

    // Chance agreement from the category marginals.
    let p_e: f64 = (0..categories)
        .map(|j| {
            let mass: f64 = counts.iter().map(|row| row[j] as f64).sum();
            let p = mass / (n_items * n);
            p * p
        })
        .sum();

    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// One line of an annotator sheet. The method is deliberately absent: the
/// evaluation is blind, and verdicts are joined back to methods by
/// example id.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetRow {
    pub example_id: usize,
    pub listing_id: String,
    pub sentence: String,
    pub aspect: AspectLabel,
}

/// Builds one sheet per annotator. A seeded shuffle picks a
/// `holdout_fraction` of examples that every annotator rates (the
/// agreement subset); the rest are dealt round-robin.
pub fn build_evaluation_sheets(
    items: &[ExtractedSentence],
    annotators: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<SheetRow>>> {
    if annotators == 0 {
        return Err(Error::InvalidInput("need at least one annotator".into()));
    }
    if !(0.0..=1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidInput(
            "holdout fraction must lie in [0, 1]".into(),
        ));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let holdout = (items.len() as f64 * holdout_fraction).ceil() as usize;
    let mut sheets: Vec<Vec<SheetRow>> = vec![Vec::new(); annotators];
    let row = |example_id: usize| -> SheetRow {
        let item = &items[example_id];
        SheetRow {
            example_id,
            listing_id: item.listing_id.clone(),
            sentence: item.text.clone(),
            aspect: item.aspect,
        }
    };
    for &id in order.iter().take(holdout) {
        for sheet in sheets.iter_mut() {
            sheet.push(row(id));
        }
    }
    for (i, &id) in order.iter().skip(holdout).enumerate() {
        sheets[i % annotators].push(row(id));
    }
    for sheet in sheets.iter_mut() {
        sheet.sort_by_key(|r| r.example_id);
    }
    Ok(sheets)
}

/// One collected verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentRecord {
    pub example_id: usize,
    pub annotator: String,
    pub verdict: u8,
}

/// Sheet/judgment file format: a header line, then
/// `example_id TAB listing_id TAB sentence TAB aspect TAB verdict TAB
/// annotator` (verdict empty on unfilled sheets).
pub fn write_sheet<W: Write>(writer: &mut W, annotator: &str, rows: &[SheetRow]) -> Result<()> {
    writeln!(
        writer,
        "example_id\tlisting_id\tsentence\taspect\tverdict\tannotator"
    )?;
    for r in rows {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t\t{}",
            r.example_id, r.listing_id, r.sentence, r.aspect, annotator
        )?;
    }
    Ok(())
}

pub fn read_judgments<R: BufRead>(reader: R) -> Result<Vec<JudgmentRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with("example_id\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "judgment line {}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let example_id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("judgment line {}: bad example id", lineno + 1)))?;
        let verdict: u8 = match fields[4] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse(format!(
                    "judgment line {}: verdict {:?} is not binary",
                    lineno + 1,
                    other
                )))
            }
        };
        out.push(JudgmentRecord {
            example_id,
            annotator: fields[5].to_string(),
            verdict,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::KMeansModel;
    use crate::corpus::{EncodedSentence, Vocabulary};
    use crate::embeddings::EmbeddingTable;
    use crate::numerics::DenseMatrix;
    use rand::Rng;

    fn fixture() -> (EncodedCorpus, EmbeddingTable) {
        // Words 0/1 belong to a "location" direction, word 2 to
        // "cleanliness".
        let vocab = Vocabulary::from_ranked(
            vec!["subway".into(), "walk".into(), "spotless".into()],
            vec![3, 2, 1],
            100,
        )
        .unwrap();
        let input = DenseMatrix::from_rows(&[
            vec![1.0, 0.05],
            vec![0.9, 0.1],
            vec![0.05, 1.0],
        ])
        .unwrap();
        let table = EmbeddingTable::new(vocab, input, DenseMatrix::zeros(3, 2)).unwrap();
        let mk = |ids: &[u32], pos: u32, text: &str| EncodedSentence {
            token_ids: ids.to_vec(),
            review_id: format!("r{pos}"),
            listing_id: "l1".into(),
            guest_id: "g1".into(),
            position: pos,
        };
        let sentences = vec![
            mk(&[0, 1], 0, "Easy walk to the subway."),
            mk(&[2], 1, "Spotless bathroom."),
            mk(&[1], 2, "Nice walk everywhere."),
            mk(&[0], 3, "Subway around the corner."),
        ];
        let texts = vec![
            "Easy walk to the subway.".to_string(),
            "Spotless bathroom.".to_string(),
            "Nice walk everywhere.".to_string(),
            "Subway around the corner.".to_string(),
        ];
        (EncodedCorpus::new(sentences, texts).unwrap(), table)
    }

    fn kmeans_model() -> KMeansModel {
        KMeansModel::new(
            DenseMatrix::from_rows(&[vec![0.95, 0.07], vec![0.05, 0.95]]).unwrap(),
        )
    }

    fn labeling() -> AspectLabeling {
        AspectLabeling::new(
            MethodTag::KMeans,
            vec![AspectLabel::Location, AspectLabel::Cleanliness],
        )
        .unwrap()
    }

    #[test]
    fn extraction_returns_all_when_fewer_than_k() {
        let (corpus, table) = fixture();
        let model = kmeans_model();
        let am = AspectModel::KMeans {
            model: &model,
            embeddings: &table,
        };
        let candidates: Vec<usize> = (0..4).collect();
        let out = extract_top_sentences(
            &corpus,
            &candidates,
            "l1",
            AspectLabel::Location,
            &labeling(),
            &am,
            10,
            1,
        )
        .unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|e| e.short_list));
        // Scores are non-increasing with rank.
        for w in out.windows(2) {
            assert!(w[0].score >= w[1].score);
            assert!(w[0].rank < w[1].rank);
        }
    }

    #[test]
    fn extraction_finds_planted_cleanliness_sentence() {
        let (corpus, table) = fixture();
        let model = kmeans_model();
        let am = AspectModel::KMeans {
            model: &model,
            embeddings: &table,
        };
        let candidates: Vec<usize> = (0..4).collect();
        let out = extract_top_sentences(
            &corpus,
            &candidates,
            "l1",
            AspectLabel::Cleanliness,
            &labeling(),
            &am,
            3,
            1,
        )
        .unwrap();
        assert_eq!(out[0].text, "Spotless bathroom.");
        assert_eq!(out[0].rank, 1);
        assert!(!out[0].short_list);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn extraction_exact_match_ranks_first_for_abae_style_scores() {
        // With k-means scoring, a sentence whose embedding equals the merged
        // centroid has distance 0 and must rank first.
        let (corpus, table) = fixture();
        let model = KMeansModel::new(
            DenseMatrix::from_rows(&[vec![0.05, 1.0], vec![0.0, 0.0]]).unwrap(),
        );
        let am = AspectModel::KMeans {
            model: &model,
            embeddings: &table,
        };
        let labeling = AspectLabeling::new(
            MethodTag::KMeans,
            vec![AspectLabel::Cleanliness, AspectLabel::Other],
        )
        .unwrap();
        let candidates: Vec<usize> = (0..4).collect();
        let out = extract_top_sentences(
            &corpus,
            &candidates,
            "l1",
            AspectLabel::Cleanliness,
            &labeling,
            &am,
            1,
            1,
        )
        .unwrap();
        assert_eq!(out[0].sentence_index, 1);
        assert!((out[0].score - 0.0).abs() < 1e-12);
    }

    #[test]
    fn precision_at_k_values() {
        let groups = vec![vec![1, 0, 1]];
        assert_eq!(precision_at_k(&groups, 1).unwrap(), 1.0);
        assert!((precision_at_k(&groups, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let zeros = vec![vec![0, 0, 0]];
        assert_eq!(precision_at_k(&zeros, 3).unwrap(), 0.0);

        let two = vec![vec![1, 1, 1], vec![0, 0, 0]];
        assert_eq!(precision_at_k(&two, 3).unwrap(), 0.5);

        let short = vec![vec![1, 0]];
        let err = precision_at_k(&short, 3).unwrap_err();
        assert!(err.to_string().contains("missing ranks"));
    }

    #[test]
    fn precision_is_monotone_under_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let groups: Vec<Vec<u8>> = (0..4)
                .map(|_| (0..3).map(|_| rng.random_range(0..2) as u8).collect())
                .collect();
            let base = precision_at_k(&groups, 3).unwrap();
            assert!((0.0..=1.0).contains(&base));
            // Flip one 0 to 1 somewhere, if any.
            let mut flipped = groups.clone();
            'outer: for g in flipped.iter_mut() {
                for v in g.iter_mut() {
                    if *v == 0 {
                        *v = 1;
                        break 'outer;
                    }
                }
            }
            let after = precision_at_k(&flipped, 3).unwrap();
            assert!(after >= base);
        }
    }

    #[test]
    fn fleiss_kappa_worked_examples() {
        // Perfect agreement, mixed marginals.
        let perfect = vec![vec![3, 0], vec![0, 3]];
        assert!((fleiss_kappa(&perfect).unwrap() - 1.0).abs() < 1e-12);

        // Two items, three raters, counts (3,0) and (2,1).
        let counts = vec![vec![3, 0], vec![2, 1]];
        let kappa = fleiss_kappa(&counts).unwrap();
        assert!((kappa - (-0.2)).abs() < 1e-12, "kappa {kappa}");

        // Agreement exactly at chance.
        let chance = vec![vec![2, 0], vec![0, 2], vec![1, 1], vec![1, 1]];
        assert!(fleiss_kappa(&chance).unwrap().abs() < 1e-12);

        // All mass in one category with perfect agreement: 1 by convention.
        let degenerate = vec![vec![3, 0], vec![3, 0]];
        assert_eq!(fleiss_kappa(&degenerate).unwrap(), 1.0);
    }

    #[test]
    fn fleiss_kappa_is_invariant_under_category_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let counts: Vec<Vec<u32>> = (0..6)
                .map(|_| {
                    let a = rng.random_range(0..=4u32);
                    let b = rng.random_range(0..=(4 - a));
                    vec![a, b, 4 - a - b]
                })
                .collect();
            let permuted: Vec<Vec<u32>> = counts
                .iter()
                .map(|row| vec![row[2], row[0], row[1]])
                .collect();
            let k1 = fleiss_kappa(&counts).unwrap();
            let k2 = fleiss_kappa(&permuted).unwrap();
            assert!((k1 - k2).abs() < 1e-12);
        }
    }

    #[test]
    fn fleiss_kappa_validates_rater_counts() {
        let uneven = vec![vec![3, 0], vec![2, 2]];
        assert!(fleiss_kappa(&uneven).is_err());
        let single = vec![vec![1, 0]];
        assert!(fleiss_kappa(&single).is_err());
    }

    fn dummy_items(n: usize) -> Vec<ExtractedSentence> {
        (0..n)
            .map(|i| ExtractedSentence {
                listing_id: format!("l{}", i % 3),
                aspect: AspectLabel::Location,
                method: MethodTag::KMeans,
                sentence_index: i,
                text: format!("sentence {i}"),
                rank: (i % 3) as u32 + 1,
                score: 1.0 - i as f64 * 0.01,
                short_list: false,
            })
            .collect()
    }

    #[test]
    fn sheets_share_holdout_and_partition_rest() {
        let items = dummy_items(20);
        let sheets = build_evaluation_sheets(&items, 3, 0.25, 7).unwrap();
        assert_eq!(sheets.len(), 3);

        let holdout = 5; // ceil(20 * 0.25)
        let sets: Vec<std::collections::HashSet<usize>> = sheets
            .iter()
            .map(|s| s.iter().map(|r| r.example_id).collect())
            .collect();
        let shared: Vec<usize> = sets[0]
            .iter()
            .filter(|id| sets[1].contains(id) && sets[2].contains(id))
            .copied()
            .collect();
        assert_eq!(shared.len(), holdout);

        // Every example appears somewhere; non-holdout examples exactly once.
        let mut appearance = vec![0usize; items.len()];
        for sheet in &sheets {
            for r in sheet {
                appearance[r.example_id] += 1;
            }
        }
        for (id, &count) in appearance.iter().enumerate() {
            assert!(count == 1 || count == 3, "example {id} appeared {count}x");
        }
        assert_eq!(appearance.iter().filter(|&&c| c == 3).count(), holdout);

        // Deterministic for a fixed seed.
        let again = build_evaluation_sheets(&items, 3, 0.25, 7).unwrap();
        assert_eq!(sheets, again);
    }

    #[test]
    fn sheet_rows_hide_method_and_roundtrip_judgments() {
        let items = dummy_items(4);
        let sheets = build_evaluation_sheets(&items, 2, 0.5, 3).unwrap();
        let mut buf = Vec::new();
        write_sheet(&mut buf, "annotator-a", &sheets[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("kmeans"));

        // Fill the verdict column and read it back.
        let filled: String = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                if i == 0 {
                    line.to_string()
                } else {
                    line.replacen("\t\t", "\t1\t", 1)
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        let records = read_judgments(filled.as_bytes()).unwrap();
        assert_eq!(records.len(), sheets[0].len());
        assert!(records.iter().all(|r| r.verdict == 1));
        assert!(records.iter().all(|r| r.annotator == "annotator-a"));
    }
}
