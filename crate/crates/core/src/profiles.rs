//! Guest aspect profiles and the rank-correlation experiment: aggregate
//! sentence-level aspect distributions into per-guest profiles, rerank
//! listings/reviews/sentences by symmetric KL divergence to a profile, and
//! relate profile distances to ranking distances (Kendall's tau) with an OLS
//! fit.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::abae::AspectDistribution;
use crate::corpus::EncodedCorpus;
use crate::{Error, Result};

/// How sentence distributions were folded into a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Uniform mean over all sentences.
    BagOfSentences,
    /// Mean per review, then mean over reviews.
    BagOfReviews,
    /// Per-dimension maximum, renormalized by softmax.
    MaxSoftmax,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Aggregation::BagOfSentences => "bos",
            Aggregation::BagOfReviews => "bor",
            Aggregation::MaxSoftmax => "max_softmax",
        };
        f.write_str(s)
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bos" => Ok(Aggregation::BagOfSentences),
            "bor" => Ok(Aggregation::BagOfReviews),
            "max_softmax" => Ok(Aggregation::MaxSoftmax),
            other => Err(Error::Parse(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// A guest's aggregated aspect distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GuestProfile {
    pub guest_id: String,
    pub distribution: AspectDistribution,
    pub aggregation: Aggregation,
    pub sentence_count: usize,
}

fn mean_distribution(dists: &[&AspectDistribution]) -> Result<AspectDistribution> {
    if dists.is_empty() {
        return Err(Error::InvalidInput("no distributions to aggregate".into()));
    }
    let k = dists[0].len();
    let mut mean = vec![0.0; k];
    for d in dists {
        if d.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "distribution of length {} among length-{k} inputs",
                d.len()
            )));
        }
        for (m, &p) in mean.iter_mut().zip(d.probs()) {
            *m += p;
        }
    }
    for m in mean.iter_mut() {
        *m /= dists.len() as f64;
    }
    AspectDistribution::new(mean)
}

/// Uniform mean over a guest's sentences.
pub fn aggregate_bos(guest_id: &str, sentences: &[AspectDistribution]) -> Result<GuestProfile> {
    let refs: Vec<&AspectDistribution> = sentences.iter().collect();
    Ok(GuestProfile {
        guest_id: guest_id.to_string(),
        distribution: mean_distribution(&refs)?,
        aggregation: Aggregation::BagOfSentences,
        sentence_count: sentences.len(),
    })
}

/// Mean per review, then mean over reviews (uniform review weights).
pub fn aggregate_bor(guest_id: &str, reviews: &[Vec<AspectDistribution>]) -> Result<GuestProfile> {
    if reviews.is_empty() {
        return Err(Error::InvalidInput("no reviews to aggregate".into()));
    }
    let mut review_means = Vec::with_capacity(reviews.len());
    let mut sentence_count = 0;
    for sentences in reviews {
        let refs: Vec<&AspectDistribution> = sentences.iter().collect();
        review_means.push(mean_distribution(&refs)?);
        sentence_count += sentences.len();
    }
    let refs: Vec<&AspectDistribution> = review_means.iter().collect();
    Ok(GuestProfile {
        guest_id: guest_id.to_string(),
        distribution: mean_distribution(&refs)?,
        aggregation: Aggregation::BagOfReviews,
        sentence_count,
    })
}

/// Per-dimension maximum over sentences, renormalized with a softmax.
pub fn aggregate_max_softmax(
    guest_id: &str,
    sentences: &[AspectDistribution],
) -> Result<GuestProfile> {
    if sentences.is_empty() {
        return Err(Error::InvalidInput("no distributions to aggregate".into()));
    }
    let k = sentences[0].len();
    let mut maxima = vec![f64::NEG_INFINITY; k];
    for d in sentences {
        if d.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "distribution of length {} among length-{k} inputs",
                d.len()
            )));
        }
        for (m, &p) in maxima.iter_mut().zip(d.probs()) {
            *m = m.max(p);
        }
    }
    let probs = crate::numerics::softmax(&maxima)?;
    Ok(GuestProfile {
        guest_id: guest_id.to_string(),
        distribution: AspectDistribution::new(probs)?,
        aggregation: Aggregation::MaxSoftmax,
        sentence_count: sentences.len(),
    })
}

const KL_EPSILON: f64 = 1e-10;

fn smoothed(p: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = p
        .iter()
        .map(|&x| if x == 0.0 { KL_EPSILON } else { x })
        .collect();
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x /= sum;
    }
    out
}

/// `KL(p||q) + KL(q||p)` with natural logs. Zero entries are lifted to 1e-10
/// and the vectors renormalized first.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::InvalidInput("empty distributions".into()));
    }
    let ps = smoothed(p);
    let qs = smoothed(q);
    let mut total = 0.0;
    for (a, b) in ps.iter().zip(&qs) {
        total += a * (a / b).ln() + b * (b / a).ln();
    }
    Ok(total.max(0.0))
}

/// What is being reranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectKind {
    Listing,
    Review,
    Sentence,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObjectKind::Listing => "listing",
            ObjectKind::Review => "review",
            ObjectKind::Sentence => "sentence",
        };
        f.write_str(s)
    }
}

impl FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listing" => Ok(ObjectKind::Listing),
            "review" => Ok(ObjectKind::Review),
            "sentence" => Ok(ObjectKind::Sentence),
            other => Err(Error::Parse(format!("unknown object kind {other:?}"))),
        }
    }
}

/// Objects in ascending order of symmetric KL divergence to a profile.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub kind: ObjectKind,
    /// `(object id, divergence)`, best first.
    pub entries: Vec<(String, f64)>,
    /// Objects dropped because no distribution could be computed for them.
    pub skipped: Vec<String>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Ranks objects by ascending divergence to the profile; ties break by
/// object id so rankings are total orders.
pub fn rank_objects(
    profile: &GuestProfile,
    objects: &[(String, AspectDistribution)],
    kind: ObjectKind,
) -> Result<RankedList> {
    let mut entries: Vec<(String, f64)> = objects
        .iter()
        .map(|(id, dist)| {
            symmetric_kl(profile.distribution.probs(), dist.probs())
                .map(|score| (id.clone(), score))
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(RankedList {
        kind,
        entries,
        skipped: Vec::new(),
    })
}

fn count_inversions(seq: &mut [usize]) -> u64 {
    // Merge sort, counting crossings.
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut left = seq[..mid].to_vec();
    let mut right = seq[mid..].to_vec();
    let mut inv = count_inversions(&mut left) + count_inversions(&mut right);
    let (mut i, mut j) = (0, 0);
    for slot in seq.iter_mut() {
        if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            inv += (left.len() - i) as u64;
            *slot = right[j];
            j += 1;
        }
    }
    inv
}

/// Kendall's tau-a between two total orders over the same id set:
/// `(concordant - discordant) / (n (n-1) / 2)`, computed by inversion
/// counting.
pub fn kendall_tau<T: Ord + std::hash::Hash>(a: &[T], b: &[T]) -> Result<f64> {
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "rankings need at least 2 items".into(),
        ));
    }
    if b.len() != n {
        return Err(Error::InvalidInput(format!(
            "rankings cover different ids: {} vs {} items",
            n,
            b.len()
        )));
    }
    let mut position: HashMap<&T, usize> = HashMap::with_capacity(n);
    for (i, item) in a.iter().enumerate() {
        if position.insert(item, i).is_some() {
            return Err(Error::InvalidInput("duplicate id in ranking".into()));
        }
    }
    let mut seq = Vec::with_capacity(n);
    for item in b {
        match position.get(item) {
            Some(&i) => seq.push(i),
            None => {
                return Err(Error::InvalidInput(
                    "rankings cover different ids".into(),
                ))
            }
        }
    }
    {
        let mut seen = vec![false; n];
        for &i in &seq {
            if seen[i] {
                return Err(Error::InvalidInput("duplicate id in ranking".into()));
            }
            seen[i] = true;
        }
    }
    // Discordant pairs are exactly the inversions; keep the arithmetic in
    // integers so the result matches direct pair counting bit-for-bit.
    let discordant = count_inversions(&mut seq) as i64;
    let pairs = (n * (n - 1) / 2) as i64;
    let concordant = pairs - discordant;
    Ok((concordant - discordant) as f64 / pairs as f64)
}

/// One guest pair in the distance-vs-rank-correlation experiment.
#[derive(Debug, Clone)]
pub struct CorrelationPoint {
    pub guest_a: String,
    pub guest_b: String,
    /// Symmetric KL divergence between the pair's profiles.
    pub profile_distance: f64,
    /// Kendall's tau between the pair's rankings (averaged over listings for
    /// review/sentence objects).
    pub rank_correlation: f64,
}

/// Closed-form simple linear regression.
#[derive(Debug, Clone, Copy)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x` with
/// `R^2 = 1 - SS_res / SS_tot`. Zero x-variance and constant y are errors.
pub fn ols_r2(points: &[(f64, f64)]) -> Result<OlsFit> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("zero x-variance".into()));
    }
    if ss_tot == 0.0 {
        return Err(Error::InvalidInput("constant y values".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(OlsFit {
        intercept,
        slope,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Pre-aggregated object distributions for every ranking granularity.
#[derive(Debug, Clone)]
pub struct RankingUniverse {
    /// One (listing id, bag-of-sentences distribution) per listing.
    pub listings: Vec<(String, AspectDistribution)>,
    /// Per listing: (review id, mean distribution) for each review in it.
    pub reviews_by_listing: Vec<(String, Vec<(String, AspectDistribution)>)>,
    /// Per listing: (sentence id, distribution) for each sentence in it.
    pub sentences_by_listing: Vec<(String, Vec<(String, AspectDistribution)>)>,
    /// Listing ids skipped because they had no scored sentences.
    pub skipped: Vec<String>,
}

/// Builds the ranking universe for the given listings from per-sentence
/// distributions (`sentence_dists[i]` belongs to corpus sentence `i`;
/// missing entries mean the sentence could not be scored).
pub fn build_ranking_universe(
    corpus: &EncodedCorpus,
    listing_ids: &[String],
    sentence_dists: &HashMap<usize, AspectDistribution>,
) -> Result<RankingUniverse> {
    let mut listings = Vec::new();
    let mut reviews_by_listing = Vec::new();
    let mut sentences_by_listing = Vec::new();
    let mut skipped = Vec::new();
    for lid in listing_ids {
        let sentence_ids: Vec<usize> = corpus
            .sentences_of_listing(lid)
            .iter()
            .copied()
            .filter(|i| sentence_dists.contains_key(i))
            .collect();
        if sentence_ids.is_empty() {
            skipped.push(lid.clone());
            continue;
        }
        let dists: Vec<&AspectDistribution> =
            sentence_ids.iter().map(|i| &sentence_dists[i]).collect();
        listings.push((lid.clone(), mean_distribution(&dists)?));

        let mut sentences = Vec::with_capacity(sentence_ids.len());
        for &i in &sentence_ids {
            let s = &corpus.sentences[i];
            sentences.push((
                format!("{}:{}", s.review_id, s.position),
                sentence_dists[&i].clone(),
            ));
        }
        sentences_by_listing.push((lid.clone(), sentences));

        let mut reviews = Vec::new();
        for rid in corpus.reviews_of_listing(lid) {
            let review_dists: Vec<&AspectDistribution> = corpus
                .sentences_of_review(rid)
                .iter()
                .filter(|i| sentence_dists.contains_key(i))
                .map(|i| &sentence_dists[i])
                .collect();
            if !review_dists.is_empty() {
                reviews.push((rid.clone(), mean_distribution(&review_dists)?));
            }
        }
        reviews_by_listing.push((lid.clone(), reviews));
    }
    Ok(RankingUniverse {
        listings,
        reviews_by_listing,
        sentences_by_listing,
        skipped,
    })
}

/// Runs the pairwise experiment for one object kind: every guest pair
/// contributes one point (profile divergence, rank correlation). For
/// review/sentence kinds the correlation is the unweighted mean of
/// per-listing taus; listings with fewer than 2 objects are skipped.
pub fn pairwise_experiment(
    profiles: &[GuestProfile],
    universe: &RankingUniverse,
    kind: ObjectKind,
) -> Result<(Vec<CorrelationPoint>, OlsFit)> {
    if profiles.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 profiles".into()));
    }
    // Rankings per profile, computed once.
    let rankings_for = |objects: &[(String, AspectDistribution)]| -> Result<Vec<Vec<String>>> {
        profiles
            .iter()
            .map(|p| Ok(rank_objects(p, objects, kind)?.ids()))
            .collect()
    };
    let per_profile: Vec<Vec<Vec<String>>> = match kind {
        ObjectKind::Listing => {
            if universe.listings.len() < 2 {
                return Err(Error::InvalidInput(
                    "need at least 2 listings to rank".into(),
                ));
            }
            vec![rankings_for(&universe.listings)?]
        }
        ObjectKind::Review => universe
            .reviews_by_listing
            .iter()
            .filter(|(_, objects)| objects.len() >= 2)
            .map(|(_, objects)| rankings_for(objects))
            .collect::<Result<_>>()?,
        ObjectKind::Sentence => universe
            .sentences_by_listing
            .iter()
            .filter(|(_, objects)| objects.len() >= 2)
            .map(|(_, objects)| rankings_for(objects))
            .collect::<Result<_>>()?,
    };
    if per_profile.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no listing offers at least 2 {kind} objects"
        )));
    }

    let mut points = Vec::new();
    for i in 0..profiles.len() {
        for j in (i + 1)..profiles.len() {
            let x = symmetric_kl(
                profiles[i].distribution.probs(),
                profiles[j].distribution.probs(),
            )?;
            let mut tau_sum = 0.0;
            for scope in &per_profile {
                tau_sum += kendall_tau(&scope[i], &scope[j])?;
            }
            let y = tau_sum / per_profile.len() as f64;
            points.push(CorrelationPoint {
                guest_a: profiles[i].guest_id.clone(),
                guest_b: profiles[j].guest_id.clone(),
                profile_distance: x,
                rank_correlation: y,
            });
        }
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.profile_distance, p.rank_correlation))
        .collect();
    let fit = ols_r2(&xy)?;
    Ok((points, fit))
}
