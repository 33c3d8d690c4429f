//! Synthetic corpora with known ground truth, used by the test suites and
//! handy for demos: a planted-topic review corpus (disjoint per-topic
//! vocabularies) and a two-archetype guest population with directly
//! generated aspect distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abae::AspectDistribution;
use crate::corpus::RawReview;
use crate::profiles::{aggregate_bos, GuestProfile, RankingUniverse};
use crate::Result;

/// Layout of the planted-topic review corpus.
#[derive(Debug, Clone)]
pub struct PlantedCorpusConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    /// Listings sized to pass the summarize-set review-count window.
    pub eval_listings: usize,
    pub reviews_per_eval_listing: usize,
    pub train_listings: usize,
    pub reviews_per_train_listing: usize,
    /// Guests with enough sentences to qualify for ranking validation.
    pub prolific_guests: usize,
    pub reviews_per_prolific_guest: usize,
    pub min_sentences_per_review: usize,
    pub max_sentences_per_review: usize,
    pub min_tokens_per_sentence: usize,
    pub max_tokens_per_sentence: usize,
    /// Probability that a guest's sentence stays on their preferred topic.
    pub guest_loyalty: f64,
    pub seed: u64,
}

impl Default for PlantedCorpusConfig {
    fn default() -> Self {
        Self {
            topics: 5,
            words_per_topic: 40,
            eval_listings: 4,
            reviews_per_eval_listing: 12,
            train_listings: 40,
            reviews_per_train_listing: 8,
            prolific_guests: 6,
            reviews_per_prolific_guest: 6,
            min_sentences_per_review: 2,
            max_sentences_per_review: 3,
            min_tokens_per_sentence: 4,
            max_tokens_per_sentence: 9,
            guest_loyalty: 0.7,
            seed: 7,
        }
    }
}

/// The planted topic of a generated word, recoverable from its spelling
/// (`t<topic>w<index>`).
pub fn planted_topic_of(word: &str) -> Option<usize> {
    let rest = word.strip_prefix('t')?;
    let (topic, _) = rest.split_once('w')?;
    topic.parse().ok()
}

/// Generates reviews whose sentences each draw every token from a single
/// topic's vocabulary. Guests have a preferred topic; listings mix.
pub fn planted_reviews(config: &PlantedCorpusConfig) -> Vec<RawReview> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reviews = Vec::new();
    let mut review_seq = 0usize;

    let sentence = |rng: &mut ChaCha8Rng, topic: usize| -> String {
        let len = rng.random_range(config.min_tokens_per_sentence..=config.max_tokens_per_sentence);
        let words: Vec<String> = (0..len)
            .map(|_| format!("t{topic}w{}", rng.random_range(0..config.words_per_topic)))
            .collect();
        let mut text = words.join(" ");
        text.push('.');
        // Capitalize so the segmenter sees sentence-initial uppercase.
        text[..1].make_ascii_uppercase();
        text
    };
    let review_text = |rng: &mut ChaCha8Rng, preferred: usize, loyalty: f64| -> String {
        let n = rng.random_range(config.min_sentences_per_review..=config.max_sentences_per_review);
        let mut parts = Vec::with_capacity(n);
        for _ in 0..n {
            let topic = if rng.random::<f64>() < loyalty {
                preferred
            } else {
                rng.random_range(0..config.topics)
            };
            parts.push(sentence(rng, topic));
        }
        parts.join(" ")
    };
    let date = |i: usize| format!("2016-{:02}-{:02}", 1 + i % 12, 1 + i % 28);

    // Evaluation listings: enough reviews for the summarize window, written
    // by one-off guests.
    for l in 0..config.eval_listings {
        let listing_id = format!("E{l:02}");
        for r in 0..config.reviews_per_eval_listing {
            let guest_id = format!("GE{l:02}x{r:02}");
            let preferred = rng.random_range(0..config.topics);
            let text = review_text(&mut rng, preferred, config.guest_loyalty);
            reviews.push(RawReview {
                review_id: format!("R{review_seq:05}"),
                listing_id: listing_id.clone(),
                guest_id,
                date: date(review_seq),
                text,
            });
            review_seq += 1;
        }
    }

    // Prolific guests: many sentences spread over the training listings.
    for g in 0..config.prolific_guests {
        let guest_id = format!("P{g:02}");
        let preferred = g % config.topics;
        for r in 0..config.reviews_per_prolific_guest {
            let listing_id = format!("L{:03}", (g * 7 + r) % config.train_listings);
            let text = review_text(&mut rng, preferred, config.guest_loyalty);
            reviews.push(RawReview {
                review_id: format!("R{review_seq:05}"),
                listing_id,
                guest_id: guest_id.clone(),
                date: date(review_seq),
                text,
            });
            review_seq += 1;
        }
    }

    // Bulk training listings with one-off guests.
    for l in 0..config.train_listings {
        let listing_id = format!("L{l:03}");
        for r in 0..config.reviews_per_train_listing {
            let guest_id = format!("G{l:03}x{r:02}");
            let preferred = rng.random_range(0..config.topics);
            let text = review_text(&mut rng, preferred, config.guest_loyalty);
            reviews.push(RawReview {
                review_id: format!("R{review_seq:05}"),
                listing_id: listing_id.clone(),
                guest_id,
                date: date(review_seq),
                text,
            });
            review_seq += 1;
        }
    }
    reviews
}

/// Layout of the two-archetype population used for the reranking trend.
#[derive(Debug, Clone)]
pub struct ArchetypePopulationConfig {
    pub guests: usize,
    pub listings: usize,
    pub reviews_per_listing: usize,
    pub sentences_per_review: usize,
    pub sentences_per_guest: usize,
    pub aspects: usize,
    /// Mass placed on a sentence's dominant aspect.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for ArchetypePopulationConfig {
    fn default() -> Self {
        Self {
            guests: 20,
            listings: 30,
            reviews_per_listing: 5,
            sentences_per_review: 4,
            sentences_per_guest: 15,
            aspects: 3,
            concentration: 0.85,
            seed: 13,
        }
    }
}

fn concentrated(aspects: usize, dominant: usize, concentration: f64) -> AspectDistribution {
    let rest = (1.0 - concentration) / (aspects - 1) as f64;
    let probs: Vec<f64> = (0..aspects)
        .map(|k| if k == dominant { concentration } else { rest })
        .collect();
    AspectDistribution::new(probs).expect("valid simplex by construction")
}

/// Two archetypes of guests (aspect-0 lovers and aspect-1 lovers) with
/// varying loyalty, plus listings whose sentences mix the two aspects in
/// listing-specific proportions. Profiles come out of the real
/// bag-of-sentences aggregation; the universe carries listing-, review-, and
/// sentence-level distributions.
pub fn two_archetype_population(
    config: &ArchetypePopulationConfig,
) -> Result<(Vec<GuestProfile>, RankingUniverse)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let aspects = config.aspects;

    let mut profiles = Vec::with_capacity(config.guests);
    for g in 0..config.guests {
        let preferred = g % 2;
        let loyalty: f64 = rng.random_range(0.5..0.98);
        let sentences: Vec<AspectDistribution> = (0..config.sentences_per_guest)
            .map(|_| {
                let dominant = if rng.random::<f64>() < loyalty {
                    preferred
                } else {
                    rng.random_range(0..aspects)
                };
                concentrated(aspects, dominant, config.concentration)
            })
            .collect();
        profiles.push(aggregate_bos(&format!("guest{g:02}"), &sentences)?);
    }

    let mut listings = Vec::new();
    let mut reviews_by_listing = Vec::new();
    let mut sentences_by_listing = Vec::new();
    for l in 0..config.listings {
        let listing_id = format!("listing{l:02}");
        let lean: f64 = rng.random_range(0.1..0.9);
        let mut all_sentences: Vec<(String, AspectDistribution)> = Vec::new();
        let mut reviews: Vec<(String, AspectDistribution)> = Vec::new();
        for r in 0..config.reviews_per_listing {
            let review_id = format!("{listing_id}r{r}");
            let mut review_sentences = Vec::new();
            for s in 0..config.sentences_per_review {
                let roll: f64 = rng.random();
                let dominant = if roll < lean * 0.9 {
                    0
                } else if roll < 0.9 {
                    1
                } else {
                    rng.random_range(0..aspects)
                };
                let dist = concentrated(aspects, dominant, config.concentration);
                all_sentences.push((format!("{review_id}s{s}"), dist.clone()));
                review_sentences.push(dist);
            }
            let refs: Vec<&AspectDistribution> = review_sentences.iter().collect();
            let mean = {
                let k = refs[0].len();
                let mut m = vec![0.0; k];
                for d in &refs {
                    for (mi, &p) in m.iter_mut().zip(d.probs()) {
                        *mi += p;
                    }
                }
                for mi in m.iter_mut() {
                    *mi /= refs.len() as f64;
                }
                AspectDistribution::new(m)?
            };
            reviews.push((review_id, mean));
        }
        let listing_mean = {
            let k = all_sentences[0].1.len();
            let mut m = vec![0.0; k];
            for (_, d) in &all_sentences {
                for (mi, &p) in m.iter_mut().zip(d.probs()) {
                    *mi += p;
                }
            }
            for mi in m.iter_mut() {
                *mi /= all_sentences.len() as f64;
            }
            AspectDistribution::new(m)?
        };
        listings.push((listing_id.clone(), listing_mean));
        reviews_by_listing.push((listing_id.clone(), reviews));
        sentences_by_listing.push((listing_id, all_sentences));
    }

    Ok((
        profiles,
        RankingUniverse {
            listings,
            reviews_by_listing,
            sentences_by_listing,
            skipped: Vec::new(),
        },
    ))
}
