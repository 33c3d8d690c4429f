//! Corpus ingestion: sentence segmentation, tokenization, vocabulary
//! construction, id-encoding, and dataset splitting.
//!
//! Raw reviews arrive as one tab-separated record per line
//! (`review_id  listing_id  guest_id  date  text`). Sentences are segmented
//! with a rule-based splitter, tokenized into lowercase alphanumeric runs,
//! stopword-filtered, and encoded against a frequency-capped vocabulary.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One raw review record.
#[derive(Debug, Clone)]
pub struct RawReview {
    pub review_id: String,
    pub listing_id: String,
    pub guest_id: String,
    /// ISO-8601 day, e.g. `2016-04-01`.
    pub date: String,
    pub text: String,
}

impl RawReview {
    pub fn validate(&self) -> Result<()> {
        if self.review_id.is_empty() || self.listing_id.is_empty() || self.guest_id.is_empty() {
            return Err(Error::InvalidInput(format!(
                "review {:?}: ids must be non-empty",
                self.review_id
            )));
        }
        if !is_iso_date(&self.date) {
            return Err(Error::InvalidInput(format!(
                "review {}: unparseable date {:?}",
                self.review_id, self.date
            )));
        }
        Ok(())
    }
}

/// Checks `YYYY-MM-DD` with real month/day ranges (leap years included).
pub fn is_iso_date(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| -> Option<u32> { s[r].parse().ok() };
    let (Some(year), Some(month), Some(day)) = (digits(0..4), digits(5..7), digits(8..10)) else {
        return false;
    };
    if !(1..=12).contains(&month) || day == 0 {
        return false;
    }
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    let max_day = match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            if leap {
                29
            } else {
                28
            }
        }
    };
    day <= max_day
}

/// Parses reviews from tab-separated lines. Blank lines and `#` comments are
/// skipped; every record is validated.
pub fn read_reviews<R: BufRead>(reader: R) -> Result<Vec<RawReview>> {
    let mut reviews = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "line {}: expected 5 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let review = RawReview {
            review_id: fields[0].to_string(),
            listing_id: fields[1].to_string(),
            guest_id: fields[2].to_string(),
            date: fields[3].to_string(),
            text: fields[4].to_string(),
        };
        review.validate()?;
        reviews.push(review);
    }
    Ok(reviews)
}

pub fn write_reviews<W: Write>(writer: &mut W, reviews: &[RawReview]) -> Result<()> {
    for r in reviews {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t{}",
            r.review_id, r.listing_id, r.guest_id, r.date, r.text
        )?;
    }
    Ok(())
}

/// Words that block a sentence boundary when they precede a period.
/// Single-letter tokens (initials, and the tails of "e.g." / "i.e.") are
/// guarded by a separate rule in [`segment_sentences`].
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "approx", "apt", "ave",
    "blvd", "capt", "col", "gen", "lt", "rev", "sgt", "vol", "dept", "fig", "min", "max",
];

fn is_abbreviation(word: &str) -> bool {
    word.chars().count() == 1 || ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Splits text into sentences.
///
/// Rules, in order:
/// 1. A run of `.`, `!`, `?` is a boundary candidate; the boundary sits after
///    the last mark of the run.
/// 2. The candidate is confirmed at end of text, or when followed by
///    whitespace and an uppercase letter.
/// 3. A run ending in `.` is suppressed when the word before it is a known
///    abbreviation or a single letter.
/// 4. Segments are trimmed; empty segments are dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if !matches!(chars[i], '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut end = i;
        while end + 1 < chars.len() && matches!(chars[end + 1], '.' | '!' | '?') {
            end += 1;
        }
        let mut boundary = true;
        if chars[end] == '.' {
            // Collect the alphabetic word immediately before the run.
            let mut w = i;
            let mut word = String::new();
            while w > 0 && chars[w - 1].is_alphabetic() {
                word.insert(0, chars[w - 1]);
                w -= 1;
            }
            if !word.is_empty() && is_abbreviation(&word) {
                boundary = false;
            }
        }
        if boundary {
            let mut next = end + 1;
            while next < chars.len() && chars[next].is_whitespace() {
                next += 1;
            }
            if next == end + 1 && next < chars.len() {
                // No whitespace after the run ("U.S.", "3.5").
                boundary = false;
            } else if next < chars.len() && !chars[next].is_uppercase() {
                boundary = false;
            }
        }
        if boundary {
            let sentence: String = chars[start..=end].iter().collect();
            let trimmed = sentence.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            start = end + 1;
        }
        i = end + 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

/// The stopword list shipped with the crate (one word per line).
pub fn default_stopwords() -> &'static HashSet<&'static str> {
    static STOPWORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    STOPWORDS.get_or_init(|| {
        include_str!("../data/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .collect()
    })
}

/// Lowercases, strips punctuation (tokens are maximal alphanumeric runs),
/// and removes stopwords. Order is preserved.
pub fn tokenize_and_filter(sentence: &str, stopwords: &HashSet<&str>) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in sentence.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            if !stopwords.contains(current.as_str()) {
                tokens.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    if !current.is_empty() && !stopwords.contains(current.as_str()) {
        tokens.push(current);
    }
    tokens
}

/// Fraction of non-whitespace characters that are ASCII; used by the optional
/// language heuristic.
pub fn ascii_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut ascii = 0usize;
    for ch in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if ch.is_ascii() {
            ascii += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        ascii as f64 / total as f64
    }
}

/// Token-to-id mapping over the `max_size` most frequent words, ranked by
/// descending frequency with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    frequencies: Vec<u64>,
    id_of: HashMap<String, u32>,
    max_size: usize,
}

/// Default vocabulary cap.
pub const DEFAULT_VOCAB_SIZE: usize = 9000;

impl Vocabulary {
    /// Builds the vocabulary from token streams.
    pub fn build<'a, I, S>(streams: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        if max_size == 0 {
            return Err(Error::InvalidInput("max_size must be at least 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for stream in streams {
            for token in stream {
                *counts.entry(token.to_string()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("empty corpus".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);
        let words: Vec<String> = ranked.iter().map(|(w, _)| w.clone()).collect();
        let frequencies: Vec<u64> = ranked.iter().map(|(_, f)| *f).collect();
        let id_of = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Self {
            words,
            frequencies,
            id_of,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.id_of.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.frequencies[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    /// SHA-256 over the words in rank order; binds embeddings and checkpoints
    /// to the vocabulary they were trained against.
    pub fn hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().into()
    }

    /// One `word TAB frequency` line per word, in rank order.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        for (w, f) in self.words.iter().zip(&self.frequencies) {
            writeln!(writer, "{w}\t{f}")?;
        }
        Ok(())
    }

    /// Builds a vocabulary from already-ranked words, e.g. when loading an
    /// embedding file whose word order defines the ids.
    pub fn from_ranked(words: Vec<String>, frequencies: Vec<u64>, max_size: usize) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidInput("empty corpus".into()));
        }
        if words.len() != frequencies.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} words vs {} frequencies",
                words.len(),
                frequencies.len()
            )));
        }
        let id_of: HashMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        if id_of.len() != words.len() {
            return Err(Error::InvalidInput("duplicate word in vocabulary".into()));
        }
        Ok(Self {
            words,
            frequencies,
            id_of,
            max_size,
        })
    }

    pub fn load<R: BufRead>(reader: R, max_size: usize) -> Result<Self> {
        let mut words = Vec::new();
        let mut frequencies = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (word, freq) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("vocabulary line {}: missing tab", lineno + 1))
            })?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| Error::Parse(format!("vocabulary line {}: bad count", lineno + 1)))?;
            words.push(word.to_string());
            frequencies.push(freq);
        }
        if words.is_empty() {
            return Err(Error::InvalidInput("empty corpus".into()));
        }
        let id_of = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Self {
            words,
            frequencies,
            id_of,
            max_size,
        })
    }
}

/// An id-encoded sentence with its review/listing/guest identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub token_ids: Vec<u32>,
    pub review_id: String,
    pub listing_id: String,
    pub guest_id: String,
    /// Index of the sentence within its review.
    pub position: u32,
}

/// Encoding options.
#[derive(Debug, Clone, Default)]
pub struct EncodeOptions {
    /// Drop sentences whose non-whitespace ASCII ratio falls below this
    /// threshold. A coarse stand-in for language identification.
    pub min_ascii_ratio: Option<f64>,
}

/// The encoded corpus plus listing/guest indexes over sentence positions.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub sentences: Vec<EncodedSentence>,
    /// Original sentence text, parallel to `sentences`.
    pub texts: Vec<String>,
    by_listing: BTreeMap<String, Vec<usize>>,
    by_guest: BTreeMap<String, Vec<usize>>,
    by_review: BTreeMap<String, Vec<usize>>,
}

impl EncodedCorpus {
    pub fn new(sentences: Vec<EncodedSentence>, texts: Vec<String>) -> Result<Self> {
        if sentences.len() != texts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sentences vs {} texts",
                sentences.len(),
                texts.len()
            )));
        }
        Ok(Self::from_parts(sentences, texts))
    }

    fn from_parts(sentences: Vec<EncodedSentence>, texts: Vec<String>) -> Self {
        let mut by_listing: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_guest: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_review: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in sentences.iter().enumerate() {
            by_listing.entry(s.listing_id.clone()).or_default().push(i);
            by_guest.entry(s.guest_id.clone()).or_default().push(i);
            by_review.entry(s.review_id.clone()).or_default().push(i);
        }
        Self {
            sentences,
            texts,
            by_listing,
            by_guest,
            by_review,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn listing_ids(&self) -> impl Iterator<Item = &String> {
        self.by_listing.keys()
    }

    pub fn guest_ids(&self) -> impl Iterator<Item = &String> {
        self.by_guest.keys()
    }

    pub fn review_ids(&self) -> impl Iterator<Item = &String> {
        self.by_review.keys()
    }

    pub fn sentences_of_listing(&self, listing_id: &str) -> &[usize] {
        self.by_listing.get(listing_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sentences_of_guest(&self, guest_id: &str) -> &[usize] {
        self.by_guest.get(guest_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sentences_of_review(&self, review_id: &str) -> &[usize] {
        self.by_review.get(review_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Review ids of a listing, ordered by first sentence position.
    pub fn reviews_of_listing(&self, listing_id: &str) -> Vec<&String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &i in self.sentences_of_listing(listing_id) {
            let rid = &self.sentences[i].review_id;
            if seen.insert(rid) {
                out.push(rid);
            }
        }
        out
    }

    /// A new corpus containing only the given sentence indices.
    pub fn subset(&self, indices: &[usize]) -> EncodedCorpus {
        let sentences = indices.iter().map(|&i| self.sentences[i].clone()).collect();
        let texts = indices.iter().map(|&i| self.texts[i].clone()).collect();
        Self::from_parts(sentences, texts)
    }

    /// Line format: `review_id TAB listing_id TAB guest_id TAB position TAB
    /// space-separated-token-ids TAB original-text`.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<()> {
        for (s, text) in self.sentences.iter().zip(&self.texts) {
            let mut ids = String::new();
            for (j, id) in s.token_ids.iter().enumerate() {
                if j > 0 {
                    ids.push(' ');
                }
                let _ = write!(ids, "{id}");
            }
            writeln!(
                writer,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.review_id, s.listing_id, s.guest_id, s.position, ids, text
            )?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut texts = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(6, '\t').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!(
                    "corpus line {}: expected 6 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let position: u32 = fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("corpus line {}: bad position", lineno + 1)))?;
            let token_ids = fields[4]
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<u32>().map_err(|_| {
                        Error::Parse(format!("corpus line {}: bad token id", lineno + 1))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            sentences.push(EncodedSentence {
                token_ids,
                review_id: fields[0].to_string(),
                listing_id: fields[1].to_string(),
                guest_id: fields[2].to_string(),
                position,
            });
            texts.push(fields[5].to_string());
        }
        Ok(Self::from_parts(sentences, texts))
    }
}

/// Segments, tokenizes, and encodes reviews against `vocab`. Out-of-vocabulary
/// tokens are dropped; sentences that end up empty are dropped.
pub fn encode_corpus(
    reviews: &[RawReview],
    vocab: &Vocabulary,
    options: &EncodeOptions,
) -> EncodedCorpus {
    let stopwords = default_stopwords();
    let mut sentences = Vec::new();
    let mut texts = Vec::new();
    for review in reviews {
        for (position, sentence) in segment_sentences(&review.text).into_iter().enumerate() {
            if let Some(threshold) = options.min_ascii_ratio {
                if ascii_ratio(&sentence) < threshold {
                    continue;
                }
            }
            let token_ids: Vec<u32> = tokenize_and_filter(&sentence, stopwords)
                .iter()
                .filter_map(|t| vocab.id(t))
                .collect();
            if token_ids.is_empty() {
                continue;
            }
            sentences.push(EncodedSentence {
                token_ids,
                review_id: review.review_id.clone(),
                listing_id: review.listing_id.clone(),
                guest_id: review.guest_id.clone(),
                position: position as u32,
            });
            texts.push(sentence);
        }
    }
    EncodedCorpus::from_parts(sentences, texts)
}

/// Thresholds that carve the corpus into train/evaluation sets.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitRules {
    /// Listings eligible for the summarization sets need a review count in
    /// `[min_reviews_per_listing, max_reviews_per_listing]`.
    pub min_reviews_per_listing: usize,
    pub max_reviews_per_listing: usize,
    /// Guests eligible for ranking validation need at least this many
    /// sentences.
    pub min_guest_sentences: usize,
    /// Ranking-test listings need at least this many sentences.
    pub min_listing_sentences: usize,
    /// Number of guests sampled into the ranking validation set.
    pub rank_guests: usize,
    /// Fraction of eligible listings assigned to summarize_val.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitRules {
    fn default() -> Self {
        Self {
            min_reviews_per_listing: 50,
            max_reviews_per_listing: 100,
            min_guest_sentences: 10,
            min_listing_sentences: 20,
            rank_guests: 20,
            val_fraction: 0.5,
            seed: 1,
        }
    }
}

/// Dataset splits. `train` holds sentence indices into the source corpus; the
/// evaluation sets are listing or guest id lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub summarize_val: Vec<String>,
    pub summarize_test: Vec<String>,
    pub rank_val: Vec<String>,
    pub rank_test: Vec<String>,
}

/// Splits the corpus:
///
/// 1. Listings whose review count lies in the configured range become
///    summarization listings, shuffled (seeded) and divided into val/test.
/// 2. Guests with enough sentences are sampled into the ranking validation
///    set.
/// 3. Ranking-test listings are the summarize-test listings with enough
///    sentences.
/// 4. Train is every sentence from the remaining listings, minus sentences
///    written by ranking-validation guests.
pub fn split_datasets(corpus: &EncodedCorpus, rules: &SplitRules) -> Result<Splits> {
    let mut eligible_listings: Vec<String> = corpus
        .listing_ids()
        .filter(|lid| {
            let reviews = corpus.reviews_of_listing(lid).len();
            reviews >= rules.min_reviews_per_listing && reviews <= rules.max_reviews_per_listing
        })
        .cloned()
        .collect();
    if eligible_listings.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "insufficient corpus: {} listings with {}..={} reviews (need at least 2 \
             to fill summarize_val and summarize_test)",
            eligible_listings.len(),
            rules.min_reviews_per_listing,
            rules.max_reviews_per_listing
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rules.seed);
    eligible_listings.shuffle(&mut rng);
    let val_len = ((eligible_listings.len() as f64 * rules.val_fraction).round() as usize)
        .clamp(1, eligible_listings.len() - 1);
    let mut summarize_val: Vec<String> = eligible_listings[..val_len].to_vec();
    let mut summarize_test: Vec<String> = eligible_listings[val_len..].to_vec();
    summarize_val.sort();
    summarize_test.sort();

    let mut eligible_guests: Vec<String> = corpus
        .guest_ids()
        .filter(|gid| corpus.sentences_of_guest(gid).len() >= rules.min_guest_sentences)
        .cloned()
        .collect();
    if eligible_guests.is_empty() {
        return Err(Error::InvalidInput(format!(
            "insufficient corpus: no guest has at least {} sentences",
            rules.min_guest_sentences
        )));
    }
    eligible_guests.shuffle(&mut rng);
    eligible_guests.truncate(rules.rank_guests);
    let mut rank_val = eligible_guests;
    rank_val.sort();

    let rank_test: Vec<String> = summarize_test
        .iter()
        .filter(|lid| corpus.sentences_of_listing(lid).len() >= rules.min_listing_sentences)
        .cloned()
        .collect();
    if rank_test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "insufficient corpus: no summarize_test listing has at least {} sentences",
            rules.min_listing_sentences
        )));
    }

    let held_listings: HashSet<&String> = summarize_val.iter().chain(&summarize_test).collect();
    let held_guests: HashSet<&String> = rank_val.iter().collect();
    let train: Vec<usize> = corpus
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            !held_listings.contains(&s.listing_id) && !held_guests.contains(&s.guest_id)
        })
        .map(|(i, _)| i)
        .collect();
    if train.is_empty() {
        return Err(Error::InvalidInput(
            "insufficient corpus: no sentences left for the training set".into(),
        ));
    }
    Ok(Splits {
        train,
        summarize_val,
        summarize_test,
        rank_val,
        rank_test,
    })
}

impl Splits {
    /// Manifest format: a `# kind` header line, then one id per line. The
    /// train manifest stores `review_id TAB position` sentence keys.
    pub fn save_manifest<W: Write>(
        &self,
        writer: &mut W,
        split: &str,
        corpus: &EncodedCorpus,
    ) -> Result<()> {
        match split {
            "train" => {
                writeln!(writer, "# sentences")?;
                for &i in &self.train {
                    let s = &corpus.sentences[i];
                    writeln!(writer, "{}\t{}", s.review_id, s.position)?;
                }
            }
            "summarize_val" | "summarize_test" | "rank_test" => {
                writeln!(writer, "# listings")?;
                let ids = match split {
                    "summarize_val" => &self.summarize_val,
                    "summarize_test" => &self.summarize_test,
                    _ => &self.rank_test,
                };
                for id in ids {
                    writeln!(writer, "{id}")?;
                }
            }
            "rank_val" => {
                writeln!(writer, "# guests")?;
                for id in &self.rank_val {
                    writeln!(writer, "{id}")?;
                }
            }
            other => {
                return Err(Error::InvalidInput(format!("unknown split {other:?}")));
            }
        }
        Ok(())
    }

    pub fn load_train_manifest<R: BufRead>(reader: R, corpus: &EncodedCorpus) -> Result<Vec<usize>> {
        let mut key_to_index: HashMap<(String, u32), usize> = HashMap::new();
        for (i, s) in corpus.sentences.iter().enumerate() {
            key_to_index.insert((s.review_id.clone(), s.position), i);
        }
        let mut train = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (review_id, position) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("train manifest line {line:?}")))?;
            let position: u32 = position
                .parse()
                .map_err(|_| Error::Parse(format!("train manifest line {line:?}")))?;
            let idx = key_to_index
                .get(&(review_id.to_string(), position))
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "train manifest references unknown sentence {review_id}:{position}"
                    ))
                })?;
            train.push(*idx);
        }
        Ok(train)
    }

    pub fn load_id_manifest<R: BufRead>(reader: R) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            ids.push(line);
        }
        Ok(ids)
    }
}
