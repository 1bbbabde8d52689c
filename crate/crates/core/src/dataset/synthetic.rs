//! Seeded synthetic corpus: records with 30-day cumulative views plus the
//! matching feature packs.
//!
//! Each sample's final view count is `exp(L)` with
//! `L = base + content + user + category + language + surprise`, and views
//! accumulate along a saturating curve `1 − exp(−d/τ)`. The scale term
//! dominates the spread, so day-to-day popularity ranks stay highly
//! correlated. Embeddings are noisy projections of the content, user and
//! category latents; the heavy-tailed `surprise` term is visible only through
//! the early views.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use super::record::{PostRecord, CATEGORIES, DAYS};
use super::DataError;
use crate::featurepack::PackSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Number of distinct uploaders; 0 picks `max(n / 4, 1)`.
    pub users: usize,
    /// Fraction of samples without a cover image.
    pub blank_image_rate: f64,
    /// Weight of the surprise term only the early views reveal.
    pub surprise_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            visual_dim: 64,
            text_dim: 32,
            users: 0,
            blank_image_rate: 0.02,
            surprise_scale: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub records: Vec<PostRecord>,
    pub packs: PackSet,
}

const WORDS: [&str; 24] = [
    "live", "best", "new", "official", "video", "music", "how", "to", "make", "review", "top", "ten",
    "funny", "moments", "guide", "full", "match", "highlights", "vlog", "day", "in", "my", "life",
    "tutorial",
];

const LANGUAGE_MIX: [(&str, f64); 10] = [
    ("en", 0.50),
    ("es", 0.10),
    ("pt", 0.08),
    ("hi", 0.07),
    ("ru", 0.05),
    ("ja", 0.04),
    ("ko", 0.04),
    ("ar", 0.04),
    ("fr", 0.04),
    ("und", 0.04),
];

struct Projection {
    weights: Vec<Vec<f64>>,
}

impl Projection {
    fn new(rng: &mut ChaCha8Rng, dim: usize, latents: usize) -> Self {
        let n = Normal::new(0.0, 1.0 / (latents as f64).sqrt()).expect("valid normal");
        Projection {
            weights: (0..dim).map(|_| (0..latents).map(|_| n.sample(rng)).collect()).collect(),
        }
    }

    fn embed(&self, rng: &mut ChaCha8Rng, z: &[f64], noise: f64) -> Vec<f32> {
        let n = Normal::new(0.0, noise).expect("valid normal");
        self.weights
            .iter()
            .map(|w| (w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + n.sample(rng)) as f32)
            .collect()
    }
}

fn words(rng: &mut ChaCha8Rng, count: usize) -> String {
    (0..count)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate_synthetic(n: usize, seed: u64, config: &SyntheticConfig) -> Result<SyntheticSet, DataError> {
    if n < 1 {
        return Err(DataError::Config("synthetic sample count must be at least 1".into()));
    }
    if config.visual_dim == 0 || config.text_dim == 0 {
        return Err(DataError::Config("embedding dims must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let heavy = StudentT::new(3.0).expect("valid t");

    let category_effect: Vec<f64> = (0..CATEGORIES.len()).map(|_| 0.5 * std.sample(&mut rng)).collect();
    // per-category growth time constant in days
    let category_tau: Vec<f64> = (0..CATEGORIES.len()).map(|_| rng.random_range(2.0..5.0)).collect();
    let language_effect: Vec<f64> = LANGUAGE_MIX.iter().map(|_| 0.3 * std.sample(&mut rng)).collect();

    let users = if config.users == 0 { (n / 4).max(1) } else { config.users };
    let user_effect: Vec<f64> = (0..users).map(|_| 0.8 * std.sample(&mut rng)).collect();
    let user_followers: Vec<u64> = user_effect
        .iter()
        .map(|u| (8.0 + 1.5 * u + 0.5 * std.sample(&mut rng)).exp().round() as u64)
        .collect();
    let user_posts: Vec<u64> = (0..users).map(|_| rng.random_range(5..2000)).collect();

    let (vd, td) = (config.visual_dim, config.text_dim);
    let visual_proj = Projection::new(&mut rng, vd, 3);
    let title_proj = Projection::new(&mut rng, td, 2);
    let tags_proj = Projection::new(&mut rng, td, 2);
    let desc_proj = Projection::new(&mut rng, td, 1);
    let user_proj = Projection::new(&mut rng, td, 1);
    let category_proto: Vec<Vec<f32>> = (0..CATEGORIES.len())
        .map(|_| (0..td).map(|_| std.sample(&mut rng) as f32).collect())
        .collect();

    let mut records = Vec::with_capacity(n);
    let mut packs = PackSet::new(vd, td);
    let width = n.to_string().len();
    for i in 0..n {
        let id = format!("syn{i:0width$}");
        let cat = rng.random_range(0..CATEGORIES.len());
        let lang = {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            LANGUAGE_MIX
                .iter()
                .position(|(_, w)| {
                    acc += w;
                    r < acc
                })
                .unwrap_or(LANGUAGE_MIX.len() - 1)
        };
        let user = rng.random_range(0..users);
        let quality = std.sample(&mut rng);
        let surprise: f64 = heavy.sample(&mut rng);
        let surprise = surprise.clamp(-3.0, 3.0) * 0.6;
        let tau = (category_tau[cat] * (0.25 * std.sample(&mut rng)).exp()).clamp(1.0, 10.0);

        let log_scale = 7.0
            + 1.2 * quality
            + user_effect[user]
            + category_effect[cat]
            + language_effect[lang]
            + config.surprise_scale * surprise;
        let final_views = log_scale.exp();
        let norm = 1.0 - (-(DAYS as f64) / tau).exp();
        let frac = |d: f64| (1.0 - (-d / tau).exp()) / norm;
        let mut cumulative = 0.0f64;
        let mut views = Vec::with_capacity(DAYS);
        for d in 1..=DAYS {
            let inc = final_views * (frac(d as f64) - frac(d as f64 - 1.0)) * (0.1 * std.sample(&mut rng)).exp();
            cumulative += inc;
            views.push(cumulative.round() as u64);
        }

        let title_words = rng.random_range(2..9);
        let title = words(&mut rng, title_words);
        let tag_count = rng.random_range(0..8);
        let tags: Vec<String> = (0..tag_count).map(|_| words(&mut rng, 1)).collect();
        let desc_words = rng.random_range(0..40);
        let description = words(&mut rng, desc_words);
        let duration_s = (5.0 + 1.0 * std.sample(&mut rng)).exp().round().max(1.0);

        let tau_z = (tau - 3.5) / 1.5;
        if rng.random::<f64>() < config.blank_image_rate {
            packs.visual.push_zero(id.clone()).expect("fresh id");
        } else {
            let row = visual_proj.embed(&mut rng, &[quality, category_effect[cat], tau_z], 0.5);
            packs.visual.push(id.clone(), &row).expect("row dim");
        }
        let cat_row: Vec<f32> = category_proto[cat]
            .iter()
            .map(|x| x + 0.05 * std.sample(&mut rng) as f32)
            .collect();
        let rows = [
            cat_row,
            title_proj.embed(&mut rng, &[quality, language_effect[lang]], 0.6),
            tags_proj.embed(&mut rng, &[quality, tau_z], 0.8),
            desc_proj.embed(&mut rng, &[quality], 1.0),
            user_proj.embed(&mut rng, &[user_effect[user] / 0.8], 0.3),
        ];
        for (pack, row) in packs.text.iter_mut().zip(rows) {
            pack.push(id.clone(), &row).expect("row dim");
        }

        records.push(PostRecord {
            id,
            category: CATEGORIES[cat].to_string(),
            title,
            description,
            tags,
            user_id: format!("user{user}"),
            language: LANGUAGE_MIX[lang].0.to_string(),
            duration_s,
            followers: user_followers[user],
            post_count: user_posts[user],
            views,
        });
    }
    Ok(SyntheticSet { records, packs })
}
