use serde::{Deserialize, Serialize};

use super::DataError;

/// Length of every popularity series.
pub const DAYS: usize = 30;

/// Platform category vocabulary. Index `CATEGORIES.len()` is the unknown token.
pub const CATEGORIES: [&str; 15] = [
    "Film & Animation",
    "Autos & Vehicles",
    "Music",
    "Pets & Animals",
    "Sports",
    "Travel & Events",
    "Gaming",
    "People & Blogs",
    "Comedy",
    "Entertainment",
    "News & Politics",
    "Howto & Style",
    "Education",
    "Science & Technology",
    "Nonprofits & Activism",
];

/// Language codes with their own embedding row. Index `LANGUAGES.len()` is
/// shared by "und" and every code not listed here.
pub const LANGUAGES: [&str; 24] = [
    "en", "es", "pt", "hi", "ar", "ru", "ja", "ko", "fr", "de", "id", "it", "tr", "vi", "th", "zh",
    "bn", "ur", "fa", "pl", "nl", "tl", "ms", "uk",
];

pub const UNKNOWN_LANGUAGE: &str = "und";

pub fn category_vocab_size() -> usize {
    CATEGORIES.len() + 1
}

pub fn language_vocab_size() -> usize {
    LANGUAGES.len() + 1
}

pub fn category_token(category: &str) -> usize {
    CATEGORIES
        .iter()
        .position(|c| *c == category)
        .unwrap_or(CATEGORIES.len())
}

pub fn language_token(code: &str) -> usize {
    LANGUAGES
        .iter()
        .position(|c| *c == code)
        .unwrap_or(LANGUAGES.len())
}

fn default_language() -> String {
    UNKNOWN_LANGUAGE.to_string()
}

/// One post with its metadata and cumulative daily view counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub id: String,
    pub category: String,
    pub title: String,
    pub description: String,
    pub tags: Vec<String>,
    pub user_id: String,
    #[serde(default = "default_language")]
    pub language: String,
    pub duration_s: f64,
    pub followers: u64,
    pub post_count: u64,
    /// Cumulative views at the end of day 1, 2, ...
    pub views: Vec<u64>,
}

impl PostRecord {
    pub fn category_token(&self) -> usize {
        category_token(&self.category)
    }

    pub fn language_token(&self) -> usize {
        language_token(&self.language)
    }

    /// Popularity scores for every observed day.
    pub fn popularity(&self) -> PopularitySeries {
        PopularitySeries {
            id: self.id.clone(),
            p: self
                .views
                .iter()
                .enumerate()
                .map(|(d, &v)| score(v as f64, d + 1))
                .collect(),
        }
    }

    /// Popularity on a 1-based day, if observed.
    pub fn popularity_on(&self, day: usize) -> Option<f64> {
        let v = *self.views.get(day.checked_sub(1)?)?;
        Some(score(v as f64, day))
    }
}

/// Per-day popularity scores of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularitySeries {
    pub id: String,
    pub p: Vec<f64>,
}

fn score(views: f64, day: usize) -> f64 {
    (views / day as f64 + 1.0).log2()
}

/// `log2(views / day + 1)` for cumulative `views` after `day` days.
pub fn popularity_score(views: f64, day: usize) -> Result<f64, DataError> {
    if !(1..=DAYS).contains(&day) {
        return Err(DataError::Domain(format!("day {day} outside 1..={DAYS}")));
    }
    if !(views >= 0.0) {
        return Err(DataError::Domain(format!("view count {views} is negative")));
    }
    Ok(score(views, day))
}
