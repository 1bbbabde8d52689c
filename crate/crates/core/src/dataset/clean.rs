use super::record::{PostRecord, DAYS};

/// Mean and population standard deviation.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Drops samples whose final-day popularity lies more than three standard
/// deviations from the mean of the input. One pass; order is preserved.
pub fn clean_outliers(records: Vec<PostRecord>) -> (Vec<PostRecord>, Vec<String>) {
    if records.len() < 2 {
        log::warn!("outlier filter needs at least 2 records, got {}; passing through", records.len());
        return (records, Vec::new());
    }
    let finals: Vec<f64> = records
        .iter()
        .map(|r| r.popularity_on(DAYS).expect("cleaned records carry a full series"))
        .collect();
    let (mean, std) = mean_std(&finals);
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for (r, p) in records.into_iter().zip(finals) {
        if (p - mean).abs() > 3.0 * std {
            dropped.push(r.id);
        } else {
            kept.push(r);
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: usize, final_views: u64) -> PostRecord {
        PostRecord {
            id: format!("r{id}"),
            category: "Music".into(),
            title: String::new(),
            description: String::new(),
            tags: vec![],
            user_id: "u".into(),
            language: "en".into(),
            duration_s: 1.0,
            followers: 0,
            post_count: 0,
            views: (1..=30).map(|d| final_views * d / 30).collect(),
        }
    }

    #[test]
    fn identical_series_keep_everything() {
        let recs: Vec<_> = (0..10).map(|i| rec(i, 3000)).collect();
        let (kept, dropped) = clean_outliers(recs);
        assert_eq!(kept.len(), 10);
        assert!(dropped.is_empty());
    }

    #[test]
    fn single_record_passes_through() {
        let (kept, dropped) = clean_outliers(vec![rec(0, 5)]);
        assert_eq!(kept.len(), 1);
        assert!(dropped.is_empty());
    }

    #[test]
    fn far_outlier_is_the_only_drop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut recs: Vec<_> = (0..1000)
            .map(|i| rec(i, 30 * (1000 + rng.random_range(0..50))))
            .collect();
        // oracle: recompute mean and std of the cluster by hand, place one sample at μ + 10σ
        let finals: Vec<f64> = recs.iter().map(|r| ((r.views[29] as f64) / 30.0 + 1.0).log2()).collect();
        let n = finals.len() as f64;
        let mu = finals.iter().sum::<f64>() / n;
        let sigma = (finals.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
        let target = mu + 10.0 * sigma;
        let views = ((2f64.powf(target) - 1.0) * 30.0).round() as u64;
        recs.push(rec(9999, views / 30));
        let (kept, dropped) = clean_outliers(recs);
        assert_eq!(dropped, vec!["r9999".to_string()]);
        assert_eq!(kept.len(), 1000);
    }
}
