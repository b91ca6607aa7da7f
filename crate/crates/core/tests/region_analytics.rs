use std::collections::HashMap;

use proptest::prelude::*;
use relprop::analytics::{distribution_summary, mean_relevance_matrix, per_genre_label_summaries};
use relprop::region::{region_relevance, scale_box, BoundingBox, RelevanceRecord};
use relprop::Tensor;

fn map_from(values: &[f64], h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(vec![h, w], values.to_vec()).unwrap()
}

fn record(genre: &str, label: &str, r_obj: f64) -> RelevanceRecord {
    RelevanceRecord {
        image_id: format!("{genre}-{label}-{r_obj}"),
        genre: genre.into(),
        label: label.into(),
        r_obj,
        box_area_fraction: 0.1,
    }
}

fn records_strategy() -> impl Strategy<Value = Vec<RelevanceRecord>> {
    prop::collection::vec((0..4usize, 0..3usize, -100i32..100), 1..60).prop_map(|raw| {
        raw.into_iter()
            .map(|(g, l, v)| record(&format!("genre{g}"), &format!("obj{l}"), v as f64 / 8.0))
            .collect()
    })
}

proptest! {
    #[test]
    fn enlarging_a_box_never_loses_nonnegative_relevance(
        values in prop::collection::vec(0.0f64..1.0, 16 * 16),
        (x0, y0) in (0usize..8, 0usize..8),
        (w, h) in (1usize..8, 1usize..8),
        (gx, gy) in (0usize..=8, 0usize..=8),
    ) {
        let map = map_from(&values, 16, 16);
        let inner = BoundingBox::new([x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64], "o", 1.0, (16, 16)).unwrap();
        let outer = BoundingBox::new(
            [x0 as f64, y0 as f64, ((x0 + w + gx).min(16)) as f64, ((y0 + h + gy).min(16)) as f64],
            "o", 1.0, (16, 16),
        ).unwrap();
        prop_assert!(region_relevance(&map, &outer).unwrap() >= region_relevance(&map, &inner).unwrap());
    }

    #[test]
    fn splitting_a_box_is_additive(
        values in prop::collection::vec(-1.0f64..1.0, 12 * 12),
        cut in 1usize..12,
    ) {
        let map = map_from(&values, 12, 12);
        let whole = BoundingBox::new([0.0, 0.0, 12.0, 12.0], "o", 1.0, (12, 12)).unwrap();
        let left = BoundingBox::new([0.0, 0.0, cut as f64, 12.0], "o", 1.0, (12, 12)).unwrap();
        let right = BoundingBox::new([cut as f64, 0.0, 12.0, 12.0], "o", 1.0, (12, 12)).unwrap();
        let parts = region_relevance(&map, &left).unwrap() + region_relevance(&map, &right).unwrap();
        let total = region_relevance(&map, &whole).unwrap();
        prop_assert!((parts - total).abs() <= 1e-12 * (1.0 + total.abs()));
        prop_assert!((total - values.iter().sum::<f64>()).abs() <= 1e-12 * 144.0);
    }

    #[test]
    fn scaling_to_the_same_resolution_is_identity(
        (x0, y0) in (0u32..50, 0u32..50),
        (w, h) in (1u32..50, 1u32..50),
    ) {
        let b = BoundingBox::new([x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64], "o", 0.9, (100, 100)).unwrap();
        prop_assert_eq!(scale_box(&b, (100, 100)).unwrap(), b);
    }

    #[test]
    fn matrix_is_permutation_invariant(records in records_strategy(), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        relprop::rng::XorShiftRng::new(seed).shuffle(&mut shuffled);
        let a = mean_relevance_matrix(&records, 1).unwrap();
        let b = mean_relevance_matrix(&shuffled, 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn matrix_matches_grouped_mean(records in records_strategy(), threshold in 1usize..6) {
        let mut groups: HashMap<(String, String), Vec<f64>> = HashMap::new();
        for r in &records {
            groups.entry((r.genre.clone(), r.label.clone())).or_default().push(r.r_obj);
        }
        let m = mean_relevance_matrix(&records, threshold).unwrap();
        for g in &m.genres {
            for l in &m.labels {
                let expected = groups.get(&(g.clone(), l.clone())).filter(|v| v.len() >= threshold);
                match (m.get(g, l), expected) {
                    (Some(cell), Some(v)) => {
                        prop_assert_eq!(cell.count, v.len());
                        let mean = v.iter().sum::<f64>() / v.len() as f64;
                        prop_assert!((cell.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
                    }
                    (None, None) => {}
                    (got, want) => prop_assert!(false, "{g}/{l}: {got:?} vs {want:?}"),
                }
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_removes_cells(records in records_strategy(), t in 1usize..6) {
        let low = mean_relevance_matrix(&records, t).unwrap();
        let high = mean_relevance_matrix(&records, t + 1).unwrap();
        for g in &low.genres {
            for l in &low.labels {
                if let Some(cell) = high.get(g, l) {
                    prop_assert_eq!(low.get(g, l), Some(cell));
                }
            }
        }
    }

    #[test]
    fn adding_the_mean_keeps_the_mean(values in prop::collection::vec(-50i32..50, 1..30)) {
        let mut records: Vec<_> = values.iter().map(|&v| record("g", "o", v as f64)).collect();
        let before = mean_relevance_matrix(&records, 1).unwrap().get("g", "o").unwrap();
        records.push(record("g", "o", before.mean));
        let after = mean_relevance_matrix(&records, 1).unwrap().get("g", "o").unwrap();
        prop_assert_eq!(after.count, before.count + 1);
        prop_assert!((after.mean - before.mean).abs() <= 1e-12 * (1.0 + before.mean.abs()));
    }

    #[test]
    fn summary_is_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let s = distribution_summary(&values).unwrap();
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
        prop_assert_eq!(s.count, values.len());
    }

    #[test]
    fn per_genre_summaries_cover_every_record_of_the_label(records in records_strategy()) {
        let summaries = per_genre_label_summaries(&records, "obj0");
        let covered: usize = summaries.iter().map(|s| s.stats.count).sum();
        prop_assert_eq!(covered, records.iter().filter(|r| r.label == "obj0").count());
        prop_assert!(summaries.windows(2).all(|w| w[0].genre < w[1].genre));
    }
}
