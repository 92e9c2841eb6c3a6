//! Property tests over the crate's cross-cutting invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use wssas_core::backends::stub::{StubEmbedder, StubGenerator};
use wssas_core::backends::{cosine, EmbeddingBackend, EmbeddingVector, GenerationRequest, GenerativeBackend, TemplateId};
use wssas_core::categorize::sankey;
use wssas_core::corpus::{self, Corpus, DataPoint};
use wssas_core::evalqa::{aggregate_wins, encode_comparison};
use wssas_core::metrics::{
    calinski_harabasz, davies_bouldin, silhouette, LabeledPoints,
};
use wssas_core::snr::{keyword_profile_from_counts, rank_order, SnrScore};

fn vector_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 4)
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_self_similar(a in vector_strategy(), b in vector_strategy()) {
        let u = EmbeddingVector(a);
        let v = EmbeddingVector(b);
        let uv = cosine(&u, &v).unwrap();
        let vu = cosine(&v, &u).unwrap();
        prop_assert!((uv - vu).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&uv));
        if !u.is_zero() {
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}

fn corpus_strategy() -> impl Strategy<Value = Vec<DataPoint>> {
    let word = prop::sample::select(vec![
        "pizza", "salad", "galaxy", "comet", "violin", "tempo", "river", "stone",
    ]);
    let text = prop::collection::vec(word, 1..6).prop_map(|ws| ws.join(" "));
    prop::collection::vec(
        (0u16..1000, text, 0u8..4, 0u32..700, prop::option::of(1u8..=5)),
        1..20,
    )
    .prop_map(|rows| {
        let mut seen = std::collections::BTreeSet::new();
        rows.into_iter()
            .filter_map(|(id, text, entity, day_offset, rating)| {
                if !seen.insert(id) {
                    return None;
                }
                let date = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)?
                    + chrono::Days::new(u64::from(day_offset));
                Some(DataPoint {
                    id: format!("p{id:04}"),
                    text,
                    entity_id: format!("e{entity}"),
                    timestamp: date,
                    rating,
                })
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_jsonl_round_trip_is_byte_identical(points in corpus_strategy()) {
        prop_assume!(!points.is_empty());
        let corpus = Corpus::new(points).unwrap();
        let mut first = Vec::new();
        corpus.write_jsonl(&mut first).unwrap();
        let reread = corpus::read_jsonl(&first[..]).unwrap();
        let mut second = Vec::new();
        reread.write_jsonl(&mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn characterize_conserves_totals_and_partitions_entities(points in corpus_strategy()) {
        prop_assume!(!points.is_empty());
        let corpus = Corpus::new(points).unwrap();
        let profile = corpus::characterize(&corpus).unwrap();
        let entities: usize = profile.cells.iter().map(|c| c.entity_count).sum();
        let datapoints: usize = profile.cells.iter().map(|c| c.datapoint_count).sum();
        prop_assert_eq!(entities, profile.total_entities);
        prop_assert_eq!(datapoints, profile.total_datapoints);
        let pct: f64 = profile.cells.iter().map(|c| c.datapoint_pct).sum();
        prop_assert!((pct - 100.0).abs() < 1e-9);
    }
}

fn labeled_points_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..4, 4usize..10, 1usize..4).prop_flat_map(|(k, n, dim)| {
        let points = prop::collection::vec(
            prop::collection::vec(-5.0f64..5.0, dim),
            n,
        );
        let labels = prop::collection::vec(0..k, n);
        (points, labels).prop_filter("all labels used", move |(_, labels)| {
            (0..k).all(|l| labels.contains(&l))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_invariant_under_permutation_and_relabeling(
        (points, labels) in labeled_points_strategy(),
        relabel_offset in 1usize..5,
    ) {
        let base = LabeledPoints::new(points.clone(), labels.clone()).unwrap();

        // Reverse the point order.
        let mut rev_points = points.clone();
        rev_points.reverse();
        let mut rev_labels = labels.clone();
        rev_labels.reverse();
        let permuted = LabeledPoints::new(rev_points, rev_labels).unwrap();

        // Shift every label by a constant.
        let shifted_labels: Vec<usize> = labels.iter().map(|l| l + relabel_offset).collect();
        let relabeled = LabeledPoints::new(points, shifted_labels).unwrap();

        let close = |x: Result<f64, _>, y: Result<f64, _>| match (x, y) {
            (Ok(a), Ok(b)) => (a - b).abs() < 1e-12 * a.abs().max(1.0),
            (Err(_), Err(_)) => true,
            _ => false,
        };
        prop_assert!(close(silhouette(&base), silhouette(&permuted)));
        prop_assert!(close(silhouette(&base), silhouette(&relabeled)));
        prop_assert!(close(davies_bouldin(&base), davies_bouldin(&permuted)));
        prop_assert!(close(davies_bouldin(&base), davies_bouldin(&relabeled)));
        prop_assert!(close(calinski_harabasz(&base), calinski_harabasz(&permuted)));
        prop_assert!(close(calinski_harabasz(&base), calinski_harabasz(&relabeled)));
    }

    #[test]
    fn snr_total_is_the_exact_component_sum(
        s1 in 0.0f64..1.0,
        s2 in 0.0f64..1.0,
        s3 in 0.0f64..1.0,
    ) {
        let score = SnrScore::new(s1, s2, s3);
        prop_assert_eq!(score.total, score.s_theme + score.s_story + score.s_cluster);
    }

    #[test]
    fn keyword_profile_is_invariant_under_count_scaling(
        counts in prop::collection::btree_map("[a-f]{1,3}", 1u64..50, 1..8),
        scale in 2u64..9,
    ) {
        let scaled: BTreeMap<String, u64> =
            counts.iter().map(|(t, c)| (t.clone(), c * scale)).collect();
        let base = keyword_profile_from_counts(0, &counts, 5);
        let multiplied = keyword_profile_from_counts(0, &scaled, 5);
        prop_assert_eq!(base, multiplied);
    }

    #[test]
    fn rank_order_is_deterministic_and_total(totals in prop::collection::vec((0u16..50, 0.0f64..3.0), 0..20)) {
        let scored: Vec<(String, f64)> = totals
            .into_iter()
            .map(|(id, t)| (format!("p{id}"), t))
            .collect();
        let a = rank_order(&scored);
        let b = rank_order(&scored);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), scored.len());
    }

    #[test]
    fn sankey_flows_conserve_counts(
        labels in prop::collection::vec((0usize..5, 0usize..5), 1..40),
    ) {
        let a: BTreeMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, (la, _))| (format!("p{i}"), *la))
            .collect();
        let b: BTreeMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, (_, lb))| (format!("p{i}"), *lb))
            .collect();
        let flows = sankey(&a, &b).unwrap();
        let total: u64 = flows.values().sum();
        prop_assert_eq!(total as usize, labels.len());
        // Row sums match source-category sizes.
        for category in a.values().collect::<std::collections::BTreeSet<_>>() {
            let row: u64 = flows
                .iter()
                .filter(|((from, _), _)| *from == *category)
                .map(|(_, count)| count)
                .sum();
            let size = a.values().filter(|v| *v == category).count();
            prop_assert_eq!(row as usize, size);
        }
    }

    #[test]
    fn win_rate_is_permutation_invariant_and_bounded(
        mut encodings in prop::collection::vec(-1i8..=1, 1..30),
    ) {
        let forward = aggregate_wins(&encodings).unwrap();
        encodings.reverse();
        let backward = aggregate_wins(&encodings).unwrap();
        prop_assert_eq!(forward, backward);
        prop_assert!((0.0..=100.0).contains(&forward));
    }

    #[test]
    fn encoding_always_matches_the_sign(w in 0usize..10, u in 0usize..10) {
        let expected = (w as i64 - u as i64).signum() as i8;
        prop_assert_eq!(encode_comparison(w, u), expected);
    }

    #[test]
    fn stub_generation_is_pure(template_idx in 0usize..7, texts in prop::collection::vec("[a-z ]{0,40}", 1..4)) {
        let gen = StubGenerator::new();
        let request = GenerationRequest::new(TemplateId::ALL[template_idx], texts)
            .with_param("n", 4.0);
        prop_assert_eq!(gen.generate(&request).unwrap(), gen.generate(&request).unwrap());
    }

    #[test]
    fn stub_embeddings_are_unit_or_zero(text in "[a-z .!?]{0,60}") {
        let embedder = StubEmbedder::new();
        let v = embedder.embed_one(&text).unwrap();
        let norm = v.l2_norm();
        prop_assert!(v.is_zero() || (norm - 1.0).abs() < 1e-9);
    }
}
