mod common;

use common::{gallery, relu_fmap, rng};
use diml_core::metrics::{evaluate, evaluate_labeled, map_at_r, precision_at_k, r_precision, LabeledRanking};
use diml_core::{batch_rerank, Combine, RetrievalConfig};
use rand::Rng;

/// Brute-force reading of the definitions: every P@i is recounted from scratch.
fn oracle(query: u32, labels: &[u32]) -> Option<(f64, f64, f64)> {
    let r = labels.iter().filter(|&&l| l == query).count();
    if r == 0 {
        return None;
    }
    let p_at = |k: usize| labels[..k].iter().filter(|&&l| l == query).count() as f64 / k as f64;
    let p1 = p_at(1);
    let rp = p_at(r);
    let mut map = 0.0;
    for i in 1..=r {
        if labels[i - 1] == query {
            map += p_at(i);
        }
    }
    Some((p1, rp, map / r as f64))
}

#[test]
fn every_binary_pattern_up_to_length_eight() {
    for len in 1..=8usize {
        for bits in 0u32..(1 << len) {
            let labels: Vec<u32> = (0..len).map(|k| (bits >> k) & 1).collect();
            let ranking = LabeledRanking::from_full_pool(1, labels.clone());
            match oracle(1, &labels) {
                None => assert!(r_precision(&ranking).is_err() && map_at_r(&ranking).is_err()),
                Some((p1, rp, map)) => {
                    assert_eq!(precision_at_k(&ranking, 1).unwrap(), p1);
                    let (got_rp, got_map) = (r_precision(&ranking).unwrap(), map_at_r(&ranking).unwrap());
                    assert!(
                        (got_rp - rp).abs() <= 1e-15 && (got_map - map).abs() <= 1e-15,
                        "{labels:?}"
                    );
                    assert!(
                        0.0 <= got_map && got_map <= got_rp + 1e-15 && got_rp <= 1.0,
                        "{labels:?}"
                    );
                    let r = ranking.r_count;
                    if labels[..r].iter().all(|&l| l == 1) {
                        assert_eq!((got_rp, got_map), (1.0, 1.0));
                    }
                }
            }
        }
    }
}

#[test]
fn random_rankings_match_the_brute_force_means() {
    let mut r = rng(17);
    for _ in 0..20 {
        let rankings: Vec<LabeledRanking> = (0..r.random_range(1..40))
            .map(|_| {
                let len = r.random_range(1..30);
                let classes = r.random_range(1..5);
                LabeledRanking::from_full_pool(0, (0..len).map(|_| r.random_range(0..classes)).collect())
            })
            .collect();
        let per_query: Vec<_> = rankings
            .iter()
            .filter_map(|x| oracle(x.query_label, &x.retrieved_labels))
            .collect();
        match evaluate_labeled(&rankings) {
            Err(_) => assert!(per_query.is_empty()),
            Ok(report) => {
                let n = per_query.len() as f64;
                assert_eq!(report.query_count, per_query.len());
                assert!((report.p_at_1 - per_query.iter().map(|q| q.0).sum::<f64>() / n).abs() <= 1e-12);
                assert!((report.r_precision - per_query.iter().map(|q| q.1).sum::<f64>() / n).abs() <= 1e-12);
                assert!((report.map_at_r - per_query.iter().map(|q| q.2).sum::<f64>() / n).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn thirty_item_bank_matches_brute_force() {
    let mut r = rng(30);
    let maps = (0..30).map(|k| ((k % 3) as u32, relu_fmap(&mut r, 2, 6))).collect();
    let g = gallery(maps);
    let labels = g.labels();
    for combine in [Combine::CosineOnly, Combine::Sum] {
        let cfg = RetrievalConfig {
            top_k: 10,
            grid: 2,
            combine,
            ..RetrievalConfig::default()
        };
        let lists = batch_rerank(&g, &g, &cfg).unwrap();
        let report = evaluate(&lists, &labels, &labels).unwrap();
        let per_query: Vec<_> = lists
            .iter()
            .map(|l| {
                let retrieved: Vec<u32> = l.entries.iter().map(|e| labels[&e.gallery_id]).collect();
                oracle(labels[&l.query_id], &retrieved).unwrap()
            })
            .collect();
        let mean = |f: fn(&(f64, f64, f64)) -> f64| per_query.iter().map(f).sum::<f64>() / 30.0;
        assert_eq!(report.query_count, 30);
        assert!((report.p_at_1 - mean(|q| q.0)).abs() <= 1e-12);
        assert!((report.r_precision - mean(|q| q.1)).abs() <= 1e-12);
        assert!((report.map_at_r - mean(|q| q.2)).abs() <= 1e-12);

        // Order-preserving rescaling of every score leaves the metrics alone.
        let mut scaled = lists.clone();
        for l in &mut scaled {
            for e in &mut l.entries {
                e.final_score = 3.0 * e.final_score + 1.0;
                e.cosine *= 0.5;
            }
        }
        assert_eq!(evaluate(&scaled, &labels, &labels).unwrap(), report);
    }
}
