//! Evaluator metrics against a direct-definition oracle that never sorts.

use proptest::prelude::*;
use vareid::eval::{cmc, mean_ap};
use vareid::Tag;

/// Position of gallery entry `j` among the scored entries of one query,
/// counting only entries strictly ahead of it in (distance, index) order.
fn rank_of(row: &[f64], scored: &[usize], j: usize) -> usize {
    1 + scored.iter().filter(|&&i| row[i] < row[j] || (row[i] == row[j] && i < j)).count()
}

fn oracle_ap(row: &[f64], q: &Tag, gallery: &[Tag]) -> Option<f64> {
    let scored: Vec<usize> =
        (0..gallery.len()).filter(|&j| !(gallery[j].identity == q.identity && gallery[j].camera == q.camera)).collect();
    let mut pos_ranks: Vec<usize> =
        scored.iter().filter(|&&j| gallery[j].identity == q.identity).map(|&j| rank_of(row, &scored, j)).collect();
    if pos_ranks.is_empty() {
        return None;
    }
    pos_ranks.sort_unstable();
    let mut acc = 0.0;
    for &r in &pos_ranks {
        let within = pos_ranks.iter().filter(|&&o| o <= r).count();
        acc += within as f64 / r as f64;
    }
    Some(acc / pos_ranks.len() as f64)
}

fn oracle_first_hit(row: &[f64], q: &Tag, gallery: &[Tag]) -> Option<usize> {
    let scored: Vec<usize> =
        (0..gallery.len()).filter(|&j| !(gallery[j].identity == q.identity && gallery[j].camera == q.camera)).collect();
    scored.iter().filter(|&&j| gallery[j].identity == q.identity).map(|&j| rank_of(row, &scored, j)).min()
}

fn oracle_map(dist: &[Vec<f64>], qs: &[Tag], gallery: &[Tag]) -> Option<f64> {
    let aps: Vec<f64> = dist.iter().zip(qs).filter_map(|(row, q)| oracle_ap(row, q, gallery)).collect();
    let n = aps.len();
    (n > 0).then(|| aps.into_iter().fold(0.0, |a, b| a + b) / n as f64)
}

fn oracle_cmc(dist: &[Vec<f64>], qs: &[Tag], gallery: &[Tag], max_rank: usize) -> Option<Vec<f64>> {
    let firsts: Vec<usize> = dist.iter().zip(qs).filter_map(|(row, q)| oracle_first_hit(row, q, gallery)).collect();
    let n = firsts.len();
    (n > 0).then(|| (1..=max_rank).map(|r| firsts.iter().filter(|&&f| f <= r).count() as f64 / n as f64).collect())
}

fn tag(identity: usize, camera: usize) -> Tag {
    Tag { identity, camera, viewpoint: 0 }
}

/// Positive, negative or junk relative to a query with identity 0, camera 0.
fn pattern_tag(kind: usize, j: usize) -> Tag {
    match kind {
        0 => tag(0, 1 + j % 2),
        1 => tag(1 + j % 3, j % 2),
        _ => tag(0, 0),
    }
}

fn check(dist: &[Vec<f64>], qs: &[Tag], gallery: &[Tag], max_rank: usize) {
    match (mean_ap(dist, qs, gallery), oracle_map(dist, qs, gallery)) {
        (Ok(m), Some(o)) => assert_eq!(m.map, o, "mAP differs on {dist:?} {qs:?} {gallery:?}"),
        (Err(_), None) => {}
        (got, want) => panic!("validity differs: {got:?} vs {want:?}"),
    }
    match (cmc(dist, qs, gallery, max_rank), oracle_cmc(dist, qs, gallery, max_rank)) {
        (Ok(c), Some(o)) => assert_eq!(c, o),
        (Err(_), None) => {}
        (got, want) => panic!("validity differs: {got:?} vs {want:?}"),
    }
}

#[test]
fn exhaustive_small_galleries() {
    let levels = [0.1, 0.2, 0.3];
    for n in 1..=5usize {
        let gallery_patterns = 3usize.pow(n as u32);
        for pattern in 0..gallery_patterns {
            let gallery: Vec<Tag> = (0..n).map(|j| pattern_tag(pattern / 3usize.pow(j as u32) % 3, j)).collect();
            for d in 0..3usize.pow(n as u32) {
                let row: Vec<f64> = (0..n).map(|j| levels[d / 3usize.pow(j as u32) % 3]).collect();
                check(&[row], &[tag(0, 0)], &gallery, n);
            }
        }
    }
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Tag>, Vec<Tag>)> {
    (1usize..5, 1usize..30).prop_flat_map(|(nq, ng)| {
        let tags = |n| prop::collection::vec((0usize..4, 0usize..3).prop_map(|(i, c)| tag(i, c)), n);
        let dist = prop::collection::vec(prop::collection::vec(prop_oneof![0.0f64..2.0, Just(0.5), Just(1.0)], ng), nq);
        (dist, tags(nq), tags(ng))
    })
}

proptest! {
    #[test]
    fn random_instances_match_oracle((dist, qs, gallery) in instance()) {
        check(&dist, &qs, &gallery, 10);
    }

    #[test]
    fn monotone_transform_preserves_metrics((dist, qs, gallery) in instance()) {
        let warped: Vec<Vec<f64>> = dist.iter().map(|r| r.iter().map(|d| (3.0 * d).exp() - 0.5).collect()).collect();
        let a = mean_ap(&dist, &qs, &gallery);
        let b = mean_ap(&warped, &qs, &gallery);
        prop_assert_eq!(a.ok().map(|m| m.map), b.ok().map(|m| m.map));
        prop_assert_eq!(cmc(&dist, &qs, &gallery, 5).ok(), cmc(&warped, &qs, &gallery, 5).ok());
    }

    #[test]
    fn cmc_is_a_nondecreasing_fraction((dist, qs, gallery) in instance()) {
        if let Ok(c) = cmc(&dist, &qs, &gallery, 40) {
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert_eq!(*c.last().unwrap(), 1.0);
        }
        if let Ok(m) = mean_ap(&dist, &qs, &gallery) {
            prop_assert!((0.0..=1.0).contains(&m.map));
        }
    }
}
