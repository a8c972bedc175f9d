//! Retrieval metrics over a query × gallery cosine-distance matrix.
//!
//! Gallery entries sharing both identity and camera with the query are junk:
//! they are removed from the ranking before any metric is computed. Ranking
//! is ascending distance, ties broken by gallery index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::check_unit;
use crate::scalar::{dot, Scalar};

/// Labels a query or gallery entry carries for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub identity: usize,
    pub camera: usize,
    pub viewpoint: usize,
}

/// `1 - cos(q_i, g_j)` for unit-norm embeddings.
pub fn distance_matrix<T: Scalar>(queries: &[Vec<T>], gallery: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    for v in queries.iter().chain(gallery) {
        check_unit(v)?;
    }
    Ok(queries
        .iter()
        .map(|q| gallery.iter().map(|g| (T::one() - dot(q, g)).max(T::zero()).min(T::lit(2.0))).collect())
        .collect())
}

/// Gallery order for one query: ascending distance, then index.
fn ranking<T: Scalar>(row: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Relevance {
    Positive,
    Negative,
    Junk,
}

fn relevance(query: &Tag, g: &Tag, positive_view: Option<usize>) -> Relevance {
    if g.identity != query.identity {
        return Relevance::Negative;
    }
    if g.camera == query.camera {
        return Relevance::Junk;
    }
    match positive_view {
        Some(v) if g.viewpoint != v => Relevance::Junk,
        _ => Relevance::Positive,
    }
}

/// Relevance of the gallery in ranked order with junk removed.
fn ranked_hits<T: Scalar>(row: &[T], query: &Tag, gallery: &[Tag], positive_view: Option<usize>) -> Vec<bool> {
    ranking(row)
        .into_iter()
        .filter_map(|j| match relevance(query, &gallery[j], positive_view) {
            Relevance::Junk => None,
            r => Some(r == Relevance::Positive),
        })
        .collect()
}

/// Precision averaged over the positions of the positives; `None` when the
/// query has no valid positive.
fn average_precision<T: Scalar>(hits: &[bool]) -> Option<T> {
    let mut found = 0usize;
    let mut acc = T::zero();
    for (r, &hit) in hits.iter().enumerate() {
        if hit {
            found += 1;
            acc = acc + T::from_usize_lossy(found) / T::from_usize_lossy(r + 1);
        }
    }
    (found > 0).then(|| acc / T::from_usize_lossy(found))
}

fn check_shape<T>(dist: &[Vec<T>], queries: &[Tag], gallery: &[Tag]) -> Result<()> {
    if dist.len() != queries.len() {
        return Err(Error::LengthMismatch { expected: queries.len(), got: dist.len() });
    }
    if let Some(row) = dist.iter().find(|r| r.len() != gallery.len()) {
        return Err(Error::LengthMismatch { expected: gallery.len(), got: row.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapResult<T> {
    pub map: T,
    pub n_valid: usize,
    pub n_skipped: usize,
}

/// Mean average precision over queries that have a valid positive.
pub fn mean_ap<T: Scalar>(dist: &[Vec<T>], queries: &[Tag], gallery: &[Tag]) -> Result<MapResult<T>> {
    check_shape(dist, queries, gallery)?;
    let mut sum = T::zero();
    let mut n_valid = 0;
    for (row, q) in dist.iter().zip(queries) {
        if let Some(ap) = average_precision::<T>(&ranked_hits(row, q, gallery, None)) {
            sum = sum + ap;
            n_valid += 1;
        }
    }
    let n_skipped = queries.len() - n_valid;
    if n_skipped > 0 {
        log::warn!("{n_skipped} of {} queries have no valid positive and were skipped", queries.len());
    }
    if n_valid == 0 {
        return Err(Error::NoValidPositive);
    }
    Ok(MapResult { map: sum / T::from_usize_lossy(n_valid), n_valid, n_skipped })
}

/// `cmc[r-1]` is the fraction of valid queries whose first positive is
/// within rank `r`, for `r` in `1..=max_rank`.
pub fn cmc<T: Scalar>(dist: &[Vec<T>], queries: &[Tag], gallery: &[Tag], max_rank: usize) -> Result<Vec<T>> {
    check_shape(dist, queries, gallery)?;
    let mut counts = vec![0usize; max_rank];
    let mut n_valid = 0;
    for (row, q) in dist.iter().zip(queries) {
        let hits = ranked_hits(row, q, gallery, None);
        let Some(first) = hits.iter().position(|&h| h) else { continue };
        n_valid += 1;
        if first < max_rank {
            counts[first] += 1;
        }
    }
    if n_valid == 0 {
        return Err(Error::NoValidPositive);
    }
    let mut running = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            running += c;
            T::from_usize_lossy(running) / T::from_usize_lossy(n_valid)
        })
        .collect())
}

/// `V×V` mAP table: entry `(a, b)` scores queries of viewpoint `a` against
/// positives of viewpoint `b`. Same-identity gallery entries of other
/// viewpoints are treated as junk. Cells with no scorable query are `None`.
pub fn cross_view_breakdown<T: Scalar>(
    dist: &[Vec<T>],
    queries: &[Tag],
    gallery: &[Tag],
    num_views: usize,
) -> Result<Vec<Vec<Option<T>>>> {
    check_shape(dist, queries, gallery)?;
    let mut sums = vec![vec![(T::zero(), 0usize); num_views]; num_views];
    for (row, q) in dist.iter().zip(queries) {
        if q.viewpoint >= num_views {
            return Err(Error::IndexOutOfRange { what: "viewpoint", index: q.viewpoint, len: num_views });
        }
        for b in 0..num_views {
            if let Some(ap) = average_precision::<T>(&ranked_hits(row, q, gallery, Some(b))) {
                let cell = &mut sums[q.viewpoint][b];
                cell.0 = cell.0 + ap;
                cell.1 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|r| r.into_iter().map(|(s, n)| (n > 0).then(|| s / T::from_usize_lossy(n))).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub per_view_pair_map: Vec<Vec<Option<f64>>>,
    pub n_queries: usize,
    pub n_skipped: usize,
}

impl EvalReport {
    /// CMC at rank `r` (1-based); saturates past the stored curve.
    pub fn rank(&self, r: usize) -> f64 {
        self.cmc.get(r - 1).or(self.cmc.last()).copied().unwrap_or(0.0)
    }
}

/// Runs all metrics on embedded queries and gallery.
pub fn evaluate<T: Scalar>(
    queries: &[Vec<T>],
    query_tags: &[Tag],
    gallery: &[Vec<T>],
    gallery_tags: &[Tag],
    num_views: usize,
    max_rank: usize,
) -> Result<EvalReport> {
    let dist = distance_matrix(queries, gallery)?;
    let m = mean_ap(&dist, query_tags, gallery_tags)?;
    let curve = cmc(&dist, query_tags, gallery_tags, max_rank)?;
    let pairs = cross_view_breakdown(&dist, query_tags, gallery_tags, num_views)?;
    Ok(EvalReport {
        map: m.map.to_f64_lossy(),
        cmc: curve.into_iter().map(T::to_f64_lossy).collect(),
        per_view_pair_map: pairs.into_iter().map(|r| r.into_iter().map(|c| c.map(T::to_f64_lossy)).collect()).collect(),
        n_queries: query_tags.len(),
        n_skipped: m.n_skipped,
    })
}
