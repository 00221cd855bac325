//! Multi-objective ranking: fast non-dominated sorting, crowding
//! distance, and the rank-then-crowding evaluation order used by both
//! search tiers.
//!
//! Candidates are scored on (accuracy, latency, energy) with directions
//! (maximize, minimize, minimize); the functions here are generic over
//! any finite objective vector with per-axis directions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// The standard axes for this engine: (accuracy, latency ms, energy mJ).
pub const ACC_LAT_ERGY: [Direction; 3] =
    [Direction::Maximize, Direction::Minimize, Direction::Minimize];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    /// Caller-assigned payload id; the final tie-breaker in the total
    /// order, so callers keep it unique per population.
    pub id: u64,
    pub values: Vec<f64>,
}

impl ObjectivePoint {
    pub fn new(id: u64, values: Vec<f64>) -> ObjectivePoint {
        ObjectivePoint { id, values }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub point: ObjectivePoint,
    /// Non-domination front index; 0 means undominated in the population.
    pub rank: usize,
    /// Crowding distance within its front; infinite on front boundaries.
    pub crowding: f64,
}

fn validate(points: &[ObjectivePoint], directions: &[Direction]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("points", "empty population".to_string()));
    }
    if directions.is_empty() {
        return Err(Error::invalid("directions", "no objectives".to_string()));
    }
    for p in points {
        if p.values.len() != directions.len() {
            return Err(Error::invalid(
                "points",
                format!("point {} has {} values for {} objectives", p.id, p.values.len(), directions.len()),
            ));
        }
        if let Some(v) = p.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("points", format!("point {} has non-finite objective {v}", p.id)));
        }
    }
    Ok(())
}

/// `a` dominates `b`: at least as good on every axis, strictly better on
/// at least one.
pub fn dominates(a: &[f64], b: &[f64], directions: &[Direction]) -> bool {
    let mut strictly = false;
    for ((&va, &vb), dir) in a.iter().zip(b).zip(directions) {
        let (better, worse) = match dir {
            Direction::Maximize => (va > vb, va < vb),
            Direction::Minimize => (va < vb, va > vb),
        };
        if worse {
            return false;
        }
        if better {
            strictly = true;
        }
    }
    strictly
}

/// Fast non-dominated sort (the O(n² m) bookkeeping variant): returns
/// fronts of indices into `points`, each front in ascending index order.
/// Front 0 is the undominated set; front i is undominated once fronts
/// < i are removed; every point lands in exactly one front.
pub fn non_dominated_sort(
    points: &[ObjectivePoint],
    directions: &[Direction],
) -> Result<Vec<Vec<usize>>> {
    validate(points, directions)?;
    let n = points.len();
    // dominated_by[p] = points that p dominates; counts[p] = #dominators.
    let mut dominated: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&points[p].values, &points[q].values, directions) {
                dominated[p].push(q);
                counts[q] += 1;
            } else if dominates(&points[q].values, &points[p].values, directions) {
                dominated[q].push(p);
                counts[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|i| counts[*i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated[p] {
                counts[q] -= 1;
                if counts[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    Ok(fronts)
}

/// Crowding distance for one front, aligned with `front`'s order.
///
/// Per objective, the front is sorted (ties broken by index so the result
/// is deterministic); the two extreme points take infinite distance and
/// interior points accumulate the normalized gap between their sorted
/// neighbors. An objective with zero range across the front contributes
/// nothing to interior points, but its extremes still get the boundary
/// infinity.
pub fn crowding_distance(
    points: &[ObjectivePoint],
    front: &[usize],
    directions: &[Direction],
) -> Result<Vec<f64>> {
    if front.is_empty() {
        return Err(Error::invalid("front", "empty front".to_string()));
    }
    for &i in front {
        if i >= points.len() {
            return Err(Error::invalid("front", format!("index {i} out of population")));
        }
    }
    let n = front.len();
    let mut dist = vec![0.0f64; n];
    if n <= 2 {
        return Ok(vec![f64::INFINITY; n]);
    }
    for (m, _) in directions.iter().enumerate() {
        // Positions into `front`, sorted by objective m ascending.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            points[front[a]].values[m]
                .partial_cmp(&points[front[b]].values[m])
                .expect("validated finite")
                .then(front[a].cmp(&front[b]))
        });
        let lo = points[front[order[0]]].values[m];
        let hi = points[front[order[n - 1]]].values[m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range > 0.0 {
            for w in 1..n - 1 {
                let prev = points[front[order[w - 1]]].values[m];
                let next = points[front[order[w + 1]]].values[m];
                dist[order[w]] += (next - prev) / range;
            }
        }
    }
    Ok(dist)
}

/// Rank every point, attach crowding, and return the population sorted by
/// the evaluation order: lower rank first, then higher crowding, then
/// lower id. A deterministic total order.
pub fn eval_score(
    points: &[ObjectivePoint],
    directions: &[Direction],
) -> Result<Vec<ScoredCandidate>> {
    let fronts = non_dominated_sort(points, directions)?;
    let mut scored: Vec<ScoredCandidate> = Vec::with_capacity(points.len());
    for (rank, front) in fronts.iter().enumerate() {
        let dists = crowding_distance(points, front, directions)?;
        for (&idx, &crowding) in front.iter().zip(&dists) {
            scored.push(ScoredCandidate { point: points[idx].clone(), rank, crowding });
        }
    }
    scored.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then(b.crowding.partial_cmp(&a.crowding).expect("crowding is never NaN"))
            .then(a.point.id.cmp(&b.point.id))
    });
    Ok(scored)
}

/// The best `ceil(fraction * n)` candidates of an eval-ordered list.
pub fn select_fraction(ordered: &[ScoredCandidate], fraction: f64) -> Result<Vec<ScoredCandidate>> {
    if ordered.is_empty() {
        return Err(Error::invalid("candidates", "empty selection input".to_string()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction", format!("{fraction} outside (0, 1]")));
    }
    let k = (fraction * ordered.len() as f64).ceil() as usize;
    Ok(ordered[..k.min(ordered.len())].to_vec())
}
