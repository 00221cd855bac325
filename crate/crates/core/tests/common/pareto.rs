//! Brute-force Pareto oracle, written straight from the dominance
//! definition and kept independent of the library's bookkeeping: fronts
//! are peeled by scanning every remaining pair.

use fusenas_core::moo::Direction;

/// Textbook dominance: no axis worse, at least one axis strictly better.
pub fn dominates(a: &[f64], b: &[f64], dirs: &[Direction]) -> bool {
    let mut any_better = false;
    for i in 0..dirs.len() {
        let (better, worse) = match dirs[i] {
            Direction::Maximize => (a[i] > b[i], a[i] < b[i]),
            Direction::Minimize => (a[i] < b[i], a[i] > b[i]),
        };
        if worse {
            return false;
        }
        any_better |= better;
    }
    any_better
}

/// Peel fronts: a point is in the current front iff nothing remaining
/// dominates it. Quadratic per front, which is the point — it cannot
/// share a bug with the incremental-count implementation.
pub fn fronts(values: &[Vec<f64>], dirs: &[Direction]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..values.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&p| {
                !remaining.iter().any(|&q| q != p && dominates(&values[q], &values[p], dirs))
            })
            .collect();
        assert!(!front.is_empty(), "dominance cycle is impossible on finite values");
        remaining.retain(|i| !front.contains(i));
        out.push(front);
    }
    out
}
