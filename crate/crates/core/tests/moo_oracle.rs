//! Fast non-dominated sorting against the brute-force oracle, plus
//! order-consistency checks on the evaluation ranking.

mod common;

use common::pareto;
use fusenas_core::moo::{
    eval_score, non_dominated_sort, Direction, ObjectivePoint, ACC_LAT_ERGY,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_population(rng: &mut ChaCha8Rng, n: usize) -> Vec<ObjectivePoint> {
    (0..n)
        .map(|i| {
            // Clustered values provoke plenty of ties and near-dominance.
            let values = vec![
                (rng.random_range(0..20) as f64) / 20.0,
                rng.random_range(1.0..10.0),
                (rng.random_range(0..15) as f64) * 2.5,
            ];
            ObjectivePoint::new(i as u64, values)
        })
        .collect()
}

#[test]
fn sort_matches_bruteforce_oracle_on_random_populations() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xface);
    for trial in 0..40 {
        let n = rng.random_range(1..=300);
        let points = random_population(&mut rng, n);
        let values: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
        let got = non_dominated_sort(&points, &ACC_LAT_ERGY).unwrap();
        let mut want = pareto::fronts(&values, &ACC_LAT_ERGY);
        for f in &mut want {
            f.sort_unstable();
        }
        assert_eq!(got, want, "trial {trial}, n {n}");
    }
}

#[test]
fn sort_matches_oracle_with_minimize_only_axes() {
    let dirs = [Direction::Minimize, Direction::Minimize];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let n = rng.random_range(2..=120);
        let points: Vec<ObjectivePoint> = (0..n)
            .map(|i| {
                ObjectivePoint::new(
                    i as u64,
                    vec![rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)],
                )
            })
            .collect();
        let values: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
        let got = non_dominated_sort(&points, &dirs).unwrap();
        let mut want = pareto::fronts(&values, &dirs);
        for f in &mut want {
            f.sort_unstable();
        }
        assert_eq!(got, want);
    }
}

#[test]
fn eval_order_is_consistent_with_oracle_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points = random_population(&mut rng, 100);
    let values: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let oracle = pareto::fronts(&values, &ACC_LAT_ERGY);
    let rank_of = |id: u64| {
        oracle.iter().position(|f| f.contains(&(id as usize))).expect("every point has a front")
    };
    let ordered = eval_score(&points, &ACC_LAT_ERGY).unwrap();
    // Ranks agree with the oracle and never decrease along the order;
    // within a rank, crowding never increases.
    let mut prev_rank = 0;
    let mut prev_crowding = f64::INFINITY;
    for c in &ordered {
        assert_eq!(c.rank, rank_of(c.point.id));
        assert!(c.rank >= prev_rank);
        if c.rank == prev_rank {
            assert!(c.crowding <= prev_crowding);
        }
        prev_rank = c.rank;
        prev_crowding = c.crowding;
    }
    // Total order sanity: dominance always means earlier placement.
    for a in &ordered {
        for b in &ordered {
            if pareto::dominates(&a.point.values, &b.point.values, &ACC_LAT_ERGY) {
                let pa = ordered.iter().position(|c| c.point.id == a.point.id).unwrap();
                let pb = ordered.iter().position(|c| c.point.id == b.point.id).unwrap();
                assert!(pa < pb, "{} dominates {} but is ordered later", a.point.id, b.point.id);
            }
        }
    }
}
