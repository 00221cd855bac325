//! The ten acceptance checks, one test per criterion. Each test ends
//! with a printed `criterion N: PASS — ...` line (visible under
//! `--nocapture`; the test name itself is the pass/fail line under the
//! default harness output).
//!
//! Criteria 6, 7, 8, and 10 share one trained desk-scale fixture built
//! lazily on first use; everything else is self-contained and fast.

use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fusenas_cli::exports;
use fusenas_core::data::{generate_all, MultimodalDataset, SyntheticTaskSpec};
use fusenas_core::engine::{self, AblationMode, EngineConfig, RunRecord, SearchContext};
use fusenas_core::fusion::{
    apply_fusion_op, gated_mix, mix_ops, one_hot_gamma, op_param_shapes, FusionHypernet,
    FusionTrainConfig, LossExponents, SourceBatch, SourceSpec, ALL_FUSION_OPS,
};
use fusenas_core::hwcost::{
    candidate_cost, fusion_discrete_cost, fusion_relaxed_cost, synth_device, CostMetric,
    CostPair, DeviceLut, ScaleProfile,
};
use fusenas_core::moo::{
    crowding_distance, eval_score, non_dominated_sort, Direction, ObjectivePoint, ACC_LAT_ERGY,
};
use fusenas_core::searchspace::{
    crossover, mutate, sample_uniform, FusionMacroConfig, MultimodalGenome, SpaceConfig,
};
use fusenas_core::supernet::{
    train_supernet, ElasticSupernet, SupernetSnapshot, SupernetTrainConfig,
};
use fusenas_core::tensor::{gradcheck, Tensor};
use fusenas_core::Result;

// ---------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------

const GRAD_TOL: f64 = 1e-4;

/// Interior mutability so input vectors can be drawn inline in the
/// argument list of `check` without fighting the borrow checker.
struct GradTally {
    rng: std::cell::RefCell<ChaCha8Rng>,
    instances: std::cell::Cell<usize>,
    worst: std::cell::Cell<f64>,
}

impl GradTally {
    fn new(seed: u64) -> GradTally {
        GradTally {
            rng: std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            instances: std::cell::Cell::new(0),
            worst: std::cell::Cell::new(0.0),
        }
    }

    fn draw(&self, lo: f64, hi: f64) -> f64 {
        self.rng.borrow_mut().random_range(lo..hi)
    }

    fn pick(&self, lo: usize, hi: usize) -> usize {
        self.rng.borrow_mut().random_range(lo..=hi)
    }

    fn uniform(&self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.draw(lo, hi)).collect()
    }

    /// Values with |x| in [0.1, 1.1]: safely away from the kinks of
    /// relu/clamp so the central difference stays on one branch.
    fn off_kink(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag = self.draw(0.1, 1.1);
                let flip = self.rng.borrow_mut().random_bool(0.5);
                if flip {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    }

    fn check(&self, inputs: Vec<(Vec<usize>, Vec<f64>)>, build: &dyn Fn(&[Tensor]) -> Result<Tensor>) {
        let leaves: Vec<Tensor> = inputs
            .iter()
            .map(|(s, d)| Tensor::from_vec(d.clone(), s).unwrap())
            .collect();
        let out = build(&leaves).expect("forward pass");
        let w: Vec<f64> = (0..out.numel()).map(|_| self.draw(0.5, 1.5)).collect();
        match gradcheck(build, &inputs, &w, GRAD_TOL) {
            Ok(err) => {
                self.worst.set(self.worst.get().max(err));
                self.instances.set(self.instances.get() + 1);
            }
            Err(e) => panic!("criterion 1: FAIL — {e}"),
        }
    }
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let t = GradTally::new(101);
    for _ in 0..4 {
        let (b, c, l, k) = (t.pick(1, 2), t.pick(2, 3), t.pick(4, 6), 3usize);

        // Elementwise and structural primitives.
        let x = t.uniform(b * c, -2.0, 2.0);
        let y = t.uniform(b * c, -2.0, 2.0);
        let two = vec![(vec![b, c], x.clone()), (vec![b, c], y.clone())];
        t.check(two.clone(), &|v| v[0].add(&v[1]));
        t.check(two.clone(), &|v| v[0].sub(&v[1]));
        t.check(two.clone(), &|v| v[0].mul(&v[1]));
        let factor = t.draw(-1.5, 1.5);
        t.check(vec![two[0].clone()], &move |v| v[0].scale(factor));
        t.check(
            vec![two[0].clone(), (vec![1, 1], t.uniform(1, -1.0, 1.0))],
            &|v| v[0].scale_by(&v[1]),
        );
        t.check(
            vec![two[0].clone(), (vec![c], t.uniform(c, -1.0, 1.0))],
            &|v| v[0].add_row(&v[1]),
        );
        let one = vec![two[0].clone()];
        t.check(one.clone(), &|v| v[0].sigmoid());
        t.check(one.clone(), &|v| v[0].tanh());
        t.check(one.clone(), &|v| v[0].softplus());
        t.check(one.clone(), &|v| v[0].mish());
        t.check(one.clone(), &|v| v[0].softmax(1));
        t.check(one.clone(), &|v| v[0].log_softmax(1));
        t.check(one.clone(), &|v| v[0].sum_all());
        t.check(vec![(vec![b, c], t.off_kink(b * c))], &|v| v[0].relu());
        t.check(vec![(vec![b, c], t.off_kink(b * c))], &|v| v[0].clamp_min(0.0));
        let p = t.draw(0.5, 2.5);
        t.check(vec![(vec![b, c], t.uniform(b * c, 0.3, 2.0))], &move |v| v[0].pow_scalar(p));

        // Linear algebra.
        let (m, kk, n) = (2usize, 3usize, 2usize);
        t.check(
            vec![
                (vec![m, kk], t.uniform(m * kk, -1.0, 1.0)),
                (vec![kk, n], t.uniform(kk * n, -1.0, 1.0)),
            ],
            &|v| v[0].matmul2(&v[1]),
        );
        t.check(
            vec![
                (vec![2, m, kk], t.uniform(2 * m * kk, -1.0, 1.0)),
                (vec![2, kk, n], t.uniform(2 * kk * n, -1.0, 1.0)),
            ],
            &|v| v[0].bmm(&v[1]),
        );
        t.check(vec![(vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0))], &|v| {
            v[0].transpose_last()
        });
        t.check(
            vec![
                (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
                (vec![b, 2, l], t.uniform(b * 2 * l, -1.0, 1.0)),
            ],
            &|v| Tensor::concat(1, &[&v[0], &v[1]]),
        );
        let three = vec![(vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0))];
        t.check(three.clone(), &move |v| v[0].narrow(2, 1, l - 2));
        t.check(three.clone(), &|v| v[0].mean_axis(2));
        t.check(three.clone(), &|v| v[0].sum_axis(1));
        t.check(
            vec![
                (vec![b, c], t.uniform(b * c, -1.0, 1.0)),
                (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
            ],
            &|v| Tensor::scale_channels(&v[0], &v[1]),
        );
        t.check(
            vec![
                (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
                (vec![2, c, k], t.uniform(2 * c * k, -1.0, 1.0)),
                (vec![2], t.uniform(2, -0.5, 0.5)),
            ],
            &|v| v[0].conv1d(&v[1], Some(&v[2])),
        );

        // Losses.
        let classes = 3usize;
        let labels: Vec<usize> = (0..b).map(|_| t.pick(0, classes - 1)).collect();
        t.check(
            vec![(vec![b, classes], t.uniform(b * classes, -2.0, 2.0))],
            &move |v| v[0].cross_entropy(&labels),
        );
        let targets: Vec<f64> = (0..b * c).map(|_| t.draw(0.0, 1.0)).collect();
        t.check(
            vec![(vec![b, c], t.off_kink(b * c))],
            &move |v| v[0].bce_with_logits(&targets),
        );
        t.check(
            vec![
                (vec![b, classes], t.uniform(b * classes, -2.0, 2.0)),
                (vec![b, classes], t.uniform(b * classes, -2.0, 2.0)),
            ],
            &|v| Tensor::kl_div_rows(&v[0], &v[1]),
        );
    }

    // All six fusion operators, twice each, with their parameter bundles
    // as checked leaves.
    for rep in 0..2 {
        for op in ALL_FUSION_OPS {
            let (b, c, l) = (2usize, 2usize, 3 + rep);
            let mut inputs = vec![
                (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
                (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
            ];
            for (_, shape) in op_param_shapes(op, c) {
                let n = shape.iter().product();
                inputs.push((shape, t.uniform(n, -0.6, 0.6)));
            }
            t.check(inputs, &move |v| apply_fusion_op(op, &v[0], &v[1], &v[2..]));
        }
    }

    // The relaxed mixtures: Identity/Zero input gating and the six-way
    // operator mixture, with logits, features, and parameters all live.
    for rep in 0..2 {
        let (b, c, l) = (2usize, 2usize, 3 + rep);
        let cands = 3usize;
        let mut inputs = vec![(vec![cands, 2], t.uniform(cands * 2, -1.0, 1.0))];
        for _ in 0..cands {
            inputs.push((vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)));
        }
        t.check(inputs, &|v| gated_mix(&v[0], &v[1..]));

        let mut inputs = vec![
            (vec![1, ALL_FUSION_OPS.len()], t.uniform(ALL_FUSION_OPS.len(), -1.0, 1.0)),
            (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
            (vec![b, c, l], t.uniform(b * c * l, -1.0, 1.0)),
        ];
        let mut bundle_shapes = Vec::new();
        for op in ALL_FUSION_OPS {
            let shapes: Vec<Vec<usize>> =
                op_param_shapes(op, c).into_iter().map(|(_, s)| s).collect();
            for s in &shapes {
                let n = s.iter().product();
                inputs.push((s.clone(), t.uniform(n, -0.6, 0.6)));
            }
            bundle_shapes.push(shapes);
        }
        t.check(inputs, &move |v| {
            let mut at = 3;
            let mut params = Vec::new();
            for shapes in &bundle_shapes {
                let takes = shapes.len();
                params.push(v[at..at + takes].to_vec());
                at += takes;
            }
            mix_ops(&v[0], &v[1], &v[2], &params)
        });
    }

    // The differentiable hardware term: expected operator cost under the
    // softmax of the operator logits, for both metrics.
    let space = SpaceConfig {
        num_blocks: 2,
        depth_choices: vec![1, 2],
        kernel_choices: vec![3, 5],
        expand_choices: vec![1, 2],
    };
    let lut = synth_device(3, &ScaleProfile::fast_gpu(), &space).unwrap();
    for metric in [CostMetric::Latency, CostMetric::Energy] {
        for cells in 1..=2usize {
            let mac = FusionMacroConfig { cells, nodes: 2 };
            let rows = mac.cells * mac.nodes;
            let gamma = (vec![rows, ALL_FUSION_OPS.len()], t.uniform(rows * 6, -1.0, 1.0));
            let lut = lut.clone();
            t.check(vec![gamma], &move |v| fusion_relaxed_cost(&v[0], mac, &lut, metric));
        }
    }

    assert!(t.instances.get() >= 100, "only {} gradcheck instances", t.instances.get());
    println!(
        "criterion 1: PASS — {} instances within rel err {GRAD_TOL:.0e} (worst {:.2e})",
        t.instances.get(),
        t.worst.get()
    );
}

// ---------------------------------------------------------------------
// Criterion 2: Pareto machinery vs a brute-force dominance oracle.
// ---------------------------------------------------------------------

fn oracle_dominates(a: &[f64], b: &[f64], dirs: &[Direction]) -> bool {
    let better = |d: Direction, x: f64, y: f64| match d {
        Direction::Maximize => x > y,
        Direction::Minimize => x < y,
    };
    let worse = |d: Direction, x: f64, y: f64| better(d, y, x);
    let mut strict = false;
    for (i, &d) in dirs.iter().enumerate() {
        if worse(d, a[i], b[i]) {
            return false;
        }
        if better(d, a[i], b[i]) {
            strict = true;
        }
    }
    strict
}

/// O(n^2)-per-front peeling: repeatedly remove the set of points not
/// dominated by any other remaining point.
fn oracle_fronts(points: &[ObjectivePoint], dirs: &[Direction]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                !remaining
                    .iter()
                    .any(|&j| j != i && oracle_dominates(&points[j].values, &points[i].values, dirs))
            })
            .collect();
        assert!(!front.is_empty(), "dominance must be acyclic");
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

#[test]
fn criterion_02_pareto_sort_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut total_points = 0usize;
    for pop in 0..100 {
        let n = rng.random_range(1..=500usize);
        total_points += n;
        // Draw coordinates from a coarse grid half the time so ties and
        // duplicated values are common.
        let coarse = pop % 2 == 0;
        let points: Vec<ObjectivePoint> = (0..n)
            .map(|i| {
                let mut vals = Vec::with_capacity(3);
                for _ in 0..3 {
                    let v = if coarse {
                        rng.random_range(0..5) as f64
                    } else {
                        rng.random_range(0.0..1.0)
                    };
                    vals.push(v);
                }
                ObjectivePoint::new(i as u64, vals)
            })
            .collect();

        let mut got = non_dominated_sort(&points, &ACC_LAT_ERGY).unwrap();
        let mut want = oracle_fronts(&points, &ACC_LAT_ERGY);
        for f in got.iter_mut().chain(want.iter_mut()) {
            f.sort_unstable();
        }
        assert_eq!(got, want, "population {pop} fronts disagree with the oracle");

        // The combined order: rank ascending, crowding descending within
        // a front, id ascending on exact ties.
        let scored = eval_score(&points, &ACC_LAT_ERGY).unwrap();
        assert_eq!(scored.len(), n);
        for w in scored.windows(2) {
            let key_ok = w[0].rank < w[1].rank
                || (w[0].rank == w[1].rank && w[0].crowding > w[1].crowding)
                || (w[0].rank == w[1].rank
                    && w[0].crowding == w[1].crowding
                    && w[0].point.id < w[1].point.id);
            assert!(key_ok, "eval order violated: {:?} then {:?}", w[0], w[1]);
        }
        for s in &scored {
            let oracle_rank = want
                .iter()
                .position(|f| f.contains(&(s.point.id as usize)))
                .expect("every point is in some front");
            assert_eq!(s.rank, oracle_rank, "rank of point {}", s.point.id);
        }
        // Crowding values come from the per-front computation.
        for (rank, front) in got.iter().enumerate() {
            let dists = crowding_distance(&points, front, &ACC_LAT_ERGY).unwrap();
            for (&idx, &d) in front.iter().zip(&dists) {
                let s = scored.iter().find(|s| s.point.id == idx as u64).unwrap();
                assert_eq!(s.rank, rank);
                assert_eq!(s.crowding, d);
            }
        }
    }

    // Three published edge-device (accuracy %, latency ms, energy mJ)
    // measurements that trade off against each other pairwise: they must
    // land in a single mutually non-dominating front.
    let rows = [
        ObjectivePoint::new(0, vec![94.22, 6.95, 37.17]),
        ObjectivePoint::new(1, vec![95.33, 7.26, 38.24]),
        ObjectivePoint::new(2, vec![95.11, 7.19, 38.14]),
    ];
    let fronts = non_dominated_sort(&rows, &ACC_LAT_ERGY).unwrap();
    assert_eq!(fronts.len(), 1, "expected one front, got {fronts:?}");
    assert_eq!(fronts[0].len(), 3);

    println!(
        "criterion 2: PASS — 100 populations ({total_points} points) match the oracle; reference trio is one front"
    );
}

// ---------------------------------------------------------------------
// Criterion 3: saturated relaxation agrees with its discretization.
// ---------------------------------------------------------------------

const SATURATION_GAP: f64 = 40.0;

/// Gate matrix with the Identity column raised on `chosen` and the Zero
/// column raised everywhere else.
fn saturated_gates(n: usize, chosen: usize) -> Tensor {
    let mut data = vec![0.0; n * 2];
    for i in 0..n {
        if i == chosen {
            data[i * 2] = SATURATION_GAP;
        } else {
            data[i * 2 + 1] = SATURATION_GAP;
        }
    }
    Tensor::param(data, &[n, 2]).unwrap()
}

fn distinct_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

#[test]
fn criterion_03_saturated_relaxation_matches_discretization() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for cfg_idx in 0..20 {
        let n_sources = rng.random_range(2..=3usize);
        let signal_len = rng.random_range(5..=8usize);
        let num_classes = rng.random_range(3..=4usize);
        let c_f = rng.random_range(2..=3usize);
        let mac = FusionMacroConfig {
            cells: rng.random_range(1..=2usize),
            nodes: rng.random_range(1..=3usize),
        };
        let specs: Vec<SourceSpec> = (0..n_sources)
            .map(|s| SourceSpec {
                modality: format!("s{s}"),
                block: rng.random_range(0..3),
                channels: rng.random_range(2..=4usize),
            })
            .collect();
        let mut hyper =
            FusionHypernet::new(specs.clone(), mac, c_f, num_classes, 5000 + cfg_idx).unwrap();

        // Commit every choice by saturating its logits with gap 40.
        let mut chosen_cells = Vec::new();
        let mut chosen_ops = Vec::new();
        for p in 0..mac.cells {
            let avail = n_sources + p;
            let (cx, cy) = distinct_pair(&mut rng, avail);
            hyper.set_alpha(p, 0, saturated_gates(avail, cx)).unwrap();
            hyper.set_alpha(p, 1, saturated_gates(avail, cy)).unwrap();
            let mut nodes = Vec::new();
            for d in 0..mac.nodes {
                let cands = 2 + d;
                let (nx, ny) = distinct_pair(&mut rng, cands);
                hyper.set_beta(p, d, 0, saturated_gates(cands, nx)).unwrap();
                hyper.set_beta(p, d, 1, saturated_gates(cands, ny)).unwrap();
                nodes.push((nx, ny));
            }
            chosen_cells.push(((cx, cy), nodes));
        }
        let n_ops = ALL_FUSION_OPS.len();
        let mut gamma = vec![0.0; mac.cells * mac.nodes * n_ops];
        for r in 0..mac.cells * mac.nodes {
            let op = rng.random_range(0..n_ops);
            gamma[r * n_ops + op] = SATURATION_GAP;
            chosen_ops.push(op);
        }
        hyper
            .set_gamma(Tensor::param(gamma, &[mac.cells * mac.nodes, n_ops]).unwrap())
            .unwrap();

        let graph = hyper.discretize().unwrap();
        // The committed graph is exactly the saturated configuration.
        for (p, cell) in graph.cells.iter().enumerate() {
            let ((cx, cy), ref nodes) = chosen_cells[p];
            assert_eq!((cell.x, cell.y), (cx, cy));
            for (d, node) in cell.nodes.iter().enumerate() {
                assert_eq!((node.x, node.y), nodes[d]);
                assert_eq!(node.op, ALL_FUSION_OPS[chosen_ops[p * mac.nodes + d]]);
            }
        }

        let batch_size = rng.random_range(2..=4usize);
        let inputs: Vec<Tensor> = specs
            .iter()
            .map(|s| {
                let n = batch_size * s.channels * signal_len;
                let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::from_vec(data, &[batch_size, s.channels, signal_len]).unwrap()
            })
            .collect();
        let labels = (0..batch_size).map(|i| i % num_classes).collect();
        let batch = SourceBatch { inputs, labels };

        let relaxed = hyper.forward(&batch).unwrap();
        let committed = graph.forward(&batch).unwrap();
        assert_eq!(relaxed.shape(), committed.shape());
        let diff = relaxed
            .data()
            .iter()
            .zip(committed.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-6, "config {cfg_idx}: max |Δlogit| = {diff:.3e}");
        worst = worst.max(diff);
    }
    println!("criterion 3: PASS — 20 saturated configs agree (worst max |Δlogit| {worst:.2e})");
}

// ---------------------------------------------------------------------
// Criterion 4: the relaxed hardware term is exact at its corners.
// ---------------------------------------------------------------------

#[test]
fn criterion_04_hardware_loss_exactness() {
    let space = SpaceConfig {
        num_blocks: 2,
        depth_choices: vec![1, 2],
        kernel_choices: vec![3, 5],
        expand_choices: vec![1, 2],
    };
    let lut = synth_device(11, &ScaleProfile::slow_edge(), &space).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    // One-hot gamma: the relaxed expectation collapses to the committed
    // operator's table entry, bit for bit, and therefore to the fusion
    // term of the full pipeline cost.
    for mac in [
        FusionMacroConfig { cells: 1, nodes: 1 },
        FusionMacroConfig { cells: 2, nodes: 3 },
    ] {
        for op in ALL_FUSION_OPS {
            let gamma = one_hot_gamma(mac, op, 1000.0).unwrap();
            let ops = vec![op; mac.cells * mac.nodes];
            let discrete = fusion_discrete_cost(&ops, &lut).unwrap();
            for (metric, want) in
                [(CostMetric::Latency, discrete.lat_ms), (CostMetric::Energy, discrete.ergy_mj)]
            {
                let relaxed =
                    fusion_relaxed_cost(&gamma, mac, &lut, metric).unwrap().item().unwrap();
                assert_eq!(relaxed, want, "{op:?} {metric:?} C{} D{}", mac.cells, mac.nodes);
            }

            // And the pipeline splits into backbones + that exact term.
            let mm = MultimodalGenome {
                backbones: vec![
                    sample_uniform(&space, "m0", &mut rng),
                    sample_uniform(&space, "m1", &mut rng),
                ],
                macro_cfg: mac,
            };
            let total = candidate_cost(&mm, &ops, &lut).unwrap();
            let mut backbones = CostPair::ZERO;
            for b in &mm.backbones {
                backbones = backbones + fusenas_core::hwcost::backbone_cost(b, &lut).unwrap();
            }
            assert_eq!(total.lat_ms, (backbones + discrete).lat_ms);
            assert_eq!(total.ergy_mj, (backbones + discrete).ergy_mj);
        }
    }

    // Uniform gamma at C = D = 1: the expectation is the arithmetic mean
    // of the six table entries, to machine precision.
    let mac = FusionMacroConfig { cells: 1, nodes: 1 };
    let gamma = Tensor::zeros(&[1, ALL_FUSION_OPS.len()]).unwrap();
    for metric in [CostMetric::Latency, CostMetric::Energy] {
        let relaxed = fusion_relaxed_cost(&gamma, mac, &lut, metric).unwrap().item().unwrap();
        let mean = ALL_FUSION_OPS
            .iter()
            .map(|&op| lut.fusion_cost(op).unwrap().get(metric))
            .sum::<f64>()
            / ALL_FUSION_OPS.len() as f64;
        let rel = (relaxed - mean).abs() / mean.abs().max(1e-300);
        assert!(rel <= 1e-14, "{metric:?}: relaxed {relaxed} vs mean {mean} (rel {rel:.2e})");
    }

    println!("criterion 4: PASS — one-hot collapse exact for all 6 ops; uniform mean within 1e-14");
}

// ---------------------------------------------------------------------
// Criterion 5: weight sharing vs independently sliced copies.
// ---------------------------------------------------------------------

#[test]
fn criterion_05_weight_sharing_is_bit_exact() {
    let space = SpaceConfig::default();
    let spec = SyntheticTaskSpec {
        train_samples: 512,
        val_samples: 64,
        test_samples: 64,
        signal_len: 16,
        channels: 2,
        noise_sigma: 0.3,
    };
    let (train, _, _) = generate_all(&spec, 55).unwrap();
    let mut sup = ElasticSupernet::new("m0", space.clone(), 2, 4, 4, 55).unwrap();
    let tcfg = SupernetTrainConfig { epochs: 2, batch_size: 64, seed: 55, ..Default::default() };
    train_supernet(&mut sup, &train, &tcfg).unwrap();

    // Post-training parameter layout: stem pair, one (w, b) pair per
    // block and layer slot, then the head pair.
    let params = sup.collect_params();
    let md = space.max_depth();
    let layer_at = |block: usize, slot: usize| -> (&Tensor, &Tensor) {
        let at = 2 + 2 * (block * md + slot);
        (&params[at], &params[at + 1])
    };
    let (stem_w, stem_b) = (&params[0], &params[1]);
    let (head_w, head_b) = (&params[params.len() - 2], &params[params.len() - 1]);

    // Independent contiguous copies of the active weight slices: first
    // c_out filters, first c_in input channels, center k kernel columns.
    let crop = |full: &Tensor, c_out: usize, c_in: usize, k: usize| -> Tensor {
        let [_, fi, fk] = *full.shape() else { panic!("kernel rank") };
        let pad = (fk - k) / 2;
        let mut data = Vec::with_capacity(c_out * c_in * k);
        for o in 0..c_out {
            for i in 0..c_in {
                for t in 0..k {
                    data.push(full.data()[(o * fi + i) * fk + pad + t]);
                }
            }
        }
        Tensor::from_vec(data, &[c_out, c_in, k]).unwrap()
    };

    let (x, _) = train.modality_batch(0, &(0..8).collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(550);
    for trial in 0..10 {
        let genome = sample_uniform(&space, "m0", &mut rng);
        let shared = sup.forward_subnet(&genome, &x).unwrap();

        let mut h = x.conv1d(stem_w, Some(stem_b)).unwrap();
        let mut width = sup.base();
        for (j, block) in genome.blocks.iter().enumerate() {
            for (l, (&k, &e)) in
                block.active_kernels().iter().zip(block.active_expands()).enumerate()
            {
                let c_out = sup.base() * e;
                let (fw, fb) = layer_at(j, l);
                let w = crop(fw, c_out, width, k);
                let b = Tensor::from_vec(fb.data()[..c_out].to_vec(), &[c_out]).unwrap();
                h = h.conv1d(&w, Some(&b)).unwrap().relu().unwrap();
                width = c_out;
            }
        }
        let row = head_w.shape()[1];
        let head: Vec<f64> = (0..sup.num_classes())
            .flat_map(|r| head_w.data()[r * row..r * row + width].to_vec())
            .collect();
        let head = Tensor::from_vec(head, &[sup.num_classes(), width]).unwrap();
        let reference = h
            .mean_axis(2)
            .unwrap()
            .matmul2(&head.transpose_last().unwrap())
            .unwrap()
            .add_row(head_b)
            .unwrap();

        assert_eq!(shared.shape(), reference.shape());
        assert_eq!(shared.data(), reference.data(), "trial {trial}: logits drifted");
    }

    // Nested crops collapse: narrowing in stages equals the direct crop.
    let (full, _) = layer_at(1, 0);
    let [fo, fi, fk] = *full.shape() else { panic!("kernel rank") };
    let direct = full
        .narrow(0, 0, fo / 2)
        .unwrap()
        .narrow(1, 0, fi / 2)
        .unwrap()
        .narrow(2, (fk - 3) / 2, 3)
        .unwrap();
    let nested = full
        .narrow(2, (fk - 5) / 2, 5)
        .unwrap()
        .narrow(0, 0, fo / 2)
        .unwrap()
        .narrow(1, 0, fi / 2)
        .unwrap()
        .narrow(2, 1, 3)
        .unwrap();
    assert_eq!(direct.shape(), nested.shape());
    assert_eq!(direct.data(), nested.data());

    println!("criterion 5: PASS — 10 subnets bit-exact against sliced copies; crops nest");
}

// ---------------------------------------------------------------------
// Desk-scale fixture shared by criteria 6, 7, 8, 10.
// ---------------------------------------------------------------------

const DESK_SEED: u64 = 7;
const DESK_SUPERNET_EPOCHS: usize = 8;
const DESK_FUSION_EPOCHS: usize = 10;

struct DeskRun {
    log: Vec<RunRecord>,
    front: Vec<RunRecord>,
    log_jsonl: String,
    front_csv: String,
}

struct DeskFixture {
    train: MultimodalDataset,
    val: MultimodalDataset,
    test: MultimodalDataset,
    snapshots: Vec<SupernetSnapshot>,
    lut: DeviceLut,
    /// The canonical hardware-aware run (exponents 1, 1, 1).
    aware: DeskRun,
}

static DESK: OnceLock<DeskFixture> = OnceLock::new();

fn desk_engine_config(exponents: LossExponents) -> EngineConfig {
    EngineConfig {
        seed: DESK_SEED,
        generations: 6,
        population_size: 16,
        fusion: FusionTrainConfig {
            epochs: DESK_FUSION_EPOCHS,
            exponents,
            ..FusionTrainConfig::default()
        },
        ..EngineConfig::default()
    }
}

fn rebuild_supernets(snaps: &[SupernetSnapshot]) -> Vec<ElasticSupernet> {
    snaps.iter().map(|s| ElasticSupernet::from_snapshot(s).unwrap()).collect()
}

fn desk_run(fx_parts: (&[SupernetSnapshot], &DeviceLut, &MultimodalDataset, &MultimodalDataset), exponents: LossExponents) -> DeskRun {
    let (snaps, lut, train, val) = fx_parts;
    let supernets = rebuild_supernets(snaps);
    let ctx = SearchContext { supernets: &supernets, lut, train, val };
    let cfg = desk_engine_config(exponents);
    let mut log_jsonl = String::new();
    let outcome = engine::run(&cfg, &ctx, &mut |rec| {
        log_jsonl.push_str(&serde_json::to_string(rec).expect("record serializes"));
        log_jsonl.push('\n');
        Ok(())
    })
    .unwrap();
    let modalities = vec!["m0".to_string(), "m1".to_string()];
    let front_csv =
        exports::front_csv(&outcome.log, &outcome.front, &modalities, &SpaceConfig::default())
            .unwrap();
    DeskRun { log: outcome.log, front: outcome.front, log_jsonl, front_csv }
}

fn desk() -> &'static DeskFixture {
    DESK.get_or_init(|| {
        let spec = SyntheticTaskSpec::default(); // 4000/1000/1000, L=16, sigma=0.3
        let (train, val, test) = generate_all(&spec, DESK_SEED).unwrap();
        let space = SpaceConfig::default();
        let lut = synth_device(DESK_SEED, &ScaleProfile::fast_gpu(), &space).unwrap();
        let tcfg = SupernetTrainConfig {
            epochs: DESK_SUPERNET_EPOCHS,
            batch_size: 64,
            seed: DESK_SEED,
            ..Default::default()
        };
        let snapshots: Vec<SupernetSnapshot> = train
            .modalities()
            .iter()
            .map(|info| {
                let mut sup =
                    ElasticSupernet::new(&info.name, space.clone(), info.channels, 4, 4, DESK_SEED)
                        .unwrap();
                train_supernet(&mut sup, &train, &tcfg).unwrap();
                sup.snapshot()
            })
            .collect();
        let aware = desk_run((&snapshots, &lut, &train, &val), LossExponents::default());
        DeskFixture { train, val, test, snapshots, lut, aware }
    })
}

// ---------------------------------------------------------------------
// Criterion 6: multimodal fusion beats its unimodal backbones.
// ---------------------------------------------------------------------

#[test]
fn criterion_06_fusion_beats_every_backbone() {
    let fx = desk();
    let supernets = rebuild_supernets(&fx.snapshots);
    assert!(!fx.aware.front.is_empty());

    // Score every front member on the held-out test split.
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_id = 0;
    for rec in &fx.aware.front {
        let acc = engine::graph_accuracy_on(
            &supernets,
            &rec.genome,
            &rec.graph,
            &fx.test,
            None,
            256,
        )
        .unwrap();
        if acc > best_acc {
            best_acc = acc;
            best_id = rec.candidate_id;
        }
    }

    // Every backbone of every front member stays near its unimodal
    // ceiling (each modality resolves one of the two latent bits).
    let mut worst_unimodal = f64::NEG_INFINITY;
    for rec in &fx.aware.front {
        for (sup, genome) in supernets.iter().zip(&rec.genome.backbones) {
            let acc = sup.evaluate_subnet(genome, &fx.test, 256).unwrap();
            worst_unimodal = worst_unimodal.max(acc);
        }
    }

    assert!(
        best_acc >= 0.85,
        "criterion 6: FAIL — best multimodal test accuracy {best_acc:.4} < 0.85"
    );
    assert!(
        worst_unimodal <= 0.60,
        "criterion 6: FAIL — a unimodal backbone reached {worst_unimodal:.4} > 0.60"
    );
    println!(
        "criterion 6: PASS — best multimodal test acc {best_acc:.4} (candidate {best_id}); highest unimodal {worst_unimodal:.4}"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: hardware terms in the loss buy latency at similar accuracy.
// ---------------------------------------------------------------------

#[test]
fn criterion_07_hardware_awareness_lowers_latency() {
    let fx = desk();
    let task_only = desk_run(
        (&fx.snapshots, &fx.lut, &fx.train, &fx.val),
        LossExponents { a: 1.0, b: 0.0, c: 0.0 },
    );

    let best_acc = task_only
        .front
        .iter()
        .map(|r| r.multimodal.acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_lat = task_only
        .front
        .iter()
        .map(|r| r.multimodal.lat_ms)
        .fold(f64::INFINITY, f64::min);

    let winner = fx
        .aware
        .front
        .iter()
        .filter(|r| r.multimodal.lat_ms < min_lat && r.multimodal.acc >= best_acc - 0.05)
        .min_by(|a, b| a.multimodal.lat_ms.total_cmp(&b.multimodal.lat_ms));

    match winner {
        Some(rec) => println!(
            "criterion 7: PASS — hardware-aware candidate {}: {:.3} ms < {:.3} ms at acc {:.4} (task-only best {:.4})",
            rec.candidate_id, rec.multimodal.lat_ms, min_lat, rec.multimodal.acc, best_acc
        ),
        None => panic!(
            "criterion 7: FAIL — no hardware-aware front member beats {min_lat:.3} ms within 5 points of {best_acc:.4}"
        ),
    }
}

// ---------------------------------------------------------------------
// Criterion 8: identical seeds reproduce the artifacts byte for byte.
// ---------------------------------------------------------------------

#[test]
fn criterion_08_reruns_are_byte_identical() {
    let fx = desk();
    let again = desk_run((&fx.snapshots, &fx.lut, &fx.train, &fx.val), LossExponents::default());
    assert_eq!(fx.aware.log_jsonl, again.log_jsonl, "run logs differ between identical runs");
    assert_eq!(fx.aware.front_csv, again.front_csv, "front CSVs differ between identical runs");
    assert_eq!(fx.aware.log, again.log);
    println!(
        "criterion 8: PASS — {} log bytes and {} front-CSV bytes identical across reruns",
        fx.aware.log_jsonl.len(),
        fx.aware.front_csv.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 9: statistical contracts of the genetic operators.
// ---------------------------------------------------------------------

#[test]
fn criterion_09_operator_statistics() {
    let space = SpaceConfig::default(); // three choices per dimension
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let base = sample_uniform(&space, "m0", &mut rng);
    let trials = 10_000usize;

    let mut depth_hist = vec![0usize; space.depth_choices.len()];
    let mut kernel_hist = vec![0usize; space.kernel_choices.len()];
    let mut expand_hist = vec![0usize; space.expand_choices.len()];
    for _ in 0..trials {
        let m = mutate(&base, &space, 1.0, &mut rng).unwrap();
        let b0 = &m.blocks[0];
        depth_hist[space.depth_choices.iter().position(|&d| d == b0.depth).unwrap()] += 1;
        kernel_hist[space.kernel_choices.iter().position(|&k| k == b0.kernels[0]).unwrap()] += 1;
        expand_hist[space.expand_choices.iter().position(|&e| e == b0.expands[0]).unwrap()] += 1;
    }
    for (name, hist) in
        [("depth", &depth_hist), ("kernel", &kernel_hist), ("expand", &expand_hist)]
    {
        for (i, &count) in hist.iter().enumerate() {
            let freq = count as f64 / trials as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() <= 0.02,
                "{name} choice {i}: frequency {freq:.4} outside 1/3 ± 0.02"
            );
        }
    }

    // Crossover: whatever lands in the children at position j is exactly
    // the pair of parent blocks at position j, possibly swapped.
    for trial in 0..trials {
        let p1 = sample_uniform(&space, "m0", &mut rng);
        let p2 = sample_uniform(&space, "m0", &mut rng);
        let (c1, c2) = crossover(&p1, &p2, 0.8, &mut rng).unwrap();
        for j in 0..space.num_blocks {
            let kept = c1.blocks[j] == p1.blocks[j] && c2.blocks[j] == p2.blocks[j];
            let swapped = c1.blocks[j] == p2.blocks[j] && c2.blocks[j] == p1.blocks[j];
            assert!(kept || swapped, "trial {trial}, block {j}: multiset broken");
        }
    }

    println!(
        "criterion 9: PASS — resample frequencies {:?}/{:?}/{:?} of {trials} within 1/3 ± 0.02; crossover preserved blocks in all trials",
        depth_hist, kernel_hist, expand_hist
    );
}

// ---------------------------------------------------------------------
// Criterion 10: the single-operator ablation sweep.
// ---------------------------------------------------------------------

#[test]
fn criterion_10_single_op_sweep() {
    let fx = desk();
    let supernets = rebuild_supernets(&fx.snapshots);
    let ctx =
        SearchContext { supernets: &supernets, lut: &fx.lut, train: &fx.train, val: &fx.val };
    let cfg = desk_engine_config(LossExponents::default());
    let rows = engine::ablation_run(AblationMode::SingleOpSweep, &cfg, &ctx).unwrap();

    assert_eq!(rows.len(), ALL_FUSION_OPS.len() + 1, "rows: {rows:?}");
    let (fixed, searched): (Vec<_>, Vec<_>) =
        rows.iter().partition(|r| r.label.starts_with("single-op:"));
    assert_eq!(fixed.len(), ALL_FUSION_OPS.len());
    assert_eq!(searched.len(), 1);
    assert_eq!(searched[0].label, "searched-ops");

    let best_fixed = fixed.iter().map(|r| r.acc).fold(f64::NEG_INFINITY, f64::max);
    let searched_acc = searched[0].acc;
    assert!(
        searched_acc >= best_fixed - 0.02,
        "criterion 10: FAIL — searched {searched_acc:.4} < best fixed {best_fixed:.4} - 0.02"
    );
    let outright = if searched_acc >= best_fixed { "wins outright" } else { "within tolerance" };
    println!(
        "criterion 10: PASS — 6 fixed rows (best {best_fixed:.4}) + searched {searched_acc:.4} ({outright})"
    );
}
