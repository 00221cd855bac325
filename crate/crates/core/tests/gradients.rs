//! Every reverse-mode gradient in the tensor module is verified against
//! central finite differences on randomly drawn inputs.

mod common;

use fusenas_core::tensor::gradcheck;

#[test]
fn reverse_mode_matches_finite_differences_on_every_op() {
    let instances = common::op_instances(0x5eed_01, 2);
    assert!(instances.len() >= 50, "catalog shrank to {}", instances.len());
    let mut worst: f64 = 0.0;
    for inst in &instances {
        match gradcheck(&inst.build, &inst.inputs, &inst.weights, 1e-4) {
            Ok(w) => worst = worst.max(w),
            Err(e) => panic!("{}: {e}", inst.name),
        }
    }
    // Central differences on smooth f64 code should do far better than
    // the acceptance bound; a worst case near 1e-4 would itself be a bug.
    assert!(worst < 1e-6, "suspiciously large worst rel err {worst:.3e}");
}

#[test]
fn gradcheck_catches_a_wrong_gradient() {
    // Sanity-check the checker itself: a forward that lies about its
    // gradient (detached square plus linear term) must be flagged.
    let inputs = vec![(vec![3], vec![0.7, -1.2, 0.4])];
    let weights = vec![1.0; 8];
    let build: common::Build = Box::new(|t| {
        let sq = t[0].mul(&t[0])?.detach();
        t[0].add(&sq)
    });
    let err = gradcheck(&build, &inputs, &weights, 1e-4);
    assert!(err.is_err(), "checker accepted a detached-path gradient");
}
