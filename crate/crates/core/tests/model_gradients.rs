use holo_core::tensor::GradCheckOptions;
use holo_core::testkit::{micro_batch, objective_grad_check, Term};

// eps 1e-4 balances truncation against roundoff on gradients ~1e-7.
#[test]
fn every_objective_term_matches_finite_differences() {
    let (model, inputs, masks) = micro_batch(3).unwrap();
    let opts = GradCheckOptions {
        eps: 1e-4,
        max_coords_per_input: Some(3),
        seed: 9,
    };
    for term in Term::ALL {
        let r = objective_grad_check(&model, &inputs, &masks, term, &opts).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{}: {:?}", term.name(), r);
    }
}
