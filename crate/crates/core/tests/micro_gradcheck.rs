use std::time::Instant;

use epireader::autodiff::FaultInjection;
use epireader::micro::{micro_instance, MICRO_TOLERANCE};

#[test]
fn full_objective_matches_finite_differences() {
    let start = Instant::now();
    let micro = micro_instance(0).unwrap();
    let report = micro.check(FaultInjection::None).unwrap();
    assert_eq!(report.tensors.len(), micro.params.len());
    for t in &report.tensors {
        assert!(t.max_rel_err <= MICRO_TOLERANCE, "{} rel err {}", t.name, t.max_rel_err);
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn every_tensor_gets_a_nonzero_gradient() {
    use epireader::autodiff::Tape;
    let micro = micro_instance(0).unwrap();
    let mut tape = Tape::new();
    let loss = micro.objective(&micro.params, &mut tape).unwrap();
    let mut params = micro.params.clone();
    params.zero_grads();
    tape.backward(loss).unwrap().accumulate_into(&mut params);
    // out_b shifts every hypothesis score equally, so the softmax ignores it
    for (_, name, t) in params.iter().filter(|(_, n, _)| *n != "reasoner.out_b") {
        let g = t.grad.as_ref().unwrap();
        assert!(g.iter().any(|&x| x != 0.0), "{name} has an all-zero gradient");
    }
}

#[test]
fn broken_conv_backward_is_localized() {
    let micro = micro_instance(0).unwrap();
    let report = micro.check(FaultInjection::ConvFilters).unwrap();
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    assert_eq!(failed, ["reasoner.f_s", "reasoner.f_h"]);
}
