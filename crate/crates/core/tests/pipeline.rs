use pwdpd_core::pipeline::{run_method, ExperimentConfig, Method};

/// Largest step of the static response across an inner region boundary,
/// relative to the response at the top of the range.
fn largest_boundary_jump(cfg: &ExperimentConfig) -> f64 {
    let r = run_method::<f64>(cfg, Method::PwCl).unwrap();
    let m = r.model.unwrap();
    let p = m.partition().unwrap().clone();
    assert!(p.num_regions() > 1);
    let full = m.static_response(p.a_max()).unwrap().norm();
    let mut worst = 0.0f64;
    for &b in &p.boundaries[1..p.num_regions()] {
        let below = m.static_response(b * (1.0 - 1e-9)).unwrap();
        let at = m.static_response(b).unwrap();
        let jump = (at - below).norm() / full;
        println!("boundary {b:.4}: jump {:.3} % of full scale", 100.0 * jump);
        worst = worst.max(jump);
    }
    worst
}

#[test]
fn doherty_model_is_continuous() {
    assert!(largest_boundary_jump(&ExperimentConfig::doherty_n3()) < 0.01);
}

#[test]
#[ignore = "known failure: the array model steps by about 2.5 % of full scale at its upper boundary"]
fn array_model_is_continuous() {
    assert!(largest_boundary_jump(&ExperimentConfig::array8_deep()) < 0.01);
}

#[test]
fn linear_plant_needs_no_correction() {
    let r = run_method::<f64>(&ExperimentConfig::linear_sanity(), Method::PwCl).unwrap();
    let s = r.summary();
    assert!(s.evm_percent < 0.1, "{s:?}");
    assert!(s.aclr_main_dbc > 55.0, "{s:?}");
    let m = r.model.unwrap();
    let g = m.native_gamma();
    let largest = g.iter().map(|c| c.norm()).fold(0.0, f64::max);
    assert!(largest < 1e-6, "{largest}");
}

#[test]
fn same_seed_same_result() {
    let cfg = ExperimentConfig::linear_sanity();
    let a = run_method::<f64>(&cfg, Method::PwCl).unwrap();
    let b = run_method::<f64>(&cfg, Method::PwCl).unwrap();
    assert_eq!(a.summary(), b.summary());
    assert_eq!(a.model.unwrap().gamma, b.model.unwrap().gamma);
}
