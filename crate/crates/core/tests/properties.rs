use hcl_core::verify::{registry, run_property, Fixture, Profile};

const EXPECTED: &[&str] = &[
    "tensor.finite_differences",
    "tensor.determinism",
    "tensor.broadcast_oracle",
    "spectral.naive_dft",
    "spectral.round_trip",
    "spectral.parseval",
    "spectral.linearity",
    "spectral.real_masking",
    "spectral.focal_loss_sign",
    "hrr.zero_iff_exact",
    "hrr.gradient",
    "hrr.monotone_masking",
    "tag.residual_identity",
    "tag.partition_of_unity",
    "tag.channel_equivariance",
    "pcc.confidence_sum",
    "pcc.fusion_weights",
    "pcc.kl_minimum",
    "pcc.gradients",
    "pcc.cosine_scale_invariance",
    "model.snapshot_replay",
    "model.no_dead_parameters",
    "model.shared_encoder",
    "pipeline.ground_truth_blind",
    "pipeline.episodic_isolation",
    "pipeline.loss_composition",
    "pipeline.self_supervised_descent",
    "data.degrade_deterministic",
    "data.degrade_range",
    "data.metric_bounds",
    "data.monotone_difficulty",
];

#[test]
fn registry_matches_the_invariant_list() {
    let names: Vec<&str> = registry().iter().map(|p| p.name).collect();
    assert_eq!(names, EXPECTED);
    for module in ["tensor-core", "spectral", "hrr", "tag", "pcc", "model", "pipeline", "data-bench"] {
        assert!(registry().iter().any(|p| p.module == module), "{module} has no property");
    }
}

#[test]
fn seeds_are_unique() {
    let mut seeds: Vec<u64> = registry().iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), registry().len());
}

#[test]
fn untrained_properties_pass() {
    // properties needing the trained model run in the acceptance target
    let mut fixture = Fixture::new(Profile::compact());
    let mut failures = Vec::new();
    for p in registry().iter().filter(|p| !p.needs_training) {
        let r = run_property(p, &mut fixture);
        println!("{r}");
        if !r.passed {
            failures.push(r.name);
        }
    }
    assert!(failures.is_empty(), "failed: {failures:?}");
}
