use maskseed::check::{self, Fault};
use maskseed::model::{ModelConfig, ModelParams};
use maskseed::rng::stream;

const SEEDS: u64 = 20;

fn assert_pass(o: check::CheckOutcome) {
    assert!(o.passed, "{o}");
}

#[test]
fn layer_gradients_match_central_differences() {
    assert_pass(check::check_conv2d(SEEDS, None));
    assert_pass(check::check_linear(SEEDS));
    assert_pass(check::check_relu(SEEDS));
    assert_pass(check::check_maxpool(SEEDS));
    assert_pass(check::check_dropout(SEEDS));
    assert_pass(check::check_losses(SEEDS));
}

#[test]
fn injected_conv_fault_is_caught() {
    let o = check::check_conv2d(3, Some(Fault::Conv2d));
    assert!(!o.passed, "{o}");
    assert_eq!(o.name, "conv2d");
    assert_eq!(Fault::parse("conv2d").unwrap(), Fault::Conv2d);
    assert!(Fault::parse("relu").is_none());
}

#[test]
fn joint_loss_gradient_matches_central_differences() {
    assert_pass(check::check_joint_loss(SEEDS));
}

#[test]
fn loss_structure_holds() {
    assert_pass(check::check_loss_structure());
}

#[test]
fn dense_matches_patchwise() {
    assert_pass(check::check_dense_equivalence(SEEDS, &[(64, 64), (96, 64), (128, 160)]));
}

#[test]
fn interleaved_scores_match_shifted_evaluation() {
    assert_pass(check::check_interleave(4, &[(64, 64), (96, 64), (128, 160)]));
}

#[test]
fn metrics_match_brute_force() {
    assert_pass(check::check_metrics(1000, 7));
}

#[test]
fn low_rank_head_fits_full_rank_target() {
    let fit = check::fit_low_rank(16, 12, 16, 3, 1e-3).unwrap();
    assert!(fit.max_error <= 1e-3, "{fit:?}");
}

#[test]
fn low_rank_head_is_smaller_than_full_rank() {
    for base in [ModelConfig::desk(), ModelConfig::paper()] {
        let full = ModelConfig {
            full_rank: true,
            ..base.clone()
        };
        let low = base.seg_classifier_parameter_count();
        let dense = full.seg_classifier_parameter_count();
        assert!(low < dense, "{low} vs {dense}");
        assert!(base.parameter_count().unwrap() < full.parameter_count().unwrap());
        let d = base.seg_feature_dim();
        let m = base.mask_out * base.mask_out;
        assert_eq!(dense, d * m + m);
        assert_eq!(low, d * base.rank + base.rank + base.rank * m + m);
    }
    let desk = ModelConfig::desk();
    let built = ModelParams::<f32>::build(&desk, &mut stream(0, "init", 0)).unwrap();
    assert_eq!(built.parameter_count(), desk.parameter_count().unwrap());
}
