//! Central finite-difference checks (Richardson-extrapolated) of every tape primitive and the full ELBO.

use scvae_core::gradcheck::Case;
use scvae_core::ops::NormMode;
use scvae_core::ModelKind;

const SEEDS: u64 = 100;

fn assert_case(case: Case) {
    let report = case.run(SEEDS).unwrap();
    println!("{case}: {report}");
    assert!(report.passed(), "{case}: {report}");
}

#[test]
fn conv2d_gradients() {
    assert_case(Case::Conv2d);
}

#[test]
fn transpose_conv2d_gradients() {
    assert_case(Case::TransposeConv2d);
}

#[test]
fn dense_gradients() {
    assert_case(Case::Dense);
}

#[test]
fn relu_and_clamp_gradients() {
    assert_case(Case::ReluClamp);
}

#[test]
fn batchnorm_gradients() {
    assert_case(Case::BatchNorm);
}

#[test]
fn shape_plumbing_gradients() {
    assert_case(Case::ShapePlumbing);
}

#[test]
fn arithmetic_gradients() {
    assert_case(Case::Arithmetic);
}

#[test]
fn probabilistic_head_gradients() {
    assert_case(Case::ProbabilisticHead);
}

#[test]
fn scvae_elbo_gradients_train_mode() {
    assert_case(Case::Elbo(ModelKind::Scvae, NormMode::Train));
}

#[test]
fn scvae_elbo_gradients_infer_mode() {
    assert_case(Case::Elbo(ModelKind::Scvae, NormMode::Infer));
}

#[test]
fn cnn_vae_elbo_gradients_train_mode() {
    assert_case(Case::Elbo(ModelKind::CnnVae, NormMode::Train));
}

#[test]
fn cnn_vae_elbo_gradients_infer_mode() {
    assert_case(Case::Elbo(ModelKind::CnnVae, NormMode::Infer));
}
