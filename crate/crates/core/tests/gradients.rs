//! Analytic gradients against central differences.

mod support;

use support::grads;

const REL_TOL: f64 = 1e-4;

#[test]
fn dense() {
    assert!(grads::dense() < REL_TOL);
}

#[test]
fn mlp() {
    assert!(grads::mlp() < REL_TOL);
}

#[test]
fn sage_with_edge_attributes() {
    assert!(grads::sage_with_edge_attributes() < REL_TOL);
}

#[test]
fn bipartite_sage() {
    assert!(grads::bipartite_sage() < REL_TOL);
}

#[test]
fn time_embedding() {
    assert!(grads::time_embedding() < REL_TOL);
}

#[test]
fn full_denoiser() {
    let err = grads::denoiser();
    assert!(err < REL_TOL, "worst relative error {err}");
}
