//! Runs every acceptance criterion at its stated tolerance and asserts the
//! verdict. One test per criterion; each prints the criterion's measured
//! value, threshold, and verdict line.
//!
//! The criteria share trained fits through an in-process cache, so the tests
//! serialize on a lock to keep cache hits instead of racing to retrain.

use inrlab::acceptance::{run_criterion, AcceptOpts};
use std::sync::Mutex;

static SUITE_LOCK: Mutex<()> = Mutex::new(());

fn check(id: usize) {
    let _guard = SUITE_LOCK.lock().unwrap();
    let opts = AcceptOpts {
        scratch_dir: std::env::temp_dir().join("inrlab_accept_test"),
        ..AcceptOpts::default()
    };
    let outcome = run_criterion(id, &opts).unwrap();
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.line());
}

#[test]
fn criterion_1_gradient_correctness() {
    check(1);
}

#[test]
fn criterion_2_broken_chain_asymmetry() {
    check(2);
}

#[test]
fn criterion_3_stripe_interpolation() {
    check(3);
}

#[test]
fn criterion_4_expressive_power_ordering() {
    check(4);
}

#[test]
fn criterion_5_regularization_gap() {
    check(5);
}

#[test]
fn criterion_6_sdf_iou() {
    check(6);
}

#[test]
fn criterion_7_metric_exactness() {
    check(7);
}

#[test]
fn criterion_8_determinism() {
    check(8);
}

#[test]
fn criterion_9_transform_negative_control() {
    check(9);
}
