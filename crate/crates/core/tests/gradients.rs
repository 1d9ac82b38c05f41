mod common;

use common::{check_composite, check_l_cls, check_l_unc, max_err};

fn assert_close(report: Vec<(String, f64)>) {
    assert!(!report.is_empty());
    for (name, err) in &report {
        assert!(*err < 1e-4, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn l_cls_gradient() {
    assert_close(check_l_cls());
}

#[test]
fn l_unc_gradient_all_penalties_and_heads() {
    let r = check_l_unc();
    assert!(r.iter().any(|(n, _)| n.starts_with("udm.fsigma")));
    assert_close(r);
}

#[test]
fn fused_probability_gradient() {
    let r = check_composite();
    assert!(r.iter().any(|(n, _)| n == "U_e"));
    assert!(r.iter().any(|(n, _)| n.starts_with("ufm.re1")));
    let (name, err) = max_err(&r);
    assert!(err < 1e-4, "{name}: {err:.3e}");
    assert_close(r);
}
