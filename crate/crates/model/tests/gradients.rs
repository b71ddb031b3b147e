use mvx_autograd::gradcheck::GradCheck;
use mvx_model::gradient_suite;

fn assert_suite(reports: &[gradient_suite::BlockCheck], tol: f64) {
    for c in reports {
        println!(
            "{:<18} rel err {:.3e} (worst {}, {} coords, {} kinked)",
            c.block, c.report.max_rel_error, c.report.worst, c.report.coords_checked, c.report.kinks
        );
    }
    for c in reports {
        assert!(c.report.max_rel_error < tol, "{}: {:?}", c.block, c.report.per_tensor);
        assert!(c.report.coords_checked > 0);
    }
}

#[test]
fn composed_blocks_f32() {
    assert_suite(&gradient_suite::run::<f32>(GradCheck::f32_default()).unwrap(), 1e-2);
}

#[test]
fn composed_blocks_f64() {
    assert_suite(&gradient_suite::run::<f64>(GradCheck::f64_default()).unwrap(), 1e-5);
}
