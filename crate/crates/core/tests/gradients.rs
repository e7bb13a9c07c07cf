//! Analytic gradients against central finite differences.

mod common;

use common::{max_relative_gradient_error, random_gradient_instance, seeded};

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (p, s, t) = random_gradient_instance(&mut rng);
        worst = worst.max(max_relative_gradient_error(&p, &s, &t));
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}
