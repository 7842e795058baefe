//! Exact Carnot-group arithmetic from structure constants.
//!
//! Builds the first Heisenberg group and the quaternionic H-type group from
//! their stratified algebras, multiplies points with the closed-form BCH
//! polynomial, and checks the identities every later computation leans on:
//! associativity, inverses, dilation homogeneity of both homogeneous norms,
//! and the quasi-triangle inequality of the gauge metric.
//!
//! Run with `cargo run --release --example group_arithmetic`.

use carnot::algebra::presets;
use carnot::group::{CarnotGroup, Metric, NormKind, Point};
use carnot::rng::SeedTree;
use rand::Rng;

fn main() {
    let seeds = SeedTree::new(7);

    for (label, alg) in [
        ("heisenberg-1", presets::heisenberg(1).unwrap()),
        ("quaternionic", presets::quaternionic().unwrap()),
    ] {
        let group = CarnotGroup::new(alg).unwrap();
        println!(
            "{label}: dim {}, step {}, horizontal rank {}, homogeneous dimension Q = {}",
            group.dim(),
            group.step(),
            group.horizontal_dim(),
            group.homogeneous_dimension()
        );

        let dim = group.dim();
        let mut rng = seeds.stream(label);
        fn random_point(dim: usize, rng: &mut impl Rng) -> Point {
            let coords: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            Point::from_slice(&coords)
        }

        // Associativity of the BCH product over random triples. The product
        // is polynomial with rational coefficients, so the only residual is
        // floating-point roundoff.
        let mut worst: f64 = 0.0;
        for _ in 0..20_000 {
            let (a, b, c) =
                (random_point(dim, &mut rng), random_point(dim, &mut rng), random_point(dim, &mut rng));
            let left = group.mul(&group.mul(&a, &b), &c);
            let right = group.mul(&a, &group.mul(&b, &c));
            for i in 0..dim {
                worst = worst.max((left.0[i] - right.0[i]).abs());
            }
        }
        println!("  max associativity residual over 2·10^4 triples: {worst:.3e}");

        // Inverses: p · p⁻¹ lands back at the identity exactly (negation in
        // exponential coordinates, no roundoff at all).
        let p = random_point(dim, &mut rng);
        let e = group.mul(&p, &group.inv(&p));
        let back: f64 = (0..dim).map(|i| e.0[i].abs()).sum();
        println!("  ‖p · p⁻¹‖_1 = {back:.3e}");

        // Both homogeneous norms scale exactly under dilations: layer-i
        // coordinates pick up t^i, the norms pick up t.
        let metric_box = Metric::new(group.clone(), NormKind::Box).unwrap();
        let t = 1.7;
        let q = random_point(dim, &mut rng);
        let lhs = metric_box.norm(&group.dilate(t, &q));
        let rhs = t * metric_box.norm(&q);
        println!("  box-norm homogeneity: |‖δ_t q‖ − t‖q‖| = {:.3e}", (lhs - rhs).abs());

        if let Ok(metric) = Metric::new(group.clone(), NormKind::Gauge) {
            let lhs = metric.norm(&group.dilate(t, &q));
            let rhs = t * metric.norm(&q);
            println!("  gauge homogeneity:    |‖δ_t q‖ − t‖q‖| = {:.3e}", (lhs - rhs).abs());

            // The gauge quasi-norm is symmetric and satisfies a triangle
            // inequality up to a constant; certify it by sampling.
            let mut rng = seeds.stream("quasi");
            let report = metric.certify_quasi_triangle(2.0, 20_000, &mut rng);
            println!(
                "  quasi-triangle constant over {} samples: {:.6}",
                report.samples, report.constant
            );
        }
        println!();
    }
}
