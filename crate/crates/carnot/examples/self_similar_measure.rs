//! The natural self-similar measure and its Ahlfors–David regularity.
//!
//! A separated system with ratios satisfying `Σ ratio^{Q−1} = 1` carries a
//! unique self-similar probability measure whose cylinder weights are the
//! products `ratio^{Q−1}` along the word. This example builds the depth-n
//! node measure, checks the exact weight algebra, queries ball masses
//! through the lazy cylinder tree (no node list materialized), and runs the
//! log-log regularity scan whose slope estimates the measure's dimension.
//!
//! The scanned system is a dimension-calibration fixture: 512 maps at ratio
//! 1/8 on the first Heisenberg group, so the similarity dimension is
//! `log 512 / log 8 = 3 = Q − 1` exactly and the ambient volume fraction
//! (12.5%) is low enough for the scan window to be clean.
//!
//! Run with `cargo run --release --example self_similar_measure`.

use carnot::algebra::presets;
use carnot::group::{CarnotGroup, Metric, NormKind};
use carnot::measure::{
    ad_regularity_scan, calibration_system, cylinder_weight, similarity_dimension, AdScanOptions,
    BallMassOptions, DiscreteMeasure, ScaleTree, ScanSource, TreeKind,
};

fn main() {
    let group = CarnotGroup::new(presets::heisenberg(1).unwrap()).unwrap();
    let metric = Metric::new(group.clone(), NormKind::Gauge).unwrap();
    let q = group.homogeneous_dimension();

    let sys = calibration_system(metric, 512, 7).expect("farthest-point packing succeeds");
    println!(
        "calibration system: M = {}, r = {:.6}, similarity dimension {:.6} (target Q − 1 = {})",
        sys.m_count(),
        sys.r,
        similarity_dimension(&vec![sys.r; sys.m_count()]).unwrap(),
        q - 1
    );

    // Exact weight algebra on a small-depth node measure of the full
    // alphabet (the calibration system has no dilation letter, so its
    // "subsystem" is the whole thing).
    let mu = DiscreteMeasure::from_subsystem(&sys, 2, 1 << 22).unwrap();
    let total: f64 = (0..mu.len()).map(|i| mu.weight(i)).sum();
    println!("\ndepth-2 node measure: {} nodes, weights sum to 1 {:+.2e}", mu.len(), total - 1.0);
    let w = cylinder_weight(&sys, &[1, 2]);
    println!(
        "cylinder [1,2]: weight r^(2(Q-1)) = {w:.6e}, measured {:.6e}",
        mu.cylinder_mass(&[1, 2])
    );

    // Ball masses through the lazy tree: no depth-n enumeration, straddling
    // nodes refined until they resolve or fall below the resolution cap.
    let tree = ScaleTree::new(&sys, TreeKind::Subsystem, 0.0).unwrap();
    let center = sys.anchor();
    println!("\nball masses around a node of the attractor (lazy tree):");
    for radius in [0.5, 0.25, 0.125, 0.0625] {
        let mass = tree.ball_mass(&center, radius, BallMassOptions::default());
        println!(
            "  μ(B(z, {radius:>6.4})) ∈ [{:.6e}, {:.6e}]  ({} nodes visited)",
            mass.lower, mass.upper, mass.visited
        );
    }

    // The regularity scan: least-squares slope of log μ(B) against log ρ
    // over node-sampled centers, with two-sided constants. The lazy-tree
    // source scans depths whose node lists could never materialize.
    let scan = ad_regularity_scan(
        &sys,
        ScanSource::Tree { kind: TreeKind::Subsystem, depth: 5, floor: 0.0 },
        &AdScanOptions { n_centers: 8, n_radii: 8, seed: 7, ..AdScanOptions::default() },
    )
    .unwrap();
    println!(
        "\nregularity scan at tree depth 5 ({} samples in ρ ∈ [{:.3e}, {:.3e}]):",
        scan.samples.len(),
        scan.rho_min,
        scan.rho_max
    );
    println!("  slope {:.4} (target {})", scan.slope, scan.exponent_target);
    println!(
        "  C_low {:.4}, C_high {:.4}, regularity ratio {:.3}",
        scan.c_low, scan.c_high, scan.regularity_ratio
    );
}
