//! Carnot groups in exponential coordinates: products, dilations, metrics.
//!
//! A validated stratified algebra determines the group: points are coordinate
//! vectors, multiplication is the compiled BCH polynomial, inversion is
//! coordinate negation, and the dilations `δ_t` scale layer `i` by `t^i`.
//! Two homogeneous quasinorms are provided — the box norm (any step) and the
//! Kaplan gauge (step ≤ 2) — together with empirical certification of the
//! quasi-triangle constant and the sampling/packing helpers used by the
//! self-similar constructions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::bch::CompiledBch;
use crate::algebra::StratifiedAlgebra;
use crate::reduce::strict_max;

/// Hard cap on ambient dimension so points stay fixed-size and copyable.
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("ambient dimension {0} exceeds the supported maximum {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("the Kaplan gauge requires step at most 2, got step {0}")]
    GaugeRequiresStepTwo(usize),
}

/// A point of the group in exponential coordinates. Always `MAX_DIM` wide;
/// coordinates past the group's dimension are zero and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point(pub [f64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0.0; MAX_DIM]);

    pub fn from_slice(coords: &[f64]) -> Self {
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point(c)
    }

    pub fn as_slice(&self, dim: usize) -> &[f64] {
        &self.0[..dim]
    }
}

/// A Carnot group compiled from a validated stratified algebra.
#[derive(Debug)]
pub struct CarnotGroup {
    alg: StratifiedAlgebra,
    bch: CompiledBch,
    /// 1-based degree of each coordinate, padded to `MAX_DIM` with 1s.
    degree: [u32; MAX_DIM],
    dim: usize,
}

impl CarnotGroup {
    pub fn new(alg: StratifiedAlgebra) -> Result<Arc<Self>, GroupError> {
        let dim = alg.dim();
        if dim > MAX_DIM {
            return Err(GroupError::DimensionTooLarge(dim));
        }
        let bch = CompiledBch::compile(&alg);
        let mut degree = [1u32; MAX_DIM];
        for i in 0..dim {
            degree[i] = alg.degree(i) as u32;
        }
        Ok(Arc::new(Self { alg, bch, degree, dim }))
    }

    pub fn algebra(&self) -> &StratifiedAlgebra {
        &self.alg
    }

    pub fn name(&self) -> &str {
        self.alg.name()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.alg.step()
    }

    /// Dimension of the horizontal (first) layer.
    pub fn horizontal_dim(&self) -> usize {
        self.alg.layer_range(1).len()
    }

    pub fn homogeneous_dimension(&self) -> usize {
        self.alg.homogeneous_dimension()
    }

    pub fn point(&self, coords: &[f64]) -> Point {
        assert_eq!(coords.len(), self.dim, "coordinate count must match dimension");
        Point::from_slice(coords)
    }

    /// Group product via the compiled BCH polynomial.
    #[inline]
    pub fn mul(&self, a: &Point, b: &Point) -> Point {
        let mut out = Point::ORIGIN;
        self.bch.evaluate(&a.0[..self.dim], &b.0[..self.dim], &mut out.0[..self.dim]);
        out
    }

    /// Group inverse: in exponential coordinates of a nilpotent group this is
    /// exactly coordinate negation.
    #[inline]
    pub fn inv(&self, a: &Point) -> Point {
        let mut out = Point::ORIGIN;
        for i in 0..self.dim {
            out.0[i] = -a.0[i];
        }
        out
    }

    /// `a^{-1} · b`, the displacement entering left-invariant distances.
    #[inline]
    pub fn left_diff(&self, a: &Point, b: &Point) -> Point {
        self.mul(&self.inv(a), b)
    }

    /// Anisotropic dilation `δ_t`: coordinate `i` scales by `t^{degree(i)}`.
    #[inline]
    pub fn dilate(&self, t: f64, p: &Point) -> Point {
        let mut out = Point::ORIGIN;
        for i in 0..self.dim {
            out.0[i] = p.0[i] * t.powi(self.degree[i] as i32);
        }
        out
    }

    /// Box quasinorm: `max_layer |p_layer|^(1/layer)` with Euclidean layer
    /// norms. Homogeneous of degree 1 under dilations at any step.
    pub fn box_norm(&self, p: &Point) -> f64 {
        let mut best = 0.0f64;
        for layer in 1..=self.step() {
            let range = self.alg.layer_range(layer);
            let sq: f64 = range.map(|i| p.0[i] * p.0[i]).sum();
            let val = sq.sqrt().powf(1.0 / layer as f64);
            if val > best {
                best = val;
            }
        }
        best
    }

    /// Kaplan gauge `N(x, t) = (|x|^4 + 16 |t|^2)^(1/4)` for step ≤ 2 groups
    /// (`N(x) = |x|` when abelian). On H-type groups the induced left-invariant
    /// distance is a genuine metric with triangle constant 1.
    pub fn gauge_norm(&self, p: &Point) -> Result<f64, GroupError> {
        if self.step() > 2 {
            return Err(GroupError::GaugeRequiresStepTwo(self.step()));
        }
        Ok(self.gauge_norm_unchecked(p))
    }

    #[inline]
    pub(crate) fn gauge_norm_unchecked(&self, p: &Point) -> f64 {
        let h: f64 = self.alg.layer_range(1).map(|i| p.0[i] * p.0[i]).sum();
        if self.step() == 1 {
            return h.sqrt();
        }
        let v: f64 = self.alg.layer_range(2).map(|i| p.0[i] * p.0[i]).sum();
        (h * h + 16.0 * v).sqrt().sqrt()
    }
}

/// Which homogeneous quasinorm backs a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Layer-wise box norm; available at every step.
    Box,
    /// Kaplan gauge; step ≤ 2 only, a true metric on H-type groups.
    Gauge,
}

/// A left-invariant homogeneous (quasi)metric `d(p, q) = ‖p^{-1} q‖`.
#[derive(Clone)]
pub struct Metric {
    group: Arc<CarnotGroup>,
    kind: NormKind,
}

impl Metric {
    pub fn new(group: Arc<CarnotGroup>, kind: NormKind) -> Result<Self, GroupError> {
        if kind == NormKind::Gauge && group.step() > 2 {
            return Err(GroupError::GaugeRequiresStepTwo(group.step()));
        }
        Ok(Self { group, kind })
    }

    pub fn group(&self) -> &Arc<CarnotGroup> {
        &self.group
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    #[inline]
    pub fn norm(&self, p: &Point) -> f64 {
        match self.kind {
            NormKind::Box => self.group.box_norm(p),
            NormKind::Gauge => self.group.gauge_norm_unchecked(p),
        }
    }

    #[inline]
    pub fn dist(&self, p: &Point, q: &Point) -> f64 {
        self.norm(&self.group.left_diff(p, q))
    }

    /// Empirical quasi-triangle constant: the largest observed ratio
    /// `d(p, r) / (d(p, q) + d(q, r))` over sampled triples in a ball around
    /// the origin, floored at 1. For the gauge on H-type groups this stays at
    /// 1 (up to float noise); for box norms it certifies the constant the
    /// separation estimates must absorb.
    pub fn certify_quasi_triangle(&self, radius: f64, samples: usize, rng: &mut impl Rng) -> QuasiTriangleReport {
        let ball = Ball { center: Point::ORIGIN, radius };
        let mut worst = 1.0f64;
        for _ in 0..samples {
            let p = sample_ball(self, &ball, rng);
            let q = sample_ball(self, &ball, rng);
            let r = sample_ball(self, &ball, rng);
            let denom = self.dist(&p, &q) + self.dist(&q, &r);
            if denom > 1e-12 {
                let ratio = self.dist(&p, &r) / denom;
                if ratio > worst {
                    worst = ratio;
                }
            }
        }
        QuasiTriangleReport { constant: worst, samples }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuasiTriangleReport {
    /// Largest observed `d(p,r) / (d(p,q) + d(q,r))`, at least 1.
    pub constant: f64,
    pub samples: usize,
}

/// A metric ball.
#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, metric: &Metric, p: &Point) -> bool {
        metric.dist(&self.center, p) <= self.radius
    }
}

/// Draws a Haar-uniform point of the unit box-norm ball: the ball is the
/// product of Euclidean layer balls, and Lebesgue measure in exponential
/// coordinates is the Haar measure, so layers sample independently.
fn sample_unit_box(group: &CarnotGroup, rng: &mut impl Rng) -> Point {
    let mut p = Point::ORIGIN;
    for layer in 1..=group.step() {
        let range = group.algebra().layer_range(layer);
        let k = range.len();
        // Rejection-sample the Euclidean unit ball of the layer.
        loop {
            let coords: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sq: f64 = coords.iter().map(|c| c * c).sum();
            if sq <= 1.0 {
                for (offset, i) in range.clone().enumerate() {
                    p.0[i] = coords[offset];
                }
                break;
            }
        }
    }
    p
}

/// Uniform sample of a metric ball. Box balls sample directly; gauge balls
/// reject from the unit box ball, which contains them (`N ≤ 1` forces
/// `|x| ≤ 1` and `|t| ≤ 1/4`).
pub fn sample_ball(metric: &Metric, ball: &Ball, rng: &mut impl Rng) -> Point {
    let group = metric.group();
    let unit = match metric.kind() {
        NormKind::Box => sample_unit_box(group, rng),
        NormKind::Gauge => loop {
            // Gauge unit ball: |x| ≤ 1 and 16|t|^2 ≤ 1, so it sits inside the
            // box ball of radius 1 except the vertical part needs |t| ≤ 1/4;
            // the unit box ball encloses it entirely. Reject on the gauge.
            let cand = sample_unit_box(group, rng);
            if group.gauge_norm_unchecked(&cand) <= 1.0 {
                break cand;
            }
        },
    };
    group.mul(&ball.center, &group.dilate(ball.radius, &unit))
}

/// Largest observed Lipschitz ratio `d(δ_t p, δ_s p) / |t - s|` over sampled
/// points of `region` and a dilation grid on `[0, 1]`. Bounds how fast points
/// travel along dilation orbits, which controls how finely a dilation
/// parameter must be tuned to give separated images.
pub fn dilation_lipschitz(
    metric: &Metric,
    region: &Ball,
    point_samples: usize,
    grid: usize,
    rng: &mut impl Rng,
) -> f64 {
    let group = metric.group();
    let mut ratios = Vec::with_capacity(point_samples * grid);
    for _ in 0..point_samples {
        let p = sample_ball(metric, region, rng);
        for g in 0..grid {
            let t = (g + 1) as f64 / grid as f64;
            let s = g as f64 / grid as f64;
            let d = metric.dist(&group.dilate(t, &p), &group.dilate(s, &p));
            ratios.push(d * grid as f64);
        }
    }
    strict_max(&ratios)
}

/// Greedy packing: keeps candidates pairwise at least `separation` apart,
/// scanning in order. Deterministic given the candidate order.
pub fn greedy_packing(metric: &Metric, candidates: &[Point], separation: f64) -> Vec<Point> {
    let mut kept: Vec<Point> = Vec::new();
    'outer: for c in candidates {
        for k in &kept {
            if metric.dist(c, k) < separation {
                continue 'outer;
            }
        }
        kept.push(*c);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::presets;
    use crate::rng::SeedTree;

    fn heis() -> Arc<CarnotGroup> {
        CarnotGroup::new(presets::heisenberg(1).unwrap()).unwrap()
    }

    #[test]
    fn group_axioms_hold_numerically() {
        for alg in [presets::heisenberg(1).unwrap(), presets::quaternionic().unwrap()] {
            let g = CarnotGroup::new(alg).unwrap();
            let mut rng = SeedTree::new(7).stream("axioms");
            let dim = g.dim();
            for _ in 0..50 {
                let p = random_point(dim, &mut rng);
                let q = random_point(dim, &mut rng);
                let id = g.mul(&p, &g.inv(&p));
                for i in 0..dim {
                    assert!(id.0[i].abs() < 1e-12);
                }
                let lhs = g.mul(&g.mul(&p, &q), &p);
                let rhs = g.mul(&p, &g.mul(&q, &p));
                for i in 0..dim {
                    assert!((lhs.0[i] - rhs.0[i]).abs() < 1e-12);
                }
            }
        }
    }

    fn random_point(dim: usize, rng: &mut impl Rng) -> Point {
        let coords: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Point::from_slice(&coords)
    }

    #[test]
    fn dilations_are_homomorphisms_and_homogeneous() {
        let g = heis();
        let metric = Metric::new(g.clone(), NormKind::Gauge).unwrap();
        let mut rng = SeedTree::new(8).stream("dilate");
        for _ in 0..50 {
            let p = random_point(3, &mut rng);
            let q = random_point(3, &mut rng);
            let t = rng.gen_range(0.1..3.0);
            let left = g.dilate(t, &g.mul(&p, &q));
            let right = g.mul(&g.dilate(t, &p), &g.dilate(t, &q));
            for i in 0..3 {
                assert!((left.0[i] - right.0[i]).abs() < 1e-12);
            }
            let n1 = metric.norm(&g.dilate(t, &p));
            let n0 = metric.norm(&p);
            assert!((n1 - t * n0).abs() < 1e-12 * (1.0 + n0));
            let b = g.box_norm(&g.dilate(t, &p));
            assert!((b - t * g.box_norm(&p)).abs() < 1e-10 * (1.0 + g.box_norm(&p)));
        }
    }

    #[test]
    fn gauge_frozen_values_and_left_invariance() {
        let g = heis();
        let metric = Metric::new(g.clone(), NormKind::Gauge).unwrap();
        assert_eq!(metric.norm(&Point::from_slice(&[1.0, 0.0, 0.0])), 1.0);
        // N(0,0,1) = (16)^(1/4) = 2.
        assert!((metric.norm(&Point::from_slice(&[0.0, 0.0, 1.0])) - 2.0).abs() < 1e-15);
        let mut rng = SeedTree::new(9).stream("invariance");
        for _ in 0..50 {
            let p = random_point(3, &mut rng);
            let q = random_point(3, &mut rng);
            let h = random_point(3, &mut rng);
            let d0 = metric.dist(&p, &q);
            let d1 = metric.dist(&g.mul(&h, &p), &g.mul(&h, &q));
            assert!((d0 - d1).abs() < 1e-11 * (1.0 + d0));
        }
    }

    #[test]
    fn gauge_is_a_metric_on_heisenberg() {
        // Cygan's theorem: on H-type groups the gauge distance satisfies the
        // genuine triangle inequality. Certify empirically.
        let g = heis();
        let metric = Metric::new(g, NormKind::Gauge).unwrap();
        let mut rng = SeedTree::new(10).stream("triangle");
        let report = metric.certify_quasi_triangle(2.0, 4000, &mut rng);
        assert!(report.constant <= 1.0 + 1e-9, "constant {}", report.constant);
    }

    #[test]
    fn box_norm_quasi_triangle_is_bounded() {
        let g = CarnotGroup::new(presets::filiform(4).unwrap()).unwrap();
        let metric = Metric::new(g, NormKind::Box).unwrap();
        let mut rng = SeedTree::new(11).stream("box-triangle");
        let report = metric.certify_quasi_triangle(1.5, 2000, &mut rng);
        assert!(report.constant >= 1.0);
        assert!(report.constant < 4.0, "constant {}", report.constant);
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let g = heis();
        for kind in [NormKind::Box, NormKind::Gauge] {
            let metric = Metric::new(g.clone(), kind).unwrap();
            let ball = Ball { center: Point::from_slice(&[0.3, -0.2, 0.1]), radius: 0.5 };
            let mut rng = SeedTree::new(12).stream("ball");
            for _ in 0..500 {
                let p = sample_ball(&metric, &ball, &mut rng);
                assert!(metric.dist(&ball.center, &p) <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn greedy_packing_respects_separation() {
        let g = heis();
        let metric = Metric::new(g.clone(), NormKind::Gauge).unwrap();
        let ball = Ball { center: Point::ORIGIN, radius: 1.0 };
        let mut rng = SeedTree::new(13).stream("pack");
        let candidates: Vec<Point> = (0..400).map(|_| sample_ball(&metric, &ball, &mut rng)).collect();
        let kept = greedy_packing(&metric, &candidates, 0.4);
        assert!(kept.len() > 5);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(metric.dist(a, b) >= 0.4);
            }
        }
    }

    #[test]
    fn dilation_orbits_have_finite_speed() {
        let g = heis();
        let metric = Metric::new(g.clone(), NormKind::Gauge).unwrap();
        let region = Ball { center: Point::ORIGIN, radius: 1.0 };
        let mut rng = SeedTree::new(14).stream("c0");
        let c0 = dilation_lipschitz(&metric, &region, 64, 32, &mut rng);
        // Points at gauge distance ≤ 1 move at speed ≥ their norm but the
        // vertical part can make orbits faster than Euclidean ones.
        assert!(c0 >= 0.5 && c0 < 10.0, "c0 = {c0}");
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let err = CarnotGroup::new(presets::heisenberg(8).unwrap()).unwrap_err();
        assert_eq!(err, GroupError::DimensionTooLarge(17));
    }
}
