//! Truncated singular integrals of the Riesz-type kernel against the
//! surrogate measure.
//!
//! Everything here evaluates finite, ε-truncated quantities
//! `T^ε(x) = Σ_{d(x,y) > ε} w(y) · k(x⁻¹y)` and their suprema over
//! truncation grids; no principal value is ever claimed. Each evaluation
//! carries a first-order error bar assembled from two empirically certified
//! kernel constants (see [`KernelBounds`]): the far-field smoothness modulus
//! `|k(u·h) − k(u)| ≤ Ĉ ‖h‖ / ‖u‖^Q` and the magnitude bound
//! `‖k(u)‖ ≤ K̂ ‖u‖^{1−Q}`.
//!
//! Two quadrature backends mirror the two measure representations:
//!
//! - node sums over a [`DiscreteMeasure`], exact for the depth-`n` surrogate,
//!   with cylinders straddling the ε-sphere refined exactly one level and
//!   the remaining boundary ambiguity charged to the error bar;
//! - a depth-capped Barnes–Hut descent over the lazy [`ScaleTree`], which is
//!   the only sound evaluator for certified systems, whose `r₀ = 1 − O(10⁻¹²)`
//!   packs ~10¹² dilation levels that no node list can enumerate. A node is
//!   summed whole once its diameter bound is below `θ·d`; the coset-map depth
//!   cap is the resolution ladder used in certificates.
//!
//! All reductions are fixed-shape pairwise trees (or serial compensated
//! sums), so every report is bit-identical for any worker count unless the
//! caller explicitly opts out via [`QuadratureFlags`].

use rayon::prelude::*;
use serde::Serialize;

use crate::group::{sample_ball, Ball, Metric, Point};
use crate::ifs::{IfsSystem, Word};
use crate::measure::{DiscreteMeasure, MeasureError, ScaleTree, TreeKind, TreeNode};
use crate::potential::{kernel_smoothness, HTypeKernel};
use crate::reduce::{pairwise_sum, strict_max, strict_min, CompensatedSum};
use crate::rng::SeedTree;

#[derive(Debug, thiserror::Error)]
pub enum SingintError {
    #[error("truncation radius {eps:.3e} below the resolution floor {floor:.3e} (2 × max node diameter)")]
    TruncationBelowResolution { eps: f64, floor: f64 },
    #[error("invalid truncation grid: {0}")]
    InvalidGrid(String),
    #[error("word {v:?} does not extend {w:?}")]
    InvalidNesting { w: Word, v: Word },
    #[error("{0}")]
    BadParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Reduction policy for the big node sweeps. `deterministic` (the default)
/// uses a fixed-shape chunked pairwise tree — bit-identical results for any
/// worker count, and the mode every certificate is produced under. Clearing
/// it switches to an unordered parallel reduction for benchmarks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureFlags {
    pub deterministic: bool,
}

impl Default for QuadratureFlags {
    fn default() -> Self {
        Self { deterministic: true }
    }
}

// ---------------------------------------------------------------------------
// Truncation grid
// ---------------------------------------------------------------------------

/// Decreasing, logarithmically spaced truncation radii. The floor must stay
/// above twice the node diameter of whatever measure it is used with; the
/// transform evaluators enforce that per call.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationGrid {
    levels: Vec<f64>,
}

impl TruncationGrid {
    /// `count` radii from `top` down to `bottom`, geometrically spaced.
    pub fn log_spaced(top: f64, bottom: f64, count: usize) -> Result<Self, SingintError> {
        if !(bottom.is_finite() && top.is_finite()) || bottom <= 0.0 {
            return Err(SingintError::InvalidGrid(format!(
                "radii must be finite and positive, got top {top}, bottom {bottom}"
            )));
        }
        if top < bottom {
            return Err(SingintError::InvalidGrid(format!(
                "top {top} below bottom {bottom}"
            )));
        }
        if count == 0 {
            return Err(SingintError::InvalidGrid("empty grid".into()));
        }
        if count == 1 {
            return Ok(Self { levels: vec![top] });
        }
        let ratio = (bottom / top).powf(1.0 / (count - 1) as f64);
        let mut levels: Vec<f64> = (0..count).map(|i| top * ratio.powi(i as i32)).collect();
        // `top · ratio^(count−1)` can round a hair below the requested
        // bottom, which would make a widest-sound grid fail its own floor
        // precondition; the endpoint is exact by construction.
        levels[count - 1] = bottom;
        Ok(Self { levels })
    }

    /// The widest sound grid for a measure snapshot: from the attractor
    /// diameter down to twice the largest node diameter.
    pub fn for_measure(mu: &DiscreteMeasure, count: usize) -> Result<Self, SingintError> {
        Self::log_spaced(mu.diam_k, 2.0 * mu.max_node_diam, count)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// The smallest radius (the "plain transform" scale in gap reports).
    pub fn floor(&self) -> f64 {
        *self.levels.last().expect("grid is never empty")
    }
}

// ---------------------------------------------------------------------------
// Empirical kernel constants
// ---------------------------------------------------------------------------

/// The two constants every error bar is built from, measured once per kernel
/// by sampling and reused across all evaluations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelBounds {
    /// Far-field smoothness modulus `Ĉ`: for `‖u‖ ≥ 2‖h‖`,
    /// `|k(u·h) − k(u)| ≤ Ĉ ‖h‖ / ‖u‖^Q` (and the same with the slots of the
    /// difference reversed). Sampled over both slot perturbations.
    pub smooth: f64,
    /// Magnitude constant `K̂ = sup_{‖u‖=1} ‖Ω(u)‖`, so that
    /// `‖k(u)‖ ≤ K̂ ‖u‖^{1−Q}` by homogeneity.
    pub sup: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Measures [`KernelBounds`] with the named RNG streams `kernel-smoothness`
/// and `kernel-sup`. Pass the gauge metric: both constants are calibrated to
/// the same homogeneous norm the quadratures measure distances in.
pub fn kernel_bounds(
    kernel: &HTypeKernel,
    metric: &Metric,
    samples: usize,
    seed: u64,
) -> KernelBounds {
    let seeds = SeedTree::new(seed);
    let mut rng = seeds.stream("kernel-smoothness");
    let smooth = kernel_smoothness(kernel, metric, samples, &mut rng).combined;

    let group = kernel.group().clone();
    let m = kernel.horizontal_dim();
    let shell = Ball { center: Point::ORIGIN, radius: 1.0 };
    let mut rng = seeds.stream("kernel-sup");
    let mut sup = 0.0f64;
    let mut found = 0usize;
    let mut tries = 0usize;
    while found < samples && tries < samples * 50 {
        tries += 1;
        let raw = sample_ball(metric, &shell, &mut rng);
        let nrm = metric.norm(&raw);
        if nrm < 1e-3 {
            continue;
        }
        found += 1;
        let unit = group.dilate(1.0 / nrm, &raw);
        let om = kernel.omega(&unit);
        let len = (0..m).map(|j| om.0[j] * om.0[j]).sum::<f64>().sqrt();
        sup = sup.max(len);
    }
    KernelBounds { smooth, sup, samples, seed }
}

// ---------------------------------------------------------------------------
// Deterministic sweep
// ---------------------------------------------------------------------------

const CHUNK: usize = 1 << 14;

/// Parallel sweep over `n` items, each yielding a contribution vector (in
/// the first `m` slots of a [`Point`]) and an error-bar term. Deterministic
/// mode reduces chunks of fixed size with pairwise trees, so the result
/// depends only on `n` — never on the worker count or schedule.
fn sweep(
    n: usize,
    m: usize,
    flags: QuadratureFlags,
    f: impl Fn(usize) -> (Point, f64) + Sync,
) -> (Vec<f64>, f64) {
    if n == 0 {
        return (vec![0.0; m], 0.0);
    }
    if flags.deterministic {
        let partials: Vec<(Point, f64)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                let vals: Vec<(Point, f64)> = (lo..hi).map(&f).collect();
                let mut col = vec![0.0f64; vals.len()];
                let mut acc = Point::ORIGIN;
                for j in 0..m {
                    for (slot, v) in col.iter_mut().zip(&vals) {
                        *slot = v.0 .0[j];
                    }
                    acc.0[j] = pairwise_sum(&col);
                }
                for (slot, v) in col.iter_mut().zip(&vals) {
                    *slot = v.1;
                }
                (acc, pairwise_sum(&col))
            })
            .collect();
        let mut col = vec![0.0f64; partials.len()];
        let mut out = vec![0.0f64; m];
        for (j, slot_out) in out.iter_mut().enumerate() {
            for (slot, p) in col.iter_mut().zip(&partials) {
                *slot = p.0 .0[j];
            }
            *slot_out = pairwise_sum(&col);
        }
        for (slot, p) in col.iter_mut().zip(&partials) {
            *slot = p.1;
        }
        (out, pairwise_sum(&col))
    } else {
        let (acc, err) = (0..n).into_par_iter().map(&f).reduce(
            || (Point::ORIGIN, 0.0),
            |mut a, b| {
                for j in 0..m {
                    a.0 .0[j] += b.0 .0[j];
                }
                (a.0, a.1 + b.1)
            },
        );
        ((0..m).map(|j| acc.0[j]).collect(), err)
    }
}

// ---------------------------------------------------------------------------
// Truncated and maximal transforms
// ---------------------------------------------------------------------------

/// One ε-truncated transform value with a rigorous-modulo-empirical-constants
/// error bar on the Euclidean length of the deviation (which therefore also
/// bounds each component).
#[derive(Debug, Clone, Serialize)]
pub struct TransformValue {
    pub eps: f64,
    /// Horizontal components of `Σ_{d(x,y) > ε} w · k(x⁻¹y)`.
    pub components: Vec<f64>,
    pub error: f64,
    /// Nodes whose whole cylinder lies in the domain. Shrinking ε can only
    /// grow this set (and shrink `excluded`) — the domain-monotonicity
    /// invariant the tests pin down.
    pub included: usize,
    /// Nodes whose cylinder lies entirely inside the ε-ball, hence dropped.
    pub excluded: usize,
    /// Nodes straddling the ε-sphere, refined one level (their children are
    /// not counted in the other two fields).
    pub refined: usize,
}

impl TransformValue {
    /// Euclidean length of the component vector.
    pub fn magnitude(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `T^ε μ(x) = Σ_{d(x,y) > ε} w(y) k(x⁻¹y)` over the depth-`n` surrogate.
///
/// A node's cylinder is summed whole when it lies entirely in the domain
/// (`d − rad > ε`), dropped when entirely inside the ε-ball (`d + rad ≤ ε`),
/// and refined exactly one level when it straddles the sphere. Children that
/// still straddle after refinement are dropped and charged to the error bar
/// by their worst-case in-domain magnitude `w_child · K̂ · ε^{1−Q}` — the
/// possibly-included part of a child lies at distance `> ε` by definition of
/// the domain, so the bound never degenerates.
///
/// Requires `ε ≥ 2 ·` max node diameter, which also guarantees the
/// smoothness modulus precondition `d ≥ 2 · rad` for every included node.
pub fn truncated_transform(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu: &DiscreteMeasure,
    bounds: &KernelBounds,
    x: &Point,
    eps: f64,
    flags: QuadratureFlags,
) -> Result<TransformValue, SingintError> {
    let floor = 2.0 * mu.max_node_diam;
    if !(eps >= floor) {
        return Err(SingintError::TruncationBelowResolution { eps, floor });
    }
    let metric = sys.metric().clone();
    let group = sys.group().clone();
    let q = kernel.homogeneous_dimension() as i32;
    let m = kernel.horizontal_dim();
    // Two bookkeeping slots ride along in the sweep vector: counts of
    // included and excluded cylinders (exact integers well below 2^53).
    assert!(m + 3 <= crate::group::MAX_DIM, "no free slots for sweep counters");
    let (inc_slot, exc_slot, ref_slot) = (m, m + 1, m + 2);

    let base = mu.cloud().base;
    let offset = mu.cloud().letter_offset;
    let q1 = q - 1;
    let letter_pow: Vec<f64> = (0..base).map(|d| sys.ratio(d + offset).powi(q1)).collect();
    let level_sum: f64 = letter_pow.iter().sum();
    let diam_k = mu.diam_k;
    let anchor = sys.anchor();

    let (raw, error) = sweep(mu.len(), m + 3, flags, |i| {
        let y = mu.point(i);
        let w = mu.weight(i);
        let rad = mu.node_ratio(i) * diam_k;
        let d = metric.dist(x, &y);
        let mut contrib = Point::ORIGIN;
        if d - rad > eps {
            let k = kernel.riesz_kernel(&group.left_diff(x, &y));
            for j in 0..m {
                contrib.0[j] = w * k.0[j];
            }
            contrib.0[inc_slot] = 1.0;
            return (contrib, bounds.smooth * w * rad / d.powi(q));
        }
        if d + rad <= eps {
            contrib.0[exc_slot] = 1.0;
            return (contrib, 0.0);
        }
        // Straddling: refine one level. Children are the cylinders S_{w·ℓ}
        // with representatives S_w(S_ℓ(x̄)); the node weight splits by the
        // one-level letter weights.
        contrib.0[ref_slot] = 1.0;
        let word = mu.word(i);
        let (g_w, rho_w) = sys.word_map(&word);
        let mut err = 0.0;
        for (digit, pow) in letter_pow.iter().enumerate() {
            let letter = digit + offset;
            let child_w = w * pow / level_sum;
            if child_w == 0.0 {
                continue;
            }
            let child = sys.apply_map(letter, &anchor);
            let rep = group.mul(&g_w, &group.dilate(rho_w, &child));
            let child_rad = rho_w * sys.ratio(letter) * diam_k;
            let dc = metric.dist(x, &rep);
            if dc - child_rad > eps {
                let k = kernel.riesz_kernel(&group.left_diff(x, &rep));
                for j in 0..m {
                    contrib.0[j] += child_w * k.0[j];
                }
                err += bounds.smooth * child_w * child_rad / dc.powi(q);
            } else if dc + child_rad > eps {
                err += child_w * bounds.sup * eps.powi(1 - q);
            }
        }
        (contrib, err)
    });
    Ok(TransformValue {
        eps,
        components: raw[..m].to_vec(),
        error,
        included: raw[inc_slot] as usize,
        excluded: raw[exc_slot] as usize,
        refined: raw[ref_slot] as usize,
    })
}

/// Supremum of `|T^ε|` over a truncation grid, with every level retained.
#[derive(Debug, Clone, Serialize)]
pub struct MaximalValue {
    /// `max_ε |T^ε(x)|` (Euclidean length over components).
    pub value: f64,
    /// The grid radius attaining the maximum.
    pub eps_argmax: f64,
    pub per_eps: Vec<TransformValue>,
}

pub fn maximal_transform(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu: &DiscreteMeasure,
    bounds: &KernelBounds,
    x: &Point,
    grid: &TruncationGrid,
    flags: QuadratureFlags,
) -> Result<MaximalValue, SingintError> {
    let mut per_eps = Vec::with_capacity(grid.levels().len());
    for &eps in grid.levels() {
        per_eps.push(truncated_transform(kernel, sys, mu, bounds, x, eps, flags)?);
    }
    let mut value = f64::NEG_INFINITY;
    let mut eps_argmax = grid.levels()[0];
    for tv in &per_eps {
        let len = tv.magnitude();
        if len > value {
            value = len;
            eps_argmax = tv.eps;
        }
    }
    Ok(MaximalValue { value, eps_argmax, per_eps })
}

// ---------------------------------------------------------------------------
// Non-vanishing-integral condition
// ---------------------------------------------------------------------------

/// Parameters of the tree-backed kernel-integral certifier.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UnbOptions {
    /// Kernel component whose sign is being certified (match the dilation
    /// cone's component).
    pub component: usize,
    /// The excluded word is `0^zeros`: the integration domain is
    /// `K ∖ S₀^zeros(K)` and the probe its fixed point, the origin.
    pub zeros: u32,
    /// Resolution ladder index: nodes are summed whole only once their
    /// diameter is below `max(r, r₀)^depth · diam K̂` — the scale of a
    /// depth-`depth` cylinder. Raising it forces a genuinely finer
    /// quadrature, so ladder values are Cauchy and error bars shrink at the
    /// contraction rate; for certified systems `r₀ ≈ 1` makes the gate
    /// inactive and the θ-rule alone governs (which is exactly when the
    /// geometric-shrink requirement is vacuous).
    pub depth: u32,
    /// Barnes–Hut opening parameter: a node is summed whole once its
    /// diameter bound is `≤ θ · d(probe, rep)`. Keep `θ ≤ 1/2` so the
    /// smoothness modulus precondition holds at admission.
    pub theta: f64,
    /// Inner shell floor handed to the scale tree (0 is always sound).
    pub floor: f64,
    pub node_budget: u64,
}

impl Default for UnbOptions {
    fn default() -> Self {
        Self {
            component: 0,
            zeros: 1,
            depth: 7,
            theta: 0.25,
            floor: 0.0,
            node_budget: 50_000_000,
        }
    }
}

/// Outcome of one kernel-integral evaluation. The sign is certified exactly
/// when the error bar excludes zero; a `None` sign is the caller's signal to
/// refine (deeper cap, smaller θ) or report failure — it is never silently
/// converted into a claim.
#[derive(Debug, Clone, Serialize)]
pub struct UnbReport {
    pub component: usize,
    /// The excluded word defining the domain `K ∖ S_w(K)`.
    pub word: Word,
    pub depth: u32,
    /// θ used by the tree backend; 0 for exact node-list sums.
    pub theta: f64,
    /// Component `component` of the integral.
    pub value: f64,
    /// All horizontal components.
    pub components: Vec<f64>,
    /// Bound on the Euclidean deviation (hence on each component's).
    pub error: f64,
    /// `+1` / `−1` when `|value| > error`, else `None`.
    pub certified_sign: Option<i8>,
    pub visited: u64,
    pub exhausted: bool,
}

fn certify_sign(value: f64, error: f64) -> Option<i8> {
    if value - error > 0.0 {
        Some(1)
    } else if value + error < 0.0 {
        Some(-1)
    } else {
        None
    }
}

/// `∫_{K ∖ S₀^z(K)} k(y) dμ(y)` by Barnes–Hut descent over the lazy
/// cylinder tree — the only evaluator that resolves certified systems, whose
/// dilation spine packs ~10¹² levels between any node list's depths.
///
/// A node is summed whole (`mass · k(rep)`, with the smoothness-modulus
/// error `Ĉ · diam · mass / d^Q`) once its diameter bound clears both the
/// θ-opening rule and the `depth`-indexed scale gate; otherwise it expands.
/// Every expansion shrinks diameters geometrically and the domain stays at
/// positive distance from the probe, so the descent terminates; if the node
/// budget trips first, the remainder is folded into the error bar by the
/// magnitude bound (infinite if a node's distance to the probe cannot be
/// bounded away from zero — never a silent claim). The serial compensated
/// descent is bit-stable by construction.
pub fn unb_condition(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    bounds: &KernelBounds,
    opts: &UnbOptions,
) -> Result<UnbReport, SingintError> {
    if opts.zeros == 0 {
        return Err(SingintError::BadParameter(
            "zeros must be ≥ 1: the domain K ∖ S₀⁰(K) is empty".into(),
        ));
    }
    if !(opts.theta > 0.0 && opts.theta <= 0.5) {
        return Err(SingintError::BadParameter(format!(
            "theta {} outside (0, 1/2]",
            opts.theta
        )));
    }
    let m = kernel.horizontal_dim();
    if opts.component >= m {
        return Err(SingintError::BadParameter(format!(
            "component {} out of range for horizontal dimension {m}",
            opts.component
        )));
    }
    let tree = ScaleTree::new(sys, TreeKind::Full, opts.floor)?;
    let metric = sys.metric();
    let group = sys.group().clone();
    let q = kernel.homogeneous_dimension() as i32;
    let x = Point::ORIGIN;
    let cq = sys.quasi_constant;
    let scale_cap = sys.r.max(sys.r0).powi(opts.depth as i32) * sys.diam_upper();

    // Lower bound for the distance from the probe to any point of a node.
    let dist_lower = |node: &TreeNode| -> f64 {
        let (s_lo, s_hi) = tree.bounds(node);
        let dg = metric.dist(&x, node.translate());
        if dg >= s_hi {
            dg - s_hi
        } else if dg <= s_lo {
            s_lo - dg
        } else {
            0.0
        }
    };

    let mut value: Vec<CompensatedSum> = (0..m).map(|_| CompensatedSum::new()).collect();
    let mut error = CompensatedSum::new();
    let mut visited = 0u64;
    let mut exhausted = false;
    let mut stack = vec![TreeNode::Shell {
        g: Point::ORIGIN,
        rho: 1.0,
        n1: 0.0,
        n2: opts.zeros as f64 - 1.0,
        depth: 0,
    }];
    let mut children = Vec::new();
    while let Some(node) = stack.pop() {
        visited += 1;
        let mass = tree.mass(&node);
        if mass == 0.0 {
            continue;
        }
        if visited > opts.node_budget {
            // Budget exhausted: fold this node and the rest of the stack
            // into the error bar by magnitude.
            exhausted = true;
            for n in stack.drain(..).chain(std::iter::once(node)) {
                let d_lo = dist_lower(&n);
                error.add(if d_lo > 0.0 {
                    tree.mass(&n) * bounds.sup * d_lo.powi(1 - q)
                } else {
                    f64::INFINITY
                });
            }
            break;
        }
        let (_, s_hi) = tree.bounds(&node);
        let rep = tree.representative(&node);
        let d = metric.dist(&x, &rep);
        // Diameter bound from the representative: all node points lie within
        // s_hi of the translate, so pairwise distances are ≤ 2 c_q s_hi.
        let rad = 2.0 * cq * s_hi;
        if rad <= opts.theta * d && d >= 2.0 * rad && rad <= scale_cap {
            let k = kernel.riesz_kernel(&group.left_diff(&x, &rep));
            for (j, acc) in value.iter_mut().enumerate() {
                acc.add(mass * k.0[j]);
            }
            error.add(bounds.smooth * mass * rad / d.powi(q));
            continue;
        }
        children.clear();
        tree.expand(&node, &mut children);
        stack.append(&mut children);
    }

    let components: Vec<f64> = value.iter().map(|c| c.value()).collect();
    let error = error.value();
    let value = components[opts.component];
    Ok(UnbReport {
        component: opts.component,
        word: vec![0u8; opts.zeros as usize],
        depth: opts.depth,
        theta: opts.theta,
        value,
        components,
        error,
        certified_sign: certify_sign(value, error),
        visited,
        exhausted,
    })
}

/// `∫_{K ∖ S_w(K)} k(x_w⁻¹ y) dμ(y)` over an explicit node list, probed at
/// the fixed point `x_w` of `S_w`. Exact for the depth-`n` surrogate: the
/// excluded cylinder is a contiguous index range, every kept node is summed
/// directly, and only the node-diameter modulus enters the error bar.
///
/// Works for arbitrary words (not just dilation powers), but inherits the
/// node list's resolution limit; certified systems need [`unb_condition`].
pub fn unb_condition_nodes(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu: &DiscreteMeasure,
    bounds: &KernelBounds,
    component: usize,
    word: &[u8],
    flags: QuadratureFlags,
) -> Result<UnbReport, SingintError> {
    let m = kernel.horizontal_dim();
    if component >= m {
        return Err(SingintError::BadParameter(format!(
            "component {component} out of range for horizontal dimension {m}"
        )));
    }
    validate_word(mu, word)?;
    let metric = sys.metric().clone();
    let group = sys.group().clone();
    let q = kernel.homogeneous_dimension() as i32;
    let x = sys.word_fixed_point(word);
    let range = mu.cloud().cylinder_range(word);
    let diam_k = mu.diam_k;

    let (components, error) = sweep(mu.len(), m, flags, |i| {
        if range.contains(&i) {
            return (Point::ORIGIN, 0.0);
        }
        let y = mu.point(i);
        let w = mu.weight(i);
        let rad = mu.node_ratio(i) * diam_k;
        let d = metric.dist(&x, &y);
        if d >= 2.0 * rad {
            let k = kernel.riesz_kernel(&group.left_diff(&x, &y));
            let mut contrib = Point::ORIGIN;
            for j in 0..m {
                contrib.0[j] = w * k.0[j];
            }
            (contrib, bounds.smooth * w * rad / d.powi(q))
        } else if d > rad {
            // Too close for the modulus: fold the node in by magnitude.
            (Point::ORIGIN, w * bounds.sup * (d - rad).powi(1 - q))
        } else {
            // The probe may lie inside the node's cylinder: no finite bound.
            (Point::ORIGIN, f64::INFINITY)
        }
    });
    let value = components[component];
    Ok(UnbReport {
        component,
        word: word.to_vec(),
        depth: mu.depth as u32,
        theta: 0.0,
        value,
        components,
        error,
        certified_sign: certify_sign(value, error),
        visited: mu.len() as u64,
        exhausted: false,
    })
}

fn validate_word(mu: &DiscreteMeasure, word: &[u8]) -> Result<(), SingintError> {
    if word.len() > mu.depth {
        return Err(SingintError::BadParameter(format!(
            "word length {} exceeds measure depth {}",
            word.len(),
            mu.depth
        )));
    }
    let base = mu.cloud().base;
    let offset = mu.cloud().letter_offset;
    for &l in word {
        let l = l as usize;
        if l < offset || l >= offset + base {
            return Err(SingintError::BadParameter(format!(
                "letter {l} outside the cloud alphabet {offset}..{}",
                offset + base
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// S₀-conjugation residual
// ---------------------------------------------------------------------------

/// Finite-depth dilation-conjugation residual, an exact identity of the
/// surrogate quadrature: restricted to the `S₀`-cylinder, the depth-`n` sum
/// probed at `S₀(z)` equals the full depth-`(n−1)` sum probed at `z`, up to
/// the raw-total ratio — because `k(S₀(z)⁻¹ S₀(y)) = r₀^{1−Q} k(z⁻¹y)`
/// exactly cancels the cylinder weight factor `r₀^{Q−1}`. Returns the
/// Euclidean norm of the mismatch, which is pure floating-point noise; any
/// systematic residual means the kernel, the measure weights, or the group
/// law broke scale equivariance.
pub fn conjugation_residual(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu_n: &DiscreteMeasure,
    mu_prev: &DiscreteMeasure,
    z: &Point,
    flags: QuadratureFlags,
) -> Result<f64, SingintError> {
    if mu_n.depth != mu_prev.depth + 1 {
        return Err(SingintError::BadParameter(format!(
            "need consecutive depths, got {} and {}",
            mu_n.depth, mu_prev.depth
        )));
    }
    if mu_n.cloud().letter_offset != 0 || mu_prev.cloud().letter_offset != 0 {
        return Err(SingintError::BadParameter(
            "conjugation residual needs full-alphabet measures".into(),
        ));
    }
    let metric = sys.metric().clone();
    let group = sys.group().clone();
    let m = kernel.horizontal_dim();
    let s0z = sys.apply_map(0, z);
    let range = mu_n.cloud().cylinder_range(&[0]);

    let eval = |mu: &DiscreteMeasure, probe: &Point, restrict: bool| -> Vec<f64> {
        let range = range.clone();
        let (components, _) = sweep(mu.len(), m, flags, |i| {
            if restrict && !range.contains(&i) {
                return (Point::ORIGIN, 0.0);
            }
            let y = mu.point(i);
            if metric.dist(probe, &y) == 0.0 {
                return (Point::ORIGIN, 0.0);
            }
            let k = kernel.riesz_kernel(&group.left_diff(probe, &y));
            let mut contrib = Point::ORIGIN;
            for j in 0..m {
                contrib.0[j] = mu.weight(i) * k.0[j];
            }
            (contrib, 0.0)
        });
        components
    };
    let lhs = eval(mu_n, &s0z, true);
    let rhs = eval(mu_prev, z, false);
    let scale = mu_n.total / mu_prev.total;
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (scale * a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

// ---------------------------------------------------------------------------
// Maximal-vs-truncated gap (the A_T diagnostic)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SemmesOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub flags: QuadratureFlags,
}

impl Default for SemmesOptions {
    fn default() -> Self {
        Self { n_samples: 32, seed: 7, flags: QuadratureFlags::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SemmesSample {
    /// Gauge distance from the probe to its parent node.
    pub offset: f64,
    pub t_star: f64,
    pub eps_star: f64,
    /// `|T^floor|` at the same probe.
    pub t_floor: f64,
}

/// Empirical domination gap between the maximal and the plain transform.
#[derive(Debug, Clone, Serialize)]
pub struct SemmesReport {
    pub t_star_sup: f64,
    pub t_floor_sup: f64,
    /// `sup T* − sup |T^floor|` over the probe set (≥ 0 by construction);
    /// the empirical headroom constant in maximal-function comparisons.
    pub gap: f64,
    pub grid_floor: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub samples: Vec<SemmesSample>,
}

/// Probes the measure off its node set at logarithmically mixed offsets and
/// compares `sup T*` against `sup |T^floor|`. A single far atom is the
/// degenerate sanity case: every truncation sees either the whole atom or
/// nothing, so the gap vanishes identically.
pub fn semmes_gap(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu: &DiscreteMeasure,
    bounds: &KernelBounds,
    grid: &TruncationGrid,
    opts: &SemmesOptions,
) -> Result<SemmesReport, SingintError> {
    let floor = 2.0 * mu.max_node_diam;
    if !(grid.floor() >= floor) {
        return Err(SingintError::TruncationBelowResolution { eps: grid.floor(), floor });
    }
    if opts.n_samples == 0 {
        return Err(SingintError::BadParameter("need at least one probe".into()));
    }
    let metric = sys.metric().clone();
    let group = sys.group().clone();
    let seeds = SeedTree::new(opts.seed);
    let mut rng = seeds.stream("semmes-probes");
    let lo = grid.floor();
    let hi = mu.diam_k.max(2.0 * lo);
    let span = (hi / lo).ln();

    let mut samples = Vec::with_capacity(opts.n_samples);
    for s in 0..opts.n_samples {
        use rand::Rng;
        let node = mu.point(rng.gen_range(0..mu.len()));
        let t = lo * (span * (s as f64 + rng.gen_range(0.0..1.0)) / opts.n_samples as f64).exp();
        let bump = sample_ball(&metric, &Ball { center: Point::ORIGIN, radius: t }, &mut rng);
        let probe = group.mul(&node, &bump);
        let maximal = maximal_transform(kernel, sys, mu, bounds, &probe, grid, opts.flags)?;
        let floor_tv = maximal.per_eps.last().expect("grid is never empty");
        samples.push(SemmesSample {
            offset: metric.dist(&node, &probe),
            t_star: maximal.value,
            eps_star: maximal.eps_argmax,
            t_floor: floor_tv.magnitude(),
        });
    }
    let t_star_sup = strict_max(&samples.iter().map(|s| s.t_star).collect::<Vec<_>>());
    let t_floor_sup = strict_max(&samples.iter().map(|s| s.t_floor).collect::<Vec<_>>());
    Ok(SemmesReport {
        t_star_sup,
        t_floor_sup,
        gap: t_star_sup - t_floor_sup,
        grid_floor: grid.floor(),
        n_samples: opts.n_samples,
        seed: opts.seed,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Nested-cylinder comparison (the A_K diagnostic)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CompopOptions {
    pub n_probes: usize,
    pub seed: u64,
    pub flags: QuadratureFlags,
}

impl Default for CompopOptions {
    fn default() -> Self {
        Self { n_probes: 16, seed: 7, flags: QuadratureFlags::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompopRow {
    /// `|∫_{S_w(K) ∖ S_v(K)} k(p⁻¹y) dμ|` — the cylinder-difference integral.
    pub left: f64,
    /// `|T^{2 diam S_v}(p) − T^{2 diam S_w}(p)|` — the ball-annulus integral
    /// the comparison replaces it with.
    pub annulus: f64,
    /// `left − annulus`; its max over probes is the empirical constant.
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompopReport {
    pub w: Word,
    pub v: Word,
    pub eps_w: f64,
    pub eps_v: f64,
    /// Empirical collar constant `dist(x_v, K ∖ S_v K) / diam S_v(K)`:
    /// probes stay within half this collar of the inner cylinder.
    pub alpha: f64,
    /// `max over probes of (left − annulus)`: the additive headroom by which
    /// cylinder differences are dominated by ball annuli near `S_v(K)`.
    pub a_k: f64,
    pub rows: Vec<CompopRow>,
    pub n_probes: usize,
    pub seed: u64,
}

/// Compares the cylinder-difference integral over `S_w(K) ∖ S_v(K)` with the
/// ball-annulus integral between the matching truncation radii, for probes
/// inside the collar of the inner cylinder. Requires `v` to extend `w`
/// (nested cylinders) and both diameters to clear the node-resolution floor.
pub fn compop_check(
    kernel: &HTypeKernel,
    sys: &IfsSystem,
    mu: &DiscreteMeasure,
    bounds: &KernelBounds,
    w: &[u8],
    v: &[u8],
    opts: &CompopOptions,
) -> Result<CompopReport, SingintError> {
    if v.len() < w.len() || v[..w.len()] != *w {
        return Err(SingintError::InvalidNesting { w: w.to_vec(), v: v.to_vec() });
    }
    validate_word(mu, v)?;
    if opts.n_probes == 0 {
        return Err(SingintError::BadParameter("need at least one probe".into()));
    }
    let metric = sys.metric().clone();
    let group = sys.group().clone();
    let q = kernel.homogeneous_dimension() as i32;
    let m = kernel.horizontal_dim();
    let (_, rho_w) = sys.word_map(w);
    let (_, rho_v) = sys.word_map(v);
    let diam_w = rho_w * mu.diam_k;
    let diam_v = rho_v * mu.diam_k;
    let (eps_w, eps_v) = (2.0 * diam_w, 2.0 * diam_v);
    let node_floor = 2.0 * mu.max_node_diam;
    if !(eps_v >= node_floor) {
        return Err(SingintError::TruncationBelowResolution { eps: eps_v, floor: node_floor });
    }

    let range_w = mu.cloud().cylinder_range(w);
    let range_v = mu.cloud().cylinder_range(v);
    let x_v = sys.word_fixed_point(v);

    // Empirical collar: nearest measure node outside the inner cylinder.
    let outside: Vec<f64> = (0..mu.len())
        .into_par_iter()
        .map(|i| {
            if range_v.contains(&i) {
                f64::INFINITY
            } else {
                metric.dist(&x_v, &mu.point(i))
            }
        })
        .collect();
    let alpha = strict_min(&outside) / diam_v;

    let seeds = SeedTree::new(opts.seed);
    let mut rng = seeds.stream("compop-probes");
    let collar = 0.5 * alpha * diam_v;
    let diam_k = mu.diam_k;
    let anchor = sys.anchor();
    let mut rows = Vec::with_capacity(opts.n_probes);
    for _ in 0..opts.n_probes {
        use rand::Rng;
        // Canonical probe: a coset word extending v, evaluated through the
        // exact affine maps — the probe set is independent of the measure
        // depth, so constants can be compared across snapshots.
        let mut word = v.to_vec();
        for _ in 0..4 {
            word.push(rng.gen_range(1..=sys.m_count()) as u8);
        }
        let node = sys.apply_word(&word, &anchor);
        let bump = sample_ball(&metric, &Ball { center: Point::ORIGIN, radius: collar }, &mut rng);
        let probe = group.mul(&node, &bump);

        let range_w = range_w.clone();
        let range_v = range_v.clone();
        let (left_vec, _) = sweep(mu.len(), m, opts.flags, |i| {
            if !range_w.contains(&i) || range_v.contains(&i) {
                return (Point::ORIGIN, 0.0);
            }
            let y = mu.point(i);
            let wt = mu.weight(i);
            let rad = mu.node_ratio(i) * diam_k;
            let d = metric.dist(&probe, &y);
            let mut contrib = Point::ORIGIN;
            if d > rad {
                let k = kernel.riesz_kernel(&group.left_diff(&probe, &y));
                for j in 0..m {
                    contrib.0[j] = wt * k.0[j];
                }
                (contrib, bounds.smooth * wt * rad / d.powi(q))
            } else {
                (Point::ORIGIN, f64::INFINITY)
            }
        });
        let left = left_vec.iter().map(|c| c * c).sum::<f64>().sqrt();

        let tv_v = truncated_transform(kernel, sys, mu, bounds, &probe, eps_v, opts.flags)?;
        let tv_w = truncated_transform(kernel, sys, mu, bounds, &probe, eps_w, opts.flags)?;
        let annulus = tv_v
            .components
            .iter()
            .zip(&tv_w.components)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        rows.push(CompopRow { left, annulus, excess: left - annulus });
    }
    let a_k = strict_max(&rows.iter().map(|r| r.excess).collect::<Vec<_>>());
    Ok(CompopReport {
        w: w.to_vec(),
        v: v.to_vec(),
        eps_w,
        eps_v,
        alpha,
        a_k,
        rows,
        n_probes: opts.n_probes,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::presets;
    use crate::group::{CarnotGroup, NormKind};
    use crate::ifs::{DilationCone, VerticalCoset};
    use crate::measure::DiscreteMeasure;

    fn gauge_setup() -> (HTypeKernel, Metric) {
        let group = CarnotGroup::new(presets::heisenberg(1).unwrap()).unwrap();
        let kernel = HTypeKernel::new(group.clone()).unwrap();
        let metric = Metric::new(group, NormKind::Gauge).unwrap();
        (kernel, metric)
    }

    /// Same mid-scale fixture as the measure tests: M = 8 maps at ratio 0.45
    /// on the coset x = 1, with r₀ fixed by the mass identity.
    fn moderate_system() -> (HTypeKernel, IfsSystem) {
        let (kernel, metric) = gauge_setup();
        let group = metric.group().clone();
        let r: f64 = 0.45;
        let m = 8usize;
        let r0 = (1.0 - m as f64 * r.powi(3)).powf(1.0 / 3.0);
        let coset = VerticalCoset::new(&group, &[1.0, 0.0], 1.0).unwrap();
        let cone = DilationCone { axis: vec![1.0, 0.0], aperture: 0.9, component: 0 };
        let mut centers = Vec::new();
        for i in 0..m {
            let mut p = Point::ORIGIN;
            p.0[0] = 1.0;
            p.0[1] = -0.6 + 1.2 * (i as f64 + 0.5) / m as f64;
            p.0[2] = if i % 2 == 0 { 0.2 } else { -0.2 };
            centers.push(p);
        }
        let ball = Ball { center: centers[0], radius: 0.5 };
        let sys = IfsSystem::new(metric, coset, cone, centers, ball, 0.3, r, r0, 1.0, 1.0, 1.0);
        (kernel, sys)
    }

    fn bounds_for(kernel: &HTypeKernel, sys: &IfsSystem) -> KernelBounds {
        kernel_bounds(kernel, sys.metric(), 4_000, 7)
    }

    #[test]
    fn grid_construction_validates_inputs() {
        assert!(TruncationGrid::log_spaced(1.0, 2.0, 4).is_err());
        assert!(TruncationGrid::log_spaced(1.0, 0.0, 4).is_err());
        assert!(TruncationGrid::log_spaced(1.0, 0.1, 0).is_err());
        let grid = TruncationGrid::log_spaced(1.0, 0.01, 5).unwrap();
        assert_eq!(grid.levels().len(), 5);
        assert!((grid.levels()[0] - 1.0).abs() < 1e-15);
        assert!((grid.floor() - 0.01).abs() < 1e-15);
        for pair in grid.levels().windows(2) {
            assert!(pair[1] < pair[0], "grid must decrease");
        }
    }

    #[test]
    fn transform_rejects_radii_below_the_node_floor() {
        let (kernel, sys) = moderate_system();
        let mu = DiscreteMeasure::from_system(&sys, 3, 1 << 20).unwrap();
        let bounds = bounds_for(&kernel, &sys);
        let bad = 1.9 * mu.max_node_diam;
        let err = truncated_transform(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &Point::ORIGIN,
            bad,
            QuadratureFlags::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SingintError::TruncationBelowResolution { .. }));
    }

    #[test]
    fn far_probe_transform_equals_the_plain_node_sum() {
        let (kernel, sys) = moderate_system();
        let mu = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
        let bounds = bounds_for(&kernel, &sys);
        let group = sys.group().clone();
        let m = kernel.horizontal_dim();
        let mut probe = Point::ORIGIN;
        probe.0[0] = -40.0;
        probe.0[1] = 13.0;

        // Every node is far beyond every grid radius, so each truncation
        // includes the entire measure and T* = |T^floor| with zero gap.
        let grid = TruncationGrid::for_measure(&mu, 6).unwrap();
        let maximal = maximal_transform(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &probe,
            &grid,
            QuadratureFlags::default(),
        )
        .unwrap();
        let mut plain = vec![0.0f64; m];
        for i in 0..mu.len() {
            let k = kernel.riesz_kernel(&group.left_diff(&probe, &mu.point(i)));
            for (j, slot) in plain.iter_mut().enumerate() {
                *slot += mu.weight(i) * k.0[j];
            }
        }
        for tv in &maximal.per_eps {
            assert_eq!(tv.excluded, 0);
            assert_eq!(tv.refined, 0);
            assert_eq!(tv.included, mu.len());
            for j in 0..m {
                assert!(
                    (tv.components[j] - plain[j]).abs() <= 1e-12 * plain[j].abs().max(1e-30),
                    "eps {} component {j}: {} vs plain {}",
                    tv.eps,
                    tv.components[j],
                    plain[j]
                );
            }
        }
        // Far-field magnitude sanity: |T| ≤ K̂ · d(probe, K)^{1−Q} with the
        // crude distance floor d ≥ ‖probe‖ − diam K.
        let metric = sys.metric();
        let d_floor = metric.norm(&probe) - mu.diam_k;
        assert!(maximal.value <= bounds.sup * d_floor.powi(-3) * 1.5);
    }

    #[test]
    fn exclusion_counts_grow_with_the_truncation_radius() {
        let (kernel, sys) = moderate_system();
        let mu = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
        let bounds = bounds_for(&kernel, &sys);
        // Probe at a measure node: truncation actually bites here.
        let probe = mu.point(mu.len() / 2);
        let grid = TruncationGrid::for_measure(&mu, 8).unwrap();
        let mut last_excluded = usize::MAX;
        let mut last_included = 0usize;
        for &eps in grid.levels() {
            let tv = truncated_transform(
                &kernel,
                &sys,
                &mu,
                &bounds,
                &probe,
                eps,
                QuadratureFlags::default(),
            )
            .unwrap();
            // Domain monotonicity: shrinking ε can only move node cylinders
            // out of the excluded state and into the included one.
            assert!(
                tv.excluded <= last_excluded,
                "excluded count grew as eps shrank: {} then {}",
                last_excluded,
                tv.excluded
            );
            assert!(
                tv.included >= last_included,
                "included count shrank as eps shrank: {} then {}",
                last_included,
                tv.included
            );
            last_excluded = tv.excluded;
            last_included = tv.included;
            assert!(tv.error.is_finite());
        }
    }

    #[test]
    fn transform_is_dilation_equivariant_at_the_tail_ratio() {
        let (kernel, sys) = moderate_system();
        let group = sys.group().clone();
        let metric = sys.metric().clone();
        let depth = 4;
        let mu = DiscreteMeasure::from_system(&sys, depth, 1 << 20).unwrap();
        let bounds = bounds_for(&kernel, &sys);
        let t = sys.r0;
        // Conjugated system: centers and coset offset dilated by t, same
        // ratios. Its surrogate measure is the pushforward δ_t♯μ.
        let coset_t =
            VerticalCoset::new(&group, &[1.0, 0.0], t * sys.coset().base_point().0[0]).unwrap();
        let centers_t: Vec<Point> = sys.centers().iter().map(|p| group.dilate(t, p)).collect();
        let ball_t = Ball { center: group.dilate(t, &sys.ball.center), radius: t * sys.ball.radius };
        let sys_t = IfsSystem::new(
            metric.clone(),
            coset_t,
            sys.cone().clone(),
            centers_t,
            ball_t,
            t * sys.eps,
            sys.r,
            sys.r0,
            sys.c0,
            sys.c1,
            sys.quasi_constant,
        );
        let mu_t = DiscreteMeasure::from_system(&sys_t, depth, 1 << 20).unwrap();

        let mut x = Point::ORIGIN;
        x.0[0] = 2.1;
        x.0[1] = -0.4;
        x.0[2] = 0.3;
        let eps = 0.5 * mu.diam_k;
        let lhs = truncated_transform(
            &kernel,
            &sys_t,
            &mu_t,
            &bounds,
            &group.dilate(t, &x),
            t * eps,
            QuadratureFlags::default(),
        )
        .unwrap();
        let rhs =
            truncated_transform(&kernel, &sys, &mu, &bounds, &x, eps, QuadratureFlags::default())
                .unwrap();
        // T^{tε}[δ_t♯μ](δ_t x) = t^{1−Q} T^ε[μ](x), including the straddle
        // decisions (every comparison scales exactly).
        assert_eq!(lhs.included, rhs.included);
        assert_eq!(lhs.excluded, rhs.excluded);
        assert_eq!(lhs.refined, rhs.refined);
        let scale = t.powi(1 - kernel.homogeneous_dimension() as i32);
        for j in 0..kernel.horizontal_dim() {
            let want = scale * rhs.components[j];
            assert!(
                (lhs.components[j] - want).abs() <= 1e-10 * want.abs().max(1e-20),
                "component {j}: {} vs {}",
                lhs.components[j],
                want
            );
        }
    }

    #[test]
    fn deterministic_sweeps_are_bit_stable_and_modes_agree() {
        let (kernel, sys) = moderate_system();
        let mu = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
        let bounds = bounds_for(&kernel, &sys);
        let probe = mu.point(17);
        let eps = 0.5 * mu.diam_k;
        let a = truncated_transform(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &probe,
            eps,
            QuadratureFlags { deterministic: true },
        )
        .unwrap();
        let b = truncated_transform(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &probe,
            eps,
            QuadratureFlags { deterministic: true },
        )
        .unwrap();
        assert_eq!(a.components, b.components, "deterministic mode must be bit-stable");
        let c = truncated_transform(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &probe,
            eps,
            QuadratureFlags { deterministic: false },
        )
        .unwrap();
        for j in 0..kernel.horizontal_dim() {
            assert!(
                (a.components[j] - c.components[j]).abs()
                    <= 1e-10 * a.components[j].abs().max(1e-20),
                "reduction modes diverged beyond rounding"
            );
        }
    }

    #[test]
    fn conjugation_identity_holds_to_rounding() {
        let (kernel, sys) = moderate_system();
        let mu5 = DiscreteMeasure::from_system(&sys, 5, 1 << 21).unwrap();
        let mu4 = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
        let mut z = Point::ORIGIN;
        z.0[0] = 3.0;
        z.0[1] = 1.0;
        z.0[2] = -0.5;
        let res = conjugation_residual(&kernel, &sys, &mu5, &mu4, &z, QuadratureFlags::default())
            .unwrap();
        // The identity is exact for the quadrature; the residual is float
        // noise at the scale of the summed kernel values (~1e-1 here).
        assert!(res < 1e-12, "conjugation residual {res} above rounding noise");
        let bad = conjugation_residual(&kernel, &sys, &mu4, &mu4, &z, QuadratureFlags::default());
        assert!(bad.is_err(), "non-consecutive depths must be rejected");
    }

    #[test]
    fn tree_and_node_backends_agree_within_their_error_bars() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let mu = DiscreteMeasure::from_system(&sys, 6, 1 << 21).unwrap();
        let node = unb_condition_nodes(
            &kernel,
            &sys,
            &mu,
            &bounds,
            0,
            &[0],
            QuadratureFlags::default(),
        )
        .unwrap();
        let tree = unb_condition(
            &kernel,
            &sys,
            &bounds,
            &UnbOptions { component: 0, zeros: 1, depth: 8, ..UnbOptions::default() },
        )
        .unwrap();
        assert!(node.error.is_finite());
        assert!(tree.error.is_finite());
        assert!(!tree.exhausted);
        let gap = (node.value - tree.value).abs();
        assert!(
            gap <= node.error + tree.error,
            "backends disagree: node {} ± {}, tree {} ± {}",
            node.value,
            node.error,
            tree.value,
            tree.error
        );
    }

    #[test]
    fn tree_unb_ladder_is_cauchy_with_shrinking_error_bars() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        // Below the depth where the scale gate undercuts the θ-rule near the
        // probe (≈ 8 here), the error floor is θ-dominated and depth-flat;
        // from there on the gate binds everywhere and the ladder contracts
        // at the system's rate (observed ≈ 0.66 per step).
        let reports: Vec<UnbReport> = (8..=11)
            .map(|depth| {
                unb_condition(
                    &kernel,
                    &sys,
                    &bounds,
                    &UnbOptions { component: 0, zeros: 1, depth, ..UnbOptions::default() },
                )
                .unwrap()
            })
            .collect();
        let ratio = sys.r.max(sys.r0) + 0.1;
        for pair in reports.windows(2) {
            assert!(pair[0].error.is_finite());
            // Error bars shrink at least geometrically once finite.
            assert!(
                pair[1].error <= ratio * pair[0].error + 1e-15,
                "error bars not geometric: {} then {}",
                pair[0].error,
                pair[1].error
            );
        }
        // Cauchy at the contraction rate: residuals against the deepest
        // value contract by at least `ratio` per step. (Consecutive deltas
        // are differences of residuals and need not shrink monotonically.)
        let deepest = reports.last().unwrap().value;
        let residuals: Vec<f64> =
            reports[..reports.len() - 1].iter().map(|r| (r.value - deepest).abs()).collect();
        for pair in residuals.windows(2) {
            assert!(
                pair[1] <= ratio * pair[0] + 1e-14,
                "ladder residuals not Cauchy at the contraction rate: {} then {}",
                pair[0],
                pair[1]
            );
        }
        // The deepest run must certify the sign outright.
        let last = reports.last().unwrap();
        assert!(last.certified_sign.is_some(), "sign uncertain at the deepest cap");
        assert!(!last.exhausted);
    }

    #[test]
    fn unb_rejects_bad_parameters() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let err = unb_condition(
            &kernel,
            &sys,
            &bounds,
            &UnbOptions { zeros: 0, ..UnbOptions::default() },
        )
        .unwrap_err();
        assert!(matches!(err, SingintError::BadParameter(_)));
        let err = unb_condition(
            &kernel,
            &sys,
            &bounds,
            &UnbOptions { theta: 0.9, ..UnbOptions::default() },
        )
        .unwrap_err();
        assert!(matches!(err, SingintError::BadParameter(_)));
        let mu = DiscreteMeasure::from_system(&sys, 3, 1 << 20).unwrap();
        let err = unb_condition_nodes(
            &kernel,
            &sys,
            &mu,
            &bounds,
            0,
            &[0, 0, 0, 0],
            QuadratureFlags::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SingintError::BadParameter(_)));
    }

    #[test]
    fn single_far_atom_has_zero_maximal_gap() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let mu = DiscreteMeasure::from_system(&sys, 0, 1 << 10).unwrap();
        assert_eq!(mu.len(), 1);
        // The depth-0 "node" is the whole attractor, so the resolution floor
        // is 2 · diam K̂ and the grid must sit above it.
        let grid = TruncationGrid::log_spaced(5.0 * mu.diam_k, 2.0 * mu.diam_k, 6).unwrap();
        let report = semmes_gap(
            &kernel,
            &sys,
            &mu,
            &bounds,
            &grid,
            &SemmesOptions { n_samples: 24, seed: 11, flags: QuadratureFlags::default() },
        )
        .unwrap();
        // One atom: every truncation sees all of it or none, so the maximal
        // and the floor transform coincide at each probe.
        assert_eq!(report.gap, 0.0);
        assert!(report.t_star_sup > 0.0);
    }

    #[test]
    fn maximal_gap_is_stable_across_depths() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let run = |depth: usize| -> SemmesReport {
            let mu = DiscreteMeasure::from_system(&sys, depth, 1 << 21).unwrap();
            // Shared grid floor: the depth-4 resolution limit, so both
            // depths evaluate the same truncation range.
            let mu4 = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
            let grid = TruncationGrid::log_spaced(mu.diam_k, 2.0 * mu4.max_node_diam, 8).unwrap();
            semmes_gap(&kernel, &sys, &mu, &bounds, &grid, &SemmesOptions::default()).unwrap()
        };
        let coarse = run(4);
        let fine = run(5);
        assert!(coarse.t_star_sup > 0.0);
        let drift = (fine.t_star_sup - coarse.t_star_sup).abs() / coarse.t_star_sup;
        assert!(drift < 0.25, "sup T* drifted {drift:.3} between depths");
    }

    #[test]
    fn compop_rejects_non_nested_words_and_equal_words_are_trivial() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let mu = DiscreteMeasure::from_system(&sys, 4, 1 << 20).unwrap();
        let err = compop_check(&kernel, &sys, &mu, &bounds, &[1, 2], &[2, 1], &CompopOptions::default())
            .unwrap_err();
        assert!(matches!(err, SingintError::InvalidNesting { .. }));
        let err = compop_check(&kernel, &sys, &mu, &bounds, &[1], &[1, 99], &CompopOptions::default())
            .unwrap_err();
        assert!(matches!(err, SingintError::BadParameter(_)));

        let report =
            compop_check(&kernel, &sys, &mu, &bounds, &[1], &[1], &CompopOptions::default())
                .unwrap();
        // w = v: empty cylinder difference and identical truncations.
        assert_eq!(report.a_k, 0.0);
        for row in &report.rows {
            assert_eq!(row.left, 0.0);
            assert_eq!(row.annulus, 0.0);
        }
    }

    #[test]
    fn compop_constants_are_finite_and_depth_stable() {
        let (kernel, sys) = moderate_system();
        let bounds = bounds_for(&kernel, &sys);
        let run = |depth: usize| -> CompopReport {
            let mu = DiscreteMeasure::from_system(&sys, depth, 1 << 22).unwrap();
            compop_check(&kernel, &sys, &mu, &bounds, &[], &[1], &CompopOptions::default())
                .unwrap()
        };
        let coarse = run(5);
        let fine = run(6);
        assert!(coarse.alpha.is_finite() && coarse.alpha > 0.0);
        assert!(coarse.a_k.is_finite());
        let alpha_drift = (fine.alpha - coarse.alpha).abs() / coarse.alpha;
        assert!(alpha_drift < 0.25, "collar constant drifted {alpha_drift:.3}");
        let scale = coarse.a_k.abs().max(fine.a_k.abs()).max(1e-12);
        let ak_drift = (fine.a_k - coarse.a_k).abs() / scale;
        assert!(ak_drift < 0.25, "comparison constant drifted {ak_drift:.3}");
    }
}
