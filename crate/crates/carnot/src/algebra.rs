//! Stratified nilpotent Lie algebras with exact rational structure constants.
//!
//! A stratified algebra decomposes as `g = v_1 ⊕ … ⊕ v_s` with
//! `[v_1, v_i] = v_{i+1}` and `[v_i, v_j] ⊆ v_{i+j}` (zero past the step `s`).
//! We fix a graded basis `e_0, …, e_{N-1}` ordered layer by layer and describe
//! the bracket through rational structure constants `[e_i, e_j] = Σ_k c_ij^k e_k`.
//!
//! Construction validates everything exactly in `ℚ`: antisymmetry, the Jacobi
//! identity, grading, and stratification (each higher layer is spanned by
//! brackets of layer 1 with the previous layer, checked by an exact rank
//! computation). Validated algebras then compile their Baker-Campbell-Hausdorff
//! product into a flat monomial table so that group multiplication later runs
//! as plain floating-point polynomial evaluation.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod bch;
pub mod presets;

/// Exact scalar used for structure constants and validation arithmetic.
pub type Rational = Ratio<i64>;

/// Maximum supported nilpotency step; the BCH expansion is generated through
/// this depth and higher steps are rejected outright.
pub const MAX_STEP: usize = 6;

/// Errors raised while validating an algebra description.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("invalid dimensions: {0}")]
    DimensionMismatch(String),
    #[error("antisymmetry fails at basis pair ({i}, {j})")]
    AntisymmetryViolation { i: usize, j: usize },
    #[error("Jacobi identity fails at basis triple ({i}, {j}, {k})")]
    JacobiViolation { i: usize, j: usize, k: usize },
    #[error("bracket [e_{i}, e_{j}] has a component outside layer {expected}")]
    GradingViolation { i: usize, j: usize, expected: usize },
    #[error("layer {layer} is not spanned by brackets of layer 1 with layer {}", layer - 1)]
    StratificationFailure { layer: usize },
    #[error("nilpotency step {0} exceeds the supported maximum {MAX_STEP}")]
    UnsupportedStep(usize),
}

/// One bracket entry `[e_i, e_j] ⊇ (num/den)·e_k` as written in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub num: i64,
    pub den: i64,
}

impl BracketEntry {
    pub fn new(i: usize, j: usize, k: usize, num: i64, den: i64) -> Self {
        Self { i, j, k, num, den }
    }
}

/// A validated stratified Lie algebra in a fixed graded basis.
#[derive(Debug, Clone)]
pub struct StratifiedAlgebra {
    name: String,
    layer_dims: Vec<usize>,
    dim: usize,
    step: usize,
    /// 1-based layer (degree) of each basis vector.
    degree: Vec<usize>,
    /// First basis index of each layer, plus a trailing `dim` sentinel.
    layer_start: Vec<usize>,
    /// Dense outer table: `table[i][j]` lists `(k, c_ij^k)` with nonzero `c`.
    table: Vec<Vec<Vec<(usize, Rational)>>>,
}

impl StratifiedAlgebra {
    /// Validates a bracket table against the layer structure.
    ///
    /// `entries` must list each ordered pair explicitly (both `(i,j)` and
    /// `(j,i)`); antisymmetry is checked, not inferred, so that sign slips in
    /// hand-written tables surface as errors instead of silent corrections.
    pub fn new(
        name: impl Into<String>,
        layer_dims: &[usize],
        entries: &[BracketEntry],
    ) -> Result<Self, AlgebraError> {
        let name = name.into();
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(AlgebraError::DimensionMismatch(
                "layer dimensions must be nonempty and positive".into(),
            ));
        }
        let step = layer_dims.len();
        if step > MAX_STEP {
            return Err(AlgebraError::UnsupportedStep(step));
        }
        let dim: usize = layer_dims.iter().sum();

        let mut degree = Vec::with_capacity(dim);
        let mut layer_start = Vec::with_capacity(step + 1);
        let mut offset = 0usize;
        for (layer, &d) in layer_dims.iter().enumerate() {
            layer_start.push(offset);
            degree.extend(std::iter::repeat(layer + 1).take(d));
            offset += d;
        }
        layer_start.push(dim);

        // Assemble the dense table, accumulating duplicate (i, j, k) entries.
        let mut dense = vec![vec![Rational::zero(); dim * dim]; dim];
        for e in entries {
            if e.i >= dim || e.j >= dim || e.k >= dim {
                return Err(AlgebraError::DimensionMismatch(format!(
                    "bracket entry ({}, {}, {}) exceeds dimension {}",
                    e.i, e.j, e.k, dim
                )));
            }
            if e.den == 0 {
                return Err(AlgebraError::DimensionMismatch(format!(
                    "bracket entry ({}, {}, {}) has zero denominator",
                    e.i, e.j, e.k
                )));
            }
            dense[e.i][e.j * dim + e.k] += Rational::new(e.num, e.den);
        }

        let coeff = |i: usize, j: usize, k: usize| dense[i][j * dim + k];

        // Antisymmetry, including vanishing of [e_i, e_i].
        for i in 0..dim {
            for j in i..dim {
                for k in 0..dim {
                    if coeff(i, j, k) + coeff(j, i, k) != Rational::zero() {
                        return Err(AlgebraError::AntisymmetryViolation { i, j });
                    }
                }
            }
        }

        // Grading: [v_a, v_b] ⊆ v_{a+b}, interpreted as zero past the step.
        for i in 0..dim {
            for j in 0..dim {
                let expected = degree[i] + degree[j];
                for k in 0..dim {
                    if !coeff(i, j, k).is_zero() && (expected > step || degree[k] != expected) {
                        return Err(AlgebraError::GradingViolation { i, j, expected });
                    }
                }
            }
        }

        // Jacobi identity, exact: [e_i,[e_j,e_k]] + [e_j,[e_k,e_i]] + [e_k,[e_i,e_j]] = 0.
        for i in 0..dim {
            for j in (i + 1)..dim {
                for k in (j + 1)..dim {
                    let mut total = vec![Rational::zero(); dim];
                    for &(a, b, c) in &[(i, j, k), (j, k, i), (k, i, j)] {
                        // [e_a, [e_b, e_c]]
                        for m in 0..dim {
                            let inner = coeff(b, c, m);
                            if inner.is_zero() {
                                continue;
                            }
                            for out in 0..dim {
                                let c2 = coeff(a, m, out);
                                if !c2.is_zero() {
                                    total[out] += inner * c2;
                                }
                            }
                        }
                    }
                    if total.iter().any(|v| !v.is_zero()) {
                        return Err(AlgebraError::JacobiViolation { i, j, k });
                    }
                }
            }
        }

        // Stratification: for each layer ℓ ≥ 2, the brackets of layer-1 basis
        // vectors with layer-(ℓ-1) basis vectors must span layer ℓ. Rank is
        // computed exactly by fraction-free elimination.
        for layer in 2..=step {
            let lo = layer_start[layer - 1];
            let hi = layer_start[layer];
            let width = hi - lo;
            let mut rows: Vec<Vec<Rational>> = Vec::new();
            for a in layer_start[0]..layer_start[1] {
                for b in layer_start[layer - 2]..layer_start[layer - 1] {
                    let row: Vec<Rational> = (lo..hi).map(|k| coeff(a, b, k)).collect();
                    if row.iter().any(|v| !v.is_zero()) {
                        rows.push(row);
                    }
                }
            }
            if exact_rank(&mut rows, width) < width {
                return Err(AlgebraError::StratificationFailure { layer });
            }
        }

        // Sparsify.
        let mut table = vec![vec![Vec::new(); dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let c = coeff(i, j, k);
                    if !c.is_zero() {
                        table[i][j].push((k, c));
                    }
                }
            }
        }

        Ok(Self { name, layer_dims: layer_dims.to_vec(), dim, step, degree, layer_start, table })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// 1-based degree (layer) of basis vector `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    /// Half-open basis index range of `layer` (1-based).
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.layer_start[layer - 1]..self.layer_start[layer]
    }

    /// Homogeneous dimension `Q = Σ_i i · dim v_i`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.layer_dims.iter().enumerate().map(|(i, &d)| (i + 1) * d).sum()
    }

    /// Sparse structure constants of `[e_i, e_j]`.
    pub fn bracket_basis(&self, i: usize, j: usize) -> &[(usize, Rational)] {
        &self.table[i][j]
    }

    /// Numeric bracket `[x, y]` of coordinate vectors.
    pub fn bracket(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..self.dim {
                if y[j] == 0.0 {
                    continue;
                }
                for &(k, c) in &self.table[i][j] {
                    out[k] += rational_to_f64(c) * x[i] * y[j];
                }
            }
        }
    }

    /// True when all brackets vanish (step 1).
    pub fn is_abelian(&self) -> bool {
        self.step == 1
    }
}

/// Exact rank of a rational matrix given as rows; destroys `rows`.
fn exact_rank(rows: &mut [Vec<Rational>], width: usize) -> usize {
    let mut rank = 0usize;
    let mut row = 0usize;
    for col in 0..width {
        // Find a pivot with maximal absolute numerator heuristic unnecessary:
        // exact arithmetic, any nonzero pivot works.
        let pivot = (row..rows.len()).find(|&r| !rows[r][col].is_zero());
        let Some(p) = pivot else { continue };
        rows.swap(row, p);
        let pivot_val = rows[row][col];
        for r in (row + 1)..rows.len() {
            let factor = rows[r][col] / pivot_val;
            if factor.is_zero() {
                continue;
            }
            for c in col..width {
                let sub = factor * rows[row][c];
                rows[r][c] -= sub;
            }
        }
        rank += 1;
        row += 1;
        if row == rows.len() {
            break;
        }
    }
    rank
}

pub(crate) fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact-arithmetic sanity bound: structure constants with huge numerators
/// would signal a degenerate table; used by config validation to warn early.
pub fn max_abs_constant(alg: &StratifiedAlgebra) -> Rational {
    let mut best = Rational::zero();
    for i in 0..alg.dim() {
        for j in 0..alg.dim() {
            for &(_, c) in alg.bracket_basis(i, j) {
                if c.abs() > best {
                    best = c.abs();
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::presets;
    use super::*;

    #[test]
    fn heisenberg_validates() {
        let alg = presets::heisenberg(1).unwrap();
        assert_eq!(alg.dim(), 3);
        assert_eq!(alg.step(), 2);
        assert_eq!(alg.homogeneous_dimension(), 4);
        assert_eq!(alg.degree(2), 2);
    }

    #[test]
    fn homogeneous_dimensions_of_presets() {
        assert_eq!(presets::heisenberg(2).unwrap().homogeneous_dimension(), 6);
        assert_eq!(presets::abelian(3).unwrap().homogeneous_dimension(), 3);
        assert_eq!(presets::quaternionic().unwrap().homogeneous_dimension(), 10);
        assert_eq!(presets::filiform(6).unwrap().step(), 6);
    }

    #[test]
    fn antisymmetry_violation_is_reported_with_witness() {
        // [e_0, e_1] = e_2 but [e_1, e_0] missing entirely.
        let entries = [BracketEntry::new(0, 1, 2, 1, 1)];
        let err = StratifiedAlgebra::new("broken", &[2, 1], &entries).unwrap_err();
        assert_eq!(err, AlgebraError::AntisymmetryViolation { i: 0, j: 1 });
    }

    #[test]
    fn jacobi_violation_is_detected() {
        // Jacobi has content only when double brackets survive the grading,
        // which needs three layer-1 generators and step ≥ 3. Layers [3, 3, 1]:
        // [e_0,e_1] = e_3, [e_1,e_2] = e_4, [e_0,e_2] = e_5, [e_0,e_4] = e_6,
        // [e_2,e_3] = -e_6 closes the (0,1,2) cycle; dropping it breaks Jacobi.
        fn antisym(i: usize, j: usize, k: usize) -> [BracketEntry; 2] {
            [BracketEntry::new(i, j, k, 1, 1), BracketEntry::new(j, i, k, -1, 1)]
        }
        fn antisym_neg(i: usize, j: usize, k: usize) -> [BracketEntry; 2] {
            [BracketEntry::new(i, j, k, -1, 1), BracketEntry::new(j, i, k, 1, 1)]
        }
        let mut good: Vec<BracketEntry> = Vec::new();
        good.extend(antisym(0, 1, 3));
        good.extend(antisym(1, 2, 4));
        good.extend(antisym(0, 2, 5));
        good.extend(antisym(0, 4, 6));
        good.extend(antisym_neg(2, 3, 6));
        StratifiedAlgebra::new("closed", &[3, 3, 1], &good).unwrap();

        let bad = &good[..8]; // drop the closing [e_2, e_3] = -e_6 pair
        let err = StratifiedAlgebra::new("open", &[3, 3, 1], bad).unwrap_err();
        assert_eq!(err, AlgebraError::JacobiViolation { i: 0, j: 1, k: 2 });
    }

    #[test]
    fn grading_violation_is_detected() {
        // [e_0, e_1] landing back in layer 1.
        let entries = [BracketEntry::new(0, 1, 0, 1, 1), BracketEntry::new(1, 0, 0, -1, 1)];
        let err = StratifiedAlgebra::new("bad", &[2, 1], &entries).unwrap_err();
        assert!(matches!(err, AlgebraError::GradingViolation { i: 0, j: 1, .. }));
    }

    #[test]
    fn stratification_failure_is_detected() {
        // Layer 2 declared two-dimensional but only e_2 is generated.
        let entries = [BracketEntry::new(0, 1, 2, 1, 1), BracketEntry::new(1, 0, 2, -1, 1)];
        let err = StratifiedAlgebra::new("thin", &[2, 2], &entries).unwrap_err();
        assert_eq!(err, AlgebraError::StratificationFailure { layer: 2 });
    }

    #[test]
    fn step_seven_is_rejected() {
        let err = StratifiedAlgebra::new("deep", &[2, 1, 1, 1, 1, 1, 1], &[]).unwrap_err();
        assert_eq!(err, AlgebraError::UnsupportedStep(7));
    }

    #[test]
    fn exact_rank_handles_dependent_rows() {
        let mut rows = vec![
            vec![Rational::new(1, 2), Rational::new(1, 3)],
            vec![Rational::new(0, 1), Rational::new(1, 1)],
            vec![Rational::new(1, 1), Rational::new(2, 3)], // 2x row 0
        ];
        assert_eq!(exact_rank(&mut rows, 2), 2);
        let mut dep = vec![
            vec![Rational::new(1, 1), Rational::new(2, 1)],
            vec![Rational::new(2, 1), Rational::new(4, 1)],
        ];
        assert_eq!(exact_rank(&mut dep, 2), 1);
    }
}
