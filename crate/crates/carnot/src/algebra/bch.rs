//! Baker-Campbell-Hausdorff product, compiled per algebra.
//!
//! In exponential coordinates the group law of a step-`s` stratified group is
//! the truncated BCH series `a · b = a + b + ½[a,b] + …`, a polynomial map.
//! We enumerate the Dynkin form of the series once, with exact rational
//! coefficients and right-nested bracket words, evaluate every word
//! symbolically against the algebra's structure constants, and merge the
//! result into one monomial list per output coordinate. Group multiplication
//! afterwards is a short flat loop over those monomials — no series logic,
//! no allocation.

use std::collections::BTreeMap;

use num_traits::Zero;

use super::{rational_to_f64, Rational, StratifiedAlgebra};

/// Which argument of the product a monomial factor is drawn from.
const SIDE_A: u8 = 0;
const SIDE_B: u8 = 1;

/// A bracket word of the Dynkin series with its exact coefficient.
#[derive(Debug, Clone)]
struct DynkinTerm {
    /// Letters of the right-nested bracket `[w_0, [w_1, [… , w_{m-1}]…]]`.
    word: Vec<u8>,
    coeff: Rational,
}

/// Enumerates the Dynkin series of `log(exp A · exp B)` through `max_degree`.
///
/// Terms are indexed by sequences of pairs `(r_1, s_1), …, (r_n, s_n)` with
/// `r_i + s_i ≥ 1`; each contributes the right-nested bracketing of the word
/// `A^{r_1} B^{s_1} ⋯ A^{r_n} B^{s_n}` with coefficient
/// `(-1)^{n-1} / (n · m · Π r_i! s_i!)` where `m` is the word length.
fn dynkin_terms(max_degree: usize) -> Vec<DynkinTerm> {
    const FACT: [i64; 7] = [1, 1, 2, 6, 24, 120, 720];
    let mut terms = Vec::new();
    // Depth-first over pair sequences; `pairs` holds the (r, s) prefix.
    fn recurse(
        pairs: &mut Vec<(usize, usize)>,
        used: usize,
        max_degree: usize,
        fact: &[i64; 7],
        terms: &mut Vec<DynkinTerm>,
    ) {
        if !pairs.is_empty() {
            let n = pairs.len() as i64;
            let m = used as i64;
            let mut denom = n * m;
            let mut word = Vec::with_capacity(used);
            for &(r, s) in pairs.iter() {
                denom *= fact[r] * fact[s];
                word.extend(std::iter::repeat(SIDE_A).take(r));
                word.extend(std::iter::repeat(SIDE_B).take(s));
            }
            // Right-nested brackets vanish when the innermost pair repeats a
            // letter; skip those words early.
            let trivial = word.len() >= 2 && word[word.len() - 1] == word[word.len() - 2];
            if !trivial {
                let sign = if pairs.len() % 2 == 1 { 1 } else { -1 };
                terms.push(DynkinTerm { word, coeff: Rational::new(sign, denom) });
            }
        }
        if used == max_degree {
            return;
        }
        for r in 0..=(max_degree - used) {
            for s in 0..=(max_degree - used - r) {
                if r + s == 0 {
                    continue;
                }
                pairs.push((r, s));
                recurse(pairs, used + r + s, max_degree, fact, terms);
                pairs.pop();
            }
        }
    }
    let mut pairs = Vec::new();
    recurse(&mut pairs, 0, max_degree, &FACT, &mut terms);
    terms
}

/// Symbolic element of the algebra: per basis coordinate, a map from a sorted
/// factor list (the monomial key) to its exact coefficient.
type SymVec = Vec<BTreeMap<Vec<(u8, u8)>, Rational>>;

/// Evaluates the right-nested bracket of `word` against generic arguments.
fn eval_word(alg: &StratifiedAlgebra, word: &[u8]) -> SymVec {
    let dim = alg.dim();
    let last = *word.last().expect("nonempty word");
    // Innermost slot: the generic vector of side `last`.
    let mut sym: SymVec = vec![BTreeMap::new(); dim];
    for i in 0..dim {
        sym[i].insert(vec![(last, i as u8)], Rational::new(1, 1));
    }
    // Wrap with [x_side, ·] from the inside out.
    for &side in word[..word.len() - 1].iter().rev() {
        let mut next: SymVec = vec![BTreeMap::new(); dim];
        for j in 0..dim {
            if sym[j].is_empty() {
                continue;
            }
            for i in 0..dim {
                for &(k, c) in alg.bracket_basis(i, j) {
                    for (factors, &coeff) in &sym[j] {
                        let mut f = factors.clone();
                        f.push((side, i as u8));
                        f.sort_unstable();
                        let entry = next[k].entry(f).or_insert_with(Rational::zero);
                        *entry += c * coeff;
                    }
                }
            }
        }
        for coord in &mut next {
            coord.retain(|_, v| !v.is_zero());
        }
        sym = next;
    }
    sym
}

/// The BCH product of one algebra, compiled to flat monomial tables.
///
/// For output coordinate `k`, `evaluate` computes
/// `a_k + b_k + Σ_t coeff_t · Π_f arg(side_f)[idx_f]`
/// where the product runs over at most `step` packed factors per term.
#[derive(Debug, Clone)]
pub struct CompiledBch {
    dim: usize,
    /// CSR boundaries: terms of coordinate `k` live in `offsets[k]..offsets[k+1]`.
    offsets: Vec<u32>,
    coeffs: Vec<f64>,
    /// Factors packed one per byte, low byte first: `(side << 7) | idx`.
    factors: Vec<u64>,
    lens: Vec<u8>,
}

impl CompiledBch {
    /// Expands and compiles the BCH series for `alg` (exact until the final
    /// conversion of each merged coefficient to `f64`).
    pub fn compile(alg: &StratifiedAlgebra) -> Self {
        let dim = alg.dim();
        assert!(dim <= 127, "factor packing supports dimension at most 127");
        let mut merged: SymVec = vec![BTreeMap::new(); dim];
        for term in dynkin_terms(alg.step()) {
            let sym = eval_word(alg, &term.word);
            for k in 0..dim {
                for (factors, &c) in &sym[k] {
                    let entry = merged[k].entry(factors.clone()).or_insert_with(Rational::zero);
                    *entry += c * term.coeff;
                }
            }
        }

        let mut offsets = Vec::with_capacity(dim + 1);
        let mut coeffs = Vec::new();
        let mut factors = Vec::new();
        let mut lens = Vec::new();
        offsets.push(0u32);
        for (k, coord) in merged.iter().enumerate() {
            for (fs, &c) in coord {
                if c.is_zero() {
                    continue;
                }
                // The degree-1 part of the series must be exactly a_k + b_k;
                // it is handled analytically, so assert and skip it here.
                if fs.len() == 1 {
                    assert_eq!(fs[0].1 as usize, k, "degree-1 term off-diagonal");
                    assert_eq!(c, Rational::new(1, 1), "degree-1 coefficient must be 1");
                    continue;
                }
                let mut packed = 0u64;
                for (pos, &(side, idx)) in fs.iter().enumerate() {
                    packed |= (((side << 7) | idx) as u64) << (8 * pos);
                }
                coeffs.push(rational_to_f64(c));
                factors.push(packed);
                lens.push(fs.len() as u8);
            }
            offsets.push(coeffs.len() as u32);
        }
        Self { dim, offsets, coeffs, factors, lens }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of compiled monomials beyond the linear part.
    pub fn term_count(&self) -> usize {
        self.coeffs.len()
    }

    /// Evaluates the group product `a · b` into `out`.
    #[inline]
    pub fn evaluate(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(b.len(), self.dim);
        for k in 0..self.dim {
            let mut acc = a[k] + b[k];
            let lo = self.offsets[k] as usize;
            let hi = self.offsets[k + 1] as usize;
            for t in lo..hi {
                let mut prod = self.coeffs[t];
                let mut bits = self.factors[t];
                for _ in 0..self.lens[t] {
                    let byte = (bits & 0xff) as u8;
                    let idx = (byte & 0x7f) as usize;
                    prod *= if byte >> 7 == SIDE_A { a[idx] } else { b[idx] };
                    bits >>= 8;
                }
                acc += prod;
            }
            out[k] = acc;
        }
    }
}
