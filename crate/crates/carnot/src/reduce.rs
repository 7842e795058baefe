//! Deterministic floating-point reductions.
//!
//! Naive left-to-right summation gives results that depend on chunk sizes and
//! thread counts once a reduction is parallelized. All accumulations that feed
//! reports or certificates instead use a fixed-shape pairwise tree: the tree
//! depends only on the input length, so the bit pattern of the result is
//! independent of the executing thread pool. As a bonus the pairwise tree has
//! O(log n) error growth instead of O(n).

/// Below this length a serial Kahan-free loop is fine and faster.
const PAIRWISE_LEAF: usize = 128;

/// Pairwise-tree sum with a shape fixed by `values.len()` alone.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        return values.iter().sum();
    }
    let mid = split_point(values.len());
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Same tree shape as [`pairwise_sum`], but evaluating the two halves on a
/// rayon join. Because the split points are length-determined, the result is
/// bit-identical to the serial version for any worker count.
pub fn pairwise_sum_parallel(values: &[f64]) -> f64 {
    if values.len() <= 4096 {
        return pairwise_sum(values);
    }
    let mid = split_point(values.len());
    let (a, b) = rayon::join(
        || pairwise_sum_parallel(&values[..mid]),
        || pairwise_sum_parallel(&values[mid..]),
    );
    a + b
}

/// Maximum of a slice; NaNs are rejected loudly rather than propagated.
pub fn strict_max(values: &[f64]) -> f64 {
    values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, |acc, v| {
            assert!(!v.is_nan(), "NaN reached a reduction");
            acc.max(v)
        })
}

/// Minimum counterpart of [`strict_max`].
pub fn strict_min(values: &[f64]) -> f64 {
    values
        .iter()
        .copied()
        .fold(f64::INFINITY, |acc, v| {
            assert!(!v.is_nan(), "NaN reached a reduction");
            acc.min(v)
        })
}

/// Largest power of two strictly less than `n`; balances the pairwise tree.
fn split_point(n: usize) -> usize {
    debug_assert!(n > 1);
    let mut p = 1usize;
    while p * 2 < n {
        p *= 2;
    }
    p
}

/// Running sum that keeps a compensation term (Neumaier variant of Kahan).
/// Used where values arrive one at a time and cannot be buffered for a
/// pairwise pass, e.g. streaming tree traversals.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_beats_naive_on_ill_conditioned_input() {
        // 1 followed by many tiny values: naive summation drops every one of
        // them (1e-16 is below half an ulp of 1.0), while the pairwise tree
        // only loses the tail of the first leaf.
        let mut values = vec![1.0];
        values.extend(std::iter::repeat(1e-16).take(100_000));
        let exact = 1.0 + 1e-16 * 100_000.0;
        let naive: f64 = values.iter().sum();
        assert!((naive - exact).abs() > 1e-12);
        assert!((pairwise_sum(&values) - exact).abs() < 5e-14);
    }

    #[test]
    fn parallel_sum_is_bit_identical_to_serial() {
        let values: Vec<f64> = (0..50_000).map(|i| ((i * 2654435761u64 as usize) as f64).sin()).collect();
        let serial = pairwise_sum(&values);
        let parallel = pairwise_sum_parallel(&values);
        assert_eq!(serial.to_bits(), parallel.to_bits());
    }

    #[test]
    fn compensated_sum_tracks_exact() {
        let mut acc = CompensatedSum::new();
        acc.add(1.0);
        for _ in 0..100_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-11)).abs() < 1e-17);
    }
}
