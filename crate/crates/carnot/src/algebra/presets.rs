//! Built-in algebra presets used by configs, examples, and tests.

use super::{AlgebraError, BracketEntry, StratifiedAlgebra};

/// The n-th Heisenberg algebra `h^n`: layers `(2n, 1)` with basis
/// `x_1, …, x_n, y_1, …, y_n, t` and `[x_i, y_i] = t`.
///
/// For `n = 1` this gives homogeneous dimension 4, the smallest nonabelian
/// case and the default group throughout.
pub fn heisenberg(n: usize) -> Result<StratifiedAlgebra, AlgebraError> {
    assert!(n >= 1, "heisenberg(n) needs n >= 1");
    let t = 2 * n;
    let mut entries = Vec::with_capacity(2 * n);
    for i in 0..n {
        entries.push(BracketEntry::new(i, n + i, t, 1, 1));
        entries.push(BracketEntry::new(n + i, i, t, -1, 1));
    }
    StratifiedAlgebra::new(format!("heisenberg-{n}"), &[2 * n, 1], &entries)
}

/// The abelian algebra `R^n` (step 1): the Euclidean sanity case, where the
/// sub-Laplacian machinery must reduce to classical Newtonian potential theory.
pub fn abelian(n: usize) -> Result<StratifiedAlgebra, AlgebraError> {
    assert!(n >= 1, "abelian(n) needs n >= 1");
    StratifiedAlgebra::new(format!("abelian-{n}"), &[n], &[])
}

/// The quaternionic H-type algebra: layers `(4, 3)` with first layer `H` and
/// center `Im H`, bracket `[x, y]_k = <J_k x, y>` where `J_1, J_2, J_3` are
/// left multiplication by `i, j, k`. These satisfy the Clifford relations
/// `J_a J_b + J_b J_a = -2 δ_ab I`, so the group is H-type with `Q = 10`.
pub fn quaternionic() -> Result<StratifiedAlgebra, AlgebraError> {
    // Left-multiplication matrices on (1, i, j, k); column b is the image of
    // basis vector b, and the bracket coefficient is c[a][b][4+k] = J_k[b][a].
    const J: [[[i64; 4]; 4]; 3] = [
        // J_1 = L_i
        [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
        // J_2 = L_j
        [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
        // J_3 = L_k
        [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
    ];
    let mut entries = Vec::new();
    for (k, m) in J.iter().enumerate() {
        for a in 0..4 {
            for b in 0..4 {
                if m[b][a] != 0 {
                    entries.push(BracketEntry::new(a, b, 4 + k, m[b][a], 1));
                }
            }
        }
    }
    StratifiedAlgebra::new("quaternionic", &[4, 3], &entries)
}

/// The model filiform algebra of the given step: layers `(2, 1, 1, …)` with
/// `[e_0, e_j] = e_{j+1}` for `1 ≤ j < step` and all other brackets zero.
/// These are the thinnest algebras realizing every step up to the supported
/// maximum, so they exercise the full depth of the BCH expansion.
pub fn filiform(step: usize) -> Result<StratifiedAlgebra, AlgebraError> {
    assert!(step >= 2, "filiform(step) needs step >= 2");
    let mut layers = vec![1usize; step];
    layers[0] = 2;
    let mut entries = Vec::new();
    for j in 1..step {
        entries.push(BracketEntry::new(0, j, j + 1, 1, 1));
        entries.push(BracketEntry::new(j, 0, j + 1, -1, 1));
    }
    StratifiedAlgebra::new(format!("filiform-{step}"), &layers, &entries)
}

/// Looks up a preset by its config name, e.g. `"heisenberg-1"`,
/// `"quaternionic"`, `"abelian-3"`, `"filiform-4"`.
pub fn from_name(name: &str) -> Option<StratifiedAlgebra> {
    if name == "quaternionic" {
        return quaternionic().ok();
    }
    if let Some(n) = name.strip_prefix("heisenberg-").and_then(|s| s.parse().ok()) {
        if n >= 1 {
            return heisenberg(n).ok();
        }
    }
    if let Some(n) = name.strip_prefix("abelian-").and_then(|s| s.parse().ok()) {
        if n >= 1 {
            return abelian(n).ok();
        }
    }
    if let Some(s) = name.strip_prefix("filiform-").and_then(|s| s.parse().ok()) {
        if (2..=super::MAX_STEP).contains(&s) {
            return filiform(s).ok();
        }
    }
    None
}

/// Names accepted by [`from_name`], for help text and error messages.
pub const PRESET_HELP: &str =
    "heisenberg-<n>, abelian-<n>, quaternionic, filiform-<2..=6>";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_name_round_trips() {
        for name in ["heisenberg-1", "heisenberg-2", "abelian-3", "quaternionic", "filiform-6"] {
            let alg = from_name(name).unwrap();
            assert_eq!(alg.name(), name);
        }
        assert!(from_name("heisenberg-0").is_none());
        assert!(from_name("filiform-7").is_none());
        assert!(from_name("octonionic").is_none());
    }

    #[test]
    fn quaternionic_clifford_relations() {
        // Reconstruct the J-matrices from structure constants and verify
        // J_a J_b + J_b J_a = -2 δ_ab I exactly (integer arithmetic).
        let alg = quaternionic().unwrap();
        let mut j = [[[0i64; 4]; 4]; 3];
        for a in 0..4 {
            for b in 0..4 {
                for &(k, c) in alg.bracket_basis(a, b) {
                    j[k - 4][b][a] = *c.numer();
                    assert_eq!(*c.denom(), 1);
                }
            }
        }
        for p in 0..3 {
            for q in 0..3 {
                for r in 0..4 {
                    for s in 0..4 {
                        let anti: i64 = (0..4)
                            .map(|m| j[p][r][m] * j[q][m][s] + j[q][r][m] * j[p][m][s])
                            .sum();
                        let expected = if p == q && r == s { -2 } else { 0 };
                        assert_eq!(anti, expected, "relation fails at ({p},{q},{r},{s})");
                    }
                }
            }
        }
    }
}
