//! Run configuration: one TOML document drives one run.
//!
//! Certificates must be reconstructible from a single artifact, so every
//! knob an executable run depends on lives here — group and metric choice,
//! cone selection, construction ladder, depths, quadrature parameters, and
//! the output directory. Unknown keys are rejected (a typo that silently
//! falls back to a default would invalidate the reproducibility story), and
//! the SHA-256 of the raw document is embedded in every artifact the run
//! writes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::{presets, BracketEntry, StratifiedAlgebra};
use crate::group::NormKind;
use crate::ifs::certify::{CertifyOptions, ConstructOptions, Policy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    /// Schema-level failure: malformed TOML, unknown keys, wrong types,
    /// or values outside their documented ranges.
    #[error("config schema: {0}")]
    Schema(String),
}

/// Homogeneous-norm backend named in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricChoice {
    /// Kaplan gauge `Γ^{1/(2−Q)}`; requires an H-type group.
    Gauge,
    /// Layer-wise max norm `max_i |p_i|^{1/deg}`; defined on any group.
    Box,
}

impl From<MetricChoice> for NormKind {
    fn from(c: MetricChoice) -> Self {
        match c {
            MetricChoice::Gauge => NormKind::Gauge,
            MetricChoice::Box => NormKind::Box,
        }
    }
}

/// Group instance: a named preset or inline structure constants.
///
/// Inline algebras give layer dimensions plus bracket triples
/// `[i, j, k, num, den]` meaning `[e_i, e_j] = (num/den) e_k` with 1-based
/// basis indices; antisymmetric counterparts must be listed explicitly,
/// exactly as the validation layer expects.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupSection {
    /// Named preset: `heisenberg-N`, `abelian-N`, `quaternionic`,
    /// `filiform-N`. Mutually exclusive with `layers`/`brackets`.
    pub preset: Option<String>,
    /// Inline algebra: dimensions of the graded layers.
    pub layers: Option<Vec<usize>>,
    /// Inline algebra: bracket entries `[i, j, k, num, den]`, 1-based.
    pub brackets: Vec<(usize, usize, usize, i64, i64)>,
    /// Display name for inline algebras.
    pub name: Option<String>,
    pub metric: MetricChoice,
}

impl Default for GroupSection {
    fn default() -> Self {
        // `preset` stays `None` here so an inline `layers` table is not
        // shadowed by a phantom default; a document naming neither gets
        // `heisenberg-1` during normalization in `from_toml`.
        Self {
            preset: None,
            layers: None,
            brackets: Vec::new(),
            name: None,
            metric: MetricChoice::Gauge,
        }
    }
}

/// Dilation-cone selection for the certified kernel component.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeSection {
    /// Riesz-kernel component whose sign the cone certifies.
    pub component: usize,
    /// Cone aperture θ ∈ (0, 1): gauge radius of the spherical cap around
    /// the axis, before dilation closure.
    pub aperture: f64,
    /// Horizontal axis direction; omit for automatic selection (the sign
    /// search flips the axis so the component is positive on it).
    pub axis: Option<Vec<f64>>,
    /// Sample count for the cone sign certificate.
    pub samples: usize,
}

impl Default for ConeSection {
    fn default() -> Self {
        Self { component: 0, aperture: 0.25, axis: None, samples: 20_000 }
    }
}

/// ε-ladder knobs for the certified construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructionSection {
    /// Initial separation parameter of the ladder.
    pub eps0: f64,
    /// Coset offset `a` (gauge distance of the vertical coset from the
    /// origin).
    pub offset: f64,
    pub seed: u64,
    /// Ladder length before the construction gives up.
    pub max_attempts: usize,
    /// Acceptable center-count window; the low end also enforces the
    /// dimensional floor `M ≥ 2^{Q−1}`.
    pub m_min: usize,
    pub m_max: usize,
    /// Sample counts for the packing and cone estimates.
    pub coset_samples: usize,
    pub cone_samples: usize,
    /// Safety factor on the cone-inclusion radius of the center ball.
    pub ball_safety: f64,
    /// `strict` fails the run on any scale-infeasible inequality;
    /// `exploratory` records those and certifies the rest.
    pub policy: Policy,
    /// Fraction of the diameter-corrected gap target that must be met.
    pub target_factor: f64,
    /// Heap-pop budget per pairwise gap bound.
    pub pop_budget: usize,
}

impl Default for ConstructionSection {
    fn default() -> Self {
        let c = ConstructOptions::default();
        Self {
            eps0: c.eps0,
            offset: c.offset,
            seed: c.seed,
            max_attempts: c.max_attempts,
            m_min: c.m_min,
            m_max: c.m_max,
            coset_samples: c.coset_samples,
            cone_samples: c.cone_samples,
            ball_safety: c.ball_safety,
            policy: c.certify.policy,
            target_factor: c.certify.target_factor,
            pop_budget: c.certify.pop_budget,
        }
    }
}

/// Word depths of the individual pipelines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthSection {
    /// Cylinder depth of the separation certificate and exported clouds.
    pub construct: usize,
    /// Top of the resolution ladder for the kernel-integral certification.
    pub certify: u32,
    /// Node-measure depth for scans, gap reports, and probe quadrature.
    pub measure: usize,
}

impl Default for DepthSection {
    fn default() -> Self {
        Self { construct: 5, certify: 7, measure: 4 }
    }
}

/// Quadrature and sampling knobs shared by the singular-integral pipelines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    /// Far-field admission parameter θ ∈ (0, ½] of the treecode.
    pub theta: f64,
    /// Number of truncation radii in a log-spaced grid.
    pub grid_levels: usize,
    /// Sample count for the empirical kernel smoothness/magnitude bounds.
    pub bound_samples: usize,
    /// Node budget per treecode traversal.
    pub node_budget: u64,
    /// Bit-stable chunked reduction independent of worker count. Forced on
    /// by certification runs; `false` is for benchmarks only.
    pub deterministic: bool,
    /// AD-regularity scan: sampled centers and radii per center.
    pub scan_centers: usize,
    pub scan_radii: usize,
    /// Probe counts for the gap and composition reports.
    pub semmes_samples: usize,
    pub compop_probes: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            theta: 0.25,
            grid_levels: 6,
            bound_samples: 4_000,
            node_budget: 50_000_000,
            deterministic: true,
            scan_centers: 8,
            scan_radii: 8,
            semmes_samples: 32,
            compop_probes: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory all artifacts are written into (created if absent).
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A full run description, parsed from one TOML document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub group: GroupSection,
    pub cone: ConeSection,
    pub construction: ConstructionSection,
    pub depths: DepthSection,
    pub quadrature: QuadratureSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses and range-checks a config document. Errors here are schema
    /// errors; whether the described algebra exists is a separate question
    /// answered by [`RunConfig::build_algebra`].
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        if cfg.group.preset.is_none() && cfg.group.layers.is_none() {
            cfg.group.preset = Some("heisenberg-1".into());
        }
        cfg.check_ranges()?;
        Ok(cfg)
    }

    /// Reads, parses, and range-checks `path`, returning the config together
    /// with the SHA-256 of the raw document.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml(&text)?;
        Ok((cfg, hash_text(&text)))
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let schema = |msg: String| Err(ConfigError::Schema(msg));
        if self.group.preset.is_some() && self.group.layers.is_some() {
            return schema("group.preset and group.layers are mutually exclusive".into());
        }
        if !(self.cone.aperture > 0.0 && self.cone.aperture < 1.0) {
            return schema(format!("cone.aperture must be in (0, 1), got {}", self.cone.aperture));
        }
        if !(self.construction.eps0 > 0.0 && self.construction.eps0.is_finite()) {
            return schema(format!("construction.eps0 must be positive, got {}", self.construction.eps0));
        }
        if !(self.construction.offset > 0.0 && self.construction.offset.is_finite()) {
            return schema(format!("construction.offset must be positive, got {}", self.construction.offset));
        }
        if self.construction.max_attempts == 0 {
            return schema("construction.max_attempts must be at least 1".into());
        }
        if !(self.quadrature.theta > 0.0 && self.quadrature.theta <= 0.5) {
            return schema(format!("quadrature.theta must be in (0, 1/2], got {}", self.quadrature.theta));
        }
        if self.quadrature.grid_levels == 0 {
            return schema("quadrature.grid_levels must be at least 1".into());
        }
        Ok(())
    }

    /// Builds the stratified algebra the config names. Failures here are
    /// algebra errors (Jacobi, grading, unknown preset), not schema errors.
    pub fn build_algebra(&self) -> Result<StratifiedAlgebra, String> {
        if let Some(name) = &self.group.preset {
            return presets::from_name(name)
                .ok_or_else(|| format!("unknown group preset {name:?}"));
        }
        let Some(layers) = self.group.layers.as_ref() else {
            // Only reachable on a hand-assembled config that skipped
            // `from_toml`; documents always normalize to a preset.
            return Err("group names neither a preset nor inline layers".into());
        };
        let entries: Vec<BracketEntry> = self
            .group
            .brackets
            .iter()
            .map(|&(i, j, k, num, den)| {
                if i == 0 || j == 0 || k == 0 {
                    return Err("bracket indices are 1-based; 0 is out of range".to_string());
                }
                Ok(BracketEntry::new(i - 1, j - 1, k - 1, num, den))
            })
            .collect::<Result<_, _>>()?;
        let name = self.group.name.clone().unwrap_or_else(|| "inline".into());
        StratifiedAlgebra::new(name, layers, &entries).map_err(|e| e.to_string())
    }

    /// Construction options assembled from the config sections.
    pub fn construct_options(&self) -> ConstructOptions {
        ConstructOptions {
            component: self.cone.component,
            aperture: self.cone.aperture,
            offset: self.construction.offset,
            eps0: self.construction.eps0,
            max_attempts: self.construction.max_attempts,
            coset_samples: self.construction.coset_samples,
            cone_samples: self.cone.samples.max(self.construction.cone_samples),
            certify: CertifyOptions {
                depth: self.depths.construct,
                policy: self.construction.policy,
                target_factor: self.construction.target_factor,
                pop_budget: self.construction.pop_budget,
                ..CertifyOptions::default()
            },
            m_min: self.construction.m_min,
            m_max: self.construction.m_max,
            ball_safety: self.construction.ball_safety,
            seed: self.construction.seed,
        }
    }
}

impl fmt::Display for MetricChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricChoice::Gauge => write!(f, "gauge"),
            MetricChoice::Box => write!(f, "box"),
        }
    }
}

/// SHA-256 of a text document, lowercase hex.
pub fn hash_text(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(out, "{byte:02x}").expect("writing to String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_roundtrip() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.group.preset.as_deref(), Some("heisenberg-1"));
        assert_eq!(cfg.depths.construct, 5);
        assert!(cfg.quadrature.deterministic);
        let alg = cfg.build_algebra().unwrap();
        assert_eq!(alg.homogeneous_dimension(), 4);
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let err = RunConfig::from_toml("[group]\npresett = \"heisenberg-1\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Schema(_)), "got {err:?}");
        let err = RunConfig::from_toml("[grup]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Schema(_)));
    }

    #[test]
    fn range_violations_are_schema_errors() {
        for doc in [
            "[quadrature]\ntheta = 0.9\n",
            "[cone]\naperture = 1.5\n",
            "[construction]\neps0 = -1.0\n",
            "[group]\npreset = \"heisenberg-1\"\nlayers = [2, 1]\n",
        ] {
            let err = RunConfig::from_toml(doc).unwrap_err();
            assert!(matches!(err, ConfigError::Schema(_)), "{doc} should be a schema error");
        }
    }

    #[test]
    fn inline_algebra_builds_heisenberg() {
        let doc = r#"
            [group]
            layers = [2, 1]
            brackets = [[1, 2, 3, 1, 1], [2, 1, 3, -1, 1]]
            name = "h1-inline"
        "#;
        let cfg = RunConfig::from_toml(doc).unwrap();
        let alg = cfg.build_algebra().unwrap();
        assert_eq!(alg.homogeneous_dimension(), 4);
        assert_eq!(alg.step(), 2);
    }

    #[test]
    fn bad_inline_brackets_are_algebra_errors() {
        // Jacobi/antisymmetry violation: [e1,e2] = e3 without the mirror
        // entry. Parses fine (schema is happy), fails at build time.
        let doc = "[group]\nlayers = [2, 1]\nbrackets = [[1, 2, 3, 1, 1]]\n";
        let cfg = RunConfig::from_toml(doc).unwrap();
        assert!(cfg.build_algebra().is_err());
        // 0 index: 1-based contract.
        let doc = "[group]\nlayers = [2, 1]\nbrackets = [[0, 2, 3, 1, 1]]\n";
        let cfg = RunConfig::from_toml(doc).unwrap();
        assert!(cfg.build_algebra().unwrap_err().contains("1-based"));
    }

    #[test]
    fn unknown_preset_is_an_algebra_error_not_schema() {
        let cfg = RunConfig::from_toml("[group]\npreset = \"octonionic\"\n").unwrap();
        assert!(cfg.build_algebra().unwrap_err().contains("octonionic"));
    }

    #[test]
    fn hashing_is_stable_and_sensitive() {
        let a = hash_text("[group]\npreset = \"heisenberg-1\"\n");
        let b = hash_text("[group]\npreset = \"heisenberg-1\"\n");
        let c = hash_text("[group]\npreset = \"heisenberg-2\"\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}
