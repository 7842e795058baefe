//! Artifact persistence: JSON reports with provenance, the binary
//! point-cloud format, CSV tables and gnuplot scripts.
//!
//! Every artifact embeds the SHA-256 of the config that produced it, the
//! seed, and the library version, so a certificate can be traced back to
//! one reproducible run. Nothing here writes wall-clock times or other
//! nondeterministic fields: two runs with equal config and seed must emit
//! byte-identical files under the deterministic-reduction flag.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::StratifiedAlgebra;
use crate::config::MetricChoice;
use crate::group::{Ball, CarnotGroup, Metric, Point};
use crate::ifs::{DilationCone, IfsSystem, VerticalCoset};

/// Run identity stamped into every JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>, seed: u64) -> Self {
        Self {
            config_sha256: config_sha256.into(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// A report payload wrapped with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub payload: T,
}

/// Serializes an artifact as pretty-printed JSON with a trailing newline.
/// `serde_json` prints floats in shortest round-trip form, so equal inputs
/// give byte-identical files.
pub fn write_json<T: Serialize>(path: &Path, artifact: &Artifact<T>) -> io::Result<()> {
    let mut buf = serde_json::to_vec_pretty(artifact).map_err(io::Error::other)?;
    buf.push(b'\n');
    std::fs::write(path, buf)
}

/// All data needed to rebuild an [`IfsSystem`] bit-for-bit: the algebra's
/// structure constants, metric choice, coset, cone, centers, ball, and the
/// measured constants. Floats survive the JSON round trip exactly (shortest
/// round-trip printing), so a reloaded system reproduces every map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub algebra_name: String,
    pub layers: Vec<usize>,
    /// Bracket entries `(i, j, k, num, den)`, 0-based, both orientations.
    pub brackets: Vec<(usize, usize, usize, i64, i64)>,
    pub metric: MetricChoice,
    pub coset_direction: Vec<f64>,
    pub coset_offset: f64,
    pub cone_axis: Vec<f64>,
    pub cone_aperture: f64,
    pub cone_component: usize,
    pub centers: Vec<Vec<f64>>,
    pub ball_center: Vec<f64>,
    pub ball_radius: f64,
    pub eps: f64,
    pub r: f64,
    pub r0: f64,
    pub c0: f64,
    pub c1: f64,
    pub quasi_constant: f64,
}

impl SystemSpec {
    pub fn from_system(sys: &IfsSystem, metric: MetricChoice) -> Self {
        let group = sys.group();
        let alg = group.algebra();
        let dim = group.dim();
        let mut brackets = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                for &(k, q) in alg.bracket_basis(i, j) {
                    brackets.push((i, j, k, *q.numer(), *q.denom()));
                }
            }
        }
        Self {
            algebra_name: alg.name().to_string(),
            layers: alg.layer_dims().to_vec(),
            brackets,
            metric,
            coset_direction: sys.coset().direction.clone(),
            coset_offset: sys.coset().offset,
            cone_axis: sys.cone().axis.clone(),
            cone_aperture: sys.cone().aperture,
            cone_component: sys.cone().component,
            centers: sys.centers().iter().map(|p| p.as_slice(dim).to_vec()).collect(),
            ball_center: sys.ball.center.as_slice(dim).to_vec(),
            ball_radius: sys.ball.radius,
            eps: sys.eps,
            r: sys.r,
            r0: sys.r0,
            c0: sys.c0,
            c1: sys.c1,
            quasi_constant: sys.quasi_constant,
        }
    }

    /// Rebuilds the group and system. Errors are strings so the caller can
    /// map them onto its own failure taxonomy (a spec that fails to build
    /// is a corrupt or hand-edited artifact, not a schema problem).
    pub fn build(&self) -> Result<IfsSystem, String> {
        let entries: Vec<crate::algebra::BracketEntry> = self
            .brackets
            .iter()
            .map(|&(i, j, k, num, den)| crate::algebra::BracketEntry::new(i, j, k, num, den))
            .collect();
        let alg = StratifiedAlgebra::new(self.algebra_name.clone(), &self.layers, &entries)
            .map_err(|e| e.to_string())?;
        let group: Arc<CarnotGroup> = CarnotGroup::new(alg).map_err(|e| e.to_string())?;
        let metric = Metric::new(group.clone(), self.metric.into()).map_err(|e| e.to_string())?;
        let coset = VerticalCoset::new(&group, &self.coset_direction, self.coset_offset)
            .map_err(|e| e.to_string())?;
        let cone = DilationCone {
            axis: self.cone_axis.clone(),
            aperture: self.cone_aperture,
            component: self.cone_component,
        };
        let centers: Vec<Point> = self.centers.iter().map(|c| Point::from_slice(c)).collect();
        let ball = Ball { center: Point::from_slice(&self.ball_center), radius: self.ball_radius };
        Ok(IfsSystem::new(
            metric,
            coset,
            cone,
            centers,
            ball,
            self.eps,
            self.r,
            self.r0,
            self.c0,
            self.c1,
            self.quasi_constant,
        ))
    }
}

/// Magic of the binary point-cloud format.
pub const CLOUD_MAGIC: &[u8; 4] = b"CNLB";
/// Current version of the binary point-cloud format.
pub const CLOUD_VERSION: u32 = 1;

/// Writes a point cloud in the `CNLB` format: the magic, a `u32` version,
/// a `u32` coordinate count per row, and a `u64` row count (all
/// little-endian), followed by `count` rows of `n` little-endian `f64`
/// coordinates.
pub fn write_point_cloud(
    path: &Path,
    dim: usize,
    points: impl ExactSizeIterator<Item = Point>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&CLOUD_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        for &c in p.as_slice(dim) {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads a `CNLB` point cloud back as `(dim, rows)`.
pub fn read_point_cloud(path: &Path) -> io::Result<(usize, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CLOUD_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a CNLB point cloud"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CLOUD_VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported cloud version {version}"),
        ));
    }
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut rows = Vec::with_capacity(count);
    let mut coord = [0u8; 8];
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut coord)?;
            row.push(f64::from_le_bytes(coord));
        }
        rows.push(row);
    }
    Ok((dim, rows))
}

/// Writes a CSV table. Floats print in shortest round-trip form; a value
/// parsed back from the table equals the one written.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

/// A gnuplot script for a log-log scatter with a reference power law,
/// suitable for the regularity scan (`mass` against `radius` with the
/// target slope drawn through the data).
pub fn gnuplot_loglog(csv: &str, xlabel: &str, ylabel: &str, slope: f64, amplitude: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set logscale xy\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         set key left top\n\
         fit_ref(x) = {amplitude:e} * x**{slope}\n\
         plot '{csv}' using 1:2 skip 1 with points pt 7 title 'samples', \\\n\
              fit_ref(x) with lines lw 2 title 'target slope {slope}'\n"
    )
}

/// A gnuplot script for a value-with-error-bars column against an integer
/// index, suitable for the certification depth ladder.
pub fn gnuplot_errorbars(csv: &str, xlabel: &str, ylabel: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         set key left top\n\
         plot '{csv}' using 1:2:3 skip 1 with yerrorbars pt 7 title 'value ± bound', \\\n\
              '{csv}' using 1:2 skip 1 with lines lw 1 notitle\n"
    )
}
