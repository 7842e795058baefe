//! Command-line orchestration: one config document drives one run.
//!
//! The exit codes are part of the scripting contract:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 2    | config schema failure (malformed TOML, unknown keys, bad ranges) |
//! | 3    | algebra failure (grading/Jacobi, unknown preset, `Q ≥ 3 required`) |
//! | 4    | construction failure (ε ladder exhausted, depth overflow) |
//! | 5    | kernel-integral sign uncertain at the maximal depth |
//! | 6    | pipeline guard (missing or failed prerequisite artifact) |
//!
//! Commands that consume a persisted system (`certify`, `scan-ad`, `semmes`,
//! `compop`, `export`) read it from the output directory written by
//! `construct`; `certify` additionally refuses to run when the separation
//! certificate is missing or failed, so a kernel-integral report can never
//! be produced for a system whose geometric hypotheses are unverified.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::group::{CarnotGroup, Metric};
use crate::ifs::certify::{construct_certified, ConstructError};
use crate::ifs::IfsSystem;
use crate::measure::{ad_regularity_scan, AdScanOptions, AdScanReport, DiscreteMeasure, ScanSource, TreeKind};
use crate::potential::HTypeKernel;
use crate::report::{
    gnuplot_errorbars, gnuplot_loglog, write_csv, write_json, write_point_cloud, Artifact,
    Provenance, SystemSpec,
};
use crate::singint::{
    compop_check, kernel_bounds, semmes_gap, unb_condition, CompopOptions, QuadratureFlags,
    SemmesOptions, TruncationGrid, UnbOptions, UnbReport,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_ALGEBRA: u8 = 3;
pub const EXIT_CONSTRUCTION: u8 = 4;
pub const EXIT_SIGN_UNCERTAIN: u8 = 5;
pub const EXIT_GUARD: u8 = 6;

/// Point budget for materialized cylinder clouds written to disk.
const CLOUD_BUDGET: u64 = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "carnot",
    version,
    about = "Certified self-similar constructions and sub-Laplacian singular-integral reports on Carnot groups"
)]
pub struct Cli {
    /// Run configuration (TOML); built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `construction.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the depth the command uses (construction, ladder top, or
    /// measure depth, depending on the command).
    #[arg(long, global = true)]
    pub depth: Option<u32>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides `quadrature.deterministic`. Certification always forces
    /// the bit-stable reduction regardless of this flag.
    #[arg(long, global = true, value_enum)]
    pub deterministic: Option<OnOff>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the config, validate the algebra, and print Q, m, s.
    Validate,
    /// Run the certified construction; persist system, certificates, cloud.
    Construct,
    /// Kernel-integral depth ladder with scan and gap reports attached.
    Certify,
    /// Ahlfors–David regularity scan of the self-similar measure.
    ScanAd,
    /// Maximal-transform gap over random probes near the support.
    Semmes,
    /// Composition-operator annulus constants for nested cylinders.
    Compop,
    /// Export the depth-n cylinder cloud as binary + CSV.
    Export,
}

/// Runs one parsed command line, returning the process exit code. All
/// human-readable output goes to stdout; failures print one diagnostic line
/// to stderr.
pub fn run(cli: &Cli) -> u8 {
    if let Some(n) = cli.workers {
        if n > 0 {
            // A second invocation in-process (tests) leaves the pool as-is.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let (mut cfg, hash) = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(pair) => pair,
            Err(ConfigError::Schema(msg)) => {
                eprintln!("config schema: {msg}");
                return EXIT_SCHEMA;
            }
            Err(ConfigError::Io(e)) => {
                eprintln!("cannot read config {}: {e}", path.display());
                return EXIT_SCHEMA;
            }
        },
        None => {
            let cfg = RunConfig::from_toml("").expect("the empty document is a valid config");
            (cfg, crate::config::hash_text(""))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.construction.seed = seed;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(mode) = cli.deterministic {
        cfg.quadrature.deterministic = mode == OnOff::On;
    }

    let result = match cli.command {
        Command::Validate => cmd_validate(&cfg, &hash),
        Command::Construct => cmd_construct(&cfg, &hash, cli.depth),
        Command::Certify => cmd_certify(&cfg, &hash, cli.depth),
        Command::ScanAd => cmd_scan_ad(&cfg, &hash, cli.depth),
        Command::Semmes => cmd_semmes(&cfg, &hash, cli.depth),
        Command::Compop => cmd_compop(&cfg, &hash, cli.depth),
        Command::Export => cmd_export(&cfg, &hash, cli.depth),
    };
    match result {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("{msg}");
            code
        }
    }
}

type CmdResult = Result<u8, (u8, String)>;

fn build_group(cfg: &RunConfig) -> Result<Arc<CarnotGroup>, (u8, String)> {
    let alg = cfg.build_algebra().map_err(|e| (EXIT_ALGEBRA, format!("algebra: {e}")))?;
    let group = CarnotGroup::new(alg).map_err(|e| (EXIT_ALGEBRA, format!("algebra: {e}")))?;
    let q = group.homogeneous_dimension();
    if q < 3 {
        return Err((
            EXIT_ALGEBRA,
            format!("group {} has homogeneous dimension Q = {q}: Q ≥ 3 required", group.name()),
        ));
    }
    Ok(group)
}

fn build_metric(cfg: &RunConfig, group: &Arc<CarnotGroup>) -> Result<Metric, (u8, String)> {
    Metric::new(group.clone(), cfg.group.metric.into())
        .map_err(|e| (EXIT_ALGEBRA, format!("metric backend {}: {e}", cfg.group.metric)))
}

fn build_kernel(group: &Arc<CarnotGroup>) -> Result<HTypeKernel, (u8, String)> {
    HTypeKernel::new(group.clone()).map_err(|e| (EXIT_ALGEBRA, format!("kernel: {e}")))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), (u8, String)> {
    std::fs::create_dir_all(&cfg.output.dir)
        .map_err(|e| (EXIT_GUARD, format!("cannot create {}: {e}", cfg.output.dir.display())))
}

fn persist<T: Serialize>(
    cfg: &RunConfig,
    hash: &str,
    name: &str,
    payload: T,
) -> Result<PathBuf, (u8, String)> {
    let path = cfg.output.dir.join(name);
    let artifact = Artifact { provenance: Provenance::new(hash, cfg.construction.seed), payload };
    write_json(&path, &artifact).map_err(|e| (EXIT_GUARD, format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Loads the persisted system of a previous `construct` run — the guard all
/// downstream commands share.
fn load_system(dir: &Path) -> Result<(SystemSpec, IfsSystem), (u8, String)> {
    let path = dir.join("system.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        (EXIT_GUARD, format!("no persisted system at {} ({e}); run `construct` first", path.display()))
    })?;
    let artifact: Artifact<SystemSpec> = serde_json::from_str(&text)
        .map_err(|e| (EXIT_GUARD, format!("corrupt system artifact {}: {e}", path.display())))?;
    let sys = artifact
        .payload
        .build()
        .map_err(|e| (EXIT_GUARD, format!("system artifact does not rebuild: {e}")))?;
    Ok((artifact.payload, sys))
}

/// Refuses to certify kernel integrals over a system whose separation
/// certificate is missing or failed.
fn require_certificate(dir: &Path) -> Result<(), (u8, String)> {
    let path = dir.join("certificate.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        (EXIT_GUARD, format!("no separation certificate at {} ({e}); run `construct` first", path.display()))
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| (EXIT_GUARD, format!("corrupt certificate {}: {e}", path.display())))?;
    if value["payload"]["certificate"]["certified"] != serde_json::Value::Bool(true) {
        return Err((
            EXIT_GUARD,
            format!("{} records a failed certification; refusing to certify kernel integrals", path.display()),
        ));
    }
    Ok(())
}

fn cmd_validate(cfg: &RunConfig, hash: &str) -> CmdResult {
    let group = build_group(cfg)?;
    build_metric(cfg, &group)?;
    let alg = group.algebra();
    println!(
        "group {}: layers {:?}, dim {}, step s = {}",
        group.name(),
        alg.layer_dims(),
        group.dim(),
        group.step()
    );
    println!(
        "homogeneous dimension Q = {}, horizontal rank m = {}, s = {}",
        group.homogeneous_dimension(),
        group.horizontal_dim(),
        group.step()
    );
    println!("metric backend: {}", cfg.group.metric);
    println!("config sha256: {hash}");
    Ok(EXIT_OK)
}

/// Everything `construct` persists besides the rebuildable system itself.
#[derive(Debug, Serialize)]
struct ConstructReport {
    q: usize,
    m: usize,
    eps: f64,
    r: f64,
    r0: f64,
    certificate: crate::ifs::certify::SeparationCertificate,
    cone: crate::ifs::ConeCertificate,
    quasi: crate::group::QuasiTriangleReport,
    c0: f64,
    c1: f64,
    attempts: Vec<crate::ifs::certify::AttemptRecord>,
}

fn cmd_construct(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let group = build_group(cfg)?;
    let metric = build_metric(cfg, &group)?;
    let kernel = build_kernel(&group)?;
    let mut opts = cfg.construct_options();
    if let Some(d) = depth {
        opts.certify.depth = d as usize;
    }
    let built = match construct_certified(&metric, &kernel, &opts) {
        Ok(built) => built,
        Err(ConstructError::Exhausted { attempts, last }) => {
            return Err((
                EXIT_CONSTRUCTION,
                format!("construction failed after {attempts} attempts; last failure: {last}"),
            ));
        }
        Err(e) => return Err((EXIT_CONSTRUCTION, format!("construction: {e}"))),
    };

    ensure_out_dir(cfg)?;
    let sys = &built.system;
    let spec = SystemSpec::from_system(sys, cfg.group.metric);
    let system_path = persist(cfg, hash, "system.json", spec)?;
    let report = ConstructReport {
        q: group.homogeneous_dimension(),
        m: sys.m_count(),
        eps: sys.eps,
        r: sys.r,
        r0: sys.r0,
        certificate: built.certificate.clone(),
        cone: built.cone_certificate.clone(),
        quasi: built.quasi,
        c0: built.c0,
        c1: built.c1,
        attempts: built.attempts.clone(),
    };
    let cert_path = persist(cfg, hash, "certificate.json", &report)?;

    let depth = opts.certify.depth;
    let cloud = sys
        .attractor(depth, CLOUD_BUDGET)
        .map_err(|e| (EXIT_CONSTRUCTION, format!("cloud at depth {depth}: {e}")))?;
    let cloud_path = cfg.output.dir.join("cloud.cnlb");
    write_point_cloud(&cloud_path, cloud.dim, (0..cloud.len()).map(|i| cloud.point(i)))
        .map_err(|e| (EXIT_GUARD, format!("cannot write {}: {e}", cloud_path.display())))?;

    println!(
        "constructed M = {} pieces at eps = {:.6}, r = {:.6}, r0 = {:.17}",
        report.m, report.eps, report.r, report.r0
    );
    println!(
        "certified: {} (min piece gap {:.3e}, cone violations {}/{})",
        built.certificate.certified,
        built.certificate.min_piece_gap,
        built.certificate.cone_violations,
        built.certificate.cone_nodes
    );
    println!("system:      {}", system_path.display());
    println!("certificate: {}", cert_path.display());
    println!("cloud:       {} ({} points)", cloud_path.display(), cloud.len());
    Ok(EXIT_OK)
}

/// The certification report: the depth ladder plus the attached regularity
/// scan and maximal-gap report. Attachment failures are recorded as text —
/// a missing attachment is a visible fact about the run, not a crash.
#[derive(Debug, Serialize)]
struct CertifyReport {
    component: usize,
    theta: f64,
    node_budget: u64,
    ladder: Vec<UnbReport>,
    /// `|value_{c+1} − value_c|` down the ladder.
    deltas: Vec<f64>,
    certified_sign: Option<i8>,
    scan: Option<AdScanReport>,
    scan_error: Option<String>,
    semmes: Option<crate::singint::SemmesReport>,
    semmes_error: Option<String>,
}

fn cmd_certify(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let dir = &cfg.output.dir;
    require_certificate(dir)?;
    let (spec, sys) = load_system(dir)?;
    let kernel = build_kernel(&group_of(&sys))?;
    let seed = cfg.construction.seed;
    let bounds = kernel_bounds(&kernel, sys.metric(), cfg.quadrature.bound_samples, seed);
    // Certification always uses the bit-stable reduction.
    let flags = QuadratureFlags { deterministic: true };

    let top = depth.unwrap_or(cfg.depths.certify).max(1);
    let mut ladder = Vec::with_capacity(top as usize);
    for c in 1..=top {
        let report = unb_condition(
            &kernel,
            &sys,
            &bounds,
            &UnbOptions {
                component: spec.cone_component,
                zeros: 1,
                depth: c,
                theta: cfg.quadrature.theta,
                floor: 0.0,
                node_budget: cfg.quadrature.node_budget,
            },
        )
        .map_err(|e| (EXIT_GUARD, format!("kernel-integral ladder at depth {c}: {e}")))?;
        println!(
            "depth {c:2}: value {:+.9e}  error {:.3e}  visited {}  sign {}",
            report.value,
            report.error,
            report.visited,
            match report.certified_sign {
                Some(1) => "positive",
                Some(-1) => "negative",
                _ => "uncertain",
            }
        );
        ladder.push(report);
    }
    let deltas: Vec<f64> =
        ladder.windows(2).map(|pair| (pair[1].value - pair[0].value).abs()).collect();
    let certified_sign = ladder.last().and_then(|r| r.certified_sign);

    // Attachments: AD-regularity scan over the lazy tree, maximal-transform
    // gap over the coset subsystem measure.
    let scan = ad_regularity_scan(
        &sys,
        ScanSource::Tree { kind: TreeKind::Full, depth: cfg.depths.measure as u32, floor: 0.0 },
        &AdScanOptions {
            n_centers: cfg.quadrature.scan_centers,
            n_radii: cfg.quadrature.scan_radii,
            seed,
            ..AdScanOptions::default()
        },
    );
    let (scan, scan_error) = split(scan);
    let semmes = DiscreteMeasure::from_subsystem(&sys, cfg.depths.measure, cfg.quadrature.node_budget)
        .map_err(|e| e.to_string())
        .and_then(|mu| {
            let grid = TruncationGrid::for_measure(&mu, cfg.quadrature.grid_levels)
                .map_err(|e| e.to_string())?;
            semmes_gap(
                &kernel,
                &sys,
                &mu,
                &bounds,
                &grid,
                &SemmesOptions { n_samples: cfg.quadrature.semmes_samples, seed, flags },
            )
            .map_err(|e| e.to_string())
        });
    let (semmes, semmes_error) = split(semmes);

    ensure_out_dir(cfg)?;
    let ladder_rows: Vec<Vec<f64>> = ladder
        .iter()
        .map(|r| vec![r.depth as f64, r.value, r.error, r.visited as f64])
        .collect();
    let csv_path = dir.join("ladder.csv");
    write_csv(&csv_path, &["depth", "value", "error", "visited"], &ladder_rows)
        .map_err(|e| (EXIT_GUARD, format!("cannot write {}: {e}", csv_path.display())))?;
    std::fs::write(dir.join("ladder.gp"), gnuplot_errorbars("ladder.csv", "depth", "integral"))
        .map_err(|e| (EXIT_GUARD, format!("cannot write ladder.gp: {e}")))?;

    let report = CertifyReport {
        component: spec.cone_component,
        theta: cfg.quadrature.theta,
        node_budget: cfg.quadrature.node_budget,
        ladder,
        deltas,
        certified_sign,
        scan,
        scan_error,
        semmes,
        semmes_error,
    };
    let path = persist(cfg, hash, "certify.json", &report)?;
    println!("report: {}", path.display());

    match report.certified_sign {
        Some(sign) => {
            println!(
                "kernel integral sign certified {} at depth {top}",
                if sign > 0 { "positive" } else { "negative" }
            );
            Ok(EXIT_OK)
        }
        None => Err((
            EXIT_SIGN_UNCERTAIN,
            format!("sign uncertain at depth {top}: error bar still straddles zero"),
        )),
    }
}

fn cmd_scan_ad(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let (_, sys) = load_system(&cfg.output.dir)?;
    let depth = depth.unwrap_or(cfg.depths.measure as u32);
    let report = ad_regularity_scan(
        &sys,
        ScanSource::Tree { kind: TreeKind::Full, depth, floor: 0.0 },
        &AdScanOptions {
            n_centers: cfg.quadrature.scan_centers,
            n_radii: cfg.quadrature.scan_radii,
            seed: cfg.construction.seed,
            ..AdScanOptions::default()
        },
    )
    .map_err(|e| (EXIT_GUARD, format!("regularity scan: {e}")))?;

    ensure_out_dir(cfg)?;
    let rows: Vec<Vec<f64>> =
        report.samples.iter().map(|s| vec![s.radius, s.mass, s.error, s.ratio]).collect();
    let dir = &cfg.output.dir;
    write_csv(&dir.join("scan_ad.csv"), &["radius", "mass", "error", "ratio"], &rows)
        .map_err(|e| (EXIT_GUARD, format!("cannot write scan_ad.csv: {e}")))?;
    let amplitude = if report.c_low > 0.0 { (report.c_low * report.c_high).sqrt() } else { 1.0 };
    std::fs::write(
        dir.join("scan_ad.gp"),
        gnuplot_loglog("scan_ad.csv", "radius", "mass", report.exponent_target, amplitude),
    )
    .map_err(|e| (EXIT_GUARD, format!("cannot write scan_ad.gp: {e}")))?;

    if report.insufficient_depth {
        println!(
            "scan window empty at depth {depth}: the measure cannot resolve any regularity scale"
        );
    } else {
        println!(
            "slope {:.4} (target {}), C_low {:.4e}, C_high {:.4e}, ratio {:.3}",
            report.slope, report.exponent_target, report.c_low, report.c_high, report.regularity_ratio
        );
    }
    let path = persist(cfg, hash, "scan_ad.json", &report)?;
    println!("report: {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_semmes(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let (_, sys) = load_system(&cfg.output.dir)?;
    let kernel = build_kernel(&group_of(&sys))?;
    let seed = cfg.construction.seed;
    let depth = depth.unwrap_or(cfg.depths.measure as u32) as usize;
    let mu = DiscreteMeasure::from_subsystem(&sys, depth, cfg.quadrature.node_budget)
        .map_err(|e| (EXIT_GUARD, format!("measure at depth {depth}: {e}")))?;
    let grid = TruncationGrid::for_measure(&mu, cfg.quadrature.grid_levels)
        .map_err(|e| (EXIT_GUARD, format!("truncation grid: {e}")))?;
    let bounds = kernel_bounds(&kernel, sys.metric(), cfg.quadrature.bound_samples, seed);
    let flags = QuadratureFlags { deterministic: cfg.quadrature.deterministic };
    let report = semmes_gap(
        &kernel,
        &sys,
        &mu,
        &bounds,
        &grid,
        &SemmesOptions { n_samples: cfg.quadrature.semmes_samples, seed, flags },
    )
    .map_err(|e| (EXIT_GUARD, format!("maximal-gap report: {e}")))?;

    ensure_out_dir(cfg)?;
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| vec![s.offset, s.t_star, s.eps_star, s.t_floor])
        .collect();
    write_csv(
        &cfg.output.dir.join("semmes.csv"),
        &["offset", "t_star", "eps_star", "t_floor"],
        &rows,
    )
    .map_err(|e| (EXIT_GUARD, format!("cannot write semmes.csv: {e}")))?;
    println!(
        "sup T* = {:.6e}, sup T^floor = {:.6e}, gap = {:.6e} over {} probes",
        report.t_star_sup, report.t_floor_sup, report.gap, report.n_samples
    );
    let path = persist(cfg, hash, "semmes.json", &report)?;
    println!("report: {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_compop(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let (_, sys) = load_system(&cfg.output.dir)?;
    let kernel = build_kernel(&group_of(&sys))?;
    let seed = cfg.construction.seed;
    let depth = depth.unwrap_or(cfg.depths.measure as u32) as usize;
    let mu = DiscreteMeasure::from_subsystem(&sys, depth, cfg.quadrature.node_budget)
        .map_err(|e| (EXIT_GUARD, format!("measure at depth {depth}: {e}")))?;
    let bounds = kernel_bounds(&kernel, sys.metric(), cfg.quadrature.bound_samples, seed);
    let flags = QuadratureFlags { deterministic: cfg.quadrature.deterministic };
    // Deepest nesting stress at the root: the whole attractor against its
    // first coset cylinder.
    let report = compop_check(
        &kernel,
        &sys,
        &mu,
        &bounds,
        &[],
        &[1],
        &CompopOptions { n_probes: cfg.quadrature.compop_probes, seed, flags },
    )
    .map_err(|e| (EXIT_GUARD, format!("composition report: {e}")))?;

    ensure_out_dir(cfg)?;
    let rows: Vec<Vec<f64>> =
        report.rows.iter().map(|r| vec![r.left, r.annulus, r.excess]).collect();
    write_csv(&cfg.output.dir.join("compop.csv"), &["left", "annulus", "excess"], &rows)
        .map_err(|e| (EXIT_GUARD, format!("cannot write compop.csv: {e}")))?;
    println!(
        "alpha = {:.6e}, A_K = {:.6e} over {} probes (eps_w {:.3e} → eps_v {:.3e})",
        report.alpha, report.a_k, report.n_probes, report.eps_w, report.eps_v
    );
    let path = persist(cfg, hash, "compop.json", &report)?;
    println!("report: {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_export(cfg: &RunConfig, hash: &str, depth: Option<u32>) -> CmdResult {
    let (_, sys) = load_system(&cfg.output.dir)?;
    let depth = depth.unwrap_or(cfg.depths.construct as u32) as usize;
    let cloud = sys
        .attractor(depth, CLOUD_BUDGET)
        .map_err(|e| (EXIT_GUARD, format!("cloud at depth {depth}: {e}")))?;

    ensure_out_dir(cfg)?;
    let dir = &cfg.output.dir;
    let bin_path = dir.join("export.cnlb");
    write_point_cloud(&bin_path, cloud.dim, (0..cloud.len()).map(|i| cloud.point(i)))
        .map_err(|e| (EXIT_GUARD, format!("cannot write {}: {e}", bin_path.display())))?;
    let rows: Vec<Vec<f64>> =
        (0..cloud.len()).map(|i| cloud.point(i).as_slice(cloud.dim).to_vec()).collect();
    let header: Vec<String> = (0..cloud.dim).map(|i| format!("x{i}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv_path = dir.join("export.csv");
    write_csv(&csv_path, &header_refs, &rows)
        .map_err(|e| (EXIT_GUARD, format!("cannot write {}: {e}", csv_path.display())))?;

    #[derive(Serialize)]
    struct ExportNote {
        depth: usize,
        points: usize,
        dim: usize,
        binary: String,
        csv: String,
    }
    let note = ExportNote {
        depth,
        points: cloud.len(),
        dim: cloud.dim,
        binary: bin_path.display().to_string(),
        csv: csv_path.display().to_string(),
    };
    let path = persist(cfg, hash, "export.json", &note)?;
    println!("exported {} depth-{depth} points to {}", note.points, bin_path.display());
    println!("report: {}", path.display());
    Ok(EXIT_OK)
}

fn group_of(sys: &IfsSystem) -> Arc<CarnotGroup> {
    sys.group().clone()
}

fn split<T>(result: Result<T, impl ToString>) -> (Option<T>, Option<String>) {
    match result {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}
