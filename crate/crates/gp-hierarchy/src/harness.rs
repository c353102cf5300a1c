//! Run configuration, verification-suite orchestration, and
//! machine-readable reporting for the certification CLI.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boardgame::{
    enumerate_collapse_maps, move_applicable, partition_classes, BoardgameError, CollapseMap,
};
use crate::kernels::theta_expand;
use crate::numerics::{
    trace_norm, verify_admissibility, verify_factorization, verify_full_sum,
    verify_mild_solution, verify_move_invariance, verify_resummation, chebyshev_support,
    DiscreteMeasure, Grid, GridField, LowRankKernel, MildOptions, NumericsError,
    QuadratureSpec, ResidualReport, DEFAULT_QUADRATURE_ORDER, TOL_EXACT, TOL_QUADRATURE,
};
use crate::trees::{build_forest, extract_labeling};

/// Environment variable consulted for the default configuration path.
pub const CONFIG_ENV_VAR: &str = "GPH_CONFIG";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Boardgame(#[from] BoardgameError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One verification check selectable from the CLI or a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Single acceptable moves leave the integral invariant.
    Moves,
    /// Per-class and full-sum echelon resummation.
    Resum,
    /// Tree factorization equals the direct integrand at fixed times.
    Factorize,
    /// Mixtures of cubic flows solve the hierarchy in mild form.
    Mild,
    /// Mixture admissibility and moment-root convergence.
    Definetti,
    /// Gram-route trace norm against a dense singular-value oracle.
    Trace,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::Moves,
        CheckKind::Resum,
        CheckKind::Factorize,
        CheckKind::Mild,
        CheckKind::Definetti,
        CheckKind::Trace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Moves => "moves",
            CheckKind::Resum => "resum",
            CheckKind::Factorize => "factorize",
            CheckKind::Mild => "mild",
            CheckKind::Definetti => "definetti",
            CheckKind::Trace => "trace",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown check name: {s}")))
    }
}

fn default_checks() -> Vec<CheckKind> {
    CheckKind::ALL.to_vec()
}

fn default_k() -> usize {
    1
}

fn default_r() -> usize {
    3
}

fn default_n() -> usize {
    64
}

fn default_d() -> usize {
    1
}

fn default_box_length() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_t() -> f64 {
    0.5
}

fn default_mild_t() -> f64 {
    0.1
}

fn default_dt() -> f64 {
    1e-3
}

fn default_lambda() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    7
}

fn default_quadrature_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

fn default_big_m() -> f64 {
    1.0
}

fn default_big_c() -> f64 {
    1.0
}

fn default_tol_exact() -> f64 {
    TOL_EXACT
}

fn default_tol_quadrature() -> f64 {
    TOL_QUADRATURE
}

/// Full parameter set for a verification run. Loaded from a TOML file,
/// every field individually overridable from the command line (flags win).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_box_length")]
    pub box_length: f64,
    /// Time horizon for the quadrature-based identity checks.
    #[serde(default = "default_t")]
    pub t: f64,
    /// Shorter horizon for the mild-solution check (keeps the reference
    /// cubic flows cheap).
    #[serde(default = "default_mild_t")]
    pub mild_t: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    /// Sobolev mass constant `M` for the bound ledger.
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    /// Trilinear space-time constant `C` for the bound ledger.
    #[serde(default = "default_big_c")]
    pub big_c: f64,
    #[serde(default = "default_tol_exact")]
    pub tol_exact: f64,
    #[serde(default = "default_tol_quadrature")]
    pub tol_quadrature: f64,
    /// Optional report output path; stdout when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            checks: default_checks(),
            k: default_k(),
            r: default_r(),
            n: default_n(),
            d: default_d(),
            box_length: default_box_length(),
            t: default_t(),
            mild_t: default_mild_t(),
            dt: default_dt(),
            lambda: default_lambda(),
            seed: default_seed(),
            quadrature_order: default_quadrature_order(),
            big_m: default_big_m(),
            big_c: default_big_c(),
            tol_exact: default_tol_exact(),
            tol_quadrature: default_tol_quadrature(),
            output: None,
        }
    }
}

impl RunConfig {
    /// Loads the configuration: an explicit path wins, then the
    /// `GPH_CONFIG` environment variable, then built-in defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, HarnessError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from),
        };
        let cfg = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(&p)?)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k < 1 || self.r < 1 {
            return Err(HarnessError::Config("k and r must be at least 1".into()));
        }
        if self.tol_exact <= 0.0 || self.tol_quadrature <= 0.0 {
            return Err(HarnessError::Config("tolerances must be positive".into()));
        }
        if self.t < 0.0 || self.mild_t < 0.0 || self.dt <= 0.0 {
            return Err(HarnessError::Config("time parameters must be nonnegative".into()));
        }
        if self.quadrature_order < 1 {
            return Err(HarnessError::Config("quadrature order must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter echo attached to every check record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckParams {
    pub k: usize,
    pub r: usize,
    pub n: usize,
    pub d: usize,
    pub t: f64,
    pub seed: u64,
}

impl CheckParams {
    fn from_config(cfg: &RunConfig, t: f64) -> Self {
        CheckParams { k: cfg.k, r: cfg.r, n: cfg.n, d: cfg.d, t, seed: cfg.seed }
    }
}

/// One executed check: identifier, parameters, residual records, pass
/// flag, and wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub params: CheckParams,
    pub residuals: Vec<ResidualReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
    pub runtime_ms: u64,
}

/// A full suite report; passes iff every record passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<CheckRecord>,
    pub pass: bool,
}

impl Report {
    pub fn from_records(records: Vec<CheckRecord>) -> Self {
        let pass = records.iter().all(|r| r.pass);
        Report { records, pass }
    }
}

fn seeded_field(cfg: &RunConfig, offset: u64) -> Result<GridField, HarnessError> {
    let grid = Grid::new(cfg.d, cfg.n, cfg.box_length)?;
    Ok(GridField::random_band_limited(&grid, cfg.seed.wrapping_add(offset)))
}

fn two_atom_measure(cfg: &RunConfig) -> Result<DiscreteMeasure, HarnessError> {
    let grid = Grid::new(cfg.d, cfg.n, cfg.box_length)?;
    // atoms on the unit sphere: admissibility is exact there, since the
    // partial trace multiplies each weight by the atom's squared norm
    let a = GridField::random_band_limited(&grid, cfg.seed);
    let b = GridField::random_band_limited(&grid, cfg.seed.wrapping_add(1));
    Ok(DiscreteMeasure::new(vec![(0.6, a), (0.4, b)])?)
}

fn check_moves(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let phi = seeded_field(cfg, 0)?;
    let quad = QuadratureSpec::with_order(cfg.quadrature_order);
    let mut out = Vec::new();
    for map in enumerate_collapse_maps(cfg.k, cfg.r)? {
        for l in 1..cfg.r {
            if move_applicable(&map, l) {
                out.push(verify_move_invariance(
                    &map,
                    l,
                    &phi,
                    cfg.t,
                    quad,
                    cfg.tol_quadrature,
                )?);
            }
        }
    }
    Ok(out)
}

fn check_resum(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let phi = seeded_field(cfg, 0)?;
    let quad = QuadratureSpec::with_order(cfg.quadrature_order);
    let classes = partition_classes(cfg.k, cfg.r)?;
    let mut out = Vec::new();
    for class in &classes {
        out.push(verify_resummation(class, &phi, cfg.t, quad, cfg.tol_quadrature)?);
    }
    out.push(verify_full_sum(&classes, &phi, cfg.t, quad, cfg.tol_quadrature)?);
    Ok(out)
}

fn check_factorize(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let phi = seeded_field(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let mut inner: Vec<f64> = (0..cfg.r).map(|_| rng.gen_range(0.0..cfg.t)).collect();
    inner.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut times = vec![cfg.t];
    times.extend(inner);
    let mut out = Vec::new();
    for map in enumerate_collapse_maps(cfg.k, cfg.r)? {
        out.push(verify_factorization(&map, &phi, &times, cfg.tol_exact)?);
    }
    Ok(out)
}

fn check_mild(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let mu = two_atom_measure(cfg)?;
    let opts = MildOptions {
        dt: cfg.dt,
        quadrature_order: cfg.quadrature_order,
        tolerance: cfg.tol_quadrature,
    };
    Ok(vec![verify_mild_solution(&mu, cfg.k, cfg.lambda, cfg.mild_t, opts)?])
}

fn check_definetti(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let mu = two_atom_measure(cfg)?;
    let mut out = vec![
        verify_admissibility(&mu, cfg.k, 1e-12)?,
        verify_admissibility(&mu, cfg.k + 1, 1e-12)?,
    ];
    let (moments, bound) = chebyshev_support(&mu, 20);
    let mut violation = 0.0f64;
    let mut prev = 0.0f64;
    for (q, m) in moments.iter().enumerate() {
        let root = m.powf(1.0 / (2.0 * (q as f64 + 1.0)));
        violation = violation.max(prev - root).max(root - bound);
        prev = root;
    }
    out.push(ResidualReport::new(
        "chebyshev-root-monotonicity K=20",
        violation.max(0.0),
        bound,
        1e-12,
    ));
    Ok(out)
}

/// Dense singular-value route for the trace norm: sample the kernel on the
/// grid and sum the singular values of the cell-volume-weighted matrix.
fn dense_trace_norm(kern: &LowRankKernel, grid: &Grid) -> f64 {
    let dense = match kern.dense() {
        Some(d) => d,
        None => return 0.0,
    };
    let p = grid.points();
    let mat = nalgebra::DMatrix::from_fn(p, p, |i, j| dense[(i, j)]);
    grid.cell_volume() * mat.singular_values().iter().sum::<f64>()
}

fn check_trace(cfg: &RunConfig) -> Result<Vec<ResidualReport>, HarnessError> {
    let grid = Grid::new(cfg.d, cfg.n, cfg.box_length)?;
    if grid.points() > 4096 {
        return Err(HarnessError::Config(
            "trace check needs n^d <= 4096 for the dense oracle".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(31));
    let mut out = Vec::new();
    for i in 0..10u64 {
        let rank = 1 + (i as usize % 4);
        let terms = (0..rank)
            .map(|q| {
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let left =
                    GridField::random_band_limited(&grid, cfg.seed ^ (1000 + 2 * (10 * i + q as u64)));
                let right =
                    GridField::random_band_limited(&grid, cfg.seed ^ (1001 + 2 * (10 * i + q as u64)));
                (c, left, right)
            })
            .collect();
        let kern = LowRankKernel::from_terms(terms);
        let gram = trace_norm(&kern);
        let dense = dense_trace_norm(&kern, &grid);
        out.push(ResidualReport::new(
            format!("trace-norm kernel {i} rank {rank}"),
            (gram - dense).abs(),
            dense,
            cfg.tol_exact,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Golden worked examples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenForest {
    pub k: usize,
    pub rho: Vec<usize>,
    pub distinguished_tree: usize,
    pub bare_trees: Vec<usize>,
    /// Internal labelings per tree, as `(tree, sigma)` pairs.
    pub sigma: Vec<(usize, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenKappa {
    pub k: usize,
    pub rho: Vec<usize>,
    pub kappa_minus_1: usize,
    pub kappa_plus_1: usize,
    pub kappa_minus_2: usize,
    pub kappa_plus_iterate_4: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenTheta {
    pub k: usize,
    pub rho: Vec<usize>,
    /// Term counts of the per-vertex kernels, indexed by label `alpha`.
    pub counts_by_label: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenSet {
    pub forest: GoldenForest,
    pub kappa_chain: GoldenKappa,
    pub theta_counts: GoldenTheta,
}

/// The in-repo golden file of worked examples, embedded at compile time so
/// every run diffs against the committed values.
pub fn golden_set() -> Result<GoldenSet, HarnessError> {
    Ok(serde_json::from_str(include_str!("../golden/worked_examples.json"))?)
}

/// Recomputes every golden value from the library and reports the number
/// of mismatches per example (zero means the diff is clean).
pub fn verify_golden() -> Result<Vec<ResidualReport>, HarnessError> {
    let golden = golden_set()?;
    let mut out = Vec::new();

    let g = &golden.forest;
    let forest = build_forest(&CollapseMap::new(g.k, g.rho.clone())?);
    let mut mismatches = 0usize;
    if forest.distinguished_tree() != g.distinguished_tree {
        mismatches += 1;
    }
    let bare: Vec<usize> = (1..=g.k).filter(|&j| forest.is_bare_edge(j)).collect();
    if bare != g.bare_trees {
        mismatches += 1;
    }
    for (tree, sigma) in &g.sigma {
        match extract_labeling(&forest, *tree) {
            Ok(l) if &l.sigma == sigma => {}
            _ => mismatches += 1,
        }
    }
    out.push(ResidualReport::new("golden worked forest", mismatches as f64, 1.0, 0.5));

    let g = &golden.kappa_chain;
    let forest = build_forest(&CollapseMap::new(g.k, g.rho.clone())?);
    let l = extract_labeling(&forest, 1)
        .map_err(|e| HarnessError::Config(format!("golden kappa tree: {e}")))?;
    let mismatches = [
        l.kappa_minus[0] == g.kappa_minus_1,
        l.kappa_plus[0] == g.kappa_plus_1,
        l.kappa_minus[1] == g.kappa_minus_2,
        l.kappa_plus_iterate(4) == g.kappa_plus_iterate_4,
    ]
    .iter()
    .filter(|ok| !**ok)
    .count();
    out.push(ResidualReport::new("golden kappa relations", mismatches as f64, 1.0, 0.5));

    let g = &golden.theta_counts;
    let forest = build_forest(&CollapseMap::new(g.k, g.rho.clone())?);
    let l = extract_labeling(&forest, forest.distinguished_tree())
        .map_err(|e| HarnessError::Config(format!("golden theta tree: {e}")))?;
    let expansion = theta_expand(&l);
    let counts: Vec<usize> = (1..=expansion.m()).map(|a| expansion.theta(a).len()).collect();
    let mismatches = usize::from(counts != g.counts_by_label);
    out.push(ResidualReport::new("golden theta term counts", mismatches as f64, 1.0, 0.5));

    Ok(out)
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Runs one check, capturing errors into the record instead of aborting.
pub fn run_check(kind: CheckKind, cfg: &RunConfig) -> CheckRecord {
    let start = Instant::now();
    let t = if kind == CheckKind::Mild { cfg.mild_t } else { cfg.t };
    let result = match kind {
        CheckKind::Moves => check_moves(cfg),
        CheckKind::Resum => check_resum(cfg),
        CheckKind::Factorize => check_factorize(cfg),
        CheckKind::Mild => check_mild(cfg),
        CheckKind::Definetti => check_definetti(cfg),
        CheckKind::Trace => check_trace(cfg),
    };
    finish_record(kind.name(), CheckParams::from_config(cfg, t), result, start)
}

fn finish_record(
    check: &str,
    params: CheckParams,
    result: Result<Vec<ResidualReport>, HarnessError>,
    start: Instant,
) -> CheckRecord {
    let (residuals, error) = match result {
        Ok(r) => (r, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let pass = error.is_none() && residuals.iter().all(|r| r.pass);
    CheckRecord {
        check: check.to_string(),
        params,
        residuals,
        error,
        pass,
        runtime_ms: start.elapsed().as_millis() as u64,
    }
}

/// Runs the configured checks. A nonempty selection always starts with the
/// golden-example diff; an empty selection yields an empty passing report.
pub fn run_suite(cfg: &RunConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    if cfg.checks.is_empty() {
        return Ok(Report::from_records(Vec::new()));
    }
    let mut records = Vec::new();
    let start = Instant::now();
    records.push(finish_record(
        "golden",
        CheckParams::from_config(cfg, 0.0),
        verify_golden(),
        start,
    ));
    for &kind in &cfg.checks {
        records.push(run_check(kind, cfg));
    }
    Ok(Report::from_records(records))
}

/// Serialization formats for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmitFormat {
    Json,
    Csv,
    Text,
}

/// Serializes a report with stable field ordering. JSON output parses back
/// into an identical `Report`; CSV flattens one row per residual.
pub fn emit(report: &Report, format: EmitFormat) -> Result<String, HarnessError> {
    match format {
        EmitFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        EmitFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "check", "k", "r", "n", "d", "t", "seed", "label", "absolute", "scale",
                "relative", "tolerance", "pass", "runtime_ms",
            ])?;
            for rec in &report.records {
                let base = |label: &str, rest: [String; 5]| {
                    let mut row = vec![
                        rec.check.clone(),
                        rec.params.k.to_string(),
                        rec.params.r.to_string(),
                        rec.params.n.to_string(),
                        rec.params.d.to_string(),
                        rec.params.t.to_string(),
                        rec.params.seed.to_string(),
                        label.to_string(),
                    ];
                    row.extend(rest);
                    row.push(rec.runtime_ms.to_string());
                    row
                };
                if rec.residuals.is_empty() {
                    let label = rec.error.as_deref().unwrap_or("");
                    w.write_record(base(
                        label,
                        [
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            rec.pass.to_string(),
                        ],
                    ))?;
                }
                for res in &rec.residuals {
                    w.write_record(base(
                        &res.label,
                        [
                            res.absolute.to_string(),
                            res.scale.to_string(),
                            res.relative.to_string(),
                            res.tolerance.to_string(),
                            res.pass.to_string(),
                        ],
                    ))?;
                }
            }
            let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf8"))
        }
        EmitFormat::Text => {
            let mut s = String::new();
            for rec in &report.records {
                let verdict = if rec.pass { "PASS" } else { "FAIL" };
                s.push_str(&format!("{verdict} {} ({} ms)\n", rec.check, rec.runtime_ms));
                if let Some(err) = &rec.error {
                    s.push_str(&format!("  error: {err}\n"));
                }
                for res in &rec.residuals {
                    let verdict = if res.pass { "PASS" } else { "FAIL" };
                    s.push_str(&format!(
                        "  {verdict} {} relative={:.3e} tol={:.1e}\n",
                        res.label, res.relative, res.tolerance
                    ));
                }
            }
            let verdict = if report.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("SUITE {verdict} ({} checks)\n", report.records.len()));
            Ok(s)
        }
    }
}
