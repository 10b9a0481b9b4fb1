//! Batch scans over (E0, g1, Nat, q): run configuration, validation, task
//! execution, CSV tables, the run manifest and the on-disk state cache.

use crate::backaction::{channel_probabilities, displacement_spectrum, ChannelGrid, OrbitAmplitude};
use crate::field::{cutoff_harmonic, FieldParams, Sin2Pulse};
use crate::fock::QState;
use crate::hhgstate::{vacuum_probability, ManyAtomState, ModeLayout};
use crate::measures::{WignerGrid, WignerSpec};
use crate::orbits::{stokes_transition, Branch, OrbitSolution, DEFAULT_SEEDS, MIN_SADDLE_ORDER};
use crate::pipeline::{
    amplitudes_for, equivalent_atoms, fundamental_negativity, heralded_fundamental, heralded_wigner, point_orbits, prepare_state_with,
    three_mode_measures, two_mode_measures, wigner_summary, PipelineError, Truncation,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("resource budget exceeded: {0}")]
    ResourceExceeded(String),
    #[error("{context}: {source}")]
    Point { context: String, source: PipelineError },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> ScanError {
    ScanError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Orbits,
    DeltaMaps,
    AmplitudeMaps,
    EntanglementScan,
    HeraldWigner,
    PropagationScan,
    ChannelProbabilities,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Orbits,
        Task::DeltaMaps,
        Task::AmplitudeMaps,
        Task::EntanglementScan,
        Task::HeraldWigner,
        Task::PropagationScan,
        Task::ChannelProbabilities,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Orbits => "orbits",
            Task::DeltaMaps => "delta_maps",
            Task::AmplitudeMaps => "amplitude_maps",
            Task::EntanglementScan => "entanglement_scan",
            Task::HeraldWigner => "herald_wigner",
            Task::PropagationScan => "propagation_scan",
            Task::ChannelProbabilities => "channel_probabilities",
        }
    }

    pub fn parse(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRanges {
    #[serde(default = "default_e0", deserialize_with = "one_or_many")]
    pub E0: Vec<f64>,
    #[serde(default = "default_omega")]
    pub omegaL: f64,
    #[serde(default = "default_ip")]
    pub Ip: f64,
}

/// Accepts a bare value where a list is expected.
fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match Either::deserialize(d)? {
        Either::One(v) => vec![v],
        Either::Many(v) => v,
    })
}

fn default_e0() -> Vec<f64> {
    vec![0.065]
}
fn default_omega() -> f64 {
    0.057
}
fn default_ip() -> f64 {
    0.5
}

impl Default for FieldRanges {
    fn default() -> Self {
        FieldRanges { E0: default_e0(), omegaL: default_omega(), Ip: default_ip() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    #[serde(default = "default_fund")]
    pub fundamental: usize,
    #[serde(default = "default_harm")]
    pub harmonic: usize,
    /// Enlarge a mode that fails the support rule instead of failing.
    #[serde(default = "default_true")]
    pub adaptive: bool,
}

fn default_fund() -> usize {
    60
}
fn default_harm() -> usize {
    6
}
fn default_true() -> bool {
    true
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig { fundamental: default_fund(), harmonic: default_harm(), adaptive: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceBudget {
    /// Largest truncation any mode may grow to.
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
    /// Largest (t2, t1) grid for the channel comparison.
    #[serde(default = "default_grid_points")]
    pub max_grid_points: usize,
    /// Largest number of state-level scan points.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_dim() -> usize {
    1200
}
fn default_grid_points() -> usize {
    50_000_000
}
fn default_max_points() -> usize {
    2000
}

impl Default for ResourceBudget {
    fn default() -> Self {
        ResourceBudget { max_dim: default_max_dim(), max_grid_points: default_grid_points(), max_points: default_max_points() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "default_cycles")]
    pub cycles: f64,
    #[serde(default = "default_axis")]
    pub n_t2: usize,
    #[serde(default = "default_axis")]
    pub n_t1: usize,
    /// Harmonic orders to evaluate; the q range when absent.
    #[serde(default)]
    pub harmonics: Option<Vec<i64>>,
}

fn default_cycles() -> f64 {
    8.0
}
fn default_axis() -> usize {
    4000
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { cycles: default_cycles(), n_t2: default_axis(), n_t1: default_axis(), harmonics: None }
    }
}

fn default_wigner() -> WignerSpec {
    WignerSpec { re_range: (-3.0, 8.0), im_range: (-5.0, 4.0), resolution: (56, 46) }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub field: FieldRanges,
    #[serde(default = "default_q_range")]
    pub q_range: (i64, i64),
    #[serde(default = "default_g1", deserialize_with = "one_or_many")]
    pub g1: Vec<f64>,
    #[serde(default = "default_nat", deserialize_with = "one_or_many")]
    pub Nat: Vec<u64>,
    /// Atoms actually multiplied out; larger Nat are represented by scaling
    /// the single-atom amplitude by Nat/Nat_compute.
    #[serde(default = "default_nat_compute")]
    pub Nat_compute: u64,
    #[serde(default)]
    pub dims: DimsConfig,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seed_count: usize,
    #[serde(default)]
    pub resource_budget: ResourceBudget,
    #[serde(default = "default_wigner")]
    pub wigner: WignerSpec,
    #[serde(default)]
    pub channel: ChannelConfig,
    /// Highest q1 in the displacement spectra table.
    #[serde(default = "default_q1_max")]
    pub delta_q1_max: i64,
}

fn default_q_range() -> (i64, i64) {
    (15, 27)
}
fn default_g1() -> Vec<f64> {
    vec![5e-3]
}
fn default_nat() -> Vec<u64> {
    vec![100_000]
}
fn default_nat_compute() -> u64 {
    10_000
}
fn default_output() -> PathBuf {
    PathBuf::from("hhgq-out")
}
fn default_seeds() -> usize {
    DEFAULT_SEEDS
}
fn default_q1_max() -> i64 {
    3
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ScanError> {
        serde_json::from_str(text).map_err(|e| ScanError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Full-scale truncations (180, 20) and 10⁵ atoms multiplied out directly.
    pub fn paper_scale(mut self) -> Self {
        self.dims.fundamental = 180;
        self.dims.harmonic = 20;
        self.Nat = vec![100_000];
        self.Nat_compute = 100_000;
        self
    }

    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn truncation(&self) -> Truncation {
        Truncation {
            fundamental: self.dims.fundamental,
            harmonic: self.dims.harmonic,
            adaptive: self.dims.adaptive,
            max_dim: self.resource_budget.max_dim,
        }
    }

    fn field_params(&self, e0: f64, g1: f64, nat: u64) -> FieldParams {
        FieldParams { E0: e0, omegaL: self.field.omegaL, Ip: self.field.Ip, g1, Nat: nat }
    }

    fn state_points(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for &e0 in &self.field.E0 {
            for &g1 in &self.g1 {
                for &nat in &self.Nat {
                    for q in self.q_range.0..=self.q_range.1 {
                        out.push(Point { e0, g1, nat, q });
                    }
                }
            }
        }
        out
    }

    fn channel_harmonics(&self) -> Vec<i64> {
        self.channel.harmonics.clone().unwrap_or_else(|| (self.q_range.0..=self.q_range.1).collect())
    }

    fn needs_states(&self) -> bool {
        self.tasks.iter().any(|t| matches!(t, Task::EntanglementScan | Task::HeraldWigner | Task::PropagationScan))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Rough |δ₁| ceiling: g1 times the quiver amplitude times the cycle length.
fn delta_ceiling(fp: &FieldParams) -> f64 {
    fp.g1 * fp.E0 / (fp.omegaL * fp.omegaL) * fp.period() * 0.5
}

/// Empty exactly when [`run_scan`] would not raise a configuration error;
/// warnings flag truncations at risk of a support overflow and budgets below
/// the estimated need.
pub fn validate_config(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |m: String| out.push(Diagnostic { severity: Severity::Error, message: m });
    if config.field.E0.is_empty() {
        err("field.E0 is empty".into());
    }
    if config.g1.is_empty() {
        err("g1 is empty".into());
    }
    if config.Nat.is_empty() {
        err("Nat is empty".into());
    }
    if config.Nat.contains(&0) {
        err("Nat = 0: at least one atom is required".into());
    }
    if config.Nat_compute == 0 {
        err("Nat_compute = 0: at least one atom is required".into());
    }
    for &e0 in &config.field.E0 {
        for &g1 in &config.g1 {
            if let Err(e) = config.field_params(e0, g1, 1).validate() {
                err(format!("field parameters E0 = {e0}, g1 = {g1}: {e}"));
            }
        }
    }
    let (lo, hi) = config.q_range;
    if lo > hi {
        err(format!("q_range [{lo}, {hi}] is empty"));
    }
    if lo < MIN_SADDLE_ORDER {
        err(format!("q_range starts at {lo}, below the saddle-point regime floor q >= {MIN_SADDLE_ORDER}"));
    }
    for &e0 in &config.field.E0 {
        let fp = config.field_params(e0, 1e-3, 1);
        if fp.validate().is_ok() {
            let cut = cutoff_harmonic(&fp);
            if hi > cut + 5 {
                err(format!("q_range ends at {hi}, beyond cutoff + 5 = {} for E0 = {e0}", cut + 5));
            }
        }
    }
    if config.dims.fundamental < 2 || config.dims.harmonic < 2 {
        err("every truncation must be at least 2".into());
    }
    if config.seed_count == 0 {
        err("seed_count must be positive".into());
    }
    if config.tasks.is_empty() {
        err("no tasks selected".into());
    }
    let (nr, ni) = config.wigner.resolution;
    if config.tasks.iter().any(|t| matches!(t, Task::HeraldWigner | Task::PropagationScan))
        && (nr < 3 || ni < 3 || config.wigner.re_range.0 >= config.wigner.re_range.1 || config.wigner.im_range.0 >= config.wigner.im_range.1)
    {
        err("wigner grid needs at least 3 points per axis over non-empty ranges".into());
    }
    if config.tasks.contains(&Task::ChannelProbabilities) {
        if config.channel.cycles <= 0.0 || config.channel.n_t1 < 2 || config.channel.n_t2 < 2 {
            err("channel grid needs a positive cycle count and at least 2 points per axis".into());
        }
        if config.channel_harmonics().iter().any(|&q| q < 1) {
            err("channel harmonics must be positive".into());
        }
    }
    if config.tasks.contains(&Task::DeltaMaps) && config.delta_q1_max < 1 {
        err("delta_q1_max must be at least 1".into());
    }
    if config.dims.fundamental > config.resource_budget.max_dim || config.dims.harmonic > config.resource_budget.max_dim {
        err(format!("requested truncation exceeds resource_budget.max_dim = {}", config.resource_budget.max_dim));
    }
    let mut warn = |m: String| out.push(Diagnostic { severity: Severity::Warning, message: m });
    if config.needs_states() {
        let points = config.state_points().len();
        if points > config.resource_budget.max_points {
            warn(format!("{points} scan points exceed resource_budget.max_points = {}", config.resource_budget.max_points));
        }
        for &e0 in &config.field.E0 {
            for &g1 in &config.g1 {
                let fp = config.field_params(e0, g1, 1);
                if fp.validate().is_err() {
                    continue;
                }
                let d = delta_ceiling(&fp);
                let need = (2.0 * (d * d + 6.0 * d + 6.0)).ceil() as usize;
                if !config.dims.adaptive && config.dims.fundamental < need {
                    warn(format!(
                        "fundamental dim {} may overflow the support rule at E0 = {e0}, g1 = {g1} (|delta| up to about {d:.1}); enable dims.adaptive or raise it",
                        config.dims.fundamental
                    ));
                }
                if config.dims.adaptive && need > config.resource_budget.max_dim {
                    warn(format!("E0 = {e0}, g1 = {g1} may need a fundamental dim near {need}, above resource_budget.max_dim"));
                }
            }
        }
    }
    if config.tasks.contains(&Task::ChannelProbabilities) {
        let req = config.channel.n_t1.saturating_mul(config.channel.n_t2);
        if req > config.resource_budget.max_grid_points {
            warn(format!("channel grid of {req} points exceeds resource_budget.max_grid_points"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    e0: f64,
    g1: f64,
    nat: u64,
    q: i64,
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E0 = {}, g1 = {}, Nat = {}, q = {}", self.e0, self.g1, self.nat, self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub tasks: Vec<Task>,
    pub tables: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub manifest: Manifest,
    /// File name (without extension) to CSV text.
    pub tables: BTreeMap<String, String>,
}

/// Text form shared by every table: shortest round-trip representation,
/// in exponent form away from unit scale.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

const FIELD_COLS: [&str; 3] = ["E0", "omegaL", "Ip"];
const POINT_COLS: [&str; 6] = ["E0", "omegaL", "Ip", "g1", "Nat", "q"];

fn cols(prefix: &[&'static str], rest: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().chain(rest).copied().collect()
}

fn field_cells(c: &RunConfig, e0: f64) -> Vec<String> {
    vec![num(e0), num(c.field.omegaL), num(c.field.Ip)]
}

fn point_cells(c: &RunConfig, p: &Point) -> Vec<String> {
    vec![num(p.e0), num(c.field.omegaL), num(c.field.Ip), num(p.g1), p.nat.to_string(), p.q.to_string()]
}

/// Many-atom states stored as QST1 bytes with a JSON sidecar for the norm and
/// support fractions, keyed by a digest of everything that determines them.
struct StateCache {
    dir: PathBuf,
    hits: std::sync::atomic::AtomicUsize,
    misses: std::sync::atomic::AtomicUsize,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    field: FieldParams,
    dims: Truncation,
    nat_compute: u64,
    mode_layout: ModeLayout,
    heralds: bool,
    amplitudes: &'a [OrbitAmplitude],
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    norm: f64,
    support_fraction: Vec<f64>,
}

impl StateCache {
    fn key(k: &CacheKey) -> String {
        hex(&Sha256::digest(serde_json::to_vec(k).expect("key serializes")))
    }

    fn load(&self, key: &str) -> Option<ManyAtomState> {
        let bytes = std::fs::read(self.dir.join(format!("{key}.qst"))).ok()?;
        let meta: CacheMeta = serde_json::from_slice(&std::fs::read(self.dir.join(format!("{key}.json"))).ok()?).ok()?;
        let state = QState::from_bytes(&bytes).ok()?;
        Some(ManyAtomState { state, norm: meta.norm, support_fraction: meta.support_fraction })
    }

    fn store(&self, key: &str, s: &ManyAtomState) -> Result<(), ScanError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let q = self.dir.join(format!("{key}.qst"));
        std::fs::write(&q, s.state.to_bytes()).map_err(|e| io_err(&q, e))?;
        let j = self.dir.join(format!("{key}.json"));
        let meta = CacheMeta { norm: s.norm, support_fraction: s.support_fraction.clone() };
        std::fs::write(&j, serde_json::to_vec(&meta).expect("meta serializes")).map_err(|e| io_err(&j, e))
    }
}

struct Context<'a> {
    config: &'a RunConfig,
    trunc: Truncation,
    orbits: BTreeMap<(u64, i64), Vec<OrbitSolution>>,
    cache: StateCache,
}

impl Context<'_> {
    fn orbits_at(&self, e0: f64, q: i64) -> &[OrbitSolution] {
        &self.orbits[&(e0.to_bits(), q)]
    }

    fn amplitudes(&self, p: &Point) -> Result<Vec<OrbitAmplitude>, ScanError> {
        let fp = self.config.field_params(p.e0, p.g1, p.nat);
        amplitudes_for(self.orbits_at(p.e0, p.q), &fp).map_err(|e| ScanError::Point { context: p.to_string(), source: e.into() })
    }

    fn state(&self, p: &Point, layout: ModeLayout) -> Result<ManyAtomState, ScanError> {
        let amps = self.amplitudes(p)?;
        let (scaled, nat) = equivalent_atoms(&amps, p.nat, self.config.Nat_compute);
        let key = StateCache::key(&CacheKey {
            field: self.config.field_params(p.e0, p.g1, p.nat),
            dims: self.trunc,
            nat_compute: nat,
            mode_layout: layout,
            heralds: true,
            amplitudes: &scaled,
        });
        use std::sync::atomic::Ordering::Relaxed;
        if let Some(s) = self.cache.load(&key) {
            self.cache.hits.fetch_add(1, Relaxed);
            return Ok(s);
        }
        self.cache.misses.fetch_add(1, Relaxed);
        let (s, _) = prepare_state_with(&scaled, layout, &self.trunc, nat, true)
            .map_err(|e| ScanError::Point { context: format!("{p}, {layout:?}"), source: e })?;
        self.cache.store(&key, &s)?;
        Ok(s)
    }
}

fn wigner_rows(table: &mut Table, prefix: &[String], grid: &WignerGrid) {
    for j in 0..grid.resolution.1 {
        for i in 0..grid.resolution.0 {
            let mut row = prefix.to_vec();
            row.extend([num(grid.re_at(i)), num(grid.im_at(j)), num(grid.value(i, j))]);
            table.push(row);
        }
    }
}

fn point_error(p: &Point, e: impl Into<PipelineError>) -> ScanError {
    ScanError::Point { context: p.to_string(), source: e.into() }
}

/// Runs the enabled tasks in dependency order and returns the tables without
/// touching the output directory except for the state cache.
pub fn execute_scan(config: &RunConfig) -> Result<ScanResult, ScanError> {
    let errors: Vec<String> = validate_config(config).into_iter().filter(|d| d.severity == Severity::Error).map(|d| d.message).collect();
    if !errors.is_empty() {
        return Err(ScanError::Config(errors.join("; ")));
    }
    if config.needs_states() && config.state_points().len() > config.resource_budget.max_points {
        return Err(ScanError::ResourceExceeded(format!("{} scan points", config.state_points().len())));
    }
    let mut tasks = config.tasks.clone();
    tasks.sort();
    tasks.dedup();
    let mut timings = BTreeMap::new();
    let mut tables = BTreeMap::new();

    let needs_orbits = tasks.iter().any(|t| !matches!(t, Task::ChannelProbabilities));
    let started = Instant::now();
    let mut orbits = BTreeMap::new();
    if needs_orbits {
        let keys: Vec<(f64, i64)> = config.field.E0.iter().flat_map(|&e| (config.q_range.0..=config.q_range.1).map(move |q| (e, q))).collect();
        let solved: Vec<Result<Vec<OrbitSolution>, ScanError>> = keys
            .par_iter()
            .map(|&(e0, q)| {
                let fp = config.field_params(e0, config.g1[0], 1);
                point_orbits(&fp, q, config.seed_count)
                    .map_err(|e| ScanError::Point { context: format!("E0 = {e0}, q = {q}"), source: e.into() })
            })
            .collect();
        for ((e0, q), r) in keys.into_iter().zip(solved) {
            orbits.insert((e0.to_bits(), q), r?);
        }
    }
    let ctx = Context {
        config,
        trunc: config.truncation(),
        orbits,
        cache: StateCache { dir: config.output_dir.join("cache"), hits: 0.into(), misses: 0.into() },
    };
    let orbit_time = started.elapsed().as_secs_f64();

    for task in &tasks {
        let t0 = Instant::now();
        match task {
            Task::Orbits => {
                let mut t = Table::new(&cols(
                    &FIELD_COLS,
                    &["q", "branch", "t_ion_re", "t_ion_im", "p_re", "p_im", "t_re_re", "t_re_im", "excursion", "residual", "action_re", "action_im"],
                ));
                for &e0 in &config.field.E0 {
                    for q in config.q_range.0..=config.q_range.1 {
                        for o in ctx.orbits_at(e0, q) {
                            let mut row = field_cells(config, e0);
                            row.extend([
                                q.to_string(),
                                o.branch.to_string(),
                                num(o.t_ion.re),
                                num(o.t_ion.im),
                                num(o.p_s.re),
                                num(o.p_s.im),
                                num(o.t_re.re),
                                num(o.t_re.im),
                                num(o.excursion_time()),
                                num(o.residual_norm),
                                num(o.action.re),
                                num(o.action.im),
                            ]);
                            t.push(row);
                        }
                    }
                }
                tables.insert("orbits".to_string(), t.to_csv());
                timings.insert("orbits".to_string(), orbit_time + t0.elapsed().as_secs_f64());
                continue;
            }
            Task::DeltaMaps => {
                let mut t = Table::new(&cols(&FIELD_COLS, &["g1", "q", "branch", "q1", "delta_re", "delta_im", "delta_abs"]));
                for &e0 in &config.field.E0 {
                    for &g1 in &config.g1 {
                        let fp = config.field_params(e0, g1, 1);
                        for q in config.q_range.0..=config.q_range.1 {
                            for o in ctx.orbits_at(e0, q) {
                                let p = Point { e0, g1, nat: 1, q };
                                let spec = displacement_spectrum(o, &fp, config.delta_q1_max).map_err(|e| point_error(&p, e))?;
                                for (q1, d) in spec {
                                    let mut row = field_cells(config, e0);
                                    row.extend([num(g1), q.to_string(), o.branch.to_string(), q1.to_string(), num(d.re), num(d.im), num(d.norm())]);
                                    t.push(row);
                                }
                            }
                        }
                    }
                }
                tables.insert("delta_maps".to_string(), t.to_csv());
                let mut th = Table::new(&cols(&FIELD_COLS, &["cutoff", "stokes_q"]));
                for &e0 in &config.field.E0 {
                    let fp = config.field_params(e0, config.g1[0], 1);
                    let cut = cutoff_harmonic(&fp);
                    let stokes = stokes_transition(&fp, config.q_range.0, cut + 5).map(|q| q.to_string()).unwrap_or_default();
                    let mut row = field_cells(config, e0);
                    row.extend([cut.to_string(), stokes]);
                    th.push(row);
                }
                tables.insert("thresholds".to_string(), th.to_csv());
            }
            Task::AmplitudeMaps => {
                let mut t = Table::new(&cols(&POINT_COLS, &["branch", "amplitude_re", "amplitude_im", "amplitude_abs", "nat_amplitude_abs"]));
                for p in config.state_points() {
                    for a in ctx.amplitudes(&p)? {
                        let mut row = point_cells(config, &p);
                        row.extend([a.branch.to_string(), num(a.amplitude.re), num(a.amplitude.im), num(a.amplitude.norm()), num(a.amplitude.norm() * p.nat as f64)]);
                        t.push(row);
                    }
                }
                tables.insert("amplitude_maps".to_string(), t.to_csv());
            }
            Task::EntanglementScan => {
                let points = config.state_points();
                let rows: Vec<Result<Vec<String>, ScanError>> = points
                    .par_iter()
                    .map(|p| {
                        let s = ctx.state(p, ModeLayout::TwoMode)?;
                        let m = two_mode_measures(&s.state).map_err(|e| point_error(p, e))?;
                        let mut row = point_cells(config, p);
                        row.extend([
                            p.nat.min(config.Nat_compute).to_string(),
                            s.state.dims()[0].to_string(),
                            s.state.dims()[1].to_string(),
                            num(s.norm),
                            num(s.support_fraction[0]),
                            num(s.support_fraction[1]),
                            num(m.n_fundamental),
                            num(m.n_harmonic),
                            num(m.linear_entropy),
                        ]);
                        Ok(row)
                    })
                    .collect();
                let mut t = Table::new(&cols(
                    &POINT_COLS,
                    &["Nat_compute", "dim_fundamental", "dim_harmonic", "norm", "support_fundamental", "support_harmonic", "n_fundamental", "n_harmonic", "linear_entropy"],
                ));
                for r in rows {
                    t.push(r?);
                }
                tables.insert("entanglement_scan".to_string(), t.to_csv());
            }
            Task::HeraldWigner => {
                let points = config.state_points();
                let results: Vec<Result<(Vec<String>, WignerGrid), ScanError>> = points
                    .par_iter()
                    .map(|p| {
                        let s = ctx.state(p, ModeLayout::TwoMode)?;
                        let (h, fund) = heralded_fundamental(&s.state, ModeLayout::TwoMode, Branch::Long).map_err(|e| point_error(p, e))?;
                        let w = heralded_wigner(&fund, &config.wigner).map_err(|e| point_error(p, e))?;
                        let sm = wigner_summary(&w);
                        let mut row = point_cells(config, p);
                        row.extend([
                            s.state.dims()[0].to_string(),
                            num(h.success_probability),
                            num(vacuum_probability(&s.state, 1)),
                            num(sm.min),
                            num(sm.max),
                            num(sm.integral),
                            sm.maxima.to_string(),
                        ]);
                        Ok((row, w))
                    })
                    .collect();
                let mut summary = Table::new(&cols(&POINT_COLS, &["dim_fundamental", "success_probability", "vacuum_probability", "w_min", "w_max", "w_integral", "local_maxima"]));
                let mut grid = Table::new(&cols(&POINT_COLS, &["re_beta", "im_beta", "W"]));
                for (p, r) in points.iter().zip(results) {
                    let (row, w) = r?;
                    summary.push(row);
                    wigner_rows(&mut grid, &point_cells(config, p), &w);
                }
                tables.insert("herald_summary".to_string(), summary.to_csv());
                tables.insert("herald_wigner".to_string(), grid.to_csv());
            }
            Task::PropagationScan => {
                let points = config.state_points();
                type Prop = (Vec<String>, Vec<(Branch, WignerGrid)>);
                let results: Vec<Result<Prop, ScanError>> = points
                    .par_iter()
                    .map(|p| {
                        let s3 = ctx.state(p, ModeLayout::ThreeMode)?;
                        let s2 = ctx.state(p, ModeLayout::TwoMode)?;
                        let m3 = three_mode_measures(&s3.state).map_err(|e| point_error(p, e))?;
                        let m2 = two_mode_measures(&s2.state).map_err(|e| point_error(p, e))?;
                        let mut row = point_cells(config, p);
                        let share = m3.n_long / (m3.n_short + m3.n_long);
                        row.extend([
                            s3.state.dims()[0].to_string(),
                            s3.state.dims()[1].to_string(),
                            num(m3.n_fundamental),
                            num(m3.n_short),
                            num(m3.n_long),
                            num(share),
                            num(m3.linear_entropy),
                            num(m2.n_fundamental),
                            num(m2.n_harmonic),
                            num(m2.linear_entropy),
                        ]);
                        let mut grids = Vec::new();
                        for b in [Branch::Short, Branch::Long] {
                            match heralded_fundamental(&s3.state, ModeLayout::ThreeMode, b) {
                                Ok((h, fund)) => {
                                    let en = fundamental_negativity(&h.state).map_err(|e| point_error(p, e))?;
                                    let w = heralded_wigner(&fund, &config.wigner).map_err(|e| point_error(p, e))?;
                                    row.extend([num(h.success_probability), num(en), num(w.min())]);
                                    grids.push((b, w));
                                }
                                Err(PipelineError::State(crate::hhgstate::StateError::ZeroProbability(_))) => {
                                    row.extend([num(0.0), String::new(), String::new()]);
                                }
                                Err(e) => return Err(point_error(p, e)),
                            }
                        }
                        Ok((row, grids))
                    })
                    .collect();
                let mut t = Table::new(&cols(
                    &POINT_COLS,
                    &[
                        "dim_fundamental",
                        "dim_harmonic",
                        "n_fundamental",
                        "n_short",
                        "n_long",
                        "long_share",
                        "linear_entropy",
                        "two_mode_n_fundamental",
                        "two_mode_n_harmonic",
                        "two_mode_linear_entropy",
                        "short_herald_probability",
                        "short_herald_log_negativity",
                        "short_herald_w_min",
                        "long_herald_probability",
                        "long_herald_log_negativity",
                        "long_herald_w_min",
                    ],
                ));
                let mut g = Table::new(&cols(&POINT_COLS, &["branch", "re_beta", "im_beta", "W"]));
                for (p, r) in points.iter().zip(results) {
                    let (row, grids) = r?;
                    t.push(row);
                    for (b, w) in grids {
                        let mut prefix = point_cells(config, p);
                        prefix.push(b.to_string());
                        wigner_rows(&mut g, &prefix, &w);
                    }
                }
                tables.insert("propagation".to_string(), t.to_csv());
                tables.insert("propagation_wigner".to_string(), g.to_csv());
            }
            Task::ChannelProbabilities => {
                let grid = ChannelGrid { n_t2: config.channel.n_t2, n_t1: config.channel.n_t1, budget: config.resource_budget.max_grid_points };
                let mut t = Table::new(&cols(&FIELD_COLS, &["g1", "cycles", "n_t2", "n_t1", "q", "P_t1", "P_t2"]));
                for &e0 in &config.field.E0 {
                    let pulse = Sin2Pulse { e0, omega: config.field.omegaL, cycles: config.channel.cycles };
                    for &g1 in &config.g1 {
                        for q in config.channel_harmonics() {
                            let (p1, p2) = channel_probabilities(q, &pulse, config.field.Ip, g1, &grid).map_err(|e| match e {
                                crate::backaction::BackactionError::ResourceExceeded { requested, budget } => {
                                    ScanError::ResourceExceeded(format!("channel grid of {requested} points, budget {budget}"))
                                }
                                other => point_error(&Point { e0, g1, nat: 1, q }, other),
                            })?;
                            let mut row = field_cells(config, e0);
                            row.extend([num(g1), num(config.channel.cycles), grid.n_t2.to_string(), grid.n_t1.to_string(), q.to_string(), num(p1), num(p2)]);
                            t.push(row);
                        }
                    }
                }
                tables.insert("channel_probabilities".to_string(), t.to_csv());
            }
        }
        timings.insert(task.name().to_string(), t0.elapsed().as_secs_f64());
    }

    use std::sync::atomic::Ordering::Relaxed;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.sha256(),
        tasks,
        tables: tables.iter().map(|(k, v)| (k.clone(), hex(&Sha256::digest(v.as_bytes())))).collect(),
        timings_s: timings,
        cache_hits: ctx.cache.hits.load(Relaxed),
        cache_misses: ctx.cache.misses.load(Relaxed),
    };
    Ok(ScanResult { manifest, tables })
}

/// [`execute_scan`], then one CSV per table and manifest.json in the output
/// directory.
pub fn run_scan(config: &RunConfig) -> Result<ScanResult, ScanError> {
    let result = execute_scan(config)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, text) in &result.tables {
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result.manifest).expect("manifest serializes")).map_err(|e| io_err(&path, e))?;
    Ok(result)
}

/// Two-mode many-atom state of the first scan point, as QST1 bytes.
pub fn first_point_state(config: &RunConfig) -> Result<QState, ScanError> {
    let p = *config.state_points().first().ok_or_else(|| ScanError::Config("no scan points".into()))?;
    let fp = config.field_params(p.e0, p.g1, p.nat);
    let orbits = point_orbits(&fp, p.q, config.seed_count).map_err(|e| point_error(&p, e))?;
    let amps = amplitudes_for(&orbits, &fp).map_err(|e| point_error(&p, e))?;
    let (scaled, nat) = equivalent_atoms(&amps, p.nat, config.Nat_compute);
    let (s, _) = prepare_state_with(&scaled, ModeLayout::TwoMode, &config.truncation(), nat, true).map_err(|e| point_error(&p, e))?;
    Ok(s.state)
}
