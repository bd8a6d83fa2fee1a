//! Parameter sweeps over the beamforming problems, their CSV output and
//! JSON configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{design, ProblemVariant, Scheme};
use crate::channel::{build_channels, default_paper_scene, PaperScene, Scene};
use crate::detection::{detection_probability, min_energy, monte_carlo_detect_multi, DetectorSpec, Receiver, Scenario};
use crate::error::{invalid, IsacError, Result};

pub const CSV_HEADER: &str = "scenario,receiver,scheme,param,value,omega,pd_cf,pd_mc,pfa_mc,status,ms";

/// Where the base scene of a sweep comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Builtin(PaperScene),
    /// JSON scene file; relative paths resolve against the sweep file.
    File(PathBuf),
}

/// Swept quantity. Grid units: dB for `Gamma`, watts for `Pmax`, degrees
/// for `RotationAngle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Gamma,
    Pfa,
    Pmax,
    RotationAngle,
}

impl SweepParam {
    pub fn column_name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma_db",
            SweepParam::Pfa => "pfa",
            SweepParam::Pmax => "p_max",
            SweepParam::RotationAngle => "rotation_deg",
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = v.is_finite()
            && match self {
                SweepParam::Gamma | SweepParam::RotationAngle => true,
                SweepParam::Pfa => v > 0.0 && v < 1.0,
                SweepParam::Pmax => v > 0.0,
            };
        if ok {
            Ok(())
        } else {
            invalid(format!("grid value {v} is outside the domain of {}", self.column_name()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scene: SceneSource,
    /// Overrides the scene's array size.
    #[serde(default)]
    pub antennas: Option<usize>,
    pub variants: Vec<ProblemVariant>,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    /// False-alarm target when `param` is not `Pfa`.
    pub p_fa: f64,
    /// Common SINR target in dB when `param` is not `Gamma`; the scene's
    /// own targets are kept if absent.
    #[serde(default)]
    pub gamma_db: Option<f64>,
    /// Per-BS power budget when `param` is not `Pmax`.
    #[serde(default)]
    pub p_max: Option<f64>,
    /// Monte-Carlo trials per point; 0 keeps the closed form only.
    #[serde(default)]
    pub mc_trials: usize,
    /// Drives the channel draws and the Monte-Carlo streams.
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return invalid("sweep grid is empty");
        }
        if self.variants.is_empty() {
            return invalid("sweep has no variants");
        }
        for &v in &self.grid {
            self.param.check(v)?;
        }
        SweepParam::Pfa.check(self.p_fa)?;
        if let Some(p) = self.p_max {
            SweepParam::Pmax.check(p)?;
        }
        if self.antennas == Some(0) {
            return invalid("antennas must be positive");
        }
        if self.param == SweepParam::RotationAngle && !matches!(self.scene, SceneSource::Builtin(PaperScene::Rotation(_))) {
            return invalid("rotation sweeps need the builtin rotation scene");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub receiver: Receiver,
    pub scheme: Scheme,
    pub param: SweepParam,
    pub value: f64,
    /// Relaxation optimum; absent unless the solve was optimal.
    pub omega: Option<f64>,
    pub pd_cf: Option<f64>,
    pub pd_mc: Option<f64>,
    pub pfa_mc: Option<f64>,
    /// Solver status, or `error` when the point could not be set up.
    pub status: String,
    pub ms: f64,
}

fn base_scene(spec: &SweepSpec, base_dir: Option<&Path>) -> Result<Scene> {
    let mut scene = match &spec.scene {
        SceneSource::Builtin(kind) => default_paper_scene(*kind),
        SceneSource::File(p) => {
            let path = match base_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p.clone(),
            };
            read_scene(&path)?
        }
    };
    scene.rng_seed = spec.seed;
    if let Some(n) = spec.antennas {
        scene = scene.with_antennas(n);
    }
    if let Some(g) = spec.gamma_db {
        scene.set_gamma_db(g);
    }
    if let Some(p) = spec.p_max {
        scene.p_max = p;
    }
    Ok(scene)
}

/// Scene and false-alarm target at one grid value.
fn point_scene(spec: &SweepSpec, base: &Scene, value: f64) -> (Scene, f64) {
    let mut scene = base.clone();
    let mut p_fa = spec.p_fa;
    match spec.param {
        SweepParam::Gamma => scene.set_gamma_db(value),
        SweepParam::Pfa => p_fa = value,
        SweepParam::Pmax => scene.p_max = value,
        SweepParam::RotationAngle => {
            let rotated = default_paper_scene(PaperScene::Rotation(value.to_radians()));
            scene.cu_positions = rotated.cu_positions;
        }
    }
    (scene, p_fa)
}

/// Seed of the Monte-Carlo draws at one (point, variant) job.
fn job_seed(seed: u64, job: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (job as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Job {
    point: usize,
    variant: ProblemVariant,
}

fn run_job(spec: &SweepSpec, base: &Scene, job: &Job, index: usize) -> SweepRow {
    let value = spec.grid[job.point];
    let v = job.variant;
    let start = Instant::now();
    let mut row = SweepRow {
        scenario: v.scenario,
        receiver: v.receiver,
        scheme: v.scheme,
        param: spec.param,
        value,
        omega: None,
        pd_cf: None,
        pd_mc: None,
        pfa_mc: None,
        status: String::new(),
        ms: 0.0,
    };
    let (scene, p_fa) = point_scene(spec, base, value);
    match evaluate(spec, &scene, p_fa, v, job_seed(spec.seed, index), &mut row) {
        Ok(()) => {}
        Err(e) => {
            warn!("{} = {value}, {v:?}: {e}", spec.param.column_name());
            row.status = "error".into();
        }
    }
    row.ms = start.elapsed().as_secs_f64() * 1e3;
    row
}

fn evaluate(spec: &SweepSpec, scene: &Scene, p_fa: f64, v: ProblemVariant, seed: u64, row: &mut SweepRow) -> Result<()> {
    let ch = build_channels(scene)?;
    let d = design(v, &ch, scene)?;
    row.status = d.sdr.status().to_string();
    let Some(beams) = d.beams else {
        return Ok(());
    };
    row.omega = Some(d.sdr.omega);
    let include_comm = v.comm_in_energy();
    let (energy, q) = min_energy(&beams, &ch, v.scenario, include_comm);
    let det = DetectorSpec::new(p_fa, scene.noise_radar, v.scenario)?;
    row.pd_cf = Some(detection_probability(energy, &det)?);
    if spec.mc_trials > 0 && energy > 0.0 {
        let seen = if include_comm { beams } else { beams.sensing_part() };
        let out = monte_carlo_detect_multi(&seen, &ch, q, v.scenario, scene.noise_radar, &[p_fa], spec.mc_trials, seed)?;
        row.pd_mc = Some(out.rates[0].p_d_hat);
        row.pfa_mc = Some(out.rates[0].p_fa_hat);
    }
    Ok(())
}

/// Runs every grid point against every variant. Rows come out grid-major,
/// in the order of `spec.variants`, independent of thread scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    run_sweep_in(spec, None)
}

/// As [`run_sweep`], resolving a relative scene file against `base_dir`.
pub fn run_sweep_in(spec: &SweepSpec, base_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let base = base_scene(spec, base_dir)?;
    base.validate()?;
    let jobs: Vec<Job> = (0..spec.grid.len())
        .flat_map(|point| spec.variants.iter().map(move |&variant| Job { point, variant }))
        .collect();
    Ok(jobs.par_iter().enumerate().map(|(i, job)| run_job(spec, &base, job, i)).collect())
}

fn fmt_float(v: f64) -> String {
    format!("{v:.11e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// CSV text of `rows` under [`CSV_HEADER`]; floats carry 12 significant
/// digits and absent values are empty fields.
pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            scenario_label(r.scenario),
            receiver_label(r.receiver),
            scheme_label(r.scheme),
            r.param.column_name(),
            &fmt_float(r.value),
            &fmt_opt(r.omega),
            &fmt_opt(r.pd_cf),
            &fmt_opt(r.pd_mc),
            &fmt_opt(r.pfa_mc),
            &r.status,
            &format!("{:.3}", r.ms),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| IsacError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| IsacError::Config(e.to_string()))
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    fs::write(path, rows_to_csv(rows)?)?;
    Ok(())
}

/// Parses a sweep CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(IsacError::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| IsacError::Config(format!("{}:{line}: bad number {:?} in column {k}", path.display(), field(k))))
        };
        let opt = |k: usize| -> Result<Option<f64>> { if field(k).is_empty() { Ok(None) } else { num(k).map(Some) } };
        let bad = |what: &str, k: usize| IsacError::Config(format!("{}:{line}: unknown {what} {:?}", path.display(), field(k)));
        rows.push(SweepRow {
            scenario: parse_label(field(0), &[("1", Scenario::SyncI), ("2", Scenario::UnsyncII)]).ok_or_else(|| bad("scenario", 0))?,
            receiver: parse_label(field(1), &[("1", Receiver::TypeI), ("2", Receiver::TypeII)]).ok_or_else(|| bad("receiver", 1))?,
            scheme: parse_label(
                field(2),
                &[("proposed", Scheme::Proposed), ("zf", Scheme::Zf), ("sensing", Scheme::SensingOnly)],
            )
            .ok_or_else(|| bad("scheme", 2))?,
            param: [SweepParam::Gamma, SweepParam::Pfa, SweepParam::Pmax, SweepParam::RotationAngle]
                .into_iter()
                .find(|p| p.column_name() == field(3))
                .ok_or_else(|| bad("parameter", 3))?,
            value: num(4)?,
            omega: opt(5)?,
            pd_cf: opt(6)?,
            pd_mc: opt(7)?,
            pfa_mc: opt(8)?,
            status: field(9).to_string(),
            ms: num(10)?,
        });
    }
    Ok(rows)
}

fn parse_label<T: Copy>(s: &str, table: &[(&str, T)]) -> Option<T> {
    table.iter().find(|(k, _)| *k == s).map(|(_, v)| *v)
}

pub fn scenario_label(s: Scenario) -> &'static str {
    match s {
        Scenario::SyncI => "1",
        Scenario::UnsyncII => "2",
    }
}

pub fn receiver_label(r: Receiver) -> &'static str {
    match r {
        Receiver::TypeI => "1",
        Receiver::TypeII => "2",
    }
}

pub fn scheme_label(s: Scheme) -> &'static str {
    match s {
        Scheme::Proposed => "proposed",
        Scheme::Zf => "zf",
        Scheme::SensingOnly => "sensing",
    }
}

impl From<csv::Error> for IsacError {
    fn from(e: csv::Error) -> Self {
        IsacError::Config(format!("csv: {e}"))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IsacError::Config(format!("{}: {e}", path.display())))
}

/// Loads and validates a scene file.
pub fn read_scene(path: &Path) -> Result<Scene> {
    let scene: Scene = read_json(path)?;
    scene.validate()?;
    Ok(scene)
}

pub fn read_sweep(path: &Path) -> Result<SweepSpec> {
    let spec: SweepSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_config<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One sweep family of [`figure_specs`].
#[derive(Debug, Clone)]
pub struct FigureSpec {
    pub name: &'static str,
    pub spec: SweepSpec,
}

fn figure_variants() -> Vec<ProblemVariant> {
    let mut out = Vec::new();
    for scenario in [Scenario::SyncI, Scenario::UnsyncII] {
        for scheme in [Scheme::Proposed, Scheme::Zf, Scheme::SensingOnly] {
            for receiver in [Receiver::TypeI, Receiver::TypeII] {
                out.push(ProblemVariant::new(scenario, receiver, scheme));
            }
        }
    }
    out
}

/// The four evaluation families: p_D against Γ, p_FA, P_max and the CU
/// bearing, with every scenario, receiver and scheme.
pub fn figure_specs(antennas: usize, mc_trials: usize, seed: u64) -> Vec<FigureSpec> {
    let variants = figure_variants();
    let base = |param, grid: Vec<f64>, scene, gamma_db, p_max| SweepSpec {
        scene: SceneSource::Builtin(scene),
        antennas: Some(antennas),
        variants: variants.clone(),
        param,
        grid,
        p_fa: 1e-3,
        gamma_db,
        p_max,
        mc_trials,
        seed,
    };
    vec![
        FigureSpec {
            name: "pd_vs_gamma",
            spec: base(SweepParam::Gamma, vec![5.0, 10.0, 15.0, 20.0, 25.0], PaperScene::OneCu, None, Some(15.0)),
        },
        FigureSpec {
            name: "pd_vs_pfa",
            spec: base(SweepParam::Pfa, vec![1e-4, 1e-3, 1e-2, 1e-1], PaperScene::OneCu, Some(25.0), Some(15.0)),
        },
        FigureSpec {
            name: "pd_vs_pmax",
            spec: base(SweepParam::Pmax, vec![1.0, 4.0, 8.0, 12.0, 15.0], PaperScene::OneCu, Some(25.0), None),
        },
        FigureSpec {
            name: "pd_vs_rotation",
            spec: base(
                SweepParam::RotationAngle,
                (0..=8).map(|i| 45.0 * i as f64).collect(),
                PaperScene::Rotation(0.0),
                Some(30.0),
                Some(12.0),
            ),
        },
    ]
}

/// Runs [`figure_specs`] and writes `<name>.csv` per family into `out_dir`.
pub fn run_figures(out_dir: &Path, antennas: usize, mc_trials: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for fig in figure_specs(antennas, mc_trials, seed) {
        let rows = run_sweep(&fig.spec)?;
        let path = out_dir.join(format!("{}.csv", fig.name));
        write_csv(&rows, &path)?;
        info!("{}: {} rows -> {}", fig.name, rows.len(), path.display());
        written.push(path);
    }
    Ok(written)
}
