//! Batch front end: one JSON run configuration in, one report out.
//!
//! Structural problems (unknown fields, wrong types) and semantic ones
//! (non-stochastic rows, non-Hermitian observables, missing seeds) are both
//! reported with a JSON-pointer path to the offending field.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::channel::{KrausChannel, TpCheck};
use crate::dobrushin::{check_probability_row, classical_dobrushin, embed_classical, exp1_matrix, ProbabilityVector, StochasticMatrix};
use crate::error::{Error, Result};
use crate::mps::{self, LimitConfig, LocalObservable, MpsTensorTrain, TailDirection};
use crate::opalg::{ComplexMatrix, DensityOperator, HermitianOperator, C64};
use crate::process::{
    diameter_estimate, ergodic_average, mixing_report, periodic_bound, trajectory, Direction, GeneratedRule,
    KappaProfile, MdEstimator, MixingConfig, NestingConfig, ProcessSchedule,
};
use crate::rng;

pub const OUTPUT_DIR_ENV: &str = "QMIX_OUTPUT_DIR";
pub const THREADS_ENV: &str = "QMIX_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

const CSV_DIGITS: usize = 12;
const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    AnalyzeChannel,
    Simulate,
    Mps,
    Classical,
    Report,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::AnalyzeChannel => "analyze-channel",
            Command::Simulate => "simulate",
            Command::Mps => "mps",
            Command::Classical => "classical",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ExampleExp1,
    ExampleOscillation,
}

/// Square complex matrix as rows of `[re, im]` pairs.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity { dim: usize },
    Kraus { operators: Vec<MatrixJson> },
    Unitary { matrix: MatrixJson },
    Depolarizing { dim: usize, p: f64 },
    Replace { state: MatrixJson },
    /// Drawn from stream `position` of the run seed.
    Haar { dim: usize, kraus_count: usize },
    Classical { rows: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSpec {
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Explicit {
        channels: Vec<ChannelSpec>,
    },
    Periodic {
        channels: Vec<ChannelSpec>,
    },
    Classical {
        matrices: Vec<StochasticSpec>,
        #[serde(default)]
        periodic: bool,
    },
    Generated {
        dim: usize,
        rule: GeneratedRule,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestingSpec {
    pub enabled: bool,
    pub samples: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NestingSpec {
    fn default() -> Self {
        let base = NestingConfig::default();
        NestingSpec {
            enabled: true,
            samples: base.samples,
            tol: base.tol,
            max_iters: base.max_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTrainSpec {
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    /// First and last site, counted from 1.
    pub window: [usize; 2],
    #[serde(default)]
    pub matrix: Option<MatrixJson>,
    /// Seeded random Hermitian matrix instead of an explicit one.
    #[serde(default)]
    pub random_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpsSpec {
    pub bond_dim: usize,
    pub phys_dim: usize,
    /// Either a list of sites (each a list of tensors) or `{"random": {...}}`.
    pub sites: serde_json::Value,
    pub observable: ObservableSpec,
    #[serde(default = "default_true")]
    pub gauge_fix: bool,
    #[serde(default)]
    pub tail: TailDirection,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomSites {
    random: Option<RandomTrainSpec>,
}

/// Configuration file as written by the user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<Command>,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub n_max: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub channel: Option<ChannelSpec>,
    pub mps: Option<MpsSpec>,
    pub estimator: Option<MdEstimator>,
    /// Pure-state pairs sampled per diameter estimate.
    pub samples: Option<usize>,
    pub threshold_r: Option<f64>,
    pub directions: Option<Vec<Direction>>,
    pub nesting: Option<NestingSpec>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Stochastic matrices for the `classical` command.
#[derive(Clone, Debug)]
pub enum ClassicalSource {
    List { matrices: Vec<StochasticMatrix>, periodic: bool },
    Exp1,
    Oscillation,
}

impl ClassicalSource {
    pub fn matrix(&self, n: usize) -> Result<StochasticMatrix> {
        match self {
            ClassicalSource::List { matrices, periodic } => {
                if *periodic {
                    Ok(matrices[n % matrices.len()].clone())
                } else {
                    matrices.get(n).cloned().ok_or(Error::ScheduleExhausted {
                        requested: n,
                        len: matrices.len(),
                    })
                }
            }
            ClassicalSource::Exp1 => Ok(exp1_matrix(n)),
            ClassicalSource::Oscillation => {
                let target = n % 2;
                let row: Vec<f64> = (0..2).map(|j| if j == target { 1.0 } else { 0.0 }).collect();
                StochasticMatrix::new(vec![row.clone(), row])
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    Channel {
        channel: KrausChannel,
        estimator: MdEstimator,
    },
    Process {
        schedule: ProcessSchedule,
        mixing: MixingConfig,
    },
    Classical(ClassicalSource),
    Mps {
        train: MpsTensorTrain,
        observable: LocalObservable,
        limit: LimitConfig,
    },
}

/// Fully validated run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub seed: Option<u64>,
    pub n_max: usize,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub target: Target,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub preset: Option<Preset>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => {
                let _ = write!(s, "/{index}");
            }
            Segment::Map { key } => {
                let _ = write!(s, "/{}", key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => {
                let _ = write!(s, "/{variant}");
            }
            Segment::Unknown => {}
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

fn from_value_at<T: serde::de::DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = pointer(e.path());
        let path = if inner == "/" { prefix.to_string() } else { format!("{prefix}{inner}") };
        Error::config(path, e.into_inner().to_string())
    })
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig =
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(pointer(e.path()), e.into_inner().to_string()))?;
    validate(raw, overrides)
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

fn matrix_from_json(m: &MatrixJson, path: &str) -> Result<ComplexMatrix> {
    let n = m.len();
    if n == 0 {
        return Err(Error::config(path, "matrix must have at least one row"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(Error::config(
                format!("{path}/{i}"),
                format!("row has {} entries, expected {n} for a square matrix", row.len()),
            ));
        }
        for (j, z) in row.iter().enumerate() {
            if !(z[0].is_finite() && z[1].is_finite()) {
                return Err(Error::config(format!("{path}/{i}/{j}"), "entry is not finite"));
            }
        }
    }
    Ok(ComplexMatrix::from_fn(n, n, |i, j| C64::new(m[i][j][0], m[i][j][1])))
}

fn stochastic_from_rows(rows: &[Vec<f64>], path: &str) -> Result<StochasticMatrix> {
    if rows.is_empty() {
        return Err(Error::config(format!("{path}/rows"), "stochastic matrix needs at least one row"));
    }
    for (i, row) in rows.iter().enumerate() {
        check_probability_row(row, rows.len()).map_err(|e| at(&format!("{path}/rows/{i}"), e))?;
    }
    StochasticMatrix::new(rows.to_vec()).map_err(|e| at(&format!("{path}/rows"), e))
}

fn need_seed(seed: Option<u64>, why: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::config("/seed", format!("a seed is required for {why}")))
}

fn build_channel(spec: &ChannelSpec, path: &str, seed: Option<u64>, position: usize) -> Result<KrausChannel> {
    let positive = |dim: usize| {
        if dim == 0 {
            Err(Error::config(format!("{path}/dim"), "dimension must be positive"))
        } else {
            Ok(dim)
        }
    };
    match spec {
        ChannelSpec::Identity { dim } => Ok(KrausChannel::identity(positive(*dim)?)),
        ChannelSpec::Kraus { operators } => {
            let ops = operators
                .iter()
                .enumerate()
                .map(|(i, m)| matrix_from_json(m, &format!("{path}/operators/{i}")))
                .collect::<Result<Vec<_>>>()?;
            KrausChannel::new(ops, TpCheck::Strict).map_err(|e| at(&format!("{path}/operators"), e))
        }
        ChannelSpec::Unitary { matrix } => {
            let u = matrix_from_json(matrix, &format!("{path}/matrix"))?;
            KrausChannel::unitary(u).map_err(|e| at(&format!("{path}/matrix"), e))
        }
        ChannelSpec::Depolarizing { dim, p } => {
            KrausChannel::depolarizing(positive(*dim)?, *p).map_err(|e| at(&format!("{path}/p"), e))
        }
        ChannelSpec::Replace { state } => {
            let sigma = matrix_from_json(state, &format!("{path}/state"))?;
            let sigma = DensityOperator::new(sigma).map_err(|e| at(&format!("{path}/state"), e))?;
            KrausChannel::replace(&sigma).map_err(|e| at(&format!("{path}/state"), e))
        }
        ChannelSpec::Haar { dim, kraus_count } => {
            let seed = need_seed(seed, "Haar-random channels")?;
            let mut r = rng::stream(seed, position as u64);
            KrausChannel::haar(positive(*dim)?, *kraus_count, &mut r).map_err(|e| at(&format!("{path}/kraus_count"), e))
        }
        ChannelSpec::Classical { rows } => embed_classical(&stochastic_from_rows(rows, path)?),
    }
}

fn build_channels(list: &[ChannelSpec], path: &str, seed: Option<u64>) -> Result<Vec<KrausChannel>> {
    if list.is_empty() {
        return Err(Error::config(path, "schedule needs at least one channel"));
    }
    let chans = list
        .iter()
        .enumerate()
        .map(|(i, spec)| build_channel(spec, &format!("{path}/{i}"), seed, i))
        .collect::<Result<Vec<_>>>()?;
    let d = chans[0].dim();
    if let Some(i) = chans.iter().position(|c| c.dim() != d) {
        return Err(Error::config(
            format!("{path}/{i}"),
            format!("channel has dimension {}, expected {d}", chans[i].dim()),
        ));
    }
    Ok(chans)
}

fn build_schedule(spec: &ScheduleSpec, seed: Option<u64>) -> Result<ProcessSchedule> {
    match spec {
        ScheduleSpec::Explicit { channels } => {
            ProcessSchedule::explicit(build_channels(channels, "/schedule/channels", seed)?)
        }
        ScheduleSpec::Periodic { channels } => {
            ProcessSchedule::periodic(build_channels(channels, "/schedule/channels", seed)?)
        }
        ScheduleSpec::Classical { matrices, periodic } => {
            let chans = classical_list(matrices)?
                .iter()
                .map(embed_classical)
                .collect::<Result<Vec<_>>>()?;
            if *periodic {
                ProcessSchedule::periodic(chans)
            } else {
                ProcessSchedule::explicit(chans)
            }
        }
        ScheduleSpec::Generated { dim, rule } => {
            let needs_seed = matches!(rule, GeneratedRule::UnitaryDepolarizing { .. } | GeneratedRule::HaarNoisy { .. });
            let seed = if needs_seed {
                need_seed(seed, "generated random schedules")?
            } else {
                seed.unwrap_or(0)
            };
            ProcessSchedule::generated(*dim, seed, rule.clone()).map_err(|e| at("/schedule/rule", e))
        }
    }
}

fn classical_list(matrices: &[StochasticSpec]) -> Result<Vec<StochasticMatrix>> {
    if matrices.is_empty() {
        return Err(Error::config("/schedule/matrices", "need at least one stochastic matrix"));
    }
    let list = matrices
        .iter()
        .enumerate()
        .map(|(i, m)| stochastic_from_rows(&m.rows, &format!("/schedule/matrices/{i}")))
        .collect::<Result<Vec<_>>>()?;
    let d = list[0].dim();
    if let Some(i) = list.iter().position(|m| m.dim() != d) {
        return Err(Error::config(format!("/schedule/matrices/{i}"), format!("expected a {d}x{d} matrix")));
    }
    Ok(list)
}

fn preset_schedule(preset: Preset) -> ScheduleSpec {
    let rule = match preset {
        Preset::ExampleExp1 => GeneratedRule::Exp1,
        Preset::ExampleOscillation => GeneratedRule::Oscillation,
    };
    ScheduleSpec::Generated { dim: 2, rule }
}

fn preset_n_max(preset: Preset) -> usize {
    match preset {
        Preset::ExampleExp1 => 30,
        Preset::ExampleOscillation => 10,
    }
}

fn check_estimator(est: &MdEstimator) -> Result<()> {
    match *est {
        MdEstimator::Certified {
            epsilon,
            max_evaluations,
        } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::config("/estimator/epsilon", "epsilon must be positive"));
            }
            if max_evaluations == 0 {
                return Err(Error::config("/estimator/max_evaluations", "must be positive"));
            }
        }
        MdEstimator::Sampled { samples, .. } => {
            if samples == 0 {
                return Err(Error::config("/estimator/samples", "must be positive"));
            }
        }
    }
    Ok(())
}

fn check_threshold(r: f64) -> Result<f64> {
    if r > 0.0 && r < 1.0 {
        Ok(r)
    } else {
        Err(Error::config("/threshold_r", format!("threshold must lie in (0, 1), got {r}")))
    }
}

fn validate(raw: RawConfig, overrides: &Overrides) -> Result<RunConfig> {
    let preset = overrides.preset.or(raw.preset);
    let command = overrides
        .command
        .or(raw.command)
        .or(preset.map(|_| Command::Simulate))
        .ok_or_else(|| Error::config("/command", "missing command"))?;
    let seed = raw.seed.or(preset.map(|_| 0));
    let format = overrides.format.or(raw.format).unwrap_or(match command {
        Command::AnalyzeChannel | Command::Report => Format::Json,
        _ => Format::Csv,
    });
    if command == Command::Report && format == Format::Csv {
        return Err(Error::config("/format", "report is emitted as JSON only"));
    }
    let estimator = raw.estimator.unwrap_or_default();
    check_estimator(&estimator)?;
    let threshold_r = check_threshold(raw.threshold_r.unwrap_or(0.25))?;
    let n_max = match command {
        Command::AnalyzeChannel => raw.n_max.unwrap_or(0),
        _ => {
            let n = raw
                .n_max
                .or(preset.map(preset_n_max))
                .ok_or_else(|| Error::config("/n_max", "missing n_max"))?;
            if n == 0 {
                return Err(Error::config("/n_max", "n_max must be at least 1"));
            }
            n
        }
    };
    let schedule_spec = || -> Result<ScheduleSpec> {
        match (&raw.schedule, preset) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(p)) => Ok(preset_schedule(p)),
            (None, None) => Err(Error::config("/schedule", "missing schedule (or preset)")),
        }
    };
    let target = match command {
        Command::AnalyzeChannel => {
            let spec = raw.channel.as_ref().ok_or_else(|| Error::config("/channel", "missing channel"))?;
            if matches!(estimator, MdEstimator::Sampled { .. }) {
                need_seed(seed, "sampled estimators")?;
            }
            Target::Channel {
                channel: build_channel(spec, "/channel", seed, 0)?,
                estimator,
            }
        }
        Command::Simulate | Command::Report => {
            let seed = need_seed(seed, "diameter sampling")?;
            let schedule = build_schedule(&schedule_spec()?, Some(seed))?;
            if let Some(len) = schedule.len() {
                if n_max >= len {
                    return Err(Error::config("/n_max", format!("n_max must be below the schedule length {len}")));
                }
            }
            let samples = raw.samples.unwrap_or(MixingConfig::default().diameter_samples);
            if samples == 0 {
                return Err(Error::config("/samples", "must be positive"));
            }
            let nesting = raw.nesting.clone().unwrap_or_default();
            if nesting.tol.is_nan() || nesting.tol <= 0.0 {
                return Err(Error::config("/nesting/tol", "tolerance must be positive"));
            }
            let directions = raw.directions.clone().unwrap_or_else(|| vec![Direction::Forward, Direction::Backward]);
            if directions.is_empty() {
                return Err(Error::config("/directions", "need at least one direction"));
            }
            let mixing = MixingConfig {
                directions,
                diameter_samples: samples,
                seed,
                threshold_r,
                estimator,
                nesting: nesting.enabled.then_some(NestingConfig {
                    samples: nesting.samples,
                    tol: nesting.tol,
                    max_iters: nesting.max_iters,
                    seed,
                }),
            };
            Target::Process { schedule, mixing }
        }
        Command::Classical => {
            let source = match schedule_spec()? {
                ScheduleSpec::Classical { matrices, periodic } => ClassicalSource::List {
                    matrices: classical_list(&matrices)?,
                    periodic,
                },
                ScheduleSpec::Generated {
                    rule: GeneratedRule::Exp1, ..
                } => ClassicalSource::Exp1,
                ScheduleSpec::Generated {
                    rule: GeneratedRule::Oscillation,
                    ..
                } => ClassicalSource::Oscillation,
                _ => {
                    return Err(Error::config(
                        "/schedule/kind",
                        "classical command needs a classical schedule or a classical preset",
                    ))
                }
            };
            if let ClassicalSource::List { matrices, periodic: false } = &source {
                if n_max >= matrices.len() {
                    return Err(Error::config(
                        "/n_max",
                        format!("n_max must be below the number of matrices {}", matrices.len()),
                    ));
                }
            }
            Target::Classical(source)
        }
        Command::Mps => {
            let spec = raw.mps.as_ref().ok_or_else(|| Error::config("/mps", "missing mps section"))?;
            let (train, observable) = build_mps(spec, n_max)?;
            Target::Mps {
                train,
                observable,
                limit: LimitConfig {
                    threshold_r,
                    estimator,
                    tail: spec.tail,
                },
            }
        }
    };
    Ok(RunConfig {
        command,
        seed,
        n_max,
        format,
        output: overrides.output.clone().or(raw.output),
        target,
    })
}

fn build_mps(spec: &MpsSpec, n_max: usize) -> Result<(MpsTensorTrain, LocalObservable)> {
    if spec.bond_dim == 0 || spec.phys_dim == 0 {
        return Err(Error::config("/mps/bond_dim", "bond_dim and phys_dim must be positive"));
    }
    let train = if spec.sites.is_array() {
        let sites: Vec<Vec<MatrixJson>> = from_value_at(&spec.sites, "/mps/sites")?;
        let mut tensors = Vec::with_capacity(sites.len());
        for (k, site) in sites.iter().enumerate() {
            if site.len() != spec.phys_dim {
                return Err(Error::config(
                    format!("/mps/sites/{k}"),
                    format!("site has {} tensors, expected phys_dim = {}", site.len(), spec.phys_dim),
                ));
            }
            let mats = site
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let a = matrix_from_json(m, &format!("/mps/sites/{k}/{i}"))?;
                    if a.nrows() != spec.bond_dim {
                        return Err(Error::config(
                            format!("/mps/sites/{k}/{i}"),
                            format!("tensor is {}x{}, expected bond_dim = {}", a.nrows(), a.ncols(), spec.bond_dim),
                        ));
                    }
                    Ok(a)
                })
                .collect::<Result<Vec<_>>>()?;
            tensors.push(mats);
        }
        if tensors.is_empty() {
            return Err(Error::config("/mps/sites", "need at least one site"));
        }
        if spec.gauge_fix {
            mps::gauge_fix(tensors).map_err(|e| at("/mps/sites", e))?
        } else {
            MpsTensorTrain::from_gauged(tensors, TpCheck::Strict).map_err(|e| at("/mps/sites", e))?
        }
    } else {
        let wrapper: RandomSites = from_value_at(&spec.sites, "/mps/sites")?;
        let r = wrapper
            .random
            .ok_or_else(|| Error::config("/mps/sites", "expected a list of sites or {\"random\": {...}}"))?;
        MpsTensorTrain::random(spec.bond_dim, spec.phys_dim, r.n, r.seed, r.beta).map_err(|e| at("/mps/sites/random", e))?
    };
    if n_max > train.len() {
        return Err(Error::config("/n_max", format!("n_max exceeds the {} available sites", train.len())));
    }
    let obs = &spec.observable;
    let (a, b) = (obs.window[0], obs.window[1]);
    if a == 0 || b < a {
        return Err(Error::config("/mps/observable/window", "window must satisfy 1 <= a <= b"));
    }
    if b >= n_max {
        return Err(Error::config("/mps/observable/window", "window must end before n_max"));
    }
    let m = train.phys_dim();
    let states = (b - a + 1) as u32;
    let dim = m
        .checked_pow(states)
        .filter(|s| *s <= mps::MAX_WINDOW_STATES)
        .ok_or_else(|| Error::config("/mps/observable/window", format!("window too large for phys_dim {m}")))?;
    let matrix = match (&obs.matrix, obs.random_seed) {
        (Some(mat), None) => {
            let x = matrix_from_json(mat, "/mps/observable/matrix")?;
            let residual = crate::opalg::hermiticity_residual(&x);
            if residual > HERMITIAN_TOL {
                return Err(Error::config(
                    "/mps/observable/matrix",
                    format!("observable is not Hermitian (residual {residual:.3e})"),
                ));
            }
            x
        }
        (None, Some(s)) => HermitianOperator::random(dim, &mut rng::seeded(s)).into_matrix(),
        _ => {
            return Err(Error::config(
                "/mps/observable",
                "give exactly one of `matrix` and `random_seed`",
            ))
        }
    };
    let observable = LocalObservable::new((a, b), m, matrix).map_err(|e| at("/mps/observable/matrix", e))?;
    Ok((train.truncated(n_max)?, observable))
}

/// `printf("%.{sig}g")`.
pub fn format_g(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = sig.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g(x: f64) -> String {
    format_g(x, CSV_DIGITS)
}

#[derive(Serialize)]
struct ChannelReport {
    trace_lower_bound: f64,
    method: &'static str,
    slack: f64,
    sample_count: usize,
    contraction_coefficient: f64,
}

#[derive(Serialize)]
struct RowOut {
    n: usize,
    direction: &'static str,
    diameter: f64,
    md_product_bound: f64,
    big_n: usize,
    mu: f64,
    two_mu_pow_bign: f64,
    nesting: Option<&'static str>,
}

#[derive(Serialize)]
struct ClassicalRow {
    n: usize,
    dobrushin: f64,
    product_dobrushin: f64,
    product_bound: f64,
    l1_step: f64,
}

#[derive(Serialize)]
struct MpsRow {
    n: usize,
    phi_n: f64,
    phi_infty_est: f64,
    error_bar: f64,
    converged: bool,
}

#[derive(Serialize)]
struct PeriodicOut {
    c: f64,
    mu: f64,
    j_star: usize,
    trace_kappa: f64,
    value_at_n_max: f64,
}

#[derive(Serialize)]
struct TrajectoryOut {
    direction: &'static str,
    increments: Vec<f64>,
    alignment: Vec<f64>,
}

#[derive(Serialize)]
struct DirectionValue {
    direction: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct FullReport {
    dim: usize,
    n_max: usize,
    seed: u64,
    kappa: Vec<f64>,
    rows: Vec<RowOut>,
    measured_c: Vec<DirectionValue>,
    ergodic_average_diameter: Vec<DirectionValue>,
    periodic_bound: Option<PeriodicOut>,
    trajectories: Vec<TrajectoryOut>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn mixing_rows(schedule: &ProcessSchedule, n_max: usize, mixing: &MixingConfig) -> Result<Vec<RowOut>> {
    Ok(mixing_report(schedule, n_max, mixing)?
        .rows
        .into_iter()
        .map(|r| RowOut {
            n: r.n,
            direction: r.direction.as_str(),
            diameter: r.diameter,
            md_product_bound: r.md_product_bound,
            big_n: r.big_n,
            mu: r.mu,
            two_mu_pow_bign: r.two_mu_pow_bign,
            nesting: r.nesting.map(|s| s.as_str()),
        })
        .collect())
}

/// Executes a validated run and returns the report text.
pub fn run(config: &RunConfig) -> Result<String> {
    let n_max = config.n_max;
    match &config.target {
        Target::Channel { channel, estimator } => {
            let est = estimator.estimate(channel)?;
            let rep = ChannelReport {
                trace_lower_bound: est.trace_lower_bound,
                method: est.method.as_str(),
                slack: est.slack,
                sample_count: est.sample_count,
                contraction_coefficient: est.contraction_coefficient(),
            };
            match config.format {
                Format::Json => to_json(&rep),
                Format::Csv => Ok(csv(
                    "trace_lower_bound,method,slack,sample_count,contraction_coefficient",
                    &[rep],
                    |r| format!("{},{},{},{},{}", g(r.trace_lower_bound), r.method, g(r.slack), r.sample_count, g(r.contraction_coefficient)),
                )),
            }
        }
        Target::Process { schedule, mixing } if config.command == Command::Simulate => {
            let rows = mixing_rows(schedule, n_max, mixing)?;
            match config.format {
                Format::Json => to_json(&rows),
                Format::Csv => Ok(csv(
                    "n,direction,diameter,md_product_bound,big_n,mu,two_mu_pow_bign,nesting",
                    &rows,
                    |r| {
                        format!(
                            "{},{},{},{},{},{},{},{}",
                            r.n,
                            r.direction,
                            g(r.diameter),
                            g(r.md_product_bound),
                            r.big_n,
                            g(r.mu),
                            g(r.two_mu_pow_bign),
                            r.nesting.unwrap_or("")
                        )
                    },
                )),
            }
        }
        Target::Process { schedule, mixing } => to_json(&full_report(schedule, n_max, mixing)?),
        Target::Classical(source) => {
            let rows = classical_rows(source, n_max)?;
            match config.format {
                Format::Json => to_json(&rows),
                Format::Csv => Ok(csv("n,dobrushin,product_dobrushin,product_bound,l1_step", &rows, |r| {
                    format!("{},{},{},{},{}", r.n, g(r.dobrushin), g(r.product_dobrushin), g(r.product_bound), g(r.l1_step))
                })),
            }
        }
        Target::Mps {
            train,
            observable,
            limit,
        } => {
            let phis = mps::phi_sequence(train, observable, n_max)?;
            let limits = mps::limit_sequence(train, observable, limit)?;
            let rows: Vec<MpsRow> = limits
                .iter()
                .map(|p| {
                    let phi = phis.iter().find(|(n, _)| *n == p.n).expect("same range").1;
                    MpsRow {
                        n: p.n,
                        phi_n: phi.re,
                        phi_infty_est: p.value.re,
                        error_bar: p.error_bar,
                        converged: p.converged,
                    }
                })
                .collect();
            match config.format {
                Format::Json => to_json(&rows),
                Format::Csv => Ok(csv("n,phi_n,phi_infty_est,error_bar,converged", &rows, |r| {
                    format!("{},{},{},{},{}", r.n, g(r.phi_n), g(r.phi_infty_est), g(r.error_bar), r.converged)
                })),
            }
        }
    }
}

fn classical_rows(source: &ClassicalSource, n_max: usize) -> Result<Vec<ClassicalRow>> {
    let first = source.matrix(0)?;
    let d = first.dim();
    let mut product = StochasticMatrix::identity(d);
    let mut bound = 1.0;
    let mut prev = ProbabilityVector::point(d, 0);
    let start = prev.clone();
    let mut rows = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let pi = source.matrix(n)?;
        let delta = classical_dobrushin(&pi);
        product = product.product(&pi)?;
        bound *= delta;
        let next = start.evolve(&product)?;
        rows.push(ClassicalRow {
            n,
            dobrushin: delta,
            product_dobrushin: classical_dobrushin(&product),
            product_bound: bound,
            l1_step: next.l1_distance(&prev),
        });
        prev = next;
    }
    Ok(rows)
}

fn full_report(schedule: &ProcessSchedule, n_max: usize, mixing: &MixingConfig) -> Result<FullReport> {
    let rows = mixing_rows(schedule, n_max, mixing)?;
    let mut profile = KappaProfile::new(mixing.estimator);
    let kappa = (0..=n_max)
        .map(|j| profile.trace_bound(schedule, j))
        .collect::<Result<Vec<_>>>()?;
    let periodic = if schedule.period().is_some() {
        match periodic_bound(schedule, n_max, None, &mut profile) {
            Ok(b) => Some(PeriodicOut {
                c: b.c,
                mu: b.mu,
                j_star: b.j_star,
                trace_kappa: b.trace_kappa,
                value_at_n_max: b.value,
            }),
            Err(Error::NoContractiveChannel) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mu = periodic.as_ref().map_or(1.0 - mixing.threshold_r, |p| p.mu);
    let mut measured_c = Vec::new();
    let mut ergodic = Vec::new();
    let mut trajectories = Vec::new();
    let rho0 = DensityOperator::basis(schedule.dim(), 0);
    for &dir in &mixing.directions {
        let per_dir: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.direction == dir.as_str())
            .map(|r| (r.n, r.diameter))
            .collect();
        let c = per_dir
            .iter()
            .map(|&(n, d)| if mu > 0.0 { d / mu.powi(n as i32) } else { f64::INFINITY })
            .fold(0.0, f64::max);
        measured_c.push(DirectionValue {
            direction: dir.as_str(),
            value: c,
        });
        let avg = ergodic_average(schedule, n_max, dir)?;
        ergodic.push(DirectionValue {
            direction: dir.as_str(),
            value: diameter_estimate(&avg, mixing.diameter_samples, mixing.seed)?,
        });
        let t = trajectory(schedule, &rho0, n_max, dir)?;
        trajectories.push(TrajectoryOut {
            direction: dir.as_str(),
            increments: t.increments(),
            alignment: t.alignment.clone(),
        });
    }
    Ok(FullReport {
        dim: schedule.dim(),
        n_max,
        seed: mixing.seed,
        kappa,
        rows,
        measured_c,
        ergodic_average_diameter: ergodic,
        periodic_bound: periodic,
        trajectories,
    })
}

/// Where a report goes: the explicit output path (resolved against the
/// output-directory override when relative), `<command>.<ext>` inside the
/// override directory, or standard output.
pub fn output_path(config: &RunConfig, out_dir: Option<&Path>) -> Option<PathBuf> {
    match (&config.output, out_dir) {
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => Some(dir.join(format!("{}.{}", config.command.as_str(), config.format.extension()))),
        (None, None) => None,
    }
}

#[derive(Debug, Parser)]
#[command(name = "qmix", version, about = "Mixing diagnostics for inhomogeneous quantum channel sequences")]
pub struct Args {
    /// JSON run configuration; `-` reads standard input.
    pub config: Option<PathBuf>,
    /// Built-in example configuration.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides the command named in the configuration.
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn read_config(path: &Path) -> std::io::Result<String> {
    if path.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())
    } else {
        std::fs::read_to_string(path)
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args(args: Args) -> i32 {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not configure thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return EXIT_VALIDATION;
            }
        }
    }
    let overrides = Overrides {
        command: args.command,
        preset: args.preset,
        output: args.output,
        format: args.format,
    };
    let parsed = match &args.config {
        Some(path) => match read_config(path) {
            Ok(text) => parse_config_with(&text, &overrides),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return EXIT_VALIDATION;
            }
        },
        None if overrides.preset.is_some() => validate(RawConfig::default(), &overrides),
        None => {
            eprintln!("error: give a configuration file or --preset");
            return EXIT_VALIDATION;
        }
    };
    let config = match parsed {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERICAL;
        }
    };
    let out_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let written = match output_path(&config, out_dir.as_deref()) {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                if let Err(e) = std::fs::create_dir_all(parent) {
                    eprintln!("error: cannot create {}: {e}", parent.display());
                    return EXIT_NUMERICAL;
                }
            }
            std::fs::write(&path, report.as_bytes())
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(report.as_bytes()).and_then(|_| out.flush())
        }
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            EXIT_NUMERICAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_error(text: &str) -> (String, String) {
        match parse_config(text) {
            Err(Error::Config { path, message }) => (path, message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn format_g_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (-2.25, "-2.25"),
            (1.0 / 3.0, "0.333333333333"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (1e-4, "0.0001"),
            (1.5e-5, "1.5e-05"),
            (2.0 / 3.0 * 1e-7, "6.66666666667e-08"),
            (1e100, "1e+100"),
            (0.1 + 0.2, "0.3"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x, 12), want, "x = {x:e}");
        }
        assert_eq!(format_g(f64::NAN, 12), "nan");
    }

    #[test]
    fn minimal_depolarizing_simulate() {
        let text = r#"{
            "command": "simulate", "seed": 3, "n_max": 4,
            "schedule": {"kind": "periodic", "channels": [{"type": "depolarizing", "dim": 2, "p": 0.3}]}
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.command, Command::Simulate);
        assert_eq!(cfg.format, Format::Csv);
        assert!(matches!(cfg.target, Target::Process { .. }));
    }

    #[test]
    fn stochastic_row_error_path() {
        let text = r#"{
            "command": "classical", "n_max": 3,
            "schedule": {"kind": "classical", "matrices": [{"rows": [[0.5, 0.5], [0.4, 0.5]]}]}
        }"#;
        let (path, _) = config_error(text);
        assert_eq!(path, "/schedule/matrices/0/rows/1");
    }

    #[test]
    fn unknown_field_rejected() {
        let (path, msg) = config_error(r#"{"command": "simulate", "sed": 1}"#);
        assert_eq!(path, "/sed");
        assert!(msg.contains("unknown field"));
        let (path, _) = config_error(
            r#"{"command": "simulate", "seed": 1, "n_max": 2, "nesting": {"enabled": true, "colour": 1}}"#,
        );
        assert_eq!(path, "/nesting/colour");
    }

    #[test]
    fn missing_seed_rejected() {
        let text = r#"{"command": "simulate", "n_max": 2,
            "schedule": {"kind": "periodic", "channels": [{"type": "identity", "dim": 2}]}}"#;
        assert_eq!(config_error(text).0, "/seed");
    }

    #[test]
    fn non_hermitian_observable_rejected() {
        let text = r#"{"command": "mps", "n_max": 4,
            "mps": {"bond_dim": 2, "phys_dim": 2, "sites": {"random": {"seed": 1, "n": 4}},
                    "observable": {"window": [1, 1], "matrix": [[[1,0],[1,0]],[[0,0],[1,0]]]}}}"#;
        assert_eq!(config_error(text).0, "/mps/observable/matrix");
    }

    #[test]
    fn non_tp_kraus_rejected() {
        let text = r#"{"command": "analyze-channel",
            "channel": {"type": "kraus", "operators": [[[[2,0],[0,0]],[[0,0],[1,0]]]]}}"#;
        assert_eq!(config_error(text).0, "/channel/operators");
    }

    #[test]
    fn exp1_preset_expands_to_closed_form_matrices() {
        let cfg = validate(
            RawConfig {
                command: Some(Command::Classical),
                preset: Some(Preset::ExampleExp1),
                ..RawConfig::default()
            },
            &Overrides::default(),
        )
        .unwrap();
        let Target::Classical(source) = cfg.target else { panic!("classical target") };
        for k in 0..8 {
            let m = source.matrix(k).unwrap();
            let half = (k / 2) as i32;
            let first = if k % 2 == 0 {
                0.5f64.powi(half)
            } else {
                1.0 - 1.0 / (2 * half + 1) as f64
            };
            for row in 0..2 {
                assert!((m.get(row, 0) - first).abs() < 1e-15);
                assert!((m.get(row, 1) - (1.0 - first)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn analyze_depolarizing() {
        let text = r#"{"command": "analyze-channel", "channel": {"type": "depolarizing", "dim": 2, "p": 0.3}}"#;
        let out = run(&parse_config(text).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let t = v["trace_lower_bound"].as_f64().unwrap();
        assert!((0.3 - 4.0 * 5e-3..=0.3).contains(&t));
        assert!((v["contraction_coefficient"].as_f64().unwrap() - (1.0 - t)).abs() < 1e-15);
        assert!(out.ends_with('\n') && !out.contains('\r'));
    }

    #[test]
    fn oscillation_preset_simulate() {
        let cfg = validate(
            RawConfig {
                preset: Some(Preset::ExampleOscillation),
                ..RawConfig::default()
            },
            &Overrides::default(),
        )
        .unwrap();
        let out = run(&cfg).unwrap();
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), "n,direction,diameter,md_product_bound,big_n,mu,two_mu_pow_bign,nesting");
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            assert!(cols[2].parse::<f64>().unwrap() < 1e-12);
            if cols[1] == "forward" {
                assert_eq!(cols[7], "violated");
            }
        }
    }

    #[test]
    fn output_path_resolution() {
        let mut cfg = parse_config(r#"{"command": "analyze-channel", "channel": {"type": "identity", "dim": 2}}"#).unwrap();
        assert_eq!(output_path(&cfg, None), None);
        assert_eq!(output_path(&cfg, Some(Path::new("/tmp/o"))), Some(PathBuf::from("/tmp/o/analyze-channel.json")));
        cfg.output = Some(PathBuf::from("r.json"));
        assert_eq!(output_path(&cfg, Some(Path::new("/tmp/o"))), Some(PathBuf::from("/tmp/o/r.json")));
    }
}
