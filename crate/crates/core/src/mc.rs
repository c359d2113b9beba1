//! Monte Carlo scenarios comparing EKF and TIE-EKF under tag installation error.
//!
//! Each iteration draws one perturbed ("as installed") tag map, one set of noisy motion inputs
//! and pixel observations, and one initial estimate. Both filters are then run on exactly that
//! data against the nominal map, so the paired RMSE difference reflects only the estimator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FilterMode, FilterState, UpdateOptions};
use crate::lie::{exp_se3, sample_twist, Cov6};
use crate::rng::{iteration_seed, stream_rng, Stream};
use crate::sim::{
    corrupt_inputs, generate_trajectory, run_filter, synthesize_observations, write_timeseries,
    PixelNoise, RunInputs, RunRecord, Scene, Trajectory, TrajectorySpec,
};
use crate::tags::{build_sigma, perturb_map, PerturbationSpec, TagId, TagMap};

/// Id of the middle tag in the default wall layout.
pub const MIDDLE_TAG: TagId = 1;
pub const DEFAULT_BASE_SEED: u64 = 20_220_525;
pub const DEFAULT_ITERATIONS: usize = 200;
pub const EXTREME_ITERATIONS: usize = 400;

/// Installation-error level of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// In-plane, sigma_x = sigma_z = 0.01 m, sigma_theta_y = 1 deg.
    Low,
    /// In-plane, sigma_x = sigma_z = 0.05 m, sigma_theta_y = 5 deg.
    High,
    /// All axes, 0.05 m and 5 deg.
    Extreme,
    Custom(PerturbationSpec),
}

impl Level {
    pub fn spec(&self) -> PerturbationSpec {
        match self {
            Level::Low => PerturbationSpec::in_plane(0.01, 1.0),
            Level::High => PerturbationSpec::in_plane(0.05, 5.0),
            Level::Extreme => PerturbationSpec::isotropic(0.05, 5.0),
            Level::Custom(spec) => *spec,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::High => "high",
            Level::Extreme => "extreme",
            Level::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Key into the experiment's trajectory table.
    pub trajectory: String,
    pub perturbed_ids: Vec<TagId>,
    pub level: Level,
    pub iterations: usize,
    pub base_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "scenario {}: iterations must be >= 1",
                self.name
            )));
        }
        self.level.spec().validate()
    }

    pub fn perturbed_set(&self) -> BTreeSet<TagId> {
        self.perturbed_ids.iter().copied().collect()
    }
}

/// single/all x low/high on SLS and 3DC (200 iterations each), plus extreme-3DC (400).
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for trajectory in ["SLS", "3DC"] {
        for (scope, ids) in [("single", vec![MIDDLE_TAG]), ("all", vec![0, 1, 2])] {
            for level in [Level::Low, Level::High] {
                out.push(ScenarioConfig {
                    name: format!("{scope}-{}-{trajectory}", level.name()),
                    trajectory: trajectory.to_string(),
                    perturbed_ids: ids.clone(),
                    level,
                    iterations: DEFAULT_ITERATIONS,
                    base_seed: DEFAULT_BASE_SEED,
                });
            }
        }
    }
    out.push(ScenarioConfig {
        name: "extreme-3DC".into(),
        trajectory: "3DC".into(),
        perturbed_ids: vec![0, 1, 2],
        level: Level::Extreme,
        iterations: EXTREME_ITERATIONS,
        base_seed: DEFAULT_BASE_SEED,
    });
    out
}

/// Runtime form of an experiment configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub scene: Scene,
    pub trajectories: BTreeMap<String, TrajectorySpec>,
    /// Input noise standard deviations, `[m/s, rad/s]`; `Q = diag(sigma^2 dt^2)`.
    pub input_sigma: [f64; 2],
    /// Whether the simulated inputs actually carry the noise `Q` describes.
    pub corrupt_inputs: bool,
    pub pixel_noise: PixelNoise,
    pub initial_cov: Cov6,
    /// Draw the initial estimate from `N(truth, initial_cov)`; otherwise start at the truth.
    pub sample_initial_error: bool,
    pub per_corner_independent: bool,
    pub divergence_threshold: f64,
}

impl Default for Experiment {
    fn default() -> Self {
        let mut trajectories = BTreeMap::new();
        trajectories.insert("SLS".into(), TrajectorySpec::straight_line_default());
        trajectories.insert("SLL".into(), TrajectorySpec::straight_line_default());
        trajectories.insert("3DC".into(), TrajectorySpec::circle_default());
        Experiment {
            scene: Scene::default_wall(),
            trajectories,
            input_sigma: [0.05, 0.05],
            corrupt_inputs: true,
            pixel_noise: PixelNoise::matched(1.0),
            initial_cov: Cov6::identity() * 1e-4,
            sample_initial_error: true,
            per_corner_independent: false,
            divergence_threshold: crate::sim::DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }
}

impl Experiment {
    pub fn process_noise(&self, dt: f64) -> Cov6 {
        let t = (self.input_sigma[0] * dt).powi(2);
        let r = (self.input_sigma[1] * dt).powi(2);
        Cov6::from_diagonal(&nalgebra::Vector6::new(t, t, t, r, r, r))
    }

    pub fn trajectory(&self, name: &str) -> Result<Trajectory> {
        let spec = self
            .trajectories
            .get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown trajectory {name}")))?;
        generate_trajectory(spec, &self.process_noise(spec.dt), &self.scene)
    }

    /// Nominal map handed to the filters: the scene map with the scenario's covariance on the
    /// perturbed tags.
    pub fn nominal_map(&self, scenario: &ScenarioConfig) -> Result<TagMap> {
        let sigma = build_sigma(&scenario.level.spec());
        self.scene.map.with_sigma(&scenario.perturbed_set(), &sigma)
    }

    pub fn update_options(&self, mode: FilterMode) -> UpdateOptions {
        let mut opts = UpdateOptions::new(mode);
        opts.per_corner_independent = self.per_corner_independent;
        opts
    }

    /// Draws the data of one iteration. Every noise source reads its own stream of `seed`.
    pub fn simulate(
        &self,
        trajectory: &Trajectory,
        nominal_map: &TagMap,
        perturbed: &BTreeSet<TagId>,
        seed: u64,
    ) -> Result<RunInputs> {
        let true_map = perturb_map(
            nominal_map,
            perturbed,
            &mut stream_rng(seed, Stream::TagPerturbation),
        )?;
        let inputs = if self.corrupt_inputs {
            corrupt_inputs(
                &trajectory.inputs,
                &mut stream_rng(seed, Stream::InputNoise),
            )?
        } else {
            trajectory.inputs.clone()
        };
        let observations = synthesize_observations(
            &trajectory.poses,
            &true_map,
            &self.scene,
            self.pixel_noise,
            &mut stream_rng(seed, Stream::PixelNoise),
        );
        let truth0 = trajectory.poses[0];
        let start = if self.sample_initial_error {
            let d = sample_twist(
                &self.initial_cov,
                &mut stream_rng(seed, Stream::InitialState),
            )?;
            exp_se3(&d) * truth0
        } else {
            truth0
        };
        Ok(RunInputs {
            dt: trajectory.dt,
            truth: trajectory.poses.clone(),
            inputs,
            observations,
            initial_state: FilterState::new(start, self.initial_cov),
        })
    }
}

/// Order statistics of one method's RMSE samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseStats {
    pub count: usize,
    pub median: f64,
    /// Mean over non-diverged samples only (NaN if every sample diverged).
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub divergence_fraction: f64,
}

/// Percentile of sorted data by linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregates RMSE samples. Order statistics use every sample; a sample counts as diverged
/// when it exceeds `threshold` (or is not finite) and is then left out of the mean only.
pub fn summarize(samples: &[f64], threshold: f64) -> Result<RmseStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|&v| v <= threshold)
        .collect();
    let diverged = samples.len() - kept.len();
    let mean = if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    let q1 = percentile(&sorted, 0.25);
    let q3 = percentile(&sorted, 0.75);
    Ok(RmseStats {
        count: samples.len(),
        median: percentile(&sorted, 0.5),
        mean,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        q1,
        q3,
        iqr: q3 - q1,
        divergence_fraction: diverged as f64 / samples.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSample {
    pub method: FilterMode,
    pub rmse: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSample {
    pub iteration: usize,
    pub seed: u64,
    /// SHA-256 of the data both filters consumed.
    pub digest: String,
    pub methods: Vec<MethodSample>,
}

impl IterationSample {
    pub fn rmse(&self, mode: FilterMode) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == mode)
            .map(|m| m.rmse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: FilterMode,
    #[serde(flatten)]
    pub stats: RmseStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub trajectory: String,
    pub level: Level,
    pub iterations: usize,
    pub base_seed: u64,
    pub divergence_threshold: f64,
    pub methods: Vec<MethodSummary>,
    pub samples: Vec<IterationSample>,
}

impl ScenarioSummary {
    pub fn method(&self, mode: FilterMode) -> Option<&RmseStats> {
        self.methods
            .iter()
            .find(|m| m.method == mode)
            .map(|m| &m.stats)
    }
}

/// Time series of one filter run, kept for report output.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub iteration: usize,
    pub method: FilterMode,
    pub records: Vec<RunRecord>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub summary: ScenarioSummary,
    pub traces: Vec<RunTrace>,
}

/// Runs every iteration of `scenario` in parallel and reduces in iteration order.
///
/// Full time series are retained for the first `keep_traces` iterations.
pub fn run_scenario(
    experiment: &Experiment,
    scenario: &ScenarioConfig,
    keep_traces: usize,
) -> Result<ScenarioOutcome> {
    scenario.validate()?;
    let trajectory = experiment.trajectory(&scenario.trajectory)?;
    let nominal = experiment.nominal_map(scenario)?;
    let perturbed = scenario.perturbed_set();

    let results: Vec<Result<(IterationSample, Vec<RunTrace>)>> = (0..scenario.iterations)
        .into_par_iter()
        .map(|iteration| {
            let seed = iteration_seed(scenario.base_seed, iteration as u64);
            let wrap = |e: Error| Error::Iteration {
                iteration,
                seed,
                source: Box::new(e),
            };
            let data = experiment
                .simulate(&trajectory, &nominal, &perturbed, seed)
                .map_err(wrap)?;
            let digest = data.digest();
            log::debug!(
                "{} iteration {iteration} seed {seed:#018x} digest {digest}",
                scenario.name
            );
            let mut methods = Vec::with_capacity(2);
            let mut traces = Vec::new();
            for mode in FilterMode::BOTH {
                let res = run_filter(
                    &data,
                    &nominal,
                    &experiment.scene,
                    &experiment.update_options(mode),
                    experiment.divergence_threshold,
                )
                .map_err(wrap)?;
                methods.push(MethodSample {
                    method: mode,
                    rmse: res.rmse_position,
                    diverged: res.diverged,
                });
                if iteration < keep_traces {
                    traces.push(RunTrace {
                        iteration,
                        method: mode,
                        records: res.records,
                    });
                }
            }
            Ok((
                IterationSample {
                    iteration,
                    seed,
                    digest,
                    methods,
                },
                traces,
            ))
        })
        .collect();

    let mut samples = Vec::with_capacity(scenario.iterations);
    let mut traces = Vec::new();
    for r in results {
        let (s, t) = r?;
        samples.push(s);
        traces.extend(t);
    }

    let methods = FilterMode::BOTH
        .iter()
        .map(|&mode| {
            let values: Vec<f64> = samples.iter().filter_map(|s| s.rmse(mode)).collect();
            Ok(MethodSummary {
                method: mode,
                stats: summarize(&values, experiment.divergence_threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScenarioOutcome {
        summary: ScenarioSummary {
            scenario: scenario.name.clone(),
            trajectory: scenario.trajectory.clone(),
            level: scenario.level,
            iterations: scenario.iterations,
            base_seed: scenario.base_seed,
            divergence_threshold: experiment.divergence_threshold,
            methods,
            samples,
        },
        traces,
    })
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: FilterMode,
    pub iterations: usize,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    pub min_rmse: f64,
    pub max_rmse: f64,
    pub iqr: f64,
    pub divergence_fraction: f64,
}

/// One row of `samples.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub scenario: String,
    pub iteration: usize,
    pub seed: u64,
    pub method: FilterMode,
    pub rmse: f64,
    pub diverged: bool,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario",
    "method",
    "iterations",
    "median_rmse",
    "mean_rmse",
    "min_rmse",
    "max_rmse",
    "iqr",
    "divergence_fraction",
];
pub const SAMPLES_HEADER: [&str; 6] = [
    "scenario",
    "iteration",
    "seed",
    "method",
    "rmse",
    "diverged",
];

pub fn summary_rows(summaries: &[ScenarioSummary]) -> Vec<SummaryRow> {
    summaries
        .iter()
        .flat_map(|s| {
            s.methods.iter().map(move |m| SummaryRow {
                scenario: s.scenario.clone(),
                method: m.method,
                iterations: m.stats.count,
                median_rmse: m.stats.median,
                mean_rmse: m.stats.mean,
                min_rmse: m.stats.min,
                max_rmse: m.stats.max,
                iqr: m.stats.iqr,
                divergence_fraction: m.stats.divergence_fraction,
            })
        })
        .collect()
}

pub fn sample_rows(summaries: &[ScenarioSummary]) -> Vec<SampleRow> {
    summaries
        .iter()
        .flat_map(|s| {
            s.samples.iter().flat_map(move |it| {
                it.methods.iter().map(move |m| SampleRow {
                    scenario: s.scenario.clone(),
                    iteration: it.iteration,
                    seed: it.seed,
                    method: m.method,
                    rmse: m.rmse,
                    diverged: m.diverged,
                })
            })
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleRow>> {
    read_csv(path)
}

/// Rebuilds `summary.csv` rows from `samples.csv` rows alone, preserving first-seen order of
/// scenarios and methods.
pub fn summaries_from_samples(rows: &[SampleRow], threshold: f64) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<(String, FilterMode)> = Vec::new();
    let mut groups: BTreeMap<(String, FilterMode), Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows {
        let key = (row.scenario.clone(), row.method);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups
            .entry(key)
            .or_default()
            .push((row.iteration, row.rmse));
    }
    order
        .into_iter()
        .map(|key| {
            let mut values = groups.remove(&key).unwrap_or_default();
            values.sort_by_key(|v| v.0);
            let rmse: Vec<f64> = values.into_iter().map(|v| v.1).collect();
            let stats = summarize(&rmse, threshold)?;
            Ok(SummaryRow {
                scenario: key.0,
                method: key.1,
                iterations: stats.count,
                median_rmse: stats.median,
                mean_rmse: stats.mean,
                min_rmse: stats.min,
                max_rmse: stats.max,
                iqr: stats.iqr,
                divergence_fraction: stats.divergence_fraction,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub summary_csv: PathBuf,
    pub samples_csv: PathBuf,
    pub summary_json: PathBuf,
    pub timeseries: Vec<PathBuf>,
}

/// Writes `summary.csv`, `samples.csv`, `summary.json` and, for each trace,
/// `timeseries/<scenario>_<method>_<iteration>.csv` into `dir`.
pub fn emit_reports(
    summaries: &[ScenarioSummary],
    traces: &[(String, RunTrace)],
    dir: &Path,
) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let summary_csv = dir.join("summary.csv");
    let samples_csv = dir.join("samples.csv");
    let summary_json = dir.join("summary.json");
    write_csv(&summary_csv, &SUMMARY_HEADER, &summary_rows(summaries))?;
    write_csv(&samples_csv, &SAMPLES_HEADER, &sample_rows(summaries))?;
    let json =
        serde_json::to_string_pretty(summaries).map_err(|e| Error::Config(format!("json: {e}")))?;
    fs::write(&summary_json, json)?;

    let mut timeseries = Vec::new();
    if !traces.is_empty() {
        let ts_dir = dir.join("timeseries");
        fs::create_dir_all(&ts_dir)?;
        for (scenario, trace) in traces {
            let path = ts_dir.join(format!(
                "{scenario}_{}_{:04}.csv",
                trace.method, trace.iteration
            ));
            write_timeseries(&trace.records, BufWriter::new(File::create(&path)?))?;
            timeseries.push(path);
        }
    }
    Ok(ReportPaths {
        summary_csv,
        samples_csv,
        summary_json,
        timeseries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_scenario_table() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 9);
        for s in &all {
            if s.name.starts_with("single") {
                assert_eq!(s.perturbed_ids, vec![MIDDLE_TAG]);
            }
            let expected = if s.name == "extreme-3DC" { 400 } else { 200 };
            assert_eq!(s.iterations, expected);
        }
        let names: BTreeSet<&str> = all.iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains("all-high-3DC"));
        assert!(names.contains("single-low-SLS"));
    }

    #[test]
    fn level_covariances() {
        let d2r = std::f64::consts::PI / 180.0;
        let low = build_sigma(&Level::Low.spec()).diagonal();
        assert_relative_eq!(
            low,
            nalgebra::Vector6::new(1e-4, 0.0, 1e-4, 0.0, d2r * d2r, 0.0),
            epsilon = 1e-18
        );
        let extreme = build_sigma(&Level::Extreme.spec()).diagonal();
        assert!(extreme.iter().all(|&v| v > 0.0));
        assert_relative_eq!(extreme[0], 0.0025, epsilon = 1e-15);
        assert_relative_eq!(extreme[5], (5.0 * d2r).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[1.0, 2.0, 3.0], 5.0).unwrap();
        assert_eq!(s.median, 2.0);
        assert_eq!(s.divergence_fraction, 0.0);
        assert_eq!(s.mean, 2.0);

        let s = summarize(&[1.0, 2.0, 10.0], 5.0).unwrap();
        assert_relative_eq!(s.divergence_fraction, 1.0 / 3.0);
        assert_eq!(s.max, 10.0);
        assert_eq!(s.median, 2.0);
        assert_eq!(s.mean, 1.5);

        assert!(matches!(summarize(&[], 5.0), Err(Error::EmptySamples)));
        let s = summarize(&[7.0, f64::NAN], 5.0).unwrap();
        assert_eq!(s.divergence_fraction, 1.0);
        assert!(s.mean.is_nan());
    }

    /// Sort-based reference: rank r = p (n - 1), interpolate between the neighbours.
    fn reference_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = p * (v.len() as f64 - 1.0);
        let below = r as usize;
        let frac = r - below as f64;
        if below + 1 >= v.len() {
            return v[below];
        }
        v[below] * (1.0 - frac) + v[below + 1] * frac
    }

    #[test]
    fn order_statistics_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let values: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..20) as f64) * 0.5)
                .collect();
            let s = summarize(&values, 5.0).unwrap();
            let q1 = reference_quantile(&values, 0.25);
            let q3 = reference_quantile(&values, 0.75);
            assert_relative_eq!(s.median, reference_quantile(&values, 0.5), epsilon = 1e-12);
            assert_relative_eq!(s.iqr, q3 - q1, epsilon = 1e-12);
        }
    }
}
