//! Experiment runner: rollouts, storage, prioritized hindsight replay,
//! optimization, density refits and evaluation, one epoch at a time.
//!
//! Each epoch runs `episodes_per_epoch` exploratory episodes. After every
//! episode the trajectory is stored (with its density under the last fitted
//! model when the strategy is CDP) and `optimizer_steps_per_episode`
//! updates follow, then one Polyak update. At the end of the epoch CDP
//! refits the mixture on the buffer and refreshes every density, and the
//! greedy policy is evaluated. The first CDP epoch samples uniformly because
//! no model exists yet.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::density::{fit, MixtureModel, VgmmConfig};
use crate::envs::{rollout, EnvSpec};
use crate::error::{CdpError, Result, RunLocation};
use crate::metrics::{csv_row, evaluate_agent, iqr, median, pearson_r, samples_to_threshold, EvalReport, OverheadTimer, TdAggregate, TimingMode, CSV_HEADER};
use crate::relabel::{make_batch, relabel_trajectory, HerConfig};
use crate::replay::{PerConfig, ReplayBuffer, Strategy};
use crate::scalar::Scalar;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar"))]
pub struct ExperimentConfig<T> {
    pub env: EnvSpec<T>,
    pub agent: AgentConfig<T>,
    pub her: HerConfig,
    pub vgmm: VgmmConfig<T>,
    pub per: PerConfig<T>,
    pub strategy: Strategy,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    /// Run directory for the CSV and manifest; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    pub timing: TimingMode,
    /// Epoch of the density/TD-error correlation diagnostic (CDP only);
    /// defaults to the middle epoch.
    pub pearson_epoch: Option<usize>,
    pub td_aggregate: TdAggregate,
    /// Share of uniform probability mixed into CDP sampling.
    pub uniform_mix: T,
    /// Success rate used for sample-efficiency summaries.
    pub success_threshold: f64,
}

impl<T: Scalar> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            env: EnvSpec::bitflip(8),
            agent: AgentConfig::default(),
            her: HerConfig::default(),
            vgmm: VgmmConfig::default(),
            per: PerConfig::default(),
            strategy: Strategy::Cdp,
            epochs: 50,
            episodes_per_epoch: 16,
            eval_episodes: 100,
            buffer_capacity: 1000,
            seed: 0,
            output_dir: None,
            timing: TimingMode::Wall,
            pearson_epoch: None,
            td_aggregate: TdAggregate::Mean,
            uniform_mix: T::zero(),
            success_threshold: 0.9,
        }
    }
}

impl<T: Scalar> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.strategy == Strategy::Cdp {
            self.vgmm.validate()?;
        }
        if self.strategy == Strategy::Per {
            self.per.validate()?;
        }
        let bad = |m: &str| Err(CdpError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.eval_episodes == 0 {
            return bad("epochs, episodes_per_epoch and eval_episodes must be >= 1");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer capacity must be >= 1");
        }
        if let Some(e) = self.pearson_epoch {
            if e == 0 || e > self.epochs {
                return bad("pearson_epoch must lie in 1..=epochs");
            }
        }
        if !(self.uniform_mix >= T::zero() && self.uniform_mix <= T::one()) {
            return bad("uniform_mix must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn effective_pearson_epoch(&self) -> usize {
        self.pearson_epoch.unwrap_or((self.epochs / 2).max(1))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a (possibly partial) JSON config; missing keys keep defaults.
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// How often each piece of strategy bookkeeping ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub episodes: usize,
    pub env_samples: u64,
    pub optimizer_steps: usize,
    pub density_fits: usize,
    pub density_refreshes: usize,
    /// CDP rank recomputations after a store.
    pub priority_recomputes: usize,
    /// PER leaf writes after optimizer steps.
    pub priority_writes: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub counters: RunCounters,
    /// The full CSV log, header included.
    pub csv: String,
    pub run_dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn final_report(&self) -> &EvalReport {
        self.reports.last().expect("a run has at least one epoch")
    }

    /// `(cumulative_samples, success_rate)` per epoch.
    pub fn curve(&self) -> Vec<(u64, f64)> {
        self.reports.iter().map(|r| (r.cumulative_env_samples, r.mean_success_rate)).collect()
    }
}

#[derive(Serialize)]
struct Manifest<'a, T> {
    version: u32,
    crate_version: &'static str,
    /// FNV-1a hash of the serialized config.
    config_hash: String,
    seed: u64,
    strategy: Strategy,
    config: &'a ExperimentConfig<T>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent, reproducible stream `stream` derived from the run seed.
fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn at<V>(epoch: usize, episode: Option<usize>, step: Option<usize>, r: Result<V>) -> Result<V> {
    r.map_err(|e| CdpError::Aborted {
        location: RunLocation { epoch, episode, step },
        source: Box::new(e),
    })
}

/// Runs one experiment; deterministic per `(config, seed)` when timing is
/// disabled (otherwise only the overhead column varies).
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig<T>) -> Result<RunOutcome> {
    config.validate()?;
    let env = config.env;
    let horizon = env.horizon;
    let space = env.goal_space()?;
    let seed = config.seed ^ env.seed.rotate_left(32);
    let mut init_rng = stream(seed, 0);
    let mut rollout_rng = stream(seed, 1);
    let mut batch_rng = stream(seed, 2);
    let mut eval_rng = stream(seed, 3);
    let mut relabel_rng = stream(seed, 4);

    let mut agent = Agent::new(
        config.agent.clone(),
        env.state_dim(),
        env.goal_dim(),
        env.action_dim(),
        env.action_bound(),
        &mut init_rng,
    )?
    .with_action_kind(env.action_kind());
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, horizon, config.strategy, config.per)?;
    buffer.set_uniform_mix(config.uniform_mix)?;
    let mut model: Option<MixtureModel<T>> = None;
    let mut timer = OverheadTimer::new(config.timing);
    let mut counters = RunCounters::default();
    let mut reports = Vec::with_capacity(config.epochs);
    let pearson_epoch = config.effective_pearson_epoch();
    let per_beta0 = config.per.beta;

    let run_dir = match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_manifest(dir, config)?;
            Some(dir.clone())
        }
        None => None,
    };
    let mut csv_file = match &run_dir {
        Some(dir) => Some(fs::File::create(dir.join("progress.csv"))?),
        None => None,
    };
    let mut csv = format!("{CSV_HEADER}\n");
    if let Some(f) = csv_file.as_mut() {
        f.write_all(csv.as_bytes())?;
    }

    for epoch in 1..=config.epochs {
        if config.strategy == Strategy::Per && config.epochs > 1 {
            let frac = T::from_count(epoch - 1) / T::from_count(config.epochs - 1);
            buffer.set_per_beta(per_beta0 + (T::one() - per_beta0) * frac);
        }
        for episode in 0..config.episodes_per_epoch {
            let ep = Some(episode);
            let rollout_out = rollout(&env, &mut rollout_rng, |s, g, r| agent.act(s, g, true, r));
            let trajectory = at(epoch, ep, None, rollout_out)?.trajectory;
            counters.episodes += 1;
            counters.env_samples += horizon as u64;
            at(epoch, ep, None, agent.observe_trajectory(&trajectory))?;
            let copy = if config.her.store_relabeled {
                Some(at(epoch, ep, None, relabel_trajectory(&trajectory, &mut relabel_rng, &space))?)
            } else {
                None
            };
            for traj in std::iter::once(trajectory).chain(copy) {
                match config.strategy {
                    Strategy::Cdp => {
                        let stored = timer.time(|| {
                            buffer.store(traj, model.as_ref())?;
                            if model.is_some() {
                                buffer.recompute_priorities()?;
                            }
                            Ok(())
                        });
                        at(epoch, ep, None, stored)?;
                        if model.is_some() {
                            counters.priority_recomputes += 1;
                        }
                    }
                    Strategy::Per => {
                        at(epoch, ep, None, timer.time(|| buffer.store(traj, None)))?;
                    }
                    Strategy::Uniform => {
                        at(epoch, ep, None, buffer.store(traj, None))?;
                    }
                }
            }
            for step in 0..config.agent.optimizer_steps_per_episode {
                let loc = (epoch, ep, Some(step));
                let batch = at(loc.0, loc.1, loc.2, make_batch(&buffer, config.agent.batch_size, &config.her, &mut batch_rng, &space))?;
                let weights = (config.strategy == Strategy::Per).then_some(batch.weights.as_slice());
                let out = at(loc.0, loc.1, loc.2, agent.train_step(&batch.transitions, weights))?;
                counters.optimizer_steps += 1;
                if config.strategy == Strategy::Per {
                    let written = timer.time(|| buffer.update_td_priorities(&batch.origins, &out.abs_td));
                    counters.priority_writes += at(loc.0, loc.1, loc.2, written)?;
                }
            }
            at(epoch, ep, None, agent.polyak_update())?;
        }

        if config.strategy == Strategy::Cdp {
            let mut vgmm = config.vgmm.clone();
            vgmm.seed = vgmm.seed.wrapping_add(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(epoch as u64);
            let fitted = timer.time(|| -> Result<MixtureModel<T>> {
                let m = fit(&buffer.features(), &vgmm)?;
                buffer.refresh_densities(&m)?;
                Ok(m)
            });
            model = Some(at(epoch, None, None, fitted)?);
            counters.density_fits += 1;
            counters.density_refreshes += 1;
        }

        let pearson = if config.strategy == Strategy::Cdp && epoch == pearson_epoch {
            at(epoch, None, None, density_td_correlation(&agent, &mut buffer, config.td_aggregate))?
        } else {
            None
        };

        let success = at(epoch, None, None, evaluate_agent(&agent, &env, config.eval_episodes, &mut eval_rng))?;
        let report = EvalReport {
            epoch,
            mean_success_rate: success,
            cumulative_env_samples: counters.env_samples,
            strategy_overhead_seconds: timer.seconds(),
            pearson_r: pearson,
        };
        let row = csv_row(&report, config.strategy, config.seed);
        log::info!("{row}");
        csv.push_str(&row);
        csv.push('\n');
        if let Some(f) = csv_file.as_mut() {
            writeln!(f, "{row}")?;
            f.flush()?;
        }
        reports.push(report);
    }

    Ok(RunOutcome {
        reports,
        counters,
        csv,
        run_dir,
    })
}

/// Records every stored trajectory's aggregated TD error under the current
/// critic and correlates it with the complementary density.
pub fn density_td_correlation<T: Scalar>(agent: &Agent<T>, buffer: &mut ReplayBuffer<T>, aggregate: TdAggregate) -> Result<Option<f64>> {
    if buffer.len() < 2 {
        return Ok(None);
    }
    let slots: Vec<usize> = buffer.ordered_slots().collect();
    let mut complements = Vec::with_capacity(slots.len());
    let mut tds = Vec::with_capacity(slots.len());
    for slot in slots {
        let traj = buffer.get(slot).expect("ordered slots are occupied");
        let td = aggregate.apply(&agent.td_errors(&traj.transitions)?);
        complements.push(traj.complement);
        tds.push(td);
        buffer.get_mut(slot).expect("ordered slots are occupied").episode_td_error = td;
    }
    pearson_r(&complements, &tds)
}

fn write_manifest<T: Scalar>(dir: &Path, config: &ExperimentConfig<T>) -> Result<()> {
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("{:016x}", fnv1a(serde_json::to_string(config)?.as_bytes())),
        seed: config.seed,
        strategy: config.strategy,
        config,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// One grid cell of a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub final_success_rate: Option<f64>,
    pub samples_to_threshold: Option<u64>,
    pub overhead_seconds: Option<f64>,
    pub error: Option<String>,
}

/// Aggregates over the seeds of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub failures: usize,
    pub final_success_median: Option<f64>,
    pub final_success_iqr: Option<f64>,
    /// Median over seeds; seeds that never reach the threshold count as
    /// infinitely slow, so this is `None` when at least half never did.
    pub samples_to_threshold_median: Option<f64>,
    pub overhead_seconds_median: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub threshold: f64,
    pub cells: Vec<CellResult>,
    pub summary: Vec<StrategySummary>,
}

pub const SUMMARY_HEADER: &str = "strategy,runs,failures,final_success_median,final_success_iqr,samples_to_threshold_median,overhead_seconds_median";

impl Comparison {
    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{SUMMARY_HEADER}\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.strategy,
                s.runs,
                s.failures,
                opt(s.final_success_median),
                opt(s.final_success_iqr),
                opt(s.samples_to_threshold_median),
                opt(s.overhead_seconds_median)
            ));
        }
        out
    }

    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == strategy)
    }
}

/// Summarizes finished cells per strategy, in the order given.
pub fn summarize(cells: &[CellResult], strategies: &[Strategy]) -> Vec<StrategySummary> {
    strategies
        .iter()
        .map(|&strategy| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.strategy == strategy).collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.error.is_none()).collect();
            let finals: Vec<f64> = ok.iter().filter_map(|c| c.final_success_rate).collect();
            let samples: Vec<f64> = ok
                .iter()
                .map(|c| c.samples_to_threshold.map_or(f64::INFINITY, |s| s as f64))
                .collect();
            let overheads: Vec<f64> = ok.iter().filter_map(|c| c.overhead_seconds).collect();
            StrategySummary {
                strategy,
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                final_success_median: median(&finals),
                final_success_iqr: iqr(&finals),
                samples_to_threshold_median: median(&samples).filter(|m| m.is_finite()),
                overhead_seconds_median: median(&overheads),
            }
        })
        .collect()
}

/// Runs every `(strategy, seed)` cell, on up to `jobs` threads, writing
/// each run to `<output_dir>/<strategy>_seed<seed>/` and the summary to
/// `<output_dir>/summary.{csv,json}` when the base config has an output dir.
/// A failing cell is recorded and the grid continues.
pub fn run_comparison<T: Scalar>(base: &ExperimentConfig<T>, strategies: &[Strategy], seeds: &[u64], jobs: usize) -> Result<Comparison> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(CdpError::InvalidConfig("comparison needs at least one strategy and one seed".into()));
    }
    let grid: Vec<(Strategy, u64)> = strategies.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; grid.len()]);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(strategy, seed)) = grid.get(i) else {
            break;
        };
        let mut config = base.clone();
        config.strategy = strategy;
        config.seed = seed;
        config.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("{strategy}_seed{seed}")));
        let cell = match run_experiment(&config) {
            Ok(run) => CellResult {
                strategy,
                seed,
                final_success_rate: Some(run.final_report().mean_success_rate),
                samples_to_threshold: samples_to_threshold(&run.curve(), base.success_threshold),
                overhead_seconds: Some(run.final_report().strategy_overhead_seconds),
                error: None,
            },
            Err(e) => {
                log::error!("{strategy} seed {seed}: {e}");
                CellResult {
                    strategy,
                    seed,
                    final_success_rate: None,
                    samples_to_threshold: None,
                    overhead_seconds: None,
                    error: Some(e.to_string()),
                }
            }
        };
        results.lock().expect("no worker panics while holding the lock")[i] = Some(cell);
    };
    let jobs = jobs.clamp(1, grid.len());
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(&worker);
            }
        });
    }
    let cells: Vec<CellResult> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    let comparison = Comparison {
        threshold: base.success_threshold,
        summary: summarize(&cells, strategies),
        cells,
    };
    if let Some(dir) = &base.output_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.csv"), comparison.summary_csv())?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&comparison)?)?;
    }
    Ok(comparison)
}
