//! Evaluation, sample-efficiency accounting, strategy-overhead timing and
//! the density/TD-error correlation diagnostic.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::envs::{rollout, EnvSpec};
use crate::error::{CdpError, Result};
use crate::replay::Strategy;
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "epoch,cumulative_samples,mean_success_rate,strategy,seed,overhead_seconds,pearson_r";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: usize,
    pub mean_success_rate: f64,
    pub cumulative_env_samples: u64,
    /// Time spent in density fitting/refresh (CDP) or priority writes (PER).
    pub strategy_overhead_seconds: f64,
    pub pearson_r: Option<f64>,
}

/// Fraction of `episodes` whose final step reaches the goal under `policy`.
pub fn evaluate_policy<T, R, P>(spec: &EnvSpec<T>, episodes: usize, rng: &mut R, mut policy: P) -> Result<f64>
where
    T: Scalar,
    R: Rng + ?Sized,
    P: FnMut(&[T], &[T], &mut R) -> Result<Vec<T>>,
{
    if episodes == 0 {
        return Err(CdpError::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut successes = 0usize;
    for _ in 0..episodes {
        if rollout(spec, rng, &mut policy)?.success {
            successes += 1;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// [`evaluate_policy`] with the agent's greedy policy.
pub fn evaluate_agent<T: Scalar, R: Rng + ?Sized>(agent: &Agent<T>, spec: &EnvSpec<T>, episodes: usize, rng: &mut R) -> Result<f64> {
    evaluate_policy(spec, episodes, rng, |s, g, r| agent.act(s, g, false, r))
}

/// Sample Pearson correlation; `None` when either input is constant.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(CdpError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(CdpError::InvalidConfig("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let my = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a.as_f64() - mx;
        let dy = b.as_f64() - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// First cumulative sample count whose success rate reaches `threshold`.
pub fn samples_to_threshold(curve: &[(u64, f64)], threshold: f64) -> Option<u64> {
    curve.iter().find(|&&(_, rate)| rate >= threshold).map(|&(s, _)| s)
}

/// How per-transition TD errors are collapsed into one trajectory value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdAggregate {
    #[default]
    Mean,
    Max,
    Sum,
}

impl TdAggregate {
    /// Aggregates absolute values.
    pub fn apply<T: Scalar>(self, td: &[T]) -> T {
        let abs = td.iter().map(|v| v.abs());
        match self {
            TdAggregate::Mean if td.is_empty() => T::zero(),
            TdAggregate::Mean => abs.sum::<T>() / T::from_count(td.len()),
            TdAggregate::Max => abs.fold(T::zero(), T::max),
            TdAggregate::Sum => abs.sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Measure wall-clock time (output is not reproducible bit for bit).
    #[default]
    Wall,
    /// Report zero overhead, keeping every output deterministic.
    Disabled,
}

/// Accumulates wall-clock time spent in strategy bookkeeping.
#[derive(Debug, Clone)]
pub struct OverheadTimer {
    mode: TimingMode,
    seconds: f64,
}

impl OverheadTimer {
    pub fn new(mode: TimingMode) -> Self {
        Self { mode, seconds: 0.0 }
    }

    pub fn time<F: FnOnce() -> R, R>(&mut self, f: F) -> R {
        match self.mode {
            TimingMode::Disabled => f(),
            TimingMode::Wall => {
                let start = Instant::now();
                let out = f();
                self.seconds += start.elapsed().as_secs_f64();
                out
            }
        }
    }

    pub fn seconds(&self) -> f64 {
        self.seconds
    }
}

/// Per-epoch CSV log.
pub struct CsvWriter<W: Write> {
    out: W,
    strategy: Strategy,
    seed: u64,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, strategy: Strategy, seed: u64) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out, strategy, seed })
    }

    pub fn write(&mut self, report: &EvalReport) -> Result<()> {
        writeln!(self.out, "{}", csv_row(report, self.strategy, self.seed))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn csv_row(report: &EvalReport, strategy: Strategy, seed: u64) -> String {
    let r = report.pearson_r.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{}",
        report.epoch,
        report.cumulative_env_samples,
        report.mean_success_rate,
        strategy,
        seed,
        report.strategy_overhead_seconds,
        r
    )
}

/// Linear-interpolation quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Interquartile range `Q3 - Q1`.
pub fn iqr(values: &[f64]) -> Option<f64> {
    Some(quantile(values, 0.75)? - quantile(values, 0.25)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson_r(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random::<f64>()).collect();
        let r = pearson_r(&x, &y).unwrap().unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((pearson_r(&xs, &y).unwrap().unwrap() - r).abs() < 1e-12);
        let yn: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &yn).unwrap().unwrap() + r).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(samples_to_threshold(&[(100, 0.2), (200, 0.95)], 0.9), Some(200));
        assert_eq!(samples_to_threshold(&[(100, 0.2), (200, 0.95)], 0.99), None);
        assert_eq!(samples_to_threshold(&[(100, 0.5), (200, 0.5), (300, 0.6)], 0.5), Some(100));
        let curve = [(10, 0.1), (20, 0.4), (30, 0.3), (40, 0.8), (50, 1.0)];
        let mut prev = 0;
        for k in 0..=20 {
            let s = samples_to_threshold(&curve, k as f64 / 20.0).unwrap_or(u64::MAX);
            assert!(s >= prev);
            prev = s;
        }
    }

    fn oracle(spec: &EnvSpec<f64>) -> impl FnMut(&[f64], &[f64], &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let dim = spec.action_dim();
        move |s, g, _| {
            let i = s.iter().zip(g).position(|(a, b)| a != b).unwrap_or(dim - 1);
            let mut a = vec![-1.0; dim];
            a[i] = 1.0;
            Ok(a)
        }
    }

    #[test]
    fn oracle_bitflip_policy_always_succeeds() {
        let spec = EnvSpec::bitflip(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(evaluate_policy(&spec, 200, &mut rng, oracle(&spec)).unwrap(), 1.0);
        assert!(evaluate_policy(&spec, 0, &mut rng, oracle(&spec)).is_err());
    }

    #[test]
    fn random_bitflip_policy_rarely_succeeds() {
        let spec = EnvSpec {
            kind: EnvKind::Bitflip { bits: 16 },
            ..EnvSpec::bitflip(16)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rate = evaluate_policy(&spec, 500, &mut rng, |_, _, r| Ok((0..17).map(|_| r.random_range(-1.0..1.0)).collect())).unwrap();
        assert!(rate < 0.05);
    }

    #[test]
    fn td_aggregates() {
        let td = [-1.0, 3.0, -2.0];
        assert_eq!(TdAggregate::Mean.apply(&td), 2.0);
        assert_eq!(TdAggregate::Max.apply(&td), 3.0);
        assert_eq!(TdAggregate::Sum.apply(&td), 6.0);
    }

    #[test]
    fn csv_rows() {
        let mut w = CsvWriter::new(Vec::new(), Strategy::Cdp, 3).unwrap();
        let mut report = EvalReport {
            epoch: 1,
            mean_success_rate: 0.25,
            cumulative_env_samples: 128,
            strategy_overhead_seconds: 0.0,
            pearson_r: None,
        };
        w.write(&report).unwrap();
        report.pearson_r = Some(-0.5);
        w.write(&report).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n1,128,0.25,cdp,3,0,\n1,128,0.25,cdp,3,0,-0.5\n"));
    }

    #[test]
    fn disabled_timer_reports_zero() {
        let mut t = OverheadTimer::new(TimingMode::Disabled);
        assert_eq!(t.time(|| 5), 5);
        assert_eq!(t.seconds(), 0.0);
        let mut w = OverheadTimer::new(TimingMode::Wall);
        w.time(|| std::thread::sleep(std::time::Duration::from_millis(2)));
        assert!(w.seconds() > 0.0);
    }

    #[test]
    fn quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), Some(3.0));
        assert_eq!(iqr(&v), Some(2.0));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
        assert_eq!(median(&[]), None);
    }
}
