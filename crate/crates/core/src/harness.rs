//! Seeded multi-run experiments, aggregation and CSV output.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{run_experiment, AgentConfig, RunResult};
use crate::envs::{EnvKind, EnvSpec, TabularErgodic};
use crate::error::{invalid, Error, Result};
use crate::mdp::optimal_policy;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "AAPI_THREADS";
/// CSV header of aggregated learning curves.
pub const CSV_HEADER: &str = "step,cost_mean,cost_std,regret_mean,regret_std";

fn default_runs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Logging stride; defaults to `max(1, T / 2000)`.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, agent: AgentConfig) -> Self {
        Self {
            env,
            agent,
            runs: default_runs(),
            base_seed: 0,
            stride: None,
            out: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(invalid("need at least one run"));
        }
        if self.stride == Some(0) {
            return Err(invalid("stride must be positive"));
        }
        self.agent.validate()
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.agent.total_steps() / 2000).max(1))
    }
}

/// Worker count: the request (or the machine's parallelism), capped by
/// `AAPI_THREADS` when set.
pub fn thread_count(requested: Option<usize>) -> usize {
    let base = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// Runs `f` inside a pool of [`thread_count`] workers.
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(threads))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Logged steps `stride, 2·stride, …`, always ending at `total`.
pub fn logged_steps(total: usize, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (1..=total / stride).map(|i| i * stride).collect();
    if steps.last() != Some(&total) && total > 0 {
        steps.push(total);
    }
    steps
}

/// Runs every seed `base_seed + i` and maps each result through `f`, in
/// seed order. Runs execute in parallel; any failure aborts with its seed.
pub fn run_many<T, F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RunResult) -> Result<T> + Sync,
{
    cfg.validate()?;
    with_pool(cfg.threads, || {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.base_seed.wrapping_add(i as u64);
                run_experiment(&cfg.agent, &cfg.env, seed)
                    .and_then(&f)
                    .map_err(|e| Error::RunFailed {
                        seed,
                        source: Box::new(e),
                    })
            })
            .collect()
    })?
}

/// Running cost `−(Σ_{s≤t} r_s)/t` and regret `t λ* − Σ_{s≤t} r_s` at the
/// logged steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub cost: Vec<f64>,
    pub regret: Option<Vec<f64>>,
}

pub fn curves(rewards: &[f64], steps: &[usize], optimal_gain: Option<f64>) -> Curves {
    let mut cost = Vec::with_capacity(steps.len());
    let mut regret = optimal_gain.map(|_| Vec::with_capacity(steps.len()));
    let mut sum = 0.0;
    let mut t = 0;
    for &s in steps {
        while t < s {
            sum += rewards[t];
            t += 1;
        }
        cost.push(-sum / s as f64);
        if let (Some(r), Some(g)) = (regret.as_mut(), optimal_gain) {
            r.push(s as f64 * g - sum);
        }
    }
    Curves { cost, regret }
}

/// Optimal gain of the environment when an exact comparator exists.
pub fn optimal_gain(env: &EnvSpec) -> Result<Option<f64>> {
    match env.kind {
        EnvKind::Tabular => {
            let mdp = TabularErgodic::new(env.size, env.actions)?.model();
            Ok(Some(optimal_policy(&mdp)?.1.gain))
        }
        _ => Ok(None),
    }
}

/// Per-step mean and population standard deviation across traces
/// (Welford's recurrence).
pub fn aggregate(traces: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = traces.first().map(Vec::len).ok_or_else(|| invalid("no traces to aggregate"))?;
    if traces.iter().any(|t| t.len() != len) {
        return Err(invalid("traces have different lengths"));
    }
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for (n, trace) in traces.iter().enumerate() {
        let n = (n + 1) as f64;
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(trace) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }
    let n = traces.len() as f64;
    let std = m2.into_iter().map(|s| (s / n).max(0.0).sqrt()).collect();
    Ok((mean, std))
}

/// Aggregated learning curves of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteTable {
    pub steps: Vec<usize>,
    pub cost_mean: Vec<f64>,
    pub cost_std: Vec<f64>,
    pub regret: Option<(Vec<f64>, Vec<f64>)>,
}

impl SuiteTable {
    pub fn from_curves(steps: Vec<usize>, runs: &[Curves]) -> Result<Self> {
        let costs: Vec<Vec<f64>> = runs.iter().map(|c| c.cost.clone()).collect();
        let (cost_mean, cost_std) = aggregate(&costs)?;
        let regret = match runs.iter().map(|c| c.regret.clone()).collect::<Option<Vec<_>>>() {
            Some(r) => Some(aggregate(&r)?),
            None => None,
        };
        Ok(Self {
            steps,
            cost_mean,
            cost_std,
            regret,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for (i, step) in self.steps.iter().enumerate() {
            let (rm, rs) = match &self.regret {
                Some((m, s)) => (format_g(m[i]), format_g(s[i])),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{step},{},{},{rm},{rs}",
                format_g(self.cost_mean[i]),
                format_g(self.cost_std[i])
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }
}

/// Runs a suite, aggregates the curves and writes the CSV if an output
/// path is configured.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteTable> {
    let steps = logged_steps(cfg.agent.total_steps(), cfg.stride());
    let gain = optimal_gain(&cfg.env)?;
    let runs = run_many(cfg, |run| Ok(curves(&run.rewards, &steps, gain)))?;
    let table = SuiteTable::from_curves(steps, &runs)?;
    if let Some(path) = &cfg.out {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(table)
}

/// C's `%.10g`.
pub fn format_g(x: f64) -> String {
    format_g_prec(x, 10)
}

/// C's `%.{p}g` for `p ≥ 1`.
pub fn format_g_prec(x: f64, p: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = p.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp >= -4 && exp < p as i32 {
        let fixed = format!("{:.*}", (p as i32 - 1 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Trend statistics for learning-curve checks.
pub mod stats {
    use crate::error::{invalid, Result};

    /// Mann–Kendall trend statistic with its tie-corrected variance and
    /// continuity-corrected normal score.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct MannKendall {
        pub s: f64,
        pub variance: f64,
        pub z: f64,
    }

    /// One-sided 5% critical value of the standard normal.
    pub const Z_05: f64 = 1.6448536269514722;

    pub fn mann_kendall(series: &[f64]) -> Result<MannKendall> {
        let n = series.len();
        if n < 3 {
            return Err(invalid("the trend test needs at least three points"));
        }
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += match series[j].partial_cmp(&series[i]) {
                    Some(std::cmp::Ordering::Greater) => 1,
                    Some(std::cmp::Ordering::Less) => -1,
                    _ => 0,
                };
            }
        }
        let mut sorted = series.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut ties = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            ties += t * (t - 1.0) * (2.0 * t + 5.0);
            i = j + 1;
        }
        let nf = n as f64;
        let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
        let s = s as f64;
        let z = if variance <= 0.0 || s == 0.0 {
            0.0
        } else if s > 0.0 {
            (s - 1.0) / variance.sqrt()
        } else {
            (s + 1.0) / variance.sqrt()
        };
        Ok(MannKendall { s, variance, z })
    }

    /// Least-squares slope of `ln y` against `ln x`.
    pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(invalid("need two or more paired points"));
        }
        if x.iter().chain(y).any(|&v| !(v > 0.0)) {
            return Err(invalid("log-log slope needs positive values"));
        }
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
        if sxx == 0.0 {
            return Err(invalid("x values are all equal"));
        }
        Ok(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::stats::*;
    use super::*;
    use crate::agents::Variant;

    #[test]
    fn format_matches_printf() {
        let cases = [
            (0.0, "0"),
            (-0.0, "-0"),
            (1.0, "1"),
            (-1.0, "-1"),
            (0.1, "0.1"),
            (100.0, "100"),
            (1.0 / 3.0, "0.3333333333"),
            (-2.0 / 3.0, "-0.6666666667"),
            (1e-5, "1e-05"),
            (0.0001, "0.0001"),
            (123456789012.0, "1.23456789e+11"),
            (1e10, "1e+10"),
            (9999999999.5, "1e+10"),
            (999999999.0, "999999999"),
            (1.5e-300, "1.5e-300"),
            (12345.678901234, "12345.6789"),
            (f64::NAN, "nan"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x), want, "{x:e}");
        }
    }

    #[test]
    fn logged_steps_cover_the_end() {
        assert_eq!(logged_steps(10, 3), vec![3, 6, 9, 10]);
        assert_eq!(logged_steps(9, 3), vec![3, 6, 9]);
        assert_eq!(logged_steps(4, 1), vec![1, 2, 3, 4]);
    }

    #[test]
    fn cost_of_constant_rewards() {
        let c = curves(&[1.0; 10], &[2, 5, 10], Some(1.5));
        assert_eq!(c.cost, vec![-1.0; 3]);
        assert_eq!(c.regret.unwrap(), vec![1.0, 2.5, 5.0]);
    }

    #[test]
    fn aggregate_examples() {
        let (m, s) = aggregate(&[vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(m, vec![1.0, 5.0]);
        assert_eq!(s, vec![1.0, 0.0]);
        let (m, s) = aggregate(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!((m, s), (vec![3.0, -1.0], vec![0.0, 0.0]));
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traces: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..200).map(|_| rng.random_range(-5.0..5.0) + 100.0).collect())
            .collect();
        let (m, s) = aggregate(&traces).unwrap();
        for j in 0..200 {
            let mean = traces.iter().map(|t| t[j]).sum::<f64>() / 50.0;
            let var = traces.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((m[j] - mean).abs() < 1e-12);
            assert!((s[j] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let table = SuiteTable {
            steps: vec![1, 2],
            cost_mean: vec![-0.5, -0.25],
            cost_std: vec![0.0, 0.125],
            regret: None,
        };
        assert_eq!(table.to_csv_string(), format!("{CSV_HEADER}\n1,-0.5,0,,\n2,-0.25,0.125,,\n"));
    }

    #[test]
    fn single_run_suite_has_zero_spread() {
        let mut cfg = ExperimentConfig::new(EnvSpec::tabular(3, 2), AgentConfig::new(Variant::Aapi, 20, 3, 0.2));
        cfg.runs = 1;
        cfg.stride = Some(7);
        let table = run_suite(&cfg).unwrap();
        assert_eq!(table.steps, vec![7, 14, 21, 28, 35, 42, 49, 56, 60]);
        assert!(table.cost_std.iter().all(|&s| s == 0.0));
        assert!(table.regret.as_ref().unwrap().1.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn suites_are_reproducible_and_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(EnvSpec::deepsea(4), AgentConfig::new(Variant::Kaapi, 20, 5, 0.2));
        cfg.runs = 3;
        cfg.out = Some(dir.path().join("a.csv"));
        let a = run_suite(&cfg).unwrap();
        cfg.out = Some(dir.path().join("b.csv"));
        let b = run_suite(&cfg).unwrap();
        assert_eq!(a, b);
        let fa = std::fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(fa, std::fs::read(dir.path().join("b.csv")).unwrap());
        assert!(String::from_utf8(fa).unwrap().lines().skip(1).all(|l| l.ends_with(",,")));
        assert_eq!(cfg.stride(), 1);
    }

    #[test]
    fn config_defaults_from_json() {
        let json = r#"{"env":{"kind":"cartpole","size":0},"agent":{"variant":"aapi","tau":100,"phases":10,"eta":0.1}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.runs, 50);
        assert_eq!(cfg.env.actions, 2);
        assert!(cfg.out.is_none());
    }

    #[test]
    fn mann_kendall_monotone_series() {
        let down: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        let mk = mann_kendall(&down).unwrap();
        assert_eq!(mk.s, -45.0);
        assert_eq!(mk.variance, 10.0 * 9.0 * 25.0 / 18.0);
        assert!(mk.z < -Z_05);
        let flat = mann_kendall(&[1.0; 5]).unwrap();
        assert_eq!((flat.s, flat.variance, flat.z), (0.0, 0.0, 0.0));
        // ties: one pair tied among four points
        let mk = mann_kendall(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(mk.s, 5.0);
        assert_eq!(mk.variance, (4.0 * 3.0 * 13.0 - 2.0 * 1.0 * 9.0) / 18.0);
    }

    #[test]
    fn slope_of_power_law() {
        let x: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(0.7)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 0.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    }

    proptest! {
        #[test]
        fn format_round_trips_ten_digits(x in -1e12f64..1e12) {
            let s = format_g(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1e-300));
        }
    }
}
