//! Exhaustive grid search over reservoir and readout hyperparameters.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::FeatureMatrix;
use crate::dataset::{make_split, Manifest, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::experiment::{run_trial, split_sequences};
use crate::readout::RidgeLambda;
use crate::reservoir::{QuantizerSpec, ReservoirSpec, Variant};
use crate::rng::{derive_seed, PRNG_FAMILY};

pub const ALPHA_RANGE: (f64, f64) = (0.1, 1.5);
pub const WEIGHT_RANGE: (f64, f64) = (1e-4, 1.0);

/// Grid file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub variant: Variant,
    pub n: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<RidgeLambda>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Reject values outside the usual search ranges.
    #[serde(default = "yes")]
    pub enforce_ranges: bool,
    /// Score on a stratified slice of Train instead of on Test.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
    #[serde(default)]
    pub reset_per_sequence: bool,
    #[serde(default)]
    pub quantizer: QuantizerSpec,
}

fn default_lambdas() -> Vec<RidgeLambda> {
    vec![RidgeLambda::Auto]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn yes() -> bool {
    true
}

fn log_spaced(lo_exp: i32, hi_exp: i32) -> Vec<f64> {
    (lo_exp..=hi_exp).map(|e| 10f64.powi(e)).collect()
}

impl GridSpec {
    /// Full-range default: alpha in 0.1 steps, beta/gamma/rho by decade.
    pub fn default_for(n: usize, variant: Variant) -> Self {
        GridSpec {
            variant,
            n,
            alpha: (1..=15).map(|i| i as f64 / 10.0).collect(),
            beta: log_spaced(-4, 0),
            gamma: log_spaced(-4, 0),
            rho: log_spaced(-4, 0),
            lambda: default_lambdas(),
            seeds: default_seeds(),
            enforce_ranges: true,
            validation_fraction: None,
            reset_per_sequence: false,
            quantizer: QuantizerSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, usize); 7] = [
            ("alpha", self.alpha.len()),
            ("beta", self.beta.len()),
            ("gamma", self.gamma.len()),
            ("rho", self.rho.len()),
            ("lambda", self.lambda.len()),
            ("seeds", self.seeds.len()),
            ("n", self.n),
        ];
        for (name, len) in lists {
            if len == 0 {
                return Err(Error::Config(format!("grid `{name}` is empty")));
            }
        }
        let all = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("rho", &self.rho),
        ];
        for (name, values) in all {
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("grid `{name}` has non-finite value {v}")));
            }
            if !self.enforce_ranges {
                continue;
            }
            let (lo, hi) = if name == "alpha" { ALPHA_RANGE } else { WEIGHT_RANGE };
            if let Some(v) = values.iter().find(|&&v| v < lo || v > hi) {
                return Err(Error::Config(format!(
                    "grid `{name}` value {v} outside [{lo}, {hi}] (set enforce_ranges = false to allow)"
                )));
            }
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("validation_fraction {f} not in (0, 1)")));
            }
        }
        if !self.quantizer.is_valid() {
            return Err(Error::Config("quantizers need at least 2 levels".into()));
        }
        Ok(())
    }

    pub fn trial_count(&self) -> usize {
        self.alpha.len()
            * self.beta.len()
            * self.gamma.len()
            * self.rho.len()
            * self.lambda.len()
            * self.seeds.len()
    }

    /// The Cartesian product, seeds outermost.
    pub fn trials(&self) -> Vec<TrialParams> {
        let mut out = Vec::with_capacity(self.trial_count());
        for &seed in &self.seeds {
            for &alpha in &self.alpha {
                for &beta in &self.beta {
                    for &gamma in &self.gamma {
                        for &rho in &self.rho {
                            for &lambda in &self.lambda {
                                out.push(TrialParams {
                                    variant: self.variant,
                                    n: self.n,
                                    alpha,
                                    beta,
                                    gamma,
                                    rho,
                                    lambda,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: GridSpec = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("grid serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialParams {
    pub variant: Variant,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub lambda: RidgeLambda,
    pub seed: u64,
}

impl TrialParams {
    pub fn reservoir_spec(&self, k: usize, quantizer: QuantizerSpec) -> ReservoirSpec {
        ReservoirSpec {
            variant: self.variant,
            n: self.n,
            k,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            rho: self.rho,
            seed: self.seed,
            quantizer,
            prng: PRNG_FAMILY.to_string(),
        }
    }

    /// Identity used to match log rows on resume.
    pub fn key(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            variant_name(self.variant),
            self.n,
            self.alpha,
            self.beta,
            self.gamma,
            self.rho,
            self.lambda,
            self.seed
        )
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let lambda_key = |l: RidgeLambda| match l {
            RidgeLambda::Auto => (0, 0.0),
            RidgeLambda::Value(v) => (1, v),
        };
        let (la, lb) = (lambda_key(self.lambda), lambda_key(other.lambda));
        self.alpha
            .total_cmp(&other.alpha)
            .then(self.beta.total_cmp(&other.beta))
            .then(self.gamma.total_cmp(&other.gamma))
            .then(self.rho.total_cmp(&other.rho))
            .then(la.0.cmp(&lb.0))
            .then(la.1.total_cmp(&lb.1))
            .then(self.seed.cmp(&other.seed))
            .then(self.n.cmp(&other.n))
            .then(variant_name(self.variant).cmp(variant_name(other.variant)))
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Intensity => "intensity",
        Variant::Phase => "phase",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub params: TrialParams,
    /// NaN for failed trials.
    pub score: f64,
    pub nmse_per_class: [f64; NUM_CLASSES],
    pub wall_time: Duration,
    pub status: TrialStatus,
}

impl TrialResult {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

/// Best first; failed trials last; ties in canonical parameter order.
pub fn sort_results(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        b.is_ok()
            .cmp(&a.is_ok())
            .then_with(|| {
                if a.is_ok() {
                    b.score.total_cmp(&a.score)
                } else {
                    Ordering::Equal
                }
            })
            .then_with(|| a.params.canonical_cmp(&b.params))
    });
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Append-only results log.
    pub log: Option<PathBuf>,
    /// Reuse successful rows already present in the log.
    pub resume: bool,
}

pub const LOG_HEADER: &str = "variant,n,alpha,beta,gamma,rho,lambda,seed,score,nmse_0,nmse_1,nmse_2,nmse_3,nmse_4,nmse_5,wall_time_s,status";

fn log_line(r: &TrialResult) -> String {
    let mut s = r.params.key();
    let _ = write!(s, ",{}", r.score);
    for v in r.nmse_per_class {
        let _ = write!(s, ",{v}");
    }
    let _ = write!(s, ",{:.3}", r.wall_time.as_secs_f64());
    match &r.status {
        TrialStatus::Ok => s.push_str(",ok"),
        TrialStatus::Failed(msg) => {
            let clean: String = msg
                .chars()
                .map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c })
                .collect();
            let _ = write!(s, ",error: {clean}");
        }
    }
    s
}

fn parse_log_line(line: &str) -> Option<TrialResult> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 17 {
        return None;
    }
    let variant = match f[0] {
        "intensity" => Variant::Intensity,
        "phase" => Variant::Phase,
        _ => return None,
    };
    let num = |i: usize| f[i].parse::<f64>().ok();
    let params = TrialParams {
        variant,
        n: f[1].parse().ok()?,
        alpha: num(2)?,
        beta: num(3)?,
        gamma: num(4)?,
        rho: num(5)?,
        lambda: f[6].parse().ok()?,
        seed: f[7].parse().ok()?,
    };
    let mut nmse = [0.0; NUM_CLASSES];
    for (c, v) in nmse.iter_mut().enumerate() {
        *v = num(9 + c)?;
    }
    let status = if f[16] == "ok" {
        TrialStatus::Ok
    } else {
        TrialStatus::Failed(f[16].trim_start_matches("error: ").to_string())
    };
    Some(TrialResult {
        params,
        score: num(8)?,
        nmse_per_class: nmse,
        wall_time: Duration::from_secs_f64(num(15)?.max(0.0)),
        status,
    })
}

/// Reads a results log. Malformed lines are skipped.
pub fn read_log(path: &Path) -> Result<Vec<TrialResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOG_HEADER => {}
        _ => return Err(Error::format(path, "missing results-log header")),
    }
    Ok(lines.filter_map(parse_log_line).collect())
}

/// Which sequences a grid trains on and scores on.
pub fn selection_sets(spec: &GridSpec, manifest: &Manifest) -> (Vec<usize>, Vec<usize>) {
    let train = split_sequences(manifest, Split::Train);
    match spec.validation_fraction {
        None => (train, split_sequences(manifest, Split::Test)),
        Some(f) => {
            let metas: Vec<_> = train.iter().map(|&i| manifest.sequences[i].clone()).collect();
            let seed = derive_seed(manifest.split_seed, "validation");
            let carved = make_split(&metas, 1.0 - f, seed);
            let mut fit = Vec::new();
            let mut held = Vec::new();
            for (&i, m) in train.iter().zip(&carved) {
                if m.split == Split::Train {
                    fit.push(i);
                } else {
                    held.push(i);
                }
            }
            (fit, held)
        }
    }
}

fn evaluate_one(
    p: &TrialParams,
    spec: &GridSpec,
    manifest: &Manifest,
    features: &FeatureMatrix,
    fit: &[usize],
    score_on: &[usize],
) -> TrialResult {
    let start = Instant::now();
    let rspec = p.reservoir_spec(features.cols, spec.quantizer);
    let outcome = run_trial(&rspec, p.lambda, spec.reset_per_sequence, manifest, features, fit, score_on);
    let wall_time = start.elapsed();
    match outcome {
        Ok(o) => TrialResult {
            params: *p,
            score: o.evaluation.confusion.score,
            nmse_per_class: o.evaluation.nmse,
            wall_time,
            status: TrialStatus::Ok,
        },
        Err(e) => {
            log::warn!("trial {} failed: {e}", p.key());
            TrialResult {
                params: *p,
                score: f64::NAN,
                nmse_per_class: [f64::NAN; NUM_CLASSES],
                wall_time,
                status: TrialStatus::Failed(e.to_string()),
            }
        }
    }
}

/// Evaluates every grid cell: train on Train (or its fit slice), score on
/// Test (or the validation slice). Failed trials are kept with their error.
pub fn run_grid(
    spec: &GridSpec,
    manifest: &Manifest,
    features: &FeatureMatrix,
    options: &GridOptions,
) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    if features.rows != manifest.frame_count(None) {
        return Err(Error::Dimension(format!(
            "feature cache has {} rows, manifest streams {} frames",
            features.rows,
            manifest.frame_count(None)
        )));
    }
    let (fit, score_on) = selection_sets(spec, manifest);
    if fit.is_empty() || score_on.is_empty() {
        return Err(Error::Schema("grid needs non-empty training and scoring sets".into()));
    }

    let trials = spec.trials();
    let mut done: HashMap<String, TrialResult> = HashMap::new();
    let log = match &options.log {
        None => None,
        Some(path) => {
            let reuse = options.resume && path.exists();
            if reuse {
                for r in read_log(path)? {
                    if r.is_ok() {
                        done.insert(r.params.key(), r);
                    }
                }
            }
            let file = if reuse {
                OpenOptions::new().append(true).open(path)
            } else {
                File::create(path)
            }
            .map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            if !reuse {
                writeln!(w, "{LOG_HEADER}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
            }
            Some((path.clone(), Mutex::new(w)))
        }
    };

    let pending: Vec<&TrialParams> = trials.iter().filter(|p| !done.contains_key(&p.key())).collect();
    log::info!(
        "grid: {} trials, {} already logged, {} to run",
        trials.len(),
        trials.len() - pending.len(),
        pending.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let fresh: Vec<Result<TrialResult>> = pool.install(|| {
        pending
            .par_iter()
            .map(|p| {
                let r = evaluate_one(p, spec, manifest, features, &fit, &score_on);
                if let Some((path, w)) = &log {
                    let mut w = w.lock().expect("log writer poisoned");
                    writeln!(w, "{}", log_line(&r))
                        .and_then(|_| w.flush())
                        .map_err(|e| Error::io(path, e))?;
                }
                Ok(r)
            })
            .collect()
    });

    let mut results: Vec<TrialResult> = Vec::with_capacity(trials.len());
    for r in fresh {
        results.push(r?);
    }
    for p in &trials {
        if let Some(r) = done.remove(&p.key()) {
            results.push(r);
        }
    }
    sort_results(&mut results);
    Ok(results)
}

/// One-line description of a trial for reports.
pub fn describe_trial(r: &TrialResult) -> String {
    let p = &r.params;
    let outcome = match &r.status {
        TrialStatus::Ok => format!("score {}", r.score),
        TrialStatus::Failed(e) => format!("failed: {e}"),
    };
    format!(
        "{} N={} alpha={} beta={} gamma={} rho={} lambda={} seed={}: {outcome}",
        variant_name(p.variant),
        p.n,
        p.alpha,
        p.beta,
        p.gamma,
        p.rho,
        p.lambda,
        p.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridSpec {
        GridSpec {
            alpha: vec![0.4, 0.8],
            beta: vec![0.01, 0.1],
            gamma: vec![0.1],
            rho: vec![0.01],
            ..GridSpec::default_for(16, Variant::Intensity)
        }
    }

    #[test]
    fn cartesian_count_and_distinct() {
        let g = small();
        let t = g.trials();
        assert_eq!(t.len(), 4);
        assert_eq!(g.trial_count(), 4);
        let keys: std::collections::HashSet<_> = t.iter().map(|p| p.key()).collect();
        assert_eq!(keys.len(), 4);
        assert_eq!(GridSpec::default_for(8, Variant::Phase).trial_count(), 15 * 125);
    }

    #[test]
    fn validation_rules() {
        let mut g = small();
        g.beta.clear();
        assert!(matches!(g.validate(), Err(Error::Config(_))));
        let mut g = small();
        g.alpha.push(2.0);
        assert!(g.validate().is_err());
        g.enforce_ranges = false;
        assert!(g.validate().is_ok());
        g.validation_fraction = Some(1.0);
        assert!(g.validate().is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let text = r#"
            variant = "intensity"
            n = 1024
            alpha = [0.8]
            beta = [0.01]
            gamma = [0.1]
            rho = [0.01]
            lambda = ["auto", 0.5]
        "#;
        let g: GridSpec = toml::from_str(text).unwrap();
        assert_eq!(g.lambda, vec![RidgeLambda::Auto, RidgeLambda::Value(0.5)]);
        assert_eq!(g.seeds, vec![1]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.toml");
        g.save(&p).unwrap();
        assert_eq!(GridSpec::load(&p).unwrap(), g);
    }

    #[test]
    fn log_lines_round_trip() {
        let p = small().trials()[3];
        let r = TrialResult {
            params: p,
            score: 412.5,
            nmse_per_class: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            wall_time: Duration::from_millis(1500),
            status: TrialStatus::Ok,
        };
        let back = parse_log_line(&log_line(&r)).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.score, r.score);
        assert_eq!(back.nmse_per_class, r.nmse_per_class);

        let failed = TrialResult {
            status: TrialStatus::Failed("singular, badly\nso".into()),
            score: f64::NAN,
            ..r
        };
        let back = parse_log_line(&log_line(&failed)).unwrap();
        assert!(!back.is_ok());
        assert!(back.score.is_nan());
    }

    #[test]
    fn sorting_is_canonical() {
        let ps = small().trials();
        let mk = |i: usize, score: f64, ok: bool| TrialResult {
            params: ps[i],
            score,
            nmse_per_class: [0.0; 6],
            wall_time: Duration::ZERO,
            status: if ok { TrialStatus::Ok } else { TrialStatus::Failed("x".into()) },
        };
        let mut a = vec![mk(0, 100.0, true), mk(1, 300.0, true), mk(2, 300.0, true), mk(3, f64::NAN, false)];
        let mut b = a.clone();
        b.reverse();
        sort_results(&mut a);
        sort_results(&mut b);
        let keys = |v: &[TrialResult]| v.iter().map(|r| r.params.key()).collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
        assert_eq!(a[0].score, 300.0);
        assert!(!a[3].is_ok());
    }
}
