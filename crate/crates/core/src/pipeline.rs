//! End-to-end orchestration with content-addressed stage caches.
//!
//! Stages run in order: dataset, hog, pca, reservoir, readout, evaluate.
//! Each stage's digest hashes its own settings together with the digest of
//! the stage before it, and its artifacts are stored under
//! `out_dir/cache/<stage>-<digest>`. A later run with the same upstream
//! settings reuses them; the final digest identifies the whole resolved
//! configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{inspect_cache, read_cache, write_cache, CacheHeader, FeatureMatrix};
use crate::classify::{write_results, ConfusionMatrix};
use crate::dataset::{load_manifest, stream_all_frames, Frame, Manifest, Split};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_sequences, fit_readout, rows_of, run_states, split_sequences};
use crate::hog::{compute_hog, HogConfig};
use crate::pca::{self, fit_pca, transform_features, RowSubset};
use crate::readout::{self, RidgeLambda};
use crate::reservoir::{QuantizerSpec, ReservoirSpec, Variant};
use crate::rng::{derive_seed, PRNG_FAMILY};
use crate::tuning::{read_log, sort_results, GridSpec, TrialStatus};

pub const STAGES: [&str; 6] = ["dataset", "hog", "pca", "reservoir", "readout", "evaluate"];
pub const INDEX_FILE: &str = "pipeline.json";
pub const FROZEN_CONFIG: &str = "config.toml";
pub const GRID_LOG: &str = "results.csv";
pub const GRID_SPEC: &str = "grid.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    #[default]
    Reuse,
    Rebuild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitOn {
    #[default]
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub fit_on: FitOn,
}

fn default_k() -> usize {
    2000
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection {
            k: default_k(),
            fit_on: FitOn::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSection {
    pub variant: Variant,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    /// Derived from the global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub reset_per_sequence: bool,
    #[serde(default)]
    pub quantizer: QuantizerSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReadoutSection {
    #[serde(default)]
    pub lambda: RidgeLambda,
}

/// Pipeline configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cache_policy: CachePolicy,
    #[serde(default)]
    pub hog: HogConfig,
    #[serde(default)]
    pub pca: PcaSection,
    pub reservoir: ReservoirSection,
    #[serde(default)]
    pub readout: ReadoutSection,
}

impl PipelineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Fills in derived values (the reservoir seed).
    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        if c.reservoir.seed.is_none() {
            c.reservoir.seed = Some(derive_seed(c.seed, "reservoir"));
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.hog.validate()?;
        if self.pca.k == 0 {
            return Err(Error::Config("pca.k must be positive".into()));
        }
        let r = &self.reservoir;
        if r.n == 0 {
            return Err(Error::Config("reservoir.n must be positive".into()));
        }
        if ![r.alpha, r.beta, r.gamma, r.rho].iter().all(|v| v.is_finite()) || !(0.0..=1.0).contains(&r.rho) {
            return Err(Error::Config("reservoir parameters must be finite with rho in [0, 1]".into()));
        }
        if !r.quantizer.is_valid() {
            return Err(Error::Config("quantizers need at least 2 levels".into()));
        }
        Ok(())
    }

    pub fn reservoir_spec(&self, k: usize) -> ReservoirSpec {
        let r = &self.reservoir;
        ReservoirSpec {
            variant: r.variant,
            n: r.n,
            k,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            rho: r.rho,
            seed: r.seed.unwrap_or_else(|| derive_seed(self.seed, "reservoir")),
            quantizer: r.quantizer,
            prng: PRNG_FAMILY.to_string(),
        }
    }

    /// Digests of every stage, in [`STAGES`] order. The last one covers
    /// every setting that affects results.
    pub fn stage_digests(&self, manifest: &Manifest) -> [String; 6] {
        let c = self.resolved();
        let dataset = digest(&["dataset", &manifest.to_json()]);
        let hog = digest(&["hog", &dataset, &json(&c.hog)]);
        let pca = digest(&["pca", &hog, &json(&c.pca)]);
        let reservoir = digest(&["reservoir", &pca, &json(&c.reservoir), PRNG_FAMILY]);
        let readout = digest(&["readout", &reservoir, &json(&c.readout)]);
        let evaluate = digest(&["evaluate", &readout]);
        [dataset, hog, pca, reservoir, readout, evaluate]
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// HOG descriptors of every frame, in stream order.
pub fn extract_features(manifest: &Manifest, config: &HogConfig) -> Result<FeatureMatrix> {
    const BATCH: usize = 64;
    let res = manifest.resolution;
    let layout = config.layout(res.height, res.width)?;
    let total = manifest.frame_count(None);
    let mut out = FeatureMatrix::zeros(total, layout.len());
    out.layout = layout.tuple();
    let mut stream = stream_all_frames(manifest);
    let mut done = 0;
    while done < total {
        let batch: Vec<Frame> = stream.by_ref().take(BATCH).collect::<Result<_>>()?;
        if batch.is_empty() {
            return Err(Error::Dimension(format!("frame stream ended after {done} of {total} frames")));
        }
        let rows: Vec<Vec<f32>> = batch
            .par_iter()
            .map(|f| compute_hog(f, config).map(|d| d.values.iter().map(|&v| v as f32).collect()))
            .collect::<Result<_>>()?;
        for row in rows {
            out.row_mut(done).copy_from_slice(&row);
            done += 1;
        }
    }
    Ok(out)
}

/// Streams HOG descriptors straight to a cache file.
pub fn extract_features_to(manifest: &Manifest, config: &HogConfig, path: &Path) -> Result<CacheHeader> {
    let m = extract_features(manifest, config)?;
    write_atomic(path, |tmp| write_cache(tmp, &m))?;
    Ok(m.header())
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub digest: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub detail: String,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineIndex {
    pub config_digest: String,
    pub manifest: PathBuf,
    pub stages: Vec<StageRecord>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub score: f64,
    pub confusion: ConfusionMatrix,
    pub config_digest: String,
    pub out_dir: PathBuf,
    pub stages: Vec<StageRecord>,
}

struct Runner<'a> {
    out_dir: &'a Path,
    policy: CachePolicy,
    stages: Vec<StageRecord>,
}

impl Runner<'_> {
    fn cache_path(&self, stage: &str, digest: &str, ext: &str) -> PathBuf {
        PathBuf::from("cache").join(format!("{stage}-{}.{ext}", &digest[..16]))
    }

    fn usable(&self, rel: &Path, check: impl Fn(&Path) -> Result<()>) -> bool {
        if self.policy == CachePolicy::Rebuild {
            return false;
        }
        let p = self.out_dir.join(rel);
        if !p.exists() {
            return false;
        }
        match check(&p) {
            Ok(()) => true,
            Err(e) => {
                log::warn!("ignoring unusable cache {}: {e}", p.display());
                false
            }
        }
    }

    /// Loads a feature cache or produces and stores it.
    fn features(
        &mut self,
        stage: &'static str,
        digest: &str,
        produce: impl FnOnce() -> Result<FeatureMatrix>,
    ) -> Result<(FeatureMatrix, PathBuf, bool)> {
        let rel = self.cache_path(stage, digest, "feat");
        let path = self.out_dir.join(&rel);
        if self.usable(&rel, |p| inspect_cache(p).map(|_| ())) {
            log::info!("{stage}: reusing {}", path.display());
            return Ok((read_cache(&path).map_err(|e| e.in_stage(stage))?, rel, true));
        }
        let m = produce().map_err(|e| e.in_stage(stage))?;
        write_atomic(&path, |tmp| write_cache(tmp, &m)).map_err(|e| e.in_stage(stage))?;
        Ok((m, rel, false))
    }

    fn record(&mut self, name: &str, digest: &str, artifacts: Vec<PathBuf>, detail: String, reused: bool) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            digest: digest.to_string(),
            artifacts,
            detail,
            reused,
        });
    }
}

/// Runs every stage and writes results, the frozen config and the index.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let cfg = config.resolved();
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out.join("cache")).map_err(|e| Error::io(out, e))?;

    // dataset
    let manifest = load_manifest(&cfg.manifest).map_err(|e| e.in_stage("dataset"))?;
    let (n_train, n_test) = manifest.split_counts();
    if n_train == 0 || n_test == 0 {
        return Err(Error::Schema(format!(
            "manifest has {n_train} training and {n_test} test sequences; both splits must be non-empty"
        ))
        .in_stage("dataset"));
    }
    let digests = cfg.stage_digests(&manifest);
    let [d_data, d_hog, d_pca, d_res, d_read, d_eval] = &digests;
    fs::write(out.join(FROZEN_CONFIG), cfg.to_toml()).map_err(|e| Error::io(out, e))?;

    let mut run = Runner {
        out_dir: out,
        policy: cfg.cache_policy,
        stages: Vec::new(),
    };
    run.record(
        "dataset",
        d_data,
        Vec::new(),
        format!(
            "{} sequences ({n_train} train, {n_test} test), {} frames at {}x{}",
            manifest.sequences.len(),
            manifest.frame_count(None),
            manifest.resolution.width,
            manifest.resolution.height
        ),
        false,
    );

    // hog
    let (hog, hog_rel, reused) = run.features("hog", d_hog, || extract_features(&manifest, &cfg.hog))?;
    let detail = format!("{} x {} descriptors, layout {:?}", hog.rows, hog.cols, hog.layout);
    run.record("hog", d_hog, vec![hog_rel], detail, reused);

    // pca
    let model_rel = run.cache_path("pca", d_pca, "model");
    let model_path = out.join(&model_rel);
    let (model, model_reused) = if run.usable(&model_rel, |p| pca::inspect_model(p).map(|_| ())) {
        (pca::load_model(&model_path).map_err(|e| e.in_stage("pca"))?, true)
    } else {
        let fit_rows = match cfg.pca.fit_on {
            FitOn::All => (0..hog.rows).collect(),
            FitOn::Train => rows_of(&manifest, &split_sequences(&manifest, Split::Train)),
        };
        let model = fit_pca(&RowSubset { inner: &hog, indices: &fit_rows }, cfg.pca.k).map_err(|e| e.in_stage("pca"))?;
        write_atomic(&model_path, |tmp| pca::save_model(tmp, &model)).map_err(|e| e.in_stage("pca"))?;
        (model, false)
    };
    let (reduced, reduced_rel, reduced_reused) =
        run.features("reduced", d_pca, || transform_features(&model, &hog))?;
    drop(hog);
    let detail = format!(
        "{} -> {} components, {:.2}% of variance",
        model.dim(),
        model.k(),
        100.0 * model.explained_variance_ratio()
    );
    run.record("pca", d_pca, vec![model_rel, reduced_rel], detail, model_reused && reduced_reused);

    // reservoir
    let spec = cfg.reservoir_spec(reduced.cols);
    let (states, states_rel, reused) = run.features("states", d_res, || {
        run_states(&spec.build()?, &manifest, &reduced, cfg.reservoir.reset_per_sequence)
    })?;
    let detail = format!(
        "{:?} reservoir, N = {}, K = {}, {} steps",
        spec.variant, spec.n, spec.k, states.rows
    );
    run.record("reservoir", d_res, vec![states_rel], detail, reused);

    // readout
    let readout_rel = run.cache_path("readout", d_read, "model");
    let readout_path = out.join(&readout_rel);
    let train = split_sequences(&manifest, Split::Train);
    let (w, reused) = if run.usable(&readout_rel, |p| readout::inspect_model(p).map(|_| ())) {
        (readout::load_model(&readout_path).map_err(|e| e.in_stage("readout"))?, true)
    } else {
        let w = fit_readout(
            &manifest,
            &states,
            &train,
            cfg.readout.lambda,
            spec.variant,
            spec.quantizer.intensity_levels,
        )
        .map_err(|e| e.in_stage("readout"))?;
        write_atomic(&readout_path, |tmp| readout::save_model(tmp, &w)).map_err(|e| e.in_stage("readout"))?;
        (w, false)
    };
    let detail = format!("{} x {} weights, lambda {}", w.outputs(), w.inputs(), w.ridge_lambda);
    run.record("readout", d_read, vec![readout_rel], detail, reused);

    // evaluate
    let test = split_sequences(&manifest, Split::Test);
    let ev = evaluate_sequences(&manifest, &states, &w, &test).map_err(|e| e.in_stage("evaluate"))?;
    let results = PathBuf::from("results");
    write_results(&out.join(&results), &ev.decisions, &ev.truths, &ev.confusion).map_err(|e| e.in_stage("evaluate"))?;
    run.record(
        "evaluate",
        d_eval,
        ["sequences.csv", "confusion.csv", "score.txt"].iter().map(|f| results.join(f)).collect(),
        ev.confusion.summary_line(),
        false,
    );

    let index = PipelineIndex {
        config_digest: d_eval.clone(),
        manifest: cfg.manifest.clone(),
        stages: run.stages.clone(),
        score: ev.confusion.score,
    };
    let index_path = out.join(INDEX_FILE);
    fs::write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes"))
        .map_err(|e| Error::io(&index_path, e))?;

    Ok(PipelineReport {
        score: ev.confusion.score,
        confusion: ev.confusion,
        config_digest: d_eval.clone(),
        out_dir: out.to_path_buf(),
        stages: run.stages,
    })
}

fn check_artifact(path: &Path) -> std::result::Result<String, String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let r = match ext {
        "feat" => inspect_cache(path).map(|h| format!("{} x {}", h.frame_count, h.feature_dim)),
        "model" if name.starts_with("pca-") => pca::inspect_model(path).map(|(d, k)| format!("{d} -> {k}")),
        "model" => readout::inspect_model(path).map(|(m, n)| format!("{m} x {n}")),
        _ => fs::metadata(path).map(|m| format!("{} bytes", m.len())).map_err(|e| Error::io(path, e)),
    };
    r.map_err(|e| e.to_string())
}

/// Human-readable summary of a pipeline or grid-search output directory.
pub fn describe_artifacts(dir: &Path) -> Result<String> {
    let index_path = dir.join(INDEX_FILE);
    let log_path = dir.join(GRID_LOG);
    let mut s = String::new();
    if index_path.is_file() {
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: PipelineIndex =
            serde_json::from_str(&text).map_err(|e| Error::parse(&index_path, e.to_string()))?;
        let _ = writeln!(s, "pipeline directory {}", dir.display());
        let _ = writeln!(s, "config digest {}", index.config_digest);
        let _ = writeln!(s, "manifest {}", index.manifest.display());
        let _ = writeln!(s, "{} stages:", index.stages.len());
        let mut warnings = Vec::new();
        for st in &index.stages {
            let _ = writeln!(s, "  {:<10} {}  {}", st.name, &st.digest[..16], st.detail);
            for a in &st.artifacts {
                match check_artifact(&dir.join(a)) {
                    Ok(dims) => {
                        let _ = writeln!(s, "    {}  [{dims}]", a.display());
                    }
                    Err(e) => {
                        let _ = writeln!(s, "    {}  [UNREADABLE]", a.display());
                        warnings.push(format!("integrity check failed for {}: {e}", a.display()));
                    }
                }
            }
        }
        let _ = writeln!(s, "score {}", index.score);
        for w in warnings {
            let _ = writeln!(s, "WARNING: {w}");
        }
        return Ok(s);
    }
    if log_path.is_file() {
        let trials = read_log(&log_path)?;
        let _ = writeln!(s, "grid-search directory {}", dir.display());
        let spec_path = dir.join(GRID_SPEC);
        if spec_path.is_file() {
            let spec = GridSpec::load(&spec_path)?;
            let _ = writeln!(s, "grid cardinality {}", spec.trial_count());
        }
        let failed = trials.iter().filter(|t| t.status != TrialStatus::Ok).count();
        let _ = writeln!(s, "trials {} ({failed} failed)", trials.len());
        let mut sorted = trials;
        sort_results(&mut sorted);
        if let Some(best) = sorted.first().filter(|t| t.is_ok()) {
            let _ = writeln!(s, "best {}", crate::tuning::describe_trial(best));
        }
        return Ok(s);
    }
    Err(Error::NotAPipelineDir(dir.to_path_buf()))
}
