//! Executes an experiment config: generates datasets, runs every
//! (variant, seed, initial policy) combination, writes CSVs and a manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use polybrud_core::analysis::{field_grid, write_field_csv, FixedPointReport};
use polybrud_core::datasets::{self, DatasetKind};
use polybrud_core::learner::BrudObjective;
use polybrud_core::{
    brud_fixed_point, build_game, compute_stats, generate, sigma_condition, train_offline,
    train_online, AnalysisError, Capacity, DatasetError, DatasetSpec, GameSpec, JointActionSample,
    JointPolicy, LearnError, PjapConfig, Polynomial2, RunRecord,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    pub dry_run: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_policy: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub experiment: String,
    pub config: serde_json::Value,
    pub game: String,
    /// `[i, j, c]` triples: `c * a_x^i * a_y^j`.
    pub game_terms: Vec<(usize, usize, f64)>,
    pub files: Vec<FileEntry>,
    pub total_wall_ms: f64,
}

enum Work {
    Offline {
        dataset: usize,
        pjap: Option<PjapConfig>,
    },
    Online {
        capacity: Capacity,
        buffer_file: String,
    },
}

struct Job {
    file: String,
    variant: String,
    seed: u64,
    init: (f64, f64),
    work: Work,
}

struct Plan {
    datasets: Vec<(String, DatasetSpec)>,
    jobs: Vec<Job>,
}

fn fmt_label(x: f64) -> String {
    format!("{x}")
}

fn plan(cfg: &ExperimentConfig) -> Plan {
    let mut datasets = Vec::new();
    let mut jobs = Vec::new();
    let mut per_run = |variant: &str, prefix: &str, work: &dyn Fn(&str) -> Work| {
        for &seed in &cfg.seeds {
            for (k, &init) in cfg.initial_policies.iter().enumerate() {
                let stem = format!("{prefix}_s{seed}_p{k}");
                jobs.push(Job {
                    file: format!("run_{stem}.csv"),
                    variant: variant.to_string(),
                    seed,
                    init,
                    work: work(&stem),
                });
            }
        }
    };
    match cfg.experiment {
        Experiment::OfflineUniform => {
            datasets.push(("dataset.csv".to_string(), cfg.dataset.unwrap()));
            per_run("offline", "offline", &|_| Work::Offline { dataset: 0, pjap: None });
        }
        Experiment::PjapComparison => {
            datasets.push(("dataset.csv".to_string(), cfg.dataset.unwrap()));
            per_run("baseline", "baseline", &|_| Work::Offline { dataset: 0, pjap: None });
            per_run("pjap", "pjap", &|_| Work::Offline {
                dataset: 0,
                pjap: cfg.pjap,
            });
        }
        Experiment::TwinPeaksVarianceSweep => {
            let base = cfg.dataset.unwrap();
            for (i, &sigma) in cfg.sweep.sigmas.iter().enumerate() {
                let DatasetKind::GaussianCentered { center, .. } = base.kind else {
                    unreachable!("validated as gaussian")
                };
                let spec = DatasetSpec {
                    kind: DatasetKind::GaussianCentered {
                        center,
                        sigma: (sigma, sigma),
                    },
                    ..base
                };
                let label = format!("sigma{}", fmt_label(sigma));
                datasets.push((format!("dataset_{label}.csv"), spec));
                per_run(&label, &label, &|_| Work::Offline { dataset: i, pjap: None });
            }
        }
        Experiment::OnlineBufferSweep => {
            for &capacity in &cfg.sweep.capacities {
                let label = format!("cap{capacity}");
                per_run(&label, &label, &|stem| Work::Online {
                    capacity,
                    buffer_file: format!("buffer_{stem}.csv"),
                });
            }
        }
        Experiment::Analyze => {
            datasets.push(("dataset.csv".to_string(), cfg.dataset.unwrap()));
        }
    }
    Plan { datasets, jobs }
}

/// Files the config would produce, in manifest order.
pub fn planned_files(cfg: &ExperimentConfig) -> Vec<String> {
    let p = plan(cfg);
    let mut out: Vec<String> = p.datasets.iter().map(|d| d.0.clone()).collect();
    if cfg.experiment == Experiment::Analyze {
        out.push("report.txt".into());
        out.push("field_grid.csv".into());
    }
    for j in &p.jobs {
        out.push(j.file.clone());
        if let Work::Online { buffer_file, .. } = &j.work {
            out.push(buffer_file.clone());
        }
    }
    out
}

/// Tracks created files so a failed run can remove them.
struct Outputs {
    dir: PathBuf,
    written: Mutex<Vec<PathBuf>>,
}

impl Outputs {
    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let io = |source| RunError::Io {
            path: path.clone(),
            source,
        };
        let file = File::create(&path).map_err(io)?;
        self.written.lock().unwrap().push(path.clone());
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn remove_all(&self) {
        for p in self.written.lock().unwrap().drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn game_header(cfg: &ExperimentConfig, poly: &Polynomial2) -> (String, Vec<(usize, usize, f64)>) {
    let name = match &cfg.game {
        GameSpec::TwinPeaks(p) => format!("TwinPeaks(A={}, B={}, C={})", p.a, p.b, p.c),
        other => format!("{:?}", other.kind()),
    };
    (name, poly.terms())
}

/// Runs the experiment. With `dry_run` nothing is computed or written and the
/// manifest lists the files a real run would produce.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    let poly = build_game(&cfg.game).map_err(AnalysisError::from)?;
    let (game, game_terms) = game_header(cfg, &poly);
    let config = serde_json::to_value(&cfg.source).unwrap_or(serde_json::Value::Null);
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.to_string(),
        config,
        game,
        game_terms,
        files: Vec::new(),
        total_wall_ms: 0.0,
    };

    if opts.dry_run {
        manifest.files = planned_files(cfg)
            .into_iter()
            .map(|path| FileEntry {
                path,
                kind: "planned",
                variant: None,
                seed: None,
                initial_policy: None,
                wall_ms: None,
            })
            .collect();
        return Ok(manifest);
    }

    let created_dir = !cfg.output_dir.exists();
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let out = Outputs {
        dir: cfg.output_dir.clone(),
        written: Mutex::new(Vec::new()),
    };
    let start = Instant::now();
    let result = execute(cfg, &poly, opts, &out, &mut manifest).and_then(|_| {
        manifest.total_wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        out.write(MANIFEST_FILE, |w| writeln!(w, "{json}"))
    });
    if let Err(e) = result {
        out.remove_all();
        if created_dir {
            let _ = std::fs::remove_dir(&cfg.output_dir);
        }
        return Err(e);
    }
    Ok(manifest)
}

fn execute(
    cfg: &ExperimentConfig,
    poly: &Polynomial2,
    opts: &RunOptions,
    out: &Outputs,
    manifest: &mut Manifest,
) -> Result<(), RunError> {
    let plan = plan(cfg);
    let mut data: Vec<Arc<Vec<JointActionSample>>> = Vec::new();
    for (name, spec) in &plan.datasets {
        let samples = generate(spec)?;
        out.write(name, |w| datasets::write_csv(&samples, w))?;
        manifest.files.push(FileEntry {
            path: name.clone(),
            kind: "dataset",
            variant: None,
            seed: Some(spec.seed),
            initial_policy: None,
            wall_ms: None,
        });
        data.push(Arc::new(samples));
    }

    if cfg.experiment == Experiment::Analyze {
        for entry in analyze(cfg, poly, &data[0], out)? {
            manifest.files.push(entry);
        }
        return Ok(());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let results: Vec<Result<Vec<FileEntry>, RunError>> =
        pool.install(|| plan.jobs.par_iter().map(|job| run_job(cfg, poly, &data, job, out)).collect());
    for r in results {
        manifest.files.extend(r?);
    }
    Ok(())
}

fn run_job(
    cfg: &ExperimentConfig,
    poly: &Polynomial2,
    data: &[Arc<Vec<JointActionSample>>],
    job: &Job,
    out: &Outputs,
) -> Result<Vec<FileEntry>, RunError> {
    let t = Instant::now();
    let policy0 = JointPolicy::new(job.init.0, job.init.1);
    let (record, buffer): (RunRecord, _) = match &job.work {
        Work::Offline { dataset, pjap } => (
            train_offline(poly, &data[*dataset], policy0, &cfg.learn, pjap.as_ref(), job.seed)?,
            None,
        ),
        Work::Online { capacity, buffer_file } => {
            let (rec, buf) = train_online(poly, policy0, &cfg.learn, *capacity, job.seed)?;
            (rec, Some((buffer_file, buf)))
        }
    };
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    out.write(&job.file, |w| record.write_csv(w))?;
    let entry = |path: &str, kind| FileEntry {
        path: path.to_string(),
        kind,
        variant: Some(job.variant.clone()),
        seed: Some(job.seed),
        initial_policy: Some([job.init.0, job.init.1]),
        wall_ms: (kind == "run").then_some(wall_ms),
    };
    let mut files = vec![entry(&job.file, "run")];
    if let Some((name, buf)) = buffer {
        out.write(name, |w| buf.write_csv(w))?;
        files.push(entry(name, "buffer"));
    }
    Ok(files)
}

fn analyze(
    cfg: &ExperimentConfig,
    poly: &Polynomial2,
    data: &[JointActionSample],
    out: &Outputs,
) -> Result<Vec<FileEntry>, RunError> {
    let power = BrudObjective::new(poly).required_power().max(2);
    let stats = compute_stats(data, power)?;
    let report = brud_fixed_point(&cfg.game, &stats)?;
    let text = report_text(cfg, poly, &report)?;
    out.write("report.txt", |w| w.write_all(text.as_bytes()))?;
    let a = cfg.analyze;
    let grid = field_grid(poly, &stats, a.grid_low, a.grid_high, a.grid_n)?;
    out.write("field_grid.csv", |w| write_field_csv(&grid, w))?;
    Ok(["report.txt", "field_grid.csv"]
        .into_iter()
        .map(|p| FileEntry {
            path: p.to_string(),
            kind: if p.ends_with(".txt") { "report" } else { "field_grid" },
            variant: None,
            seed: None,
            initial_policy: None,
            wall_ms: None,
        })
        .collect())
}

/// Plain-text closed-form report.
pub fn report_text(cfg: &ExperimentConfig, poly: &Polynomial2, r: &FixedPointReport) -> Result<String, RunError> {
    use std::fmt::Write as _;
    let s = r.stats();
    let mut t = String::new();
    let _ = writeln!(t, "game: {}", game_header(cfg, poly).0);
    let _ = writeln!(t, "reward: {poly}");
    let _ = writeln!(t, "mean: ({}, {})", s.mean_x, s.mean_y);
    let _ = writeln!(t, "variance: ({}, {})", s.var_x, s.var_y);
    let _ = writeln!(t, "classification: {:?}", r.classification);
    if let Some((x, y)) = r.point {
        let f = r.field_at(x, y);
        let _ = writeln!(t, "fixed_point: ({x}, {y})");
        let _ = writeln!(t, "field_at_fixed_point: ({}, {})", f.0, f.1);
    }
    if let Some(line) = r.line {
        let _ = writeln!(t, "fixed_line: {line:?}");
    }
    let _ = writeln!(t, "zero_field: {}", r.zero_field);
    if let GameSpec::TwinPeaks(p) = &cfg.game {
        let (a, _) = polybrud_core::true_optima_twin_peaks(p)?;
        let _ = writeln!(t, "true_optima: ({a}, {a}), ({}, {})", -a, -a);
        match sigma_condition(p, s.mean_y)? {
            None => {
                let _ = writeln!(t, "sigma_condition: none");
            }
            Some(b) => {
                let _ = writeln!(t, "sigma_condition: plus={:?} minus={:?}", b.plus, b.minus);
            }
        }
    }
    Ok(t)
}

/// Reads a manifest back, for tools that post-process a run directory.
pub fn read_manifest(dir: &Path) -> Result<serde_json::Value, RunError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| RunError::Io { path, source })?;
    Ok(serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}
