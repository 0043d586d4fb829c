use crate::args::FitArgs;
use crate::layout::{self, Manifest};
use crate::{CliError, CliResult, WORKERS_ENV};
use psbp_core::baselines::{default_precision_prior, fit_bym, fit_m5, fit_mcar, CarConfig};
use psbp_core::data::{fmt_f64, Dataset};
use psbp_core::graph::SpatialGraph;
use psbp_core::model::{BasePriorSpec, JointModel, ModelVariant};
use psbp_core::regression::RegressionModel;
use psbp_core::sampler::{Sampler, SamplerConfig, StickPriors};
use psbp_core::trace::ChainTrace;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Prior variance of the regression coefficients.
pub const COEF_PRIOR_VARIANCE: f64 = 25.0;
/// Inverse-gamma `(shape, rate)` prior on the CAR variance.
pub const CAR_VARIANCE_PRIOR: (f64, f64) = (1.0, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Mixture(ModelVariant),
    Mcar { diagonal: bool },
    Car,
}

impl ModelChoice {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "M6" => Some(ModelChoice::Mcar { diagonal: false }),
            "M6A" => Some(ModelChoice::Mcar { diagonal: true }),
            "BYM" | "CAR" => Some(ModelChoice::Car),
            n => ModelVariant::parse(n).map(ModelChoice::Mixture),
        }
    }

    /// Canonical name, used for trace files and report columns.
    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::Mixture(v) => v.name(),
            ModelChoice::Mcar { diagonal: false } => "M6",
            ModelChoice::Mcar { diagonal: true } => "M6A",
            ModelChoice::Car => "BYM",
        }
    }
}

/// Chain settings shared by every model of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub truncation: usize,
    pub lambda_max: f64,
}

impl FitSettings {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            truncation: self.truncation,
            priors: StickPriors { lambda_max: self.lambda_max, ..Default::default() },
            ..Default::default()
        }
    }
}

impl From<&FitArgs> for FitSettings {
    fn from(a: &FitArgs) -> Self {
        FitSettings { iterations: a.iters, burn_in: a.burnin, thin: a.thin, truncation: a.truncation, lambda_max: a.lambda_max }
    }
}

/// Run one model on one dataset.
pub fn fit_model(
    choice: ModelChoice,
    data: &Dataset,
    graph: &SpatialGraph,
    settings: &FitSettings,
    rng: &mut ChaCha8Rng,
) -> psbp_core::Result<ChainTrace> {
    let cfg = settings.sampler_config();
    cfg.validate()?;
    match choice {
        ModelChoice::Mixture(v) if v.is_joint() => {
            let priors = BasePriorSpec::from_data(data, COEF_PRIOR_VARIANCE);
            let kernel = JointModel::new(data.clone(), priors, v.local_independence())?;
            Sampler::new(graph, SamplerConfig { spatial: v.spatial(), ..cfg })?.run(&kernel, v.name(), rng)
        }
        ModelChoice::Mixture(ModelVariant::M5) => fit_m5(data.clone(), graph, cfg, COEF_PRIOR_VARIANCE, rng),
        ModelChoice::Mixture(v) => {
            let kernel = RegressionModel::new(data.clone(), v, COEF_PRIOR_VARIANCE)?;
            Sampler::new(graph, SamplerConfig { spatial: v.spatial(), ..cfg })?.run(&kernel, v.name(), rng)
        }
        ModelChoice::Mcar { diagonal } => {
            let p = 1 + data.x1_names.len() + data.w_names.len();
            fit_mcar(data, graph, default_precision_prior(p, diagonal), &CarConfig::from_sampler(&cfg), rng)
        }
        ModelChoice::Car => fit_bym(data, graph, CAR_VARIANCE_PRIOR, &CarConfig::from_sampler(&cfg), rng),
    }
}

/// One (scenario, replicate, model) unit of work.
#[derive(Debug, Clone)]
pub struct FitJob {
    pub scenario: Option<String>,
    pub replicate: Option<usize>,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelChoice,
    pub seed: u64,
}

impl FitJob {
    fn label(&self) -> String {
        let mut s = String::new();
        if let Some(sc) = &self.scenario {
            s.push_str(&format!("{sc}/"));
        }
        if let Some(r) = self.replicate {
            s.push_str(&format!("rep_{r:03}/"));
        }
        s.push_str(self.model.name());
        s
    }
}

/// Acceptance rates and flags of one finished job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSummary {
    pub scenario: String,
    pub replicate: String,
    pub model: String,
    pub acceptance: Vec<(String, f64, u64)>,
    pub flags: Vec<(String, u64)>,
}

fn run_job(job: &FitJob, graph: &SpatialGraph, settings: &FitSettings) -> CliResult<JobSummary> {
    let data = Dataset::read_path(&job.data).map_err(|e| CliError::data(format!("{}: {e}", job.data.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let trace = match fit_model(job.model, &data, graph, settings, &mut rng) {
        Ok(t) => t,
        Err(e) => {
            return Err(match CliError::from(e) {
                CliError::Numerical { msg, .. } => {
                    let dump = job.out_dir.join(format!("{}.failure.txt", job.model.name()));
                    let text = format!(
                        "job = {}\ndata = {}\nseed = {}\nsettings = {:?}\nerror = {msg}\n",
                        job.label(),
                        job.data.display(),
                        job.seed,
                        settings
                    );
                    let written = layout::create_dir(&job.out_dir).and_then(|_| Ok(std::fs::write(&dump, text)?));
                    CliError::Numerical { msg: format!("{}: {msg}", job.label()), dump: written.ok().map(|_| dump) }
                }
                other => other,
            });
        }
    };
    layout::create_dir(&job.out_dir)?;
    let (csv, schema) = layout::trace_paths(&job.out_dir, job.model.name());
    trace.write(csv, schema)?;
    Ok(JobSummary {
        scenario: job.scenario.clone().unwrap_or_default(),
        replicate: job.replicate.map(|r| r.to_string()).unwrap_or_default(),
        model: job.model.name().into(),
        acceptance: trace.acceptance.iter().map(|(k, v)| (k.clone(), v.0, v.1)).collect(),
        flags: trace.flags.iter().map(|(k, v)| (k.clone(), *v)).collect(),
    })
}

fn parse_models(args: &FitArgs) -> CliResult<Vec<ModelChoice>> {
    let names = if args.model.is_empty() {
        match args.preset {
            Some(p) => p.default_models(),
            None => return Err(CliError::usage("--model is required without --preset")),
        }
    } else {
        args.model.clone()
    };
    names
        .iter()
        .map(|n| ModelChoice::parse(n.trim()).ok_or_else(|| CliError::usage(format!("unknown model '{n}'"))))
        .collect()
}

/// Expand the command line into jobs; a directory input fans out over its
/// scenarios and replicates with seed `seed + replicate`.
pub fn plan(args: &FitArgs) -> CliResult<(SpatialGraph, Vec<FitJob>)> {
    let models = parse_models(args)?;
    if args.data.is_dir() {
        let manifest = Manifest::read(&args.data)?;
        let graph_spec = args.graph.clone().unwrap_or_else(|| args.data.join(layout::GRAPH).display().to_string());
        let graph = SpatialGraph::from_spec(&graph_spec)?;
        let reps = args.replicates.unwrap_or(manifest.replicates).min(manifest.replicates);
        let mut jobs = Vec::new();
        for sc in &manifest.scenarios {
            for r in 0..reps {
                for &m in &models {
                    jobs.push(FitJob {
                        scenario: Some(sc.name.clone()),
                        replicate: Some(r),
                        data: layout::replicate_dir(&args.data, &sc.name, r).join(layout::DATA),
                        out_dir: layout::replicate_dir(&args.out, &sc.name, r),
                        model: m,
                        seed: args.seed.wrapping_add(r as u64),
                    });
                }
            }
        }
        Ok((graph, jobs))
    } else {
        let spec = args.graph.as_ref().ok_or_else(|| CliError::usage("--graph is required for a single dataset"))?;
        let graph = SpatialGraph::from_spec(spec)?;
        let jobs = models
            .iter()
            .map(|&m| FitJob {
                scenario: None,
                replicate: None,
                data: args.data.clone(),
                out_dir: args.out.clone(),
                model: m,
                seed: args.seed,
            })
            .collect();
        Ok((graph, jobs))
    }
}

/// Worker count from the environment, if set.
pub fn worker_count() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::usage(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Run every planned job in parallel and write `summary.csv`.
pub fn run(args: &FitArgs) -> CliResult<Vec<JobSummary>> {
    let settings = FitSettings::from(args);
    settings.sampler_config().validate()?;
    let (graph, jobs) = plan(args)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::usage(e.to_string()))?;
    let results: Vec<CliResult<JobSummary>> = pool.install(|| jobs.par_iter().map(|j| run_job(j, &graph, &settings)).collect());
    let mut summaries = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    layout::create_dir(&args.out)?;
    write_summary(&args.out.join(layout::SUMMARY), &summaries)?;
    for s in &summaries {
        let rates: Vec<String> = s.acceptance.iter().map(|(k, r, _)| format!("{k}={r:.3}")).collect();
        println!("{} {} {}: acceptance {}", s.scenario, s.replicate, s.model, rates.join(" "));
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(summaries),
    }
}

fn write_summary(path: &Path, summaries: &[JobSummary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "replicate", "model", "kind", "name", "value", "count"])?;
    for s in summaries {
        for (k, rate, n) in &s.acceptance {
            w.write_record([&s.scenario, &s.replicate, &s.model, "acceptance", k, &fmt_f64(*rate), &n.to_string()])?;
        }
        for (k, n) in &s.flags {
            w.write_record([&s.scenario, &s.replicate, &s.model, "flag", k, &n.to_string(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
