use crate::args::{Preset, ReportArgs};
use crate::layout::{self, Manifest};
use crate::{CliError, CliResult};
use psbp_core::data::fmt_f64;
use psbp_core::simgen::{eta_ramse, posterior_means, ramse_by_cluster, Truth};
use psbp_core::trace::ChainTrace;
use std::path::Path;

/// Column order of the report tables; unknown names follow alphabetically.
pub const MODEL_ORDER: &[&str] = &["M1", "M1A", "M1B", "M1C", "M2", "M3", "M4", "M5", "M6", "M6A", "BYM"];
/// Coefficient whose recovery is scored in the first design.
pub const RISK_FACTOR: &str = "x";
/// Coefficient holding the per-area log relative risk in the second design.
pub const LOG_RISK: &str = "intercept";

/// Per-cluster RAMSE averaged over replicates; `cells[cluster][model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTable {
    pub models: Vec<String>,
    pub clusters: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    /// `(replicate, model, cluster, ramse)` for every fitted replicate.
    pub replicates: Vec<(usize, String, String, f64)>,
}

impl ClusterTable {
    pub fn get(&self, cluster: &str, model: &str) -> Option<f64> {
        let c = self.clusters.iter().position(|v| v == cluster)?;
        let m = self.models.iter().position(|v| v == model)?;
        self.cells[c][m]
    }
}

/// Pooled log-risk RAMSE over replicates on the `λ × 1/φ` grid; each cell
/// holds `(mixture, CAR)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub lambdas: Vec<f64>,
    pub inv_phis: Vec<f64>,
    pub cells: Vec<Vec<(Option<f64>, Option<f64>)>>,
}

impl GridTable {
    pub fn get(&self, lambda: f64, inv_phi: f64) -> Option<(Option<f64>, Option<f64>)> {
        let l = self.lambdas.iter().position(|&v| v == lambda)?;
        let p = self.inv_phis.iter().position(|&v| v == inv_phi)?;
        Some(self.cells[l][p])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Clusters(ClusterTable),
    Grid(GridTable),
}

fn sort_models(mut names: Vec<String>) -> Vec<String> {
    let rank = |n: &str| MODEL_ORDER.iter().position(|m| *m == n).unwrap_or(MODEL_ORDER.len());
    names.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
    names.dedup();
    names
}

/// Models with a complete trace pair in a replicate folder.
pub fn fitted_models(dir: &Path) -> CliResult<Vec<String>> {
    if !dir.is_dir() {
        return Ok(vec![]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(model) = name.strip_suffix(".trace.csv") {
            if layout::trace_paths(dir, model).1.exists() {
                out.push(model.to_string());
            }
        }
    }
    Ok(sort_models(out))
}

pub fn read_trace(dir: &Path, model: &str) -> CliResult<ChainTrace> {
    let (csv, schema) = layout::trace_paths(dir, model);
    ChainTrace::read(&csv, &schema).map_err(|e| CliError::data(format!("{}: {e}", csv.display())))
}

fn read_truth(dir: &Path) -> CliResult<Truth> {
    let p = dir.join(layout::TRUTH);
    Truth::read_path(&p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

/// Per-area posterior median of every coefficient, keyed by 1-based area.
pub fn write_median_map(trace: &ChainTrace, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["area".to_string()];
    header.extend(trace.coef_names.iter().map(|c| format!("{c}_median")));
    w.write_record(&header)?;
    for i in 0..trace.n_areas {
        let mut rec = vec![(i + 1).to_string()];
        for k in 0..trace.n_coef() {
            rec.push(fmt_f64(median(trace.coef_draws(i, k))));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

/// Build the tables from the raw traces, write them under `out`, and return them.
pub fn run(args: &ReportArgs) -> CliResult<Report> {
    let manifest = Manifest::read(&args.data)?;
    let preset = match args.preset {
        Some(p) => p,
        None => Preset::parse(&manifest.preset)
            .ok_or_else(|| CliError::data(format!("unknown design '{}' in manifest", manifest.preset)))?,
    };
    layout::create_dir(&args.out)?;
    for sc in &manifest.scenarios {
        for r in 0..manifest.replicates {
            let fit_dir = layout::replicate_dir(&args.fits, &sc.name, r);
            let map_dir = layout::replicate_dir(&args.out.join("maps"), &sc.name, r);
            for model in fitted_models(&fit_dir)? {
                layout::create_dir(&map_dir)?;
                write_median_map(&read_trace(&fit_dir, &model)?, &map_dir.join(format!("{model}.csv")))?;
            }
        }
    }
    let report = match preset {
        Preset::Study1 => Report::Clusters(cluster_table(&manifest, &args.data, &args.fits)?),
        Preset::Study2 => Report::Grid(grid_table(&manifest, &args.data, &args.fits)?),
    };
    write_report(&report, &args.out)?;
    Ok(report)
}

pub fn cluster_table(manifest: &Manifest, data: &Path, fits: &Path) -> CliResult<ClusterTable> {
    let sc = manifest.scenarios.first().ok_or_else(|| CliError::data("manifest lists no scenarios"))?;
    let mut clusters: Vec<String> = Vec::new();
    let mut replicates = Vec::new();
    let mut models = Vec::new();
    for r in 0..manifest.replicates {
        let truth = read_truth(&layout::replicate_dir(data, &sc.name, r))?;
        for c in &truth.cluster {
            if !clusters.contains(c) {
                clusters.push(c.clone());
            }
        }
        let fit_dir = layout::replicate_dir(fits, &sc.name, r);
        for model in fitted_models(&fit_dir)? {
            let trace = read_trace(&fit_dir, &model)?;
            let names: Vec<&str> = clusters.iter().map(|s| s.as_str()).collect();
            let values = ramse_by_cluster(&trace, RISK_FACTOR, &truth, &names)?;
            for (c, v) in clusters.iter().zip(values) {
                replicates.push((r, model.clone(), c.clone(), v));
            }
            models.push(model);
        }
    }
    let models = sort_models(models);
    let cells = clusters
        .iter()
        .map(|c| {
            models
                .iter()
                .map(|m| {
                    let v: Vec<f64> = replicates.iter().filter(|(_, mm, cc, _)| mm == m && cc == c).map(|t| t.3).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        })
        .collect();
    Ok(ClusterTable { models, clusters, cells, replicates })
}

pub fn grid_table(manifest: &Manifest, data: &Path, fits: &Path) -> CliResult<GridTable> {
    let mut lambdas: Vec<f64> = Vec::new();
    let mut inv_phis: Vec<f64> = Vec::new();
    for sc in &manifest.scenarios {
        let (l, p) = sc.lambda.zip(sc.inv_phi).ok_or_else(|| CliError::data(format!("scenario {} lacks λ or 1/φ", sc.name)))?;
        if !lambdas.contains(&l) {
            lambdas.push(l);
        }
        if !inv_phis.contains(&p) {
            inv_phis.push(p);
        }
    }
    lambdas.sort_by(|a, b| a.total_cmp(b));
    inv_phis.sort_by(|a, b| a.total_cmp(b));
    let mut cells = vec![vec![(None, None); inv_phis.len()]; lambdas.len()];
    for sc in &manifest.scenarios {
        let (l, p) = (sc.lambda.unwrap_or_default(), sc.inv_phi.unwrap_or_default());
        let li = lambdas.iter().position(|&v| v == l).unwrap_or_default();
        let pi = inv_phis.iter().position(|&v| v == p).unwrap_or_default();
        let mut pooled = [Vec::new(), Vec::new()];
        for r in 0..manifest.replicates {
            let truth = read_truth(&layout::replicate_dir(data, &sc.name, r))?;
            let fit_dir = layout::replicate_dir(fits, &sc.name, r);
            for (slot, model) in ["M5", "BYM"].iter().enumerate() {
                if !layout::trace_paths(&fit_dir, model).0.exists() {
                    continue;
                }
                let trace = read_trace(&fit_dir, model)?;
                let k = trace
                    .coef_index(LOG_RISK)
                    .ok_or_else(|| CliError::data(format!("{model} trace has no '{LOG_RISK}' coefficient")))?;
                pooled[slot].push((posterior_means(&trace, k)?, truth.eta.clone()));
            }
        }
        let score = |v: &Vec<(Vec<f64>, Vec<f64>)>| -> CliResult<Option<f64>> {
            if v.is_empty() {
                Ok(None)
            } else {
                Ok(Some(eta_ramse(v)?))
            }
        };
        cells[li][pi] = (score(&pooled[0])?, score(&pooled[1])?);
    }
    Ok(GridTable { lambdas, inv_phis, cells })
}

pub fn write_report(report: &Report, out: &Path) -> CliResult<()> {
    match report {
        Report::Clusters(t) => {
            let mut w = csv::Writer::from_path(out.join("study1_ramse.csv"))?;
            let mut header = vec!["cluster".to_string()];
            header.extend(t.models.iter().cloned());
            w.write_record(&header)?;
            for (c, row) in t.clusters.iter().zip(&t.cells) {
                let mut rec = vec![c.clone()];
                rec.extend(row.iter().map(|v| fmt_cell(*v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out.join("study1_ramse_replicates.csv"))?;
            w.write_record(["replicate", "model", "cluster", "ramse"])?;
            for (r, m, c, v) in &t.replicates {
                w.write_record([&r.to_string(), m, c, &fmt_f64(*v)])?;
            }
            w.flush()?;
        }
        Report::Grid(t) => {
            let mut w = csv::Writer::from_path(out.join("study2_ramse.csv"))?;
            let mut header = vec!["lambda".to_string()];
            header.extend(t.inv_phis.iter().map(|p| format!("inv_phi={p}")));
            w.write_record(&header)?;
            for (l, row) in t.lambdas.iter().zip(&t.cells) {
                let mut rec = vec![l.to_string()];
                rec.extend(row.iter().map(|(np, car)| format!("{}|{}", fmt_cell(*np), fmt_cell(*car))));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
