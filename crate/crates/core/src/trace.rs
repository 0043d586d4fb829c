//! Chain traces: kept draws of global parameters and per-area coefficients,
//! persisted as CSV with a TOML schema sidecar.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub model: String,
    pub n_areas: usize,
    pub coef_names: Vec<String>,
    pub global_names: Vec<String>,
    pub iterations: Vec<usize>,
    pub globals: Vec<Vec<f64>>,
    /// Per kept draw, area-major: entry `area * n_coef + k`.
    pub area_coefs: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate and proposal count per kernel.
    pub acceptance: BTreeMap<String, (f64, u64)>,
    /// Event counters (fallback allocations, clamped predictors, ...).
    pub flags: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ColumnDoc {
    name: String,
    meaning: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Schema {
    model: String,
    n_areas: usize,
    kept_draws: usize,
    coefficients: Vec<String>,
    globals: Vec<String>,
    acceptance: BTreeMap<String, f64>,
    proposals: BTreeMap<String, u64>,
    flags: BTreeMap<String, u64>,
    columns: Vec<ColumnDoc>,
}

impl ChainTrace {
    pub fn new(model: &str, n_areas: usize, coef_names: Vec<String>, global_names: Vec<String>) -> Self {
        ChainTrace {
            model: model.to_string(),
            n_areas,
            coef_names,
            global_names,
            iterations: Vec::new(),
            globals: Vec::new(),
            area_coefs: Vec::new(),
            acceptance: BTreeMap::new(),
            flags: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn n_coef(&self) -> usize {
        self.coef_names.len()
    }

    pub fn push(&mut self, iteration: usize, globals: Vec<f64>, coefs: Vec<f64>) {
        debug_assert_eq!(globals.len(), self.global_names.len());
        debug_assert_eq!(coefs.len(), self.n_areas * self.n_coef());
        self.iterations.push(iteration);
        self.globals.push(globals);
        self.area_coefs.push(coefs);
    }

    pub fn coef_index(&self, name: &str) -> Option<usize> {
        self.coef_names.iter().position(|c| c == name)
    }

    pub fn global_index(&self, name: &str) -> Option<usize> {
        self.global_names.iter().position(|c| c == name)
    }

    /// Draws of coefficient `k` for `area`.
    pub fn coef_draws(&self, area: usize, k: usize) -> Vec<f64> {
        let nc = self.n_coef();
        self.area_coefs.iter().map(|row| row[area * nc + k]).collect()
    }

    pub fn global_draws(&self, k: usize) -> Vec<f64> {
        self.globals.iter().map(|g| g[k]).collect()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["iteration".to_string()];
        c.extend(self.global_names.iter().cloned());
        for i in 0..self.n_areas {
            for name in &self.coef_names {
                c.push(format!("{}_{}", name, i + 1));
            }
        }
        c
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(self.columns())?;
        for ((it, g), c) in self.iterations.iter().zip(&self.globals).zip(&self.area_coefs) {
            let mut rec = vec![it.to_string()];
            rec.extend(g.iter().map(|&v| fmt_f64(v)));
            rec.extend(c.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut docs = vec![ColumnDoc { name: "iteration".into(), meaning: "sweep index (1-based) of the kept draw".into() }];
        for g in &self.global_names {
            docs.push(ColumnDoc { name: g.clone(), meaning: global_meaning(g).into() });
        }
        for name in &self.coef_names {
            docs.push(ColumnDoc {
                name: format!("{name}_<area>"),
                meaning: format!("coefficient '{name}' of the component occupied by <area> (1-based), one column per area"),
            });
        }
        let schema = Schema {
            model: self.model.clone(),
            n_areas: self.n_areas,
            kept_draws: self.len(),
            coefficients: self.coef_names.clone(),
            globals: self.global_names.clone(),
            acceptance: self.acceptance.iter().map(|(k, v)| (k.clone(), v.0)).collect(),
            proposals: self.acceptance.iter().map(|(k, v)| (k.clone(), v.1)).collect(),
            flags: self.flags.clone(),
            columns: docs,
        };
        let text = toml::to_string(&schema).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(schema_path, text)?;
        Ok(())
    }

    pub fn read(csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<Self> {
        let schema: Schema = toml::from_str(&std::fs::read_to_string(schema_path)?)?;
        let mut t = ChainTrace::new(&schema.model, schema.n_areas, schema.coefficients.clone(), schema.globals.clone());
        for (k, rate) in &schema.acceptance {
            t.acceptance.insert(k.clone(), (*rate, schema.proposals.get(k).copied().unwrap_or(0)));
        }
        t.flags = schema.flags.clone();
        let mut r = csv::Reader::from_path(csv_path)?;
        let expected = t.columns();
        let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
        if header != expected {
            return Err(Error::Data("trace header does not match its schema".into()));
        }
        let ng = t.global_names.len();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |_| Error::Parse { line: row + 2, msg: "bad number in trace".into() };
            let it: usize = rec[0].parse().map_err(|_| Error::Parse { line: row + 2, msg: "bad iteration".into() })?;
            let vals: Vec<f64> = rec.iter().skip(1).map(|s| s.parse::<f64>().map_err(bad)).collect::<Result<_>>()?;
            t.push(it, vals[..ng].to_vec(), vals[ng..].to_vec());
        }
        Ok(t)
    }
}

fn global_meaning(name: &str) -> &'static str {
    match name {
        "alpha" => "global level of the probit stick-breaking scores",
        "phi2" => "precision scale of the score fields",
        "lambda" => "spatial association of the score fields",
        "occupied" => "number of nonempty mixture components",
        "loglik" => "log-likelihood of the data given allocations",
        "tau2" => "conditional variance of the intrinsic CAR effects",
        n if n.starts_with("fixed_") => "fixed effect added to every area's coefficient",
        n if n.starts_with("omega_") => "entry of the CAR precision of the coefficient effects",
        _ => "global parameter",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_files() {
        let dir = std::env::temp_dir().join(format!("trace-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = ChainTrace::new("M1", 2, vec!["intercept".into(), "x".into()], vec!["alpha".into()]);
        t.push(1, vec![0.1], vec![1.0, 2.0, 3.0, 4.5]);
        t.push(2, vec![-0.2], vec![1.5, 2.5, 3.5, 1e-20]);
        t.acceptance.insert("beta".into(), (0.22, 100));
        let (c, s) = (dir.join("t.csv"), dir.join("t.schema.toml"));
        t.write(&c, &s).unwrap();
        let back = ChainTrace::read(&c, &s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.coef_draws(1, 1), vec![4.5, 1e-20]);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn empty_trace_has_header() {
        let t = ChainTrace::new("BYM", 3, vec!["intercept".into()], vec!["beta0".into()]);
        assert_eq!(t.columns(), vec!["iteration", "beta0", "intercept_1", "intercept_2", "intercept_3"]);
        assert!(t.is_empty());
    }
}
