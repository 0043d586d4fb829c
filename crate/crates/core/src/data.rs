//! Area-level datasets and their delimited-text format.
//!
//! The header names each column's role: `y1` (count), `E` (expected count),
//! `y2` (binomial successes), `N` (trials), `y3` (continuous response),
//! `w:<name>` (confounder), and `x1:<name>`, `x2:<name>`, `x3:<name>`
//! (covariates of the count, binomial and continuous predictors). An `area`
//! column is accepted and ignored. Each predictor gets an automatic intercept.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Observations on one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaData {
    pub y1: Option<u64>,
    pub e: f64,
    pub y2: Option<u64>,
    pub trials: u64,
    pub y3: Option<f64>,
    pub w: Vec<f64>,
    /// Count-predictor design row, intercept first.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
}

/// Which responses are present and the predictor dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub count: bool,
    pub binomial: bool,
    pub continuous: bool,
    pub q: usize,
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
}

impl Layout {
    /// Number of discrete (latent) coordinates.
    pub fn d(&self) -> usize {
        self.count as usize + self.binomial as usize
    }

    /// Number of observed continuous coordinates.
    pub fn m(&self) -> usize {
        self.continuous as usize + self.q
    }

    /// Full joint dimension `d + m`.
    pub fn s(&self) -> usize {
        self.d() + self.m()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: Layout,
    pub areas: Vec<AreaData>,
    pub w_names: Vec<String>,
    pub x1_names: Vec<String>,
    pub x2_names: Vec<String>,
    pub x3_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Area,
    Y1,
    E,
    Y2,
    N,
    Y3,
    W(usize),
    X1(usize),
    X2(usize),
    X3(usize),
}

impl Dataset {
    /// Build a dataset from columns; `x*` columns exclude the intercept.
    #[allow(clippy::too_many_arguments)]
    pub fn from_columns(
        y1: Option<(Vec<u64>, Vec<f64>)>,
        y2: Option<(Vec<u64>, Vec<u64>)>,
        y3: Option<Vec<f64>>,
        w: Vec<(String, Vec<f64>)>,
        x1: Vec<(String, Vec<f64>)>,
        x2: Vec<(String, Vec<f64>)>,
        x3: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = y1
            .as_ref()
            .map(|c| c.0.len())
            .or(y2.as_ref().map(|c| c.0.len()))
            .or(y3.as_ref().map(|c| c.len()))
            .or(w.first().map(|c| c.1.len()))
            .ok_or_else(|| Error::Data("dataset has no response or confounder columns".into()))?;
        let check = |len: usize| {
            if len != n {
                Err(Error::DimensionMismatch { expected: n, got: len })
            } else {
                Ok(())
            }
        };
        if let Some((a, b)) = &y1 {
            check(a.len())?;
            check(b.len())?;
        }
        if let Some((a, b)) = &y2 {
            check(a.len())?;
            check(b.len())?;
        }
        if let Some(a) = &y3 {
            check(a.len())?;
        }
        for (_, c) in w.iter().chain(&x1).chain(&x2).chain(&x3) {
            check(c.len())?;
        }
        let layout = Layout {
            count: y1.is_some(),
            binomial: y2.is_some(),
            continuous: y3.is_some(),
            q: w.len(),
            r1: if y1.is_some() { 1 + x1.len() } else { 0 },
            r2: if y2.is_some() { 1 + x2.len() } else { 0 },
            r3: if y3.is_some() { 1 + x3.len() } else { 0 },
        };
        let row = |cols: &[(String, Vec<f64>)], i: usize, on: bool| {
            if on {
                std::iter::once(1.0).chain(cols.iter().map(|c| c.1[i])).collect()
            } else {
                Vec::new()
            }
        };
        let mut areas = Vec::with_capacity(n);
        for i in 0..n {
            let (y1v, e) = match &y1 {
                Some((y, e)) => {
                    if !(e[i] > 0.0) || !e[i].is_finite() {
                        return Err(Error::Data(format!("area {}: expected count must be positive", i + 1)));
                    }
                    (Some(y[i]), e[i])
                }
                None => (None, 1.0),
            };
            let (y2v, trials) = match &y2 {
                Some((y, nt)) => {
                    if y[i] > nt[i] {
                        return Err(Error::Data(format!("area {}: successes exceed trials", i + 1)));
                    }
                    (Some(y[i]), nt[i])
                }
                None => (None, 0),
            };
            let a = AreaData {
                y1: y1v,
                e,
                y2: y2v,
                trials,
                y3: y3.as_ref().map(|c| c[i]),
                w: w.iter().map(|c| c.1[i]).collect(),
                x1: row(&x1, i, layout.count),
                x2: row(&x2, i, layout.binomial),
                x3: row(&x3, i, layout.continuous),
            };
            if a.w.iter().chain(&a.x1).chain(&a.x2).chain(&a.x3).chain(a.y3.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("area {}: non-finite value", i + 1)));
            }
            areas.push(a);
        }
        let names = |cols: &[(String, Vec<f64>)]| cols.iter().map(|c| c.0.clone()).collect::<Vec<_>>();
        Ok(Dataset {
            layout,
            areas,
            w_names: names(&w),
            x1_names: names(&x1),
            x2_names: names(&x2),
            x3_names: names(&x3),
        })
    }

    pub fn n(&self) -> usize {
        self.areas.len()
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(f)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut roles = Vec::new();
        let (mut wn, mut x1n, mut x2n, mut x3n) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for h in headers.iter() {
            let role = match h {
                "area" => Role::Area,
                "y1" => Role::Y1,
                "E" => Role::E,
                "y2" => Role::Y2,
                "N" => Role::N,
                "y3" => Role::Y3,
                _ => {
                    let (kind, name) = h
                        .split_once(':')
                        .ok_or_else(|| Error::Parse { line: 1, msg: format!("unknown column role '{h}'") })?;
                    let list = match kind {
                        "w" => &mut wn,
                        "x1" => &mut x1n,
                        "x2" => &mut x2n,
                        "x3" => &mut x3n,
                        _ => return Err(Error::Parse { line: 1, msg: format!("unknown column role '{h}'") }),
                    };
                    list.push(name.to_string());
                    let k = list.len() - 1;
                    match kind {
                        "w" => Role::W(k),
                        "x1" => Role::X1(k),
                        "x2" => Role::X2(k),
                        _ => Role::X3(k),
                    }
                }
            };
            if roles.contains(&role) {
                return Err(Error::Parse { line: 1, msg: format!("duplicate column '{h}'") });
            }
            roles.push(role);
        }
        let has = |r: Role| roles.contains(&r);
        if has(Role::Y1) != has(Role::E) {
            return Err(Error::Parse { line: 1, msg: "y1 and E must appear together".into() });
        }
        if has(Role::Y2) != has(Role::N) {
            return Err(Error::Parse { line: 1, msg: "y2 and N must appear together".into() });
        }
        let (mut y1, mut e, mut y2, mut nt, mut y3) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut w = vec![Vec::new(); wn.len()];
        let mut x1 = vec![Vec::new(); x1n.len()];
        let mut x2 = vec![Vec::new(); x2n.len()];
        let mut x3 = vec![Vec::new(); x3n.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            if rec.len() != roles.len() {
                return Err(Error::Parse { line, msg: format!("expected {} fields, got {}", roles.len(), rec.len()) });
            }
            for (field, role) in rec.iter().zip(&roles) {
                let num = || field.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad number '{field}'") });
                let int = || field.parse::<u64>().map_err(|_| Error::Parse { line, msg: format!("bad count '{field}'") });
                match *role {
                    Role::Area => {}
                    Role::Y1 => y1.push(int()?),
                    Role::E => e.push(num()?),
                    Role::Y2 => y2.push(int()?),
                    Role::N => nt.push(int()?),
                    Role::Y3 => y3.push(num()?),
                    Role::W(k) => w[k].push(num()?),
                    Role::X1(k) => x1[k].push(num()?),
                    Role::X2(k) => x2[k].push(num()?),
                    Role::X3(k) => x3[k].push(num()?),
                }
            }
        }
        let zip = |names: Vec<String>, cols: Vec<Vec<f64>>| names.into_iter().zip(cols).collect::<Vec<_>>();
        Dataset::from_columns(
            has(Role::Y1).then_some((y1, e)),
            has(Role::Y2).then_some((y2, nt)),
            has(Role::Y3).then_some(y3),
            zip(wn, w),
            zip(x1n, x1),
            zip(x2n, x2),
            zip(x3n, x3),
        )
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["area".to_string()];
        let l = self.layout;
        if l.count {
            header.push("y1".into());
            header.push("E".into());
        }
        if l.binomial {
            header.push("y2".into());
            header.push("N".into());
        }
        if l.continuous {
            header.push("y3".into());
        }
        header.extend(self.w_names.iter().map(|s| format!("w:{s}")));
        header.extend(self.x1_names.iter().map(|s| format!("x1:{s}")));
        header.extend(self.x2_names.iter().map(|s| format!("x2:{s}")));
        header.extend(self.x3_names.iter().map(|s| format!("x3:{s}")));
        wtr.write_record(&header)?;
        for (i, a) in self.areas.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            if l.count {
                rec.push(a.y1.unwrap_or(0).to_string());
                rec.push(fmt_f64(a.e));
            }
            if l.binomial {
                rec.push(a.y2.unwrap_or(0).to_string());
                rec.push(a.trials.to_string());
            }
            if let Some(v) = a.y3 {
                rec.push(fmt_f64(v));
            }
            rec.extend(a.w.iter().map(|&v| fmt_f64(v)));
            rec.extend(a.x1.iter().skip(1).map(|&v| fmt_f64(v)));
            rec.extend(a.x2.iter().skip(1).map(|&v| fmt_f64(v)));
            rec.extend(a.x3.iter().skip(1).map(|&v| fmt_f64(v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    /// Column-wise mean and (population) variance of the confounders.
    pub fn confounder_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let cols: Vec<Vec<f64>> = (0..self.layout.q).map(|k| self.areas.iter().map(|a| a.w[k]).collect()).collect();
        let mean: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let var: Vec<f64> = cols.iter().zip(&mean).map(|(c, m)| variance(c, *m)).collect();
        (mean, var)
    }
}

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() { 0.0 } else { x.iter().sum::<f64>() / x.len() as f64 }
}

pub fn variance(x: &[f64], m: f64) -> f64 {
    if x.len() < 2 {
        return 1.0;
    }
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}
