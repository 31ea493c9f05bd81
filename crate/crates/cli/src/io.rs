//! CSV and JSON reading and writing.
//!
//! Every CSV file has a header row, comma delimiters and `.` decimals.
//! Numbers are written with 17 significant digits, which round-trips every
//! finite `f64` exactly. Missing values are rejected on input.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use cpjoint::model::{Dataset, SubjectRecord};
use cpjoint::sampler::PosteriorDraws;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// `v` with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn create(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::config(format!("cannot write {}: {e}", path.display()))
}

/// Writes a table of preformatted cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| write_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| write_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| write_err(path, e))
}

/// Writes `longitudinal.csv` (`subject_id, visit_time, y, x1..xp`) and
/// `survival.csv` (`subject_id, time, event, w1..wq`) into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> CliResult<()> {
    let mut header: Vec<String> = ["subject_id", "visit_time", "y"].map(String::from).to_vec();
    header.extend((1..=data.p_x()).map(|k| format!("x{k}")));
    let mut rows = Vec::new();
    for s in data.subjects() {
        for j in 0..s.n_visits() {
            let mut row = vec![s.id.clone(), fmt_num(s.s[j]), fmt_num(s.y[j])];
            row.extend(s.x[j].iter().map(|&v| fmt_num(v)));
            rows.push(row);
        }
    }
    write_table(&dir.join("longitudinal.csv"), &header, &rows)?;

    let mut header: Vec<String> = ["subject_id", "time", "event"].map(String::from).to_vec();
    header.extend((1..=data.p_w()).map(|k| format!("w{k}")));
    let rows: Vec<Vec<String>> = data
        .subjects()
        .iter()
        .map(|s| {
            let mut row = vec![
                s.id.clone(),
                fmt_num(s.t_obs),
                if s.event { "1" } else { "0" }.to_string(),
            ];
            row.extend(s.w.iter().map(|&v| fmt_num(v)));
            row
        })
        .collect();
    write_table(&dir.join("survival.csv"), &header, &rows)
}

/// CSV reader that reports problems as `<file> line <n>: ...`.
struct Table {
    name: String,
    header: Vec<String>,
    reader: csv::Reader<File>,
}

impl Table {
    fn open(path: &Path, required: &[&str]) -> CliResult<Self> {
        let name = file_name(path);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::data(format!("{name} line 1: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.len() < required.len() || header[..required.len()] != *required {
            return Err(CliError::data(format!(
                "{name} line 1: header must start with {}, found {}",
                required.join(","),
                header.join(",")
            )));
        }
        Ok(Self {
            name,
            header,
            reader,
        })
    }

    /// Every data row with its line number.
    fn rows(&mut self) -> CliResult<Vec<(u64, csv::StringRecord)>> {
        let name = &self.name;
        self.reader
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| csv_error(name, e))?;
                Ok((rec.position().map_or(0, |p| p.line()), rec))
            })
            .collect()
    }

    fn number(&self, line: u64, rec: &csv::StringRecord, col: usize) -> CliResult<f64> {
        let raw = rec[col].trim();
        if raw.is_empty() {
            return Err(self.error(
                line,
                format!("missing value in column `{}`", self.header[col]),
            ));
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(
                line,
                format!(
                    "column `{}`: `{raw}` is not a finite number",
                    self.header[col]
                ),
            )),
        }
    }

    fn id(&self, line: u64, rec: &csv::StringRecord) -> CliResult<String> {
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(self.error(line, "missing subject_id"));
        }
        Ok(id.to_string())
    }

    fn error(&self, line: u64, msg: impl std::fmt::Display) -> CliError {
        CliError::data(format!("{} line {line}: {msg}", self.name))
    }
}

fn csv_error(name: &str, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            pos: Some(pos),
            expected_len,
            len,
        } => CliError::data(format!(
            "{name} line {}: expected {expected_len} fields, found {len}",
            pos.line()
        )),
        _ => CliError::data(format!("{name}: {e}")),
    }
}

/// Reads a dataset written by [`write_dataset`] (or by hand in the same
/// layout). Subjects keep the survival file's order; visits keep file order
/// and must already be increasing.
pub fn read_dataset(longitudinal: &Path, survival: &Path) -> CliResult<Dataset> {
    let mut surv = Table::open(survival, &["subject_id", "time", "event"])?;
    let p_w = surv.header.len() - 3;
    let mut subjects: Vec<SubjectRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in surv.rows()? {
        let id = surv.id(line, &rec)?;
        if index.contains_key(&id) {
            return Err(surv.error(line, format!("duplicate subject `{id}`")));
        }
        let t_obs = surv.number(line, &rec, 1)?;
        let event = match rec[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(surv.error(
                    line,
                    format!("column `event`: expected 0 or 1, got `{other}`"),
                ))
            }
        };
        let w = (0..p_w)
            .map(|k| surv.number(line, &rec, 3 + k))
            .collect::<CliResult<Vec<f64>>>()?;
        index.insert(id.clone(), subjects.len());
        subjects.push(SubjectRecord {
            id,
            x: Vec::new(),
            w,
            s: Vec::new(),
            y: Vec::new(),
            t_obs,
            event,
        });
    }

    let mut long = Table::open(longitudinal, &["subject_id", "visit_time", "y"])?;
    let p_x = long.header.len() - 3;
    let surv_name = surv.name.clone();
    for (line, rec) in long.rows()? {
        let id = long.id(line, &rec)?;
        let Some(&i) = index.get(&id) else {
            return Err(long.error(
                line,
                format!("subject `{id}` does not appear in {surv_name}"),
            ));
        };
        let s = long.number(line, &rec, 1)?;
        let y = long.number(line, &rec, 2)?;
        let x = (0..p_x)
            .map(|k| long.number(line, &rec, 3 + k))
            .collect::<CliResult<Vec<f64>>>()?;
        let subj = &mut subjects[i];
        subj.s.push(s);
        subj.y.push(y);
        subj.x.push(x);
    }
    Dataset::new(subjects).map_err(|e| CliError::data(e.to_string()))
}

/// Writes one row per draw: `chain, iteration` (both from 1), then every
/// recorded parameter.
pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> CliResult<()> {
    let mut header: Vec<String> = vec!["chain".into(), "iteration".into()];
    header.extend(draws.names().iter().cloned());
    let mut rows = Vec::with_capacity(draws.n_chains() * draws.n_samples());
    for c in 0..draws.n_chains() {
        for i in 0..draws.n_samples() {
            let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
            row.extend(draws.row(c, i).iter().map(|&v| fmt_num(v)));
            rows.push(row);
        }
    }
    write_table(path, &header, &rows)
}

/// Reads a file written by [`write_draws`]. Rows must be grouped by chain.
pub fn read_draws(path: &Path) -> CliResult<PosteriorDraws> {
    if !path.exists() {
        return Err(CliError::data(format!(
            "draws file {} does not exist",
            path.display()
        )));
    }
    let mut t = Table::open(path, &["chain", "iteration"])?;
    let names: Vec<String> = t.header[2..].to_vec();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut chain_ids: Vec<String> = Vec::new();
    for (line, rec) in t.rows()? {
        let chain = rec[0].trim().to_string();
        if chain_ids.last() != Some(&chain) {
            if chain_ids.contains(&chain) {
                return Err(t.error(line, format!("rows of chain {chain} are not contiguous")));
            }
            chain_ids.push(chain);
            chains.push(Vec::new());
        }
        let row = (0..names.len())
            .map(|k| t.number(line, &rec, 2 + k))
            .collect::<CliResult<Vec<f64>>>()?;
        chains.last_mut().expect("chain pushed above").push(row);
    }
    if chains.is_empty() {
        return Err(CliError::data(format!("{}: no draws", t.name)));
    }
    PosteriorDraws::from_chains(names, chains)
        .map_err(|e| CliError::data(format!("{}: {e}", t.name)))
}
