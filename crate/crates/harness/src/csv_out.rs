//! CSV files. Each starts with a `# <schema> v<version>` comment line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use isac_core::training::LossRecord;

use crate::error::{HarnessError, Result};
use crate::eval::ResultRow;

pub const RESULTS_SCHEMA: &str = "# isac-results v1";
pub const LOSS_SCHEMA: &str = "# isac-loss-history v1";

const RESULT_COLUMNS: [&str; 11] = [
    "method",
    "axis",
    "value",
    "x",
    "seed",
    "realizations",
    "gamma_min_db",
    "q_db",
    "feasible_fraction",
    "ms_per_inference",
    "user_sinr_db",
];

/// `ms_per_inference` is wall-clock; every other column is a function of the seed.
pub fn write_results(out: impl Write, rows: &[ResultRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{RESULTS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        let users = r.user_sinr_db.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.method.clone(),
            r.axis.clone(),
            r.value.clone(),
            r.x.to_string(),
            r.seed.to_string(),
            r.realizations.to_string(),
            r.gamma_min_db.to_string(),
            r.q_db.to_string(),
            r.feasible_fraction.to_string(),
            r.ms_per_inference.to_string(),
            users,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn skip_schema(input: impl Read, schema: &str) -> Result<BufReader<impl Read>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != schema {
        return Err(HarnessError::Config(format!("expected schema line `{schema}`, found `{}`", first.trim_end())));
    }
    Ok(reader)
}

pub fn read_results(input: impl Read) -> Result<Vec<ResultRow>> {
    let reader = skip_schema(input, RESULTS_SCHEMA)?;
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(reader).records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| HarnessError::Config(format!("bad number `{}` in column {}", &rec[i], RESULT_COLUMNS[i])))
        };
        let users = if rec[10].is_empty() {
            Vec::new()
        } else {
            rec[10]
                .split(';')
                .map(|s| s.parse().map_err(|_| HarnessError::Config(format!("bad user SINR `{s}`"))))
                .collect::<Result<_>>()?
        };
        rows.push(ResultRow {
            method: rec[0].to_string(),
            axis: rec[1].to_string(),
            value: rec[2].to_string(),
            x: num(3)?,
            seed: num(4)? as u64,
            realizations: num(5)? as usize,
            gamma_min_db: num(6)?,
            q_db: num(7)?,
            feasible_fraction: num(8)?,
            ms_per_inference: num(9)?,
            user_sinr_db: users,
        });
    }
    Ok(rows)
}

pub fn save_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_results(std::fs::File::create(path)?, rows)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_results(std::fs::File::open(path)?)
}

pub fn write_loss_history(out: impl Write, history: &[LossRecord]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{LOSS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "batch", "neg_loss", "q_term", "penalty", "min_slack", "grad_norm"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.batch.to_string(),
            r.neg_loss.to_string(),
            r.q_term.to_string(),
            r.penalty.to_string(),
            r.min_slack.to_string(),
            r.grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
