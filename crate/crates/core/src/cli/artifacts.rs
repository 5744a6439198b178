//! Files written by the subcommands.

use std::io::{self, Write};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::sigstats::{RunEnsemble, RunFailure, RunRecord};
use crate::sparsesolve::SolveDiagnostics;

pub const COEFFICIENT_HEADER: [&str; 5] = ["run", "alternative", "base_function", "label", "coefficient"];

/// Long-form coefficients: one line per (run, alternative, base function).
pub fn write_coefficients<W: Write>(writer: W, runs: &[RunRecord], alternatives: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COEFFICIENT_HEADER)?;
    for r in runs {
        for (position, a) in alternatives.iter().enumerate() {
            for (j, (name, label)) in r.names.iter().zip(&r.labels).enumerate() {
                w.write_record([
                    r.run.to_string(),
                    a.to_string(),
                    name.clone(),
                    label.clone(),
                    r.coefficients[(j, position)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses one or more long-form files into runs, in order of appearance.
pub fn read_coefficients<R: io::Read>(readers: Vec<R>) -> Result<RunEnsemble> {
    struct Partial {
        run: usize,
        names: Vec<String>,
        labels: Vec<String>,
        columns: Vec<(usize, Vec<f64>)>,
    }
    let mut partials: Vec<Partial> = Vec::new();
    for reader in readers {
        let mut rd = csv::Reader::from_reader(reader);
        if rd.headers()?.iter().ne(COEFFICIENT_HEADER) {
            bail!("coefficient file header must be {}", COEFFICIENT_HEADER.join(","));
        }
        let mut continues = false;
        for rec in rd.records() {
            let rec = rec?;
            let run: usize = rec[0].parse().context("run column")?;
            let alternative: usize = rec[1].parse().context("alternative column")?;
            let value: f64 = rec[4].parse().with_context(|| format!("coefficient `{}`", &rec[4]))?;
            if !continues || partials.last().map_or(true, |p| p.run != run) {
                if partials.iter().any(|p| p.run == run) {
                    bail!("run {run} appears twice");
                }
                partials.push(Partial { run, names: Vec::new(), labels: Vec::new(), columns: Vec::new() });
            }
            continues = true;
            let p = partials.last_mut().expect("pushed above");
            if p.columns.last().map_or(true, |(a, _)| *a != alternative) {
                p.columns.push((alternative, Vec::new()));
            }
            let first_alternative = p.columns.len() == 1;
            let (_, col) = p.columns.last_mut().expect("pushed above");
            if first_alternative {
                p.names.push(rec[2].to_string());
                p.labels.push(rec[3].to_string());
            } else if p.names.get(col.len()).map(String::as_str) != Some(&rec[2]) {
                bail!("run {run}: alternatives list different base functions");
            }
            col.push(value);
        }
    }
    let Some(first) = partials.first() else { bail!("no coefficients found") };
    let alternatives: Vec<usize> = first.columns.iter().map(|(a, _)| *a).collect();
    let mut runs = Vec::with_capacity(partials.len());
    for p in partials {
        if p.columns.iter().map(|(a, _)| *a).ne(alternatives.iter().copied()) {
            bail!("run {} solves different alternatives", p.run);
        }
        let k = p.names.len();
        if p.columns.iter().any(|(_, c)| c.len() != k) {
            bail!("run {}: ragged coefficient columns", p.run);
        }
        let coefficients = DMatrix::from_fn(k, p.columns.len(), |j, a| p.columns[a].1[j]);
        runs.push(RunRecord {
            run: p.run,
            seed: 0,
            names: p.names,
            labels: p.labels,
            coefficients,
            diagnostics: Vec::new(),
        });
    }
    Ok(RunEnsemble::from_runs(runs, alternatives)?)
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    run: usize,
    seed: u64,
    alternative: usize,
    #[serde(flatten)]
    diagnostics: &'a SolveDiagnostics,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    run: usize,
    seed: u64,
    error: &'a str,
}

/// JSON lines, one per solve and one per failed run.
pub fn write_run_log<W: Write>(
    mut writer: W,
    runs: &[RunRecord],
    failures: &[RunFailure],
    alternatives: &[usize],
) -> Result<()> {
    for r in runs {
        for (d, a) in r.diagnostics.iter().zip(alternatives) {
            let rec = SolveRecord { run: r.run, seed: r.seed, alternative: *a, diagnostics: d };
            writeln!(writer, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    for f in failures {
        let rec = FailureRecord { run: f.run, seed: f.seed, error: &f.message };
        writeln!(writer, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(run: usize, k: usize, a: usize) -> RunRecord {
        RunRecord {
            run,
            seed: 0,
            names: (0..k).map(|j| format!("f{j}")).collect(),
            labels: (0..k).map(|j| format!("power(x{j}, 2), \"q\"")).collect(),
            coefficients: DMatrix::from_fn(k, a, |j, c| (run * 31 + j * 7 + c) as f64 / 3.0 - 1e-300),
            diagnostics: Vec::new(),
        }
    }

    #[test]
    fn long_form_round_trip() {
        let runs = vec![record(0, 4, 2), record(3, 4, 2)];
        let mut buf = Vec::new();
        write_coefficients(&mut buf, &runs, &[0, 1]).unwrap();
        let back = read_coefficients(vec![buf.as_slice()]).unwrap();
        assert_eq!(back.runs, runs);
        assert_eq!(back.alternatives, vec![0, 1]);
    }

    #[test]
    fn split_files_merge() {
        let runs = vec![record(0, 3, 1), record(1, 3, 1)];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_coefficients(&mut a, &runs[..1], &[1]).unwrap();
        write_coefficients(&mut b, &runs[1..], &[1]).unwrap();
        let back = read_coefficients(vec![a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(back.runs, runs);
        assert!(read_coefficients(vec![a.as_slice(), a.as_slice()]).is_err());
    }
}
