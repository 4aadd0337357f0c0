//! Merge `results.csv` files from several runs into one table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use vmgp_core::environments::EnvId;

use crate::experiment::ResultRow;
use crate::HarnessError;

/// Reads every row from the given files; a directory means its
/// `results.csv`.
pub fn read_results(paths: &[PathBuf]) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rows = Vec::new();
    for p in paths {
        let file: PathBuf = if p.is_dir() {
            p.join("results.csv")
        } else {
            p.clone()
        };
        rows.extend(read_one(&file)?);
    }
    Ok(rows)
}

fn read_one(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| HarnessError::Usage(format!("bad row in {}: {e}", path.display())))
        })
        .collect()
}

fn env_order(name: &str) -> (usize, String) {
    let pos = EnvId::ALL
        .iter()
        .position(|e| e.as_str() == name)
        .unwrap_or(EnvId::ALL.len());
    (pos, name.to_string())
}

/// Models as rows, environments as columns, `mean ± se` cells. The lowest
/// mean in each column is marked with `*`.
///
/// With `metric = None` all rows must share one metric. Several rows for the
/// same cell (e.g. different seeds) are pooled: the mean of the means with
/// standard error `sqrt(Σ se²) / n`.
pub fn table_report(rows: &[ResultRow], metric: Option<&str>) -> Result<String, HarnessError> {
    let metric = match metric {
        Some(m) => m.to_string(),
        None => {
            let metrics: BTreeSet<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
            if metrics.len() > 1 {
                return Err(HarnessError::Usage(format!(
                    "rows mix metrics ({}); choose one",
                    metrics.into_iter().collect::<Vec<_>>().join(", ")
                )));
            }
            match metrics.into_iter().next() {
                Some(m) => m.to_string(),
                None => return Err(HarnessError::Usage("no result rows".into())),
            }
        }
    };
    let selected: Vec<&ResultRow> = rows.iter().filter(|r| r.metric == metric).collect();
    if selected.is_empty() {
        return Err(HarnessError::Usage(format!(
            "no rows with metric `{metric}`"
        )));
    }

    let mut cells: BTreeMap<(&str, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &selected {
        cells
            .entry((r.model.as_str(), r.environment.as_str()))
            .or_default()
            .push((r.mean, r.std_error));
    }
    let pooled: BTreeMap<(&str, &str), (f64, f64)> = cells
        .into_iter()
        .map(|(key, v)| {
            let n = v.len() as f64;
            let mean = v.iter().map(|c| c.0).sum::<f64>() / n;
            let se = v.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt() / n;
            (key, (mean, se))
        })
        .collect();

    let models: BTreeSet<&str> = pooled.keys().map(|k| k.0).collect();
    let mut envs: Vec<&str> = pooled
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    envs.sort_by_key(|e| env_order(e));

    // Models iterate in lexicographic order, so a strict `<` keeps the
    // first name on ties.
    let mut best: BTreeMap<&str, &str> = BTreeMap::new();
    for &env in &envs {
        let mut arg: Option<(&str, f64)> = None;
        for &m in &models {
            if let Some(&(mean, _)) = pooled.get(&(m, env)) {
                if arg.is_none_or(|(_, b)| mean < b) {
                    arg = Some((m, mean));
                }
            }
        }
        if let Some((m, _)) = arg {
            best.insert(env, m);
        }
    }

    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["model".to_string()];
    header.extend(envs.iter().map(|e| e.to_string()));
    grid.push(header);
    for &m in &models {
        let mut line = vec![m.to_string()];
        for &env in &envs {
            line.push(match pooled.get(&(m, env)) {
                Some(&(mean, se)) => {
                    let flag = if best.get(env) == Some(&m) { " *" } else { "" };
                    format!("{mean:.3} ± {se:.3}{flag}")
                }
                None => "-".into(),
            });
        }
        grid.push(line);
    }

    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| {
            grid.iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    writeln!(out, "Average {} ± std. error", metric.to_uppercase()).unwrap();
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "| {} |", cells.join(" | ")).unwrap();
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            writeln!(out, "|-{}-|", rule.join("-|-")).unwrap();
        }
    }
    writeln!(out).unwrap();
    writeln!(
        out,
        "Cells are mean ± standard error over all query points of all test tasks."
    )
    .unwrap();
    writeln!(
        out,
        "* marks the lowest mean per environment; ties go to the lexicographically first model name."
    )
    .unwrap();
    writeln!(
        out,
        "Repeated runs of one cell are pooled: mean of means, standard error sqrt(sum se^2)/n."
    )
    .unwrap();
    Ok(out)
}
