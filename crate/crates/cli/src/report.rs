//! Aggregates result tables over seeds into CSV series.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{io, CliError};
use crate::sweep::{ResultRow, ResultsTable};

/// One point of an accuracy-vs-budget series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub budget: f64,
    pub model: String,
    pub attack: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub budget: f64,
    pub model: String,
    pub attack: String,
    pub toggles: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub series: Vec<SeriesRow>,
    pub strongest: Vec<SeriesRow>,
    pub ablation: Vec<AblationRow>,
    pub gaps: Vec<String>,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    model: String,
    attack: String,
    toggles: String,
    budget: u64,
}

fn group(rows: &[ResultRow]) -> BTreeMap<Key, Vec<&ResultRow>> {
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = Key {
            model: r.model.clone(),
            attack: r.attack.clone(),
            toggles: r.toggles.clone(),
            // budgets are non-negative, so their bit patterns sort numerically
            budget: r.budget.to_bits(),
        };
        groups.entry(key).or_default().push(r);
    }
    groups
}

fn seed_gaps(groups: &BTreeMap<Key, Vec<&ResultRow>>, table: &str, gaps: &mut Vec<String>) {
    let seeds: BTreeSet<u64> = groups.values().flatten().map(|r| r.seed).collect();
    for (k, rows) in groups {
        let have: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
        for s in seeds.difference(&have) {
            gaps.push(format!(
                "{table}: no row for model {} attack {} toggles {} budget {} seed {s}",
                k.model,
                k.attack,
                k.toggles,
                f64::from_bits(k.budget)
            ));
        }
    }
}

fn series(table: &ResultsTable, gaps: &mut Vec<String>) -> (Vec<SeriesRow>, Vec<SeriesRow>) {
    let groups = group(&table.rows);
    seed_gaps(&groups, "attack", gaps);
    let budgets: BTreeSet<u64> = groups.keys().map(|k| k.budget).collect();
    let mut out = Vec::new();
    let mut per_series: BTreeMap<(String, String, String), BTreeSet<u64>> = BTreeMap::new();
    for (k, rows) in &groups {
        let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        out.push(SeriesRow {
            budget: f64::from_bits(k.budget),
            model: k.model.clone(),
            attack: k.attack.clone(),
            mean,
            std,
        });
        per_series
            .entry((k.model.clone(), k.attack.clone(), k.toggles.clone()))
            .or_default()
            .insert(k.budget);
    }
    for ((model, attack, _), have) in &per_series {
        for b in budgets.difference(have) {
            gaps.push(format!("attack: no row for model {model} attack {attack} budget {}", f64::from_bits(*b)));
        }
    }

    let mut strongest: BTreeMap<(String, u64), SeriesRow> = BTreeMap::new();
    for r in &out {
        let slot = strongest.entry((r.model.clone(), r.budget.to_bits())).or_insert_with(|| r.clone());
        if r.mean < slot.mean {
            *slot = r.clone();
        }
    }
    let strongest = strongest
        .into_values()
        .map(|r| SeriesRow {
            attack: "strongest".into(),
            ..r
        })
        .collect();
    (out, strongest)
}

fn ablation(table: &ResultsTable, gaps: &mut Vec<String>) -> Vec<AblationRow> {
    let groups = group(&table.rows);
    seed_gaps(&groups, "ablation", gaps);
    groups
        .iter()
        .map(|(k, rows)| {
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            let (mean, std) = mean_std(&acc);
            AblationRow {
                budget: f64::from_bits(k.budget),
                model: k.model.clone(),
                attack: k.attack.clone(),
                toggles: k.toggles.clone(),
                mean,
                std,
            }
        })
        .collect()
}

/// Builds the report from whichever result tables are present.
pub fn build(attack: Option<&ResultsTable>, ablate: Option<&ResultsTable>) -> Report {
    let mut report = Report::default();
    if let Some(t) = attack {
        (report.series, report.strongest) = series(t, &mut report.gaps);
    }
    if let Some(t) = ablate {
        report.ablation = ablation(t, &mut report.gaps);
    }
    report
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Reads `attack/` and `ablate/` results below `out` and writes the CSVs to
/// `report/`. Missing rows are reported as gaps and logged.
pub fn cmd_report(out: &Path) -> Result<Report, CliError> {
    let load = |sub: &str| -> Result<Option<ResultsTable>, CliError> {
        let path = out.join(sub).join("results.json");
        if path.exists() {
            ResultsTable::load(&path).map(Some)
        } else {
            Ok(None)
        }
    };
    let (attack, ablate) = (load("attack")?, load("ablate")?);
    let rows = attack.iter().chain(&ablate).map(|t| t.rows.len()).sum::<usize>();
    if rows == 0 {
        return Err(CliError::Validation(format!("no results below {}", out.display())));
    }
    let report = build(attack.as_ref(), ablate.as_ref());
    for gap in &report.gaps {
        log::warn!("gap: {gap}");
    }
    let dir = out.join("report");
    if attack.is_some() {
        write_csv(&dir.join("accuracy_vs_budget.csv"), &report.series)?;
        write_csv(&dir.join("strongest.csv"), &report.strongest)?;
    }
    if ablate.is_some() {
        write_csv(&dir.join("ablation.csv"), &report.ablation)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, attack: &str, budget: f64, seed: u64, accuracy: f64) -> ResultRow {
        ResultRow {
            model: model.into(),
            attack: attack.into(),
            budget,
            toggles: "all".into(),
            seed,
            accuracy,
        }
    }

    #[test]
    fn strongest_is_the_minimum_over_attacks() {
        let t = ResultsTable {
            config_hash: String::new(),
            rows: vec![
                row("gcn", "adaptive", 0.01, 0, 50.0),
                row("gcn", "adaptive", 0.01, 1, 52.0),
                row("gcn", "random", 0.01, 0, 60.0),
                row("gcn", "random", 0.01, 1, 40.0),
                row("gcn", "transfer", 0.01, 0, 55.0),
                row("gcn", "transfer", 0.01, 1, 56.0),
            ],
        };
        let r = build(Some(&t), None);
        assert_eq!(r.strongest.len(), 1);
        assert_eq!(r.strongest[0].mean, 50.0);
        assert_eq!(r.strongest[0].attack, "strongest");
        assert!(r.gaps.is_empty());
    }

    #[test]
    fn missing_budget_and_seed_are_gaps() {
        let t = ResultsTable {
            config_hash: String::new(),
            rows: vec![
                row("gcn", "adaptive", 0.01, 0, 50.0),
                row("gcn", "adaptive", 0.02, 0, 40.0),
                row("gcn", "adaptive", 0.02, 1, 40.0),
                row("gcn", "random", 0.01, 0, 60.0),
                row("gcn", "random", 0.01, 1, 60.0),
            ],
        };
        let r = build(Some(&t), None);
        assert_eq!(r.gaps.len(), 2, "{:?}", r.gaps);
        assert_eq!(r.series.len(), 3);
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
