//! CSV rows for grid, sweep and summary results.
//!
//! Headers (one line, fixed):
//! - grid: `algorithm,seed,mass_multiple,frozen_actuator,in_distribution,mean_return,std_return,mean_alpha,std_alpha,n`
//! - sweep: `algorithm,seed,rate,mean_return,std_return,mean_alpha,std_alpha,n`
//! - summary: `algorithm,seed,id_average,ood_average,id_alpha,ood_alpha,id_cells,ood_cells`
//!
//! `frozen_actuator` is `none` or an index. An empty alpha field means the
//! algorithm has no blend coefficient; an empty summary seed is the mean
//! over seeds.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub algorithm: String,
    pub seed: u64,
    pub mass_multiple: f64,
    #[serde(with = "frozen_field")]
    pub frozen_actuator: Option<usize>,
    pub in_distribution: bool,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_alpha: Option<f64>,
    pub std_alpha: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub seed: u64,
    pub rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_alpha: Option<f64>,
    pub std_alpha: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub seed: Option<u64>,
    pub id_average: f64,
    pub ood_average: f64,
    pub id_alpha: Option<f64>,
    pub ood_alpha: Option<f64>,
    pub id_cells: usize,
    pub ood_cells: usize,
}

mod frozen_field {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(k) => s.serialize_str(&k.to_string()),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "none" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(serde::de::Error::custom)
        }
    }
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub fn write_grid_csv(rows: &[GridRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    read_rows(path)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// ID and OOD averages per (algorithm, seed), each an unweighted mean over
/// cells, followed per algorithm by the mean over its seeds. Groups keep
/// first-seen order.
pub fn summarize(rows: &[GridRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in rows {
        let k = (r.algorithm.clone(), r.seed);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let per_seed: Vec<SummaryRow> = keys
        .iter()
        .map(|(alg, seed)| {
            let group = || rows.iter().filter(move |r| &r.algorithm == alg && r.seed == *seed);
            let id = || group().filter(|r| r.in_distribution);
            let ood = || group().filter(|r| !r.in_distribution);
            SummaryRow {
                algorithm: alg.clone(),
                seed: Some(*seed),
                id_average: mean(id().map(|r| r.mean_return)).unwrap_or(0.0),
                ood_average: mean(ood().map(|r| r.mean_return)).unwrap_or(0.0),
                id_alpha: mean(id().filter_map(|r| r.mean_alpha)),
                ood_alpha: mean(ood().filter_map(|r| r.mean_alpha)),
                id_cells: id().count(),
                ood_cells: ood().count(),
            }
        })
        .collect();

    let mut algs: Vec<&str> = Vec::new();
    for (a, _) in &keys {
        if !algs.contains(&a.as_str()) {
            algs.push(a);
        }
    }
    let mut out = per_seed.clone();
    for alg in algs {
        let g = || per_seed.iter().filter(move |s| s.algorithm == alg);
        out.push(SummaryRow {
            algorithm: alg.to_string(),
            seed: None,
            id_average: mean(g().map(|s| s.id_average)).unwrap_or(0.0),
            ood_average: mean(g().map(|s| s.ood_average)).unwrap_or(0.0),
            id_alpha: mean(g().filter_map(|s| s.id_alpha)),
            ood_alpha: mean(g().filter_map(|s| s.ood_alpha)),
            id_cells: g().map(|s| s.id_cells).sum(),
            ood_cells: g().map(|s| s.ood_cells).sum(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alg: &str, seed: u64, mass: f64, frozen: Option<usize>, id: bool, ret: f64, alpha: Option<f64>) -> GridRow {
        GridRow {
            algorithm: alg.into(),
            seed,
            mass_multiple: mass,
            frozen_actuator: frozen,
            in_distribution: id,
            mean_return: ret,
            std_return: 0.1 * ret,
            mean_alpha: alpha,
            std_alpha: alpha.map(|a| a / 3.0),
            n: 200,
        }
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let rows = vec![
            row("gram", 0, 1.0, None, true, 0.812_345_678_901_234_5, Some(0.987_654_321)),
            row("gram", 0, 4.0, Some(3), false, 1.0 / 3.0, Some(1e-17)),
            row("robust", 2, 0.5, Some(0), false, 0.0, None),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        write_grid_csv(&rows, &p).unwrap();
        assert_eq!(read_grid_csv(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "algorithm,seed,mass_multiple,frozen_actuator,in_distribution,mean_return,std_return,mean_alpha,std_alpha,n"
        );
        assert!(text.contains(",none,"));
    }

    #[test]
    fn sweep_and_summary_round_trip() {
        let sweep = vec![SweepRow {
            algorithm: "contextual".into(),
            seed: 4,
            rate: 0.25,
            mean_return: 0.5,
            std_return: 0.01,
            mean_alpha: None,
            std_alpha: None,
            n: 10,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_sweep_csv(&sweep, &p).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), sweep);

        let summary = summarize(&[row("gram", 0, 1.0, None, true, 0.9, Some(0.95))]);
        let q = dir.path().join("summary.csv");
        write_summary_csv(&summary, &q).unwrap();
        assert_eq!(read_summary_csv(&q).unwrap(), summary);
    }

    #[test]
    fn summary_averages_are_unweighted_cell_means() {
        let rows = vec![
            row("gram", 0, 1.0, None, true, 0.9, Some(1.0)),
            row("gram", 0, 2.0, None, false, 0.6, Some(0.5)),
            row("gram", 0, 3.0, None, false, 0.3, Some(0.1)),
            row("gram", 1, 1.0, None, true, 0.7, Some(0.9)),
            row("gram", 1, 2.0, None, false, 0.2, Some(0.3)),
            row("robust", 0, 1.0, None, true, 0.5, None),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].id_average, 0.9);
        assert!((s[0].ood_average - 0.45).abs() < 1e-15);
        assert_eq!((s[0].id_cells, s[0].ood_cells), (1, 2));
        assert_eq!(s[0].ood_alpha, Some(0.3));
        assert_eq!(s[2].algorithm, "robust");
        assert_eq!(s[2].id_alpha, None);
        let all = &s[3];
        assert_eq!((all.algorithm.as_str(), all.seed), ("gram", None));
        assert!((all.id_average - 0.8).abs() < 1e-15);
        assert!((all.ood_average - 0.325).abs() < 1e-15);
        assert_eq!(s[4].ood_cells, 0);
    }

    #[test]
    fn empty_input_gives_empty_summary() {
        assert!(summarize(&[]).is_empty());
    }
}
