use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CellOutcome, GridCell};
use crate::losses::LossKind;
use crate::metrics::COLUMN_LABELS;
use crate::model::EncoderFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub n: Option<usize>,
    /// `[ρ_V, ρ_A, RMSE_V, RMSE_A, MAE_V, MAE_A]`; `None` for failed cells.
    pub values: Option<[Option<f64>; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Model × loss comparison with the best value of each column marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Row index of the best value per column: highest ρ, lowest error.
    pub best: [Option<usize>; 6],
}

impl ComparisonTable {
    pub fn from_cells(cells: &[GridCell]) -> Self {
        let rows = cells
            .iter()
            .map(|c| match &c.outcome {
                CellOutcome::Completed(r) => ComparisonRow {
                    model: c.model,
                    loss: c.loss,
                    n: Some(r.global.n),
                    values: Some(r.global.columns()),
                    error: None,
                },
                CellOutcome::Failed(e) => ComparisonRow {
                    model: c.model,
                    loss: c.loss,
                    n: None,
                    values: None,
                    error: Some(e.clone()),
                },
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn from_rows(rows: Vec<ComparisonRow>) -> Self {
        let mut best = [None; 6];
        for (col, slot) in best.iter_mut().enumerate() {
            let higher_is_better = col < 2;
            let mut winner: Option<(usize, f64)> = None;
            for (i, row) in rows.iter().enumerate() {
                let Some(v) = row.values.and_then(|v| v[col]) else { continue };
                let better = match winner {
                    None => true,
                    Some((_, w)) => if higher_is_better { v > w } else { v < w },
                };
                if better {
                    winner = Some((i, v));
                }
            }
            *slot = winner.map(|(i, _)| i);
        }
        Self { rows, best }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,loss,n");
        for l in COLUMN_LABELS {
            let _ = write!(out, ",{l}");
        }
        out.push_str(",best,status\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{},{}", r.model, r.loss, r.n.map(|n| n.to_string()).unwrap_or_default());
            for col in 0..6 {
                let v = r.values.and_then(|v| v[col]).map(|x| x.to_string()).unwrap_or_default();
                let _ = write!(out, ",{v}");
            }
            let best: Vec<&str> = (0..6).filter(|&c| self.best[c] == Some(i)).map(|c| COLUMN_LABELS[c]).collect();
            let status = match &r.error {
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
                None => "ok".to_string(),
            };
            let _ = writeln!(out, ",{},{status}", best.join(" "));
        }
        out
    }

    /// Text table, three decimals; `*` marks the best value per column.
    pub fn render(&self) -> String {
        let mut out = format!("{:<18} {:<9}", "Model", "Loss");
        for l in COLUMN_LABELS {
            let _ = write!(out, " {l:>8}");
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{:<18} {:<9}", r.model.label(), r.loss.label());
            match r.values {
                Some(values) => {
                    for (col, v) in values.iter().enumerate() {
                        let mark = if self.best[col] == Some(i) { "*" } else { " " };
                        let cell = v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
                        let _ = write!(out, " {:>7}{mark}", cell);
                    }
                }
                None => {
                    let _ = write!(out, " failed: {}", r.error.as_deref().unwrap_or("unknown error"));
                }
            }
            out.push('\n');
        }
        out.push_str("* best value in column\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(loss: LossKind, values: Option<[Option<f64>; 6]>) -> ComparisonRow {
        ComparisonRow {
            model: EncoderFamily::Base,
            loss,
            n: values.map(|_| 10),
            values,
            error: values.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn best_per_column() {
        let t = ComparisonTable::from_rows(vec![
            row(LossKind::Mse, Some([Some(0.8), Some(0.6), Some(0.10), Some(0.12), Some(0.08), Some(0.09)])),
            row(LossKind::Cccl, Some([Some(0.7), Some(0.7), Some(0.20), Some(0.11), Some(0.07), Some(0.10)])),
            row(LossKind::Rl, None),
        ]);
        assert_eq!(t.best, [Some(0), Some(1), Some(0), Some(1), Some(1), Some(0)]);
        let text = t.render();
        assert!(text.contains("0.800*"));
        assert!(text.contains("failed: boom"));
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(3).unwrap().ends_with("\"failed: boom\""));
    }
}
