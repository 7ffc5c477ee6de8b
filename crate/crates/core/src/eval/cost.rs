//! Token, cost and runtime projection for rerank runs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{PriceTable, UsageMeter};
use crate::rerank::RerankMode;

pub const PROJECTION_KS: [usize; 2] = [100, 500];

/// Usage of one rerank run, stored one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunUsage {
    pub model: String,
    pub mode: RerankMode,
    /// Number of GUIs scored in the run.
    pub gui_count: usize,
    pub usage: UsageMeter,
    /// Measured wall time of the run in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_secs: Option<f64>,
}

impl RunUsage {
    pub fn append_to(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let line = serde_json::to_string(self).expect("usage record serializes");
        writeln!(f, "{line}").map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn load_usage(path: &Path) -> Result<Vec<RunUsage>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProjection {
    pub model: String,
    pub mode: Option<RerankMode>,
    pub input_per_gui: f64,
    pub output_per_gui: f64,
    /// (k, dollars)
    pub cost: Vec<(usize, f64)>,
    /// (k, seconds); absent when no timing was recorded.
    pub time: Vec<(usize, f64)>,
}

impl CostProjection {
    /// Linear extrapolation of per-GUI means to each k in
    /// [`PROJECTION_KS`].
    pub fn from_means(
        model: &str,
        input_per_gui: f64,
        output_per_gui: f64,
        seconds_per_gui: Option<f64>,
        prices: &PriceTable,
    ) -> Result<Self, EvalError> {
        let bare = model.strip_prefix("stub/").unwrap_or(model);
        let price = prices
            .get(bare)
            .ok_or_else(|| EvalError::Invalid(format!("no price for model \"{bare}\"")))?;
        let per_gui = price.cost(input_per_gui, output_per_gui);
        Ok(Self {
            model: model.to_string(),
            mode: None,
            input_per_gui,
            output_per_gui,
            cost: PROJECTION_KS.iter().map(|&k| (k, per_gui * k as f64)).collect(),
            time: seconds_per_gui
                .map(|s| PROJECTION_KS.iter().map(|&k| (k, s * k as f64)).collect())
                .unwrap_or_default(),
        })
    }

    pub fn cost_at(&self, k: usize) -> Option<f64> {
        self.cost.iter().find(|(kk, _)| *kk == k).map(|(_, c)| *c)
    }

    pub fn time_at(&self, k: usize) -> Option<f64> {
        self.time.iter().find(|(kk, _)| *kk == k).map(|(_, t)| *t)
    }
}

/// Per-GUI means over `runs` (token totals divided by GUI totals) projected
/// to k = 100 and 500. Time per GUI comes from the measured run times when
/// every run has one, else from the meters' wall time.
pub fn project_cost(runs: &[RunUsage], model: &str, prices: &PriceTable) -> Result<CostProjection, EvalError> {
    let guis: usize = runs.iter().map(|r| r.gui_count).sum();
    if runs.is_empty() || guis == 0 {
        return Err(EvalError::EmptyUsage);
    }
    let total: UsageMeter = runs.iter().map(|r| r.usage).sum();
    let seconds = if runs.iter().all(|r| r.elapsed_secs.is_some()) {
        runs.iter().filter_map(|r| r.elapsed_secs).sum::<f64>()
    } else {
        total.wall_time.as_secs_f64()
    };
    let n = guis as f64;
    let mut p = CostProjection::from_means(
        model,
        total.input_tokens as f64 / n,
        total.output_tokens as f64 / n,
        Some(seconds / n),
        prices,
    )?;
    let modes: Vec<RerankMode> = runs.iter().map(|r| r.mode).collect();
    if modes.windows(2).all(|w| w[0] == w[1]) {
        p.mode = modes.first().copied();
    }
    Ok(p)
}

/// Groups runs by (mode, model) and projects each group.
pub fn project_all(runs: &[RunUsage], prices: &PriceTable) -> Result<Vec<CostProjection>, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyUsage);
    }
    let mut groups: Vec<((RerankMode, String), Vec<RunUsage>)> = Vec::new();
    for r in runs {
        let key = (r.mode, r.model.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.clone()),
            None => groups.push((key, vec![r.clone()])),
        }
    }
    groups
        .iter()
        .map(|((_, model), rs)| project_cost(rs, model, prices))
        .collect()
}

fn dollars(v: f64) -> String {
    format!("${v:.3}")
}

fn seconds(v: f64) -> String {
    let s = format!("{v:.1}");
    format!("{}s", s.strip_suffix(".0").unwrap_or(&s))
}

/// Plain-text table with columns Mode, Model, Input, Output (tokens per
/// GUI), Cost@100, Cost@500, Time@100, Time@500.
pub fn format_cost_table(rows: &[CostProjection]) -> String {
    let header = [
        "Mode", "Model", "Input", "Output", "Cost@100", "Cost@500", "Time@100", "Time@500",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let mut row = vec![
            r.mode.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
            r.model.clone(),
            format!("{:.2}", r.input_per_gui),
            format!("{:.2}", r.output_per_gui),
        ];
        for k in PROJECTION_KS {
            row.push(r.cost_at(k).map(dollars).unwrap_or_else(|| "-".into()));
        }
        for k in PROJECTION_KS {
            row.push(r.time_at(k).map(seconds).unwrap_or_else(|| "-".into()));
        }
        cells.push(row);
    }
    render(&cells, 2)
}

/// Left-aligns the first `text_cols` columns and right-aligns the rest.
pub(crate) fn render(cells: &[Vec<String>], text_cols: usize) -> String {
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c < text_cols {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn means_projection() {
        let p = CostProjection::from_means("gpt-4.1", 179.77, 6.0, None, &PriceTable::builtin()).unwrap();
        assert!((p.cost_at(100).unwrap() - 0.040754).abs() < 1e-12);
        assert!((p.cost_at(500).unwrap() - 0.20377).abs() < 1e-12);
        assert!(p.time.is_empty());
    }

    #[test]
    fn project_from_runs() {
        let run = RunUsage {
            model: "stub/gpt-4.1".into(),
            mode: RerankMode::Text,
            gui_count: 4,
            usage: UsageMeter {
                input_tokens: 400,
                output_tokens: 24,
                wall_time: Duration::from_secs(2),
                request_count: 4,
            },
            elapsed_secs: Some(1.0),
        };
        let p = project_cost(&[run.clone(), run], "gpt-4.1", &PriceTable::builtin()).unwrap();
        assert_eq!(p.input_per_gui, 100.0);
        assert_eq!(p.output_per_gui, 6.0);
        assert!((p.time_at(100).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(p.mode, Some(RerankMode::Text));
        assert!(matches!(project_cost(&[], "gpt-4.1", &PriceTable::builtin()), Err(EvalError::EmptyUsage)));
    }

    #[test]
    fn table_has_expected_columns() {
        let p = CostProjection::from_means("gpt-4.1", 1089.02, 6.0, Some(0.124), &PriceTable::builtin()).unwrap();
        let t = format_cost_table(&[p]);
        let header = t.lines().next().unwrap();
        assert!(header.contains("Cost@100") && header.contains("Time@500"));
        assert!(t.contains("$0.223") && t.contains("$1.113"));
        assert!(t.contains("12.4s") && t.contains("62s"));
    }
}
