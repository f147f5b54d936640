//! Parameter/error comparison tables.
//!
//! Layer counts follow one convention for every row: a dense layer counts its
//! weights and bias, a KFC layer counts its factor entries (its bias is part
//! of the model total). Reductions are relative to the first (baseline) row.

use crate::train::{Layer, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub layer_params: u64,
    pub model_params: u64,
    pub test_error: Option<f64>,
}

/// Parameters of the layer named `prefix`, plus any `prefix.*` layers it was split into.
pub fn layer_params(model: &Model, prefix: &str) -> u64 {
    model
        .layers()
        .iter()
        .filter(|l| l.name().is_some_and(|n| n == prefix || n.strip_prefix(prefix).is_some_and(|r| r.starts_with('.'))))
        .map(|l| match l {
            Layer::Kfc { spec, .. } => crate::kfc::count_params(spec),
            other => other.param_count(),
        })
        .sum()
}

pub fn reduction(value: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        100.0 * (1.0 - value as f64 / baseline as f64)
    }
}

/// `950`, `2.1K`, `74.0K`, `1.64M`.
pub fn human_count(n: u64) -> String {
    if n < 1000 {
        n.to_string()
    } else if n < 1_000_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        format!("{:.2}M", n as f64 / 1e6)
    }
}

fn error_cell(e: Option<f64>) -> String {
    e.map_or_else(|| "-".to_string(), |e| format!("{:.2}%", 100.0 * e))
}

/// Aligned text table; the first row is the baseline. Empty input yields an
/// empty string.
pub fn emit_report(rows: &[ReportRow]) -> String {
    let Some(base) = rows.first() else { return String::new() };
    let header = ["Method", "Layer Params (Reduction)", "Model Params (Reduction)", "Test Error"];
    let mut cells: Vec<[String; 4]> = vec![header.map(String::from)];
    for r in rows {
        cells.push([
            r.method.clone(),
            format!("{} ({:.1}%)", human_count(r.layer_params), reduction(r.layer_params, base.layer_params)),
            format!("{} ({:.1}%)", human_count(r.model_params), reduction(r.model_params, base.model_params)),
            error_cell(r.test_error),
        ]);
    }
    let widths: Vec<usize> =
        (0..4).map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

/// Tab-separated variant with exact counts.
pub fn emit_report_tsv(rows: &[ReportRow]) -> String {
    let Some(base) = rows.first() else { return String::new() };
    let mut out =
        String::from("method\tlayer_params\tlayer_reduction_pct\tmodel_params\tmodel_reduction_pct\ttest_error\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.1}\t{}\t{:.1}\t{}\n",
            r.method,
            r.layer_params,
            reduction(r.layer_params, base.layer_params),
            r.model_params,
            reduction(r.model_params, base.model_params),
            r.test_error.map_or_else(|| "-".to_string(), |e| format!("{e:.6}")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ModelConfig, Preset};

    fn row(method: &str, layer: u64, model: u64) -> ReportRow {
        ReportRow { method: method.into(), layer_params: layer, model_params: model, test_error: Some(0.0123) }
    }

    #[test]
    fn counts() {
        assert_eq!(human_count(73984), "74.0K");
        assert_eq!(human_count(2084), "2.1K");
        assert_eq!(human_count(1_638_656), "1.64M");
        assert_eq!(human_count(999), "999");
    }

    #[test]
    fn baseline_only() {
        let t = emit_report(&[row("Baseline", 73984, 99_500)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("74.0K (0.0%)") && t.contains("1.23%"));
    }

    #[test]
    fn kfc_reduction_and_alignment() {
        let base = ModelConfig::default().skeleton().unwrap();
        let kfc = ModelConfig { preset: Preset::Kfc2, ..Default::default() }.skeleton().unwrap();
        assert_eq!(layer_params(&base, "fc"), 73984);
        assert_eq!(layer_params(&kfc, "fc"), 2084);
        let rows = [
            row("Baseline", 73984, base.param_count()),
            row("KFC-II", 2084, kfc.param_count()),
            row("Cut-96", 27744, 50_000),
        ];
        let t = emit_report(&rows);
        assert!(t.contains("2.1K (97.2%)"), "{t}");
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        let col = lines[0].find("Model Params").unwrap();
        assert!(lines[2..].iter().all(|l| l[col - 2..col].trim().is_empty()));
        assert!(emit_report_tsv(&rows).lines().nth(2).unwrap().starts_with("KFC-II\t2084\t97.2\t"));
    }

    #[test]
    fn split_layers_are_summed() {
        let low = ModelConfig { preset: Preset::LowRank, width: 96, ..Default::default() }.skeleton().unwrap();
        assert_eq!(layer_params(&low, "fc"), 288 * 96 + 96 + 96 * 256 + 256);
        assert_eq!(layer_params(&low, "f"), 0);
    }
}
