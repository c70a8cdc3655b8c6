//! CSV/JSON report files and the printed F-measure tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BacklogEvaluation, EvalOptions, KIND_ORDER};

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub backlog: String,
    /// Node kind (`Persona`…) or relationship kind (`TRIGGERS`, `TARGETS`).
    pub kind: String,
    /// `strict`, `inclusive`, `relaxed` or `bertscore`.
    pub mode: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub stories_counted: usize,
    pub stories_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub experiment: String,
    pub generated_at: String,
    pub baseline_dir: String,
    pub extraction_dir: String,
    pub qualifier_list_version: String,
    pub options: EvalOptions,
    pub backlogs: Vec<BacklogEvaluation>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.backlogs.iter().flat_map(|b| &b.rows)
    }

    /// The CSV holds no timestamps, so equal inputs give equal bytes.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "backlog",
            "kind",
            "mode",
            "precision",
            "recall",
            "f_measure",
            "stories_counted",
            "stories_undefined",
        ])
        .expect("writing to memory");
        for r in self.rows() {
            w.write_record([
                r.backlog.clone(),
                r.kind.clone(),
                r.mode.clone(),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                format!("{:.6}", r.f_measure),
                r.stories_counted.to_string(),
                r.stories_undefined.to_string(),
            ])
            .expect("writing to memory");
        }
        w.into_inner().expect("flushing to memory")
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    /// Backlogs as rows, node kinds as columns, F-measure cells.
    pub fn f_table(&self, mode: &str) -> String {
        let kinds: Vec<&str> = KIND_ORDER
            .iter()
            .map(|k| k.as_str())
            .filter(|k| self.rows().any(|r| r.mode == mode && r.kind == *k))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<12}", format!("[{mode}]"));
        for k in &kinds {
            let _ = write!(out, " {k:>9}");
        }
        out.push('\n');
        for b in &self.backlogs {
            let _ = write!(out, "{:<12}", b.backlog);
            for k in &kinds {
                match b.row(k, mode) {
                    Some(r) => {
                        let _ = write!(out, " {:>9.2}", r.f_measure);
                    }
                    None => {
                        let _ = write!(out, " {:>9}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvaluationReport {
        let row = |kind: &str, mode: &str, f| ReportRow {
            backlog: "g02".into(),
            kind: kind.into(),
            mode: mode.into(),
            precision: f,
            recall: f,
            f_measure: f,
            stories_counted: 2,
            stories_undefined: 0,
        };
        EvaluationReport {
            experiment: "demo".into(),
            generated_at: "now".into(),
            baseline_dir: "pos_baseline".into(),
            extraction_dir: "extracted-user-stories/demo".into(),
            qualifier_list_version: "1".into(),
            options: EvalOptions::default(),
            backlogs: vec![BacklogEvaluation {
                backlog: "g02".into(),
                stories_total: 2,
                stories_evaluated: 2,
                stories_invalid: 0,
                stories_missing: 0,
                stories_failed: 0,
                rows: vec![row("Persona", "strict", 1.0), row("Entity", "strict", 0.75)],
                notes: vec![],
            }],
            warnings: vec![],
        }
    }

    #[test]
    fn csv_layout() {
        let csv = String::from_utf8(report().to_csv()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "backlog,kind,mode,precision,recall,f_measure,stories_counted,stories_undefined"
        );
        assert_eq!(lines.next().unwrap(), "g02,Persona,strict,1.000000,1.000000,1.000000,2,0");
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn table_layout() {
        let t = report().f_table("strict");
        assert!(t.lines().next().unwrap().contains("Persona"));
        assert!(t.contains("1.00") && t.contains("0.75"));
        assert!(!t.contains("Benefit"));
    }
}
