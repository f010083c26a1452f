//! CSV report schemas shared by the library and the CLI. Column orders are
//! fixed; undefined metric values become empty cells with the reason in the
//! trailing `note` column.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::metrics::ContrastPanel;
use crate::stats::WilcoxonResult;

pub const METRICS_HEADER: &str =
    "participant,contrast,dice,rve_pct,asd_mm,pred_csa_mm2,gt_csa_mm2,abs_csa_error_mm2,note";
pub const PANEL_FIRST_COLUMN: &str = "participant";
pub const PANEL_LAST_COLUMN: &str = "std_csa_mm2";
pub const WILCOXON_HEADER: &str = "contrast_a,contrast_b,n,w_statistic,p_value,p_bonferroni,note";
pub const COVERAGE_HEADER: &str = "participant,contrast,fov_coverage";

/// One per-image row of the metrics table; `None` renders as an empty cell.
#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub participant: String,
    pub contrast: String,
    pub dice: Option<f64>,
    pub rve_pct: Option<f64>,
    pub asd_mm: Option<f64>,
    pub pred_csa_mm2: Option<f64>,
    pub gt_csa_mm2: Option<f64>,
    pub abs_csa_error_mm2: Option<f64>,
    pub note: String,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(rows: &[MetricsRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.participant,
            r.contrast,
            cell(r.dice),
            cell(r.rve_pct),
            cell(r.asd_mm),
            cell(r.pred_csa_mm2),
            cell(r.gt_csa_mm2),
            cell(r.abs_csa_error_mm2),
            r.note
        )?;
    }
    Ok(())
}

/// Panel table: one row per participant, one column per contrast (sorted),
/// then the cross-contrast STD. Missing contrasts and undefined STDs render
/// as empty cells.
pub fn write_panel_csv(
    panels: &[ContrastPanel],
    contrasts: &[String],
    stds: &[Option<f64>],
    mut w: impl Write,
) -> std::io::Result<()> {
    write!(w, "{PANEL_FIRST_COLUMN}")?;
    for c in contrasts {
        write!(w, ",{c}")?;
    }
    writeln!(w, ",{PANEL_LAST_COLUMN}")?;
    for (panel, std) in panels.iter().zip(stds) {
        write!(w, "{}", panel.participant)?;
        for c in contrasts {
            write!(w, ",{}", cell(panel.csa_mm2.get(c).copied()))?;
        }
        writeln!(w, ",{}", cell(*std))?;
    }
    Ok(())
}

/// Parse a panel CSV back into panels (the `stats` command input).
pub fn read_panel_csv(reader: impl BufRead) -> Result<Vec<ContrastPanel>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("panel csv is empty".into()))?
        .map_err(|e| Error::Format(format!("panel csv: {e}")))?;
    let cols: Vec<String> = header.split(',').map(str::to_string).collect();
    if cols.len() < 3 || cols[0] != PANEL_FIRST_COLUMN || cols.last().unwrap() != PANEL_LAST_COLUMN
    {
        return Err(Error::Format(format!(
            "panel csv header must be `{PANEL_FIRST_COLUMN},<contrasts...>,{PANEL_LAST_COLUMN}`, got {header:?}"
        )));
    }
    let contrasts = &cols[1..cols.len() - 1];
    let mut panels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Format(format!("panel csv line {}: {e}", lineno + 2)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Format(format!(
                "panel csv line {}: expected {} fields, got {}",
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        let mut csa = BTreeMap::new();
        for (c, f) in contrasts.iter().zip(&fields[1..cols.len() - 1]) {
            if f.trim().is_empty() {
                continue;
            }
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("panel csv line {}: {e}", lineno + 2)))?;
            csa.insert(c.clone(), v);
        }
        panels.push(ContrastPanel {
            participant: fields[0].to_string(),
            csa_mm2: csa,
        });
    }
    Ok(panels)
}

/// One pairwise test row; `None` marks an undefined test with the reason in
/// `note`.
#[derive(Debug, Clone)]
pub struct WilcoxonRow {
    pub contrast_a: String,
    pub contrast_b: String,
    pub n: usize,
    pub result: Option<WilcoxonResult>,
    pub p_bonferroni: Option<f64>,
    pub note: String,
}

pub fn write_wilcoxon_csv(rows: &[WilcoxonRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{WILCOXON_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.contrast_a,
            r.contrast_b,
            r.n,
            cell(r.result.map(|x| x.statistic)),
            cell(r.result.map(|x| x.p_value)),
            cell(r.p_bonferroni),
            r.note
        )?;
    }
    Ok(())
}

/// Per-contrast FOV coverage fractions from a fusion run.
pub fn write_coverage_csv(
    rows: &[(String, String, f64)],
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "{COVERAGE_HEADER}")?;
    for (participant, contrast, coverage) in rows {
        writeln!(w, "{participant},{contrast},{coverage}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![
            MetricsRow {
                participant: "sub-01".into(),
                contrast: "T1w".into(),
                dice: Some(1.0),
                rve_pct: Some(0.0),
                asd_mm: Some(0.0),
                pred_csa_mm2: Some(75.5),
                gt_csa_mm2: Some(75.5),
                abs_csa_error_mm2: Some(0.0),
                note: String::new(),
            },
            MetricsRow {
                participant: "sub-02".into(),
                contrast: "DWI".into(),
                dice: Some(0.5),
                note: "csa: no level map".into(),
                ..Default::default()
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.next().unwrap(), "sub-01,T1w,1,0,0,75.5,75.5,0,");
        assert_eq!(lines.next().unwrap(), "sub-02,DWI,0.5,,,,,,csa: no level map");
    }

    #[test]
    fn panel_csv_round_trip() {
        let panels = vec![
            ContrastPanel {
                participant: "sub-01".into(),
                csa_mm2: [("T1w".to_string(), 70.0), ("T2w".to_string(), 72.0)]
                    .into_iter()
                    .collect(),
            },
            ContrastPanel {
                participant: "sub-02".into(),
                csa_mm2: [("T2w".to_string(), 68.5)].into_iter().collect(),
            },
        ];
        let contrasts = vec!["T1w".to_string(), "T2w".to_string()];
        let stds = vec![Some(1.0), None];
        let mut buf = Vec::new();
        write_panel_csv(&panels, &contrasts, &stds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("participant,T1w,T2w,std_csa_mm2\n"));

        let back = read_panel_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].csa_mm2["T1w"], 70.0);
        assert!(!back[1].csa_mm2.contains_key("T1w"));
    }

    #[test]
    fn wilcoxon_csv_undefined_rows() {
        let rows = vec![WilcoxonRow {
            contrast_a: "T1w".into(),
            contrast_b: "T2w".into(),
            n: 6,
            result: None,
            p_bonferroni: None,
            note: "all differences zero".into(),
        }];
        let mut buf = Vec::new();
        write_wilcoxon_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "T1w,T2w,6,,,,all differences zero"
        );
    }

    #[test]
    fn bad_panel_header_rejected() {
        let text = "wrong,header\n";
        assert!(read_panel_csv(std::io::BufReader::new(text.as_bytes())).is_err());
    }
}
