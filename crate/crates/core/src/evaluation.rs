//! Error metrics, flow strata, report tables and improvement summaries.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Sum of squared errors.
pub fn sse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} truths, {} predictions", truth.len(), pred.len())));
    }
    Ok(truth.iter().zip(pred).map(|(x, p)| (x - p) * (x - p)).sum())
}

/// `sqrt(SSE / N)`.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let e = sse(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty sample".into()));
    }
    Ok((e / truth.len() as f64).sqrt())
}

/// `sqrt(N * SSE) / sum(truth)`.
pub fn rmsn(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let e = sse(truth, pred)?;
    let total: f64 = truth.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(format!("rmsn needs a positive total flow, got {total}")));
    }
    Ok((truth.len() as f64 * e).sqrt() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    FlGcnCnn,
    FlGcnFcn,
    Kalman,
    Historical,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FlGcnCnn, Method::FlGcnFcn, Method::Kalman, Method::Historical];

    pub fn label(self) -> &'static str {
        match self {
            Method::FlGcnCnn => "FL-GCN-CNN",
            Method::FlGcnFcn => "FL-GCN-FCN",
            Method::Kalman => "Kalman",
            Method::Historical => "Historical",
        }
    }

    fn column(self) -> &'static str {
        match self {
            Method::Kalman => "Kalman filter",
            m => m.label(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    All,
    Below,
    AtOrAbove,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::All, Stratum::Below, Stratum::AtOrAbove];

    pub fn label(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Below => "flow<100",
            Stratum::AtOrAbove => "flow>=100",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub horizon: usize,
    pub stratum: Stratum,
    /// `None` when the stratum is empty.
    pub rmse: Option<f64>,
    /// `None` when the stratum is empty or its total flow is zero.
    pub rmsn: Option<f64>,
    pub n: usize,
}

/// Metric rows over all cells and over the two flow strata split at
/// `threshold` on the true flow.
pub fn stratified_eval(method: Method, horizon: usize, truth: &[f64], pred: &[f64], threshold: f64) -> Result<Vec<MetricRow>> {
    sse(truth, pred)?;
    Stratum::ALL
        .into_iter()
        .map(|stratum| {
            let keep = |x: f64| match stratum {
                Stratum::All => true,
                Stratum::Below => x < threshold,
                Stratum::AtOrAbove => x >= threshold,
            };
            let (t, p): (Vec<f64>, Vec<f64>) = truth.iter().zip(pred).filter(|(x, _)| keep(**x)).map(|(x, p)| (*x, *p)).unzip();
            Ok(MetricRow { method, horizon, stratum, rmse: rmse(&t, &p).ok(), rmsn: rmsn(&t, &p).ok(), n: t.len() })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
    /// Seeds and config digests, one per line.
    pub provenance: String,
}

pub const REPORT_HEADER: &str = "method,horizon,stratum,rmse,rmsn,n";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn banner_lines(out: &mut String, banner: &str) {
    for line in banner.lines() {
        let _ = writeln!(out, "# {line}");
    }
}

impl EvaluationReport {
    pub fn get(&self, method: Method, horizon: usize, stratum: Stratum) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon && r.stratum == stratum)
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        banner_lines(&mut out, &self.provenance);
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method.label(),
                r.horizon,
                r.stratum.label(),
                fmt_opt(r.rmse),
                fmt_opt(r.rmsn),
                r.n
            );
        }
        out
    }

    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut provenance = Vec::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(c) = line.strip_prefix('#') {
                provenance.push(c.trim_start());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                if line != REPORT_HEADER {
                    return Err(Error::parse(source, lineno, format!("expected header `{REPORT_HEADER}`")));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::parse(source, lineno, format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| Error::parse(source, lineno, format!("bad {what} `{s}`")))
            };
            rows.push(MetricRow {
                method: Method::parse(f[0]).ok_or_else(|| Error::parse(source, lineno, format!("unknown method `{}`", f[0])))?,
                horizon: f[1].parse().map_err(|_| Error::parse(source, lineno, format!("bad horizon `{}`", f[1])))?,
                stratum: Stratum::parse(f[2]).ok_or_else(|| Error::parse(source, lineno, format!("unknown stratum `{}`", f[2])))?,
                rmse: num(f[3], "rmse")?,
                rmsn: num(f[4], "rmsn")?,
                n: f[5].parse().map_err(|_| Error::parse(source, lineno, format!("bad count `{}`", f[5])))?,
            });
        }
        if !seen_header {
            return Err(Error::parse(source, 1, "missing report header"));
        }
        Ok(Self { rows, provenance: provenance.join("\n") })
    }

    /// Plain-text tables: metric x horizon over the four methods for all
    /// flows, then the same split by flow stratum.
    pub fn to_tables(&self) -> String {
        let mut out = String::new();
        banner_lines(&mut out, &self.provenance);
        let horizons = self.horizons();
        let cell = |m: Method, h: usize, s: Stratum, rmsn: bool| {
            self.get(m, h, s).and_then(|r| if rmsn { r.rmsn } else { r.rmse }).map_or("-".to_string(), |v| format!("{v:.3}"))
        };
        let methods = Method::ALL;

        out.push_str("Prediction comparison between FL-GCN and Kalman filter.\n");
        let mut rows = vec![["".to_string(), "".to_string()].into_iter().chain(methods.iter().map(|m| m.column().to_string())).collect::<Vec<_>>()];
        for (metric, is_rmsn) in [("RMSE", false), ("RMSN", true)] {
            for (i, &h) in horizons.iter().enumerate() {
                let mut row = vec![if i == 0 { metric.to_string() } else { String::new() }, format!("{h}-Step Predicted")];
                row.extend(methods.iter().map(|&m| cell(m, h, Stratum::All, is_rmsn)));
                rows.push(row);
            }
        }
        render(&mut out, &rows);

        out.push_str("\nPrediction comparison between FL-GCN and Kalman filter for different flows.\n");
        let mut rows = vec![["", "", ""].iter().map(|s| s.to_string()).chain(methods.iter().map(|m| m.column().to_string())).collect::<Vec<_>>()];
        for (metric, is_rmsn) in [("RMSE", false), ("RMSN", true)] {
            for (j, (stratum, label)) in [(Stratum::Below, "Flows < 100"), (Stratum::AtOrAbove, "Flows >= 100")].into_iter().enumerate() {
                for (i, &h) in horizons.iter().enumerate() {
                    let mut row = vec![
                        if i == 0 && j == 0 { metric.to_string() } else { String::new() },
                        if i == 0 { label.to_string() } else { String::new() },
                        format!("{h}-Step Predicted"),
                    ];
                    row.extend(methods.iter().map(|&m| cell(m, h, stratum, is_rmsn)));
                    rows.push(row);
                }
            }
        }
        render(&mut out, &rows);
        out
    }
}

fn render(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    for r in rows {
        let mut line = String::new();
        for (c, v) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            // Labels left-aligned, numbers right-aligned.
            if c < cols - 4 {
                let _ = write!(line, "{v:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{v:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

/// `(baseline - candidate) / baseline`.
pub fn improvement(baseline_rmse: f64, candidate_rmse: f64) -> f64 {
    (baseline_rmse - candidate_rmse) / baseline_rmse
}

#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub horizon: usize,
    pub baseline_rmse: f64,
    pub candidate_rmse: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementTable {
    pub baseline: Method,
    pub candidate: Method,
    pub rows: Vec<Improvement>,
    pub mean: f64,
}

/// Per-horizon RMSE improvement of `candidate` over `baseline` on all flows,
/// plus the mean over horizons.
pub fn compare(report: &EvaluationReport, baseline: Method, candidate: Method) -> Result<ImprovementTable> {
    let horizons = report.horizons();
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("report has no rows".into()));
    }
    let mut rows = Vec::new();
    for h in horizons {
        let get = |m: Method| {
            report
                .get(m, h, Stratum::All)
                .and_then(|r| r.rmse)
                .ok_or_else(|| Error::InvalidArgument(format!("report lacks an RMSE for {} at horizon {h}", m.label())))
        };
        let (b, c) = (get(baseline)?, get(candidate)?);
        rows.push(Improvement { horizon: h, baseline_rmse: b, candidate_rmse: c, improvement: improvement(b, c) });
    }
    let mean = rows.iter().map(|r| r.improvement).sum::<f64>() / rows.len() as f64;
    Ok(ImprovementTable { baseline, candidate, rows, mean })
}

impl ImprovementTable {
    pub fn to_text(&self, banner: &str) -> String {
        let mut out = String::new();
        banner_lines(&mut out, banner);
        let _ = writeln!(out, "# improvement of {} over {}", self.candidate.label(), self.baseline.label());
        out.push_str("horizon,baseline_rmse,candidate_rmse,improvement_pct\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.3},{:.3},{:.2}", r.horizon, r.baseline_rmse, r.candidate_rmse, 100.0 * r.improvement);
        }
        let _ = writeln!(out, "mean,,,{:.2}", 100.0 * self.mean);
        out
    }
}

/// One O-D pair's series: `day,interval,truth,pred`.
pub fn time_series_csv(points: &[(usize, usize, f64, f64)], banner: &str) -> String {
    let mut out = String::new();
    banner_lines(&mut out, banner);
    out.push_str("day,interval,truth,pred\n");
    for (day, h, t, p) in points {
        let _ = writeln!(out, "{day},{h},{t},{p}");
    }
    out
}
