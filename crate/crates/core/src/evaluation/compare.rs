use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::track::EvalResult;
use crate::error::{Error, Result};

pub const METRIC_NAMES: [&str; 3] = ["sdr", "sir", "sar"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grouping {
    Global,
    PerTask(String),
    PerMetric(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub r: f64,
    pub p_value: f64,
    pub n_points: usize,
    pub grouping: Grouping,
}

/// Product-moment correlation with a two-sided p-value from Student's t
/// with `n - 2` degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!("{} values against {}", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::UndefinedCorrelation(format!("{n} points; at least 3 are needed")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(CorrelationReport { r, p_value, n_points: n, grouping: Grouping::Global })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub global: CorrelationReport,
    /// Groups where the correlation is undefined are absent.
    pub per_task: Vec<CorrelationReport>,
    pub per_metric: Vec<CorrelationReport>,
    pub matched_rows: usize,
    pub dropped_rows: usize,
}

/// Pair the two result sets on (track, task) and correlate every metric
/// value.
pub fn compare_models(a: &[EvalResult], b: &[EvalResult]) -> Result<Comparison> {
    let index = |rs: &[EvalResult]| -> BTreeMap<(String, String), [f64; 3]> {
        rs.iter().map(|r| ((r.track_id.clone(), r.task.clone()), r.values())).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let pairs: Vec<(&(String, String), [f64; 3], [f64; 3])> =
        ia.iter().filter_map(|(k, va)| ib.get(k).map(|vb| (k, *va, *vb))).collect();
    let dropped = ia.len() + ib.len() - 2 * pairs.len();
    if dropped > 0 {
        log::warn!("{dropped} result rows have no counterpart and were dropped");
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedCorrelation("no (track, task) pairs in common".into()));
    }
    let collect = |keep: &dyn Fn(&str, usize) -> bool| -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ((_, task), va, vb) in &pairs {
            for m in 0..3 {
                if keep(task, m) {
                    xs.push(va[m]);
                    ys.push(vb[m]);
                }
            }
        }
        (xs, ys)
    };
    let (xs, ys) = collect(&|_, _| true);
    let global = pearson(&xs, &ys)?;

    let mut tasks: Vec<&String> = pairs.iter().map(|(k, _, _)| &k.1).collect();
    tasks.sort();
    tasks.dedup();
    let per_task = tasks
        .iter()
        .filter_map(|t| {
            let (xs, ys) = collect(&|task, _| task == t.as_str());
            pearson(&xs, &ys).ok().map(|r| CorrelationReport { grouping: Grouping::PerTask(t.to_string()), ..r })
        })
        .collect();
    let per_metric = METRIC_NAMES
        .iter()
        .enumerate()
        .filter_map(|(mi, name)| {
            let (xs, ys) = collect(&|_, m| m == mi);
            pearson(&xs, &ys).ok().map(|r| CorrelationReport { grouping: Grouping::PerMetric(name.to_string()), ..r })
        })
        .collect();
    Ok(Comparison { global, per_task, per_metric, matched_rows: pairs.len(), dropped_rows: dropped })
}

/// Long-format CSV: `track_id,task,metric,value`.
pub fn write_results_csv(results: &[EvalResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::format(e.to_string());
    w.write_record(["track_id", "task", "metric", "value"]).map_err(io)?;
    for r in results {
        for (name, v) in METRIC_NAMES.iter().zip(r.values()) {
            w.write_record([r.track_id.as_str(), r.task.as_str(), name, &v.to_string()]).map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<EvalResult>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::format(e.to_string()))?;
    if headers != vec!["track_id", "task", "metric", "value"] {
        return Err(Error::format("results header must be `track_id,task,metric,value`"));
    }
    let mut rows: BTreeMap<(String, String), [Option<f64>; 3]> = BTreeMap::new();
    let mut order = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::format("results rows need four fields"));
        }
        let metric = METRIC_NAMES
            .iter()
            .position(|m| *m == &rec[2])
            .ok_or_else(|| Error::format(format!("unknown metric `{}`", &rec[2])))?;
        let value: f64 = rec[3].parse().map_err(|_| Error::format(format!("bad value `{}`", &rec[3])))?;
        let key = (rec[0].to_string(), rec[1].to_string());
        let slot = rows.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            [None; 3]
        });
        if slot[metric].replace(value).is_some() {
            return Err(Error::format(format!("duplicate {} for {} / {}", &rec[2], &rec[0], &rec[1])));
        }
    }
    order
        .into_iter()
        .map(|key| {
            let v = rows[&key];
            match v {
                [Some(sdr), Some(sir), Some(sar)] => Ok(EvalResult { track_id: key.0, task: key.1, sdr, sir, sar }),
                _ => Err(Error::format(format!("incomplete metrics for {} / {}", key.0, key.1))),
            }
        })
        .collect()
}

fn describe(values: &mut [f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 0 { (values[mid - 1] + values[mid]) / 2.0 } else { values[mid] };
    (mean, var.sqrt(), median)
}

/// One row per task, one column per metric: `mean ± std (median)` in dB.
pub fn summary_table(label: &str, results: &[EvalResult], tasks: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "{:<8} {:>24} {:>24} {:>24}", "task", "SDR", "SIR", "SAR");
    for task in tasks {
        let rows: Vec<&EvalResult> = results.iter().filter(|r| &r.task == task).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = write!(out, "{task:<8}");
        for m in 0..3 {
            let mut vals: Vec<f64> = rows.iter().map(|r| r.values()[m]).collect();
            let (mean, std, median) = describe(&mut vals);
            let _ = write!(out, " {:>24}", format!("{mean:.2} ± {std:.2} ({median:.2})"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_negated_series() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(pearson(&xs, &xs).unwrap().r, 1.0);
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        assert_eq!(pearson(&xs, &neg).unwrap().r, -1.0);
    }

    #[test]
    fn constant_series_is_undefined() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![
            EvalResult { track_id: "a".into(), task: "vocals".into(), sdr: 1.5, sir: -0.1, sar: 100.0 },
            EvalResult { track_id: "b".into(), task: "bass".into(), sdr: 0.1 + 0.2, sir: 1e-300, sar: -3.0 },
        ];
        let text = write_results_csv(&rs).unwrap();
        assert!(text.starts_with("track_id,task,metric,value\n"));
        assert_eq!(parse_results_csv(&text).unwrap(), rs);
    }

    #[test]
    fn incomplete_csv_is_rejected() {
        let text = "track_id,task,metric,value\na,vocals,sdr,1\na,vocals,sir,2\n";
        assert!(matches!(parse_results_csv(text), Err(Error::Format(_))));
        assert!(matches!(parse_results_csv("x,y\n"), Err(Error::Format(_))));
    }

    #[test]
    fn summary_has_mean_std_median() {
        let rs: Vec<EvalResult> = [1.0, 2.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| EvalResult { track_id: i.to_string(), task: "bass".into(), sdr: v, sir: v, sar: v })
            .collect();
        let t = summary_table("x", &rs, &["bass".to_string()]);
        assert!(t.contains("3.00 ± 2.65 (2.00)"), "{t}");
    }
}
