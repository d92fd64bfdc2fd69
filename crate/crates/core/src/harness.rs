//! Repeated seeded evaluations, result files and comparison plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::engine::{evaluate, EngineConfig, EpisodeLog, TrainedModels};
use crate::error::{Error, Result};
use crate::kpi::{KpiReport, TimePoint};
use crate::scenario::Scenario;

pub const DEFAULT_ITERATIONS: usize = 20;

/// Seed of iteration `i` of an experiment rooted at `seed`.
pub fn iteration_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: KpiReport,
    /// One log per iteration, in iteration order.
    pub logs: Vec<EpisodeLog>,
}

/// Evaluates `scenario` `iterations` times in parallel and aggregates the results
/// in iteration order.
pub fn run_experiment(
    config: &EngineConfig,
    models: Option<&TrainedModels>,
    scenario: &Scenario,
    iterations: usize,
    seed: u64,
) -> Result<Experiment> {
    if iterations == 0 {
        return Err(Error::Usage("iterations must be positive".into()));
    }
    let logs = (0..iterations)
        .into_par_iter()
        .map(|i| evaluate(config, models, scenario, iteration_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let report = KpiReport::from_logs(scenario, config.policy.name(), seed, &logs);
    Ok(Experiment { report, logs })
}

impl Experiment {
    /// Writes `report.json`, `kpi.csv`, `timeseries.csv`, the two plots and one
    /// `run-NN.csv` per iteration into `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(&self.report)?)?;
        written.push(json);
        let kpi = dir.join("kpi.csv");
        fs::write(&kpi, kpi_csv(&self.report)?)?;
        written.push(kpi);
        written.extend(write_plots(std::slice::from_ref(&self.report), dir)?);
        for (i, log) in self.logs.iter().enumerate() {
            let p = dir.join(format!("run-{i:02}.csv"));
            log.save_csv(&p)?;
            written.push(p);
        }
        Ok(written)
    }
}

pub fn load_report(path: &Path) -> Result<KpiReport> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Whole-run and per-window rows: scope, service, metric means and stddevs.
pub fn kpi_csv(report: &KpiReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scope",
        "service",
        "violation_pct",
        "violation_pct_std",
        "mean_response_s",
        "mean_response_s_std",
        "resource_delta_mc",
        "resource_delta_mc_std",
    ])?;
    let scopes = std::iter::once(("all", &report.services))
        .chain(report.windows.iter().map(|w| (w.name.as_str(), &w.services)));
    for (scope, services) in scopes {
        for s in services {
            w.write_record([
                scope.to_string(),
                s.service.to_string(),
                s.violation_pct.mean.to_string(),
                s.violation_pct.std.to_string(),
                s.mean_response_s.mean.to_string(),
                s.mean_response_s.std.to_string(),
                s.resource_delta_mc.mean.to_string(),
                s.resource_delta_mc.std.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Side-by-side table of several reports on the same scenario.
pub fn compare_table(reports: &[KpiReport]) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Usage("compare needs at least one report".into()))?;
    if let Some(other) = reports.iter().find(|r| r.scenario != first.scenario) {
        return Err(Error::Usage(format!(
            "reports cover different scenarios: '{}' and '{}'",
            first.scenario, other.scenario
        )));
    }
    let mut services: Vec<u32> = reports
        .iter()
        .flat_map(|r| r.services.iter().map(|s| s.service))
        .collect();
    services.sort_unstable();
    services.dedup();

    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", first.scenario);
    let mut header = format!("{:<10} {:<16}", "service", "metric");
    for r in reports {
        let _ = write!(header, " {:>18}", r.policy);
    }
    let _ = writeln!(out, "{header}");
    type Metric = fn(&crate::kpi::ServiceSummary) -> crate::kpi::Stat;
    let metrics: [(&str, Metric); 3] = [
        ("violation %", |s| s.violation_pct),
        ("response s", |s| s.mean_response_s),
        ("resource delta", |s| s.resource_delta_mc),
    ];
    for id in services {
        for (name, get) in metrics {
            let mut line = format!("{id:<10} {name:<16}");
            for r in reports {
                match r.service(id) {
                    Some(s) => {
                        let st = get(s);
                        let _ = write!(line, " {:>10.3} ±{:>6.3}", st.mean, st.std);
                    }
                    None => {
                        let _ = write!(line, " {:>18}", "-");
                    }
                }
            }
            let _ = writeln!(out, "{line}");
        }
    }
    Ok(out)
}

/// Writes response-time and utilization plots for `reports` (one panel row per
/// report) as SVG plus the underlying CSV. Returns the written paths.
pub fn write_plots(reports: &[KpiReport], dir: &Path) -> Result<Vec<PathBuf>> {
    compare_table(reports)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "tick", "service", "response_s", "utilization_pct", "limit_mc"])?;
    for r in reports {
        for p in &r.timeseries {
            w.write_record([
                r.policy.clone(),
                p.tick.to_string(),
                p.service.to_string(),
                p.response_s.to_string(),
                p.utilization_pct.to_string(),
                p.limit_mc.to_string(),
            ])?;
        }
    }
    let data = dir.join("timeseries.csv");
    fs::write(&data, w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    written.push(data);

    type Field = fn(&TimePoint) -> f64;
    let plots: [(&str, &str, Field); 2] = [
        ("response_time.svg", "response time (s)", |p| p.response_s),
        ("utilization.svg", "utilization (%)", |p| p.utilization_pct),
    ];
    for (file, label, field) in plots {
        let path = dir.join(file);
        fs::write(&path, svg_panels(reports, label, field))?;
        written.push(path);
    }
    Ok(written)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn svg_panels(reports: &[KpiReport], label: &str, field: fn(&TimePoint) -> f64) -> String {
    let (w, h, pad) = (640.0, 220.0, 48.0);
    let total_h = h * reports.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (row, r) in reports.iter().enumerate() {
        let y0 = row as f64 * h;
        let max_tick = r.timeseries.iter().map(|p| p.tick).max().unwrap_or(0).max(1) as f64;
        let max_v = r
            .timeseries
            .iter()
            .map(field)
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let x = |t: u64| pad + (w - 2.0 * pad) * t as f64 / max_tick;
        let y = |v: f64| y0 + h - pad + -(h - 2.0 * pad) * v / max_v;
        let _ = writeln!(
            svg,
            r#"<text x="{pad}" y="{}">{} ({})</text>"#,
            y0 + 16.0,
            escape(&r.policy),
            escape(label)
        );
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="black" points="{pad},{} {pad},{} {},{}"/>"#,
            y0 + pad,
            y0 + h - pad,
            w - pad,
            y0 + h - pad
        );
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{}">{max_v:.2}</text><text x="4" y="{}">0</text><text x="{}" y="{}">tick {max_tick}</text>"#,
            y0 + pad + 4.0,
            y0 + h - pad,
            w - pad - 40.0,
            y0 + h - pad + 16.0
        );
        let mut services: Vec<u32> = r.timeseries.iter().map(|p| p.service).collect();
        services.sort_unstable();
        services.dedup();
        for (k, id) in services.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let points: Vec<String> = r
                .timeseries
                .iter()
                .filter(|p| p.service == *id)
                .map(|p| format!("{:.1},{:.1}", x(p.tick), y(field(p))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">service {id}</text>"#,
                w - pad - 70.0,
                y0 + 16.0 + 12.0 * k as f64
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PolicyKind;
    use crate::scenario::{idle_scenario, load_scenario};

    fn heuristic() -> EngineConfig {
        EngineConfig::for_policy(PolicyKind::Heuristic)
    }

    #[test]
    fn idle_scenario_has_no_violations() {
        let exp = run_experiment(&heuristic(), None, &idle_scenario(), 3, 1).unwrap();
        for s in &exp.report.services {
            assert_eq!(s.violation_pct.mean, 0.0);
        }
        for log in &exp.logs {
            for r in &log.records {
                assert_eq!(r.response_s, 8.0 / r.limit_mc as f64);
            }
        }
    }

    #[test]
    fn experiments_are_reproducible() {
        let a = run_experiment(&heuristic(), None, &load_scenario(), 4, 9).unwrap();
        let b = run_experiment(&heuristic(), None, &load_scenario(), 4, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn compare_rejects_empty_and_mismatched() {
        assert!(matches!(compare_table(&[]), Err(Error::Usage(_))));
        let a = run_experiment(&heuristic(), None, &load_scenario(), 1, 0).unwrap();
        let b = run_experiment(&heuristic(), None, &idle_scenario(), 1, 0).unwrap();
        assert!(compare_table(&[a.report.clone(), b.report]).is_err());
        let table = compare_table(&[a.report]).unwrap();
        assert!(table.contains("heuristic"));
    }

    #[test]
    fn writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let exp = run_experiment(&heuristic(), None, &load_scenario(), 2, 0).unwrap();
        exp.write(dir.path()).unwrap();
        for f in [
            "report.json",
            "kpi.csv",
            "timeseries.csv",
            "response_time.svg",
            "utilization.svg",
            "run-00.csv",
            "run-01.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = load_report(dir.path()).unwrap();
        assert_eq!(back, exp.report);
    }

    #[test]
    fn zero_iterations_is_a_usage_error() {
        assert!(run_experiment(&heuristic(), None, &load_scenario(), 0, 0).is_err());
    }
}
