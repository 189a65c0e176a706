//! Multi-run experiments: objective comparisons, generation-ratio sweeps,
//! rank tables, and static SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    metrics_csv, run_with_task, RunConfig, RunManifest, RunStatus, METRICS_HEADER,
};
use crate::error::{contract, LabError, Result};
use crate::objectives::ObjectiveSpec;
use crate::task_model::TaskSpec;

/// Run `f` over `items` on at most `threads` workers (0 = rayon default),
/// returning results in input order.
fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| contract(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Method labels: objective names, with `#k` appended to repeats.
pub fn method_labels(objectives: &[ObjectiveSpec]) -> Vec<String> {
    let mut labels = Vec::with_capacity(objectives.len());
    for (i, o) in objectives.iter().enumerate() {
        let seen = objectives[..i]
            .iter()
            .filter(|p| p.name() == o.name())
            .count();
        labels.push(if seen == 0 {
            o.name().to_string()
        } else {
            format!("{}#{}", o.name(), seen + 1)
        });
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    /// Rank at each iteration (1 = lowest post_kl; ties share the average).
    pub ranks: Vec<f64>,
    pub average_rank: f64,
    pub final_rank: f64,
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub iterations: usize,
    pub methods: Vec<MethodRank>,
}

impl RankTable {
    /// Ranks by post_kl at each iteration. A run with no record at an
    /// iteration (because it aborted) ranks below every run that has one.
    pub fn from_runs(labels: &[String], runs: &[RunManifest]) -> Result<Self> {
        if labels.len() != runs.len() {
            return Err(contract("one label per run"));
        }
        let iterations = runs.iter().map(|m| m.config.iterations).max().unwrap_or(0);
        let mut ranks = vec![Vec::with_capacity(iterations); runs.len()];
        for t in 0..iterations {
            let keys: Vec<f64> = runs
                .iter()
                .map(|m| {
                    m.iterations.get(t).map_or(f64::INFINITY, |r| {
                        if r.post_kl.is_nan() {
                            f64::INFINITY
                        } else {
                            r.post_kl
                        }
                    })
                })
                .collect();
            for (i, r) in average_ranks(&keys).into_iter().enumerate() {
                ranks[i].push(r);
            }
        }
        let methods = labels
            .iter()
            .zip(runs)
            .zip(ranks)
            .map(|((label, m), ranks)| MethodRank {
                method: label.clone(),
                average_rank: if ranks.is_empty() {
                    f64::NAN
                } else {
                    ranks.iter().sum::<f64>() / ranks.len() as f64
                },
                final_rank: ranks.last().copied().unwrap_or(f64::NAN),
                aborted: m.status == RunStatus::Aborted,
                ranks,
            })
            .collect();
        Ok(RankTable {
            iterations,
            methods,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "method".to_string(),
            "average_rank".into(),
            "final_rank".into(),
            "aborted".into(),
        ];
        header.extend((0..self.iterations).map(|t| format!("rank_iter_{t}")));
        w.write_record(&header)?;
        for m in &self.methods {
            let mut row = vec![
                m.method.clone(),
                m.average_rank.to_string(),
                m.final_rank.to_string(),
                m.aborted.to_string(),
            ];
            row.extend(m.ranks.iter().map(|r| r.to_string()));
            w.write_record(&row)?;
        }
        finish_csv(w)
    }

    pub fn best_final(&self) -> Vec<&str> {
        let best = self
            .methods
            .iter()
            .map(|m| m.final_rank)
            .fold(f64::INFINITY, f64::min);
        self.methods
            .iter()
            .filter(|m| m.final_rank == best)
            .map(|m| m.method.as_str())
            .collect()
    }
}

/// Fractional ranks (1-based, ties averaged), ascending by key.
pub fn average_ranks(keys: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut ranks = vec![0.0; keys.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && keys[order[end]] == keys[order[start]] {
            end += 1;
        }
        // positions start..end hold 1-based ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub runs: Vec<RunManifest>,
    pub ranks: RankTable,
}

/// Runs every objective on the same task and seeds as `base`.
pub fn compare(
    base: &RunConfig,
    task: &TaskSpec,
    objectives: &[ObjectiveSpec],
    threads: usize,
) -> Result<Comparison> {
    if objectives.len() < 2 {
        return Err(contract(
            "compare needs at least two objective configurations",
        ));
    }
    let configs: Vec<RunConfig> = objectives
        .iter()
        .map(|o| base.clone().with_objective(o.clone()))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    compare_configs(&configs, task, threads)
}

/// Like [`compare`] with fully specified configurations.
pub fn compare_configs(
    configs: &[RunConfig],
    task: &TaskSpec,
    threads: usize,
) -> Result<Comparison> {
    if configs.len() < 2 {
        return Err(contract(
            "compare needs at least two objective configurations",
        ));
    }
    let objectives: Vec<ObjectiveSpec> = configs.iter().map(|c| c.objective.clone()).collect();
    let labels = method_labels(&objectives);
    let runs = par_map(configs, threads, |c| run_with_task(c, task))?;
    let ranks = RankTable::from_runs(&labels, &runs)?;
    Ok(Comparison {
        labels,
        runs,
        ranks,
    })
}

impl Comparison {
    /// Per-iteration metrics of every run, prefixed by a `method` column.
    pub fn combined_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method"];
        header.extend(METRICS_HEADER);
        w.write_record(&header)?;
        for (label, m) in self.labels.iter().zip(&self.runs) {
            let body = metrics_csv(&m.iterations)?;
            for line in body.lines().skip(1) {
                let mut row = vec![label.clone()];
                row.extend(line.split(',').map(str::to_string));
                w.write_record(&row)?;
            }
        }
        finish_csv(w)
    }

    /// Writes one subdirectory per method plus combined.csv, ranks.csv,
    /// and (optionally) the charts.
    pub fn write(&self, dir: &Path, charts: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (label, m) in self.labels.iter().zip(&self.runs) {
            write_run(m, &dir.join(safe_dir_name(label)), charts)?;
        }
        std::fs::write(dir.join("combined.csv"), self.combined_csv()?)?;
        std::fs::write(dir.join("ranks.csv"), self.ranks.to_csv()?)?;
        if charts {
            let series = self
                .labels
                .iter()
                .cloned()
                .zip(self.runs.iter().map(kl_points))
                .collect::<Vec<_>>();
            std::fs::write(
                dir.join("kl.svg"),
                line_chart_svg("post-iteration KL", "iteration", "KL (nats)", &series),
            )?;
        }
        Ok(())
    }
}

fn safe_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn kl_points(m: &RunManifest) -> Vec<(f64, f64)> {
    m.iterations
        .iter()
        .map(|r| (r.iteration as f64, r.post_kl))
        .collect()
}

/// manifest.json, metrics.csv, and optionally kl.svg / rewards.svg.
pub fn write_run(manifest: &RunManifest, dir: &Path, charts: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    manifest.write_json(&dir.join("manifest.json"))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&manifest.iterations)?)?;
    if charts {
        let kl = vec![("post_kl".to_string(), kl_points(manifest))];
        std::fs::write(
            dir.join("kl.svg"),
            line_chart_svg("KL to the target", "iteration", "KL (nats)", &kl),
        )?;
        let rewards = vec![
            (
                "real".to_string(),
                manifest
                    .iterations
                    .iter()
                    .map(|r| (r.iteration as f64, r.mean_reward_real))
                    .collect(),
            ),
            (
                "synthetic".to_string(),
                manifest
                    .iterations
                    .iter()
                    .map(|r| (r.iteration as f64, r.mean_reward_synth))
                    .collect(),
            ),
        ];
        std::fs::write(
            dir.join("rewards.svg"),
            line_chart_svg("mean rewards", "iteration", "reward (nats)", &rewards),
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub mus: Vec<f64>,
    pub runs: Vec<RunManifest>,
}

/// One SPACE run per generation ratio, otherwise identical to `base`.
pub fn sweep(base: &RunConfig, task: &TaskSpec, mus: &[f64], threads: usize) -> Result<Sweep> {
    if mus.is_empty() {
        return Err(contract("sweep needs at least one mu"));
    }
    let configs: Vec<RunConfig> = mus
        .iter()
        .map(|&mu| {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(contract(format!("mu must be positive, got {mu}")));
            }
            let c = base.clone().with_objective(ObjectiveSpec::space(mu));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let runs = par_map(&configs, threads, |c| run_with_task(c, task))?;
    Ok(Sweep {
        mus: mus.to_vec(),
        runs,
    })
}

impl Sweep {
    /// Columns `mu,iteration,post_kl,wall_time_s`.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mu", "iteration", "post_kl", "wall_time_s"])?;
        for (mu, m) in self.mus.iter().zip(&self.runs) {
            for r in &m.iterations {
                w.write_record([
                    mu.to_string(),
                    r.iteration.to_string(),
                    r.post_kl.to_string(),
                    r.wall_time_s.to_string(),
                ])?;
            }
        }
        finish_csv(w)
    }

    pub fn write(&self, dir: &Path, charts: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, (mu, m)) in self.mus.iter().zip(&self.runs).enumerate() {
            write_run(
                m,
                &dir.join(format!("mu_{i}_{}", safe_dir_name(&mu.to_string()))),
                charts,
            )?;
        }
        std::fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        if charts {
            let series: Vec<_> = self
                .mus
                .iter()
                .zip(&self.runs)
                .map(|(mu, m)| (format!("mu={mu}"), kl_points(m)))
                .collect();
            std::fs::write(
                dir.join("kl.svg"),
                line_chart_svg("KL by generation ratio", "iteration", "KL (nats)", &series),
            )?;
        }
        Ok(())
    }
}

const PALETTE: [&str; 6] = [
    "#1b6ca8", "#d1495b", "#2a9d8f", "#e9c46a", "#6a4c93", "#444444",
];

/// A minimal line chart: axes, min/max tick labels, one polyline per series, legend.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let finite = series
        .iter()
        .flat_map(|(_, pts)| pts.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let (ax0, ax1, ay0, ay1) = (left, w - right, h - bottom, top);
    let _ = writeln!(
        svg,
        r#"<path d="M{ax0} {ay1} L{ax0} {ay0} L{ax1} {ay0}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ax0 + ax1) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );
    for (v, y) in [(y0, ay0), (y1, ay1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            ax0 - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    for (v, x) in [(x0, ax0), (x1, ax1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            ay0 + 16.0,
            tick(v)
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if pen_down { "L" } else { "M" },
                    sx(x),
                    sy(y)
                );
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        if !d.is_empty() {
            let _ = writeln!(
                svg,
                r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
                d.trim_end()
            );
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<path d="M{} {ly} L{} {ly}" stroke="{color}" stroke-width="2"/>"#,
            ax1 + 12.0,
            ax1 + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            ax1 + 38.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_ranks() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.2]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[0.1, 0.1, 0.5]), vec![1.5, 1.5, 3.0]);
        assert_eq!(
            average_ranks(&[f64::INFINITY, 0.2, f64::INFINITY]),
            vec![2.5, 1.0, 2.5]
        );
        assert_eq!(average_ranks(&[]), Vec::<f64>::new());
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let objs = [
            ObjectiveSpec::space(1.0),
            ObjectiveSpec::sipo(0.5),
            ObjectiveSpec::space(2.0),
        ];
        assert_eq!(method_labels(&objs), vec!["SPACE", "S-IPO", "SPACE#2"]);
    }

    #[test]
    fn svg_is_plain_markup() {
        let svg = line_chart_svg(
            "t <1>",
            "x",
            "y",
            &[("a".into(), vec![(0.0, 1.0), (1.0, 0.5), (2.0, f64::NAN)])],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("<path d=\"M"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let empty = line_chart_svg("e", "x", "y", &[]);
        assert!(empty.contains("</svg>"));
    }
}
