//! Result files written by `run` and `compare`.
//!
//! Layout of an output directory:
//! `results.csv`, `trend.csv`, `diff_<baseline>.csv`, `napfd.svg`,
//! `diff.svg` and `meta.txt`. Everything except the first line of
//! `meta.txt` is a pure function of configuration and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::evaluation::GroupDifference;
use crate::experiment::{ComparisonResult, ExperimentResult};

pub const RESULTS_HEADER: &str =
    "agent,reward,iteration,cycle,napfd,scheduled_count,detected,total_failures";

pub fn results_csv(runs: &[&ExperimentResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for run in runs {
        let (agent, reward) = (run.config.agent.name(), run.config.reward_label());
        for it in &run.iterations {
            for o in &it.outcomes {
                let _ = writeln!(
                    out,
                    "{agent},{reward},{},{},{},{},{},{}",
                    it.iteration, o.cycle_index, o.napfd, o.scheduled, o.detected, o.total_failures
                );
            }
        }
    }
    out
}

pub fn trend_csv(runs: &[&ExperimentResult]) -> String {
    let mut out = String::from("agent,reward,slope,intercept,mean_napfd\n");
    for run in runs {
        let mean = run.mean.values().sum::<f64>() / run.mean.len().max(1) as f64;
        let (slope, intercept) = run.trend.map_or((String::new(), String::new()), |t| {
            (t.slope.to_string(), t.intercept.to_string())
        });
        let _ = writeln!(
            out,
            "{},{},{slope},{intercept},{mean}",
            run.config.agent,
            run.config.reward_label()
        );
    }
    out
}

pub fn diff_csv(groups: &[GroupDifference], group_size: usize) -> String {
    let mut out = String::from("group,first_cycle,size,baseline_mean,retecs_mean,difference\n");
    for g in groups {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            g.group_index,
            g.group_index * group_size,
            g.size,
            g.baseline_mean,
            g.retecs_mean,
            g.difference
        );
    }
    out
}

const PALETTE: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
    s
}

fn axes(s: &mut String, y_min: f64, y_max: f64) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for (label, y) in [(y_min, y0), (y_max, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="end">{label:.2}</text>"#,
            x0 - 4.0
        );
    }
}

/// Mean NAPFD per cycle for each run, with its trend line dashed on top.
pub fn napfd_svg(runs: &[&ExperimentResult]) -> String {
    let mut s = svg_open("Mean NAPFD per cycle");
    axes(&mut s, 0.0, 1.0);
    let max_cycle = runs
        .iter()
        .flat_map(|r| r.mean.points().last().map(|p| p.0))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let sx = |c: f64| MARGIN + c / max_cycle * (WIDTH - 1.5 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - v * (HEIGHT - 2.0 * MARGIN);
    for (i, run) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = run
            .mean
            .points()
            .iter()
            .map(|&(c, v)| format!("{:.2},{:.2}", sx(c as f64), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
        if let Some(t) = run.trend {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="6,3"/>"#,
                sx(0.0),
                sy(t.at(0.0)),
                sx(max_cycle),
                sy(t.at(max_cycle))
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            run.config.label()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One row of bars per baseline; bars above zero favour the baseline.
pub fn diff_svg(comparison: &ComparisonResult) -> String {
    let mut s = svg_open("Grouped NAPFD difference (baseline - primary)");
    let limit = comparison
        .baselines
        .iter()
        .flat_map(|b| b.groups.iter().map(|g| g.difference.abs()))
        .fold(0.05_f64, f64::max);
    axes(&mut s, -limit, limit);
    let groups = comparison
        .baselines
        .iter()
        .map(|b| b.groups.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let series = comparison.baselines.len().max(1);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let slot = plot_w / groups as f64;
    let bar = slot * 0.8 / series as f64;
    let zero = HEIGHT / 2.0;
    let half = HEIGHT / 2.0 - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{zero}" x2="{}" y2="{zero}" stroke="gray"/>"#,
        WIDTH - MARGIN / 2.0
    );
    for (bi, b) in comparison.baselines.iter().enumerate() {
        let color = PALETTE[bi % PALETTE.len()];
        for g in &b.groups {
            let h = g.difference / limit * half;
            let x = MARGIN + g.group_index as f64 * slot + slot * 0.1 + bi as f64 * bar;
            let (y, height) = if h >= 0.0 { (zero - h, h) } else { (zero, -h) };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{height:.2}" fill="{color}"/>"#
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 14.0 * (bi as f64 + 1.0),
            b.baseline.config.label()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Timestamp line followed by every configuration and its iteration seeds.
pub fn meta_txt(runs: &[&ExperimentResult]) -> Result<String> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = format!("# generated_at_unix={now}\n");
    for run in runs {
        let _ = writeln!(out, "\n# run {}", run.config.label());
        let echo = toml::to_string(&run.config).map_err(|e| Error::Config(e.to_string()))?;
        out.push_str(&echo);
        let seeds: Vec<String> = run.iterations.iter().map(|i| i.seed.to_string()).collect();
        let _ = writeln!(out, "# iteration_seeds = [{}]", seeds.join(", "));
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_run(dir: &Path, run: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let runs = [run];
    write(dir, "results.csv", &results_csv(&runs))?;
    write(dir, "trend.csv", &trend_csv(&runs))?;
    write(dir, "napfd.svg", &napfd_svg(&runs))?;
    write(dir, "meta.txt", &meta_txt(&runs)?)
}

/// File-name-safe label of a baseline run, as used in `diff_<label>.csv`.
pub fn baseline_file_label(run: &ExperimentResult) -> String {
    run.config.label()
}

pub fn write_comparison(
    dir: &Path,
    comparison: &ComparisonResult,
    group_size: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut runs = vec![&comparison.primary];
    runs.extend(comparison.baselines.iter().map(|b| &b.baseline));
    write(dir, "results.csv", &results_csv(&runs))?;
    write(dir, "trend.csv", &trend_csv(&runs))?;
    write(dir, "napfd.svg", &napfd_svg(&runs))?;
    for b in &comparison.baselines {
        let name = format!("diff_{}.csv", baseline_file_label(&b.baseline));
        write(dir, &name, &diff_csv(&b.groups, group_size))?;
    }
    write(dir, "diff.svg", &diff_svg(comparison))?;
    write(dir, "meta.txt", &meta_txt(&runs)?)
}
