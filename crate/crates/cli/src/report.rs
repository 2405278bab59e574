//! Collects a run directory's outputs into report tables and charts.
//!
//! Every table is CSV; charts are SVG renderings of the same numbers.

use std::path::Path;

use glenet::glenet::{infer_uncertainty, PreparedSample};
use glenet::io::DatasetRecord;
use glenet::probdet::LossMode;
use glenet::synth::spearman;
use glenet::{rng, BOX_DIMS};
use log::warn;

use crate::commands::{self, fmt, read_csv, write_csv};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const DIM_NAMES: [&str; BOX_DIMS] = ["cx", "cy", "cz", "w", "l", "h", "r"];

/// Sample counts of the sampling-stability grid.
pub const SAMPLE_GRID: [usize; 5] = [4, 8, 16, 30, 64];
const ABLATION_REPEATS: u64 = 10;
const ABLATION_OBJECTS: usize = 100;

/// Tables the report writes when all of the run's inputs are present.
pub const TABLES: [&str; 7] = [
    "losses.csv",
    "nll.csv",
    "loss_modes.csv",
    "uncertainty_dims.csv",
    "uncertainty_by_occlusion.csv",
    "voting.csv",
    "sampling_ablation.csv",
];

/// Writes `report/` under `run`; returns the names of the tables written.
pub fn report(cfg: &RunConfig, run: &Path) -> CliResult<Vec<String>> {
    if !run.is_dir() {
        return Err(CliError::data(format!("{}: not a run directory", run.display())));
    }
    let dir = run.join("report");
    let mut written = Vec::new();
    let skip = |name: &str, why: &str| warn!("{name} skipped: {why}");

    match read_csv(&run.join(commands::LOSSES))? {
        Some((header, rows)) => {
            copy_table(&dir.join("losses.csv"), &header, &rows)?;
            let col = |name: &str| header.iter().position(|h| h == name);
            if let (Some(e), Some(r), Some(k)) = (col("epoch"), col("reconstruction"), col("kl")) {
                let series = |c: usize| rows.iter().map(|row| (num(&row[e]), num(&row[c]))).collect::<Vec<_>>();
                let svg = line_chart("GLENet training losses", "epoch", &[("L_rec", series(r)), ("L_KL", series(k))]);
                glenet::io::write_atomic(&dir.join("losses.svg"), svg.as_bytes())?;
            }
            written.push("losses.csv".to_owned());
        }
        None => skip("losses.csv", "no train_losses.csv (run `glenet train`)"),
    }

    match read_csv(&run.join(commands::NLL))? {
        Some((header, rows)) => {
            copy_table(&dir.join("nll.csv"), &header, &rows)?;
            written.push("nll.csv".to_owned());
        }
        None => skip("nll.csv", "no nll.csv (run `glenet eval-nll`)"),
    }

    let mut mode_rows = Vec::new();
    let mut mode_header = None;
    for mode in [LossMode::Huber, LossMode::Dirac, LossMode::Glenet] {
        if let Some((header, rows)) = read_csv(&run.join(commands::probdet_file(mode)))? {
            mode_header = Some(header);
            mode_rows.extend(rows);
        }
    }
    match mode_header {
        Some(header) => {
            copy_table(&dir.join("loss_modes.csv"), &header, &mode_rows)?;
            written.push("loss_modes.csv".to_owned());
        }
        None => skip("loss_modes.csv", "no probdet_*.csv (run `glenet probdet`)"),
    }

    let unc_path = run.join(commands::UNCERTAINTY);
    if unc_path.exists() {
        let (records, _) = commands::load_samples(&unc_path)?;
        let rho = uncertainty_tables(&dir, &records)?;
        println!("uncertainty: Spearman(total variance, occlusion) = {rho:.3} over {} objects", records.len());
        written.push("uncertainty_dims.csv".to_owned());
        written.push("uncertainty_by_occlusion.csv".to_owned());
    } else {
        skip("uncertainty tables", "no uncertainty.jsonl (run `glenet uncertainty`)");
    }

    match read_csv(&run.join(commands::VOTING))? {
        Some((header, rows)) => {
            copy_table(&dir.join("voting.csv"), &header, &rows)?;
            written.push("voting.csv".to_owned());
        }
        None => skip("voting.csv", "no voting.csv (run `glenet vote`)"),
    }

    let ckpt = run.join(commands::CHECKPOINT);
    let dataset = run.join(commands::DATASET);
    if ckpt.exists() && dataset.exists() {
        sampling_ablation(cfg, &dir, &ckpt, &dataset)?;
        written.push("sampling_ablation.csv".to_owned());
    } else {
        skip("sampling_ablation.csv", "needs glenet.ckpt and dataset.jsonl");
    }
    Ok(written)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn copy_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &h, rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn uncertainty_tables(dir: &Path, records: &[DatasetRecord]) -> CliResult<f64> {
    let vars: Vec<[f64; BOX_DIMS]> = records
        .iter()
        .map(|r| r.uncertainty.ok_or_else(|| CliError::data("uncertainty.jsonl has a record without uncertainty")))
        .collect::<CliResult<_>>()?;
    let rows: Vec<Vec<String>> = (0..BOX_DIMS)
        .map(|k| {
            let col: Vec<f64> = vars.iter().map(|v| v[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            vec![DIM_NAMES[k].to_owned(), fmt(mean), fmt(median(col))]
        })
        .collect();
    write_csv(&dir.join("uncertainty_dims.csv"), &["dim", "mean_variance", "median_variance"], &rows)?;

    let total: Vec<f64> = vars.iter().map(|v| v.iter().sum()).collect();
    let occ: Vec<f64> = records.iter().map(|r| r.meta.occlusion_fraction).collect();
    let edges = [0.0, 1e-9, 0.3, 0.5, 0.7, 1.0 + 1e-9];
    let rows: Vec<Vec<String>> = edges
        .windows(2)
        .map(|w| {
            let inside: Vec<f64> = total.iter().zip(&occ).filter(|(_, o)| **o >= w[0] && **o < w[1]).map(|(t, _)| *t).collect();
            let hi = w[1].min(1.0);
            vec![fmt(w[0]), fmt(hi), inside.len().to_string(), fmt(median(inside))]
        })
        .collect();
    write_csv(
        &dir.join("uncertainty_by_occlusion.csv"),
        &["occlusion_lo", "occlusion_hi", "objects", "median_total_variance"],
        &rows,
    )?;
    Ok(spearman(&total, &occ))
}

/// Run-to-run spread of the total variance for each sample count, over the
/// first objects of the dataset with preprocessing held fixed.
fn sampling_ablation(cfg: &RunConfig, dir: &Path, ckpt: &Path, dataset: &Path) -> CliResult<()> {
    let model = commands::load_model(ckpt)?;
    let (_, samples) = commands::load_samples(dataset)?;
    let mut prep = rng::stream(cfg.seed, 0xAB1);
    let clouds = samples
        .iter()
        .take(ABLATION_OBJECTS)
        .map(|s| PreparedSample::new(s, &model.config, &mut prep))
        .collect::<glenet::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for s in SAMPLE_GRID {
        let mut rel = Vec::new();
        for (i, p) in clouds.iter().enumerate() {
            let runs = (0..ABLATION_REPEATS)
                .map(|r| {
                    let mut g = rng::stream(rng::child_seed(cfg.seed ^ s as u64, i as u64), r);
                    infer_uncertainty(&model, &p.cloud, s, &mut g).map(|e| e.total_variance())
                })
                .collect::<glenet::Result<Vec<f64>>>()?;
            let n = runs.len() as f64;
            let mean = runs.iter().sum::<f64>() / n;
            let sd = (runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if mean > 0.0 {
                rel.push(sd / mean);
            }
        }
        let spread = rel.iter().sum::<f64>() / rel.len().max(1) as f64;
        rows.push(vec![s.to_string(), fmt(spread), rel.len().to_string()]);
        points.push((s as f64, spread));
    }
    write_csv(&dir.join("sampling_ablation.csv"), &["samples", "mean_relative_std", "objects"], &rows)?;
    let svg = line_chart("Run-to-run spread of total variance", "samples", &[("relative std", points)]);
    glenet::io::write_atomic(&dir.join("sampling_ablation.svg"), svg.as_bytes())?;
    Ok(())
}

/// Minimal SVG line chart with linear axes and a legend.
pub fn line_chart(title: &str, x_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let finite = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"{PAD}\" y=\"{}\" text-anchor=\"middle\">{x0:.3}</text>\n\
         <text x=\"{r}\" y=\"{}\" text-anchor=\"middle\">{x1:.3}</text>\n\
         <text x=\"{}\" y=\"{b}\" text-anchor=\"end\">{y0:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3e}</text>\n",
        W / 2.0,
        W / 2.0,
        H - 12.0,
        H - PAD + 16.0,
        H - PAD + 16.0,
        PAD - 4.0,
        PAD - 4.0,
        PAD + 4.0,
        b = H - PAD,
        r = W - PAD,
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        let ly = PAD + 16.0 * i as f64;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{name}</text>\n",
            W - PAD
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_closed() {
        let s = [("a", vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)])];
        let one = line_chart("t", "x", &s);
        assert_eq!(one, line_chart("t", "x", &s));
        assert!(one.starts_with("<svg") && one.ends_with("</svg>\n"));
        assert!(one.contains("polyline"));
    }

    #[test]
    fn flat_and_empty_series_do_not_divide_by_zero() {
        let svg = line_chart("t", "x", &[("a", vec![(1.0, 2.0)]), ("b", vec![])]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
