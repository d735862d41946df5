//! Aggregates evaluation records into the CSV tables behind the figures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use wsrnet::rate::nats_to_bits;

use crate::commands::EvalRecord;
use crate::config::{resolve, write_resolved};
use crate::{CliError, CliResult};

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory searched recursively for evaluation records.
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// SL, UL and WMMSE per scenario.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fig1: Option<bool>,
    /// UL against the SSL variants per label quality.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fig3: Option<bool>,
    /// Sum rate against the number of labeled samples.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fig4: Option<bool>,
    /// Every method, scenario, K and label quality.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    table1: Option<bool>,
}

#[derive(Debug, Serialize)]
struct Row {
    scenario: String,
    #[serde(rename = "K")]
    k: usize,
    method: String,
    quality: String,
    labeled: usize,
    runs: usize,
    mean_nats: f64,
    std_nats: f64,
    mean_bits: f64,
    std_bits: f64,
}

type Key = (String, usize, String, String, usize);

fn collect(dir: &Path, out: &mut Vec<EvalRecord>) -> CliResult<()> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect(&path, out)?;
            continue;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !name.ends_with(".json") || name.ends_with(".resolved.json") {
            continue;
        }
        let Ok(text) = fs::read_to_string(&path) else { continue };
        match serde_json::from_str::<EvalRecord>(&text) {
            Ok(rec) => out.push(rec),
            Err(_) => log::debug!("skipping {}: not an evaluation record", path.display()),
        }
    }
    Ok(())
}

fn aggregate<'a>(records: impl Iterator<Item = &'a EvalRecord>, key: impl Fn(&EvalRecord) -> Key) -> Vec<Row> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r.mean_nats);
    }
    groups
        .into_iter()
        .map(|((scenario, k, method, quality, labeled), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Row {
                scenario,
                k,
                method,
                quality,
                labeled,
                runs: v.len(),
                mean_nats: mean,
                std_nats: std,
                mean_bits: nats_to_bits(mean),
                std_bits: nats_to_bits(std),
            }
        })
        .collect()
}

fn quality(r: &EvalRecord) -> String {
    r.quality.map(|q| q.to_string()).unwrap_or_default()
}

fn write_rows(path: &Path, rows: &[Row]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row).context("csv serialization")?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

pub fn run(a: ReportArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let runs = r.runs.clone().ok_or_else(|| CliError::Usage("missing required value --runs".into()))?;
    let out_dir = r.out_dir.clone().unwrap_or_else(|| PathBuf::from("report"));
    let flags = [r.fig1, r.fig3, r.fig4, r.table1].map(|f| f.unwrap_or(false));
    let all = !flags.iter().any(|f| *f);
    let [fig1, fig3, fig4, table1] = flags.map(|f| f || all);

    let mut records = Vec::new();
    collect(&runs, &mut records)?;
    if records.is_empty() {
        return Err(CliError::Failed(anyhow::anyhow!("no evaluation records under {}", runs.display())));
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    if fig1 {
        let rows = aggregate(
            records.iter().filter(|r| matches!(r.method.as_str(), "sl" | "ul" | "wmmse")),
            |r| (r.scenario.to_string(), r.k, r.method.clone(), String::new(), 0),
        );
        write_rows(&out_dir.join("fig1.csv"), &rows)?;
    }
    if fig3 {
        let rows = aggregate(
            records.iter().filter(|r| matches!(r.method.as_str(), "ul" | "ssl" | "ssl_pretrained")),
            |r| (r.scenario.to_string(), r.k, r.method.clone(), quality(r), r.labeled),
        );
        write_rows(&out_dir.join("fig3.csv"), &rows)?;
    }
    if fig4 {
        let rows = aggregate(
            records.iter().filter(|r| r.method != "wmmse"),
            |r| (r.scenario.to_string(), r.k, r.method.clone(), quality(r), r.labeled),
        );
        write_rows(&out_dir.join("fig4.csv"), &rows)?;
    }
    if table1 {
        let rows = aggregate(records.iter(), |r| {
            (r.scenario.to_string(), r.k, r.method.clone(), quality(r), r.labeled)
        });
        write_rows(&out_dir.join("table1.csv"), &rows)?;
    }
    write_resolved(&out_dir.join("report.resolved.json"), "report", &r)?;
    Ok(ExitCode::SUCCESS)
}
