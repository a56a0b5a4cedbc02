//! `noise`: adaptive lag order and long-run noise variance per asset.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use spotlmm::noise::{estimate_profile, NoiseOptions};

use crate::error::CliResult;
use crate::manifest::{now, RunManifest, MANIFEST_FILE};
use crate::output::{csv_bytes, OutputSet};
use crate::{load_panel, Format, NoiseTuning, SessionArgs};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NoiseArgs {
    /// Quote or price CSV.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory; the report goes to standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub session: SessionArgs,
    #[command(flatten)]
    pub noise: NoiseTuning,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub asset_id: String,
    pub observations: usize,
    pub lag_order: usize,
    pub long_run: f64,
    pub floored: bool,
    /// `η_0 … η_R`, space separated.
    pub autocovariances: String,
}

pub fn run(args: NoiseArgs) -> CliResult<()> {
    let started = now();
    let loaded = load_panel(&args.input, &args.session)?;
    let options = NoiseOptions {
        r_max: args.noise.r_max,
        alpha: args.noise.alpha,
        ..NoiseOptions::default()
    };
    let profile = estimate_profile(&loaded.panel, &options)?;
    let rows: Vec<NoiseRow> = profile
        .assets
        .iter()
        .zip(loaded.panel.series())
        .map(|(a, s)| NoiseRow {
            asset_id: a.asset_id.clone(),
            observations: s.len(),
            lag_order: a.lag_order,
            long_run: a.long_run,
            floored: a.floored,
            autocovariances: a
                .autocovariances
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect();

    let (name, bytes) = match args.format {
        Format::Csv => (
            "noise.csv",
            csv_bytes(|w| {
                for r in &rows {
                    w.serialize(r)?;
                }
                Ok(())
            })?,
        ),
        Format::Json => {
            let mut b = serde_json::to_vec_pretty(&profile)?;
            b.push(b'\n');
            ("noise.json", b)
        }
    };
    match &args.out {
        None => print!("{}", String::from_utf8_lossy(&bytes)),
        Some(dir) => {
            let mut outputs = OutputSet::new();
            outputs.add(name, bytes);
            let derived = serde_json::json!({
                "session_open_ns": loaded.window.open,
                "session_close_ns": loaded.window.close,
                "ingest": loaded.report,
            });
            outputs.add(MANIFEST_FILE, RunManifest::new("noise", started, &args, &derived)?.to_bytes()?);
            outputs.commit(dir)?;
        }
    }
    Ok(())
}
