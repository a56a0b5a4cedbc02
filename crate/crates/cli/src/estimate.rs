//! `estimate`: ingest → noise → grid → spot path → bands.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use spotlmm::data::grid::make_grid;
use spotlmm::inference::confidence_bands;
use spotlmm::noise::{estimate_profile, NoiseOptions};
use spotlmm::spectral::write_spectra_csv;
use spotlmm::{causal_estimate, Estimator, InferenceResult, SpotEstimate};

use crate::error::{CliError, CliResult};
use crate::manifest::{now, RunManifest, MANIFEST_FILE};
use crate::output::{csv_bytes, OutputSet};
use crate::{estimator_config, load_panel, require_out, Corrections, Format, NoiseTuning, OnOff, SessionArgs, SideArg};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Quote (`asset_id,timestamp,bid,ask`) or price (`asset_id,timestamp,price`) CSV.
    #[arg(long, short, required_unless_present = "from_manifest")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, required_unless_present = "from_manifest")]
    pub out: Option<PathBuf>,
    /// Repeat the run recorded in a manifest (`--out` may redirect it).
    #[arg(long, conflicts_with = "input")]
    #[serde(skip)]
    pub from_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value_t = 0.175)]
    pub theta_h: f64,
    #[arg(long, default_value_t = 7.0)]
    pub theta_j: f64,
    #[arg(long, default_value_t = 2.0)]
    pub theta_k: f64,
    /// Exponent offset in the window size `K = ⌈θ_K n^{1/4−δ}⌉`.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Frequencies averaged by the pre-estimator.
    #[arg(long, default_value_t = 5)]
    pub j_pre: usize,
    /// `two`: centred window; `one`: causal window using no later data
    /// (requires `--open` and `--close`).
    #[arg(long, value_enum, default_value_t = SideArg::Two)]
    pub side: SideArg,
    /// Confidence level of the bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Project estimates onto the positive semi-definite cone.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub psd: OnOff,
    /// Asset pairs to report, e.g. `AAPL:MSFT,AAPL:IBM` (default: all).
    #[arg(long, value_delimiter = ',')]
    pub pairs: Vec<String>,
    /// Evaluation times in `[0, 1]` (default: every block midpoint).
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write the block spectral statistics.
    #[arg(long)]
    pub dump_spectra: bool,
    #[command(flatten)]
    pub noise: NoiseTuning,
    #[command(flatten)]
    pub corrections: Corrections,
}

/// One reported statistic at one evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub s: f64,
    pub time_ns: i64,
    pub statistic: String,
    pub asset_p: String,
    pub asset_q: String,
    pub value: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub psd_adjusted: bool,
}

#[derive(Debug, Serialize)]
struct JsonEstimate<'a> {
    s: f64,
    time_ns: i64,
    window: (usize, usize),
    psd_adjusted: bool,
    raw_min_eigenvalue: f64,
    sigma: Vec<Vec<f64>>,
    statistics: &'a [StatRow],
}

#[derive(Debug, Serialize)]
struct JsonOutput<'a> {
    assets: &'a [String],
    level: f64,
    estimates: Vec<JsonEstimate<'a>>,
}

#[derive(Debug, Serialize)]
struct Derived {
    session_open_ns: i64,
    session_close_ns: i64,
    n: usize,
    h: f64,
    num_blocks: usize,
    j_max: usize,
    k_half: usize,
    /// Noise profile of the whole day (one-sided runs re-estimate it causally
    /// at every evaluation time).
    noise: spotlmm::NoiseProfile,
    observations: Vec<usize>,
    ingest: spotlmm::IngestReport,
    evaluated: usize,
    skipped_times: Vec<f64>,
    outputs: Vec<String>,
}

fn resolve(args: EstimateArgs) -> CliResult<EstimateArgs> {
    match &args.from_manifest {
        None => Ok(args),
        Some(path) => {
            let mut stored: EstimateArgs = RunManifest::load_args(path, "estimate")?;
            if args.out.is_some() {
                stored.out = args.out.clone();
            }
            Ok(stored)
        }
    }
}

fn resolve_pairs(spec: &[String], ids: &[&str]) -> CliResult<Vec<(usize, usize)>> {
    if spec.is_empty() {
        return Ok((0..ids.len())
            .flat_map(|p| (p + 1..ids.len()).map(move |q| (p, q)))
            .collect());
    }
    let find = |name: &str| {
        ids.iter()
            .position(|id| *id == name)
            .ok_or_else(|| CliError::Input(format!("unknown asset `{name}` in --pairs")))
    };
    spec.iter()
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| CliError::Input(format!("pair `{item}` must look like A:B")))?;
            let (p, q) = (find(a.trim())?, find(b.trim())?);
            if p == q {
                return Err(CliError::Input(format!("pair `{item}` names one asset twice")));
            }
            Ok((p.min(q), p.max(q)))
        })
        .collect()
}

fn stat_rows(
    r: &InferenceResult,
    ids: &[&str],
    pairs: &[(usize, usize)],
    time_ns: i64,
) -> Vec<StatRow> {
    let e = &r.estimate;
    let d = e.dim();
    let row = |statistic: &str, p: usize, q: usize, value: f64, se: f64, lower: f64, upper: f64| StatRow {
        s: e.s,
        time_ns,
        statistic: statistic.to_string(),
        asset_p: ids[p].to_string(),
        asset_q: ids[q].to_string(),
        value,
        std_error: se,
        lower,
        upper,
        window_start: e.window.0,
        window_end: e.window.1,
        psd_adjusted: e.psd_adjusted,
    };
    let se = |p: usize, q: usize| {
        let k = p * d + q;
        r.covariance[(k, k)].max(0.0).sqrt()
    };
    let mut rows = Vec::new();
    for p in 0..d {
        let (lo, hi) = r.sigma_band(p, p);
        rows.push(row("variance", p, p, e.sigma[(p, p)], se(p, p), lo, hi));
    }
    for p in 0..d {
        // monotone transform of the variance band
        let (lo, hi) = r.sigma_band(p, p);
        let vol = e.sigma[(p, p)].max(0.0).sqrt();
        let vol_se = if vol > 0.0 { se(p, p) / (2.0 * vol) } else { f64::NAN };
        rows.push(row("volatility", p, p, vol, vol_se, lo.max(0.0).sqrt(), hi.max(0.0).sqrt()));
    }
    for &(p, q) in pairs {
        let (lo, hi) = r.sigma_band(p, q);
        rows.push(row("covariance", p, q, e.sigma[(p, q)], se(p, q), lo, hi));
    }
    for &(p, q) in pairs {
        if let Some(c) = r.correlation(p, q) {
            rows.push(row("correlation", p, q, c.value, c.variance.max(0.0).sqrt(), c.lower, c.upper));
        }
    }
    for &(p, q) in pairs {
        for (a, b) in [(p, q), (q, p)] {
            if let Some(c) = r.beta(a, b) {
                rows.push(row("beta", a, b, c.value, c.variance.max(0.0).sqrt(), c.lower, c.upper));
            }
        }
    }
    rows
}

pub fn run(args: EstimateArgs) -> CliResult<()> {
    let args = resolve(args)?;
    let started = now();
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::Input("an input file (--input) is required".into()))?;
    let out = require_out(&args.out)?;
    if args.side == SideArg::One && (args.session.open.is_none() || args.session.close.is_none()) {
        return Err(CliError::Input(
            "--side one needs explicit --open and --close: the session end must not be learned from the data".into(),
        ));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Input(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    if let Some(s) = args.at.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(CliError::Input(format!("--at time {s} outside [0, 1]")));
    }

    let loaded = load_panel(input, &args.session)?;
    let panel = &loaded.panel;
    let ids = panel.asset_ids();
    let config = estimator_config(
        (args.theta_h, args.theta_j, args.theta_k),
        args.delta,
        args.j_pre,
        args.side,
        args.psd,
        &args.noise,
        &args.corrections,
    )?;
    let pairs = resolve_pairs(&args.pairs, &ids)?;
    let grid = make_grid(&config, panel)?;
    let times: Vec<f64> = if args.at.is_empty() {
        (0..grid.num_blocks).map(|k| grid.block_midpoint(k)).collect()
    } else {
        args.at.clone()
    };

    let mut skipped = Vec::new();
    let (estimates, profile, spectra): (Vec<SpotEstimate>, _, _) = match args.side {
        SideArg::Two => {
            let est = Estimator::new(panel, &config)?;
            let estimates = times
                .par_iter()
                .map(|&s| est.at_with_variance(s))
                .collect::<spotlmm::Result<Vec<_>>>()?;
            let spectra = args.dump_spectra.then(|| est.spectra().to_vec());
            (estimates, est.profile().clone(), spectra)
        }
        SideArg::One => {
            let results: Vec<spotlmm::Result<SpotEstimate>> = times
                .par_iter()
                .map(|&s| causal_estimate(panel, &config, s, true))
                .collect();
            let mut estimates = Vec::new();
            for (s, r) in times.iter().zip(results) {
                match r {
                    Ok(e) => estimates.push(e),
                    // too little data before s for a causal estimate
                    Err(e) if !e.is_numerical() => skipped.push(*s),
                    Err(e) => return Err(e.into()),
                }
            }
            if estimates.is_empty() {
                return Err(CliError::Input("no evaluation time has enough earlier data for a causal estimate".into()));
            }
            let profile = estimate_profile(panel, &NoiseOptions::from(&config))?;
            let spectra = if args.dump_spectra {
                Some(Estimator::with_profile(panel, &config, profile.clone())?.spectra().to_vec())
            } else {
                None
            };
            (estimates, profile, spectra)
        }
    };

    let results = estimates
        .iter()
        .map(|e| {
            let vhat = e.vhat.as_ref().expect("estimates carry their variance");
            confidence_bands(e, vhat, args.level)
        })
        .collect::<spotlmm::Result<Vec<_>>>()?;
    let rows: Vec<Vec<StatRow>> = results
        .iter()
        .map(|r| stat_rows(r, &ids, &pairs, loaded.window.from_unit(r.estimate.s)))
        .collect();

    let mut outputs = OutputSet::new();
    match args.format {
        Format::Csv => outputs.add(
            "estimates.csv",
            csv_bytes(|w| {
                for row in rows.iter().flatten() {
                    w.serialize(row)?;
                }
                Ok(())
            })?,
        ),
        Format::Json => {
            let assets: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
            let doc = JsonOutput {
                assets: &assets,
                level: args.level,
                estimates: results
                    .iter()
                    .zip(&rows)
                    .map(|(r, stats)| {
                        let e = &r.estimate;
                        JsonEstimate {
                            s: e.s,
                            time_ns: loaded.window.from_unit(e.s),
                            window: e.window,
                            psd_adjusted: e.psd_adjusted,
                            raw_min_eigenvalue: e.raw_min_eigenvalue,
                            sigma: e.sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
                            statistics: stats,
                        }
                    })
                    .collect(),
            };
            let mut bytes = serde_json::to_vec_pretty(&doc)?;
            bytes.push(b'\n');
            outputs.add("estimates.json", bytes);
        }
    }
    if let Some(spectra) = &spectra {
        let mut buf = Vec::new();
        write_spectra_csv(&mut buf, spectra, &ids)?;
        outputs.add("spectra.csv", buf);
    }

    let mut names: Vec<String> = outputs.names().map(str::to_string).collect();
    names.push(MANIFEST_FILE.to_string());
    let derived = Derived {
        session_open_ns: loaded.window.open,
        session_close_ns: loaded.window.close,
        n: panel.n(),
        h: grid.h,
        num_blocks: grid.num_blocks,
        j_max: grid.j_max,
        k_half: grid.k_half,
        noise: profile,
        observations: panel.series().iter().map(|s| s.len()).collect(),
        ingest: loaded.report.clone(),
        evaluated: estimates.len(),
        skipped_times: skipped.clone(),
        outputs: names,
    };
    let manifest = RunManifest::new("estimate", started, &args, &derived)?;
    outputs.add(MANIFEST_FILE, manifest.to_bytes()?);
    outputs.commit(out)?;

    if !skipped.is_empty() {
        eprintln!("skipped {} evaluation time(s) without enough earlier data", skipped.len());
    }
    eprintln!(
        "{} assets, n = {}, {} blocks (h = {:.5}), J = {}, K = {}; {} estimates written to {}",
        ids.len(),
        panel.n(),
        grid.num_blocks,
        grid.h,
        grid.j_max,
        grid.k_half,
        estimates.len(),
        out.display()
    );
    Ok(())
}
