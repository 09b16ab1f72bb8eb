use clap::Args;
use drdetect::dataio::ImageSet;
use drdetect::detector::{detect, detect_multichannel, DetectionReport, Verdict};
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, overlay_opt, DetectFlags, DetectParams};
use crate::data::{self, Split};
use crate::failure::{usage, CmdResult};
use crate::output::Outputs;
use crate::Common;

pub const REPORT_FILE: &str = "detect_report.json";
pub const REPLICATES_FILE: &str = "detect_replicates.csv";

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Trusted reference data (test split for named datasets)
    #[arg(long)]
    real: Option<String>,
    /// Batch under suspicion
    #[arg(long)]
    suspect: Option<String>,
    /// Use only the first N real rows
    #[arg(long)]
    limit_real: Option<usize>,
    /// Use only the first N suspect rows
    #[arg(long)]
    limit_suspect: Option<usize>,
    /// Suspect rows drawn per replicate [default: m]
    #[arg(long)]
    m_suspect: Option<usize>,
    /// On 3-channel data, add the summary over per-replicate channel means
    #[arg(long)]
    combined: bool,
    /// Convert 3-channel data to one luminance channel first
    #[arg(long)]
    grayscale: bool,
    #[command(flatten)]
    detection: DetectFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectCmdParams {
    pub real: String,
    pub suspect: Option<String>,
    pub limit_real: Option<usize>,
    pub limit_suspect: Option<usize>,
    pub m_suspect: Option<usize>,
    pub combined: bool,
    pub grayscale: bool,
    pub detection: DetectParams,
    pub seed: u64,
}

impl Default for DetectCmdParams {
    fn default() -> Self {
        Self {
            real: "mnist".into(),
            suspect: None,
            limit_real: None,
            limit_suspect: None,
            m_suspect: None,
            combined: false,
            grayscale: false,
            detection: DetectParams::default(),
            seed: 42,
        }
    }
}

/// How the headline verdict was reached.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum Summary {
    SingleChannel,
    Combined,
    AnyChannel,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a DetectCmdParams,
    real_samples: usize,
    suspect_samples: usize,
    channels: usize,
    verdict: Verdict,
    summary: Summary,
    reports: Vec<DetectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    combined: Option<DetectionReport>,
}

#[derive(Serialize)]
struct Row {
    replicate: usize,
    channel: String,
    r1: f64,
    r2: f64,
}

pub fn run(args: &DetectArgs, common: &Common) -> CmdResult {
    let mut cfg: DetectCmdParams = config::load(common.config.as_deref())?;
    overlay!(cfg, args; real);
    overlay!(cfg, common; seed);
    overlay_opt!(cfg, args; suspect, limit_real, limit_suspect, m_suspect);
    cfg.combined |= args.combined;
    cfg.grayscale |= args.grayscale;
    cfg.detection.apply(&args.detection);
    let suspect_spec = cfg.suspect.clone().ok_or_else(|| usage("--suspect is required"))?;

    let mut real = data::load(&cfg.real, Split::Test, cfg.limit_real)?;
    let mut suspect = data::load(&suspect_spec, Split::Test, cfg.limit_suspect)?;
    if cfg.grayscale {
        real = real.to_grayscale()?;
        suspect = suspect.to_grayscale()?;
    }
    check_shapes(&real, &suspect)?;
    let det = cfg.detection.to_config(cfg.seed, cfg.m_suspect);

    let channels = real.channels();
    let (reports, combined, verdict, summary) = if channels == 3 {
        let multi = detect_multichannel(&real, &suspect, &det)?;
        let (verdict, summary) = if cfg.combined {
            (multi.combined.verdict, Summary::Combined)
        } else {
            let any = multi.channels.iter().any(|r| r.verdict == Verdict::Adversarial);
            let v = if any { Verdict::Adversarial } else { Verdict::NotAdversarial };
            (v, Summary::AnyChannel)
        };
        (multi.channels, cfg.combined.then_some(multi.combined), verdict, summary)
    } else {
        let rep = detect(&real.to_matrix(), &suspect.to_matrix(), &det)?;
        let verdict = rep.verdict;
        (vec![rep], None, verdict, Summary::SingleChannel)
    };

    let out = Outputs::new(&common.out_dir, !common.no_timestamp)?;
    let mut rows = Vec::new();
    let labelled = reports
        .iter()
        .enumerate()
        .map(|(c, r)| (c.to_string(), r))
        .chain(combined.iter().map(|r| ("combined".to_string(), r)));
    for (channel, rep) in labelled {
        for (i, (&r1, &r2)) in rep.r1_values.iter().zip(&rep.r2_values).enumerate() {
            rows.push(Row {
                replicate: i,
                channel: channel.clone(),
                r1,
                r2,
            });
        }
    }
    let csv_path = out.csv(REPLICATES_FILE, rows)?;
    for (c, rep) in reports.iter().enumerate() {
        print_line(&format!("channel {c}"), rep);
    }
    if let Some(rep) = &combined {
        print_line("combined", rep);
    }
    let report = Report {
        config: &cfg,
        real_samples: real.len(),
        suspect_samples: suspect.len(),
        channels,
        verdict,
        summary,
        reports,
        combined,
    };
    let json_path = out.json(REPORT_FILE, "detect", &report)?;
    println!("verdict: {verdict:?}");
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn check_shapes(real: &ImageSet, suspect: &ImageSet) -> CmdResult {
    let shape = |s: &ImageSet| (s.channels(), s.height(), s.width());
    if shape(real) != shape(suspect) {
        return Err(usage(format!(
            "shape mismatch: real is {:?} (channels, height, width), suspect is {:?}",
            shape(real),
            shape(suspect)
        )));
    }
    Ok(())
}

fn print_line(label: &str, rep: &DetectionReport) {
    println!(
        "{label}: R1 {:.4} [{:.4}, {:.4}]  R2 {:.4} [{:.4}, {:.4}]  p = {:.3e}  {:?}",
        rep.r1.mean, rep.r1.lower, rep.r1.upper, rep.r2.mean, rep.r2.lower, rep.r2.upper, rep.p_value, rep.verdict
    );
    for note in &rep.notes {
        println!("  note: {note}");
    }
}
