//! Evaluation orchestration over a trained pipeline: single transmissions,
//! sweeps over SNR / payload / estimate-offset grids, and decoder-stage
//! ablations, all with per-cell seed streams so every CSV is reproducible
//! bit-for-bit from (seed, config).

use thiserror::Error;

use crate::channel::ChannelKind;
use crate::config::Config;
use crate::decoder::DecoderAblation;
use crate::metrics::{estimate_normals, DistortionReport, MetricsError, UNIT_CUBE_PEAK};
use crate::model::{Pipeline, PipelineError, TransmitOutcome};
use crate::pointcloud::PointCloud;
use crate::random::rng_stream;
use crate::trainer::DatasetItem;

/// Neighborhood size for metric normals.
pub const NORMALS_K: usize = 12;

/// Base RNG stream for evaluation cells; cells offset from here.
const EVAL_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("runner error: {0}")]
    Other(String),
}

/// Channel operating point for evaluation runs.
#[derive(Debug, Clone, Copy)]
pub struct EvalChannel {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub estimate_offset_db: f64,
    pub csi_equalize: bool,
}

impl EvalChannel {
    pub fn from_config(cfg: &Config) -> EvalChannel {
        EvalChannel {
            kind: cfg.channel_kind(),
            snr_db: cfg.channel.snr_db,
            estimate_offset_db: cfg.channel.snr_offset_db,
            csi_equalize: cfg.channel.csi_equalize,
        }
    }
}

/// Metrics of one transmission.
#[derive(Debug, Clone, Copy)]
pub struct TransmitReport {
    pub distortion: DistortionReport,
    pub cbr: f64,
    pub bpp: f64,
    pub k: usize,
    pub channel_h: f64,
    pub snr_estimate_db: f64,
}

/// Transmits one cloud and scores the reconstruction against it.
pub fn transmit_and_score(
    pipeline: &Pipeline,
    cloud: &PointCloud,
    k: usize,
    channel: EvalChannel,
    seed: u64,
    stream_id: u64,
) -> Result<(TransmitReport, TransmitOutcome), RunnerError> {
    let mut rng = rng_stream(seed, stream_id);
    let outcome = pipeline.transmit(
        cloud,
        k,
        channel.kind,
        channel.snr_db,
        channel.estimate_offset_db,
        channel.csi_equalize,
        &mut rng,
    )?;
    let normals_ref = estimate_normals(cloud, NORMALS_K)?;
    let normals_rec = estimate_normals(&outcome.reconstruction, NORMALS_K)?;
    let distortion = DistortionReport::compute(
        cloud,
        &outcome.reconstruction,
        Some(&normals_ref),
        Some(&normals_rec),
        UNIT_CUBE_PEAK,
    );
    let report = TransmitReport {
        distortion,
        cbr: outcome.budget.cbr.as_f64(),
        bpp: outcome.budget.bpp.as_f64(),
        k,
        channel_h: outcome.channel_h,
        snr_estimate_db: outcome.snr_estimate_db,
    };
    Ok((report, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Snr,
    Cbr,
    Offset,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::Snr => write!(f, "snr"),
            SweepAxis::Cbr => write!(f, "cbr"),
            SweepAxis::Offset => write!(f, "offset"),
        }
    }
}

/// One grid point of a sweep: D1/D2 averaged over clouds and trials.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub axis_value: f64,
    pub k: usize,
    pub snr_db: f64,
    pub offset_db: f64,
    pub cbr: f64,
    pub d1_mean_db: f64,
    pub d2_mean_db: f64,
    pub trials: usize,
}

/// Runs a sweep along one axis. `grid` carries SNR values in dB (Snr axis),
/// token budgets K (Cbr axis), or estimate offsets in dB (Offset axis).
/// Every (grid cell, cloud, trial) gets an independent seed stream derived
/// from the master seed, so results are reproducible and order-free.
pub fn run_sweep(
    pipeline: &Pipeline,
    clouds: &[DatasetItem],
    axis: SweepAxis,
    grid: &[f64],
    trials: usize,
    base_k: usize,
    base: EvalChannel,
    seed: u64,
) -> Result<Vec<SweepRow>, RunnerError> {
    if grid.is_empty() {
        return Err(RunnerError::Other("sweep grid is empty".into()));
    }
    if clouds.is_empty() {
        return Err(RunnerError::Other("sweep needs at least one cloud".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (gi, &value) in grid.iter().enumerate() {
        let (k, channel) = match axis {
            SweepAxis::Snr => (base_k, EvalChannel { snr_db: value, ..base }),
            SweepAxis::Offset => (
                base_k,
                EvalChannel {
                    estimate_offset_db: value,
                    ..base
                },
            ),
            SweepAxis::Cbr => {
                let k = value.round() as usize;
                if k < 1 || k > pipeline.config.encoder.tokens {
                    return Err(RunnerError::Other(format!(
                        "cbr sweep: K={k} out of range 1..={}",
                        pipeline.config.encoder.tokens
                    )));
                }
                (k, base)
            }
        };
        let mut d1_acc = 0.0;
        let mut d2_acc = 0.0;
        let mut count = 0usize;
        let mut cbr = 0.0;
        for (ci, item) in clouds.iter().enumerate() {
            for trial in 0..trials {
                let stream_id = EVAL_STREAM_BASE
                    + (gi as u64) * 1_000_000
                    + (ci as u64) * 1_000
                    + trial as u64;
                let (report, _) =
                    transmit_and_score(pipeline, &item.cloud, k, channel, seed, stream_id)?;
                d1_acc += report.distortion.d1_psnr;
                d2_acc += report.distortion.d2_psnr;
                cbr = report.cbr;
                count += 1;
            }
        }
        rows.push(SweepRow {
            axis_value: value,
            k,
            snr_db: channel.snr_db,
            offset_db: channel.estimate_offset_db,
            cbr,
            d1_mean_db: d1_acc / count as f64,
            d2_mean_db: d2_acc / count as f64,
            trials,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,k,snr_db,offset_db,cbr,d1_psnr_db,d2_psnr_db,trials\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            axis, r.axis_value, r.k, r.snr_db, r.offset_db, r.cbr, r.d1_mean_db, r.d2_mean_db, r.trials
        ));
    }
    out
}

/// Decoder-stage ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoResidual,
    NoUpsample,
    NoTransformer,
    CoarseOnly,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoResidual,
        AblationVariant::NoUpsample,
        AblationVariant::NoTransformer,
        AblationVariant::CoarseOnly,
    ];

    pub fn parse(name: &str) -> Option<AblationVariant> {
        Some(match name {
            "none" | "full" => AblationVariant::Full,
            "residual" => AblationVariant::NoResidual,
            "upsample" => AblationVariant::NoUpsample,
            "transformer" => AblationVariant::NoTransformer,
            "coarse-only" => AblationVariant::CoarseOnly,
            _ => return None,
        })
    }

    pub fn flags(&self) -> DecoderAblation {
        match self {
            AblationVariant::Full => DecoderAblation::full(),
            AblationVariant::NoResidual => DecoderAblation {
                use_residual_head: false,
                ..DecoderAblation::full()
            },
            AblationVariant::NoUpsample => DecoderAblation {
                use_upsample: false,
                ..DecoderAblation::full()
            },
            AblationVariant::NoTransformer => DecoderAblation {
                use_transformer: false,
                ..DecoderAblation::full()
            },
            AblationVariant::CoarseOnly => DecoderAblation::coarse_only(),
        }
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AblationVariant::Full => "full",
            AblationVariant::NoResidual => "-residual",
            AblationVariant::NoUpsample => "-upsample",
            AblationVariant::NoTransformer => "-transformer",
            AblationVariant::CoarseOnly => "coarse-only",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub variant: AblationVariant,
    pub snr_db: f64,
    pub d1_mean_db: f64,
    pub d2_mean_db: f64,
    pub trials: usize,
}

/// Evaluates decoder-stage ablations of one trained pipeline at a fixed
/// channel point. The decoder flags are restored afterwards.
pub fn run_ablate(
    pipeline: &mut Pipeline,
    clouds: &[DatasetItem],
    variants: &[AblationVariant],
    k: usize,
    channel: EvalChannel,
    trials: usize,
    seed: u64,
) -> Result<Vec<AblateRow>, RunnerError> {
    if clouds.is_empty() {
        return Err(RunnerError::Other("ablation needs at least one cloud".into()));
    }
    let saved = pipeline.decoder.ablation;
    let mut rows = Vec::with_capacity(variants.len());
    for (vi, variant) in variants.iter().enumerate() {
        pipeline.decoder.ablation = variant.flags();
        let mut d1_acc = 0.0;
        let mut d2_acc = 0.0;
        let mut count = 0usize;
        for (ci, item) in clouds.iter().enumerate() {
            for trial in 0..trials {
                // same streams across variants: identical channel noise per cell
                let stream_id = EVAL_STREAM_BASE + (ci as u64) * 1_000 + trial as u64;
                let (report, _) =
                    transmit_and_score(pipeline, &item.cloud, k, channel, seed, stream_id)?;
                d1_acc += report.distortion.d1_psnr;
                d2_acc += report.distortion.d2_psnr;
                count += 1;
            }
        }
        rows.push(AblateRow {
            variant: *variant,
            snr_db: channel.snr_db,
            d1_mean_db: d1_acc / count as f64,
            d2_mean_db: d2_acc / count as f64,
            trials,
        });
        let _ = vi;
    }
    pipeline.decoder.ablation = saved;
    Ok(rows)
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from("variant,snr_db,d1_psnr_db,d2_psnr_db,trials\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.snr_db, r.d1_mean_db, r.d2_mean_db, r.trials
        ));
    }
    out
}
