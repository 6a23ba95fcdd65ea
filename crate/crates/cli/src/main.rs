//! Command-line front end: training, transmission simulation, evaluation,
//! sweeps, ablations, and the classical baseline, emitting CSV results and
//! a JSON manifest per run.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 I/O or parse
//! error, 4 decode failure (every baseline trial failed).

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pcjscc::channel::ChannelKind;
use pcjscc::checkpoint::{load_checkpoint, save_checkpoint};
use pcjscc::config::Config;
use pcjscc::metrics::{estimate_normals, DistortionReport, UNIT_CUBE_PEAK};
use pcjscc::model::Pipeline;
use pcjscc::pointcloud::{load_ply, save_ply, PlyFormat, PointCloud};
use pcjscc::runner::{
    ablate_csv, run_ablate, run_sweep, sweep_csv, transmit_and_score, AblationVariant,
    EvalChannel, SweepAxis, NORMALS_K,
};
use pcjscc::sscc::{sscc_trial, LdpcProfile, Modulation, SsccConfig};
use pcjscc::trainer::{history_csv, resample, Dataset, DatasetItem, Trainer};

const EXIT_CONFIG: i32 = 2;
const EXIT_IO: i32 = 3;
const EXIT_DECODE: i32 = 4;

#[derive(Parser)]
#[command(
    name = "pcjscc",
    version,
    about = "Learned point-cloud transmission simulator with a classical LDPC/QAM baseline"
)]
struct Cli {
    /// Master seed; flag > config file > env default.
    #[arg(long, global = true, env = "PCJSCC_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    Awgn,
    Rayleigh,
}

impl From<ChannelArg> for ChannelKind {
    fn from(value: ChannelArg) -> ChannelKind {
        match value {
            ChannelArg::Awgn => ChannelKind::Awgn,
            ChannelArg::Rayleigh => ChannelKind::Rayleigh,
        }
    }
}

#[derive(Args, Clone)]
struct ChannelFlags {
    /// Channel model.
    #[arg(long, value_enum, default_value = "awgn")]
    channel: ChannelArg,
    /// Operating SNR in dB (Eb/N0 per coded bit for the baseline).
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// Offset added to the receiver-side SNR estimate, dB.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_offset: f64,
    /// Divide received symbols by the fading coefficient (perfect CSI).
    #[arg(long, default_value_t = false)]
    csi_equalize: bool,
}

impl ChannelFlags {
    fn eval_channel(&self) -> EvalChannel {
        EvalChannel {
            kind: self.channel.into(),
            snr_db: self.snr_db,
            estimate_offset_db: self.snr_offset,
            csi_equalize: self.csi_equalize,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, resolved config, and history CSV.
    Train {
        /// TOML config file; omitted keys use defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint in the output directory.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Transmit one cloud through the learned pipeline and score it.
    Transmit {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Config file (defaults to config.toml next to the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input PLY file.
        #[arg(long)]
        input: PathBuf,
        /// Transmitted token budget K (defaults to the configured value).
        #[arg(long)]
        k: Option<usize>,
        /// FPS-resample the input to this point count (defaults to config).
        #[arg(long)]
        points: Option<usize>,
        /// Output reconstruction PLY path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        channel: ChannelFlags,
    },
    /// D1/D2 PSNR between two PLY files.
    Evaluate {
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long)]
        rec: PathBuf,
        /// Peak value or "auto" (sqrt(3), the unit-cube diagonal).
        #[arg(long, default_value = "auto")]
        peak: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep D1/D2 over an SNR, payload (K), or estimate-offset grid.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sweep axis.
        #[arg(long, value_parser = ["snr", "cbr", "offset"])]
        axis: String,
        /// Comma-separated grid values (dB for snr/offset, K for cbr).
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        grid: Vec<f64>,
        /// Channel trials per grid cell and cloud.
        #[arg(long, default_value_t = 4)]
        trials: usize,
        /// Evaluate on this PLY instead of the config validation split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        channel: ChannelFlags,
    },
    /// Decoder-stage ablation rows from one trained checkpoint.
    Ablate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Variants: full, residual, upsample, transformer, coarse-only
        /// (comma separated; default all).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        channel: ChannelFlags,
    },
    /// Classical baseline: octree + LDPC + modulation over the channel.
    Sscc {
        /// Octree depth.
        #[arg(long, default_value_t = 8)]
        depth: u8,
        /// LDPC profile by block length.
        #[arg(long, value_parser = ["648", "1200"], default_value = "648")]
        ldpc: String,
        /// Modulation.
        #[arg(long = "mod", value_parser = ["qam16", "bpsk"], default_value = "qam16")]
        modulation: String,
        /// Trials with independent channel noise.
        #[arg(long, default_value_t = 4)]
        trials: usize,
        /// Input PLY (defaults to one synthetic shape).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Points after FPS resampling.
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        channel: ChannelFlags,
    },
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    version: String,
    seed: u64,
    config_digest: Option<String>,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
}

fn write_manifest(
    primary_output: &Path,
    command: &str,
    seed: u64,
    digest: Option<String>,
    outputs: &[&Path],
    started: Instant,
) -> anyhow::Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_digest: digest,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let path = primary_output.with_extension("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Error class used to pick the process exit code.
enum Failure {
    Config(anyhow::Error),
    Io(anyhow::Error),
    Decode(anyhow::Error),
}

impl Failure {
    fn exit(self) -> ! {
        let (code, err) = match self {
            Failure::Config(e) => (EXIT_CONFIG, e),
            Failure::Io(e) => (EXIT_IO, e),
            Failure::Decode(e) => (EXIT_DECODE, e),
        };
        eprintln!("error: {err:#}");
        std::process::exit(code);
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(cli) {
        failure.exit();
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn io_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Io(e.into())
}

fn load_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<Config, Failure> {
    let mut cfg = match path {
        None => Config::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(io_err)?;
            Config::from_toml(&text).map_err(config_err)?
        }
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Loads the config that belongs to a checkpoint (explicit flag or the
/// config.toml written next to it).
fn checkpoint_config(
    ckpt: &Path,
    explicit: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<Config, Failure> {
    match explicit {
        Some(p) => load_config(Some(p), seed_override),
        None => {
            let sibling = ckpt
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("config.toml");
            if !sibling.exists() {
                return Err(Failure::Config(anyhow!(
                    "no --config given and {} does not exist",
                    sibling.display()
                )));
            }
            load_config(Some(&sibling), seed_override)
        }
    }
}

fn load_pipeline(ckpt: &Path, cfg: &Config) -> Result<Pipeline, Failure> {
    let pipeline = Pipeline::new(cfg).map_err(config_err)?;
    let mut trainer = Trainer::new(&pipeline, cfg);
    load_checkpoint(ckpt, &pipeline, &mut trainer, cfg)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))
        .map_err(io_err)?;
    Ok(pipeline)
}

fn load_input_cloud(path: &Path, points: usize) -> Result<PointCloud, Failure> {
    let raw = load_ply(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(io_err)?;
    resample(&raw, points).map_err(|e| Failure::Config(anyhow!(e)))
}

fn eval_items(
    input: Option<&Path>,
    cfg: &Config,
    pipeline: &Pipeline,
) -> Result<Vec<DatasetItem>, Failure> {
    match input {
        Some(path) => {
            let cloud = load_input_cloud(path, cfg.data.points)?;
            let grouping = pipeline.grouping_for(&cloud).map_err(config_err)?;
            Ok(vec![DatasetItem { cloud, grouping }])
        }
        None => {
            let dataset = Dataset::build(cfg, pipeline).map_err(config_err)?;
            let items = if dataset.val.is_empty() {
                dataset.train
            } else {
                dataset.val
            };
            Ok(items)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Train { config, out, resume } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            std::fs::create_dir_all(&out).map_err(io_err)?;
            let pipeline = Pipeline::new(&cfg).map_err(config_err)?;
            let dataset = Dataset::build(&cfg, &pipeline).map_err(config_err)?;
            let mut trainer = Trainer::new(&pipeline, &cfg);
            let ckpt_path = out.join("model.ckpt");
            if resume {
                load_checkpoint(&ckpt_path, &pipeline, &mut trainer, &cfg).map_err(io_err)?;
            }
            let outcome = trainer
                .train(&pipeline, &cfg, &dataset)
                .map_err(|e| Failure::Config(anyhow!(e)))?;
            save_checkpoint(&ckpt_path, &pipeline, &trainer, &cfg).map_err(io_err)?;
            let cfg_path = out.join("config.toml");
            std::fs::write(&cfg_path, cfg.to_toml())
                .map_err(io_err)?;
            let history_path = out.join("history.csv");
            std::fs::write(&history_path, history_csv(&outcome.history)).map_err(io_err)?;
            println!(
                "trained {} epochs (best val chamfer {} at epoch {}{}); wrote {}",
                outcome.history.len(),
                outcome.best_val_cd,
                outcome.best_epoch,
                if outcome.stopped_early { ", early stop" } else { "" },
                ckpt_path.display()
            );
            write_manifest(
                &ckpt_path,
                "train",
                cfg.seed,
                Some(cfg.digest_hex()),
                &[&ckpt_path, &cfg_path, &history_path],
                started,
            )
            .map_err(io_err)?;
        }

        Command::Transmit {
            ckpt,
            config,
            input,
            k,
            points,
            out,
            channel,
        } => {
            let mut cfg = checkpoint_config(&ckpt, config.as_deref(), cli.seed)?;
            if let Some(points) = points {
                cfg.data.points = points;
                cfg.validate().map_err(config_err)?;
            }
            let pipeline = load_pipeline(&ckpt, &cfg)?;
            let cloud = load_input_cloud(&input, cfg.data.points)?;
            let k = k.unwrap_or_else(|| cfg.payload_k());
            let (report, outcome) = transmit_and_score(
                &pipeline,
                &cloud,
                k,
                channel.eval_channel(),
                cfg.seed,
                pcjscc::random::stream::EVAL_CHANNEL,
            )
            .map_err(config_err)?;
            save_ply(&outcome.reconstruction, &out, PlyFormat::BinaryLittleEndian).map_err(io_err)?;
            let csv_path = out.with_extension("csv");
            let mut csv = String::from(
                "d1_psnr_db,d2_psnr_db,mse_d1_ab,mse_d1_ba,mse_d2_ab,mse_d2_ba,peak,cbr,bpp,k,snr_db,offset_db,channel,h\n",
            );
            let d = report.distortion;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                d.d1_psnr,
                d.d2_psnr,
                d.mse_d1_ab,
                d.mse_d1_ba,
                d.mse_d2_ab,
                d.mse_d2_ba,
                d.peak,
                report.cbr,
                report.bpp,
                report.k,
                channel.snr_db,
                channel.snr_offset,
                ChannelKind::from(channel.channel),
                report.channel_h,
            ));
            std::fs::write(&csv_path, csv).map_err(io_err)?;
            println!(
                "transmitted {} -> {} (D1 {:.2} dB, D2 {:.2} dB, CBR {:.4})",
                input.display(),
                out.display(),
                d.d1_psnr,
                d.d2_psnr,
                report.cbr
            );
            write_manifest(
                &out,
                "transmit",
                cfg.seed,
                Some(cfg.digest_hex()),
                &[&out, &csv_path],
                started,
            )
            .map_err(io_err)?;
        }

        Command::Evaluate { r#ref, rec, peak, out } => {
            let reference = load_ply(&r#ref).map_err(io_err)?;
            let reconstruction = load_ply(&rec).map_err(io_err)?;
            let peak = if peak == "auto" {
                UNIT_CUBE_PEAK
            } else {
                peak.parse::<f64>()
                    .map_err(|_| Failure::Config(anyhow!("--peak must be a number or 'auto'")))?
            };
            let normals_ref = estimate_normals(&reference, NORMALS_K).map_err(config_err)?;
            let normals_rec = estimate_normals(&reconstruction, NORMALS_K).map_err(config_err)?;
            let d = DistortionReport::compute(
                &reference,
                &reconstruction,
                Some(&normals_ref),
                Some(&normals_rec),
                peak,
            );
            let mut csv =
                String::from("d1_psnr_db,d2_psnr_db,mse_d1_ab,mse_d1_ba,mse_d2_ab,mse_d2_ba,peak\n");
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.d1_psnr, d.d2_psnr, d.mse_d1_ab, d.mse_d1_ba, d.mse_d2_ab, d.mse_d2_ba, d.peak
            ));
            match out {
                Some(path) => {
                    std::fs::write(&path, csv).map_err(io_err)?;
                    write_manifest(&path, "evaluate", 0, None, &[&path], started).map_err(io_err)?;
                }
                None => print!("{csv}"),
            }
        }

        Command::Sweep {
            ckpt,
            config,
            axis,
            grid,
            trials,
            input,
            k,
            out,
            channel,
        } => {
            let cfg = checkpoint_config(&ckpt, config.as_deref(), cli.seed)?;
            let pipeline = load_pipeline(&ckpt, &cfg)?;
            let items = eval_items(input.as_deref(), &cfg, &pipeline)?;
            let axis = match axis.as_str() {
                "snr" => SweepAxis::Snr,
                "cbr" => SweepAxis::Cbr,
                _ => SweepAxis::Offset,
            };
            let rows = run_sweep(
                &pipeline,
                &items,
                axis,
                &grid,
                trials,
                k.unwrap_or_else(|| cfg.payload_k()),
                channel.eval_channel(),
                cfg.seed,
            )
            .map_err(config_err)?;
            std::fs::write(&out, sweep_csv(axis, &rows)).map_err(io_err)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            write_manifest(&out, "sweep", cfg.seed, Some(cfg.digest_hex()), &[&out], started)
                .map_err(io_err)?;
        }

        Command::Ablate {
            ckpt,
            config,
            variants,
            trials,
            input,
            k,
            out,
            channel,
        } => {
            let cfg = checkpoint_config(&ckpt, config.as_deref(), cli.seed)?;
            let mut pipeline = load_pipeline(&ckpt, &cfg)?;
            let items = eval_items(input.as_deref(), &cfg, &pipeline)?;
            let variants: Vec<AblationVariant> = if variants.is_empty() {
                AblationVariant::ALL.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| {
                        AblationVariant::parse(v)
                            .ok_or_else(|| Failure::Config(anyhow!("unknown ablation variant {v}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let rows = run_ablate(
                &mut pipeline,
                &items,
                &variants,
                k.unwrap_or_else(|| cfg.payload_k()),
                channel.eval_channel(),
                trials,
                cfg.seed,
            )
            .map_err(config_err)?;
            std::fs::write(&out, ablate_csv(&rows)).map_err(io_err)?;
            println!("wrote {} variant rows to {}", rows.len(), out.display());
            write_manifest(&out, "ablate", cfg.seed, Some(cfg.digest_hex()), &[&out], started)
                .map_err(io_err)?;
        }

        Command::Sscc {
            depth,
            ldpc,
            modulation,
            trials,
            input,
            points,
            out,
            channel,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let cloud = match input.as_deref() {
                Some(p) => load_input_cloud(p, points)?,
                None => pcjscc::pointcloud::synthetic::dataset(seed, 1, points)
                    .pop()
                    .expect("generator yields one cloud"),
            };
            let profile = if ldpc == "1200" {
                LdpcProfile::N1200
            } else {
                LdpcProfile::N648
            };
            let modulation = if modulation == "bpsk" {
                Modulation::Bpsk
            } else {
                Modulation::Qam16
            };
            let cfg = SsccConfig {
                depth,
                profile,
                modulation,
                iterations: profile.default_iterations(),
                channel: channel.channel.into(),
                ebn0_db: channel.snr_db,
                max_log: false,
            };
            let normals = estimate_normals(&cloud, NORMALS_K).map_err(config_err)?;
            let mut csv = String::from("trial,status,stage,ber,d1_psnr_db,d2_psnr_db,codewords,unconverged\n");
            let mut successes = 0usize;
            for trial in 0..trials {
                let mut rng = pcjscc::random::rng_stream(seed, (1 << 33) + trial as u64);
                let result = sscc_trial(&cloud, &cfg, &mut rng);
                match &result.reconstruction {
                    Ok(rec) => {
                        successes += 1;
                        let d = DistortionReport::compute(
                            &cloud,
                            rec,
                            Some(&normals),
                            None,
                            UNIT_CUBE_PEAK,
                        );
                        csv.push_str(&format!(
                            "{trial},ok,,{},{},{},{},{}\n",
                            result.ber(),
                            d.d1_psnr,
                            d.d2_psnr,
                            result.codewords,
                            result.unconverged
                        ));
                    }
                    Err(failure) => {
                        csv.push_str(&format!(
                            "{trial},failed,{},{},,,{},{}\n",
                            failure.stage,
                            result.ber(),
                            result.codewords,
                            result.unconverged
                        ));
                    }
                }
            }
            std::fs::write(&out, csv).map_err(io_err)?;
            println!(
                "{successes}/{trials} trials decoded (depth {depth}, {} @ {} dB Eb/N0)",
                if modulation == Modulation::Qam16 { "16-QAM" } else { "BPSK" },
                channel.snr_db
            );
            write_manifest(&out, "sscc", seed, None, &[&out], started).map_err(io_err)?;
            if successes == 0 {
                return Err(Failure::Decode(anyhow!(
                    "all {trials} trials failed to decode at {} dB",
                    channel.snr_db
                )));
            }
        }
    }
    Ok(())
}
