//! Command-line interface: code construction and export, mask inspection,
//! training, evaluation and sweeps.

use clap::{Parser, Subcommand};
use ecct::codes::{self, build_named, LinearCode, PcmFormat};
use ecct::gf2;
use ecct::harness::{
    evaluate, sweep, Decoder, FlatConfig, ModelDecoder, StopRule, SweepSpec,
};
use ecct::mask::{build_mask, sparsity, AttentionMask};
use ecct::model::{
    load_checkpoint, save_checkpoint, train, trajectory_csv, EcctConfig,
    TrainSchedule, Variant,
};
use serde_json::json;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ecct", version, about = "Transformer decoders for short block codes")]
struct Cli {
    /// Base seed for all randomized work.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Numeric precision for training (f32 | f64).
    #[arg(long, global = true, default_value = "f32")]
    precision: String,
    /// Output directory (or file, for export).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Code construction and inspection.
    Code {
        #[command(subcommand)]
        cmd: CodeCmd,
    },
    /// Attention-mask construction and sparsity reports.
    Mask {
        #[command(subcommand)]
        cmd: MaskCmd,
    },
    /// Train a decoder and write a checkpoint.
    Train {
        #[arg(long)]
        code: String,
        #[arg(long, default_value = "dm")]
        variant: Variant,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        /// Schedule preset (desk | paper); config-file keys override it.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batches_per_epoch: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate BER/FER over an SNR list.
    Eval {
        /// Checkpoint directory (for the model decoder).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Decoder (model | hard | oracle); hard/oracle need --code.
        #[arg(long, default_value = "model")]
        decoder: String,
        #[arg(long)]
        code: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
        snrs: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        min_frames: usize,
        #[arg(long, default_value_t = 500)]
        min_frame_errors: usize,
        #[arg(long, default_value_t = 10_000_000)]
        max_frames: usize,
        /// Evaluate on the all-zero codeword instead of random messages.
        #[arg(long)]
        zero_codeword: bool,
    },
    /// Run a train+eval grid with resume support.
    Sweep {
        /// Grid preset (desk | paper); config-file keys override it.
        #[arg(long, default_value = "desk")]
        preset: String,
    },
}

#[derive(Subcommand)]
enum CodeCmd {
    /// Construct a named code; with --out, write its PCMs as dense01.
    Build {
        #[arg(long)]
        code: String,
    },
    /// Report dimensions, ranks and codebook-equivalence verdicts.
    Inspect {
        #[arg(long)]
        code: String,
    },
    /// Write one PCM to a file.
    Export {
        #[arg(long)]
        code: String,
        /// Which PCM (conv | sys | mod).
        #[arg(long, default_value = "conv")]
        which: String,
        #[arg(long, default_value = "dense01")]
        format: PcmFormat,
    },
}

#[derive(Subcommand)]
enum MaskCmd {
    /// Build masks; with --out, write dense01 and PGM renderings.
    Build {
        #[arg(long)]
        code: String,
    },
    /// Print mask sparsity percentages.
    Sparsity {
        #[arg(long)]
        code: String,
        /// Report both conventional and systematic masks.
        #[arg(long)]
        both: bool,
        /// Report only the systematic mask.
        #[arg(long)]
        systematic: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the same path.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(cli: Cli) -> Result<(), AnyError> {
    match &cli.cmd {
        Cmd::Code { cmd } => run_code(&cli, cmd),
        Cmd::Mask { cmd } => run_mask(&cli, cmd),
        Cmd::Train { .. } => run_train(&cli),
        Cmd::Eval { .. } => run_eval(&cli),
        Cmd::Sweep { .. } => run_sweep(&cli),
    }
}

/// Masks in report order: conventional, modified-conventional (polar only),
/// systematic.
fn code_masks(code: &LinearCode) -> Result<Vec<(&'static str, AttentionMask)>, AnyError> {
    let mut out = vec![("conventional", build_mask(&code.h_conv, false)?)];
    if let Some(h_mod) = &code.h_mod {
        out.push(("modified-conventional", build_mask(h_mod, false)?));
    }
    out.push(("systematic", build_mask(&code.h_sys, true)?));
    Ok(out)
}

fn run_code(cli: &Cli, cmd: &CodeCmd) -> Result<(), AnyError> {
    match cmd {
        CodeCmd::Build { code } => {
            let c = build_named(code)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                codes::save_pcm(&out.join("h_conv.txt"), PcmFormat::Dense01, &c.h_conv)?;
                codes::save_pcm(&out.join("h_sys.txt"), PcmFormat::Dense01, &c.h_sys)?;
                if let Some(h_mod) = &c.h_mod {
                    codes::save_pcm(&out.join("h_mod.txt"), PcmFormat::Dense01, h_mod)?;
                }
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&c.manifest())?);
            } else {
                println!("{}: n={} k={} rate={:.4}", c.name, c.n, c.k, c.rate());
                if let Some(out) = &cli.out {
                    println!("PCMs written to {}", out.display());
                }
            }
        }
        CodeCmd::Inspect { code } => {
            let c = build_named(code)?;
            let rank_conv = gf2::rank(&c.h_conv);
            let sys_equal = gf2::row_space_equal(&c.h_conv, &c.h_sys)?;
            let mod_equal = match &c.h_mod {
                Some(h) => Some(gf2::row_space_equal(&c.h_conv, h)?),
                None => None,
            };
            let perm_identity =
                c.column_permutation.iter().enumerate().all(|(i, &p)| i == p);
            if cli.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "name": c.name,
                        "family": format!("{:?}", c.family).to_lowercase(),
                        "n": c.n,
                        "k": c.k,
                        "rank": rank_conv,
                        "sys_codebook_equal": sys_equal,
                        "mod_codebook_equal": mod_equal,
                        "column_permutation_identity": perm_identity,
                    }))?
                );
            } else {
                println!("{}: n={} k={} rank(h_conv)={}", c.name, c.n, c.k, rank_conv);
                println!("codebook(h_sys) == codebook(h_conv): {sys_equal}");
                if let Some(eq) = mod_equal {
                    println!("codebook(h_mod) == codebook(h_conv): {eq}");
                }
                println!("systematic column permutation is identity: {perm_identity}");
            }
        }
        CodeCmd::Export { code, which, format } => {
            let c = build_named(code)?;
            let h = match which.as_str() {
                "conv" => &c.h_conv,
                "sys" => &c.h_sys,
                "mod" => c
                    .h_mod
                    .as_ref()
                    .ok_or_else(|| format!("{} has no modified PCM", c.name))?,
                other => return Err(format!("unknown PCM {other:?} (conv | sys | mod)").into()),
            };
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}_{which}.txt", c.name)));
            codes::save_pcm(&out, *format, h)?;
            if cli.json {
                println!(
                    "{}",
                    json!({"code": c.name, "which": which, "path": out.display().to_string()})
                );
            } else {
                println!("wrote {} ({} x {}) to {}", which, h.rows(), h.cols(), out.display());
            }
        }
    }
    Ok(())
}

fn run_mask(cli: &Cli, cmd: &MaskCmd) -> Result<(), AnyError> {
    match cmd {
        MaskCmd::Build { code } => {
            let c = build_named(code)?;
            let masks = code_masks(&c)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                for (label, mask) in &masks {
                    std::fs::write(out.join(format!("mask_{label}.txt")), mask.to_dense01())?;
                    std::fs::write(out.join(format!("mask_{label}.pgm")), mask.to_pgm())?;
                }
            }
            if cli.json {
                let entries: Vec<_> = masks
                    .iter()
                    .map(|(label, m)| {
                        json!({"mask": label, "size": m.size(), "sparsity": sparsity(m)})
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&json!({"code": c.name, "masks": entries}))?);
            } else {
                for (label, m) in &masks {
                    println!(
                        "{} {} mask: {}x{}, sparsity {:.2}%",
                        c.name,
                        label,
                        m.size(),
                        m.size(),
                        100.0 * sparsity(m)
                    );
                }
            }
        }
        MaskCmd::Sparsity { code, both, systematic } => {
            let c = build_named(code)?;
            let all = code_masks(&c)?;
            let chosen: Vec<_> = if *both {
                all
            } else if *systematic {
                all.into_iter().filter(|(l, _)| *l == "systematic").collect()
            } else {
                all.into_iter().filter(|(l, _)| *l != "systematic").collect()
            };
            if cli.json {
                let entries: Vec<_> = chosen
                    .iter()
                    .map(|(label, m)| json!({"mask": label, "sparsity": sparsity(m)}))
                    .collect();
                println!("{}", serde_json::to_string_pretty(&json!({"code": c.name, "masks": entries}))?);
            } else {
                for (label, m) in &chosen {
                    println!("{} {}: {:.2}%", c.name, label, 100.0 * sparsity(m));
                }
            }
        }
    }
    Ok(())
}

fn load_flat_config(cli: &Cli) -> Result<FlatConfig, AnyError> {
    Ok(match &cli.config {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::default(),
    })
}

fn run_train(cli: &Cli) -> Result<(), AnyError> {
    let Cmd::Train {
        code,
        variant,
        layers,
        dim,
        heads,
        preset,
        epochs,
        batches_per_epoch,
        batch_size,
        lr,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let c = build_named(code)?;
    let cfg = EcctConfig::new(code, *variant, *layers, *dim, *heads);
    let mut sched = match preset.as_str() {
        "desk" => TrainSchedule::desk(cli.seed),
        "paper" => TrainSchedule::paper(cli.seed),
        other => return Err(format!("unknown preset {other:?} (desk | paper)").into()),
    };
    let flat = load_flat_config(cli)?;
    if let Some(v) = flat.get_parse("epochs")? {
        sched.epochs = v;
    }
    if let Some(v) = flat.get_parse("batches_per_epoch")? {
        sched.batches_per_epoch = v;
    }
    if let Some(v) = flat.get_parse("batch_size")? {
        sched.batch_size = v;
    }
    if let Some(v) = flat.get_parse("lr")? {
        sched.lr = v;
    }
    if let Some(v) = *epochs {
        sched.epochs = v;
    }
    if let Some(v) = *batches_per_epoch {
        sched.batches_per_epoch = v;
    }
    if let Some(v) = *batch_size {
        sched.batch_size = v;
    }
    if let Some(v) = *lr {
        sched.lr = v;
    }

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("checkpoint"));
    let json_mode = cli.json;
    let log = |e: usize, l: f64| {
        if !json_mode {
            println!("epoch {:>4}: mean loss {l:.6}", e + 1);
        }
    };
    let trajectory = match cli.precision.as_str() {
        "f32" => {
            let result = train::<f32>(&c, &cfg, &sched, log)?;
            save_checkpoint(&out, &cfg, &result.params)?;
            result.trajectory
        }
        "f64" => {
            let result = train::<f64>(&c, &cfg, &sched, log)?;
            save_checkpoint(&out, &cfg, &result.params.convert::<f32>())?;
            result.trajectory
        }
        other => return Err(format!("unknown precision {other:?} (f32 | f64)").into()),
    };
    std::fs::write(out.join("trajectory.csv"), trajectory_csv(&trajectory))?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "checkpoint": out.display().to_string(),
                "epochs": trajectory.len(),
                "final_loss": trajectory.last(),
            }))?
        );
    } else {
        println!("checkpoint written to {}", out.display());
    }
    Ok(())
}

fn run_eval(cli: &Cli) -> Result<(), AnyError> {
    let Cmd::Eval {
        checkpoint,
        decoder,
        code,
        snrs,
        min_frames,
        min_frame_errors,
        max_frames,
        zero_codeword,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let stop = StopRule {
        min_frames: *min_frames,
        min_frame_errors: *min_frame_errors,
        max_frames: *max_frames,
    };
    // Resolve the code and the decoder.
    let (c, model) = match decoder.as_str() {
        "model" => {
            let dir = checkpoint
                .as_ref()
                .ok_or("the model decoder needs --checkpoint")?;
            let (cfg, params) = load_checkpoint(dir)?;
            let c = build_named(&cfg.code)?;
            if let Some(name) = code {
                if *name != c.name {
                    return Err(format!(
                        "checkpoint is for {}, --code says {}",
                        c.name, name
                    )
                    .into());
                }
            }
            let m = ModelDecoder::new(&c, cfg, params)?;
            (c, Some(m))
        }
        "hard" | "oracle" => {
            let name = code.as_ref().ok_or("hard/oracle decoders need --code")?;
            (build_named(name)?, None)
        }
        other => return Err(format!("unknown decoder {other:?} (model | hard | oracle)").into()),
    };

    let mut reports = Vec::new();
    for &snr in snrs {
        let dec = match (decoder.as_str(), &model) {
            ("model", Some(m)) => Decoder::Model(m),
            ("hard", _) => Decoder::Hard,
            ("oracle", _) => Decoder::Oracle,
            _ => unreachable!(),
        };
        let report = evaluate(&c, &dec, snr, &stop, cli.seed, *zero_codeword)?;
        if !cli.json {
            println!(
                "{} @ {snr} dB: ber {:.5e} fer {:.5e} ({} frames, {} bit errors{})",
                c.name,
                report.ber,
                report.fer,
                report.frames,
                report.bit_errors,
                if report.capped { ", capped" } else { "" }
            );
        }
        reports.push(report);
    }
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    }
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn run_sweep(cli: &Cli) -> Result<(), AnyError> {
    let Cmd::Sweep { preset } = &cli.cmd else { unreachable!() };
    let mut flat = load_flat_config(cli)?;
    // The --preset flag is the default; an explicit config key wins.
    if flat.get("preset").is_none() {
        flat = FlatConfig::parse(&format!(
            "preset = {preset}\n{}",
            flat.keys()
                .map(|k| format!("{k} = {}\n", flat.get(k).unwrap()))
                .collect::<String>()
        ))?;
    }
    let spec = SweepSpec::from_config(&flat, cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    let json_mode = cli.json;
    let csv = sweep(&spec, &out, |line| {
        if !json_mode {
            println!("{line}");
        }
    })?;
    if cli.json {
        let rows = std::fs::read_to_string(out.join("results.json"))?;
        println!("{rows}");
    } else {
        println!("results written to {}", csv.display());
    }
    Ok(())
}
