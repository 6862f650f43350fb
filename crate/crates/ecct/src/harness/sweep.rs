//! Cross-product experiment runner: train each (code, variant, N, d) cell,
//! evaluate at every SNR, write CSV/JSON results, resume from a progress
//! file.

use super::eval::{evaluate, Decoder, ModelDecoder, StopRule};
use super::{FlatConfig, HarnessError};
use crate::codes::build_named;
use crate::model::{
    save_checkpoint, train, trajectory_csv, EcctConfig, TrainSchedule, Variant,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// The seven code presets the full-scale tables enumerate.
pub const PAPER_CODES: [&str; 7] = [
    "bch-31-11",
    "bch-31-16",
    "bch-63-30",
    "bch-63-45",
    "polar-64-22",
    "polar-64-32",
    "polar-64-48",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub codes: Vec<String>,
    pub variants: Vec<Variant>,
    /// (n_layers, embed_dim) pairs.
    pub dims: Vec<(usize, usize)>,
    pub heads: usize,
    pub snrs_db: Vec<f64>,
    pub schedule: TrainSchedule,
    pub stop: StopRule,
    pub seed: u64,
}

impl SweepSpec {
    /// Small grid that completes on a desk CPU.
    pub fn desk(seed: u64) -> Self {
        SweepSpec {
            codes: vec!["polar-64-32".into()],
            variants: vec![Variant::Conventional, Variant::Sm, Variant::Dm],
            dims: vec![(2, 32)],
            heads: 8,
            snrs_db: vec![4.0, 5.0, 6.0],
            schedule: TrainSchedule::desk(seed),
            stop: StopRule { min_frames: 20_000, min_frame_errors: 100, max_frames: 200_000 },
            seed,
        }
    }

    /// The full-scale grid; provided as a preset, far beyond desk budgets.
    pub fn paper(seed: u64) -> Self {
        SweepSpec {
            codes: PAPER_CODES.iter().map(|s| s.to_string()).collect(),
            variants: vec![Variant::Conventional, Variant::Sm, Variant::Dm],
            dims: vec![(2, 32), (2, 64), (2, 128), (6, 32), (6, 64), (6, 128)],
            heads: 8,
            snrs_db: vec![4.0, 5.0, 6.0],
            schedule: TrainSchedule::paper(seed),
            stop: StopRule::default(),
            seed,
        }
    }

    /// Override preset fields from a flat config file. Recognized keys:
    /// `preset`, `codes`, `variants`, `dims` (`NxD` pairs), `heads`, `snrs`,
    /// `epochs`, `batches_per_epoch`, `batch_size`, `lr`, `lr_decay`,
    /// `train_snrs`, `min_frames`, `min_frame_errors`, `max_frames`, `seed`.
    pub fn from_config(cfg: &FlatConfig, default_seed: u64) -> Result<Self, HarnessError> {
        let seed = cfg.get_parse::<u64>("seed")?.unwrap_or(default_seed);
        let mut spec = match cfg.get("preset") {
            None | Some("desk") => SweepSpec::desk(seed),
            Some("paper") => SweepSpec::paper(seed),
            Some(other) => {
                return Err(HarnessError::ConfigMismatch(format!(
                    "unknown preset {other:?} (desk | paper)"
                )))
            }
        };
        if let Some(codes) = cfg.get_list::<String>("codes")? {
            spec.codes = codes;
        }
        if let Some(variants) = cfg.get_list::<Variant>("variants")? {
            spec.variants = variants;
        }
        if let Some(dims) = cfg.get_list::<String>("dims")? {
            spec.dims = dims
                .iter()
                .map(|s| {
                    let (a, b) = s.split_once('x').ok_or_else(|| {
                        HarnessError::ConfigMismatch(format!("dims entry {s:?} is not NxD"))
                    })?;
                    let parse = |v: &str| {
                        v.trim().parse::<usize>().map_err(|_| {
                            HarnessError::ConfigMismatch(format!("dims entry {s:?} is not NxD"))
                        })
                    };
                    Ok((parse(a)?, parse(b)?))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
        }
        if let Some(h) = cfg.get_parse("heads")? {
            spec.heads = h;
        }
        if let Some(snrs) = cfg.get_list("snrs")? {
            spec.snrs_db = snrs;
        }
        if let Some(v) = cfg.get_parse("epochs")? {
            spec.schedule.epochs = v;
        }
        if let Some(v) = cfg.get_parse("batches_per_epoch")? {
            spec.schedule.batches_per_epoch = v;
        }
        if let Some(v) = cfg.get_parse("batch_size")? {
            spec.schedule.batch_size = v;
        }
        if let Some(v) = cfg.get_parse("lr")? {
            spec.schedule.lr = v;
        }
        if let Some(v) = cfg.get_parse("lr_decay")? {
            spec.schedule.lr_decay = v;
        }
        if let Some(v) = cfg.get_list("train_snrs")? {
            spec.schedule.train_snr_db = v;
        }
        if let Some(v) = cfg.get_parse("min_frames")? {
            spec.stop.min_frames = v;
        }
        if let Some(v) = cfg.get_parse("min_frame_errors")? {
            spec.stop.min_frame_errors = v;
        }
        if let Some(v) = cfg.get_parse("max_frames")? {
            spec.stop.max_frames = v;
        }
        spec.schedule.seed = seed;
        Ok(spec)
    }
}

pub const CSV_HEADER: &str = "code,family,n,k,variant,n_layers,embed_dim,heads,snr_db,\
frames,bit_errors,frame_errors,ber,fer,seed,capped";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub code: String,
    pub family: String,
    pub n: usize,
    pub k: usize,
    pub variant: String,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub snr_db: f64,
    pub frames: usize,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub ber: f64,
    pub fer: f64,
    pub seed: u64,
    pub capped: bool,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.5e},{:.5e},{},{}",
            self.code,
            self.family,
            self.n,
            self.k,
            self.variant,
            self.n_layers,
            self.embed_dim,
            self.heads,
            self.snr_db,
            self.frames,
            self.bit_errors,
            self.frame_errors,
            self.ber,
            self.fer,
            self.seed,
            self.capped
        )
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Progress {
    /// Completed cell key -> rows, keyed "code/variant/NxD".
    cells: BTreeMap<String, Vec<ResultRow>>,
}

fn cell_key(code: &str, variant: Variant, n_layers: usize, d: usize) -> String {
    format!("{code}/{}/{n_layers}x{d}", variant.label())
}

/// Run the full grid. Completed cells recorded in `progress.json` are
/// skipped on re-run, so an interrupted sweep resumes where it stopped and
/// produces the identical final CSV.
pub fn sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    mut log: impl FnMut(&str),
) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let progress_path = out_dir.join("progress.json");
    let mut progress: Progress = if progress_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&progress_path)?)?
    } else {
        Progress::default()
    };

    for code_name in &spec.codes {
        let code = build_named(code_name)?;
        for &variant in &spec.variants {
            for &(n_layers, d) in &spec.dims {
                let key = cell_key(code_name, variant, n_layers, d);
                if progress.cells.contains_key(&key) {
                    log(&format!("skip {key} (already complete)"));
                    continue;
                }
                log(&format!("train {key}"));
                let cfg = EcctConfig::new(code_name, variant, n_layers, d, spec.heads);
                let result = train::<f32>(&code, &cfg, &spec.schedule, |e, l| {
                    log(&format!("  {key} epoch {} loss {l:.5}", e + 1))
                })?;
                let ckpt_dir = out_dir.join("checkpoints").join(key.replace('/', "_"));
                save_checkpoint(&ckpt_dir, &cfg, &result.params)?;
                std::fs::write(
                    ckpt_dir.join("trajectory.csv"),
                    trajectory_csv(&result.trajectory),
                )?;

                let decoder = ModelDecoder::new(&code, cfg.clone(), result.params)?;
                let mut rows = Vec::new();
                for &snr in &spec.snrs_db {
                    let report = evaluate(
                        &code,
                        &Decoder::Model(&decoder),
                        snr,
                        &spec.stop,
                        spec.seed,
                        false,
                    )?;
                    log(&format!(
                        "  {key} @ {snr} dB: ber {:.5e} fer {:.5e} ({} frames)",
                        report.ber, report.fer, report.frames
                    ));
                    rows.push(ResultRow {
                        code: code_name.clone(),
                        family: format!("{:?}", code.family).to_lowercase(),
                        n: code.n,
                        k: code.k,
                        variant: variant.label().to_string(),
                        n_layers,
                        embed_dim: d,
                        heads: spec.heads,
                        snr_db: snr,
                        frames: report.frames,
                        bit_errors: report.bit_errors,
                        frame_errors: report.frame_errors,
                        ber: report.ber,
                        fer: report.fer,
                        seed: spec.seed,
                        capped: report.capped,
                    });
                }
                progress.cells.insert(key, rows);
                std::fs::write(&progress_path, serde_json::to_string_pretty(&progress)?)?;
            }
        }
    }

    // Deterministic output order: the spec's own grid order.
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut all_rows = Vec::new();
    for code_name in &spec.codes {
        for &variant in &spec.variants {
            for &(n_layers, d) in &spec.dims {
                let key = cell_key(code_name, variant, n_layers, d);
                if let Some(rows) = progress.cells.get(&key) {
                    for row in rows {
                        csv.push_str(&row.csv_line());
                        csv.push('\n');
                        all_rows.push(row.clone());
                    }
                }
            }
        }
    }
    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, csv)?;
    std::fs::write(out_dir.join("results.json"), serde_json::to_string_pretty(&all_rows)?)?;
    Ok(csv_path)
}
