//! Command-line pipeline for the anchor-free Siamese tracker: generate
//! synthetic sequences, train, track, evaluate, and analyze backbones.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 I/O or
//! file-format failure, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use siamtrack_core::backbone::{self, REFERENCE_BACKBONE};
use siamtrack_core::error::Error;
use siamtrack_core::labels::BBox;
use siamtrack_core::metrics::evaluate_ope;
use siamtrack_core::model::{score_geometry, TrackModel};
use siamtrack_core::synth::{
    generate_sequence, parse_key_value_lines, read_sequence, write_sequence, AnnotatedSequence,
    SequenceConfig,
};
use siamtrack_core::tracker::{track_sequence, track_sequence_oracle, DEFAULT_HANNING_GAMMA};
use siamtrack_core::train::{loss_history_csv, train, TrainConfig};

#[derive(Parser)]
#[command(name = "siamtrack", about = "Anchor-free Siamese tracking at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate annotated synthetic sequences from a key=value config file.
    Gen {
        /// Config file; sequence keys plus optional `sequences=N`.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; one `seq_NNNNNN` subdirectory per sequence.
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences (overrides `sequences` from the config).
        #[arg(long)]
        count: Option<usize>,
        /// Base seed (overrides `seed` from the config); sequence i uses base + i.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a directory of generated sequences.
    Train {
        /// Directory containing `seq_*` subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Backbone description file (defaults to the built-in reference).
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Checkpoint output path; the loss history lands next to it as
        /// `<stem>.loss.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr_start: f64,
        #[arg(long, default_value_t = 1e-6)]
        lr_end: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Track one sequence, writing `frame_index cx cy w h` per line.
    Track {
        /// Sequence directory (frames + groundtruth.txt).
        #[arg(long)]
        seq: PathBuf,
        /// Result log path.
        #[arg(long)]
        out: PathBuf,
        /// Model checkpoint (not needed with --oracle).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Backbone description file (defaults to the built-in reference).
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Fabricate head outputs from the groundtruth instead of running
        /// the network; isolates crop geometry, windowing and decoding.
        #[arg(long)]
        oracle: bool,
        /// Hanning blend weight in [0, 1].
        #[arg(long, default_value_t = DEFAULT_HANNING_GAMMA)]
        gamma: f64,
    },
    /// Evaluate a result log against a sequence's groundtruth.
    Eval {
        /// Result log from `track`.
        #[arg(long)]
        log: PathBuf,
        /// Sequence directory with groundtruth.txt.
        #[arg(long)]
        seq: PathBuf,
        /// Prefix for the curve CSVs (defaults to the log path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print stride, receptive field and design findings for a backbone.
    Analyze {
        #[arg(long)]
        backbone: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid { .. } | Error::Parse { .. } | Error::Shape { .. } => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite { .. } => 4,
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_backbone(path: &Option<PathBuf>) -> Result<backbone::BackboneSpec, Error> {
    match path {
        Some(p) => backbone::parse_backbone_spec(&read_text(p)?),
        None => backbone::parse_backbone_spec(REFERENCE_BACKBONE),
    }
}

/// Sequence subdirectories of a dataset directory, sorted by name.
fn sequence_dirs(data: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)
        .map_err(|e| Error::io(data.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(
            "dataset",
            format!("no sequence directories under {}", data.display()),
        ));
    }
    Ok(dirs)
}

fn cmd_gen(
    config: &Path,
    out: &Path,
    count: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let pairs = parse_key_value_lines(&read_text(config)?)?;
    let mut sequences = 1usize;
    let mut cfg_pairs = Vec::new();
    for (k, v) in pairs {
        if k == "sequences" {
            sequences = v.parse().map_err(|_| {
                Error::invalid("gen config", format!("key `sequences` needs an integer, got `{v}`"))
            })?;
        } else {
            cfg_pairs.push((k, v));
        }
    }
    let base_cfg = SequenceConfig::from_pairs(&cfg_pairs)?;
    let count = count.unwrap_or(sequences);
    if count == 0 {
        return Err(Error::invalid("gen config", "sequence count must be >= 1"));
    }
    let base_seed = seed.unwrap_or(base_cfg.seed);

    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    for i in 0..count {
        let cfg = SequenceConfig {
            seed: base_seed + i as u64,
            ..base_cfg.clone()
        };
        let seq = generate_sequence(&cfg)?;
        let dir = out.join(format!("seq_{i:06}"));
        write_sequence(&seq, &dir)?;
        write_text(&dir.join("config.txt"), &cfg.to_key_values())?;
        println!("seq_{i:06} seed={}", cfg.seed);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    backbone_path: &Option<PathBuf>,
    out: &Path,
    epochs: usize,
    pairs: usize,
    lr_start: f64,
    lr_end: f64,
    seed: u64,
) -> Result<(), Error> {
    let spec = load_backbone(backbone_path)?;
    let mut model = TrackModel::new(spec, seed)?;
    let dataset: Vec<AnnotatedSequence> = sequence_dirs(data)?
        .iter()
        .map(|d| read_sequence(d))
        .collect::<Result<_, _>>()?;
    let config = TrainConfig {
        epochs,
        pairs_per_epoch: pairs,
        lr_start,
        lr_end,
        seed,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &dataset, &config)?;
    model.save(out)?;
    write_text(&out.with_extension("loss.csv"), &loss_history_csv(&history))?;
    println!("final_loss={}", history.last().expect("epochs >= 1"));
    Ok(())
}

fn cmd_track(
    seq_dir: &Path,
    out: &Path,
    checkpoint: &Option<PathBuf>,
    backbone_path: &Option<PathBuf>,
    oracle: bool,
    gamma: f64,
) -> Result<(), Error> {
    let seq = read_sequence(seq_dir)?;
    let started = Instant::now();
    let boxes = if oracle {
        let geometry = score_geometry(&load_backbone(backbone_path)?)?;
        track_sequence_oracle(geometry, &seq, gamma)?
    } else {
        let ckpt = checkpoint.as_ref().ok_or_else(|| {
            Error::invalid("track arguments", "need --checkpoint unless --oracle is set")
        })?;
        let model = TrackModel::load(load_backbone(backbone_path)?, ckpt)?;
        track_sequence(&model, &seq, gamma)?
    };
    let elapsed = started.elapsed().as_secs_f64();

    let mut text = String::new();
    for (i, b) in boxes.iter().enumerate() {
        text.push_str(&format!("{} {} {} {} {}\n", i, b.cx, b.cy, b.w, b.h));
    }
    write_text(out, &text)?;
    println!("fps={:.1}", boxes.len() as f64 / elapsed.max(1e-9));
    Ok(())
}

fn read_result_log(path: &Path) -> Result<Vec<BBox>, Error> {
    let name = path.display().to_string();
    let mut boxes = Vec::new();
    for (idx, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::format(&name, format!("bad number on line {}", idx + 1)))?;
        if fields.len() != 5 {
            return Err(Error::format(
                &name,
                format!("line {} has {} fields, expected 5", idx + 1, fields.len()),
            ));
        }
        boxes.push(BBox::new(fields[1], fields[2], fields[3], fields[4])?);
    }
    if boxes.is_empty() {
        return Err(Error::invalid("result log", "no entries"));
    }
    Ok(boxes)
}

fn cmd_eval(log: &Path, seq_dir: &Path, out: &Option<PathBuf>) -> Result<(), Error> {
    let pred = read_result_log(log)?;
    let truth = siamtrack_core::synth::read_groundtruth(&seq_dir.join("groundtruth.txt"))?;
    let report = evaluate_ope(&pred, &truth)?;
    print!("{}", report.to_key_values());
    let prefix = out.clone().unwrap_or_else(|| log.to_path_buf());
    let prefix = prefix.display().to_string();
    write_text(Path::new(&format!("{prefix}.precision.csv")), &report.precision_csv())?;
    write_text(Path::new(&format!("{prefix}.success.csv")), &report.success_csv())?;
    Ok(())
}

fn cmd_analyze(backbone_path: &Path) -> Result<(), Error> {
    let spec = backbone::parse_backbone_spec(&read_text(backbone_path)?)?;
    let analysis = backbone::analyze(&spec);
    println!("total_stride={}", analysis.total_stride);
    println!("receptive_field={}", analysis.receptive_field);
    println!("rf_fraction={}", analysis.rf_fraction_of_exemplar);
    match score_geometry(&spec) {
        Ok(g) => {
            println!("exemplar_feature={}", g.exemplar_feat);
            println!("instance_feature={}", g.instance_feat);
            println!("score_map={}", g.map_size);
        }
        Err(e) => println!("score_map_error={e}"),
    }
    for finding in backbone::check_design_rules(&analysis, &spec) {
        println!("finding={finding}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen {
            config,
            out,
            count,
            seed,
        } => cmd_gen(config, out, *count, *seed),
        Command::Train {
            data,
            backbone,
            out,
            epochs,
            pairs,
            lr_start,
            lr_end,
            seed,
        } => cmd_train(data, backbone, out, *epochs, *pairs, *lr_start, *lr_end, *seed),
        Command::Track {
            seq,
            out,
            checkpoint,
            backbone,
            oracle,
            gamma,
        } => cmd_track(seq, out, checkpoint, backbone, *oracle, *gamma),
        Command::Eval { log, seq, out } => cmd_eval(log, seq, out),
        Command::Analyze { backbone } => cmd_analyze(backbone),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
