//! The `skelsign` command line. [`run`] returns the process exit code:
//! 0 on success, 1 on a usage error, 2 on a data or model error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::infer::{run_stream, Classifier};
use crate::landmark::{
    group_clips, parse_landmark_csv, write_landmark_csv, ClassVocabulary, ClipBuilder, ClipGroup, ClipTensor,
    LandmarkLayout, Sampler,
};
use crate::segment::SegmenterConfig;
use crate::training::{cross_validate, evaluate, stratified_split, train_loop, MeanMetrics, MetricsReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "skelsign", version, about = "Skeletal-landmark sign classifier: train, evaluate and stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge and validate landmark CSV files into one.
    Preprocess {
        /// Input landmark CSV; repeat to merge several files.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Merged output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a stratified split and save a checkpoint.
    Train {
        #[command(flatten)]
        common: TrainArgs,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epoch log (one JSON record per line); defaults to `<checkpoint>.epochs.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Hold out a stratified test set, then run K-fold cross-validation on the rest.
    Crossval {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        folds: Option<usize>,
        /// Full per-fold report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled landmark CSV.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Write the confusion matrix as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Classify every clip in a landmark CSV.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long)]
        sampler: Option<Sampler>,
    },
    /// Segment NDJSON frames from stdin and print a prediction per clip.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Segmentation defaults; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        seg: SegmentArgs,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Flat key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampler: Option<Sampler>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    start_threshold: Option<f64>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long)]
    start_hold: Option<usize>,
    #[arg(long)]
    stop_hold: Option<usize>,
    #[arg(long)]
    max_clip_frames: Option<usize>,
}

impl SegmentArgs {
    fn apply(&self, mut cfg: SegmenterConfig) -> SegmenterConfig {
        if let Some(v) = self.start_threshold {
            cfg.start_threshold = v;
        }
        if let Some(v) = self.stop_threshold {
            cfg.stop_threshold = v;
        }
        if let Some(v) = self.start_hold {
            cfg.start_hold = v;
        }
        if let Some(v) = self.stop_hold {
            cfg.stop_hold = v;
        }
        if let Some(v) = self.max_clip_frames {
            cfg.max_clip_frames = v;
        }
        cfg
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I, stdin: impl BufRead, mut stdout: impl Write + Send, mut stderr: impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdin, &mut stdout, &mut stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

struct Dataset {
    layout: LandmarkLayout,
    groups: Vec<ClipGroup>,
}

fn read_dataset(path: &Path, expected: Option<&LandmarkLayout>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let layout = match expected {
        Some(l) => l.clone(),
        None => LandmarkLayout::from_csv_header(text.lines().next().unwrap_or(""))?,
    };
    let groups = group_clips(parse_landmark_csv(&text, &layout)?)?;
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { layout, groups })
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

/// Everything `train` and `crossval` share: config, vocabulary and built clips.
struct Prepared {
    run: RunConfig,
    layout: LandmarkLayout,
    vocabulary: ClassVocabulary,
    clips: Vec<ClipTensor>,
    labels: Vec<usize>,
}

fn prepare(args: &TrainArgs) -> Result<Prepared> {
    let mut run = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    if let Some(s) = args.sampler {
        run.sampler = s;
    }
    if let Some(f) = args.test_fraction {
        run.train.test_fraction = f;
    }
    run.train.validate()?;
    let data = read_dataset(&args.data, None)?;
    let vocabulary = ClassVocabulary::from_labels(data.groups.iter().map(|g| g.label.as_str()));
    run.model.input_dim = data.layout.feature_count();
    run.model.num_classes = vocabulary.len();
    run.model.validate()?;
    let mut builder = ClipBuilder::new(data.layout.clone(), run.sampler, run.model.max_seq_len - 1);
    builder.recenter = run.recenter;
    let clips = builder.build_groups(&data.groups, &vocabulary)?;
    let labels = clips.iter().map(|c| c.label_index().expect("built with labels")).collect();
    Ok(Prepared { run, layout: data.layout, vocabulary, clips, labels })
}

fn check_k(k: usize, ckpt: &Checkpoint) -> Result<()> {
    if k == 0 || k > ckpt.config.num_classes {
        return Err(Error::BadK { k, classes: ckpt.config.num_classes });
    }
    Ok(())
}

fn pick(clips: &[ClipTensor], idx: &[usize]) -> Vec<ClipTensor> {
    idx.iter().map(|&i| clips[i].clone()).collect()
}

fn metrics_line(label: &str, m: &MeanMetrics) -> String {
    format!(
        "{label}: accuracy {:.4} recall_micro {:.4} recall_macro {:.4} f1_macro {:.4} f1_weighted {:.4}",
        m.accuracy, m.recall_micro, m.recall_macro, m.f1_macro, m.f1_weighted
    )
}

fn report_line(label: &str, r: &MetricsReport) -> String {
    metrics_line(label, &MeanMetrics::of([r]).expect("one report"))
}

fn dispatch(command: Command, stdin: impl BufRead, stdout: &mut (impl Write + Send), stderr: &mut impl Write) -> Result<()> {
    match command {
        Command::Preprocess { data, out } => {
            let mut layout: Option<LandmarkLayout> = None;
            let mut records = Vec::new();
            for path in &data {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let l = match &layout {
                    Some(l) => l.clone(),
                    None => LandmarkLayout::from_csv_header(text.lines().next().unwrap_or(""))?,
                };
                records.extend(parse_landmark_csv(&text, &l)?);
                layout = Some(l);
            }
            let layout = layout.expect("clap requires at least one --data");
            let groups = group_clips(records)?;
            if groups.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let vocabulary = ClassVocabulary::from_labels(groups.iter().map(|g| g.label.as_str()));
            let merged: Vec<_> = groups.into_iter().flat_map(|g| g.frames).collect();
            let frames = merged.len();
            let clips = merged.iter().map(|r| &r.video_id).collect::<std::collections::HashSet<_>>().len();
            std::fs::write(&out, write_landmark_csv(&merged, &layout)).map_err(|e| Error::io(&out, e))?;
            writeln!(stdout, "clips {clips} frames {frames} classes {}", vocabulary.len()).map_err(out_err)
        }
        Command::Train { common, checkpoint, log } => {
            let p = prepare(&common)?;
            let (train_idx, val_idx) = stratified_split(&p.labels, p.run.train.test_fraction, p.run.train.seed)?;
            let (train, val) = (pick(&p.clips, &train_idx), pick(&p.clips, &val_idx));
            let log_path = log.unwrap_or_else(|| {
                let mut s = checkpoint.clone().into_os_string();
                s.push(".epochs.jsonl");
                PathBuf::from(s)
            });
            let mut log_text = String::new();
            let outcome = train_loop(&train, &val, &p.run.model, &p.run.train, |r| {
                let line = serde_json::to_string(r).expect("plain record");
                let _ = writeln!(stderr, "{line}");
                log_text.push_str(&line);
                log_text.push('\n');
            })?;
            std::fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;
            let report = evaluate(&outcome.params, &p.run.model, &val)?;
            let mut metrics = BTreeMap::from([
                ("val_accuracy".to_owned(), report.accuracy),
                ("val_f1_macro".to_owned(), report.f1_macro),
            ]);
            if let Some(e) = outcome.best_epoch {
                metrics.insert("best_epoch".to_owned(), e as f64);
            }
            let ckpt = Checkpoint {
                config: p.run.model.clone(),
                vocabulary: p.vocabulary,
                layout: p.layout,
                sampler: p.run.sampler,
                recenter: p.run.recenter,
                seed: p.run.train.seed,
                metrics,
                params: outcome.params,
            };
            save_checkpoint(&ckpt, &checkpoint)?;
            writeln!(stdout, "train {} validation {} epochs {}", train.len(), val.len(), outcome.log.len())
                .and_then(|_| writeln!(stdout, "{}", report_line("validation", &report)))
                .map_err(out_err)
        }
        Command::Crossval { common, folds, out } => {
            let mut p = prepare(&common)?;
            if let Some(k) = folds {
                p.run.train.k_folds = k;
            }
            p.run.train.validate()?;
            let (dev_idx, test_idx) = stratified_split(&p.labels, p.run.train.test_fraction, p.run.train.seed)?;
            let (dev, test) = (pick(&p.clips, &dev_idx), pick(&p.clips, &test_idx));
            let report = cross_validate(&dev, Some(&test), &p.run.model, &p.run.train, |fold, r| {
                let _ = writeln!(stderr, "fold {fold} {}", serde_json::to_string(r).expect("plain record"));
            })?;
            for f in &report.folds {
                writeln!(stdout, "{}", report_line(&format!("fold {} validation", f.fold), &f.validation))
                    .map_err(out_err)?;
                if let Some(t) = &f.test {
                    writeln!(stdout, "{}", report_line(&format!("fold {} test", f.fold), t)).map_err(out_err)?;
                }
            }
            writeln!(stdout, "{}", metrics_line("mean validation", &report.validation_mean)).map_err(out_err)?;
            if let Some(t) = &report.test_mean {
                writeln!(stdout, "{}", metrics_line("mean test", t)).map_err(out_err)?;
            }
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&report)?;
                std::fs::write(&out, json).map_err(|e| Error::io(&out, e))?;
            }
            Ok(())
        }
        Command::Eval { data, checkpoint, sampler, confusion } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let data = read_dataset(&data, Some(&ckpt.layout))?;
            let mut builder = ClipBuilder::new(
                ckpt.layout.clone(),
                sampler.unwrap_or(ckpt.sampler),
                ckpt.config.max_seq_len - 1,
            );
            builder.recenter = ckpt.recenter;
            let clips = builder.build_groups(&data.groups, &ckpt.vocabulary)?;
            let report = evaluate(&ckpt.params, &ckpt.config, &clips)?;
            writeln!(stdout, "samples {}", report.samples)
                .and_then(|_| writeln!(stdout, "accuracy {:.4}", report.accuracy))
                .and_then(|_| writeln!(stdout, "recall_micro {:.4}", report.recall_micro))
                .and_then(|_| writeln!(stdout, "recall_macro {:.4}", report.recall_macro))
                .and_then(|_| writeln!(stdout, "f1_macro {:.4}", report.f1_macro))
                .and_then(|_| writeln!(stdout, "f1_weighted {:.4}", report.f1_weighted))
                .map_err(out_err)?;
            if let Some(path) = confusion {
                std::fs::write(&path, report.confusion.to_csv(&ckpt.vocabulary)).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::Infer { data, checkpoint, top_k, sampler } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            check_k(top_k, &ckpt)?;
            let data = read_dataset(&data, Some(&ckpt.layout))?;
            let sampler = sampler.unwrap_or(ckpt.sampler);
            let classifier = Classifier::with_sampler(ckpt, sampler);
            for g in &data.groups {
                let frames: Vec<_> = g.frames.iter().map(|f| f.features.clone()).collect();
                for (rank, p) in classifier.classify(&frames, None, top_k)?.into_iter().enumerate() {
                    let record = serde_json::json!({
                        "video_id": g.video_id,
                        "rank": rank + 1,
                        "label": p.label,
                        "probability": p.probability,
                    });
                    writeln!(stdout, "{record}").map_err(out_err)?;
                }
            }
            Ok(())
        }
        Command::Stream { checkpoint, top_k, sampler, config, seg } => {
            let run = load_run_config(config.as_deref())?;
            let seg_cfg = seg.apply(run.segmenter);
            let ckpt = load_checkpoint(&checkpoint)?;
            check_k(top_k, &ckpt)?;
            let sampler = sampler.unwrap_or(ckpt.sampler);
            let classifier = Classifier::with_sampler(ckpt, sampler);
            let summary = run_stream(stdin, &mut *stdout, &classifier, seg_cfg, top_k)?;
            writeln!(stderr, "{}", serde_json::to_string(&summary)?).map_err(|e| Error::io("<stderr>", e))
        }
    }
}
