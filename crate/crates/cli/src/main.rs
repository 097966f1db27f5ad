use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use segadapt::data::{load_dataset, read_image, write_color_png, write_dataset, write_label_png, ToySplits};
use segadapt::engine::{evaluate, predict_labels, Checkpoint, Mode, RunLog, TrainConfig, TrainData, Trainer};
use segadapt::model::SegModel;
use segadapt::sampling::{compute_class_stats, temperature_report, RareClassSampler};

#[derive(Parser)]
#[command(name = "segadapt", version, about = "Domain-adaptive semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint's student on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Use sliding-window inference with the detail branch. Defaults to
        /// on for checkpoints trained with it.
        #[arg(long)]
        slide: bool,
    },
    /// Predict one image; writes the class-index PNG and a colored copy.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Dataset directory whose meta.json supplies the palette.
        #[arg(long)]
        palette_from: Option<PathBuf>,
    },
    /// Compute the class-frequency cache used by rare-class sampling.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        temperature: f64,
    },
    /// Write the procedural source, target and evaluation sets plus a config.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> segadapt::Result<()> {
    match cli.command {
        Command::Train {
            config,
            mode,
            seed,
            resume,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let data = TrainData::load(&cfg)?;
            let mut log = cfg.output_dir.as_ref().map(RunLog::create).transpose()?;
            let mut trainer = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    if ckpt.config.model_config() != cfg.model_config() {
                        eprintln!("warning: resuming with the checkpoint's own config");
                    }
                    Trainer::resume(ckpt, data)?
                }
                None => Trainer::new(cfg.clone(), data)?,
            };
            let total = trainer.config().total_iters;
            let chunk = match trainer.config().eval_interval {
                0 => (total / 20).max(1),
                n => n,
            };
            while trainer.iteration() < total {
                let next = (trainer.iteration() + chunk).min(total);
                trainer.run(next, log.as_mut())?;
                let l = trainer.losses.last().expect("at least one step ran");
                let miou = trainer.metrics.last().filter(|r| r.step == next).map(|r| r.miou * 100.0);
                eprintln!(
                    "iter {next}/{total}  lr {:.2e}  source {:.4}  target {:.4}  fd {:.4}{}",
                    l.lr,
                    l.source,
                    l.target,
                    l.fd,
                    miou.map_or(String::new(), |m| format!("  mIoU {m:.2}"))
                );
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            slide,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = SegModel::new(ckpt.config.model_config())?;
            let data = load_dataset(&dataset)?;
            let hrda = ckpt.config.hrda_config();
            let report = evaluate(&model, &ckpt.bundle.student, &data, &hrda, slide || hrda.enabled, ckpt.iteration())?;
            for (name, iou) in data.meta.class_names.iter().zip(&report.iou) {
                let v = iou.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
                eprintln!("{name:>14}  {v}");
            }
            eprintln!("{:>14}  {:.2}", "mIoU", report.miou * 100.0);
            println!("{}", serde_json::to_string(&report).expect("plain record"));
            Ok(())
        }
        Command::Infer {
            checkpoint,
            input,
            output,
            palette_from,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = SegModel::new(ckpt.config.model_config())?;
            let image = read_image(&input)?;
            let hrda = ckpt.config.hrda_config();
            let labels = predict_labels(&model, &ckpt.bundle.student, &image, &hrda, hrda.enabled)?;
            write_label_png(&labels, &output)?;
            let palette = match palette_from {
                Some(dir) => load_dataset(dir)?.meta.palette,
                None => segadapt::data::toy::palette(model.num_classes()),
            };
            let stem = output.file_stem().map_or("prediction".into(), |s| s.to_string_lossy().into_owned());
            write_color_png(&labels, &palette, &output.with_file_name(format!("{stem}_color.png")))
        }
        Command::Stats {
            dataset,
            out,
            temperature,
        } => {
            let data = load_dataset(&dataset)?;
            let stats = compute_class_stats(&data)?;
            stats.save(&out)?;
            let sampler = RareClassSampler::new(
                &stats,
                &segadapt::sampling::RcsConfig {
                    temperature,
                    enabled: true,
                },
            )?;
            for (k, p) in sampler.class_probabilities() {
                eprintln!("{:>14}  freq {:.5}  P {:.5}", data.meta.class_names[k], stats.omega[k], p);
            }
            for row in temperature_report(&stats, &[0.01, 0.1, 1.0])? {
                eprintln!(
                    "T {:<5}  weakest {} with {:.1} expected pixels per image",
                    row.temperature, data.meta.class_names[row.weakest_class], row.weakest_pixels
                );
            }
            Ok(())
        }
        Command::Toy { out, seed } => {
            let splits = ToySplits::generate(seed)?;
            for (name, set) in [("source", &splits.source), ("target", &splits.target), ("eval", &splits.target_eval)] {
                write_dataset(out.join(name), set)?;
            }
            let cfg = TrainConfig {
                source_dir: Some(out.join("source")),
                target_dir: Some(out.join("target")),
                eval_dir: Some(out.join("eval")),
                output_dir: Some(out.join("run")),
                ..TrainConfig::desk()
            };
            let path = out.join("train.toml");
            std::fs::write(&path, cfg.to_toml()?).map_err(|source| segadapt::Error::Io { path, source })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
