use std::path::PathBuf;
use std::process::ExitCode;

use auscult_cli::commands::{cmd_align, cmd_embed, cmd_gen_data, cmd_probe, cmd_split, cmd_zeroshot, EmbedSpace};
use auscult_cli::config::{Config, IndexSource, InitKind, TaskKind};
use auscult_cli::CliError;
use auscult_core::alignment::{CkaMode, LossKind};
use auscult_core::retrieval::Aggregation;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "auscult", version, about = "Audio-report alignment pipeline")]
struct Cli {
    /// TOML config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set align.train.lr=1e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a paired audio-report corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Subject-disjoint train/test manifests.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the encoder and projection heads.
    Align(AlignArgs),
    /// Export frozen embeddings.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "shared-512")]
        space: EmbedSpace,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe evaluation of exported embeddings.
    Probe {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Retrieval-based zero-shot classification.
    Zeroshot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        test_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        class_names: Option<Vec<String>>,
        #[arg(long, value_enum)]
        aggregation: Option<Agg>,
        #[arg(long, value_enum)]
        index_source: Option<Source>,
        #[arg(long)]
        shuffle_reports: bool,
    },
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop the reconstruction loss.
    #[arg(long)]
    no_ssm: bool,
    /// Drop the alignment loss.
    #[arg(long)]
    no_align: bool,
    #[arg(long, value_enum)]
    align_loss: Option<Loss>,
    #[arg(long, value_enum)]
    cka_mode: Option<Gram>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, value_enum)]
    init: Option<Init>,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// 1-based encoder blocks, comma-separated.
    #[arg(long, value_delimiter = ',')]
    align_layers: Option<Vec<usize>>,
    /// Keep entries whose dataset tag or modality matches.
    #[arg(long)]
    corpus_filter: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Cka,
    Mse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gram {
    Sample,
    Feature,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Random,
    Checkpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    MeanEmbedding,
    MajorityVote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Reports,
    TrainAudio,
}

fn apply_align(cfg: &mut Config, a: &AlignArgs) {
    let t = &mut cfg.align.train;
    if a.no_ssm {
        t.lambda_ssm = 0.0;
    }
    if a.no_align {
        t.lambda_align = 0.0;
    }
    if let Some(l) = a.align_loss {
        t.loss_kind = match l {
            Loss::Cka => LossKind::Cka,
            Loss::Mse => LossKind::Mse,
        };
    }
    if let Some(g) = a.cka_mode {
        t.cka_mode = match g {
            Gram::Sample => CkaMode::Sample,
            Gram::Feature => CkaMode::Feature,
        };
    }
    if a.no_augment {
        t.augment = false;
    }
    if let Some(layers) = &a.align_layers {
        t.align_layers = layers.clone();
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(i) = a.init {
        cfg.align.init = match i {
            Init::Random => InitKind::Random,
            Init::Checkpoint => InitKind::Checkpoint,
        };
    }
    if let Some(p) = &a.init_checkpoint {
        cfg.align.init_checkpoint = Some(p.clone());
        if a.init.is_none() {
            cfg.align.init = InitKind::Checkpoint;
        }
    }
    if let Some(f) = &a.corpus_filter {
        cfg.align.corpus_filter = Some(f.clone());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut cfg = Config::resolve(cli.config.as_deref(), &cli.sets)?;
    match cli.command {
        Command::GenData {
            out,
            seed,
            clips,
            subjects,
            classes,
        } => {
            let d = &mut cfg.data;
            d.seed = seed.unwrap_or(d.seed);
            d.clips = clips.unwrap_or(d.clips);
            d.subjects = subjects.unwrap_or(d.subjects);
            d.classes = classes.unwrap_or(d.classes);
            let s = cmd_gen_data(&cfg, &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Split {
            manifest,
            out,
            test_fraction,
            seed,
        } => {
            let s = cmd_split(&manifest, test_fraction, seed, &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Align(a) => {
            apply_align(&mut cfg, &a);
            let s = cmd_align(&cfg, &a.manifest, &a.out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Embed {
            checkpoint,
            manifest,
            space,
            out,
        } => {
            let n = cmd_embed(&cfg, &checkpoint, &manifest, space, &out)?;
            println!("{{\"embeddings\":{n}}}");
        }
        Command::Probe {
            embeddings,
            manifest,
            out,
            task,
            kind,
            seeds,
        } => {
            let p = &mut cfg.probe;
            if let Some(t) = task {
                p.task = t;
            }
            if let Some(k) = kind {
                p.kind = match k {
                    Kind::Classification => TaskKind::Classification,
                    Kind::Regression => TaskKind::Regression,
                };
            }
            if let Some(s) = seeds {
                p.seeds = s;
            }
            let s = cmd_probe(&cfg, &embeddings, &manifest, &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Zeroshot {
            checkpoint,
            train_manifest,
            test_manifest,
            out,
            k,
            class_names,
            aggregation,
            index_source,
            shuffle_reports,
        } => {
            let z = &mut cfg.zeroshot;
            z.k = k.unwrap_or(z.k);
            if let Some(c) = class_names {
                z.class_names = c;
            }
            if let Some(a) = aggregation {
                z.aggregation = match a {
                    Agg::MeanEmbedding => Aggregation::MeanEmbedding,
                    Agg::MajorityVote => Aggregation::MajorityVote,
                };
            }
            if let Some(s) = index_source {
                z.index_source = match s {
                    Source::Reports => IndexSource::Reports,
                    Source::TrainAudio => IndexSource::TrainAudio,
                };
            }
            z.shuffle_reports |= shuffle_reports;
            let s = cmd_zeroshot(&cfg, &checkpoint, &train_manifest, &test_manifest, &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
