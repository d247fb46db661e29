//! `condret`: generate data, train LR/CR towers, build indexes, query them,
//! and run the offline comparison.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid config or argument,
//! 3 missing file, 4 malformed file, 5 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condret::condition::Condition;
use condret::config::{Arch, RunConfig};
use condret::dataset::{self, Topic};
use condret::eval::{self, Checkpoints, Method};
use condret::retrieval::{self, FilterMode, RetrievalQuery};
use condret::tower::{self, user_tower_forward};
use condret::{trainer, Error, Result};

#[derive(Parser)]
#[command(name = "condret", version, about = "Conditional two-tower retrieval", propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed (generator, training, graph, evaluation).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        users: Option<u32>,
        #[arg(long)]
        items: Option<u32>,
        #[arg(long)]
        topics: Option<u32>,
        #[arg(long)]
        events_per_user: Option<u32>,
    },
    /// Train an LR or CR model; also writes the loss curve.
    Train {
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f32>,
    },
    /// Materialize item embeddings and build the ANN graph.
    BuildIndex {
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieve items for one user and topic.
    Retrieve {
        #[arg(long, default_value = "cr")]
        arch: Arch,
        #[arg(long)]
        user: u32,
        /// Query condition; required by the filtered modes.
        #[arg(long)]
        topic: Option<Topic>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "none")]
        mode: FilterMode,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        ef: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Compare INDEX, LR and CR on the heldout split.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint_lr: Option<PathBuf>,
        #[arg(long)]
        checkpoint_cr: Option<PathBuf>,
        /// Comma-separated subset of index,lr,cr.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated subset of none,streaming,postfilter.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<FilterMode>>,
        #[arg(long)]
        max_queries: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\tkind={}\tmessage={message}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "invalid-config" | "invalid-argument" | "dimension" => 2,
        "missing-file" => 3,
        "parse" | "format" | "referential-integrity" => 4,
        "numerical" => 5,
        _ => 1,
    }
}

fn load_config(global: &Global) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e)),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    match cli.command {
        Command::GenData { out, users, items, topics, events_per_user } => {
            set(&mut config.paths.dataset, out);
            set(&mut config.gen.num_users, users);
            set(&mut config.gen.num_items, items);
            set(&mut config.gen.num_topics, topics);
            set(&mut config.gen.events_per_user, events_per_user);
            let data = dataset::generate_synthetic(&config.gen)?;
            ensure_parent(&config.paths.dataset)?;
            dataset::save_dataset(&data, &config.paths.dataset)?;
            println!(
                "wrote {} ({} users, {} items, {} events)",
                config.paths.dataset.display(),
                data.users.len(),
                data.items.len(),
                data.engagements.len()
            );
        }
        Command::Train { arch, dataset: data_path, out, epochs, batch_size, learning_rate } => {
            set(&mut config.paths.dataset, data_path);
            if let Some(out) = out {
                *match arch {
                    Arch::Lr => &mut config.paths.checkpoint_lr,
                    Arch::Cr => &mut config.paths.checkpoint_cr,
                } = out;
            }
            set(&mut config.train.epochs, epochs);
            set(&mut config.train.batch_size, batch_size);
            set(&mut config.train.learning_rate, learning_rate);
            let data = dataset::load_dataset(&config.paths.dataset)?;
            let report = trainer::train(&data, &config.tower_for(arch), &config.train)?;
            let path = config.paths.checkpoint_path(arch);
            ensure_parent(path)?;
            tower::save_checkpoint(&report.checkpoint, path)?;
            let curve = config.paths.loss_curve(arch);
            condret::write_atomic(&curve, report.loss_curve_tsv().as_bytes())?;
            println!(
                "wrote {} and {} (final loss {:.4}, {:.1}s)",
                path.display(),
                curve.display(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.wall_clock.as_secs_f64()
            );
        }
        Command::BuildIndex { arch, dataset: data_path, checkpoint, out } => {
            set(&mut config.paths.dataset, data_path);
            let ck_path = checkpoint.unwrap_or_else(|| config.paths.checkpoint_path(arch).to_path_buf());
            let out = out.unwrap_or_else(|| config.paths.index_path(arch).to_path_buf());
            let data = dataset::load_dataset(&config.paths.dataset)?;
            let ck = tower::load_checkpoint(&ck_path)?;
            let mut index = retrieval::build_index(&ck, &data)?;
            index.build_ann(&config.ann)?;
            ensure_parent(&out)?;
            retrieval::save_index(&index, &out)?;
            println!("wrote {} ({} items, dim {})", out.display(), index.len(), index.dim);
        }
        Command::Retrieve { arch, user, topic, k, mode, budget, batch_size, ef, checkpoint, index } => {
            set(&mut config.eval.serve.budget, budget);
            set(&mut config.eval.serve.stream_batch_size, batch_size);
            set(&mut config.eval.serve.ef_search, ef);
            let ck = tower::load_checkpoint(&checkpoint.unwrap_or_else(|| config.paths.checkpoint_path(arch).to_path_buf()))?;
            let index = retrieval::load_index(&index.unwrap_or_else(|| config.paths.index_path(arch).to_path_buf()))?;
            if index.dim != ck.config.output_dim || index.len() != ck.vocab().items {
                return Err(Error::config("index was not built from this checkpoint"));
            }
            if index.graph.is_none() && mode != FilterMode::Postfilter {
                return Err(Error::config("index has no ANN graph"));
            }
            let condition = topic.map_or(Condition::Null, Condition::Topic);
            let (embedding, _) = user_tower_forward(user as usize, condition, &ck.params, &ck.config)?;
            let query = RetrievalQuery { user_embedding: embedding, condition: topic, k, filter_mode: mode };
            let result = retrieval::retrieve(&index, &query, &config.eval.serve)?;
            println!("rank\titem\tscore\tmatched");
            for (rank, hit) in result.hits.iter().enumerate() {
                let matched = if topic.is_some() { hit.matched.to_string() } else { "-".into() };
                println!("{}\t{}\t{:.6}\t{matched}", rank + 1, hit.item, hit.score);
            }
            println!("# scanned_count={} truncated={}", result.scanned_count, result.truncated);
        }
        Command::Eval { dataset: data_path, checkpoint_lr, checkpoint_cr, methods, k, modes, max_queries, out } => {
            set(&mut config.paths.dataset, data_path);
            set(&mut config.paths.checkpoint_lr, checkpoint_lr);
            set(&mut config.paths.checkpoint_cr, checkpoint_cr);
            set(&mut config.paths.report, out);
            set(&mut config.eval.methods, methods);
            set(&mut config.eval.k, k);
            set(&mut config.eval.modes, modes);
            set(&mut config.eval.max_queries, max_queries);
            let data = dataset::load_dataset(&config.paths.dataset)?;
            let wants = |m| config.eval.methods.contains(&m);
            let lr = wants(Method::Lr).then(|| tower::load_checkpoint(&config.paths.checkpoint_lr)).transpose()?;
            let cr = wants(Method::Cr).then(|| tower::load_checkpoint(&config.paths.checkpoint_cr)).transpose()?;
            let report = eval::run_experiment(
                &data,
                Checkpoints { lr: lr.as_ref(), cr: cr.as_ref() },
                &config.ann,
                &config.eval,
            )?;
            ensure_parent(&config.paths.report)?;
            condret::write_atomic(&config.paths.report, report.to_tsv().as_bytes())?;
            print!("{}", report.to_aligned());
        }
    }
    Ok(())
}
