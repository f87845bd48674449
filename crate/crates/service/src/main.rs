use std::fs::File;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use sepa_core::evaluation::{
    generate_cohort, group_kfold_cv, parse_rankings_csv, rolling_origin_cv, summarize_rankings, CohortConfig,
    GroupKFoldConfig, RollingOriginConfig,
};
use sepa_core::featurization::FeatureSelector;
use sepa_core::ingestion::{parse_export, write_export};
use sepa_core::modeling::{Dataset, ForestLearner, GbtLearner, Learner, ModelTier, PhmLearner, TrainConfig};
use sepa_core::{Task, UserId};
use sepa_retrieval::search::detect_mode;
use sepa_retrieval::{ContextualizedQuery, Retriever, WhitelistHandle};

use sepa_service::app::{predictions_for, App};
use sepa_service::config::{FixtureBundle, ServiceConfig};
use sepa_service::jobs::{drain, train_model, JobContext, TrainRequest, WorkerConfig};
use sepa_service::{api, Store};

#[derive(Parser)]
#[command(name = "sepa", version, about = "Wearable-driven coaching: ingestion, models, evaluation and chat")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    #[value(name = "g")]
    Generalized,
    #[value(name = "p")]
    Personalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Rolling,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Phm,
    #[value(name = "n-phm")]
    NPhm,
    Gbt,
    Forest,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an export archive, store its daily features and discard the raw bytes.
    Ingest {
        #[arg(long)]
        user: String,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, default_value = "sepa.db")]
        db: PathBuf,
    },
    /// Train one tier's model for one task on every stored labeled day.
    Train {
        #[arg(long)]
        task: Task,
        #[arg(long, value_enum)]
        tier: TierArg,
        #[arg(long, default_value = "sepa.db")]
        db: PathBuf,
        /// Train on the synthetic reference cohort instead of stored rows.
        #[arg(long)]
        synthetic: bool,
    },
    /// Tier-gated risk scores for one stored user-day.
    Predict {
        #[arg(long)]
        user: String,
        /// Defaults to the latest stored day.
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long, default_value = "sepa.db")]
        db: PathBuf,
    },
    /// Cross-validate a model on the synthetic reference cohort.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        task: Task,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Per-point CSV; the summary goes next to it as `<stem>.summary.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Agreement and significance statistics for expert rankings.
    Stats {
        #[arg(long)]
        rankings: PathBuf,
    },
    /// Print the evidence pack for one question, offline from a fixture bundle.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Interactive chat on stdin.
    Chat {
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "sepa.toml")]
        config: PathBuf,
        /// Use fixture search and the extractive responder.
        #[arg(long)]
        offline: bool,
    },
    /// Run the REST API and job workers.
    Serve {
        #[arg(long, default_value = "sepa.toml")]
        config: PathBuf,
    },
    /// Write synthetic export archives, one `<user>.zip` per user.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        users: usize,
        #[arg(long, default_value_t = 30)]
        days: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { user, archive, db } => ingest(&UserId::new(user), &archive, &db),
        Command::Train { task, tier, db, synthetic } => train(task, tier, &db, synthetic),
        Command::Predict { user, date, db } => predict(&UserId::new(user), date, &db),
        Command::Eval { protocol, task, model, out, runs } => eval(protocol, task, model, &out, runs),
        Command::Stats { rankings } => stats(&rankings),
        Command::Retrieve { query, fixtures } => runtime()?.block_on(retrieve(&query, &fixtures)),
        Command::Chat { user, config, offline } => runtime()?.block_on(chat(&UserId::new(user), &config, offline)),
        Command::Serve { config } => runtime()?.block_on(serve(&config)),
        Command::Synth { out, users, days, seed } => synth(&out, users, days, seed),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn ingest(user: &UserId, archive: &Path, db: &Path) -> Result<()> {
    let bytes = std::fs::read(archive).with_context(|| format!("reading {}", archive.display()))?;
    let store = Arc::new(Store::open(db)?);
    if store.user(user)?.is_none() {
        let parsed = parse_export(&bytes, user)?;
        let profile = parsed.profile.ok_or_else(|| anyhow!("{user} is not registered and the archive has no profile"))?;
        store.put_user(&profile)?;
    }
    let job = store.enqueue_upload(user, bytes, Utc::now())?;
    let registry = Arc::new(parking_lot::RwLock::new(store.load_registry()?));
    let ctx = JobContext::new(store.clone(), registry);
    drain(&ctx, "cli", chrono::Duration::minutes(10))?;
    let job = store.job(&job.id)?.ok_or_else(|| anyhow!("job vanished"))?;
    println!("{} {}: {}", job.id, job.status.as_str(), job.note);
    if job.status != sepa_service::JobStatus::Done {
        bail!("ingestion failed");
    }
    Ok(())
}

fn train(task: Task, tier: TierArg, db: &Path, synthetic: bool) -> Result<()> {
    let store = Store::open(db)?;
    let rows = if synthetic { generate_cohort(&CohortConfig::reference()).rows } else { store.all_rows()? };
    let tier = match tier {
        TierArg::Generalized => ModelTier::GeneralizedColdStart,
        TierArg::Personalized => ModelTier::Personalized,
    };
    let started = Instant::now();
    let model = train_model(&rows, TrainRequest { task, tier }, Utc::now()).map_err(|e| anyhow!(e))?;
    let version = store.save_model(&model)?;
    println!(
        "{} {} model v{version}: {} features, {} rows, {:.1}s",
        tier,
        task.as_str(),
        model.meta.feature_names.len(),
        rows.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn predict(user: &UserId, date: Option<NaiveDate>, db: &Path) -> Result<()> {
    let store = Store::open(db)?;
    let registry = store.load_registry()?;
    let set = predictions_for(&store, &registry, user, date)?;
    println!("{}", serde_json::to_string_pretty(&set)?);
    Ok(())
}

fn eval(protocol: ProtocolArg, task: Task, model: ModelArg, out: &Path, runs: usize) -> Result<()> {
    let cohort = generate_cohort(&CohortConfig::reference());
    let m = cohort.matrix();
    let selector = FeatureSelector::default().fit(&m, task)?;
    let data = Dataset::from_matrix(&selector.project(&m)?, task);
    let cfg = TrainConfig::for_task(task);
    let learner: Box<dyn Learner> = match model {
        ModelArg::Phm => Box::new(PhmLearner::new(cfg, true).with_warm_start(20)),
        ModelArg::NPhm => Box::new(PhmLearner::new(cfg, false).with_warm_start(20)),
        ModelArg::Gbt => Box::new(GbtLearner::default()),
        ModelArg::Forest => Box::new(ForestLearner::default()),
    };
    let started = Instant::now();
    let result = match protocol {
        ProtocolArg::Rolling => rolling_origin_cv(
            &data,
            learner.as_ref(),
            &RollingOriginConfig { runs, min_train_days: 10, master_seed: 0 },
        )?,
        ProtocolArg::Group => group_kfold_cv(&data, learner.as_ref(), &GroupKFoldConfig { k: 5, seed: 0 })?,
    };
    let stem = out.file_stem().ok_or_else(|| anyhow!("--out needs a file name"))?.to_string_lossy();
    let summary = out.with_file_name(format!("{stem}.summary.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    result.write_points_csv(File::create(out)?)?;
    result.write_summary_csv(File::create(&summary)?)?;
    let r2 = match protocol {
        ProtocolArg::Rolling => result.final_r2(),
        ProtocolArg::Group => result.pooled_r2,
    };
    println!(
        "{} on {}: R² {} ({} features, {:.1}s) -> {}",
        learner.name(),
        task.display_name(),
        r2.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        selector.kept_features.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    println!("summary -> {}", summary.display());
    Ok(())
}

fn stats(path: &Path) -> Result<()> {
    let records = parse_rankings_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    println!("{}", summarize_rankings(&records)?);
    Ok(())
}

async fn retrieve(query: &str, fixtures: &Path) -> Result<()> {
    let bundle = FixtureBundle::load(fixtures)?;
    let whitelist = bundle.whitelist.ok_or_else(|| anyhow!("{} has no whitelist.txt", fixtures.display()))?;
    let retriever = Retriever::new(Arc::new(bundle.provider), Arc::new(bundle.fetcher), WhitelistHandle::new(whitelist));
    let (pack, report) = retriever.retrieve(&ContextualizedQuery::anonymous(query)?, detect_mode(query)).await?;
    println!("{}", serde_json::to_string_pretty(&pack)?);
    eprintln!(
        "{} results, {} off whitelist, {} fetch failures, {} chunks",
        report.results,
        report.dropped_off_whitelist,
        report.fetch_failures.len(),
        report.chunks
    );
    Ok(())
}

fn print_response(r: &sepa_retrieval::CoachResponse) {
    println!("{}", r.text);
    if !r.sources.is_empty() {
        println!();
        for s in &r.sources {
            println!("[{}] {} {}", s.n, s.title, s.url);
        }
    }
    for n in &r.notices {
        println!("note: {n}");
    }
}

async fn chat(user: &UserId, config: &Path, offline: bool) -> Result<()> {
    let config = if config.exists() { ServiceConfig::load(config)? } else { ServiceConfig::default() };
    let app = App::from_config(&config, offline)?;
    if app.store.user(user)?.is_none() {
        bail!("unknown user {user}; ingest an archive first");
    }
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    write!(out, "> ")?;
    out.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let outcome = app.chat(user, &line).await?;
            print_response(&outcome.response);
            println!("({:.0} ms)", outcome.timing.elapsed_ms);
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    Ok(())
}

fn synth(out: &Path, users: usize, days: usize, seed: u64) -> Result<()> {
    let cohort = generate_cohort(&CohortConfig { users, days, seed, ..CohortConfig::reference() });
    std::fs::create_dir_all(out)?;
    for (i, profile) in cohort.profiles.iter().enumerate() {
        let path = out.join(format!("{}.zip", profile.user_id));
        std::fs::write(&path, write_export(&cohort.records[i], &cohort.reports[i], Some(profile)))?;
        println!("{}", path.display());
    }
    Ok(())
}

async fn serve(config_path: &Path) -> Result<()> {
    let config = ServiceConfig::load(config_path)?;
    let app = Arc::new(App::from_config(&config, false)?);
    let pool = app.spawn_workers(WorkerConfig { workers: config.workers, ..WorkerConfig::default() });
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, api::router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    pool.shutdown();
    Ok(())
}
