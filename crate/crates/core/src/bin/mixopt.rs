use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use mixopt::campaign::{ingest_path, Campaign, InferredConfig, Scenario, Store};
use mixopt::objectives::GwpTable;
use mixopt::service::{self, AppState, ServiceConfig};
use mixopt::strength::{cross_validate, IngredientId, Mixture, StrengthObservation};
use mixopt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mixopt",
    version,
    about = "Multi-objective mixture design for low-carbon concrete"
)]
struct Cli {
    /// Campaign store directory.
    #[arg(long, global = true, env = "MIXOPT_STORE", default_value = "mixopt-store")]
    store: PathBuf,
    /// Campaign id.
    #[arg(long, short, global = true, env = "MIXOPT_CAMPAIGN")]
    campaign: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Create a campaign from a JSON config (constraints, GWP table, objectives).
    Init {
        #[arg(long)]
        config: PathBuf,
        /// GWP coefficients as CSV or JSON; replaces the config's table.
        #[arg(long)]
        gwp: Option<PathBuf>,
    },
    /// Append measurements from a CSV file.
    Ingest {
        file: PathBuf,
        /// Reject the whole file on the first bad row.
        #[arg(long)]
        strict: bool,
    },
    /// Fit the strength model on all observations and store a snapshot.
    Fit,
    /// Propose the next batch.
    Propose {
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Empirical Pareto frontier of measured strength at an age against GWP.
    Pareto {
        #[arg(long, default_value_t = 28.0)]
        age: f64,
    },
    /// Inferred Pareto frontier under a scenario, from the latest snapshot.
    Infer {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-validate the strength model, folds grouped by mixture.
    Cv {
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict a strength curve from the latest snapshot.
    Predict {
        /// Mixture as JSON, e.g. '{"cement": 300, "water": 150}'.
        #[arg(long)]
        mixture: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 3.0, 7.0, 28.0])]
        ages: Vec<f64>,
    },
    /// Campaign summary.
    State,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Require this bearer token.
        #[arg(long, env = "MIXOPT_TOKEN")]
        token: Option<String>,
        #[arg(long, default_value_t = 1)]
        job_slots: usize,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_)
        | Error::Shape(_)
        | Error::Schema(_)
        | Error::Row { .. }
        | Error::Json(_)
        | Error::Csv(_) => 3,
        Error::InsufficientData(_) | Error::Infeasible { .. } | Error::Config(_) => 4,
        Error::Fitting(_) | Error::Conditioning { .. } => 5,
        Error::NotFound(_) => 6,
        Error::Migration { .. } | Error::Integrity { .. } => 7,
        Error::Io { .. } => 8,
    }
}

fn campaign_id(cli: &Cli) -> Result<String> {
    cli.campaign
        .clone()
        .ok_or_else(|| Error::Validation("--campaign is required for this command".into()))
}

fn run(cli: Cli) -> Result<()> {
    let store = Store::open(&cli.store)?;
    match &cli.command {
        Command::Init { config, gwp } => {
            let text =
                std::fs::read_to_string(config).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let mut value: Value = serde_json::from_str(&text)?;
            if let (Some(id), Some(obj)) = (&cli.campaign, value.as_object_mut()) {
                obj.insert("id".into(), Value::String(id.clone()));
            }
            let mut campaign: Campaign = serde_json::from_value(value)?;
            if let Some(path) = gwp {
                campaign.gwp_table = GwpTable::load(path)?;
            }
            store.create(&campaign)?;
            emit(cli.format, &campaign.summary()?, |w| summary_csv(w, &campaign))
        }
        Command::Ingest { file, strict } => {
            let id = campaign_id(&cli)?;
            if !store.exists(&id) {
                return Err(Error::NotFound(id));
            }
            let (rows, report) = ingest_path(file, *strict)?;
            store.append(&id, &rows)?;
            #[derive(Serialize)]
            struct Out<'a> {
                report: &'a mixopt::campaign::IngestReport,
                observations: Vec<&'a StrengthObservation>,
            }
            let out = Out {
                report: &report,
                observations: rows.iter().map(|r| &r.observation).collect(),
            };
            emit(cli.format, &out, |w| {
                let mut header: Vec<String> = vec!["line".into()];
                header.extend(IngredientId::ALL.iter().map(|i| i.name().to_string()));
                header.extend(["age_days", "strength_mpa", "replicate", "batch"].map(String::from));
                w.write_record(&header)?;
                for r in &rows {
                    let mut rec = vec![r.line.to_string()];
                    rec.extend(mixture_fields(&r.observation.mixture));
                    rec.push(r.observation.age_days.to_string());
                    rec.push(format!("{:.4}", r.observation.strength_mpa));
                    rec.push(r.observation.replicate_id.map(|v| v.to_string()).unwrap_or_default());
                    rec.push(r.batch.clone().unwrap_or_default());
                    w.write_record(&rec)?;
                }
                Ok(())
            })
        }
        Command::Fit => {
            let id = campaign_id(&cli)?;
            let campaign = store.load(&id)?;
            let model = campaign.fit_model()?;
            let digest = store.save_snapshot(&id, &model)?;
            let snapshot = store.update(&id, |c, _| {
                c.record_snapshot(digest.clone(), &model, Utc::now());
                Ok(c.latest_snapshot().cloned())
            })?;
            #[derive(Serialize)]
            struct Out<'a> {
                snapshot: Option<mixopt::campaign::SnapshotRef>,
                noise_sd_mpa: f64,
                kernel: &'a mixopt::gp::KernelParams,
            }
            let out = Out {
                snapshot,
                noise_sd_mpa: model.noise_sd_mpa(),
                kernel: model.kernel(),
            };
            emit(cli.format, &out, |w| {
                w.write_record(["digest", "observations", "noise_sd_mpa"])?;
                w.write_record([
                    digest.clone(),
                    model.observations().len().to_string(),
                    model.noise_sd_mpa().to_string(),
                ])?;
                Ok(())
            })
        }
        Command::Propose { q, seed } => {
            let id = campaign_id(&cli)?;
            let seed = *seed;
            let batch = {
                let campaign = store.load(&id)?;
                let q = q.unwrap_or(campaign.acquisition.q);
                let mut proposal = campaign.plan_batch(q, seed, Utc::now())?;
                store.save_snapshot(&id, &proposal.model)?;
                store.update(&id, |c, _| c.commit_proposal(&mut proposal, Utc::now()))?;
                proposal.batch
            };
            emit(cli.format, &batch, |w| {
                let campaign = store.load(&id)?;
                let names = campaign.objectives.objective_names();
                let mut header: Vec<String> = IngredientId::ALL.iter().map(|i| i.name().to_string()).collect();
                header.extend(names.iter().map(|n| format!("{n}_mean")));
                header.extend(campaign.objectives.ages.iter().map(|a| format!("strength_day_{a}_sd")));
                w.write_record(&header)?;
                for (m, p) in batch.mixtures.iter().zip(&batch.predictions) {
                    let mut rec = mixture_fields(m);
                    rec.extend(p.mean.iter().map(|v| format!("{v:.4}")));
                    rec.extend(p.sd.iter().map(|v| format!("{v:.4}")));
                    w.write_record(&rec)?;
                }
                Ok(())
            })
        }
        Command::Pareto { age } => {
            let id = campaign_id(&cli)?;
            let campaign = store.load(&id)?;
            let frontier = campaign.empirical_pareto(*age)?;
            emit(cli.format, &frontier, |w| {
                let mut header: Vec<String> = IngredientId::ALL.iter().map(|i| i.name().to_string()).collect();
                header.extend(["strength_mpa", "gwp", "replicates", "batch", "pareto"].map(String::from));
                w.write_record(&header)?;
                for p in &frontier.points {
                    let mut rec = mixture_fields(&p.mixture);
                    rec.push(format!("{:.4}", p.strength_mpa));
                    rec.push(format!("{:.4}", p.gwp));
                    rec.push(p.replicates.to_string());
                    rec.push(p.batch.clone().unwrap_or_default());
                    rec.push(p.pareto.to_string());
                    w.write_record(&rec)?;
                }
                Ok(())
            })
        }
        Command::Infer {
            scenario,
            candidates,
            seed,
        } => {
            let id = campaign_id(&cli)?;
            let campaign = store.load(&id)?;
            let scenario: Scenario = match scenario {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text)?
                }
                None => Scenario::default(),
            };
            let digest = campaign
                .latest_snapshot()
                .map(|s| s.digest.clone())
                .ok_or_else(|| Error::InsufficientData("no fitted snapshot; run `mixopt fit` first".into()))?;
            let model = store.load_snapshot(&id, &digest)?;
            let config = InferredConfig {
                candidates: candidates.unwrap_or(campaign.inferred.candidates),
                seed: seed.unwrap_or(campaign.inferred.seed),
            };
            let frontier = campaign.inferred_pareto(&model, &digest, &scenario, &config)?;
            emit(cli.format, &frontier, |w| {
                let mut header: Vec<String> = IngredientId::ALL.iter().map(|i| i.name().to_string()).collect();
                header.extend(frontier.objective_names.iter().cloned());
                header.extend(campaign.objectives.ages.iter().map(|a| format!("strength_day_{a}_sd")));
                w.write_record(&header)?;
                for p in &frontier.points {
                    let mut rec = mixture_fields(&p.mixture);
                    rec.extend(p.objectives.iter().map(|v| format!("{v:.4}")));
                    rec.extend(p.sd.iter().map(|v| format!("{v:.4}")));
                    w.write_record(&rec)?;
                }
                Ok(())
            })
        }
        Command::Cv { folds, seed } => {
            let id = campaign_id(&cli)?;
            let campaign = store.load(&id)?;
            let report = cross_validate(
                &campaign.strength_observations(),
                &campaign.constraints,
                *folds,
                *seed,
                &campaign.model,
            )?;
            emit(cli.format, &report, |w| {
                w.write_record(["fold", "index", "age_days", "mean_mpa", "sd_mpa", "actual_mpa"])?;
                for p in &report.points {
                    w.write_record([
                        p.fold.to_string(),
                        p.index.to_string(),
                        p.age_days.to_string(),
                        format!("{:.4}", p.mean_mpa),
                        format!("{:.4}", p.sd_mpa),
                        format!("{:.4}", p.actual_mpa),
                    ])?;
                }
                Ok(())
            })
        }
        Command::Predict { mixture, ages } => {
            let id = campaign_id(&cli)?;
            let mixture: Mixture = serde_json::from_str(mixture)?;
            let campaign = store.load(&id)?;
            let digest = campaign
                .latest_snapshot()
                .map(|s| s.digest.clone())
                .ok_or_else(|| Error::InsufficientData("no fitted snapshot; run `mixopt fit` first".into()))?;
            let preds = store.load_snapshot(&id, &digest)?.predict(&mixture, ages)?;
            emit(cli.format, &preds, |w| {
                w.write_record(["age_days", "mean_mpa", "sd_mpa"])?;
                for p in &preds {
                    w.write_record([
                        p.age_days.to_string(),
                        format!("{:.4}", p.mean_mpa),
                        format!("{:.4}", p.sd_mpa),
                    ])?;
                }
                Ok(())
            })
        }
        Command::State => {
            let id = campaign_id(&cli)?;
            let campaign = store.load(&id)?;
            emit(cli.format, &campaign.summary()?, |w| summary_csv(w, &campaign))
        }
        Command::Serve { addr, token, job_slots } => {
            let state = AppState::new(
                store,
                ServiceConfig {
                    token: token.clone(),
                    job_slots: *job_slots,
                },
            );
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(addr.to_string(), e))?;
            rt.block_on(service::serve(*addr, state))
        }
    }
}

fn mixture_fields(m: &Mixture) -> Vec<String> {
    // six decimals is far below weighing precision
    m.quantities()
        .iter()
        .map(|v| ((v * 1e6).round() / 1e6).to_string())
        .collect()
}

fn summary_csv(w: &mut csv::Writer<std::io::StdoutLock<'_>>, campaign: &Campaign) -> Result<()> {
    w.write_record(["batch", "origin", "size", "observations"])?;
    for b in campaign.summary()?.batches {
        let origin = serde_json::to_value(b.origin)?;
        w.write_record([
            b.id,
            origin.as_str().unwrap_or_default().to_string(),
            b.size.to_string(),
            b.observations.to_string(),
        ])?;
    }
    Ok(())
}

fn emit<T: Serialize>(
    format: Format,
    value: &T,
    csv_rows: impl FnOnce(&mut csv::Writer<std::io::StdoutLock<'_>>) -> Result<()>,
) -> Result<()> {
    let stdout = std::io::stdout();
    match format {
        Format::Json => {
            let mut out = stdout.lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out).map_err(|e| Error::Validation(format!("cannot write output: {e}")))?;
            Ok(())
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout.lock());
            csv_rows(&mut w)?;
            w.flush()
                .map_err(|e| Error::Validation(format!("cannot write output: {e}")))?;
            Ok(())
        }
    }
}
