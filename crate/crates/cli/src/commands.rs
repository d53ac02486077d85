use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use serde_json::Value;
use tplmarket_core::bench::{ratio, run_grid, BenchConfig, Measurement};
use tplmarket_core::builtins::standard_registry;
use tplmarket_core::client::{parse_records, BuyError, ResultValue};
use tplmarket_core::credentials::Wallet;
use tplmarket_core::node::evaluate;
use tplmarket_core::protocol::{Computation, NodeError, Operation};
use tplmarket_core::sandbox::EXAMPLE_POLICY;
use tplmarket_core::tpl::{lint, EntryPoint, Policy, Program, DEFAULT_BUDGET};
use tplmarket_services::api::{ProductMetadata, Role};
use tplmarket_services::client::{buy, sell, ClientError, MarketplaceClient, Offer, StorageClient};
use tplmarket_services::deploy::{DeploymentOptions, LocalDeployment};
use tplmarket_services::fixtures::{self, offline_trust_services};
use tplmarket_services::marketplace::{Marketplace, MarketplaceFileConfig};
use tplmarket_services::node::{NodeFileConfig, NodeState};
use tplmarket_services::storage::StorageFileConfig;
use tplmarket_services::{marketplace, node, storage};

use crate::{BuyerCommand, Command, FixturesCommand, KeysCommand, Op, SellerCommand, Service, TplCommand};

pub const CHECK_FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const DENIED: u8 = 3;
pub const INFRA: u8 = 4;

pub struct Failure {
    pub status: u8,
    pub message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        status: USAGE,
        message: message.to_string(),
    }
}

fn infra(message: impl ToString) -> Failure {
    Failure {
        status: INFRA,
        message: message.to_string(),
    }
}

/// Client errors caused by the caller's input are usage errors; the rest
/// are infrastructure errors.
fn client_failure(e: ClientError) -> Failure {
    let status = match &e {
        ClientError::Api { status, .. } if (400..500).contains(status) => USAGE,
        ClientError::Policy(_) | ClientError::Infeasible(_) | ClientError::EmptyWallet => USAGE,
        ClientError::Prepare(_) => USAGE,
        _ => INFRA,
    };
    Failure {
        status,
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Serve { service } => serve(service),
        Command::Fixtures {
            command: FixturesCommand::Init { dir, nodes, base_port },
        } => {
            let set = fixtures::init(&dir, nodes, base_port).map_err(usage)?;
            println!("wrote fixtures for {nodes} nodes to {}", set.dir.display());
            println!("  storage      {}  ({})", set.storage_url, set.storage_config.display());
            for c in &set.node_configs {
                println!("  node         {}", c.display());
            }
            println!("  marketplace  {}  ({})", set.marketplace_url, set.marketplace_config.display());
            for w in &set.wallets {
                println!("  wallet       {}", w.display());
            }
            println!("  policy       {}", set.policy.display());
            println!("  data         {}  ({})", set.data.display(), set.metadata.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Seller { command } => seller(command),
        Command::Buyer { command } => buyer(command),
        Command::Tpl { command } => tpl(command),
        Command::Demo { nodes } => demo(nodes),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(infra)
}

fn serve(service: Service) -> Result<ExitCode, Failure> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let rt = runtime()?;
    let (listen, router) = match service {
        Service::Storage { config } => {
            let c = StorageFileConfig::load(&config).map_err(usage)?;
            let state = c.state().map_err(usage)?;
            (c.listen, storage::router(Arc::new(state)))
        }
        Service::Node { config } => {
            let c = NodeFileConfig::load(&config).map_err(usage)?;
            let state = NodeState::from_file(&c, rt.handle().clone()).map_err(usage)?;
            (c.listen, node::router(Arc::new(state)))
        }
        Service::Marketplace { config } => {
            let text = read(&config)?;
            let mut c: MarketplaceFileConfig = tplmarket_services::toml_from_str(&text).map_err(|e| usage(format!("{}: {e}", config.display())))?;
            if let Some(f) = c.data_file.as_mut().filter(|f| f.is_relative()) {
                *f = config.parent().unwrap_or(Path::new(".")).join(&*f);
            }
            let m = Marketplace::from_config(&c).map_err(usage)?;
            (c.listen, marketplace::router(Arc::new(m)))
        }
    };
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| infra(format!("{listen}: {e}")))?;
        tracing::info!("listening on {listen}");
        axum::serve(listener, router).await.map_err(infra)
    })?;
    Ok(ExitCode::SUCCESS)
}

fn seller(command: SellerCommand) -> Result<ExitCode, Failure> {
    match command {
        SellerCommand::Register { market, name } => {
            let reg = MarketplaceClient::new(&market.market)
                .register(&name, Role::Seller)
                .map_err(client_failure)?;
            print_json(&reg);
        }
        SellerCommand::Keys {
            command: KeysCommand::Fetch { market, out },
        } => {
            let dir = MarketplaceClient::new(&market.market).directory().map_err(client_failure)?;
            let text = serde_json::to_string_pretty(&dir).expect("directory serializes");
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
                None => println!("{text}"),
            }
        }
        SellerCommand::Sell {
            market,
            storage,
            account,
            product_id,
            data,
            policy,
            meta,
            scale,
        } => {
            let records = parse_records(&read(&data)?, scale).map_err(|e| usage(format!("{}: {e}", data.display())))?;
            let policy_src = read(&policy)?;
            let mut metadata: ProductMetadata = serde_json::from_value(read_json(&meta)?)
                .map_err(|e| usage(format!("{}: {e}", meta.display())))?;
            metadata.record_count = records.len() as u64;
            let market = MarketplaceClient::new(&market.market);
            let directory = market.directory().map_err(client_failure)?;
            let id = sell(
                &market,
                &StorageClient::new(&storage),
                &account,
                &directory,
                Offer {
                    product_id,
                    policy: policy_src,
                    records,
                    metadata,
                },
            )
            .map_err(client_failure)?;
            println!("{id}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn weights_of(weights: Option<Vec<i64>>, file: Option<&Path>) -> Result<Option<Vec<i64>>, Failure> {
    match (weights, file) {
        (Some(w), _) => Ok(Some(w)),
        (None, Some(f)) => parse_records(&read(f)?, None)
            .map(Some)
            .map_err(|e| usage(format!("{}: {e}", f.display()))),
        (None, None) => Ok(None),
    }
}

fn show(value: &ResultValue) -> String {
    match value {
        ResultValue::Rational { numer, denom } if *denom != 1 => {
            format!("{value} ({:.6})", *numer as f64 / *denom as f64)
        }
        _ => value.to_string(),
    }
}

fn print_refusal(node_index: u32, error: Option<&NodeError>, trace: bool) {
    match error {
        None => eprintln!("node {node_index}: no answer"),
        Some(e) => {
            eprintln!("node {node_index}: {} ({})", e.code, e.message);
            if let Some(goal) = &e.failed_goal {
                eprintln!("    failed goal: {goal}");
            }
            if trace {
                for line in &e.trace {
                    eprintln!("    {line}");
                }
            }
        }
    }
}

fn buyer(command: BuyerCommand) -> Result<ExitCode, Failure> {
    match command {
        BuyerCommand::Register { market, name } => {
            let reg = MarketplaceClient::new(&market.market)
                .register(&name, Role::Buyer)
                .map_err(client_failure)?;
            print_json(&reg);
            Ok(ExitCode::SUCCESS)
        }
        BuyerCommand::Search {
            market,
            query,
            tag,
            cursor,
            limit,
        } => {
            let page = MarketplaceClient::new(&market.market)
                .search(&query, tag.as_deref(), cursor.as_deref(), limit)
                .map_err(client_failure)?;
            for p in &page.items {
                println!(
                    "{}\t{}\t{} records\t[{}]",
                    p.product_id,
                    p.metadata.title,
                    p.metadata.record_count,
                    p.metadata.tags.join(", ")
                );
            }
            if let Some(c) = page.next_cursor {
                println!("more: --cursor {c}");
            }
            Ok(ExitCode::SUCCESS)
        }
        BuyerCommand::Buy {
            market,
            wallet,
            products,
            op,
            kind,
            weights,
            weights_file,
            trace,
        } => {
            let (w, credentials) = Wallet::from_json(read_json(&wallet)?).map_err(|e| usage(format!("{}: {e}", wallet.display())))?;
            let weights = weights_of(weights, weights_file.as_deref())?;
            let computation = match (op, weights) {
                (Op::Dot, Some(w)) => Computation::dot(&kind, w),
                (Op::Dot, None) => return Err(usage("dot needs --weights or --weights-file")),
                (_, Some(_)) => return Err(usage("weights are only used by dot")),
                (Op::Sum, None) => Computation::new(&kind, Operation::Sum),
                (Op::Count, None) => Computation::new(&kind, Operation::Count),
                (Op::Mean, None) => Computation::new(&kind, Operation::Mean),
            };
            let market = MarketplaceClient::new(&market.market);
            let purchase = buy(&market, &w, &credentials, &products, computation).map_err(client_failure)?;
            match &purchase.outcome {
                Ok(value) => println!("{}", show(value)),
                Err(BuyError::InsufficientShares { needed, got, refusals }) => {
                    let verdict = if purchase.exit_code() == 3 { "denied" } else { "failed" };
                    eprintln!("{verdict}: {got} of {needed} nodes answered with a share");
                    for r in refusals {
                        print_refusal(r.node_index, r.error.as_ref(), trace);
                    }
                    for u in &purchase.unreachable {
                        eprintln!("{}: {}", u.code, u.message);
                    }
                }
                Err(e) => eprintln!("failed: {e}"),
            }
            Ok(ExitCode::from(purchase.exit_code() as u8))
        }
    }
}

fn tpl(command: TplCommand) -> Result<ExitCode, Failure> {
    match command {
        TplCommand::Check { file } => {
            let src = read(&file)?;
            let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let policy = match Policy::parse(&src, &id) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Ok(ExitCode::from(CHECK_FAILED));
                }
            };
            let registry = standard_registry(offline_trust_services(None).map_err(infra)?);
            let lints = lint(&policy, &registry);
            for l in &lints {
                let level = if l.is_error() { "error" } else { "warning" };
                eprintln!("{}: {level}: {l}", file.display());
            }
            println!(
                "{}: {} clauses, {} predicates, policy hash {}",
                file.display(),
                policy.clauses().len(),
                policy.defined_predicates().len(),
                tplmarket_core::crypto::hash_policy(src.as_bytes())
            );
            Ok(if lints.iter().any(|l| l.is_error()) {
                ExitCode::from(CHECK_FAILED)
            } else {
                ExitCode::SUCCESS
            })
        }
        TplCommand::Eval {
            file,
            query,
            presentation,
            num_records,
            computation,
            registry,
            budget,
        } => {
            if !presentation.is_file() {
                return Err(usage(format!("presentation file {} does not exist", presentation.display())));
            }
            let doc = read_json(&presentation)?;
            let src = read(&file)?;
            let policy = Policy::parse_with_entry(&src, "policy", EntryPoint::new(query.clone(), 3))
                .map_err(|e| usage(format!("{}: {e}", file.display())))?;
            let services = offline_trust_services(registry.as_deref()).map_err(usage)?;
            let program = Program::load(&[policy], &standard_registry(services)).map_err(usage)?;
            let verdict = evaluate(&program, &query, doc, num_records, &computation, budget.unwrap_or(DEFAULT_BUDGET));
            for line in verdict.trace.lines() {
                println!("{line}");
            }
            match verdict.outcome {
                Ok(true) => {
                    println!("granted");
                    Ok(ExitCode::SUCCESS)
                }
                Ok(false) => {
                    match &verdict.trace.failed_goal {
                        Some(goal) => println!("denied: {goal} failed"),
                        None => println!("denied"),
                    }
                    Ok(ExitCode::from(DENIED))
                }
                Err(e) => {
                    println!("error: {e}");
                    Ok(ExitCode::from(INFRA))
                }
            }
        }
        TplCommand::Bench {
            cold,
            trials,
            iterations,
            json,
        } => {
            let results = run_grid(BenchConfig { trials, iterations }, !cold);
            let find = |p: usize, c: usize| -> &Measurement {
                results
                    .iter()
                    .find(|m| m.policies == p && m.clauses_per_policy == c)
                    .expect("grid cell")
            };
            let by_policies = ratio(find(100, 3), find(1, 3));
            let by_clauses = ratio(find(1, 100), find(1, 3));
            if json {
                print_json(&serde_json::json!({
                    "cold": cold,
                    "results": results,
                    "ratio_100_policies": by_policies,
                    "ratio_100_clauses": by_clauses,
                }));
            } else {
                for m in &results {
                    println!("{m}");
                }
                println!("100 policies / 1 policy (3 clauses): {by_policies:.1}x");
                println!("100 clauses / 3 clauses (1 policy):  {by_clauses:.2}x");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn demo(nodes: usize) -> Result<ExitCode, Failure> {
    if nodes < 2 {
        return Err(usage("the demo needs at least 2 nodes"));
    }
    let d = LocalDeployment::start(DeploymentOptions::new(nodes)).map_err(infra)?;
    println!("storage {}  marketplace {}  {} nodes", d.storage_url, d.marketplace_url, nodes);
    let market = d.market();
    let seller = market.register("clinic", Role::Seller).map_err(client_failure)?;
    let records = fixtures::sample_records();
    let id = sell(
        &market,
        &d.storage_client(),
        &seller.account_id,
        &seller.directory,
        Offer {
            product_id: "patient-ages".into(),
            policy: EXAMPLE_POLICY.into(),
            metadata: ProductMetadata {
                title: "Patient ages".into(),
                description: "Ages of patients".into(),
                record_count: records.len() as u64,
                tags: vec!["health".into()],
            },
            records: records.clone(),
        },
    )
    .map_err(client_failure)?;
    println!("listed {id}: {} records under the example policy", records.len());

    for (name, org, kind) in [
        ("university", "public_university", "machine_learning"),
        ("lab", "private_research", "simple_statistics"),
        ("lab", "private_research", "machine_learning"),
    ] {
        let (wallet, cred) = d.buyer(&format!("did:ex:{name}"), org);
        let p = buy(&market, &wallet, &[cred], &[id.clone()], Computation::new(kind, Operation::Mean)).map_err(client_failure)?;
        match &p.outcome {
            Ok(v) => println!("{org} asking for {kind}: mean = {}", show(v)),
            Err(BuyError::InsufficientShares { refusals, .. }) => {
                let goal = refusals
                    .iter()
                    .find_map(|r| r.error.as_ref().and_then(|e| e.failed_goal.clone()))
                    .unwrap_or_default();
                println!("{org} asking for {kind}: denied by {} nodes ({goal})", refusals.len());
            }
            Err(e) => return Err(infra(e)),
        }
    }
    Ok(ExitCode::SUCCESS)
}
