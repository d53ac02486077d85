//! `tplmarket`: services, seller and buyer clients, and policy tools.
//!
//! Exit status: 0 success or access granted, 1 policy check failed,
//! 2 usage error, 3 denied by policy, 4 infrastructure error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "tplmarket", version, about = "Policy-gated private data marketplace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the services.
    Serve {
        #[command(subcommand)]
        service: Service,
    },
    /// Generate keys, registries, configs and sample data.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
    Seller {
        #[command(subcommand)]
        command: SellerCommand,
    },
    Buyer {
        #[command(subcommand)]
        command: BuyerCommand,
    },
    /// Policy developer tools.
    Tpl {
        #[command(subcommand)]
        command: TplCommand,
    },
    /// Run every service in process, sell a dataset and buy from it.
    Demo {
        #[arg(long, default_value_t = 3)]
        nodes: usize,
    },
}

#[derive(Subcommand)]
enum Service {
    Storage {
        #[arg(long)]
        config: PathBuf,
    },
    Node {
        #[arg(long)]
        config: PathBuf,
    },
    Marketplace {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        #[arg(long, default_value_t = tplmarket_services::fixtures::BASE_PORT)]
        base_port: u16,
    },
}

#[derive(Args)]
struct MarketArg {
    /// Marketplace base URL.
    #[arg(long, default_value = "http://127.0.0.1:7200")]
    market: String,
}

#[derive(Subcommand)]
enum SellerCommand {
    Register {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long)]
        name: String,
    },
    /// Node key directory.
    Keys {
        #[command(subcommand)]
        command: KeysCommand,
    },
    /// Share, seal, upload and list a dataset.
    Sell {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long, default_value = "http://127.0.0.1:7100")]
        storage: String,
        /// Seller account id.
        #[arg(long)]
        account: String,
        #[arg(long)]
        product_id: String,
        /// Single-column CSV of numbers.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// JSON metadata: title, description, tags.
        #[arg(long)]
        meta: PathBuf,
        /// Decimal places kept; values are multiplied by 10^scale.
        #[arg(long)]
        scale: Option<u32>,
    },
}

#[derive(Subcommand)]
enum KeysCommand {
    Fetch {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Sum,
    Count,
    Mean,
    Dot,
}

#[derive(Subcommand)]
enum BuyerCommand {
    Register {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long)]
        name: String,
    },
    Search {
        #[command(flatten)]
        market: MarketArg,
        #[arg(default_value = "")]
        query: String,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        cursor: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    Buy {
        #[command(flatten)]
        market: MarketArg,
        /// Wallet file with keys and credentials.
        #[arg(long)]
        wallet: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        products: Vec<String>,
        #[arg(long, value_enum)]
        op: Op,
        /// Computation type the policies see.
        #[arg(long, default_value = "simple_statistics")]
        kind: String,
        /// Weights for `dot`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<i64>>,
        /// Weights for `dot` as a single-column CSV.
        #[arg(long, conflicts_with = "weights")]
        weights_file: Option<PathBuf>,
        /// Print every node's trace on refusal.
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Subcommand)]
enum TplCommand {
    /// Parse and lint a policy.
    Check { file: PathBuf },
    /// Evaluate a policy offline, as a node would.
    Eval {
        file: PathBuf,
        /// Entry predicate, called with (presentation, records, type).
        #[arg(long, default_value = "accept")]
        query: String,
        /// Presentation JSON.
        #[arg(long)]
        presentation: PathBuf,
        #[arg(long)]
        num_records: u64,
        #[arg(long)]
        computation: String,
        /// Registry fixture directory; empty registries when absent.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Time evaluation of aggregated policies.
    Bench {
        /// Include parsing and loading in every evaluation.
        #[arg(long)]
        cold: bool,
        #[arg(long, default_value_t = 7)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.status)
        }
    }
}
