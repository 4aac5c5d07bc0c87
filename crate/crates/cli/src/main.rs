//! `pds`: ingestion, queries, administration and audit inspection against a
//! local workspace, plus `serve` for the HTTP service.
//!
//! `--user` is trusted as given: the CLI is an operator tool working on
//! files it can already read. The service is the enforcement boundary.
//!
//! Exit status: 0 on success, 2 when access is denied, 1 otherwise.

mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use pds_client::{Client, ClientError};
use pds_core::customizer::{personalize, utility_report, CustomizerError, QueryDescriptor, QueryMode};
use pds_core::dataset::Filter;
use pds_core::demo;
use pds_core::policy::{MeasurePolicy, PrivilegeLevel};
use pds_core::rules::{api_key_digest, Actor, AuditFilter, Outcome, PolicySet, RoleDef, RuleError, UserProfile};
use pds_service::{LayerConfig, Workspace};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "pds", version, about = "Role-aware range desensitization for tabular data")]
struct Cli {
    /// Shared configuration file.
    #[arg(long, global = true, default_value = "layer.toml", env = "PDS_CONFIG")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a layer.toml (and, with --demo, a sample portfolio and policy).
    Init(InitArgs),
    /// Load a CSV file as a new table or as the next version of an existing one.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        table: String,
    },
    /// Personalized histogram or range-masked records for one user.
    Query(QueryArgs),
    /// Manage users, roles and measure policies.
    #[command(subcommand)]
    Admin(AdminCommand),
    /// Inspect the access log.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Run the HTTP service.
    Serve,
    /// Chi-square diagnostic for every privilege level of a measure.
    Utility {
        #[arg(long)]
        table: String,
        #[arg(long)]
        measure: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    /// Administrator bearer token; a random one is generated and printed if omitted.
    #[arg(long)]
    admin_token: Option<String>,
    /// Also write the five-role demo portfolio, its income policy and a customer manifest.
    #[arg(long)]
    demo: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, required_unless_present = "server")]
    user: Option<String>,
    #[arg(long)]
    table: String,
    #[arg(long)]
    measure: String,
    /// COL=V (dimension) or COL>=V / COL<V (measure). Repeatable.
    #[arg(long = "filter")]
    filters: Vec<String>,
    #[arg(long)]
    group_by: Option<String>,
    /// Range-masked rows instead of a histogram.
    #[arg(long)]
    records: bool,
    /// Columns for --records, comma separated.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Canonical JSON.
    #[arg(long, conflicts_with = "table_output")]
    json: bool,
    /// Range/count table (default).
    #[arg(long = "table-output", alias = "tabular")]
    table_output: bool,
    /// Query a running service instead of the local workspace.
    #[arg(long, requires = "token")]
    server: Option<String>,
    #[arg(long, env = "PDS_TOKEN")]
    token: Option<String>,
}

#[derive(Subcommand)]
enum AdminCommand {
    /// Users and their roles.
    #[command(subcommand)]
    User(UserCommand),
    #[command(subcommand)]
    Role(RoleCommand),
    #[command(subcommand)]
    Policy(PolicyCommand),
}

#[derive(Subcommand)]
enum UserCommand {
    /// Add or replace a user.
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        role: String,
        #[arg(long, required_unless_present = "api_key_digest", conflicts_with = "api_key_digest")]
        api_key: Option<String>,
        #[arg(long)]
        api_key_digest: Option<String>,
        #[arg(long, default_value = "")]
        name: String,
        #[arg(long)]
        inactive: bool,
    },
    /// Move a user to another role.
    SetRole {
        #[arg(long)]
        id: String,
        #[arg(long)]
        role: String,
    },
}

#[derive(Subcommand)]
enum RoleCommand {
    /// Add or replace a role.
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        privilege: PrivilegeLevel,
        #[arg(long, value_delimiter = ',')]
        measures: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        dimensions: Vec<String>,
        #[arg(long)]
        identifiers: bool,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Install one measure policy, or every policy of a policies document.
    Set {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Entries in append order, optionally filtered.
    List {
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        deny_only: bool,
        /// RFC 3339 timestamp.
        #[arg(long)]
        since: Option<String>,
        /// One JSON entry per line.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for access denials
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            for v in violations(&e) {
                eprintln!("  - {v}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn violations(e: &anyhow::Error) -> Vec<String> {
    e.chain()
        .find_map(|c| match c.downcast_ref::<RuleError>() {
            Some(RuleError::ValidationFailed(v)) => Some(v.clone()),
            _ => match c.downcast_ref::<CustomizerError>() {
                Some(CustomizerError::Rule(RuleError::ValidationFailed(v))) => Some(v.clone()),
                _ => None,
            },
        })
        .unwrap_or_default()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let denied = e.chain().any(|c| {
        if let Some(c) = c.downcast_ref::<CustomizerError>() {
            return c.is_access_denial();
        }
        if let Some(r) = c.downcast_ref::<RuleError>() {
            return matches!(
                r,
                RuleError::AccessDenied(_)
                    | RuleError::IdentifierForbidden(_)
                    | RuleError::InactiveUser(_)
                    | RuleError::NotAdministrator
            );
        }
        c.downcast_ref::<ClientError>().is_some_and(ClientError::is_access_denial)
    });
    if denied {
        2
    } else {
        1
    }
}

fn open(config: &Path) -> anyhow::Result<Workspace> {
    let config = LayerConfig::load(config)?;
    Ok(Workspace::open(config)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init(args) => init(&args),
        Command::Ingest { csv, manifest, table } => {
            let ws = open(&cli.config)?;
            let t = ws.ingest(&table, &csv, &manifest)?;
            println!("table {} version {}: {} rows, digest {}", t.table_id(), t.version(), t.row_count(), t.digest());
            Ok(())
        }
        Command::Query(args) => query(&cli.config, args),
        Command::Admin(cmd) => admin(&open(&cli.config)?, cmd),
        Command::Audit(AuditCommand::List { user, deny_only, since, json }) => {
            let ws = open(&cli.config)?;
            let since = since
                .map(|s| s.parse().with_context(|| format!("--since {s:?} is not an RFC 3339 timestamp")))
                .transpose()?;
            let filter = AuditFilter { user_id: user, since, outcome: deny_only.then_some(Outcome::Deny) };
            let entries = ws.engine.list_audit(&Actor::Admin, &filter)?;
            if json {
                for e in &entries {
                    println!("{}", serde_json::to_string(e)?);
                }
            } else {
                print!("{}", render::audit(&entries));
            }
            Ok(())
        }
        Command::Serve => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let config = LayerConfig::load(&cli.config)?;
            tokio::runtime::Runtime::new()?.block_on(pds_service::serve(config))?;
            Ok(())
        }
        Command::Utility { table, measure, json } => {
            let ws = open(&cli.config)?;
            let t = ws.catalog.latest(&table)?;
            let policy = ws.engine.policy(&measure).ok_or_else(|| RuleError::UnknownMeasure(measure.clone()))?;
            let rows = utility_report(&t, &measure, &policy)?;
            if json {
                println!("{}", serde_json::to_string(&rows)?);
            } else {
                print!("{}", render::utility(&rows));
            }
            Ok(())
        }
    }
}

fn init(args: &InitArgs) -> anyhow::Result<()> {
    let config_path = args.dir.join("layer.toml");
    if config_path.exists() {
        bail!("{} already exists", config_path.display());
    }
    std::fs::create_dir_all(args.dir.join("data"))?;
    let token = match &args.admin_token {
        Some(t) => t.clone(),
        None => {
            let t = hex_token();
            println!("admin token: {t}");
            t
        }
    };
    let toml = format!(
        "listen = \"127.0.0.1:8080\"\ndata_dir = \"data\"\nadmin_key_digest = \"{}\"\nreport_capacity = 1024\n",
        api_key_digest(&token)
    );
    std::fs::write(&config_path, toml)?;
    if args.demo {
        let data = args.dir.join("data");
        std::fs::write(data.join("portfolio.json"), serde_json::to_string_pretty(&demo::portfolio())? + "\n")?;
        std::fs::write(data.join("policies.json"), serde_json::to_string_pretty(&demo::policy_set())? + "\n")?;
        std::fs::write(
            args.dir.join("customers.manifest.json"),
            serde_json::to_string_pretty(&demo::customer_manifest())? + "\n",
        )?;
        for (_, user, _) in demo::ROLES {
            println!("user {user}: token {}", demo::token_for(user));
        }
    }
    println!("wrote {}", config_path.display());
    Ok(())
}

fn hex_token() -> String {
    rand::random::<[u8; 16]>().iter().map(|b| format!("{b:02x}")).collect()
}

fn query(config: &Path, args: QueryArgs) -> anyhow::Result<()> {
    let filters = args
        .filters
        .iter()
        .map(|f| Filter::parse(f).ok_or_else(|| anyhow!("filter {f:?} is not COL=V, COL>=V or COL<V")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let q = QueryDescriptor {
        table_id: args.table.clone(),
        measure_id: args.measure.clone(),
        filters,
        group_by: args.group_by.clone(),
        mode: if args.records { QueryMode::Records } else { QueryMode::Histogram },
        requested_columns: args.columns.clone(),
    };
    let (canonical, json) = match &args.server {
        Some(url) => {
            let client = Client::new(url, args.token.as_deref().unwrap_or_default());
            let report = tokio::runtime::Runtime::new()?.block_on(client.query(&q))?;
            eprintln!("report {}", report.report_id);
            (report.dataset, report.body)
        }
        None => {
            let ws = open(config)?;
            let table = ws.catalog.latest(&q.table_id)?;
            let user = args.user.as_deref().expect("clap requires --user without --server");
            let pds = personalize(&ws.engine, &table, &q, user)?;
            (pds.canonical(), pds.to_canonical_json())
        }
    };
    if args.json {
        println!("{json}");
    } else {
        print!("{}", render::dataset(&canonical));
    }
    Ok(())
}

fn admin(ws: &Workspace, cmd: AdminCommand) -> anyhow::Result<()> {
    let engine = &ws.engine;
    match cmd {
        AdminCommand::User(UserCommand::Add { id, role, api_key, api_key_digest: digest, name, inactive }) => {
            let digest = match (api_key, digest) {
                (Some(key), _) => api_key_digest(&key),
                (None, Some(d)) => d,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let profile = UserProfile {
                user_id: id.clone(),
                display_name: name,
                role_id: role,
                api_key_digest: digest,
                active: !inactive,
            };
            engine.upsert_user(&Actor::Admin, profile)?;
            println!("user {id} saved");
        }
        AdminCommand::User(UserCommand::SetRole { id, role }) => {
            engine.set_role(&Actor::Admin, &id, &role)?;
            println!("user {id} now has role {role}");
        }
        AdminCommand::Role(RoleCommand::Add { id, privilege, measures, dimensions, identifiers }) => {
            let role = RoleDef {
                role_id: id.clone(),
                privilege,
                allowed_measures: measures.into_iter().collect(),
                allowed_dimensions: dimensions.into_iter().collect(),
                may_see_identifiers: identifiers,
            };
            engine.upsert_role(&Actor::Admin, role)?;
            println!("role {id} saved");
        }
        AdminCommand::Policy(PolicyCommand::Set { file }) => {
            let text = std::fs::read_to_string(&file).with_context(|| file.display().to_string())?;
            let value: Value = serde_json::from_str(&text).with_context(|| file.display().to_string())?;
            let policies: Vec<MeasurePolicy> = if value.get("measures").is_some() {
                let set: PolicySet = serde_json::from_value(value).with_context(|| file.display().to_string())?;
                set.measures
            } else {
                vec![serde_json::from_value(value).with_context(|| file.display().to_string())?]
            };
            for p in policies {
                let id = p.measure_id.clone();
                engine.upsert_policy(&Actor::Admin, p).with_context(|| format!("policy for {id}"))?;
                println!("policy for {id} saved");
            }
        }
    }
    Ok(())
}
