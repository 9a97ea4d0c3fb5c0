use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cingal_core::channel::DEFAULT_MAX_FRAME;
use cingal_core::deploy::{
    entity_admin_bundle, parse_ddd, Connection, DeploymentRecord, Endpoint, Engine, EngineConfig,
    EngineEvent, Host,
};
use cingal_core::runtime::EntityOp;
use cingal_core::security::{Certificate, PrivateKey, RightSet, Signer};
use cingal_core::server::{fire_remote, query_status, NodeConfig, NodeStatus, ThinServer};
use cingal_core::{BundleDraft, EntityId};

#[derive(Parser)]
#[command(name = "cingal", version, about = "Run thin-server nodes and deploy signed bundles onto them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or inspect a node.
    #[command(subcommand)]
    Node(NodeCmd),
    #[command(subcommand)]
    Bundle(BundleCmd),
    #[command(subcommand)]
    Key(KeyCmd),
    /// Add or remove entities in a node's repository.
    #[command(subcommand)]
    Entity(EntityCmd),
    /// Install, run and wire every component of a DDD.
    Deploy(DeployArgs),
    /// Replace the connections of a recorded deployment.
    Rewire(RewireArgs),
    /// Move one component of a recorded deployment to another host.
    Move(MoveArgs),
}

#[derive(Subcommand)]
enum NodeCmd {
    /// Start a node daemon in the foreground.
    Start {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a node's machines, channels and store.
    Status {
        #[arg(long, value_name = "ADDR:PORT")]
        node: String,
    },
}

#[derive(Subcommand)]
enum BundleCmd {
    /// Sign a bundle document's CODE section; writes the signed document to stdout.
    Sign {
        #[arg(long)]
        bundle: PathBuf,
        /// PEM private key file.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        entity: String,
    },
}

#[derive(Subcommand)]
enum KeyCmd {
    /// Write a fresh key pair to `<out>.pem` (private) and `<out>.crt`.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SignerArgs {
    /// PEM private key of the acting entity.
    #[arg(long)]
    key: PathBuf,
    /// The acting entity.
    #[arg(long = "as", value_name = "ENTITY")]
    entity: String,
}

#[derive(Subcommand)]
enum EntityCmd {
    Add {
        #[arg(long, value_name = "ADDR:PORT")]
        node: String,
        /// Entity to add.
        #[arg(long)]
        name: String,
        /// PEM certificate of the new entity.
        #[arg(long)]
        cert: PathBuf,
        /// e.g. `STORE:PUT,GET;FIRE:FIRE` or `ALL`.
        #[arg(long)]
        rights: String,
        #[command(flatten)]
        signer: SignerArgs,
    },
    Remove {
        #[arg(long, value_name = "ADDR:PORT")]
        node: String,
        #[arg(long)]
        name: String,
        #[command(flatten)]
        signer: SignerArgs,
    },
}

#[derive(Args)]
struct EngineArgs {
    #[command(flatten)]
    signer: SignerArgs,
    /// Directory holding the bundle files a DDD names.
    #[arg(long)]
    catalogue: Option<PathBuf>,
    /// Fire port for hosts given without one.
    #[arg(long)]
    fire_port: Option<u16>,
    /// Fire wirers one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    ddd: PathBuf,
    /// Write the deployment record here.
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct RewireArgs {
    /// Deployment record; updated in place.
    #[arg(long)]
    record: PathBuf,
    /// New connection `Dep.channel -> Dep.channel`; repeat for several, omit for none.
    #[arg(long = "connect")]
    connections: Vec<String>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct MoveArgs {
    /// Deployment record; updated in place.
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    deployment: String,
    /// Target host id.
    #[arg(long)]
    host: String,
    /// Fire address for a host the DDD does not list yet.
    #[arg(long, value_name = "ADDR:PORT")]
    address: Option<String>,
    #[command(flatten)]
    engine: EngineArgs,
}

/// Marks errors that are the caller's fault (exit 2).
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

const TIMEOUT: Duration = Duration::from_secs(10);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line, whatever the cause chain
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(if e.is::<Usage>() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Node(NodeCmd::Start { config }) => node_start(&config),
        Command::Node(NodeCmd::Status { node }) => {
            let st = query_status(&node, TIMEOUT, DEFAULT_MAX_FRAME).with_context(|| format!("status of {node}"))?;
            print_status(&st);
            Ok(())
        }
        Command::Bundle(BundleCmd::Sign { bundle, key, entity }) => {
            let doc = read(&bundle)?;
            let draft = BundleDraft::parse(&doc).with_context(|| bundle.display().to_string())?;
            let signed = load_signer(&SignerArgs { key, entity })?.sign(draft);
            std::io::stdout().write_all(&signed.serialize())?;
            println!();
            Ok(())
        }
        Command::Key(KeyCmd::Generate { out }) => {
            let key = PrivateKey::generate();
            let (pem, crt) = (out.with_extension("pem"), out.with_extension("crt"));
            write_private(&pem, &key.to_pem()).with_context(|| pem.display().to_string())?;
            fs::write(&crt, key.certificate().to_pem()).with_context(|| crt.display().to_string())?;
            println!("{}", key.certificate().fingerprint());
            Ok(())
        }
        Command::Entity(EntityCmd::Add {
            node,
            name,
            cert,
            rights,
            signer,
        }) => {
            let certificate = Certificate::from_pem(&read_text(&cert)?).with_context(|| cert.display().to_string())?;
            let rights: RightSet = rights.parse().map_err(|e| usage(format!("--rights: {e}")))?;
            let op = EntityOp::Add {
                entity: entity_id(&name)?,
                certificate,
                rights,
            };
            entity_op(&node, &load_signer(&signer)?, &op)
        }
        Command::Entity(EntityCmd::Remove { node, name, signer }) => {
            let op = EntityOp::Remove { entity: entity_id(&name)? };
            entity_op(&node, &load_signer(&signer)?, &op)
        }
        Command::Deploy(a) => {
            let ddd = parse_ddd(&read(&a.ddd)?).with_context(|| a.ddd.display().to_string())?;
            let mut engine_args = a.engine;
            if engine_args.catalogue.is_none() {
                // bundles sit next to the DDD unless told otherwise
                engine_args.catalogue = a.ddd.parent().map(Path::to_path_buf);
            }
            let engine = engine(&engine_args)?;
            let mut record = DeploymentRecord::new(&ddd);
            let r = engine.deploy_into(&mut record);
            if let Some(out) = &a.record {
                write_record(out, &record)?;
            }
            Ok(r?)
        }
        Command::Rewire(a) => {
            let mut record = load_record(&a.record)?;
            let conns = a
                .connections
                .iter()
                .map(|c| parse_connection(c))
                .collect::<Result<Vec<_>>>()?;
            let r = engine(&a.engine)?.rewire(&mut record, &conns);
            write_record(&a.record, &record)?;
            Ok(r?)
        }
        Command::Move(a) => {
            let mut record = load_record(&a.record)?;
            if let Some(address) = a.address {
                record.ddd.hosts.retain(|h| h.id != a.host);
                record.ddd.hosts.push(Host {
                    id: a.host.clone(),
                    address,
                });
            }
            let mut engine_args = a.engine;
            if engine_args.catalogue.is_none() {
                engine_args.catalogue = a.record.parent().map(Path::to_path_buf);
            }
            let r = engine(&engine_args)?.move_component(&mut record, &a.deployment, &a.host);
            write_record(&a.record, &record)?;
            Ok(r?)
        }
    }
}

fn node_start(config: &Path) -> Result<()> {
    let cfg = NodeConfig::load(config).map_err(|e| usage(e.to_string()))?;
    let server = ThinServer::start(&cfg)?;
    println!("fire-port: {}", server.fire_port());
    std::io::stdout().flush()?;
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .context("installing signal handler")?;
    let _ = rx.recv();
    server.shutdown();
    Ok(())
}

fn print_status(st: &NodeStatus) {
    println!("node {}:{}", st.host, st.fire_port);
    for m in &st.machines {
        let key = m.bundle_key.as_ref().map(|k| k.as_str()).unwrap_or("-");
        println!("machine {} entity={} entry={} bundle={}", m.id, m.entity, m.entry, key);
        for (name, state) in &m.channels {
            println!("  channel {name} {state}");
        }
    }
    for k in &st.store_keys {
        println!("store {k}");
    }
    for name in &st.store_names {
        println!("name {name}");
    }
}

fn entity_op(node: &str, signer: &Signer, op: &EntityOp) -> Result<()> {
    let bundle = entity_admin_bundle(signer, op);
    let report = fire_remote(node, &bundle, TIMEOUT, DEFAULT_MAX_FRAME)
        .and_then(|mut m| m.read_report(TIMEOUT))
        .with_context(|| format!("firing at {node}"))?;
    match report.first_failure() {
        None => Ok(()),
        Some(r) => bail!("{}", r.error().unwrap_or("entity operation failed")),
    }
}

fn engine(a: &EngineArgs) -> Result<Engine> {
    let config = EngineConfig {
        default_fire_port: a.fire_port,
        catalogue: a.catalogue.clone(),
        parallel_wiring: !a.sequential,
        ..EngineConfig::default()
    };
    let progress = Arc::new(|e: &EngineEvent| {
        if let EngineEvent::Progress { .. } = e {
            println!("{e}");
        }
    });
    Ok(Engine::new(load_signer(&a.signer)?, config).with_observer(progress))
}

fn load_signer(a: &SignerArgs) -> Result<Signer> {
    let key = PrivateKey::from_pem(&read_text(&a.key)?).with_context(|| a.key.display().to_string())?;
    Ok(Signer::new(entity_id(&a.entity)?, key))
}

fn entity_id(s: &str) -> Result<EntityId> {
    EntityId::new(s).map_err(|e| usage(e.to_string()))
}

fn parse_connection(s: &str) -> Result<Connection> {
    let end = |e: &str| -> Result<Endpoint> {
        let (d, c) = e
            .trim()
            .split_once('.')
            .ok_or_else(|| usage(format!("{e:?} is not Deployment.channel")))?;
        Ok(Endpoint::new(d, c))
    };
    let (src, dst) = s.split_once("->").ok_or_else(|| usage(format!("{s:?} lacks ->")))?;
    Ok(Connection::new(end(src)?, end(dst)?))
}

fn read(p: &Path) -> Result<Vec<u8>> {
    fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn load_record(p: &Path) -> Result<DeploymentRecord> {
    DeploymentRecord::parse(&read(p)?).with_context(|| p.display().to_string())
}

fn write_record(p: &Path, r: &DeploymentRecord) -> Result<()> {
    fs::write(p, r.to_bytes()).with_context(|| p.display().to_string())
}

fn write_private(p: &Path, contents: &str) -> std::io::Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    opts.open(p)?.write_all(contents.as_bytes())
}
