//! `abmse` command-line interface.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | unexpected internal failure |
//! | 2 | usage error |
//! | 3 | workspace or i/o problem |
//! | 4 | invalid input |
//! | 5 | duplicate (gid, authority, key, workspace) |
//! | 6 | not found |
//! | 7 | permission denied (ownership, role, ACL) |
//! | 8 | threshold authentication rejected |
//! | 9 | one-time URL gone |
//! | 10 | decryption denied by policy |
//! | 11 | ciphertext integrity failure |
//! | 12 | ledger verification failed |

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::bench::{bench_count, bench_length, BenchReport, Tolerances, DEFAULT_COUNTS, DEFAULT_LENGTHS, MIN_TRIALS};
use super::output::{Format, Printer, Record};
use super::scenario::{run_annie, ScenarioOptions, DEFAULT_EHR_SIZE, DEFAULT_POLICY};
use super::workspace::{Workspace, WorkspaceOptions, DATA_DIR_ENV};
use super::{ExitKind, WorkflowError};
use crate::abms::ThresholdSpec;
use crate::attribute::{AttributeDescriptor, AttributeId};
use crate::ledger::{verify_dir, ChainStatus, Grantee, Permission, Receipt};
use crate::maabe::AccessPolicy;

#[derive(Debug, Parser)]
#[command(
    name = "abmse",
    version,
    about = "Threshold attribute-signature authentication and policy encryption for health records"
)]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, env = DATA_DIR_ENV, default_value = "abmse-data", global = true)]
    pub data_dir: PathBuf,
    /// Derive all randomness from this seed (reproducible, not secret).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use this RFC 3339 instant as the current time.
    #[arg(long, global = true, value_parser = parse_instant)]
    pub fixed_clock: Option<DateTime<Utc>>,
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s).map(|d| d.with_timezone(&Utc)).map_err(|e| e.to_string())
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace.
    Setup {
        /// Default lifetime of one-time URLs, in seconds.
        #[arg(long)]
        ttl_secs: Option<i64>,
    },
    #[command(subcommand)]
    Authority(AuthorityCmd),
    #[command(subcommand)]
    Patient(PatientCmd),
    #[command(subcommand)]
    Provider(ProviderCmd),
    #[command(subcommand)]
    Keys(KeysCmd),
    /// Sign an attested attribute value with the wallet's key.
    Sign(SignArgs),
    #[command(subcommand)]
    Profile(ProfileCmd),
    #[command(subcommand)]
    Acl(AclCmd),
    #[command(subcommand)]
    Ehr(EhrCmd),
    #[command(subcommand)]
    Access(AccessCmd),
    #[command(subcommand)]
    Ledger(LedgerCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    #[cfg(feature = "http")]
    #[command(subcommand)]
    Edge(EdgeCmd),
}

#[derive(Debug, Subcommand)]
pub enum AuthorityCmd {
    /// Register an authority and publish keys for its attributes.
    Add {
        id: String,
        #[arg(long)]
        name: Option<String>,
        /// Attribute the authority attests for signing (repeatable).
        #[arg(long = "sign-attr")]
        sign_attrs: Vec<String>,
        /// Attribute the authority issues decryption keys for (repeatable).
        #[arg(long = "abe-attr")]
        abe_attrs: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PatientCmd {
    Register {
        gid: String,
        #[arg(long)]
        name: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProviderCmd {
    Register {
        gid: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        kind: String,
        /// `t/n`: at least t of a patient's n signatures must verify.
        #[arg(long)]
        threshold: ThresholdSpec,
    },
}

#[derive(Debug, Subcommand)]
pub enum KeysCmd {
    /// Have an authority issue a signing key for an attested value.
    Extract {
        #[arg(long)]
        gid: String,
        /// `name@authority`
        #[arg(long)]
        attr: AttributeId,
        #[arg(long)]
        value: String,
    },
    /// Have an authority issue a decryption key.
    AbeIssue {
        #[arg(long)]
        gid: String,
        #[arg(long)]
        attr: AttributeId,
    },
}

#[derive(Debug, Args)]
pub struct SignArgs {
    #[arg(long)]
    pub gid: String,
    #[arg(long)]
    pub attr: AttributeId,
    #[arg(long)]
    pub value: String,
}

#[derive(Debug, Subcommand)]
pub enum ProfileCmd {
    /// Publish the wallet's signatures as the patient's profile.
    Write {
        #[arg(long)]
        gid: String,
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AclCmd {
    Grant {
        #[arg(long)]
        owner: String,
        /// `provider:*`, `provider:<kind>`, or `gid:<gid>`
        #[arg(long)]
        grantee: Grantee,
        /// `read_profile` or `request_access`
        #[arg(long)]
        permission: Permission,
    },
}

#[derive(Debug, Subcommand)]
pub enum EhrCmd {
    Encrypt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Store a ciphertext at the edge and attach it to the owner's profile.
    Upload {
        #[arg(long)]
        gid: String,
        #[arg(long)]
        input: PathBuf,
    },
    /// Redeem a one-time URL.
    Fetch {
        #[arg(long)]
        url: String,
        #[arg(long)]
        output: PathBuf,
    },
    Decrypt {
        #[arg(long)]
        gid: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AccessCmd {
    /// Authenticate the owner's profile and obtain a one-time URL.
    Request {
        #[arg(long)]
        gid: String,
        #[arg(long)]
        owner: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCmd {
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    Length {
        #[arg(long, value_parser = parse_list)]
        lengths: Option<Vec<usize>>,
        #[arg(long, default_value_t = MIN_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 1.25)]
        max_flatness: f64,
        /// Write the full report as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    Count {
        #[arg(long, value_parser = parse_list)]
        counts: Option<Vec<usize>>,
        #[arg(long, default_value_t = MIN_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0.98)]
        min_r2: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Run the full flow for the patient Annie Foster.
    Annie {
        #[arg(long, default_value_t = DEFAULT_EHR_SIZE)]
        ehr_size: usize,
        #[arg(long, default_value = DEFAULT_POLICY)]
        policy: String,
    },
}

#[cfg(feature = "http")]
#[derive(Debug, Subcommand)]
pub enum EdgeCmd {
    /// Serve the workspace's edge store over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: std::net::SocketAddr,
    },
}

fn receipt_record(kind: &str, r: &Receipt) -> Record {
    Record::new(kind)
        .field("seq", r.seq)
        .field("event_id", r.event_id.to_string())
        .field("tx_kind", r.kind)
        .field("timestamp", r.timestamp.to_rfc3339())
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, WorkflowError> {
    fs::read(path).map_err(WorkflowError::io(format!("reading {}", path.display())))
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), WorkflowError> {
    fs::write(path, bytes).map_err(WorkflowError::io(format!("writing {}", path.display())))
}

fn emit_bench<W: Write>(
    out: &mut Printer<W>,
    report: &BenchReport,
    path: Option<&PathBuf>,
) -> Result<(), WorkflowError> {
    for p in &report.points {
        out.emit(
            Record::new("bench_point")
                .field("scenario", report.scenario)
                .field("x", p.x)
                .field("trials", p.trials)
                .field("sign_ms_mean", p.sign_ms.mean)
                .field("sign_ms_stddev", p.sign_ms.stddev)
                .field("verify_ms_mean", p.verify_ms.mean)
                .field("verify_ms_stddev", p.verify_ms.stddev)
                .field("sign_per_attr_ms", p.sign_per_attr_ms)
                .field("verify_per_attr_ms", p.verify_per_attr_ms),
        );
    }
    out.emit(Record::new("bench_checks").field("scenario", report.scenario).field("checks", &report.checks));
    if let Some(path) = path {
        let json = serde_json::to_vec_pretty(report).map_err(WorkflowError::json("encoding report"))?;
        write_file(path, &json)?;
    }
    Ok(())
}

/// Execute a parsed command, writing records to `out`.
pub fn run<W: Write>(cli: Cli, out: &mut Printer<W>) -> Result<(), WorkflowError> {
    let opts = WorkspaceOptions { seed: cli.seed, fixed_clock: cli.fixed_clock, ttl: None };
    let dir = cli.data_dir.clone();
    let open = || Workspace::open(&dir, opts);
    match cli.command {
        Command::Setup { ttl_secs } => {
            if ttl_secs.is_some_and(|t| t <= 0) {
                return Err(WorkflowError::Invalid("ttl must be positive".into()));
            }
            let ws = Workspace::init(&dir, WorkspaceOptions { ttl: ttl_secs.map(Duration::seconds), ..opts })?;
            out.emit(
                Record::new("setup")
                    .field("data_dir", ws.root().display().to_string())
                    .field("curve", ws.config().curve.name())
                    .field("ledger_height", ws.ledger().height()),
            );
        }
        Command::Authority(AuthorityCmd::Add { id, name, sign_attrs, abe_attrs }) => {
            let mut ws = open()?;
            let name = name.unwrap_or_else(|| id.clone());
            for r in ws.add_authority(&id, &name, &sign_attrs, &abe_attrs)? {
                out.emit(receipt_record("authority", &r).field("authority", &id));
            }
        }
        Command::Patient(PatientCmd::Register { gid, name }) => {
            let r = open()?.register_patient(&gid, &name)?;
            out.emit(receipt_record("register", &r).field("gid", gid).field("role", "patient"));
        }
        Command::Provider(ProviderCmd::Register { gid, name, kind, threshold }) => {
            let r = open()?.register_provider(&gid, &name, &kind, threshold)?;
            out.emit(
                receipt_record("register", &r)
                    .field("gid", gid)
                    .field("role", format!("provider:{kind}"))
                    .field("threshold", threshold.to_string()),
            );
        }
        Command::Keys(KeysCmd::Extract { gid, attr, value }) => {
            let desc = AttributeDescriptor::new(attr.authority_id(), attr.name(), value)?;
            let key = open()?.extract(&gid, &desc)?;
            out.emit(
                Record::new("extract")
                    .field("gid", gid)
                    .field("attribute", attr.to_string())
                    .field("issued_at", key.issuance_record.issued_at.to_rfc3339()),
            );
        }
        Command::Keys(KeysCmd::AbeIssue { gid, attr }) => {
            open()?.abe_issue(&gid, &attr)?;
            out.emit(Record::new("abe_issue").field("gid", gid).field("attribute", attr.to_string()));
        }
        Command::Sign(SignArgs { gid, attr, value }) => {
            let sig = open()?.sign(&gid, &attr, &value)?;
            out.emit(
                Record::new("sign")
                    .field("gid", gid)
                    .field("attribute", attr.to_string())
                    .field("signature", sig.signature.to_string())
                    .field("point", sig.signature.projective_display()),
            );
        }
        Command::Profile(ProfileCmd::Write { gid, name }) => {
            let r = open()?.write_profile(&gid, name.as_deref())?;
            out.emit(receipt_record("profile_write", &r).field("gid", gid));
        }
        Command::Acl(AclCmd::Grant { owner, grantee, permission }) => {
            let r = open()?.grant(&owner, grantee.clone(), permission)?;
            out.emit(
                receipt_record("acl_grant", &r).field("grantee", grantee.to_string()).field("permission", permission),
            );
        }
        Command::Ehr(EhrCmd::Encrypt { input, policy, output }) => {
            let policy = AccessPolicy::parse(&policy).map_err(|e| WorkflowError::Invalid(e.to_string()))?;
            let plain = read_file(&input)?;
            let ct = open()?.encrypt(&plain, &policy)?.to_bytes();
            write_file(&output, &ct)?;
            out.emit(
                Record::new("encrypt")
                    .field("policy", policy.to_string())
                    .field("plaintext_bytes", plain.len())
                    .field("ciphertext_bytes", ct.len()),
            );
        }
        Command::Ehr(EhrCmd::Upload { gid, input }) => {
            let ct = read_file(&input)?;
            let (id, r) = open()?.upload(&gid, &ct)?;
            out.emit(receipt_record("upload", &r).field("object_id", id.to_string()));
        }
        Command::Access(AccessCmd::Request { gid, owner }) => {
            let mut ws = open()?;
            let grant = ws.request_access(&gid, &owner);
            let grant = match grant {
                Ok(g) => g,
                Err(e) => {
                    if let Some(tx) = ws.ledger().transactions().last() {
                        out.emit(
                            Record::new("auth_event")
                                .field("seq", tx.seq)
                                .field("event_id", tx.event_id.to_string())
                                .field("outcome", "denied"),
                        );
                    }
                    return Err(e);
                }
            };
            out.emit(
                receipt_record("auth_event", &grant.receipt)
                    .field("outcome", "granted")
                    .field("valid_count", grant.outcome.valid_count())
                    .field("url", &grant.url)
                    .field("expires_at", grant.token.expires_at.to_rfc3339()),
            );
        }
        Command::Ehr(EhrCmd::Fetch { url, output }) => {
            let bytes = open()?.fetch(&url)?;
            write_file(&output, &bytes)?;
            out.emit(Record::new("fetch").field("bytes", bytes.len()));
        }
        Command::Ehr(EhrCmd::Decrypt { gid, input, output }) => {
            let ct = read_file(&input)?;
            let plain = open()?.decrypt(&gid, &ct)?;
            write_file(&output, &plain)?;
            out.emit(Record::new("decrypt").field("bytes", plain.len()));
        }
        Command::Ledger(LedgerCmd::Verify) => {
            let ledger_dir = dir.join("ledger");
            if !ledger_dir.join("chain.log").exists() {
                return Err(WorkflowError::Workspace(format!("no ledger under {}", dir.display())));
            }
            match verify_dir(&ledger_dir)? {
                ChainStatus::Ok { height } => {
                    out.emit(Record::new("ledger_verify").field("status", "ok").field("height", height))
                }
                ChainStatus::Broken { seq, reason } => {
                    out.emit(
                        Record::new("ledger_verify")
                            .field("status", "broken")
                            .field("seq", seq)
                            .field("reason", &reason),
                    );
                    return Err(WorkflowError::ChainBroken { seq, reason });
                }
            }
        }
        Command::Bench(cmd) => {
            let mut rng = cli.seed.map_or_else(ChaCha20Rng::from_entropy, ChaCha20Rng::seed_from_u64);
            match cmd {
                BenchCmd::Length { lengths, trials, max_flatness, output } => {
                    let tol = Tolerances { max_flatness, ..Tolerances::default() };
                    let lengths = lengths.unwrap_or_else(|| DEFAULT_LENGTHS.to_vec());
                    let report = bench_length(&lengths, trials, tol, &mut rng)?;
                    emit_bench(out, &report, output.as_ref())?;
                }
                BenchCmd::Count { counts, trials, min_r2, output } => {
                    let tol = Tolerances { min_r2, ..Tolerances::default() };
                    let counts = counts.unwrap_or_else(|| DEFAULT_COUNTS.to_vec());
                    let report = bench_count(&counts, trials, tol, &mut rng)?;
                    emit_bench(out, &report, output.as_ref())?;
                }
            }
        }
        Command::Scenario(ScenarioCmd::Annie { ehr_size, policy }) => {
            let mut ws = Workspace::open_or_init(&dir, opts).map_err(|e| e.at_step("setup"))?;
            let report = run_annie(&mut ws, &ScenarioOptions { ehr_size, policy })?;
            for s in &report.steps {
                let ids: Vec<String> = s.events.iter().map(|r| r.event_id.to_string()).collect();
                out.emit(Record::new("step").field("step", &s.step).field("detail", &s.detail).field("event_ids", ids));
            }
            out.emit(
                Record::new("scenario")
                    .field("status", "ok")
                    .field("ledger_height", report.ledger_height)
                    .field("object_id", &report.object_id)
                    .field("ehr_sha256", &report.ehr_sha256),
            );
        }
        #[cfg(feature = "http")]
        Command::Edge(EdgeCmd::Serve { addr }) => {
            let store = crate::edge_store::EdgeStore::open(dir.join("edge"))?.with_base_url(format!("http://{addr}"));
            out.emit(Record::new("edge_serve").field("addr", addr.to_string()));
            let rt = tokio::runtime::Runtime::new().map_err(WorkflowError::io("starting runtime"))?;
            rt.block_on(crate::edge_store::http::serve(std::sync::Arc::new(store), addr))
                .map_err(WorkflowError::io(format!("serving on {addr}")))?;
        }
    }
    Ok(())
}

/// Parse `args`, run, report errors on `err`, and return the exit code.
pub fn run_with_args<I, T, W, E>(args: I, out: W, mut err: E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.exit_code() {
                0 => ExitKind::Ok.code(),
                _ => ExitKind::Usage.code(),
            };
        }
    };
    let format = cli.format;
    let mut printer = Printer::new(format, out);
    match run(cli, &mut printer) {
        Ok(()) => ExitKind::Ok.code(),
        Err(e) => {
            let kind = e.exit_kind();
            match format {
                Format::Machine => {
                    let r = Record::new("error")
                        .field("exit_code", kind.code())
                        .field("kind", kind.label())
                        .field("step", e.step())
                        .field("message", e.to_string());
                    let _ = writeln!(err, "{}", r.render(Format::Machine));
                }
                Format::Table => {
                    let _ = writeln!(err, "error ({}, exit {}): {e}", kind.label(), kind.code());
                }
            }
            kind.code()
        }
    }
}

pub fn main() -> i32 {
    run_with_args(std::env::args_os(), std::io::stdout(), std::io::stderr())
}
