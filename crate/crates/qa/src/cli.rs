//! Argument parsing and command dispatch. Exit codes: 0 success, 1 domain
//! or pipeline error, 2 I/O or usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qa_core::assess::{emit_report, ReportFormat, WhatIfChange};
use qa_core::{derive_net, validate_model};

use crate::bundle::{load_model, load_plan, Bundle, BundlePaths, LoadError};
use crate::server::SessionView;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qa",
    version,
    about = "Probabilistic security quality assessment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a quality model and list its violations.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Derive the Bayesian net of a model and write it as JSON.
    Derive {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long = "emit-net")]
        emit_net: PathBuf,
    },
    /// Run a full assessment and write the report.
    Assess {
        #[command(flatten)]
        bundle: BundleArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Evaluate hypothetical node states on top of an assessment.
    Whatif {
        #[command(flatten)]
        bundle: BundleArgs,
        /// `node=state`; repeatable. An empty state retracts an observation.
        #[arg(long = "set", required = true, value_name = "NODE=STATE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Serve the what-if HTTP API and web UI.
    Serve {
        #[command(flatten)]
        bundle: BundleArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
    },
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub system: PathBuf,
    /// Scanner reports; any number, including none.
    #[arg(long, num_args = 1..)]
    pub findings: Vec<PathBuf>,
    #[arg(long, default_value = "normalized")]
    pub adapter: String,
}

impl BundleArgs {
    fn paths(&self) -> BundlePaths {
        BundlePaths {
            model: self.model.clone(),
            plan: self.plan.clone(),
            taxonomy: self.taxonomy.clone(),
            system: self.system.clone(),
            findings: self.findings.clone(),
            adapter: self.adapter.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Text => ReportFormat::Text,
        }
    }
}

/// A failed command: exit code plus message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn domain(message: impl ToString) -> Self {
        Self {
            code: EXIT_DOMAIN,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => Failure::io(e),
            _ => Failure::domain(e),
        }
    }
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "qa: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Validate { model } => validate(&model, stdout),
        Command::Derive {
            model,
            plan,
            emit_net,
        } => {
            let model = load_model(&model)?;
            let plan = load_plan(&plan)?;
            let (net, map) =
                derive_net(&model, &plan).map_err(|e| Failure::domain(format!("derive: {e}")))?;
            let doc = serde_json::json!({ "nodes": net.nodes(), "map": map });
            let mut text = serde_json::to_string_pretty(&doc).expect("net serializes");
            text.push('\n');
            write_file(&emit_net, &text)?;
            let _ = writeln!(
                stdout,
                "{} nodes written to {}",
                net.nodes().len(),
                emit_net.display()
            );
            Ok(())
        }
        Command::Assess {
            bundle,
            out,
            format,
        } => {
            let b = Bundle::load(&bundle.paths())?;
            warn_foreign_reports(&b);
            let assessment = b.assess()?;
            let r = &assessment.report;
            write_file(&out, &emit_report(r, format.into()))?;
            let _ = writeln!(
                stdout,
                "{}: density mean {:.6}, sd {:.6}, expected vulnerabilities {:.3}",
                r.system.name, r.density_mean, r.density_sd, r.expected_vuln_count
            );
            Ok(())
        }
        Command::Whatif {
            bundle,
            set,
            out,
            format,
        } => {
            let b = Bundle::load(&bundle.paths())?;
            let assessment = b.assess()?;
            let mut session = assessment.session("cli");
            for spec in &set {
                let (node, state) = spec.split_once('=').ok_or_else(|| {
                    Failure::io(format!("--set expects NODE=STATE, got `{spec}`"))
                })?;
                let change = if state.is_empty() {
                    WhatIfChange::Retract {
                        node: node.to_string(),
                    }
                } else {
                    session
                        .set_by_label(node, state)
                        .map_err(|e| Failure::domain(format!("whatif: {e}")))?
                };
                session
                    .apply(change)
                    .map_err(|e| Failure::domain(format!("whatif: {e}")))?;
            }
            let view = SessionView::build(&assessment, &session)
                .map_err(|e| Failure::domain(format!("whatif: {e}")))?;
            let rendered = match format {
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&view).expect("view serializes");
                    s.push('\n');
                    s
                }
                Format::Text => render_view(&view, assessment.report.density_mean),
            };
            match out {
                Some(path) => write_file(&path, &rendered)?,
                None => {
                    let _ = write!(stdout, "{rendered}");
                }
            }
            Ok(())
        }
        Command::Serve { bundle, port, bind } => {
            let b = Bundle::load(&bundle.paths())?;
            warn_foreign_reports(&b);
            let assessment = b.assess()?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(Failure::io)?;
            runtime
                .block_on(crate::server::serve(
                    assessment,
                    SocketAddr::new(bind, port),
                ))
                .map_err(|e| Failure::io(format!("serve: {e}")))
        }
    }
}

fn validate(path: &Path, stdout: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(path)?;
    let report = validate_model(&model);
    for v in &report.violations {
        let _ = writeln!(stdout, "{v}");
    }
    if report.is_valid() {
        Ok(())
    } else {
        let n = report.violations.len();
        Err(Failure::domain(format!(
            "validate: {n} violation{}",
            if n == 1 { "" } else { "s" }
        )))
    }
}

fn warn_foreign_reports(b: &Bundle) {
    for r in b.reports.iter().filter(|r| r.system != b.system.id) {
        log::warn!("ignoring {} report for system `{}`", r.scanner, r.system);
    }
}

fn render_view(view: &SessionView, base_mean: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "density mean {:.6} (base {:.6}), sd {:.6}",
        view.density_mean, base_mean, view.density_sd
    );
    for (node, state) in &view.overrides {
        let _ = writeln!(
            out,
            "override {node} = {}",
            state.as_deref().unwrap_or("(retracted)")
        );
    }
    for p in &view.posteriors {
        if p.node == view.metric_node {
            continue;
        }
        let dist: Vec<String> = p
            .states
            .iter()
            .zip(&p.probabilities)
            .map(|(s, q)| format!("{s} {q:.3}"))
            .collect();
        let _ = writeln!(out, "{:<40} {}", p.node, dist.join("  "));
    }
    out
}
