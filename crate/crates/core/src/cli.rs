//! Command-line front end. Exit codes: 0 success, compliant or allow;
//! 1 deny or violations; 2 usage or input error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{self, BenchKind, PolicyLevel};
use crate::harness::{
    self, extract_matrix, run_header, sweep_expectations, MatrixContext, DEFAULT_PATH_TEMPLATE,
};
use crate::mesh::{read_capture_log, write_capture_log, EnforcementPoint, Fault, Mesh, SimConfig};
use crate::policy::{
    compile_from_workflow, evaluate, expand_path, poc_policy, AttrValue, AttributeSet, Method, PolicyDocument,
    RequestContext,
};
use crate::stats::{self, StatsReport};
use crate::workflow::{poc_workflow, WorkflowGraph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ztflow", version, about = "Compile, enforce and audit zero-trust workflow policies")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a workflow into a default-deny policy.
    Compile(CompileArgs),
    /// Evaluate one request against a policy.
    Evaluate(EvaluateArgs),
    /// Print the access-control matrix of a policy.
    Matrix(MatrixArgs),
    /// Deploy the simulated mesh and run a sweep or a script.
    Simulate(SimulateArgs),
    /// Check a capture log against a policy.
    Verify(VerifyArgs),
    /// Run the startup or request-duration experiment.
    Bench(BenchArgs),
    /// Analyse a samples CSV.
    Stats(StatsArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct CompileArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "POST")]
    method: Method,
    #[arg(long, default_value = DEFAULT_PATH_TEMPLATE)]
    path_template: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    path: String,
    /// Extra request attribute, `name=value`; repeatable.
    #[arg(long = "attr", value_parser = parse_attr)]
    attrs: Vec<(String, AttrValue)>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(0..24))]
    hour: u8,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(0..24))]
    hour: u8,
    #[arg(long = "attr", value_parser = parse_attr)]
    attrs: Vec<(String, AttrValue)>,
    #[arg(long, default_value = DEFAULT_PATH_TEMPLATE)]
    path_template: String,
    /// Emit JSON instead of a text grid.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["sweep", "script"])))]
struct SimulateArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Perform every possible communication.
    #[arg(long)]
    sweep: bool,
    /// JSON list of steps to run instead of a sweep.
    #[arg(long)]
    script: Option<PathBuf>,
    /// `disable-policy:A`, `plaintext:A,B`, `rogue-edge:A,B` or `tamper-cert:A`; repeatable.
    #[arg(long = "fault")]
    faults: Vec<Fault>,
    /// Base SimConfig JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    enforcement: Option<EnforcementPoint>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..24))]
    hour: Option<u8>,
    #[arg(long, value_delimiter = ',', default_value = "GET,POST")]
    methods: Vec<Method>,
    #[arg(long, default_value = DEFAULT_PATH_TEMPLATE)]
    path_template: String,
    /// Capture log (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    captures: PathBuf,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    kind: BenchKind,
    /// Defaults: no-sidecar,minimal for startup; all five for request.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<PolicyLevel>,
    /// Deployments per level (startup) or requests per communication (request).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Workflow file; the built-in proof-of-concept workflow when omitted.
    #[arg(long)]
    workflow: Option<PathBuf>,
    /// The `minimal` policy; compiled from the workflow when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value = "POST")]
    method: Method,
    #[arg(long, default_value = DEFAULT_PATH_TEMPLATE)]
    path_template: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatsKind {
    Ttest,
    Anova,
    Pairwise,
    All,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long, value_enum, default_value_t = StatsKind::All)]
    kind: StatsKind,
    #[arg(long)]
    input: PathBuf,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

fn parse_attr(s: &str) -> Result<(String, AttrValue), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    if k.is_empty() {
        return Err(format!("empty attribute name in {s:?}"));
    }
    let value = v.parse::<i64>().map_or_else(|_| AttrValue::Str(v.to_owned()), AttrValue::Int);
    Ok((k.to_owned(), value))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Only `timestamp_unix` varies
/// between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub subcommand: String,
    pub args: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub faults: Vec<Fault>,
    pub outputs: Vec<String>,
    pub timestamp_unix: u64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug)]
struct CliError(String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult = Result<i32, CliError>;

struct Ctx<'a> {
    args: Vec<String>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", line.as_ref());
    }

    fn warn(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.err, "{}", line.as_ref());
    }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn hash_file(path: &Path) -> Result<InputFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Ok(InputFile { path: path.display().to_string(), sha256: hex(&Sha256::digest(&bytes)) })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct ManifestParts<'a> {
    subcommand: &'a str,
    inputs: Vec<&'a Path>,
    config: serde_json::Value,
    seed: Option<u64>,
    faults: Vec<Fault>,
    outputs: Vec<&'a Path>,
}

fn write_manifest(ctx: &Ctx<'_>, primary: &Path, parts: ManifestParts<'_>) -> Result<(), CliError> {
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        subcommand: parts.subcommand.to_owned(),
        args: ctx.args.clone(),
        inputs: parts.inputs.into_iter().map(hash_file).collect::<Result<_, _>>()?,
        config: parts.config,
        seed: parts.seed,
        faults: parts.faults,
        outputs: parts.outputs.iter().map(|p| p.display().to_string()).collect(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&manifest_path(primary), text.as_bytes())?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<PolicyDocument, CliError> {
    PolicyDocument::from_json(&read_text(path)?).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn load_workflow(path: &Path) -> Result<WorkflowGraph, CliError> {
    WorkflowGraph::from_json(&read_text(path)?).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn cmd_compile(ctx: &mut Ctx<'_>, a: &CompileArgs) -> CliResult {
    let graph = load_workflow(&a.workflow)?;
    let validation = graph.validate();
    for w in &validation.warnings {
        ctx.warn(format!("warning: {w}"));
    }
    if !validation.is_ok() {
        ctx.warn(format!("{}: invalid workflow", a.workflow.display()));
        for d in &validation.defects {
            ctx.warn(format!("  defect: {d}"));
        }
        return Ok(EXIT_ERROR);
    }
    let policy = compile_from_workflow(&graph, a.method, &a.path_template)?;
    let mut text = policy.to_json();
    text.push('\n');
    write_atomic(&a.out, text.as_bytes())?;
    write_manifest(
        ctx,
        &a.out,
        ManifestParts {
            subcommand: "compile",
            inputs: vec![&a.workflow],
            config: serde_json::json!({ "method": a.method, "path_template": a.path_template }),
            seed: None,
            faults: vec![],
            outputs: vec![&a.out],
        },
    )?;
    ctx.say(format!(
        "{} permissions, {} rules -> {}",
        policy.permission_count(),
        policy.allow_rules.len(),
        a.out.display()
    ));
    Ok(EXIT_OK)
}

fn cmd_evaluate(ctx: &mut Ctx<'_>, a: &EvaluateArgs) -> CliResult {
    let policy = load_policy(&a.policy)?;
    let mut rc = RequestContext::new(&a.user, a.method, &a.path, a.hour)?;
    rc.extra_attributes.extend(a.attrs.iter().cloned());
    let decision = evaluate(&policy, &rc);
    ctx.say(serde_json::to_string(&decision)?);
    Ok(if decision.is_allow() { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_matrix(ctx: &mut Ctx<'_>, a: &MatrixArgs) -> CliResult {
    let policy = load_policy(&a.policy)?;
    let attributes: AttributeSet = a.attrs.iter().cloned().collect();
    let m = extract_matrix(
        &policy,
        &MatrixContext { clock_hour: a.hour, attributes, path_template: a.path_template.clone() },
    );
    if a.json {
        ctx.say(serde_json::to_string_pretty(&m)?);
    } else {
        let _ = write!(ctx.out, "{}", m.render());
        ctx.say(format!("{} allowed cells", m.cell_count()));
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ScriptStep {
    Send {
        src: String,
        dst: String,
        method: Method,
        #[serde(default)]
        path: Option<String>,
        #[serde(default)]
        body: String,
    },
    SetHour(u8),
    Destroy(String),
    Rotate(String),
    Fault(Fault),
    Store {
        agent: String,
        name: String,
        data: String,
    },
}

fn run_script(ctx: &mut Ctx<'_>, mesh: &mut Mesh, steps: &[ScriptStep], template: &str) -> Result<(), CliError> {
    for (i, step) in steps.iter().enumerate() {
        let line = match step {
            ScriptStep::Send { src, dst, method, path, body } => {
                let path = match path {
                    Some(p) => p.clone(),
                    None => expand_path(template, dst)?.as_str().to_owned(),
                };
                match mesh.send(src, dst, *method, &path, body.as_bytes()) {
                    Ok(r) => format!("{src}->{dst} {} {path}: {}", method.as_str(), r.status),
                    Err(e) => format!("{src}->{dst} {} {path}: error: {e}", method.as_str()),
                }
            }
            ScriptStep::SetHour(h) => {
                if *h > 23 {
                    return Err(CliError(format!("step {i}: hour {h} out of range")));
                }
                mesh.set_hour(*h);
                format!("hour set to {h}")
            }
            ScriptStep::Destroy(agent) => {
                mesh.destroy_pod(agent).map_err(|e| CliError(format!("step {i}: {e}")))?;
                format!("destroyed {agent}")
            }
            ScriptStep::Rotate(agent) => match mesh.rotate_identity(agent) {
                Ok(c) => format!("rotated {agent} to serial {}", c.serial),
                Err(e) => format!("rotate {agent}: error: {e}"),
            },
            ScriptStep::Fault(f) => {
                mesh.inject_fault(f.clone()).map_err(|e| CliError(format!("step {i}: {e}")))?;
                format!("fault {f}")
            }
            ScriptStep::Store { agent, name, data } => match mesh.store_data(agent, name, data.as_bytes()) {
                Ok(()) => format!("stored {name} on {agent}"),
                Err(e) => format!("store {name} on {agent}: error: {e}"),
            },
        };
        ctx.say(line);
    }
    Ok(())
}

fn cmd_simulate(ctx: &mut Ctx<'_>, a: &SimulateArgs) -> CliResult {
    let graph = load_workflow(&a.workflow)?;
    let policy = load_policy(&a.policy)?;
    let mut config = match &a.config {
        Some(p) => serde_json::from_str::<SimConfig>(&read_text(p)?)
            .map_err(|e| CliError(format!("{}: {e}", p.display())))?,
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.enforcement {
        config.enforcement_point = e;
    }
    if let Some(h) = a.hour {
        config.start_hour = h;
    }
    let script: Option<Vec<ScriptStep>> = match &a.script {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).map_err(|e| CliError(format!("{}: {e}", p.display())))?),
        None => None,
    };

    let mut mesh = Mesh::deploy(&graph, policy, config)?;
    for f in &a.faults {
        mesh.inject_fault(f.clone())?;
    }
    match &script {
        Some(steps) => run_script(ctx, &mut mesh, steps, &a.path_template)?,
        None => {
            let outcomes = harness::run_sweep(&mut mesh, &a.methods, &a.path_template)?;
            let allowed = outcomes.iter().filter(|o| o.status.is_some_and(|s| s < 400)).count();
            let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
            let n = mesh.pods().len() as u64;
            ctx.say(format!(
                "swept {} communications ({allowed} allowed, {failed} failed), {} check slots",
                outcomes.len(),
                outcomes.len() as u64 * 2 * n
            ));
        }
    }
    let mut buf = Vec::new();
    write_capture_log(&mut buf, mesh.capture_log())?;
    write_atomic(&a.out, &buf)?;
    let mut inputs: Vec<&Path> = vec![&a.workflow, &a.policy];
    inputs.extend(a.config.as_deref());
    inputs.extend(a.script.as_deref());
    write_manifest(
        ctx,
        &a.out,
        ManifestParts {
            subcommand: "simulate",
            inputs,
            config: serde_json::to_value(config)?,
            seed: Some(config.seed),
            faults: a.faults.clone(),
            outputs: vec![&a.out],
        },
    )?;
    ctx.say(format!("{} capture records -> {}", mesh.collect_captures().len(), a.out.display()));
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &mut Ctx<'_>, a: &VerifyArgs) -> CliResult {
    let policy = load_policy(&a.policy)?;
    let file = fs::File::open(&a.captures).map_err(|e| CliError(format!("{}: {e}", a.captures.display())))?;
    let events = read_capture_log(io::BufReader::new(file))?;
    let header = run_header(&events).ok_or_else(|| CliError("capture log has no run header".into()))?;
    let expectations = sweep_expectations(header, &policy)?;
    let report = harness::verify(&events, &expectations)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &a.report {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            write_manifest(
                ctx,
                p,
                ManifestParts {
                    subcommand: "verify",
                    inputs: vec![&a.policy, &a.captures],
                    config: serde_json::Value::Null,
                    seed: None,
                    faults: vec![],
                    outputs: vec![p],
                },
            )?;
        }
        None => {
            let _ = write!(ctx.out, "{text}");
        }
    }
    if report.is_compliant() {
        ctx.say(format!("compliant: {}/{} checks passed", report.passes, report.required_checks));
        Ok(EXIT_OK)
    } else {
        ctx.say(format!(
            "violations: {} in {} case(s); {}/{} checks performed",
            report.violations.len(),
            report.violating_cases().len(),
            report.total_checks,
            report.required_checks
        ));
        for v in report.violations.iter().take(20) {
            ctx.say(format!(
                "  {} at {} {:?}: expected {}, observed {}",
                v.case, v.point.pod, v.point.interface, v.expected, v.observed
            ));
        }
        Ok(EXIT_NEGATIVE)
    }
}

fn cmd_bench(ctx: &mut Ctx<'_>, a: &BenchArgs) -> CliResult {
    let graph = match &a.workflow {
        Some(p) => load_workflow(p)?,
        None => poc_workflow(),
    };
    let minimal = match (&a.policy, &a.workflow) {
        (Some(p), _) => load_policy(p)?,
        (None, Some(_)) => compile_from_workflow(&graph, a.method, &a.path_template)?,
        (None, None) => poc_policy(),
    };
    let levels = if a.levels.is_empty() {
        match a.kind {
            BenchKind::Startup => vec![PolicyLevel::NoSidecar, PolicyLevel::Minimal],
            BenchKind::Request => PolicyLevel::ALL.to_vec(),
        }
    } else {
        a.levels.clone()
    };
    let base = SimConfig { seed: a.seed, ..SimConfig::default() };
    let samples = match a.kind {
        BenchKind::Startup => {
            let n = a.samples.unwrap_or(130);
            bench::run_startup(&graph, &minimal, &levels, n, &base)?
        }
        BenchKind::Request => {
            let n = a.samples.unwrap_or(40);
            bench::run_request(&graph, &minimal, &levels, n, a.method, &a.path_template, &base)?
        }
    };
    let mut buf = Vec::new();
    bench::write_samples_csv(&mut buf, &samples)?;
    write_atomic(&a.out, &buf)?;
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.workflow.as_deref());
    inputs.extend(a.policy.as_deref());
    write_manifest(
        ctx,
        &a.out,
        ManifestParts {
            subcommand: "bench",
            inputs,
            config: serde_json::json!({
                "kind": a.kind,
                "levels": levels,
                "samples": a.samples,
                "method": a.method,
                "sim": base,
            }),
            seed: Some(a.seed),
            faults: vec![],
            outputs: vec![&a.out],
        },
    )?;
    let mut groups: Vec<(String, String, f64, usize)> = Vec::new();
    for s in &samples {
        match groups.iter_mut().find(|g| g.0 == s.scope && g.1 == s.label) {
            Some(g) => {
                g.2 += s.value;
                g.3 += 1;
            }
            None => groups.push((s.scope.clone(), s.label.clone(), s.value, 1)),
        }
    }
    for (scope, label, sum, n) in groups {
        ctx.say(format!("{scope} {label}: n={n} mean={:.6}", sum / n as f64));
    }
    ctx.say(format!("{} samples -> {}", samples.len(), a.out.display()));
    Ok(EXIT_OK)
}

fn cmd_stats(ctx: &mut Ctx<'_>, a: &StatsArgs) -> CliResult {
    let file = fs::File::open(&a.input).map_err(|e| CliError(format!("{}: {e}", a.input.display())))?;
    let scoped = stats::read_samples_csv(file)?;
    let mut report = StatsReport { scopes: Vec::new() };
    for (scope, groups) in &scoped {
        let mut r = stats::analyze_scope(scope, &[])?;
        r.groups = stats::analyze_scope(scope, groups)?.groups;
        match a.kind {
            StatsKind::Ttest => {
                if groups.len() != 2 {
                    return Err(CliError(format!(
                        "t-test needs exactly 2 groups; scope {scope:?} has {}",
                        groups.len()
                    )));
                }
                r.t_test = Some(stats::t_test(&groups[0], &groups[1])?);
            }
            StatsKind::Anova => r.anova = Some(stats::anova(groups)?),
            StatsKind::Pairwise => r.pairwise = stats::pairwise(groups)?,
            StatsKind::All => r = stats::analyze_scope(scope, groups)?,
        }
        report.scopes.push(r);
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &a.out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            write_manifest(
                ctx,
                p,
                ManifestParts {
                    subcommand: "stats",
                    inputs: vec![&a.input],
                    config: serde_json::json!({ "kind": format!("{:?}", a.kind).to_lowercase() }),
                    seed: None,
                    faults: vec![],
                    outputs: vec![p],
                },
            )?;
            for s in &report.scopes {
                if let Some(t) = &s.t_test {
                    ctx.say(format!("{}: t({}) = {:.2}, p = {:.3e}, d = {:.3}", s.scope, t.df, t.t, t.p, t.cohen_d));
                }
                if let Some(f) = &s.anova {
                    ctx.say(format!(
                        "{}: F({}, {}) = {:.2}, p = {:.3e}, eta_p^2 = {:.3}",
                        s.scope, f.df_between, f.df_within, f.f, f.p, f.eta_sq_partial
                    ));
                }
            }
        }
        None => {
            let _ = write!(ctx.out, "{text}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_replay(ctx: &mut Ctx<'_>, a: &ReplayArgs) -> CliResult {
    let manifest: RunManifest = serde_json::from_str(&read_text(&a.manifest)?)
        .map_err(|e| CliError(format!("{}: {e}", a.manifest.display())))?;
    if manifest.args.first().map(String::as_str) == Some("replay") {
        return Err(CliError("a replay manifest cannot be replayed".into()));
    }
    for input in &manifest.inputs {
        let now = hash_file(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut argv = vec!["ztflow".to_owned()];
    argv.extend(manifest.args);
    Ok(run_with(argv, ctx.out, ctx.err))
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let mut ctx = Ctx { args: argv.iter().skip(1).cloned().collect(), out, err };
    let result = match &cli.command {
        Command::Compile(a) => cmd_compile(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Matrix(a) => cmd_matrix(&mut ctx, a),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
        Command::Verify(a) => cmd_verify(&mut ctx, a),
        Command::Bench(a) => cmd_bench(&mut ctx, a),
        Command::Stats(a) => cmd_stats(&mut ctx, a),
        Command::Replay(a) => cmd_replay(&mut ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(CliError(msg)) => {
            ctx.warn(format!("error: {msg}"));
            EXIT_ERROR
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    run_with(argv, &mut io::stdout().lock(), &mut io::stderr().lock())
}
