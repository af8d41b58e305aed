//! `murmurscope` command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use murmurscope::config::CONFIG_ENV;
use murmurscope::evaluate::evaluate_corpus;
use murmurscope::explain::{case_explanation, contrastive, counterfactual, CaseStore, Explanation};
use murmurscope::render::{render_abductive, render_contrastive, render_counterfactual};
use murmurscope::report::{analyze_recording, apply_external_probs};
use murmurscope::segmentation::load_mask;
use murmurscope::signal::read_wav;
use murmurscope::synth::{generate_corpus, write_corpus};
use murmurscope::{CaseReport, Config, Diagnosis, Error};

#[derive(Parser, Debug)]
#[command(name = "murmurscope", version, about = "Abductive murmur-shape diagnosis of PCG recordings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Directory for every written artifact.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for corpus work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for synthetic generation.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Override a config key, e.g. `--set hypothesis.parsimony_rho=0.1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze a WAV recording; writes `<stem>_w<k>.json` and `.svg` per window.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic ground-truth corpus into the output directory.
    Synth(SynthArgs),
    /// Run the pipeline over a corpus and write metrics, confusion and case CSVs.
    Evaluate {
        corpus: PathBuf,
    },
    /// Append analyzed reports to a case store.
    Store {
        /// Report JSON files written by `analyze`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        /// Also keep the abductive diagram next to the store.
        #[arg(long)]
        svg: bool,
    },
    /// Print the k best-fitting stored cases of a diagnosis as JSON.
    Retrieve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        diagnosis: Diagnosis,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Render a diagram from a report JSON.
    Render {
        report: PathBuf,
        /// abductive, contrastive or counterfactual:<DIAGNOSIS>.
        #[arg(long, default_value = "abductive")]
        kind: String,
    },
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    wav: PathBuf,
    /// Extra explanations: contrastive, counterfactual:<DIAGNOSIS>, case:<k> (needs --store).
    #[arg(long, value_delimiter = ',')]
    explain: Vec<String>,
    /// Murmur mask JSON replacing the segmenter for every window.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// JSON object of external class probabilities, e.g. {"AS":0.7,...}.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Case store used by `--explain case:<k>`.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Signal-to-noise ratio in dB, or `inf` for noiseless.
    #[arg(long, default_value = "inf")]
    snr: String,
}

/// `println!` that treats a closed stdout (e.g. piped into `head`) as a
/// normal end of output.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let mut out = std::io::stdout().lock();
        if let Err(e) = writeln!(out, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

/// Extra explanation requested on the command line.
#[derive(Debug, Clone, PartialEq)]
enum ExplainRequest {
    Contrastive,
    Counterfactual(Diagnosis),
    Case(usize),
}

fn parse_explain(s: &str) -> anyhow::Result<ExplainRequest> {
    let s = s.trim();
    match s.split_once(':') {
        None if s.eq_ignore_ascii_case("contrastive") => Ok(ExplainRequest::Contrastive),
        Some((k, y)) if k.eq_ignore_ascii_case("counterfactual") => Ok(ExplainRequest::Counterfactual(
            y.parse().map_err(|e| input(anyhow!("--explain {s}: {e}")))?,
        )),
        Some((k, n)) if k.eq_ignore_ascii_case("case") => Ok(ExplainRequest::Case(
            n.parse().map_err(|_| input(anyhow!("--explain {s}: k must be a count")))?,
        )),
        _ => Err(input(anyhow!(
            "unknown explanation '{s}' (expected contrastive, counterfactual:<Y> or case:<k>)"
        ))),
    }
}

/// Marker for errors that should exit with code 2.
#[derive(Debug)]
struct InputError(anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(InputError(e))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<InputError>()) {
        return 2;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_input_error() => 2,
        Some(_) => 1,
        None if e.chain().any(|c| c.is::<std::io::Error>() || c.is::<serde_json::Error>()) => 2,
        None => 1,
    }
}

fn load_config(g: &Global) -> anyhow::Result<Config> {
    let mut cfg = Config::resolve(g.config.as_deref())?;
    for o in &g.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_report(path: &Path) -> anyhow::Result<CaseReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CaseReport::from_json(&text).with_context(|| format!("parsing report {}", path.display()))
}

fn cmd_analyze(g: &Global, cfg: &Config, a: &AnalyzeArgs) -> anyhow::Result<()> {
    let requests = a.explain.iter().filter(|s| !s.trim().is_empty()).map(|s| parse_explain(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let store = match (requests.iter().any(|r| matches!(r, ExplainRequest::Case(_))), &a.store) {
        (true, None) => return Err(input(anyhow!("--explain case:<k> needs --store"))),
        (true, Some(p)) => Some(CaseStore::open(p)?),
        _ => None,
    };
    let decoded = read_wav(&a.wav)?;
    let mask = a.mask.as_ref().map(load_mask).transpose()?;
    let external: Option<BTreeMap<Diagnosis, f64>> = match &a.external {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).map_err(|e| input(anyhow!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let stem = a.wav.file_stem().map_or_else(|| "recording".into(), |s| s.to_string_lossy().into_owned());
    let source = a.wav.display().to_string();

    let mut reports = analyze_recording(&decoded.waveform, &stem, Some(&source), mask.as_ref(), cfg)?;
    if let Some(ext) = &external {
        for r in &mut reports {
            apply_external_probs(r, ext, cfg.hypothesis.blend_weight)?;
        }
    }

    std::fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    for r in &mut reports {
        r.warnings.extend(decoded.warnings.iter().cloned());
        let base = g.out_dir.join(&r.instance_id);
        write(&base.with_extension("svg"), &render_abductive(r, &cfg.render))?;
        for req in &requests {
            match req {
                ExplainRequest::Contrastive => {
                    write(&g.out_dir.join(format!("{}.contrastive.svg", r.instance_id)), &render_contrastive(r, &cfg.render))?;
                    let e = contrastive(r);
                    r.explanations.push(e);
                }
                ExplainRequest::Counterfactual(y) => match counterfactual(r, *y) {
                    Ok(e) => {
                        if let Explanation::Counterfactual(x) = &e {
                            let path = g.out_dir.join(format!("{}.counterfactual_{y}.svg", r.instance_id));
                            write(&path, &render_counterfactual(x, &cfg.render))?;
                        }
                        r.explanations.push(e);
                    }
                    Err(err) => {
                        warn!("{}: {err}", r.instance_id);
                        r.warnings.push(err.to_string());
                    }
                },
                ExplainRequest::Case(k) => {
                    let store = store.as_ref().expect("opened above");
                    r.explanations.push(case_explanation(store, r.resolved, *k));
                }
            }
        }
        write(&base.with_extension("json"), &r.to_json()?)?;
        info!("{}: {} ({})", r.instance_id, r.resolved, r.ranking.reason);
        emit!("{}\t{}\t{}", r.instance_id, r.resolved, r.phase);
    }
    Ok(())
}

fn parse_snr(s: &str) -> anyhow::Result<Option<f64>> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") || s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| input(anyhow!("--snr '{s}' is not a number or 'inf'")))?;
    if !v.is_finite() {
        return Err(input(anyhow!("--snr must be finite or 'inf'")));
    }
    Ok(Some(v))
}

fn cmd_synth(g: &Global, cfg: &Config, a: &SynthArgs) -> anyhow::Result<()> {
    let snr = parse_snr(&a.snr)?;
    let per: BTreeMap<Diagnosis, usize> = Diagnosis::ALL.iter().map(|&y| (y, a.per_class)).collect();
    let corpus = with_pool(g.workers, || generate_corpus(&cfg.synth, &per, snr, g.seed))??;
    let manifest = write_corpus(&g.out_dir, &corpus)?;
    emit!("{} cases -> {}", corpus.cases.len(), manifest.display());
    Ok(())
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    Ok(b.build().map_err(|e| input(anyhow!("--workers: {e}")))?.install(f))
}

fn cmd_evaluate(g: &Global, cfg: &Config, corpus: &Path) -> anyhow::Result<()> {
    let eval = evaluate_corpus(corpus, cfg, &g.out_dir, g.workers)?;
    let r = &eval.result;
    emit!(
        "cases={} accuracy={:.4} mean_dice={:.4} -> {}",
        r.n_cases,
        r.classes.accuracy,
        r.mean_dice,
        g.out_dir.display()
    );
    Ok(())
}

fn cmd_store(cfg: &Config, reports: &[PathBuf], store: &Path, svg: bool) -> anyhow::Result<()> {
    let mut s = CaseStore::open(store)?;
    for p in reports {
        let r = read_report(p).map_err(input)?;
        let rec = s.store_case(&r)?;
        if svg {
            s.attach_svg(&rec.id, &render_abductive(&r, &cfg.render))?;
        }
        emit!("{}\t{}\t{}", rec.id, rec.resolved, rec.instance_id);
    }
    Ok(())
}

fn cmd_retrieve(store: &Path, y: Diagnosis, k: usize) -> anyhow::Result<()> {
    let s = CaseStore::open(store)?;
    let got = s.retrieve_cases(y, k);
    for w in &got.warnings {
        warn!("{w}");
    }
    emit!("{}", serde_json::to_string_pretty(&got)?);
    Ok(())
}

fn cmd_render(g: &Global, cfg: &Config, report: &Path, kind: &str) -> anyhow::Result<()> {
    let r = read_report(report).map_err(input)?;
    let (svg, name) = match parse_explain(kind) {
        _ if kind.eq_ignore_ascii_case("abductive") => (render_abductive(&r, &cfg.render), format!("{}.svg", r.instance_id)),
        Ok(ExplainRequest::Contrastive) => (render_contrastive(&r, &cfg.render), format!("{}.contrastive.svg", r.instance_id)),
        Ok(ExplainRequest::Counterfactual(y)) => {
            let Explanation::Counterfactual(x) = counterfactual(&r, y)? else {
                unreachable!("counterfactual returns its own kind")
            };
            (render_counterfactual(&x, &cfg.render), format!("{}.counterfactual_{y}.svg", r.instance_id))
        }
        Ok(ExplainRequest::Case(_)) => bail!(input(anyhow!("case explanations have no diagram; use retrieve"))),
        Err(e) => return Err(e),
    };
    std::fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    let path = g.out_dir.join(name);
    write(&path, &svg)?;
    emit!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global)?;
    let g = &cli.global;
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(g, &cfg, a),
        Command::Synth(a) => cmd_synth(g, &cfg, a),
        Command::Evaluate { corpus } => cmd_evaluate(g, &cfg, corpus),
        Command::Store { reports, store, svg } => cmd_store(&cfg, reports, store, *svg),
        Command::Retrieve { store, diagnosis, k } => cmd_retrieve(store, *diagnosis, *k),
        Command::Render { report, kind } => cmd_render(g, &cfg, report, kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explain_requests_parse() {
        assert_eq!(parse_explain("contrastive").unwrap(), ExplainRequest::Contrastive);
        assert_eq!(
            parse_explain("counterfactual:MS").unwrap(),
            ExplainRequest::Counterfactual(Diagnosis::MS)
        );
        assert_eq!(parse_explain("case:3").unwrap(), ExplainRequest::Case(3));
        assert!(parse_explain("counterfactual:XX").is_err());
        assert_eq!(exit_code(&parse_explain("bogus").unwrap_err()), 2);
    }

    #[test]
    fn snr_parsing() {
        assert_eq!(parse_snr("inf").unwrap(), None);
        assert_eq!(parse_snr("20").unwrap(), Some(20.0));
        assert!(parse_snr("loud").is_err());
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let e: anyhow::Error = Error::InvalidInput("x".into()).into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = Error::Contract("x".into()).into();
        assert_eq!(exit_code(&e), 1);
    }
}
