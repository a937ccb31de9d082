//! `debias` command-line driver.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 data errors,
//! 4 training divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use debias_core::baseline::{train_baseline, BiasProjection};
use debias_core::bias_space::{build_subspace, neutral_set, BiasSpec, Category};
use debias_core::checkpoint::Checkpoint;
use debias_core::downstream::{delta, train_eval, ClassifierRun, DeltaReport, LabeledCorpus};
use debias_core::dsd::{train_dsd, GramLoss, TrainConfig};
use debias_core::embedding::EmbeddingSet;
use debias_core::grad::OptimizerKind;
use debias_core::manifest::{FileDigest, RunManifest};
use debias_core::metrics::{
    crows_score, mac, mac_significance, stereotype_score, CrowsReport, MacReport, SsReport, DEFAULT_PERMUTATIONS,
};
use debias_core::synthetic::gender_fixture;
use debias_core::tokenize::TokenizerConfig;
use debias_core::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "debias", version, about = "Measure and remove bias in word embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a debiasing map and write the transformed embeddings.
    Debias(DebiasArgs),
    /// Compute bias metrics for one embedding set, or compare two.
    Eval(EvalArgs),
    /// Run baseline and network trainers with SGD and Adam and compare MAC.
    Ablate(AblateArgs),
    /// Write the synthetic gender fixture to a directory.
    Fixture(FixtureArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Baseline,
    Dsd,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Dsd => "dsd",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OptimizerFlag {
    Adam,
    Sgd,
}

impl From<OptimizerFlag> for OptimizerKind {
    fn from(f: OptimizerFlag) -> Self {
        match f {
            OptimizerFlag::Adam => OptimizerKind::Adam,
            OptimizerFlag::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LossFlag {
    Gram,
    LiteralOrthonormal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProjectionFlag {
    Fixed,
    Transformed,
}

#[derive(Args, Debug)]
struct TrainFlags {
    /// Weight of the bias-projection term, in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = debias_core::dsd::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerFlag>,
    /// First loss term of the network trainer.
    #[arg(long, value_enum, default_value = "gram")]
    loss: LossFlag,
    /// Whether the baseline also transforms the bias subspace.
    #[arg(long, value_enum, default_value = "fixed")]
    projection: ProjectionFlag,
    /// Neutral rows sampled per step (default: the batch size).
    #[arg(long)]
    neutral_sample: Option<usize>,
}

impl TrainFlags {
    fn config(&self, dim: usize) -> TrainConfig {
        let mut c = TrainConfig::for_dim(dim);
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.blocks {
            c.blocks = v;
        }
        if let Some(v) = self.optimizer {
            c.optimizer = v.into();
        }
        c.seed = self.seed;
        c.neutral_sample = self.neutral_sample;
        c.loss = match self.loss {
            LossFlag::Gram => GramLoss::GramPreserving,
            LossFlag::LiteralOrthonormal => GramLoss::LiteralOrthonormal,
        };
        c.projection = match self.projection {
            ProjectionFlag::Fixed => BiasProjection::Fixed,
            ProjectionFlag::Transformed => BiasProjection::Transformed,
        };
        c
    }
}

#[derive(Args, Debug)]
struct DebiasArgs {
    /// word2vec text file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Bias spec file, or `builtin:gender|race|religion`.
    #[arg(long)]
    bias_spec: String,
    #[arg(long, value_enum)]
    method: Method,
    /// Output embeddings; `<out>.ckpt` and `<out>.manifest.json` are written
    /// next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    Mac,
    Ss,
    Crows,
    Downstream,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// One embedding file, or two (biased, debiased) to compare.
    #[arg(long, num_args = 1..=2, value_delimiter = ',', required = true)]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    bias_spec: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mac")]
    metrics: Vec<Metric>,
    /// StereoSet data (JSON lines or the public layout).
    #[arg(long)]
    stereoset: Option<PathBuf>,
    /// CrowS-Pairs CSV.
    #[arg(long)]
    crows: Option<PathBuf>,
    /// Labelled sentences, `sentence<TAB>label` with a header.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    n_perm: usize,
    #[arg(long, default_value_t = debias_core::dsd::DEFAULT_SEED)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    bias_spec: String,
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = debias_core::dsd::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self { code, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::Debias(a) => cmd_debias(&a, &echo),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a, &echo),
        Command::Fixture(a) => cmd_fixture(&a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn load_spec(arg: &str) -> Result<(BiasSpec, Option<PathBuf>), Failure> {
    if let Some(name) = arg.strip_prefix("builtin:") {
        let category = match name {
            "gender" => Category::Gender,
            "race" => Category::Race,
            "religion" => Category::Religion,
            other => return Err(Failure::usage(format!("unknown builtin spec {other:?}"))),
        };
        return Ok((BiasSpec::builtin(category).expect("shipped"), None));
    }
    Ok((BiasSpec::load(arg)?, Some(PathBuf::from(arg))))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Trained output plus the checkpoint and manifest that go with it.
struct Trained {
    embeddings: EmbeddingSet,
    checkpoint: Checkpoint,
    manifest: RunManifest,
}

fn train(method: Method, set: &EmbeddingSet, spec: &BiasSpec, cfg: &TrainConfig) -> debias_core::Result<Trained> {
    let subspace = build_subspace(set, spec)?;
    let neutral = neutral_set(set, spec)?;
    Ok(match method {
        Method::Baseline => {
            let out = train_baseline(set, &subspace, &neutral, cfg)?;
            Trained {
                checkpoint: out.checkpoint(),
                embeddings: out.embeddings,
                manifest: out.manifest,
            }
        }
        Method::Dsd => {
            let out = train_dsd(set, &subspace, &neutral, cfg)?;
            Trained {
                checkpoint: out.checkpoint(),
                embeddings: out.embeddings,
                manifest: out.manifest,
            }
        }
    })
}

/// Writes embeddings, checkpoint and manifest for one run. Returns the
/// manifest as written.
fn write_run(
    trained: Trained,
    out: &Path,
    inputs: &[&Path],
    command: &[String],
    started: Instant,
) -> Result<RunManifest, Failure> {
    let ckpt = suffixed(out, ".ckpt");
    trained.embeddings.save_word2vec_text(out)?;
    trained.checkpoint.save(&ckpt)?;
    let mut manifest = trained.manifest;
    manifest.command = command.to_vec();
    manifest.inputs = inputs.iter().map(FileDigest::of).collect::<Result<_, _>>()?;
    manifest.outputs = vec![FileDigest::of(out)?, FileDigest::of(&ckpt)?];
    manifest.timings.total_seconds = started.elapsed().as_secs_f64();
    manifest.save(suffixed(out, ".manifest.json"))?;
    Ok(manifest)
}

fn save_last_good(err: Error, out: &Path) -> Failure {
    if let Error::Diverged {
        last_good: Some(ck), ..
    } = &err
    {
        let path = suffixed(out, ".last-good.ckpt");
        match ck.save(&path) {
            Ok(()) => eprintln!("last good checkpoint written to {}", path.display()),
            Err(e) => eprintln!("could not write last good checkpoint: {e}"),
        }
    }
    err.into()
}

fn cmd_debias(a: &DebiasArgs, echo: &[String]) -> CmdResult {
    let started = Instant::now();
    let set = EmbeddingSet::load_word2vec_text(&a.embeddings)?;
    let (spec, spec_path) = load_spec(&a.bias_spec)?;
    let cfg = a.train.config(set.dim());
    cfg.validate()?;
    let trained = train(a.method, &set, &spec, &cfg).map_err(|e| save_last_good(e, &a.out))?;
    let mut inputs: Vec<&Path> = vec![&a.embeddings];
    if let Some(p) = &spec_path {
        inputs.push(p);
    }
    let m = write_run(trained, &a.out, &inputs, echo, started)?;
    println!(
        "{} seed={} blocks={} lr={} batch={} epochs={} -> {}",
        a.method.as_str(),
        m.seed,
        cfg.blocks,
        cfg.lr,
        cfg.batch_size,
        cfg.epochs,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Compared<T> {
    biased: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    debiased: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

#[derive(Serialize)]
struct MacEntry {
    #[serde(flatten)]
    scores: Compared<MacReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_perm: Option<usize>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum DownstreamEntry {
    Single(ClassifierRun),
    Delta(DeltaReport),
}

#[derive(Serialize, Default)]
struct EvalReport {
    embeddings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mac: Option<MacEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stereotype_score: Option<Compared<SsReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    crows: Option<Compared<CrowsReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    downstream: Option<DownstreamEntry>,
}

fn compare<T, F>(sets: &[EmbeddingSet], score: F, value: fn(&T) -> f64) -> Result<Compared<T>, Failure>
where
    F: Fn(&EmbeddingSet) -> debias_core::Result<T>,
{
    let biased = score(&sets[0])?;
    let debiased = sets.get(1).map(&score).transpose()?;
    let delta = debiased.as_ref().map(|d| value(d) - value(&biased));
    Ok(Compared {
        biased,
        debiased,
        delta,
    })
}

fn fmt_row(table: &mut String, name: &str, values: &[Option<f64>]) {
    let _ = write!(table, "{name:<14}");
    for v in values {
        match v {
            Some(v) => {
                let _ = write!(table, "{v:>14.6}");
            }
            None => {
                let _ = write!(table, "{:>14}", "-");
            }
        }
    }
    table.push('\n');
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let sets: Vec<EmbeddingSet> = a
        .embeddings
        .iter()
        .map(EmbeddingSet::load_word2vec_text)
        .collect::<Result<_, _>>()?;
    if sets.len() == 2 && !sets[0].same_vocab(&sets[1]) {
        return Err(Error::VocabMismatch.into());
    }
    let two = sets.len() == 2;
    let tok = TokenizerConfig::default();
    let mut report = EvalReport {
        embeddings: a.embeddings.iter().map(|p| p.display().to_string()).collect(),
        ..Default::default()
    };
    let mut table = String::new();
    if two {
        let _ = writeln!(table, "{:<14}{:>14}{:>14}{:>14}", "metric", "biased", "debiased", "delta");
    } else {
        let _ = writeln!(table, "{:<14}{:>14}", "metric", "value");
    }
    let row = |table: &mut String, name: &str, b: f64, d: Option<f64>, delta: Option<f64>| {
        if two {
            fmt_row(table, name, &[Some(b), d, delta]);
        } else {
            fmt_row(table, name, &[Some(b)]);
        }
    };

    let mut metrics = a.metrics.clone();
    metrics.dedup();
    for metric in metrics {
        match metric {
            Metric::Mac => {
                let spec_arg = a
                    .bias_spec
                    .as_deref()
                    .ok_or_else(|| Failure::usage("--metrics mac needs --bias-spec"))?;
                let (spec, _) = load_spec(spec_arg)?;
                let scores = compare(&sets, |s| mac(s, &spec.targets, &spec.attribute_sets), |r| r.mac)?;
                let p_value = match &scores.debiased {
                    Some(d) => Some(mac_significance(&scores.biased, d, a.n_perm, a.seed)?),
                    None => None,
                };
                row(&mut table, "mac", scores.biased.mac, scores.debiased.as_ref().map(|r| r.mac), scores.delta);
                if let Some(p) = p_value {
                    fmt_row(&mut table, "mac_p_value", &[None, None, Some(p)]);
                }
                report.mac = Some(MacEntry {
                    scores,
                    p_value,
                    n_perm: p_value.map(|_| a.n_perm),
                });
            }
            Metric::Ss => {
                let path = a.stereoset.as_ref().ok_or_else(|| Failure::usage("--metrics ss needs --stereoset"))?;
                let data = debias_core::metrics::import::load_stereo(path)?;
                let scores = compare(&sets, |s| stereotype_score(s, &data, &tok), |r| r.score)?;
                row(&mut table, "ss", scores.biased.score, scores.debiased.as_ref().map(|r| r.score), scores.delta);
                report.stereotype_score = Some(scores);
            }
            Metric::Crows => {
                let path = a.crows.as_ref().ok_or_else(|| Failure::usage("--metrics crows needs --crows"))?;
                let data = debias_core::metrics::import::load_crows(path)?;
                let scores = compare(&sets, |s| crows_score(s, &data, &tok), |r| r.score)?;
                row(&mut table, "crows", scores.biased.score, scores.debiased.as_ref().map(|r| r.score), scores.delta);
                report.crows = Some(scores);
            }
            Metric::Downstream => {
                let path = a
                    .corpus
                    .as_ref()
                    .ok_or_else(|| Failure::usage("--metrics downstream needs --corpus"))?;
                let corpus = LabeledCorpus::load(path)?;
                if two {
                    let d = delta(&sets[0], &sets[1], &corpus, a.seed)?;
                    row(&mut table, "accuracy", d.acc_biased, Some(d.acc_debiased), Some(d.delta));
                    report.downstream = Some(DownstreamEntry::Delta(d));
                } else {
                    let r = train_eval(&sets[0], &corpus, a.seed)?;
                    row(&mut table, "accuracy", r.accuracy, None, None);
                    report.downstream = Some(DownstreamEntry::Single(r));
                }
            }
        }
    }
    print!("{table}");
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", path.display()),
        })?;
    }
    Ok(())
}

fn ensure_empty_dir(dir: &Path, force: bool) -> CmdResult {
    match std::fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() && !force {
                return Err(Failure::usage(format!(
                    "{} is not empty (pass --force to write into it)",
                    dir.display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => std::fs::create_dir_all(dir).map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", dir.display()),
        }),
        Err(e) => Err(Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", dir.display()),
        }),
    }
}

#[derive(Serialize)]
struct AblationRow {
    run: String,
    method: &'static str,
    optimizer: String,
    seed: u64,
    biased_mac: f64,
    mac: f64,
}

pub const ABLATION_RUNS: [(&str, &str); 4] = [
    ("baseline", "sgd"),
    ("baseline", "adam"),
    ("dsd", "sgd"),
    ("dsd", "adam"),
];

fn cmd_ablate(a: &AblateArgs, echo: &[String]) -> CmdResult {
    let set = EmbeddingSet::load_word2vec_text(&a.embeddings)?;
    let (spec, spec_path) = load_spec(&a.bias_spec)?;
    let base_cfg = a.train.config(set.dim());
    base_cfg.validate()?;
    ensure_empty_dir(&a.out, a.force)?;
    let biased = mac(&set.normalize_rows()?, &spec.targets, &spec.attribute_sets)?.mac;
    println!("seed={}", base_cfg.seed);

    let mut inputs: Vec<&Path> = vec![&a.embeddings];
    if let Some(p) = &spec_path {
        inputs.push(p);
    }
    let mut rows = Vec::new();
    for (method, opt) in ABLATION_RUNS {
        let started = Instant::now();
        let method = if method == "dsd" { Method::Dsd } else { Method::Baseline };
        let mut cfg = base_cfg.clone();
        cfg.optimizer = opt.parse()?;
        let name = format!("{}-{opt}", method.as_str());
        let out = a.out.join(format!("{name}.txt"));
        let trained = train(method, &set, &spec, &cfg).map_err(|e| save_last_good(e, &out))?;
        let score = mac(&trained.embeddings, &spec.targets, &spec.attribute_sets)?.mac;
        let m = write_run(trained, &out, &inputs, echo, started)?;
        rows.push(AblationRow {
            run: name,
            method: method.as_str(),
            optimizer: opt.to_string(),
            seed: m.seed,
            biased_mac: biased,
            mac: score,
        });
    }

    let mut tsv = String::from("run\tmethod\toptimizer\tseed\tbiased_mac\tmac\n");
    let mut table = format!("{:<16}{:>8}{:>14}{:>14}\n", "run", "seed", "biased_mac", "mac");
    for r in &rows {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.run, r.method, r.optimizer, r.seed, r.biased_mac, r.mac
        );
        let _ = writeln!(table, "{:<16}{:>8}{:>14.6}{:>14.6}", r.run, r.seed, r.biased_mac, r.mac);
    }
    let write = |name: &str, text: String| {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("{}: {e}", p.display()),
        })
    };
    write("ablation.tsv", tsv)?;
    write(
        "ablation.json",
        serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_fixture(a: &FixtureArgs) -> CmdResult {
    ensure_empty_dir(&a.out, a.force)?;
    let f = gender_fixture(a.seed);
    let io = |p: PathBuf, e: std::io::Error| Failure {
        code: EXIT_DATA,
        msg: format!("{}: {e}", p.display()),
    };
    f.embeddings.save_word2vec_text(a.out.join("embeddings.txt"))?;
    f.spec.save(a.out.join("spec.toml"))?;
    let corpus = a.out.join("corpus.tsv");
    std::fs::write(&corpus, f.corpus.to_tsv()).map_err(|e| io(corpus, e))?;
    let stereo = a.out.join("stereo.jsonl");
    let file = std::fs::File::create(&stereo).map_err(|e| io(stereo.clone(), e))?;
    debias_core::metrics::import::write_stereo_jsonl(&f.stereo, std::io::BufWriter::new(file))?;
    let crows = a.out.join("crows.csv");
    let file = std::fs::File::create(&crows).map_err(|e| io(crows.clone(), e))?;
    debias_core::metrics::import::write_crows_csv(&f.crows, file)?;
    println!("fixture seed={} written to {}", a.seed, a.out.display());
    Ok(())
}
