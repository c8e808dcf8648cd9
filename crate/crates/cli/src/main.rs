//! `logicnet` command-line tool.

mod report;
mod settings;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use logicnet::datasets::{generate_kinship, load_dataset, save_dataset, DatasetError, KinshipSpec};
use logicnet::gnn::{Checkpoint, InferenceNet};
use logicnet::gradcheck::{gradient_suite, CheckResult};
use logicnet::kb::{build_factor_graph, KnowledgeBase, WorldMode};
use logicnet::mln::MlnModel;
use logicnet::oracles::{aligned, mean_field_tv, random_instance, GroundMarkovNet, MAX_EXACT_ATOMS};
use logicnet::trainer::{posterior_table, run_em, run_inference, EpochMetrics};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "logicnet",
    version,
    about = "Markov logic inference and learning with a graph-neural posterior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic kinship dataset
    GenKinship {
        #[arg(long, default_value_t = 62)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the posterior with fixed rule weights and score the queries
    Infer(RunArgs),
    /// Alternate posterior fitting and rule-weight learning
    Learn(RunArgs),
    /// Recompute metrics from a saved checkpoint
    Eval(RunArgs),
    /// Compare the trained posterior with exact enumeration and Gibbs sampling
    Oracle(RunArgs),
    /// Finite-difference check of every backward pass
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// Dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file (infer, eval) or directory (learn)
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value settings file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path (default: <data>/checkpoint.json)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Treat unobserved non-query atoms as false
    #[arg(long)]
    closed_world: bool,
    #[arg(long)]
    gnn_dim: Option<usize>,
    #[arg(long)]
    tune_dim: Option<usize>,
    /// Message-passing rounds
    #[arg(long)]
    steps: Option<usize>,
    /// Ground formulae per E-step batch
    #[arg(long)]
    batch: Option<usize>,
    /// Weight of the observed-fact log-likelihood term
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Ground formulae sampled per M-step epoch
    #[arg(long)]
    budget: Option<usize>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = Settings::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            s.set("seed", v);
        }
        if let Some(v) = self.threads {
            s.set("threads", v);
        }
        if self.closed_world {
            s.set("closed-world", true);
        }
        let flags = [
            ("gnn-dim", self.gnn_dim.map(|v| v.to_string())),
            ("tune-dim", self.tune_dim.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("budget", self.budget.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v);
            }
        }
        Ok(s)
    }

    fn data_dir(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    fn checkpoint_path(&self) -> Result<PathBuf, CliError> {
        match &self.checkpoint {
            Some(p) => Ok(p.clone()),
            None => Ok(self.data_dir()?.join("checkpoint.json")),
        }
    }
}

fn set_threads(s: &Settings) -> Result<(), CliError> {
    if let Some(n) = s.threads()? {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    Ok(())
}

fn load(args: &RunArgs, s: &Settings) -> Result<(KnowledgeBase, MlnModel), CliError> {
    let mode = if s.closed_world()? {
        WorldMode::Closed
    } else {
        WorldMode::Open
    };
    Ok(load_dataset(args.data_dir()?, mode)?)
}

fn print_epoch(m: &EpochMetrics) {
    println!("{}", m.to_tsv());
}

fn fresh_net(kb: &KnowledgeBase, s: &Settings) -> Result<InferenceNet, CliError> {
    let seed = s.seed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    InferenceNet::new(s.gnn_config()?, kb, &mut rng, seed).map_err(|e| CliError::Usage(e.to_string()))
}

fn save_checkpoint(path: &Path, net: &InferenceNet, model: &MlnModel) -> Result<(), CliError> {
    net.to_checkpoint(model.weights())
        .save(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn finish(kb: &KnowledgeBase, net: &InferenceNet, predictions: Option<&Path>) -> Result<(), CliError> {
    let graph = build_factor_graph(kb);
    let posteriors = report::query_posteriors(kb, net, &graph)?;
    if let Some(p) = predictions {
        report::write_predictions(p, kb, &posteriors)?;
    }
    let metrics = report::compute_metrics(kb, net, &graph, &posteriors)?;
    print!("{}", metrics.to_tsv());
    Ok(())
}

fn cmd_gen_kinship(n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let spec = KinshipSpec {
        n_entities: n,
        seed,
        ..KinshipSpec::default()
    };
    let data = generate_kinship(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(out, &data.kb, &data.model)?;
    println!(
        "entities\t{}\nfacts\t{}\nqueries\t{}\nrules\t{}",
        data.kb.num_entities(),
        data.kb.num_observed(),
        data.kb.num_queries(),
        data.model.len()
    );
    Ok(())
}

fn cmd_infer(args: &RunArgs) -> Result<(), CliError> {
    let s = args.settings()?;
    set_threads(&s)?;
    let (kb, model) = load(args, &s)?;
    let mut net = fresh_net(&kb, &s)?;
    let cfg = s.train_config()?;
    println!("{}", EpochMetrics::TSV_HEADER);
    run_inference(&kb, &model, &mut net, &cfg, &mut print_epoch).map_err(CliError::runtime)?;
    save_checkpoint(&args.checkpoint_path()?, &net, &model)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.data.clone().unwrap_or_default().join("predictions.json"));
    finish(&kb, &net, Some(&out))
}

fn cmd_learn(args: &RunArgs) -> Result<(), CliError> {
    let mut s = args.settings()?;
    // observed facts supervise the posterior while weights are learned
    s.default_to("lambda", 1.0);
    set_threads(&s)?;
    let (kb, mut model) = load(args, &s)?;
    let mut net = fresh_net(&kb, &s)?;
    let cfg = s.train_config()?;
    println!("{}", EpochMetrics::TSV_HEADER);
    run_em(&kb, &mut model, &mut net, &cfg, &mut print_epoch).map_err(CliError::runtime)?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => args.data_dir()?.to_path_buf(),
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let rules = out.join("rules.learned.txt");
    std::fs::write(&rules, model.to_rules_text(&kb))
        .map_err(|e| CliError::Data(format!("{}: {e}", rules.display())))?;
    let ck = match &args.checkpoint {
        Some(p) => p.clone(),
        None => out.join("checkpoint.json"),
    };
    save_checkpoint(&ck, &net, &model)?;
    finish(&kb, &net, Some(&out.join("predictions.json")))
}

fn cmd_eval(args: &RunArgs) -> Result<(), CliError> {
    let s = args.settings()?;
    set_threads(&s)?;
    let (kb, _) = load(args, &s)?;
    let path = args.checkpoint_path()?;
    let ck = Checkpoint::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let net = InferenceNet::from_checkpoint(&ck).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if net.num_entities() != kb.num_entities() {
        return Err(CliError::Data(format!(
            "{}: checkpoint has {} entities, dataset has {}",
            path.display(),
            net.num_entities(),
            kb.num_entities()
        )));
    }
    finish(&kb, &net, args.out.as_deref())
}

fn cmd_oracle(args: &RunArgs) -> Result<(), CliError> {
    let mut s = args.settings()?;
    for (key, value) in [
        ("gnn-dim", "8"),
        ("tune-dim", "8"),
        ("steps", "1"),
        ("hidden", "16"),
        ("pred-dim", "4"),
        ("head-hidden", "16"),
        ("lr", "0.003"),
        ("lr-patience", "5"),
        ("epochs", "100"),
        ("steps-per-epoch", "25"),
        ("exhaustive-cap", "10000"),
    ] {
        s.default_to(key, value);
    }
    set_threads(&s)?;
    let seed = s.seed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kb, model) = match &args.data {
        Some(_) => load(args, &s)?,
        None => loop {
            if let Some(inst) = random_instance(&mut rng, 12) {
                break inst;
            }
        },
    };
    let gmn = GroundMarkovNet::build(&kb, &model, MAX_EXACT_ATOMS).map_err(CliError::runtime)?;
    let exact = gmn.exact(&model).map_err(CliError::runtime)?;
    let gibbs = gmn
        .gibbs(&model, 10_000, 100_000, &mut rng)
        .map_err(CliError::runtime)?;
    let mut net = fresh_net(&kb, &s)?;
    let cfg = s.train_config()?;
    run_inference(&kb, &model, &mut net, &cfg, &mut |_| {}).map_err(CliError::runtime)?;
    let graph = build_factor_graph(&kb);
    let q = posterior_table(&net, &graph, gmn.latent_atoms()).map_err(CliError::runtime)?;

    println!("atom\texact\tgibbs\tposterior");
    for (atom, p) in &exact.marginals {
        println!("{}\t{p:.6}\t{:.6}\t{:.6}", kb.display_atom(atom), gibbs[atom], q[atom]);
    }
    let tv = mean_field_tv(&q, &exact.marginals).map_err(CliError::runtime)?;
    let gibbs_tv = mean_field_tv(&gibbs, &exact.marginals).map_err(CliError::runtime)?;
    let qmap: HashMap<_, _> = q.iter().map(|(a, v)| (*a, *v)).collect();
    let qv = aligned(&gmn, &qmap).expect("posterior covers every latent atom");
    let kl = gmn.mean_field_kl(&model, &qv, exact.log_z);
    let (_, best) = gmn.best_mean_field(&model, 20, &mut rng).map_err(CliError::runtime)?;
    println!("latent\t{}", gmn.num_latent());
    println!("log_z\t{}", exact.log_z);
    println!("posterior_tv_mean\t{}\nposterior_tv_max\t{}", tv.mean, tv.max);
    println!("gibbs_tv_max\t{}", gibbs_tv.max);
    println!("posterior_kl\t{kl}\nbest_coordinate_ascent_kl\t{best}");
    Ok(())
}

fn print_check(name: &str, r: &CheckResult) {
    println!(
        "{name}\tmax_rel_error={:.3e}\tchecked={}\tskipped={}\t{}",
        r.max_rel_error,
        r.checked,
        r.skipped,
        if r.passes() { "ok" } else { "FAIL" }
    );
}

fn cmd_gradcheck(seed: u64) -> Result<(), CliError> {
    let suite = gradient_suite(seed);
    print_check("mlp", &suite.mlp);
    print_check("posterior_head", &suite.head);
    print_check("estep_loss", &suite.estep);
    println!("max_rel_error\t{:e}", suite.max());
    if suite.passes() {
        Ok(())
    } else {
        Err(CliError::Check(format!("max relative error {:e}", suite.max())))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenKinship { n, seed, out } => cmd_gen_kinship(n, seed, &out),
        Command::Infer(a) => cmd_infer(&a),
        Command::Learn(a) => cmd_learn(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
