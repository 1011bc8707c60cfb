//! The `hypercone` command-line entry point.
//!
//! Six subcommands cover the full experiment cycle: `gen-data` writes a
//! synthetic concept tree, `train` optimizes embeddings and exports them,
//! `grad-check` verifies analytic gradients against finite differences,
//! `eval` scores an embedding store against a label file, `project` writes
//! plot-ready 2D tables, and `compare` runs a seeded two-arm loss-mode
//! experiment end to end.
//!
//! Conventions shared by every subcommand:
//!
//! * Exit codes: 0 success, 1 I/O or file-format failure, 2 usage errors
//!   (bad flags, bad config keys, unknown ids), 3 numeric failures
//!   (non-finite losses or inputs), 4 verification failures (gradient
//!   check below tolerance).
//! * Determinism: a single `--seed` feeds named sub-streams (dataset,
//!   batching), so identical flags produce byte-identical outputs. No
//!   environment variables are consulted and all work is single-threaded.
//! * Commands with an `--out-dir` write the fully resolved run
//!   configuration next to their outputs; dataset files are
//!   self-describing through their header line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{mode_name, parse_mode, substream_seed, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    auc_roc, average_precision, kendall_tau, load_pep_input, p_ent, pep_collect,
    pep_input_from_tree, recall_at_k, retrieval_degree, select_negative_pool, MetricReport,
    PepInput,
};
use crate::geometry::{geodesic_distance, LorentzPoint};
use crate::gradcheck::{check_instance, read_replay_file, run_grid};
use crate::hierarchy::{
    derive_pairs, generate_tree, load_dataset, save_dataset, HierarchyDataset,
};
use crate::losses::PairRelation;
use crate::projection::{
    norm_distribution, project_2d, write_norm_csv, write_projection_csv, ProjectionMethod,
};
use crate::store::{EmbeddingStore, Role};
use crate::trainer::{checkpoint, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

/// Maps an error to its documented exit code.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. } | Error::Parse { .. } | Error::UnsupportedVersion { .. } => EXIT_IO,
        Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::CurvatureMismatch { .. }
        | Error::UnknownId(_)
        | Error::UndefinedMetric(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Degenerate(_) | Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
    }
}

#[derive(Parser)]
#[command(
    name = "hypercone",
    version,
    about = "Hierarchical embeddings in the Lorentz model: generate, train, verify, evaluate, project."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic concept tree and write it as a dataset file.
    GenData(GenDataArgs),
    /// Train embeddings on a dataset; write trace, checkpoints and store.
    Train(TrainArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Score an embedding store against a label file.
    Eval(EvalArgs),
    /// Export 2D projections and norm histograms of a store.
    Project(ProjectArgs),
    /// Train and evaluate two configs differing only in loss mode.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Children per internal node.
    #[arg(long, default_value_t = 3)]
    branching: usize,
    /// Tree depth (root at level 0).
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Feature dimensionality.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Parent-to-child feature noise.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Master seed (the generator draws its `dataset` sub-stream).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the tree's evaluation label file (SAMPLE/NEGPOOL lines)
    /// here: one sample per leaf, pool of all leaf captions.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Directory for trace, checkpoints, store and resolved config.
    #[arg(long)]
    out_dir: PathBuf,
    /// Base configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Loss mode: `adaent` or `vanilla_ent`.
    #[arg(long)]
    mode: Option<String>,
    /// Entailment-term weight.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Regularizer weight.
    #[arg(long)]
    gamma2: Option<f64>,
    /// Huber transition point of the adaptive entailment term.
    #[arg(long)]
    beta: Option<f64>,
    /// Aperture multiplier of the hinge entailment term.
    #[arg(long)]
    eta: Option<f64>,
    /// Checkpoint period in steps (0 = final checkpoint only).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Initial tangent scale (defaults to 1/sqrt(512)).
    #[arg(long)]
    scale_init: Option<f64>,
    /// Export the store in the binary format instead of text.
    #[arg(long, default_value_t = false)]
    binary_store: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Seed of the instance generator.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Restrict to grid cases whose name contains this string
    /// (e.g. `adaent`, `contrastive`, `regularizer`).
    #[arg(long)]
    loss: Option<String>,
    /// Restrict to one curvature of the verification grid.
    #[arg(long)]
    kappa: Option<f64>,
    /// Directory for failure replay files.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Re-check one dumped instance instead of running the grid.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Embedding store (text or binary).
    #[arg(long)]
    store: PathBuf,
    /// Label file with SAMPLE and NEGPOOL lines.
    #[arg(long)]
    labels: PathBuf,
    /// Directory for report files and resolved config.
    #[arg(long)]
    out_dir: PathBuf,
    /// Base configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recall cutoff; repeat for several cutoffs.
    #[arg(long = "k")]
    k: Vec<usize>,
    /// Rank threshold for retrieval-degree computations.
    #[arg(long)]
    rank_threshold: Option<usize>,
    /// Replace the label file's pool with the n lowest-retrieval-degree
    /// text records of the store.
    #[arg(long)]
    auto_negatives: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Embedding store (text or binary).
    #[arg(long)]
    store: PathBuf,
    /// Directory for the projection and histogram tables.
    #[arg(long)]
    out_dir: PathBuf,
    /// Projection method: `tangent_pca` or `poincare_axes`.
    #[arg(long, default_value = "tangent_pca")]
    method: String,
    /// Histogram bin count.
    #[arg(long, default_value_t = crate::projection::DEFAULT_NORM_BINS)]
    bins: usize,
    /// Comma-separated role filter for the histogram
    /// (image, caption, node_a, node_b).
    #[arg(long)]
    roles: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// First run configuration.
    #[arg(long)]
    config_a: PathBuf,
    /// Second run configuration; may differ from the first only in mode.
    #[arg(long)]
    config_b: PathBuf,
    /// Number of seeded repetitions (master seeds `seed .. seed + n`).
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Directory for the per-seed table, reports and resolved configs.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let outcome = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Project(args) => cmd_project(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match outcome {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error}");
            exit_code(&error)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    let dataset = generate_tree(
        args.branching,
        args.depth,
        args.dim,
        args.sigma,
        substream_seed(args.seed, "dataset"),
    )?;
    save_dataset(&dataset, &args.out)?;
    if let Some(labels) = &args.labels {
        let input = pep_input_from_tree(&dataset)?;
        crate::evaluation::save_pep_input(&input, labels)?;
        println!("wrote {}", labels.display());
    }
    let pairs = derive_pairs(&dataset);
    let inter = pairs
        .entailment
        .iter()
        .filter(|p| p.relation == PairRelation::Inter)
        .count();
    let intra = pairs.entailment.len() - inter;
    println!("wrote {}", args.out.display());
    println!("nodes = {}", dataset.len());
    println!("alignment_pairs = {}", pairs.alignment.len());
    println!("inter_pairs = {inter}");
    println!("intra_pairs = {intra}");
    Ok(EXIT_OK)
}

/// Loads the base config (or defaults) and applies flag overrides.
fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
        config.rederive_seeds();
    }
    if let Some(v) = args.steps {
        config.train.steps = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.warmup {
        config.train.warmup_steps = v;
    }
    if let Some(v) = args.weight_decay {
        config.train.weight_decay = v;
    }
    if let Some(mode) = &args.mode {
        config.train.mode = parse_mode(mode)?;
    }
    if let Some(v) = args.gamma1 {
        config.train.loss.gamma1 = v;
    }
    if let Some(v) = args.gamma2 {
        config.train.loss.gamma2 = v;
    }
    if let Some(v) = args.beta {
        config.train.loss.beta = v;
    }
    if let Some(v) = args.eta {
        config.train.loss.eta = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.train.checkpoint_every = v;
    }
    if let Some(v) = args.scale_init {
        config.train.scale_init = Some(v);
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut config = resolve_train_config(&args)?;
    let dataset = load_dataset(&args.data)?;
    config.dataset.branching = dataset.branching();
    config.dataset.depth = dataset.depth();
    config.dataset.dim = dataset.dim();
    config.dataset.noise_sigma = dataset.noise_sigma();
    config.paths.data = args.data.display().to_string();
    config.paths.out_dir = args.out_dir.display().to_string();
    ensure_dir(&args.out_dir)?;

    let trainer = Trainer::new(&dataset, config.train.clone())?;
    let mut state = trainer.init_state()?;
    let mut trace = String::from(
        "step,learning_rate,total,contrastive,entailment,adaent,regularizer,\
         skipped_pairs,kappa,tau,scale,invalid_fraction\n",
    );
    let every = config.train.checkpoint_every;
    for _ in 0..config.train.steps {
        let record = trainer.train_step(&mut state)?;
        let invalid = trainer.norm_statistics(&state).all.invalid_fraction;
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            record.step,
            record.learning_rate,
            record.loss.total,
            record.loss.contrastive,
            record.loss.entailment,
            record.loss.adaent,
            record.loss.regularizer,
            record.loss.skipped_pairs,
            record.kappa,
            record.tau,
            record.scale,
            invalid
        );
        if every > 0 && state.step() % every == 0 {
            checkpoint(
                &state,
                &args.out_dir.join(format!("checkpoint_{:06}.ckpt", state.step())),
            )?;
        }
    }
    let trace_path = args.out_dir.join("trace.csv");
    std::fs::write(&trace_path, &trace).map_err(|e| Error::io(&trace_path, e))?;
    checkpoint(&state, &args.out_dir.join("final.ckpt"))?;
    let store_path = args
        .out_dir
        .join(if args.binary_store { "embeddings.lemb" } else { "embeddings.emb" });
    trainer.export_embeddings(&state, &store_path)?;
    config.save(&args.out_dir.join("config.resolved.txt"))?;

    let stats = trainer.norm_statistics(&state);
    println!("trained {} steps ({})", state.step(), mode_name(config.train.mode));
    println!("kappa = {}", state.scalars().kappa());
    println!("tau = {}", state.scalars().tau());
    println!("scale = {}", state.scalars().scale());
    println!("invalid_fraction = {}", stats.all.invalid_fraction);
    println!("wrote {}", trace_path.display());
    println!("wrote {}", store_path.display());
    Ok(EXIT_OK)
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<i32> {
    if let Some(replay) = &args.replay {
        let instance = read_replay_file(replay)?;
        let outcome = check_instance(&instance)?;
        println!("case = {}", instance.case);
        println!("checked = {}", outcome.checked);
        println!("max_rel_err = {}", outcome.max_rel_err);
        println!("worst = {}", outcome.worst_coordinate);
        if outcome.failures.is_empty() {
            println!("passed = true");
            return Ok(EXIT_OK);
        }
        for failure in &outcome.failures {
            println!("failure: {failure}");
        }
        println!("passed = false");
        return Ok(EXIT_VERIFICATION);
    }
    if let Some(dir) = &args.dump_dir {
        ensure_dir(dir)?;
    }
    let report = run_grid(
        args.seed,
        args.dump_dir.as_deref(),
        args.loss.as_deref(),
        args.kappa,
    )?;
    print!("{}", report.render());
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFICATION })
}

/// Replaces the pool with the `n` text records of lowest retrieval degree,
/// scoring retrieval by geodesic proximity to each sample image.
fn auto_negative_pool(
    store: &EmbeddingStore,
    input: &PepInput,
    n: usize,
    degree_k: usize,
) -> Result<Vec<String>> {
    let candidates: Vec<&str> = store
        .records()
        .iter()
        .filter(|r| r.role.is_text_like())
        .map(|r| r.id.as_str())
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidParameter(
            "store holds no text records to build a pool from".to_string(),
        ));
    }
    let mut similarity = Vec::with_capacity(input.samples.len());
    for sample in &input.samples {
        let image = &store
            .get(&sample.image)
            .ok_or_else(|| Error::UnknownId(sample.image.clone()))?
            .point;
        let mut row = Vec::with_capacity(candidates.len());
        for id in &candidates {
            let text = &store.get(id).expect("candidate ids come from the store").point;
            row.push(-geodesic_distance(image, text)?);
        }
        similarity.push(row);
    }
    let degrees = retrieval_degree(&similarity, degree_k.min(candidates.len()))?;
    let pool = select_negative_pool(&degrees, n)?;
    Ok(pool.into_iter().map(|i| candidates[i].to_string()).collect())
}

/// Mean rank correlation between each sample's caption levels ordered by
/// entailment probability (ascending) and their file order (coarse to
/// fine). Finer captions sit angularly closer to their image, so rising
/// probability along the chain is the concordant direction; probability
/// ties keep file order, so a fully saturated chain correlates perfectly.
fn mean_level_kendall(store: &EmbeddingStore, input: &PepInput) -> Result<f64> {
    let reference: Vec<usize> = (0..input.levels).collect();
    let mut sum = 0.0;
    for sample in &input.samples {
        let image = &store
            .get(&sample.image)
            .ok_or_else(|| Error::UnknownId(sample.image.clone()))?
            .point;
        let mut scores = Vec::with_capacity(input.levels);
        for caption in &sample.captions {
            let text = &store
                .get(caption)
                .ok_or_else(|| Error::UnknownId(caption.clone()))?
                .point;
            scores.push(p_ent(image, text)?);
        }
        let mut predicted: Vec<usize> = reference.clone();
        predicted.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .expect("probabilities are finite")
                .then(a.cmp(&b))
        });
        sum += kendall_tau(&predicted, &reference)?;
    }
    Ok(sum / input.samples.len() as f64)
}

/// Recall of each image's finest caption among the finest captions and the
/// negative pool.
fn finest_caption_recall(
    store: &EmbeddingStore,
    input: &PepInput,
    k: usize,
) -> Result<f64> {
    let mut candidate_ids: Vec<&str> = Vec::new();
    for sample in &input.samples {
        if !candidate_ids.contains(&sample.finest_caption()) {
            candidate_ids.push(sample.finest_caption());
        }
    }
    for id in &input.negative_pool {
        if !candidate_ids.contains(&id.as_str()) {
            candidate_ids.push(id);
        }
    }
    let resolve = |id: &str| -> Result<LorentzPoint> {
        store
            .get(id)
            .map(|r| r.point.clone())
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let candidates: Vec<LorentzPoint> = candidate_ids
        .iter()
        .map(|id| resolve(id))
        .collect::<Result<_>>()?;
    let queries: Vec<LorentzPoint> = input
        .samples
        .iter()
        .map(|s| resolve(&s.image))
        .collect::<Result<_>>()?;
    let ground_truth: Vec<Vec<usize>> = input
        .samples
        .iter()
        .map(|s| {
            vec![candidate_ids
                .iter()
                .position(|id| *id == s.finest_caption())
                .expect("finest captions were inserted above")]
        })
        .collect();
    recall_at_k(&queries, &candidates, &ground_truth, k)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !args.k.is_empty() {
        config.eval.recall_k = args.k.clone();
    }
    if let Some(v) = args.rank_threshold {
        config.eval.rank_threshold = v;
    }
    config.paths.store = args.store.display().to_string();
    config.paths.labels = args.labels.display().to_string();
    config.paths.out_dir = args.out_dir.display().to_string();
    config.validate()?;

    let store = EmbeddingStore::load(&args.store)?;
    let mut input = load_pep_input(&args.labels)?;
    if let Some(n) = args.auto_negatives {
        input.negative_pool =
            auto_negative_pool(&store, &input, n, config.eval.rank_threshold)?;
    }
    let scored = pep_collect(&store, &input)?;

    let mut report = MetricReport::new();
    report.push("pep.entries", scored.len() as f64)?;
    report.push("pep.positives", scored.positives() as f64)?;
    report.push("pep.negatives", scored.negatives() as f64)?;
    report.push("pep.auc", auc_roc(&scored)?)?;
    report.push("pep.average_precision", average_precision(&scored)?)?;
    if input.levels >= 2 {
        report.push("pep.kendall_tau", mean_level_kendall(&store, &input)?)?;
    }
    for &k in &config.eval.recall_k {
        report.push(
            &format!("retrieval.recall_at_{k}"),
            finest_caption_recall(&store, &input, k)?,
        )?;
    }

    ensure_dir(&args.out_dir)?;
    report.save_text(&args.out_dir.join("report.txt"))?;
    report.save_json(&args.out_dir.join("report.json"))?;
    config.save(&args.out_dir.join("config.resolved.txt"))?;
    print!("{}", report.render_text());
    Ok(EXIT_OK)
}

fn parse_method(name: &str) -> Result<ProjectionMethod> {
    match name {
        "tangent_pca" => Ok(ProjectionMethod::TangentPca),
        "poincare_axes" => Ok(ProjectionMethod::PoincareAxes),
        other => Err(Error::InvalidParameter(format!(
            "unknown projection method `{other}` (expected tangent_pca or poincare_axes)"
        ))),
    }
}

fn parse_roles(list: &str) -> Result<Vec<Role>> {
    list.split(',')
        .map(|token| {
            let token = token.trim();
            Role::parse(token)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown role `{token}`")))
        })
        .collect()
}

fn cmd_project(args: ProjectArgs) -> Result<i32> {
    let method = parse_method(&args.method)?;
    let roles = args.roles.as_deref().map(parse_roles).transpose()?;
    let store = EmbeddingStore::load(&args.store)?;
    let result = project_2d(&store, method)?;
    let histogram = norm_distribution(&store, args.bins, roles.as_deref())?;
    ensure_dir(&args.out_dir)?;
    let projection_path = args.out_dir.join("projection.csv");
    let norms_path = args.out_dir.join("norms.csv");
    write_projection_csv(&result, &projection_path)?;
    write_norm_csv(&histogram, &norms_path)?;
    println!("method = {}", method.as_str());
    if let Some(explained) = result.explained_variance {
        println!("explained_variance = {explained}");
    }
    println!("wrote {}", projection_path.display());
    println!("wrote {}", norms_path.display());
    Ok(EXIT_OK)
}

/// One trained-and-evaluated arm of a comparison.
struct ArmOutcome {
    auc: f64,
    ap: f64,
    invalid: f64,
}

fn run_arm(config: &RunConfig, master: u64, dataset: &HierarchyDataset) -> Result<ArmOutcome> {
    let mut train = config.train.clone();
    train.seed = substream_seed(master, "batching");
    let trainer = Trainer::new(dataset, train)?;
    let mut state = trainer.init_state()?;
    trainer.run(&mut state, config.train.steps)?;
    let store = trainer.export_store(&state)?;
    let input = pep_input_from_tree(dataset)?;
    let scored = pep_collect(&store, &input)?;
    Ok(ArmOutcome {
        auc: auc_roc(&scored)?,
        ap: average_precision(&scored)?,
        invalid: trainer.norm_statistics(&state).all.invalid_fraction,
    })
}

fn cmd_compare(args: CompareArgs) -> Result<i32> {
    if args.seeds == 0 {
        return Err(Error::InvalidParameter(
            "comparison needs at least one seed".to_string(),
        ));
    }
    let config_a = RunConfig::load(&args.config_a)?;
    let config_b = RunConfig::load(&args.config_b)?;
    let mut b_with_a_mode = config_b.clone();
    b_with_a_mode.train.mode = config_a.train.mode;
    if b_with_a_mode != config_a {
        return Err(Error::InvalidParameter(
            "comparison configs may differ only in the loss mode".to_string(),
        ));
    }

    ensure_dir(&args.out_dir)?;
    let mut table = String::from(
        "seed,auc_a,auc_b,delta_auc,ap_a,ap_b,delta_ap,invalid_a,invalid_b,delta_invalid\n",
    );
    let mut sums = [0.0f64; 9];
    for i in 0..args.seeds {
        let master = config_a.seed + i as u64;
        let dataset = generate_tree(
            config_a.dataset.branching,
            config_a.dataset.depth,
            config_a.dataset.dim,
            config_a.dataset.noise_sigma,
            substream_seed(master, "dataset"),
        )?;
        let a = run_arm(&config_a, master, &dataset)?;
        let b = run_arm(&config_b, master, &dataset)?;
        let row = [
            a.auc,
            b.auc,
            b.auc - a.auc,
            a.ap,
            b.ap,
            b.ap - a.ap,
            a.invalid,
            b.invalid,
            b.invalid - a.invalid,
        ];
        for (sum, value) in sums.iter_mut().zip(&row) {
            *sum += value;
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(table, "{master},{}", cells.join(","));
    }
    let means: Vec<String> = sums
        .iter()
        .map(|s| (s / args.seeds as f64).to_string())
        .collect();
    let _ = writeln!(table, "mean,{}", means.join(","));
    let table_path = args.out_dir.join("compare.csv");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;

    let mut report = MetricReport::new();
    report.push("compare.seeds", args.seeds as f64)?;
    for (key, index) in [
        ("compare.mean_auc_a", 0usize),
        ("compare.mean_auc_b", 1),
        ("compare.mean_delta_auc", 2),
        ("compare.mean_ap_a", 3),
        ("compare.mean_ap_b", 4),
        ("compare.mean_delta_ap", 5),
        ("compare.mean_invalid_a", 6),
        ("compare.mean_invalid_b", 7),
        ("compare.mean_delta_invalid", 8),
    ] {
        report.push(key, sums[index] / args.seeds as f64)?;
    }
    report.save_text(&args.out_dir.join("report.txt"))?;
    report.save_json(&args.out_dir.join("report.json"))?;
    config_a.save(&args.out_dir.join("config_a.resolved.txt"))?;
    config_b.save(&args.out_dir.join("config_b.resolved.txt"))?;

    println!(
        "arm a = {}, arm b = {}",
        mode_name(config_a.train.mode),
        mode_name(config_b.train.mode)
    );
    println!("mean_delta_auc = {}", sums[2] / args.seeds as f64);
    println!("mean_delta_ap = {}", sums[5] / args.seeds as f64);
    println!("mean_delta_invalid = {}", sums[8] / args.seeds as f64);
    println!("wrote {}", table_path.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_table() {
        let io = Error::io("x", std::io::Error::other("gone"));
        assert_eq!(exit_code(&io), EXIT_IO);
        assert_eq!(exit_code(&Error::parse("x", 1, "bad")), EXIT_IO);
        assert_eq!(
            exit_code(&Error::UnsupportedVersion {
                path: "x".into(),
                found: "v9".into(),
                expected: "v1".into()
            }),
            EXIT_IO
        );
        assert_eq!(exit_code(&Error::InvalidParameter("bad".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::UnknownId("n7b".into())), EXIT_USAGE);
        assert_eq!(
            exit_code(&Error::DimensionMismatch { expected: 2, got: 3 }),
            EXIT_USAGE
        );
        assert_eq!(exit_code(&Error::NonFinite("loss".into())), EXIT_NUMERIC);
        assert_eq!(
            exit_code(&Error::NonFiniteLoss { step: 3, pairs: vec![] }),
            EXIT_NUMERIC
        );
        assert_eq!(exit_code(&Error::Degenerate("origin".into())), EXIT_NUMERIC);
    }

    #[test]
    fn method_and_role_parsers_accept_documented_names() {
        assert_eq!(parse_method("tangent_pca").unwrap(), ProjectionMethod::TangentPca);
        assert_eq!(parse_method("poincare_axes").unwrap(), ProjectionMethod::PoincareAxes);
        assert!(parse_method("horo_pca").is_err());
        assert_eq!(
            parse_roles("node_a, node_b").unwrap(),
            vec![Role::NodeA, Role::NodeB]
        );
        assert!(parse_roles("node_a,phantom").is_err());
    }

    #[test]
    fn cli_definition_is_internally_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
