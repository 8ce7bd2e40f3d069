use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use factgraph::checkpoint::{load_checkpoint, save_checkpoint};
use factgraph::corpus::{
    join_and_split, load_dataset_dir, parse_annotations, parse_conllu, parse_manifest,
    parse_mentions, DatasetSplit, SentenceInstance, Split,
};
use factgraph::embeddings::{load_embeddings, load_embeddings_file, EmbeddingTable};
use factgraph::fixtures::{fixture_selfcheck, EMBEDDINGS, INTRO};
use factgraph::graph::Fault;
use factgraph::metrics::{EvalReport, InstancePrediction};
use factgraph::model::{grad_check_model, prepare_all, PreparedInstance};
use factgraph::structure::write_matrix_tsv;
use factgraph::synth::{generate, SynthSpec};
use factgraph::trainer::{evaluate, predict_all, summary_json, train};
use factgraph::{EfpModel, ModelSpec, TrainConfig};

/// Largest dimension used by `gradcheck`.
const GRADCHECK_MAX_DIM: usize = 8;
const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "factgraph",
    version,
    about = "Event factuality prediction with graph convolution"
)]
struct Cli {
    /// Training configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration or synth spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the checkpoint, log and test predictions.
    Train(TrainArgs),
    /// Score a split with a checkpoint; prints `MAE<TAB>r`.
    Evaluate(EvaluateArgs),
    /// Score event mentions in a CoNLL-U file.
    Predict(PredictArgs),
    /// Compare analytic gradients with central differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic cue corpus.
    Synth(SynthArgs),
    /// Validate the shipped fixtures.
    Selfcheck,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory; repeat to train on several corpora.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Feed the encoder states straight to the attention head.
    #[arg(long)]
    no_structure: bool,
    /// Use the anchor state alone instead of attention pooling.
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    conllu: PathBuf,
    /// `sentence_id<TAB>anchor_index[<TAB>score]` lines.
    #[arg(long)]
    mentions: PathBuf,
    /// Also write the semantic, syntactic and blended matrices per mention.
    #[arg(long)]
    dump_affinity: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Spec file; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain().map(|c| c.to_string()) {
        if !out.ends_with(&cause) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&cause);
        }
    }
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Train(args) => cmd_train(&cli, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
        Command::Predict(args) => cmd_predict(&cli, args),
        Command::Gradcheck(args) => cmd_gradcheck(&cli, args),
        Command::Synth(args) => cmd_synth(&cli, args),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn base_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_data(dirs: &[PathBuf]) -> Result<DatasetSplit> {
    let mut all = DatasetSplit::default();
    for dir in dirs {
        let ds =
            load_dataset_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        all = all.union(ds);
    }
    Ok(all)
}

fn load_table(path: &Path, dim: usize) -> Result<EmbeddingTable> {
    let expected = (dim != 0).then_some(dim);
    Ok(load_embeddings_file(path, expected)?)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = base_config(cli)?;
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    cfg.no_structure |= args.no_structure;
    cfg.no_attention |= args.no_attention;
    cfg.validate()?;

    let data = load_data(&args.data)?;
    let table = load_table(&args.embeddings, cfg.embedding_dim)?;
    let spec = ModelSpec::from_config(&cfg, table.dim())?;
    cfg.embedding_dim = table.dim();
    let train_set = prepare_all(&data.train, &table)?;
    let dev_set = prepare_all(&data.dev, &table)?;
    let test_set = prepare_all(&data.test, &table)?;

    let outcome = train(EfpModel::new(spec, cfg.seed), &cfg, &train_set, &dev_set)?;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &test_set, cfg.clip_eval)?)
    };

    create_out(&cli.out)?;
    save_checkpoint(&cli.out.join("model.ckpt"), &outcome.model, &cfg)?;
    let summary = summary_json(&outcome, test.as_ref());
    write(
        &cli.out.join("train.log"),
        format!("{}{summary}\n", outcome.log_text()),
    )?;
    write(&cli.out.join("config.cfg"), cfg.to_text())?;
    if let Some(report) = &test {
        write(&cli.out.join("test_predictions.tsv"), report.dump())?;
    }

    println!(
        "best epoch {} of {}, dev MAE {}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_dev_mae
    );
    match &test {
        Some(report) => println!("test\t{}\t{}", report.mae, report.r_display()),
        None => println!("test split empty"),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model(cli: &Cli, checkpoint: &Path) -> Result<(EfpModel, TrainConfig)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let loaded = match &cli.config {
        Some(_) => ckpt.into_model_with(&base_config(cli)?),
        None => ckpt.into_model(),
    };
    loaded.with_context(|| format!("loading {}", checkpoint.display()))
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<ExitCode> {
    let (model, cfg) = load_model(cli, &args.checkpoint)?;
    let data = load_data(&args.data)?;
    let split: Split = args.split.into();
    let instances = data.get(split);
    if instances.is_empty() {
        bail!("{split} split is empty");
    }
    let table = load_table(&args.embeddings, cfg.embedding_dim)?;
    let prepared = prepare_all(instances, &table)?;
    let report = evaluate(&model, &prepared, cfg.clip_eval)?;
    create_out(&cli.out)?;
    write(
        &cli.out.join(format!("{split}_predictions.tsv")),
        report.dump(),
    )?;
    println!("{}\t{}", report.mae, report.r_display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<ExitCode> {
    let (model, cfg) = load_model(cli, &args.checkpoint)?;
    let table = load_table(&args.embeddings, cfg.embedding_dim)?;
    let sentences = parse_conllu(&read_text(&args.conllu)?)
        .with_context(|| format!("parsing {}", args.conllu.display()))?;
    let mentions = parse_mentions(&read_text(&args.mentions)?)
        .with_context(|| format!("parsing {}", args.mentions.display()))?;

    let mut instances = Vec::with_capacity(mentions.len());
    for (id, anchor, _) in &mentions {
        let Some(sentence) = sentences.iter().find(|s| &s.id == id) else {
            bail!("mention references unknown sentence {id}");
        };
        if *anchor >= sentence.tokens.len() {
            bail!(
                "anchor {anchor} out of bounds for sentence {id} with {} tokens",
                sentence.tokens.len()
            );
        }
        let inst = SentenceInstance {
            sentence_id: id.clone(),
            tokens: sentence.tokens.clone(),
            anchor_index: *anchor,
            gold_score: 0.0,
        };
        instances.push(PreparedInstance::new(&inst, &table)?);
    }
    let preds = predict_all(&model, &instances, cfg.clip_eval)?;

    create_out(&cli.out)?;
    let mut dump = String::new();
    for (p, (_, _, gold)) in preds.iter().zip(&mentions) {
        let gold = gold.map_or_else(|| "NA".to_string(), |g| g.to_string());
        let alphas: Vec<String> = p.attention.iter().map(f64::to_string).collect();
        dump.push_str(&format!(
            "{}\t{}\t{gold}\t{}\t{}\n",
            p.sentence_id,
            p.anchor_index,
            p.pred,
            alphas.join(",")
        ));
    }
    write(&cli.out.join("predictions.tsv"), dump)?;

    if args.dump_affinity {
        let dir = cli.out.join("affinity");
        create_out(&dir)?;
        for inst in &instances {
            let Some(m) = model.affinity(inst)? else {
                bail!("--dump-affinity needs a model with structure induction");
            };
            for (kind, matrix) in [
                ("semantic", &m.semantic),
                ("syntactic", &m.syntactic),
                ("blended", &m.blended),
            ] {
                let path = dir.join(format!("{}_{}_{kind}.tsv", inst.sentence_id, inst.anchor));
                let mut buf = Vec::new();
                write_matrix_tsv(matrix, &mut buf)?;
                write(&path, buf)?;
            }
        }
    }

    let golds: Option<Vec<f64>> = mentions.iter().map(|m| m.2).collect();
    if let Some(golds) = golds.filter(|g| !g.is_empty()) {
        let with_gold = preds
            .iter()
            .zip(golds)
            .map(|(p, gold)| InstancePrediction { gold, ..p.clone() })
            .collect();
        let report = EvalReport::from_predictions(with_gold)?;
        println!("{}\t{}", report.mae, report.r_display());
    } else {
        println!("{} predictions written", preds.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// The training instance "She left yesterday ." from the intro fixture.
fn gradcheck_instance() -> Result<(SentenceInstance, EmbeddingTable)> {
    let sentences = parse_conllu(INTRO.conllu)?;
    let annotations = parse_annotations(INTRO.annotations)?;
    let manifest = parse_manifest(INTRO.splits)?;
    let data = join_and_split(&sentences, &annotations, &manifest)?;
    let inst = data
        .train
        .into_iter()
        .find(|i| i.tokens.len() == 4)
        .context("intro fixture lacks its 4-token sentence")?;
    let table = load_embeddings(EMBEDDINGS.as_bytes(), None)?;
    Ok((inst, table))
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<ExitCode> {
    let mut cfg = base_config(cli)?;
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }
    for dim in [
        &mut cfg.hidden,
        &mut cfg.projection,
        &mut cfg.gcn_features,
        &mut cfg.attention,
        &mut cfg.regression,
    ] {
        *dim = (*dim).min(GRADCHECK_MAX_DIM);
    }
    cfg.embedding_dim = 0;
    cfg.validate()?;
    let (inst, table) = gradcheck_instance()?;
    let model = EfpModel::new(ModelSpec::from_config(&cfg, table.dim())?, cfg.seed);
    let prepared = PreparedInstance::new(&inst, &table)?;
    let fault = args.inject_fault.then_some(Fault::SigmoidGrad);
    let check = grad_check_model(&model, &prepared, cfg.huber_delta, args.epsilon, fault)?;

    for (name, c) in &check.params {
        println!("{name}\t{:e}", c.max_rel_error);
    }
    if !cfg.no_structure {
        println!(
            "structure parameters: max |numeric grad| {:e}, max |analytic grad| {:e}",
            check.max_numeric("structure."),
            check.max_analytic("structure.")
        );
        if cfg.lambda == 0.0
            && check.max_numeric("structure.") == 0.0
            && check.max_analytic("structure.") == 0.0
        {
            println!("lambda = 0: semantic affinity parameters receive zero gradient");
        }
    }
    println!("max relative error {:e}", check.max_rel_error);
    if check.max_rel_error < GRADCHECK_THRESHOLD {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL (threshold {GRADCHECK_THRESHOLD:e})");
        Ok(ExitCode::from(1))
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(path) => SynthSpec::from_file(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let corpus = generate(&spec)?;
    corpus.write_dir(&cli.out)?;
    println!(
        "{} sentences ({} train, {} dev, {} test) written to {}",
        corpus.sentences.len(),
        spec.train_sentences,
        spec.dev_sentences,
        spec.test_sentences,
        cli.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck() -> Result<ExitCode> {
    let checks = fixture_selfcheck();
    for c in &checks {
        if c.passed {
            println!("PASS\t{}", c.name);
        } else {
            println!("FAIL\t{}\t{}", c.name, c.detail);
        }
    }
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
