//! Command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chimera_core::analysis::{
    bleu, export_attention, export_memories, run_ablation, AblationRow, AblationSetup, AblationSuite,
};
use chimera_core::corpus::{generate_synthetic_corpus, StTriplet, SyntheticConfig, Vocabulary};
use chimera_core::model::{Chimera, Modality, Source};
use chimera_core::train::{
    average_checkpoints, best_window, describe, finetune_multitask, pretrain_mt, Control, ModelCheckpoint, StepLog,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::corpus::{load_corpus, read_vocab, save_corpus, write_vocab, Loaded};
use crate::table::{fmt_f64, Table};

#[derive(Debug, Parser)]
#[command(name = "chimera", version, about = "Shared semantic memory speech/text translation")]
pub struct Cli {
    /// Seed for data generation, initialization and batching.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file overriding the desk defaults; flags override the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/dev/test triplets and external MT pairs.
    GenData(GenData),
    /// Pretrain on the external MT pairs.
    Pretrain(Pretrain),
    /// Multitask fine-tuning on the ST triplets.
    Finetune(Finetune),
    /// Translate a split with beam search.
    Translate(Translate),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score(Score),
    /// Dump text and speech memories with 2-D PCA coordinates.
    ExportMemories(ExportMemories),
    /// Dump final projection-layer attention for one triplet.
    ExportAttention(ExportAttention),
    /// Run an ablation grid and write its results table.
    Ablate(Ablate),
    /// Average checkpoints around the best dev loss.
    AverageCkpt(AverageCkpt),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub mt_pairs: Option<usize>,
    #[arg(long)]
    pub dev_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub updates: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Also write every periodic checkpoint under `checkpoints/`.
    #[arg(long)]
    pub keep_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct Pretrain {
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct Finetune {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Checkpoint to start from; a fresh model otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub lambda_st: Option<f64>,
    #[arg(long)]
    pub lambda_mt: Option<f64>,
    #[arg(long)]
    pub lambda_ctr: Option<f64>,
    #[arg(long)]
    pub freeze_projection: bool,
    #[arg(long)]
    pub freeze_decoder: bool,
    /// Checkpoints averaged around the best dev loss.
    #[arg(long)]
    pub average: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputModality {
    Speech,
    Text,
}

#[derive(Debug, Args)]
pub struct Translate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long, value_enum, default_value = "speech")]
    pub modality: InputModality,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Hypotheses, one per line; defaults to `<out-dir>/hyp.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// References in the same order; defaults to `<out-dir>/ref.txt`.
    #[arg(long)]
    pub refs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Score {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Print the full report as JSON instead of the score alone.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportMemories {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: Split,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportAttention {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Freezing,
    Multitask,
    MtScaling,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pretrain_updates: Option<u64>,
    #[arg(long)]
    pub finetune_updates: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AverageCkpt {
    /// Checkpoints in training order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Window size around the best dev loss; all inputs by default.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_vocab(data: &Path) -> anyhow::Result<Vocabulary> {
    Ok(read_vocab(&data.join("vocab.txt"))?)
}

fn load_split(data: &Path, split: Split, vocab: &Vocabulary) -> anyhow::Result<Loaded> {
    Ok(load_corpus(&data.join(format!("{}.tsv", split.name())), vocab)?)
}

fn load_model(path: &Path) -> anyhow::Result<Chimera> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    let ck = load_checkpoint(path)?;
    ck.restore().with_context(|| format!("cannot restore {}", path.display()))
}

fn progress(stage: &str, every: u64) -> impl FnMut(&StepLog, &Chimera) -> Control + '_ {
    move |log, _| {
        if log.step % every == 0 {
            eprintln!("{stage} {}", describe(log));
        }
        Control::Continue
    }
}

fn log_table(log: &[StepLog]) -> Table {
    let mut t = Table::new(["step", "lr", "total", "st", "mt", "ctr", "grad_norm"]);
    for l in log {
        let r = &l.report;
        t.push(vec![
            l.step.to_string(),
            fmt_f64(l.lr),
            fmt_f64(r.total),
            fmt_f64(r.st),
            fmt_f64(r.mt),
            fmt_f64(r.ctr),
            fmt_f64(l.grad_norm),
        ]);
    }
    t
}

fn save_periodic(dir: &Path, stage: &str, checkpoints: &[ModelCheckpoint]) -> anyhow::Result<()> {
    let dir = dir.join("checkpoints");
    create_dir(&dir)?;
    for ck in checkpoints {
        save_checkpoint(&dir.join(format!("{stage}-{:06}.chck", ck.step)), ck)?;
    }
    Ok(())
}

fn apply_train_flags(cfg: &mut chimera_core::train::TrainConfig, flags: &TrainFlags) {
    if let Some(u) = flags.updates {
        cfg.max_updates = u;
    }
    if let Some(lr) = flags.lr {
        cfg.peak_lr = lr;
    }
    if let Some(w) = flags.warmup {
        cfg.warmup = w;
    }
}

fn gen_data(cli: &Cli, args: &GenData) -> anyhow::Result<()> {
    let mut cfg = resolve(cli)?;
    if let Some(n) = args.samples {
        cfg.data.n_samples = n;
    }
    if let Some(n) = args.mt_pairs {
        cfg.data.n_mt_pairs = n;
    }
    if let Some(n) = args.dev_samples {
        cfg.dev_samples = n;
    }
    if let Some(n) = args.test_samples {
        cfg.test_samples = n;
    }
    if let Some(s) = args.noise {
        cfg.data.noise_sigma = s;
    }
    cfg.validate()?;
    let n_train = cfg.data.n_samples;
    // one generator run keeps the speech prototypes shared by all splits
    let all = SyntheticConfig { n_samples: n_train + cfg.dev_samples + cfg.test_samples, ..cfg.data.clone() };
    let corpus = generate_synthetic_corpus(&all)?;
    let dir = &cli.out_dir;
    create_dir(dir)?;
    write_vocab(&dir.join("vocab.txt"), &corpus.vocab)?;
    let (train, rest) = corpus.triplets.split_at(n_train);
    let (dev, test) = rest.split_at(cfg.dev_samples);
    save_corpus(dir, "train", &corpus.vocab, train, &[])?;
    save_corpus(dir, "dev", &corpus.vocab, dev, &[])?;
    save_corpus(dir, "test", &corpus.vocab, test, &[])?;
    save_corpus(dir, "mt", &corpus.vocab, &[], &corpus.mt_pairs)?;
    println!(
        "wrote {} train, {} dev, {} test triplets and {} MT pairs to {}",
        train.len(),
        dev.len(),
        test.len(),
        corpus.mt_pairs.len(),
        dir.display()
    );
    Ok(())
}

fn pretrain(cli: &Cli, args: &Pretrain) -> anyhow::Result<()> {
    let mut cfg = resolve(cli)?;
    apply_train_flags(&mut cfg.pretrain, &args.train);
    cfg.validate()?;
    let vocab = load_vocab(&args.train.data)?;
    let external = load_corpus(&args.train.data.join("mt.tsv"), &vocab)?.mt_pairs;
    let dev = load_split(&args.train.data, Split::Dev, &vocab)?;
    let dev_pairs: Vec<_> = dev
        .triplets
        .iter()
        .map(|t| chimera_core::corpus::MtPair { source: t.transcript.clone(), target: t.translation.clone() })
        .collect();
    let mut model = Chimera::new(cfg.model.clone(), cfg.model_seed)?;
    let every = cfg.pretrain.checkpoint_every;
    let out = pretrain_mt(&mut model, &external, &dev_pairs, &cfg.pretrain, progress("pretrain", every))?;
    create_dir(&cli.out_dir)?;
    let final_ck = ModelCheckpoint::capture(&model, out.updates, out.checkpoints.last().map_or(f64::NAN, |c| c.dev_loss));
    save_checkpoint(&cli.out_dir.join("pretrain.chck"), &final_ck)?;
    log_table(&out.log).write(&cli.out_dir.join("pretrain_log.tsv"))?;
    if args.train.keep_checkpoints {
        save_periodic(&cli.out_dir, "pretrain", &out.checkpoints)?;
    }
    println!("pretrained {} updates; dev loss {}", out.updates, fmt_f64(final_ck.dev_loss));
    Ok(())
}

fn finetune(cli: &Cli, args: &Finetune) -> anyhow::Result<()> {
    let mut cfg = resolve(cli)?;
    apply_train_flags(&mut cfg.finetune, &args.train);
    let ft = &mut cfg.finetune;
    if let Some(v) = args.lambda_st {
        ft.weights.st = v;
    }
    if let Some(v) = args.lambda_mt {
        ft.weights.mt = v;
    }
    if let Some(v) = args.lambda_ctr {
        ft.weights.ctr = v;
    }
    ft.freeze.projection |= args.freeze_projection;
    ft.freeze.decoder |= args.freeze_decoder;
    if let Some(a) = args.average {
        cfg.average = a;
    }
    cfg.validate()?;
    let vocab = load_vocab(&args.train.data)?;
    let train = load_split(&args.train.data, Split::Train, &vocab)?.triplets;
    let dev = load_split(&args.train.data, Split::Dev, &vocab)?.triplets;
    let external = load_corpus(&args.train.data.join("mt.tsv"), &vocab)?.mt_pairs;
    let mut model = match &args.init {
        Some(p) => load_model(p)?,
        None => Chimera::new(cfg.model.clone(), cfg.model_seed)?,
    };
    let every = cfg.finetune.checkpoint_every;
    let out = finetune_multitask(&mut model, &train, &external, &dev, &cfg.finetune, progress("finetune", every))?;
    create_dir(&cli.out_dir)?;
    let last = ModelCheckpoint::capture(&model, out.updates, out.checkpoints.last().map_or(f64::NAN, |c| c.dev_loss));
    save_checkpoint(&cli.out_dir.join("finetune-last.chck"), &last)?;
    let averaged = if out.checkpoints.is_empty() {
        last
    } else {
        let window = best_window(&out.checkpoints, cfg.average);
        eprintln!(
            "averaging {} checkpoints, steps {}..={}",
            window.len(),
            window[0].step,
            window[window.len() - 1].step
        );
        average_checkpoints(window)?
    };
    save_checkpoint(&cli.out_dir.join("finetune.chck"), &averaged)?;
    log_table(&out.log).write(&cli.out_dir.join("finetune_log.tsv"))?;
    if args.train.keep_checkpoints {
        save_periodic(&cli.out_dir, "finetune", &out.checkpoints)?;
    }
    println!("fine-tuned {} updates; averaged checkpoint centred on step {}", out.updates, averaged.step);
    Ok(())
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn translate(cli: &Cli, args: &Translate) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    let model = load_model(&args.checkpoint)?;
    let vocab = load_vocab(&args.data)?;
    let split = load_split(&args.data, args.split, &vocab)?.triplets;
    let beam = args.beam.unwrap_or(cfg.beam);
    let max_len = args.max_len.unwrap_or(cfg.max_len);
    let mut hyps = Vec::with_capacity(split.len());
    let mut refs = Vec::with_capacity(split.len());
    for t in &split {
        let source = match args.modality {
            InputModality::Speech => Source::Speech(&t.speech),
            InputModality::Text => Source::Text(&t.transcript),
        };
        let memory = model.memory(source)?;
        let h = model.beam_search(&memory, beam, max_len, cfg.length_penalty)?;
        hyps.push(vocab.decode(&h.content())?);
        refs.push(vocab.decode(t.translation.ids())?);
    }
    create_dir(&cli.out_dir)?;
    let out = args.out.clone().unwrap_or_else(|| cli.out_dir.join("hyp.txt"));
    let ref_out = args.refs.clone().unwrap_or_else(|| cli.out_dir.join("ref.txt"));
    write_lines(&out, &hyps)?;
    write_lines(&ref_out, &refs)?;
    println!("translated {} {} inputs to {}", hyps.len(), args.split.name(), out.display());
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(|l| l.split_whitespace().map(String::from).collect()).collect())
}

fn score(args: &Score) -> anyhow::Result<()> {
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    let report = bleu(&hyps, &refs, 4).with_context(|| format!("scoring {} against {}", args.hyp.display(), args.reference.display()))?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!("{:.1}", report.score);
    }
    Ok(())
}

fn export_mem(cli: &Cli, args: &ExportMemories) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    let model = load_model(&args.checkpoint)?;
    let vocab = load_vocab(&args.data)?;
    let split = load_split(&args.data, args.split, &vocab)?.triplets;
    let dump = export_memories(&model, &split, args.samples.unwrap_or(cfg.export_samples))?;
    let d = model.config().d_model;
    let mut columns = vec!["sample".to_string(), "modality".into(), "slot".into(), "pc1".into(), "pc2".into()];
    columns.extend((0..d).map(|j| format!("v{j}")));
    let mut table = Table::new(columns);
    for r in &dump.records {
        let modality = match r.modality {
            Modality::Text => "text",
            Modality::Speech => "speech",
        };
        for (k, c) in r.coords.iter().enumerate() {
            let mut row = vec![r.sample.to_string(), modality.to_string(), k.to_string(), fmt_f64(c[0]), fmt_f64(c[1])];
            row.extend(r.memory.row(k).iter().map(|&v| fmt_f64(v)));
            table.push(row);
        }
    }
    create_dir(&cli.out_dir)?;
    table.write(&cli.out_dir.join("memories.tsv"))?;
    let mut pca = Table::new(["component".to_string(), "eigenvalue".into()].into_iter().chain((0..d).map(|j| format!("w{j}"))));
    for (c, (w, e)) in dump.pca.components.iter().zip(&dump.pca.eigenvalues).enumerate() {
        let mut row = vec![(c + 1).to_string(), fmt_f64(*e)];
        row.extend(w.iter().map(|&v| fmt_f64(v)));
        pca.push(row);
    }
    pca.write(&cli.out_dir.join("pca.tsv"))?;
    println!("exported memories of {} samples", dump.records.len() / 2);
    Ok(())
}

fn attention_table(map: &chimera_core::tensor::Tensor) -> Table {
    let mut t = Table::new(["slot", "position", "weight"]);
    for k in 0..map.rows() {
        for (p, &w) in map.row(k).iter().enumerate() {
            t.push(vec![k.to_string(), p.to_string(), fmt_f64(w)]);
        }
    }
    t
}

fn export_att(cli: &Cli, args: &ExportAttention) -> anyhow::Result<()> {
    let model = load_model(&args.checkpoint)?;
    let vocab = load_vocab(&args.data)?;
    let split = load_split(&args.data, args.split, &vocab)?.triplets;
    let Some(t) = split.get(args.index) else {
        bail!("{} split has {} triplets, no index {}", args.split.name(), split.len(), args.index);
    };
    let dump = export_attention(&model, t)?;
    create_dir(&cli.out_dir)?;
    attention_table(&dump.text).write(&cli.out_dir.join("attention_text.tsv"))?;
    attention_table(&dump.speech).write(&cli.out_dir.join("attention_speech.tsv"))?;
    let m = dump.text.rows();
    let mut products = Table::new(
        ["text_position".to_string(), "speech_position".into(), "product".into()].into_iter().chain((0..m).map(|k| format!("mix{k}"))),
    );
    let (lt, ls) = (dump.products.rows(), dump.products.cols());
    for i in 0..lt {
        for j in 0..ls {
            let mut row = vec![i.to_string(), j.to_string(), fmt_f64(dump.products.get(i, j))];
            row.extend(dump.mixing.data()[(i * ls + j) * m..(i * ls + j + 1) * m].iter().map(|&w| fmt_f64(w)));
            products.push(row);
        }
    }
    products.write(&cli.out_dir.join("attention_products.tsv"))?;
    println!("exported attention of {} triplet {}: {lt} text × {ls} speech positions", args.split.name(), args.index);
    Ok(())
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(["config", "freeze_projection", "freeze_decoder", "mt", "contrastive", "mt_fraction", "bleu", "token_accuracy"]);
    for r in rows {
        t.push(vec![
            r.label.clone(),
            r.freeze_projection.to_string(),
            r.freeze_decoder.to_string(),
            r.mt.to_string(),
            r.contrastive.to_string(),
            fmt_f64(r.mt_fraction),
            fmt_f64(r.bleu),
            fmt_f64(r.token_accuracy),
        ]);
    }
    t
}

fn ablate(cli: &Cli, args: &Ablate) -> anyhow::Result<()> {
    let mut cfg = resolve(cli)?;
    if let Some(u) = args.pretrain_updates {
        cfg.pretrain.max_updates = u;
    }
    if let Some(u) = args.finetune_updates {
        cfg.finetune.max_updates = u;
    }
    cfg.validate()?;
    let vocab = load_vocab(&args.data)?;
    let train: Vec<StTriplet> = load_split(&args.data, Split::Train, &vocab)?.triplets;
    let test = load_split(&args.data, Split::Test, &vocab)?.triplets;
    let external = load_corpus(&args.data.join("mt.tsv"), &vocab)?.mt_pairs;
    let (suite, name) = match args.suite {
        SuiteArg::Freezing => (AblationSuite::Freezing, "freezing"),
        SuiteArg::Multitask => (AblationSuite::Multitask, "multitask"),
        SuiteArg::MtScaling => (AblationSuite::MtScaling, "mt_scaling"),
    };
    let setup = AblationSetup {
        model: cfg.model.clone(),
        model_seed: cfg.model_seed,
        pretrain: cfg.pretrain.clone(),
        finetune: cfg.finetune.clone(),
        train: &train,
        external: &external,
        test: &test,
        max_len: cfg.max_len,
    };
    let rows = run_ablation(suite, &setup)?;
    create_dir(&cli.out_dir)?;
    let path = cli.out_dir.join(format!("ablation_{name}.tsv"));
    let table = ablation_table(&rows);
    table.write(&path)?;
    print!("{}", table.render());
    Ok(())
}

fn average(args: &AverageCkpt) -> anyhow::Result<()> {
    let cks = args.inputs.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>, _>>()?;
    let window = best_window(&cks, args.window.unwrap_or(cks.len()));
    let avg = average_checkpoints(window)?;
    save_checkpoint(&args.out, &avg)?;
    println!("averaged {} checkpoints into {} (centre step {})", window.len(), args.out.display(), avg.step);
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Pretrain(a) => pretrain(cli, a),
        Command::Finetune(a) => finetune(cli, a),
        Command::Translate(a) => translate(cli, a),
        Command::Score(a) => score(a),
        Command::ExportMemories(a) => export_mem(cli, a),
        Command::ExportAttention(a) => export_att(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::AverageCkpt(a) => average(a),
    }
}
