use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use e2ebt_core::bench::{bench_reparam, BenchConfig};
use e2ebt_core::checkpoint::Checkpoint;
use e2ebt_core::config::RunConfig;
use e2ebt_core::data::{
    generate_synthetic_pair, load_corpus, read_vocabulary, Corpus, CorpusPaths, SyntheticTaskSpec,
};
use e2ebt_core::eval::evaluate;
use e2ebt_core::model::{Direction, ModelDims, Side};
use e2ebt_core::trainer::{
    as_ratio, pretrain_lm, pretrain_nmt, BtTrainer, MetricsLog, MetricsRecord, Prior, Translators,
};
use e2ebt_core::vocab::Vocabulary;

const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(name = "e2ebt", version, about = "End-to-end back-translation on a desk-scale budget")]
struct Cli {
    /// Run configuration (TOML with sectioned keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set bt.lambda_x=0.02`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; falls back to the config, then to E2EBT_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic language pair.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a language model on one side's bilingual and monolingual text.
    PretrainLm {
        #[arg(long)]
        side: Side,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised training on the bilingual corpus.
    PretrainNmt {
        /// Directions to train; both when omitted.
        #[arg(long)]
        direction: Vec<Direction>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from an existing translation checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterative back-translation.
    TrainBt {
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this iteration instead of `bt.max_iters`.
        #[arg(long)]
        until: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test BLEU in both directions.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Only the first N test pairs.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Finite-difference checks of every differentiable primitive.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Time CRT against GST on random logits.
    Bench {
        #[arg(long, default_value_t = 30000)]
        vocab: usize,
        #[arg(long, default_value_t = 50)]
        len: usize,
        #[arg(long, default_value_t = 60)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    config: RunConfig,
    seed: u64,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let base = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut config = base.with_overrides(cli.overrides.iter().map(String::as_str))?;
        let env_seed = match std::env::var("E2EBT_SEED") {
            Ok(v) => Some(v.trim().parse::<u64>().context("E2EBT_SEED is not an integer")?),
            Err(_) => None,
        };
        let seed = cli.seed.or(config.seed).or(env_seed).unwrap_or(DEFAULT_SEED);
        config.seed = Some(seed);
        config.pretrain.seed = seed;
        config.bt.seed = seed;
        config.validate()?;
        Ok(Ctx { config, seed })
    }

    fn data_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.config.paths.data.clone())
    }

    fn corpus(&self, dir: &Path) -> Result<Corpus> {
        let vocab = read_vocabulary(&dir.join("vocab.txt"))?;
        let corpus = load_corpus(&CorpusPaths::in_dir(dir), &vocab, self.config.length_cap)
            .with_context(|| format!("loading corpus from {}", dir.display()))?;
        Ok(corpus)
    }

    fn dims(&self, vocab: &Vocabulary) -> Result<ModelDims> {
        let mut dims = self.config.model;
        if dims.vocab == 0 {
            dims.vocab = vocab.len();
        } else if dims.vocab != vocab.len() {
            bail!("model.vocab = {} but the vocabulary has {} tokens", dims.vocab, vocab.len());
        }
        dims.validate()?;
        Ok(dims)
    }

    fn checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let mut ck = Checkpoint::new(vocab.tokens().to_vec(), self.config.to_toml());
        ck.set_meta("seed", self.seed);
        ck
    }

    fn ckpt_path(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.config.paths.checkpoints.join(default))
    }
}

fn gen_data(ctx: &Ctx, spec: &Option<PathBuf>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            toml::from_str::<SyntheticTaskSpec>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ctx.config.data.clone(),
    };
    let (task, corpus) = generate_synthetic_pair(&spec)?;
    task.write(&corpus, out)?;
    println!(
        "wrote {} bilingual, {}+{} monolingual, {} test sentences and {} vocabulary entries to {}",
        corpus.bilingual.len(),
        corpus.mono_src.len(),
        corpus.mono_tgt.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        out.display()
    );
    Ok(())
}

fn progress(what: &str, every: u64) -> impl FnMut(u64, f64) + '_ {
    move |it, loss| {
        if every > 0 && it % every == 0 {
            eprintln!("{what} {it:>7} loss {loss:.4}");
        }
    }
}

fn pretrain_lm_cmd(ctx: &Ctx, side: Side, data: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let corpus = ctx.corpus(&ctx.data_dir(data))?;
    let dims = ctx.dims(&corpus.vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut prior = Prior::<f32>::new(side, dims, &mut rng)?;
    let mut text: Vec<Vec<usize>> = match side {
        Side::Src => corpus.bilingual.iter().map(|p| p.0.clone()).collect(),
        Side::Tgt => corpus.bilingual.iter().map(|p| p.1.clone()).collect(),
    };
    text.extend_from_slice(match side {
        Side::Src => &corpus.mono_src,
        Side::Tgt => &corpus.mono_tgt,
    });
    pretrain_lm(&mut prior, &text, &ctx.config.pretrain, progress("lm", 100))?;
    let path = ctx.ckpt_path(out, &format!("lm.{side}.ckpt"));
    let mut ck = ctx.checkpoint(&corpus.vocab);
    prior.write_into(&mut ck);
    ck.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn pretrain_nmt_cmd(
    ctx: &Ctx,
    directions: &[Direction],
    data: &Option<PathBuf>,
    init: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let corpus = ctx.corpus(&ctx.data_dir(data))?;
    let mut nmt = match init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_vocab(corpus.vocab.tokens())?;
            Translators::<f32>::read_from(&ck)?
        }
        None => {
            let dims = ctx.dims(&corpus.vocab)?;
            Translators::new(dims, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?
        }
    };
    let directions = if directions.is_empty() {
        vec![Direction::St, Direction::Ts]
    } else {
        directions.to_vec()
    };
    pretrain_nmt(&mut nmt, &directions, &corpus.bilingual, &ctx.config.pretrain, progress("nmt", 100))?;
    let path = ctx.ckpt_path(out, "nmt.ckpt");
    let mut ck = ctx.checkpoint(&corpus.vocab);
    nmt.write_into(&mut ck);
    ck.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn load_prior(ctx: &Ctx, explicit: &Option<PathBuf>, side: Side, vocab: &Vocabulary) -> Result<Prior<f32>> {
    let path = ctx.ckpt_path(explicit, &format!("lm.{side}.ckpt"));
    let ck = Checkpoint::load(&path)?;
    ck.check_vocab(vocab.tokens())?;
    let prior = Prior::read_from(&ck)?;
    if prior.lm.side != side {
        bail!("{} holds the {} language model", path.display(), prior.lm.side);
    }
    Ok(prior)
}

fn train_bt(ctx: &Ctx, resume: &Option<PathBuf>, until: Option<u64>, out: &Option<PathBuf>) -> Result<()> {
    let paths = &ctx.config.paths;
    let corpus = ctx.corpus(&paths.data)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_vocab(corpus.vocab.tokens())?;
            let t = BtTrainer::<f32>::read_from(&ck)?;
            if t.config.seed != ctx.config.bt.seed {
                bail!(
                    "checkpoint was trained with seed {} but this run uses {}",
                    t.config.seed,
                    ctx.config.bt.seed
                );
            }
            t
        }
        None => {
            let nmt_path = ctx.ckpt_path(&paths.nmt_checkpoint, "nmt.ckpt");
            let ck = Checkpoint::load(&nmt_path)?;
            ck.check_vocab(corpus.vocab.tokens())?;
            let nmt = Translators::<f32>::read_from(&ck)?;
            let lm_src = load_prior(ctx, &paths.lm_src_checkpoint, Side::Src, &corpus.vocab)?;
            let lm_tgt = load_prior(ctx, &paths.lm_tgt_checkpoint, Side::Tgt, &corpus.vocab)?;
            BtTrainer::new(ctx.config.bt.clone(), nmt, lm_src, lm_tgt)?
        }
    };
    let end = until.unwrap_or(trainer.config.max_iters);
    let ckpt_path = ctx.ckpt_path(out, "bt.ckpt");
    std::fs::create_dir_all(&paths.logs).with_context(|| paths.logs.display().to_string())?;
    let mut log = MetricsLog::append(&paths.logs.join("metrics.jsonl"))?;
    let save = |t: &BtTrainer<f32>, path: &Path| -> Result<()> {
        let mut ck = ctx.checkpoint(&corpus.vocab);
        t.write_into(&mut ck);
        ck.save(path)?;
        Ok(())
    };
    let every = ctx.config.checkpoint_every;
    while trainer.iteration < end {
        let it = trainer.iteration;
        let report = match trainer.train_step(&corpus) {
            Ok(r) => r,
            Err(e) => {
                let failed = ckpt_path.with_extension("failed.ckpt");
                save(&trainer, &failed)?;
                return Err(anyhow::Error::new(e)
                    .context(format!("iteration {it}; state saved to {}", failed.display())));
            }
        };
        let log_every = trainer.config.log_every.max(1);
        if it % log_every == 0 {
            let record = MetricsRecord::new(it, trainer.lr(it), as_ratio(it, &trainer.config), &report);
            log.write(&record)?;
            eprintln!(
                "bt {it:>7} total {:.4} bi {:.4}/{:.4} recon {:.4}/{:.4} kl {:.4}/{:.4}",
                report.total,
                report.bilingual_st,
                report.bilingual_ts,
                report.recon_tst,
                report.recon_sts,
                report.kl_tst,
                report.kl_sts
            );
        }
        if every > 0 && trainer.iteration % every == 0 {
            save(&trainer, &ckpt_path)?;
        }
    }
    save(&trainer, &ckpt_path)?;
    println!("saved {} at iteration {}", ckpt_path.display(), trainer.iteration);
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, ckpt: &Path, beam: usize, test: &Option<PathBuf>, limit: Option<usize>) -> Result<()> {
    if beam == 0 {
        bail!("beam width must be at least 1");
    }
    let ck = Checkpoint::load(ckpt)?;
    let vocab = Vocabulary::new(ck.vocab.iter().map(String::as_str))?;
    let nmt = Translators::<f32>::read_from(&ck)?;
    let dir = ctx.data_dir(test);
    let paths = CorpusPaths {
        src: dir.join("test.src"),
        tgt: dir.join("test.tgt"),
        ..Default::default()
    };
    let mut pairs = load_corpus(&paths, &vocab, ctx.config.length_cap)?.bilingual;
    if let Some(n) = limit {
        pairs.truncate(n);
    }
    if pairs.is_empty() {
        bail!("no test pairs in {}", dir.display());
    }
    let b = evaluate(&nmt, &pairs, beam)?;
    println!("BLEU st {:.2}", b.st);
    println!("BLEU ts {:.2}", b.ts);
    Ok(())
}

fn gradcheck(ctx: &Ctx, points: usize, tol: f64) -> Result<bool> {
    let reports = e2ebt_core::checks::run_all(points, tol, ctx.seed)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{} {:<24} max rel err {:.2e} (tol {:.0e}, {} points)",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance,
            r.points
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn bench(ctx: &Ctx, vocab: usize, len: usize, batch: usize, repeats: usize, out: &Option<PathBuf>) -> Result<()> {
    let report = bench_reparam(&BenchConfig {
        vocab,
        seq_len: len,
        batch,
        repeats,
        seed: ctx.seed,
        ..Default::default()
    })?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let ctx = Ctx::load(cli)?;
    match &cli.command {
        Command::GenData { spec, out } => gen_data(&ctx, spec, out)?,
        Command::PretrainLm { side, data, out } => pretrain_lm_cmd(&ctx, *side, data, out)?,
        Command::PretrainNmt {
            direction,
            data,
            init,
            out,
        } => pretrain_nmt_cmd(&ctx, direction, data, init, out)?,
        Command::TrainBt { resume, until, out } => train_bt(&ctx, resume, *until, out)?,
        Command::Evaluate {
            ckpt,
            beam,
            test,
            limit,
        } => evaluate_cmd(&ctx, ckpt, *beam, test, *limit)?,
        Command::Gradcheck { points, tol } => return gradcheck(&ctx, *points, *tol),
        Command::Bench {
            vocab,
            len,
            batch,
            repeats,
            out,
        } => bench(&ctx, *vocab, *len, *batch, *repeats, out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
