use std::fs;
use std::path::{Path, PathBuf};

use biagree::agreement::{RegularizerConfig, Sampler};
use biagree::corpus::{gen_synthetic, load_parallel, load_vocab, save_parallel, save_vocab, Corpus, Split};
use biagree::decoding::{beam_search, decode_all, rerank_js as js_choice, DecodeMode};
use biagree::evaluation::{
    align_tsv, bucket_report as length_buckets, corpus_bleu, corpus_bleu_with, iteration_log_report, sentence_bleu_with,
    tokenize, BleuScore, Smoothing,
};
use biagree::oracle::{estimator_bias_report, EnumeratedSpace};
use biagree::rng::derive_seed;
use biagree::seq2seq::{Direction, DirectionalModel, ModelConfig, TokenSequence, Vocab, FIRST_CONTENT};
use biagree::training::{continue_mle, dev_bleu, init_checkpoint, joint_train, Checkpoint, KlProbe, TrainLog};

use crate::config::ExperimentConfig;
use crate::rundir::{write_lines, RunDir};
use crate::{CliError, ConfigArgs, DirectionArg, SmoothingArg, SplitArg, Stage};

const DIRECTIONS: [Direction; 2] = [Direction::L2R, Direction::R2L];

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let usage = |e: biagree::Error| CliError::Usage(e.to_string());
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&args.set).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn open(args: &ConfigArgs) -> Result<(ExperimentConfig, RunDir), CliError> {
    let cfg = load_config(args)?;
    let rd = RunDir::open(&cfg, args.force)?;
    println!("run_dir={}", rd.root().display());
    Ok((cfg, rd))
}

fn split_name(s: SplitArg) -> &'static str {
    match s {
        SplitArg::Dev => "dev",
        SplitArg::Test => "test",
    }
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::L2R => "l2r",
        Direction::R2L => "r2l",
    }
}

fn data_files(rd: &RunDir) -> Vec<PathBuf> {
    let mut files = vec![rd.path("data/vocab.txt")];
    for split in ["train", "dev", "test"] {
        files.push(rd.path(&format!("data/{split}.src")));
        files.push(rd.path(&format!("data/{split}.tgt")));
    }
    files
}

fn write_data(cfg: &ExperimentConfig, rd: &RunDir) -> Result<(), CliError> {
    let d = gen_synthetic(&cfg.task(), cfg.split_sizes())?;
    save_vocab(&d.vocab, &rd.path("data/vocab.txt"))?;
    for (name, c) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
        save_parallel(c, &rd.path(&format!("data/{name}.src")), &rd.path(&format!("data/{name}.tgt")), &d.vocab)?;
    }
    rd.record_inputs("gen-data", &[])?;
    println!("wrote {}", rd.path("data").display());
    Ok(())
}

fn ensure_data(cfg: &ExperimentConfig, rd: &RunDir) -> Result<(), CliError> {
    if data_files(rd).iter().all(|p| p.exists()) {
        return Ok(());
    }
    write_data(cfg, rd)
}

struct Data {
    vocab: Vocab,
    train: Corpus,
    dev: Corpus,
    test: Corpus,
}

fn load_data(rd: &RunDir) -> Result<Data, CliError> {
    let vocab = load_vocab(&rd.path("data/vocab.txt"))?;
    let load = |name: &str, split| {
        load_parallel(&rd.path(&format!("data/{name}.src")), &rd.path(&format!("data/{name}.tgt")), &vocab, split)
    };
    Ok(Data {
        train: load("train", Split::Train)?,
        dev: load("dev", Split::Dev)?,
        test: load("test", Split::Test)?,
        vocab: vocab.clone(),
    })
}

fn checkpoint_path(rd: &RunDir, stage: Stage, d: Direction) -> PathBuf {
    rd.path(&format!("checkpoints/{}.{}.ckpt", dir_name(d), stage.name()))
}

/// Pretrains one direction in chunks, saving a partial checkpoint and log after
/// each chunk. An interrupted run picks up from the last partial checkpoint.
fn pretrain_direction(cfg: &ExperimentConfig, rd: &RunDir, data: &Data, d: Direction) -> Result<(), CliError> {
    let name = dir_name(d);
    let final_ck = checkpoint_path(rd, Stage::Mle, d);
    let partial_ck = rd.path(&format!("checkpoints/{name}.mle.partial.ckpt"));
    let final_log = rd.path(&format!("logs/mle.{name}.log"));
    let partial_log = rd.path(&format!("logs/mle.{name}.partial.log"));
    let tc = cfg.train();
    let (mut ck, mut log) = if partial_ck.exists() && partial_log.exists() {
        let ck = Checkpoint::load(&partial_ck)?;
        eprintln!("resuming {name} pretraining at step {}", ck.step);
        (ck, TrainLog::load(&partial_log)?)
    } else {
        let model = cfg.model(data.vocab.len());
        (init_checkpoint(d, &data.vocab, model, &tc)?, TrainLog::new())
    };
    let total = cfg.train_pretrain_steps as u64;
    while ck.step < total {
        let chunk = (total - ck.step).min(cfg.train_checkpoint_every as u64) as usize;
        ck = continue_mle(ck, &data.train, &tc, chunk, &mut log)?;
        ck.save(&partial_ck)?;
        log.save(&partial_log)?;
    }
    ck.save(&final_ck)?;
    log.save(&final_log)?;
    let _ = fs::remove_file(partial_ck);
    let _ = fs::remove_file(partial_log);
    let bleu = dev_bleu(&ck.model, &data.dev, &tc.dev_decode)?;
    println!("{name} mle dev_bleu={:.4} steps={}", bleu, ck.step);
    Ok(())
}

fn ensure_mle(cfg: &ExperimentConfig, rd: &RunDir, data: &Data) -> Result<(), CliError> {
    for d in DIRECTIONS {
        if !checkpoint_path(rd, Stage::Mle, d).exists() {
            pretrain_direction(cfg, rd, data, d)?;
        }
    }
    Ok(())
}

fn run_joint(cfg: &ExperimentConfig, rd: &RunDir, data: &Data, stage: Stage, reg: &RegularizerConfig) -> Result<(), CliError> {
    let outputs: Vec<PathBuf> = DIRECTIONS.iter().map(|&d| checkpoint_path(rd, stage, d)).collect();
    rd.confirm_overwrite(&outputs)?;
    let l2r = Checkpoint::load(&checkpoint_path(rd, Stage::Mle, Direction::L2R))?;
    let r2l = Checkpoint::load(&checkpoint_path(rd, Stage::Mle, Direction::R2L))?;
    let mut joint = cfg.joint();
    if cfg.probe_sources > 0 {
        joint.probe = Some(KlProbe {
            sources: data.dev.sources()[..cfg.probe_sources].to_vec(),
            max_len: cfg.probe_max_len,
            samples: cfg.probe_samples,
            exact: cfg.probe_exact,
        });
    }
    let mut log = TrainLog::new();
    let out = joint_train(l2r, r2l, &data.train, &data.dev, &joint, &cfg.train(), reg, &mut log)?;
    out.l2r.save(&outputs[0])?;
    out.r2l.save(&outputs[1])?;
    let name = stage.name();
    log.save(&rd.path(&format!("logs/{name}.log")))?;
    let table = iteration_log_report(&log)?;
    fs::write(rd.path(&format!("reports/{name}.iterations.txt")), &table)?;
    let mut inputs = data_files(rd);
    inputs.extend(DIRECTIONS.iter().map(|&d| checkpoint_path(rd, Stage::Mle, d)));
    rd.record_inputs(name, &inputs)?;
    print!("{table}");
    println!(
        "best iterations: l2r={} r2l={} converged={}",
        out.best_l2r_iteration, out.best_r2l_iteration, out.converged
    );
    Ok(())
}

pub fn gen_data(args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    rd.confirm_overwrite(&data_files(&rd))?;
    write_data(&cfg, &rd)
}

pub fn train_mle(args: &ConfigArgs, continue_: bool) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    ensure_data(&cfg, &rd)?;
    let data = load_data(&rd)?;
    if continue_ {
        ensure_mle(&cfg, &rd, &data)?;
        let reg = RegularizerConfig {
            lambda: 0.0,
            ..cfg.regularizer()
        };
        return run_joint(&cfg, &rd, &data, Stage::Cont, &reg);
    }
    let outputs: Vec<PathBuf> = DIRECTIONS.iter().map(|&d| checkpoint_path(&rd, Stage::Mle, d)).collect();
    rd.confirm_overwrite(&outputs)?;
    for d in DIRECTIONS {
        pretrain_direction(&cfg, &rd, &data, d)?;
    }
    rd.record_inputs("mle", &data_files(&rd))?;
    Ok(())
}

pub fn train_rt(args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    ensure_data(&cfg, &rd)?;
    let data = load_data(&rd)?;
    ensure_mle(&cfg, &rd, &data)?;
    run_joint(&cfg, &rd, &data, Stage::Rt, &cfg.regularizer())
}

fn load_stage(rd: &RunDir, stage: Stage, d: Direction) -> Result<Checkpoint, CliError> {
    let p = checkpoint_path(rd, stage, d);
    if !p.exists() {
        let cmd = match stage {
            Stage::Mle => "train-mle",
            Stage::Cont => "train-mle --continue",
            Stage::Rt => "train-rt",
        };
        return Err(CliError::Runtime(format!("{} not found; run `{cmd}` first", p.display())));
    }
    Ok(Checkpoint::load(&p)?)
}

fn read_sources(path: &Path, vocab: &Vocab) -> Result<Vec<TokenSequence>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let x = vocab
                .encode(l)
                .map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if x.is_empty() {
                return Err(CliError::Runtime(format!("{}:{}: empty source", path.display(), i + 1)));
            }
            Ok(x)
        })
        .collect()
}

fn split_corpus(data: &Data, split: SplitArg) -> &Corpus {
    match split {
        SplitArg::Dev => &data.dev,
        SplitArg::Test => &data.test,
    }
}

fn print_score(label: &str, hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<(), CliError> {
    let score = corpus_bleu(hyps, refs)?;
    println!("{label} bleu={:.4}", score.value);
    Ok(())
}

pub fn translate(
    args: &ConfigArgs,
    stage: Stage,
    direction: DirectionArg,
    split: SplitArg,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    ensure_data(&cfg, &rd)?;
    let data = load_data(&rd)?;
    let d = match direction {
        DirectionArg::L2r => Direction::L2R,
        DirectionArg::R2l => Direction::R2L,
    };
    let ck = load_stage(&rd, stage, d)?;
    let sources = match &input {
        Some(p) => read_sources(p, &data.vocab)?,
        None => split_corpus(&data, split).sources(),
    };
    let out = output.unwrap_or_else(|| {
        rd.path(&format!("translations/{}.{}.{}.hyp", stage.name(), dir_name(d), split_name(split)))
    });
    let hyps: Vec<TokenSequence> = decode_all(&ck.model, &sources, &cfg.decode(), cfg.seed)?
        .into_iter()
        .map(|h| h.tokens)
        .collect();
    write_lines(&out, &hyps.iter().map(|h| data.vocab.decode(h)).collect::<Vec<_>>())?;
    println!("wrote {}", out.display());
    if input.is_none() {
        print_score(split_name(split), &hyps, &split_corpus(&data, split).targets())?;
    }
    Ok(())
}

pub fn rerank_js(args: &ConfigArgs, stage: Stage, split: SplitArg) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    ensure_data(&cfg, &rd)?;
    let data = load_data(&rd)?;
    let l2r = load_stage(&rd, stage, Direction::L2R)?;
    let r2l = load_stage(&rd, stage, Direction::R2L)?;
    let decode = biagree::decoding::DecodeConfig {
        mode: DecodeMode::Beam,
        ..cfg.decode()
    };
    let corpus = split_corpus(&data, split);
    let mut hyps = Vec::with_capacity(corpus.len());
    for x in corpus.sources() {
        let list = beam_search(&l2r.model, &x, &decode)?;
        hyps.push(js_choice(&l2r.model, &r2l.model, &list)?.hypothesis.tokens);
    }
    let out = rd.path(&format!("translations/{}.js.{}.hyp", stage.name(), split_name(split)));
    write_lines(&out, &hyps.iter().map(|h| data.vocab.decode(h)).collect::<Vec<_>>())?;
    println!("wrote {}", out.display());
    print_score(split_name(split), &hyps, &corpus.targets())
}

fn read_tokenized(path: &Path, lowercase: bool) -> Result<Vec<Vec<String>>, CliError> {
    Ok(fs::read_to_string(path)?.lines().map(|l| tokenize(l, lowercase)).collect())
}

fn format_score(s: &BleuScore) -> String {
    let p: Vec<String> = s
        .precisions
        .iter()
        .map(|p| p.map_or_else(|| "n/a".into(), |v| format!("{:.2}", 100.0 * v)))
        .collect();
    format!(
        "BLEU = {:.2}\tprecisions = {}\tbp = {:.4}\thyp_len = {}\tref_len = {}",
        s.percent(),
        p.join("/"),
        s.brevity_penalty,
        s.hyp_len,
        s.ref_len
    )
}

pub fn bleu(hyp: &Path, reference: &Path, sentence: bool, smoothing: Option<SmoothingArg>, lowercase: bool) -> Result<(), CliError> {
    let hyps = read_tokenized(hyp, lowercase)?;
    let refs = read_tokenized(reference, lowercase)?;
    if hyps.len() != refs.len() {
        return Err(CliError::Runtime(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        )));
    }
    let pick = |default| match smoothing {
        None => default,
        Some(SmoothingArg::None) => Smoothing::None,
        Some(SmoothingArg::AddOne) => Smoothing::AddOne,
    };
    if sentence {
        let s = pick(Smoothing::AddOne);
        println!("line\tbleu");
        for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
            println!("{}\t{:.6}", i + 1, sentence_bleu_with(h, r, s).value);
        }
    } else {
        println!("{}", format_score(&corpus_bleu_with(&hyps, &refs, pick(Smoothing::None))?));
    }
    Ok(())
}

fn parse_edges(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|e| {
            e.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad bucket edge {e:?}")))
        })
        .collect()
}

pub fn bucket_report(source: &Path, reference: &Path, systems: &[String], edges: &str, aligned: bool) -> Result<(), CliError> {
    let sources = read_tokenized(source, false)?;
    let refs = read_tokenized(reference, false)?;
    let mut named = Vec::new();
    for s in systems {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--system expects NAME=PATH, got {s:?}")))?;
        named.push((name.to_string(), read_tokenized(Path::new(path), false)?));
    }
    let lens: Vec<usize> = sources.iter().map(Vec::len).collect();
    let report = length_buckets(&lens, &refs, &named, &parse_edges(edges)?)?;
    print!("{}", if aligned { report.to_text() } else { report.to_tsv() });
    Ok(())
}

pub fn oracle_check(args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    let vocab = cfg.oracle_vocab + FIRST_CONTENT as usize;
    let model = ModelConfig::new(vocab).with_sizes(cfg.oracle_embed, cfg.oracle_hidden, cfg.oracle_attention);
    let self_model = DirectionalModel::new(model, Direction::L2R, derive_seed(cfg.seed, &[0]))?;
    let helper = DirectionalModel::new(model, Direction::R2L, derive_seed(cfg.seed, &[1]))?;
    let x: Vec<u32> = (0..3).map(|i| FIRST_CONTENT + (i % cfg.oracle_vocab) as u32).collect();
    let space = EnumeratedSpace::for_vocab(vocab, cfg.oracle_max_len)?;
    let reg = RegularizerConfig {
        m: cfg.reg_m,
        ..RegularizerConfig::unbiased(1.0)
    };
    let report = estimator_bias_report(&self_model, &helper, &x, &space, &reg, cfg.oracle_resamples, cfg.seed)?;
    let text = report.to_text();
    fs::write(rd.path("reports/oracle.txt"), &text)?;
    print!("{text}");
    let worst = report
        .samplers
        .iter()
        .filter(|s| s.sampler == Sampler::Ancestral)
        .map(|s| s.helper_term.max_abs_z().max(s.self_term.max_abs_z()))
        .fold(0.0, f64::max);
    if worst >= 4.0 {
        return Err(CliError::Runtime(format!("ancestral estimator max |z| = {worst:.3} is not below 4")));
    }
    println!("ancestral estimator consistent with enumeration (max |z| = {worst:.3})");
    Ok(())
}

pub fn report(args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, rd) = open(args)?;
    let mut out = String::new();
    for stage in [Stage::Cont, Stage::Rt] {
        let p = rd.path(&format!("logs/{}.log", stage.name()));
        if p.exists() {
            out.push_str(&format!("== {} iterations ==\n", stage.name()));
            out.push_str(&iteration_log_report(&TrainLog::load(&p)?)?);
        }
    }
    let src = rd.path("data/test.src");
    let reference = rd.path("data/test.tgt");
    let mut systems = Vec::new();
    for name in ["mle.l2r", "cont.l2r", "mle.js", "rt.l2r", "rt.js"] {
        let p = rd.path(&format!("translations/{name}.test.hyp"));
        if p.exists() {
            systems.push((name.to_string(), read_tokenized(&p, false)?));
        }
    }
    if src.exists() && !systems.is_empty() {
        let sources = read_tokenized(&src, false)?;
        let refs = read_tokenized(&reference, false)?;
        let lens: Vec<usize> = sources.iter().map(Vec::len).collect();
        let report = length_buckets(&lens, &refs, &systems, &cfg.eval_bucket_edges)?;
        out.push_str("== test BLEU by source length ==\n");
        out.push_str(&align_tsv(&report.to_tsv()));
    }
    if out.is_empty() {
        return Err(CliError::Runtime(format!(
            "nothing to report in {}; run train-rt or translate first",
            rd.root().display()
        )));
    }
    fs::write(rd.path("reports/report.txt"), &out)?;
    print!("{out}");
    Ok(())
}
