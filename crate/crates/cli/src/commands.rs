//! One function per subcommand. Each computes everything first, stages its
//! files and commits them together.
//!
//! Random streams: a command seeded with `s` uses `RngStream::new(s)` as
//! root. Corpus commands split heldout words with `root.split(0)` and run
//! chain `i` (0-based) on `root.split(1 + i)`, so chain 0 of `sweep-eta`
//! at a given η reproduces `train-bnbp` at that η.

use std::path::PathBuf;

use bnbp_core::bnbp_model::{run_chain, TrainConfig};
use bnbp_core::checkpoint::{Checkpoint, ModelKind};
use bnbp_core::corpus::{filter_vocab, load_corpus, split_heldout, write_uci_counts};
use bnbp_core::eval::{trace_diagnostics, TraceSummary, STABILIZATION_BAND, STABILIZATION_WINDOW};
use bnbp_core::lda::run_lda_chain;
use bnbp_core::partition::{partition_gibbs_run, PriorMatrixSampler};
use bnbp_core::{
    BnbpParams, ChainTrace, Corpus, CorpusFormat, Hyperpriors, LdaState, PerplexityAccumulator,
    RngStream, TestCounts, TopicModelState,
};
use rayon::prelude::*;

use crate::output::{cell, join, Artifacts, Header};
use crate::{
    ChainArgs, Cli, Command, CommonArgs, CorpusArgs, EvalArgs, Format, LdaArgs, Model, PartitionArgs, PriorArgs,
    SimulateArgs, SweepArgs,
};

type CmdResult = Result<Vec<PathBuf>, String>;

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::SimulatePartition(a) => simulate_partition(a),
        Command::PriorMatrix(a) => prior_matrix(a),
        Command::TrainBnbp(a) => train(&a.corpus, Model::Bnbp, a.eta, None, &a.chain, &a.common),
        Command::TrainLda(a) => train(&a.corpus, Model::Lda, a.eta, Some(&a.lda), &a.chain, &a.common),
        Command::EvalPerplexity(a) => eval_perplexity(a),
        Command::SweepEta(a) => sweep_eta(a),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn partition_params(a: &PartitionArgs, header: &mut Header) -> Result<BnbpParams, String> {
    if a.groups == 0 {
        return Err("--groups must be at least 1".into());
    }
    let r = match a.r.len() {
        1 => vec![a.r[0]; a.groups],
        n if n == a.groups => a.r.clone(),
        n => return Err(format!("--r has {n} values; give one or {}", a.groups)),
    };
    let gamma0 = match a.gamma0 {
        Some(g) => g,
        None => {
            if !(a.expected_k > 0.0 && a.expected_k.is_finite()) {
                return Err("--expected-k must be positive".into());
            }
            BnbpParams::gamma0_for_expected_clusters(a.expected_k, a.c, &r)
        }
    };
    let params = BnbpParams::new(gamma0, a.c, r).map_err(err)?;
    header
        .set("groups", a.groups)
        .set("c", a.c)
        .set("r", join(params.r()))
        .set("gamma0", gamma0);
    if a.gamma0.is_none() {
        header.set("expected_k", a.expected_k);
    }
    header.set("prior_mean_K_J", params.expected_clusters());
    Ok(params)
}

fn seed_header(header: &mut Header, common: &CommonArgs) {
    header.set("seed", common.seed);
}

fn simulate_partition(a: &SimulateArgs) -> CmdResult {
    let mut header = Header::new("simulate-partition");
    let params = partition_params(&a.partition, &mut header)?;
    if a.points == 0 {
        return Err("--points must be at least 1".into());
    }
    header.set("points", a.points).set("iters", a.iters);
    seed_header(&mut header, &a.common);
    let mut rng = RngStream::new(a.common.seed);
    let sizes = vec![a.points; a.partition.groups];
    let (partition, trace) = partition_gibbs_run(&sizes, &params, a.iters, &mut rng).map_err(err)?;
    let matrix = partition.to_count_matrix();
    let mut out = Artifacts::new(&a.common.out)?;
    out.stage("matrix.csv", |w| matrix.write_csv(w, header.lines()))?;
    out.stage("trace.csv", |w| trace.write_csv(w, header.lines()))?;
    out.commit()
}

fn prior_matrix(a: &PriorArgs) -> CmdResult {
    let mut header = Header::new("prior-matrix");
    let params = partition_params(&a.partition, &mut header)?;
    if a.draws == 0 {
        return Err("--draws must be at least 1".into());
    }
    header.set("draws", a.draws);
    seed_header(&mut header, &a.common);
    let mut rng = RngStream::new(a.common.seed);
    let mut sampler = PriorMatrixSampler::new(a.partition.groups, &params).map_err(err)?;
    let mut first = None;
    let mut rows = Vec::with_capacity(a.draws);
    for d in 1..=a.draws {
        let m = sampler.sample(&mut rng);
        rows.push(format!(
            "{d},{},{},{}",
            m.num_clusters(),
            m.column_totals().iter().sum::<u64>(),
            cell(m.mean_row_dispersion())
        ));
        if first.is_none() {
            first = Some(m);
        }
    }
    let first = first.expect("at least one draw");
    let mut out = Artifacts::new(&a.common.out)?;
    out.stage("matrix.csv", |w| first.write_csv(w, header.lines()))?;
    out.stage("draws.csv", |w| {
        header.write(w)?;
        writeln!(w, "draw,K_J,m_dot,dispersion")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?;
    out.commit()
}

// ---------------------------------------------------------------------------

struct Prepared {
    train: Corpus,
    test: TestCounts,
}

fn prepare_corpus(c: &CorpusArgs, root: &RngStream, header: &mut Header) -> Result<Prepared, String> {
    if c.min_doc_freq == 0 {
        return Err("--min-doc-freq must be at least 1".into());
    }
    let format = match c.format {
        Format::Uci => CorpusFormat::Uci,
        Format::Lines => CorpusFormat::Lines,
    };
    let corpus = load_corpus(&c.corpus, format, c.vocab.as_deref()).map_err(err)?;
    let raw_vocab = corpus.vocab_size();
    let (filtered, filter) = filter_vocab(&corpus, c.min_doc_freq).map_err(err)?;
    let split = split_heldout(&filtered, c.split, &mut root.split(0)).map_err(err)?;
    header
        .set("corpus", c.corpus.display())
        .set("format", format)
        .set("vocab", c.vocab.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "default".into()))
        .set("min_doc_freq", c.min_doc_freq)
        .set("split", c.split)
        .set("raw_vocab_size", raw_vocab)
        .set("vocab_size", filtered.vocab_size())
        .set("docs", filtered.num_docs())
        .set("removed_terms", filter.removed_terms)
        .set("removed_tokens", filter.removed_tokens)
        .set("dropped_docs", filter.dropped_docs)
        .set("train_tokens", split.train.total_tokens())
        .set("test_tokens", split.test.total());
    Ok(Prepared {
        train: split.train,
        test: split.test,
    })
}

fn chain_config(c: &ChainArgs, header: &mut Header) -> Result<(TrainConfig, usize), String> {
    let cfg = TrainConfig {
        iters: c.iters,
        collect: c.collect,
        thin: c.thin,
    };
    cfg.validate().map_err(err)?;
    let burnin = c.burnin.unwrap_or_else(|| cfg.burnin());
    if burnin > c.iters {
        return Err(format!("--burnin {burnin} exceeds --iters {}", c.iters));
    }
    header
        .set("iters", c.iters)
        .set("burnin", burnin)
        .set("collect", c.collect)
        .set("thin", c.thin);
    Ok((cfg, burnin))
}

fn check_eta(eta: f64) -> Result<(), String> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(format!("η must be positive and finite, got {eta}"))
    }
}

/// Outcome of one chain on a prepared split.
struct ChainRun {
    trace: ChainTrace,
    summary: TraceSummary,
    perplexity: Option<f64>,
    draws: usize,
    checkpoint: Checkpoint,
}

fn run_one(
    model: Model,
    train: &Corpus,
    test: &TestCounts,
    eta: f64,
    lda: Option<&LdaArgs>,
    cfg: &TrainConfig,
    burnin: usize,
    mut rng: RngStream,
) -> Result<ChainRun, String> {
    let mut acc = PerplexityAccumulator::new(test);
    let (trace, checkpoint) = match model {
        Model::Bnbp => {
            let mut state = TopicModelState::new(train, eta, Hyperpriors::default()).map_err(err)?;
            let trace = run_chain(&mut state, cfg, &mut rng, &mut acc).map_err(err)?;
            (trace, state.to_checkpoint(&rng).map_err(err)?)
        }
        Model::Lda => {
            let l = lda.expect("LDA settings");
            let mut state = LdaState::new(train, l.topics, l.alpha, eta, &mut rng).map_err(err)?;
            let trace = run_lda_chain(&mut state, cfg, &mut rng, &mut acc).map_err(err)?;
            (trace, state.to_checkpoint(&rng).map_err(err)?)
        }
    };
    let summary = trace_diagnostics(&trace, burnin).map_err(err)?;
    let draws = acc.draws();
    let perplexity = if draws > 0 { Some(acc.finish().map_err(err)?) } else { None };
    Ok(ChainRun {
        trace,
        summary,
        perplexity,
        draws,
        checkpoint,
    })
}

const SUMMARY_HEADER: &str =
    "model,eta,chain,iters,burnin,K_J_final,K_J_posterior_mean,K_J_final_window_mean,stabilization_iter,draws,perplexity";

fn summary_row(model: Model, eta: f64, chain: usize, run: &ChainRun) -> String {
    let s = &run.summary;
    format!(
        "{},{eta},{chain},{},{},{},{},{},{},{},{}",
        model_name(model),
        s.iterations,
        s.burnin,
        run.trace.last().map_or(0, |r| r.k),
        cell(s.posterior_mean_k),
        s.final_window_mean,
        s.stabilization_iter,
        run.draws,
        cell(run.perplexity)
    )
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Bnbp => ModelKind::Bnbp.as_str(),
        Model::Lda => ModelKind::Lda.as_str(),
    }
}

fn lda_header(lda: Option<&LdaArgs>, header: &mut Header) {
    if let Some(l) = lda {
        header.set("topics", l.topics).set("alpha", l.alpha);
    }
}

fn stabilization_header(header: &mut Header) {
    header
        .set("stabilization_window", STABILIZATION_WINDOW)
        .set("stabilization_band", STABILIZATION_BAND);
}

fn train(
    corpus: &CorpusArgs,
    model: Model,
    eta: f64,
    lda: Option<&LdaArgs>,
    chain: &ChainArgs,
    common: &CommonArgs,
) -> CmdResult {
    check_eta(eta)?;
    let command = format!("train-{}", model_name(model));
    let mut header = Header::new(&command);
    header.set("model", model_name(model)).set("eta", eta);
    lda_header(lda, &mut header);
    let (cfg, burnin) = chain_config(chain, &mut header)?;
    seed_header(&mut header, common);
    stabilization_header(&mut header);
    let root = RngStream::new(common.seed);
    let data = prepare_corpus(corpus, &root, &mut header)?;
    let run = run_one(model, &data.train, &data.test, eta, lda, &cfg, burnin, root.split(1))?;

    let mut out = Artifacts::new(&common.out)?;
    out.stage("trace.csv", |w| run.trace.write_csv(w, header.lines()))?;
    out.stage("summary.csv", |w| {
        header.write(w)?;
        writeln!(w, "{SUMMARY_HEADER}")?;
        writeln!(w, "{}", summary_row(model, eta, 0, &run))
    })?;
    out.stage("checkpoint.txt", |w| run.checkpoint.write_to(w))?;
    out.stage("test.docword.txt", |w| {
        write_uci_counts(w, data.test.docs(), data.test.vocab_size())
    })?;
    out.commit()
}

fn eval_perplexity(a: &EvalArgs) -> CmdResult {
    if a.collect == 0 {
        return Err("--collect must be at least 1".into());
    }
    let ck = Checkpoint::load(&a.checkpoint).map_err(err)?;
    let test = TestCounts::read_uci(&a.test).map_err(err)?;
    if test.num_docs() != ck.tokens.len() {
        return Err(format!(
            "test counts cover {} documents, checkpoint has {}",
            test.num_docs(),
            ck.tokens.len()
        ));
    }
    if test.vocab_size() != ck.vocab_size {
        return Err(format!(
            "test counts use {} terms, checkpoint has {}",
            test.vocab_size(),
            ck.vocab_size
        ));
    }
    let cfg = TrainConfig {
        iters: a.collect,
        collect: a.collect,
        thin: a.thin,
    };
    cfg.validate().map_err(err)?;
    let mut header = Header::new("eval-perplexity");
    header
        .set("checkpoint", a.checkpoint.display())
        .set("test", a.test.display())
        .set("model", ck.model().as_str())
        .set("checkpoint_iteration", ck.iteration)
        .set("checkpoint_seed", ck.seed)
        .set("checkpoint_rng_position", ck.rng_position)
        .set("collect", a.collect)
        .set("thin", a.thin);
    let mut rng = ck.rng();
    let mut acc = PerplexityAccumulator::new(&test);
    let trace = match ck.model() {
        ModelKind::Bnbp => {
            let mut state = TopicModelState::from_checkpoint(&ck).map_err(err)?;
            run_chain(&mut state, &cfg, &mut rng, &mut acc).map_err(err)?
        }
        ModelKind::Lda => {
            let mut state = LdaState::from_checkpoint(&ck).map_err(err)?;
            run_lda_chain(&mut state, &cfg, &mut rng, &mut acc).map_err(err)?
        }
    };
    let p = acc.finish().map_err(err)?;
    let draws = acc.draws();
    let k_mean = {
        let k = trace.k_values();
        k[1..].iter().sum::<f64>() / (k.len() - 1) as f64
    };
    let mut out = Artifacts::new(&a.out)?;
    out.stage("perplexity.csv", |w| {
        header.write(w)?;
        writeln!(w, "model,from_iter,to_iter,draws,test_tokens,K_J_mean,perplexity")?;
        writeln!(
            w,
            "{},{},{},{draws},{},{k_mean},{p}",
            ck.model().as_str(),
            ck.iteration,
            ck.iteration + a.collect,
            test.total()
        )
    })?;
    out.stage("eval_trace.csv", |w| trace.write_csv(w, header.lines()))?;
    out.commit()
}

fn sweep_eta(a: &SweepArgs) -> CmdResult {
    if a.eta.is_empty() {
        return Err("--eta grid is empty".into());
    }
    for &e in &a.eta {
        check_eta(e)?;
    }
    if a.chains == 0 {
        return Err("--chains must be at least 1".into());
    }
    let lda = (a.model == Model::Lda).then_some(&a.lda);
    let mut header = Header::new("sweep-eta");
    header
        .set("model", model_name(a.model))
        .set("eta", join(&a.eta))
        .set("chains", a.chains);
    lda_header(lda, &mut header);
    let (cfg, burnin) = chain_config(&a.chain, &mut header)?;
    seed_header(&mut header, &a.common);
    stabilization_header(&mut header);
    let root = RngStream::new(a.common.seed);
    let data = prepare_corpus(&a.corpus, &root, &mut header)?;

    let jobs: Vec<(usize, usize)> = (0..a.eta.len())
        .flat_map(|e| (0..a.chains).map(move |c| (e, c)))
        .collect();
    let runs: Vec<Result<ChainRun, String>> = jobs
        .par_iter()
        .map(|&(e, c)| {
            run_one(
                a.model,
                &data.train,
                &data.test,
                a.eta[e],
                lda,
                &cfg,
                burnin,
                root.split(1 + c as u64),
            )
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut out = Artifacts::new(&a.common.out)?;
    out.stage("sweep.csv", |w| {
        header.write(w)?;
        writeln!(w, "{SUMMARY_HEADER}")?;
        jobs.iter()
            .zip(&runs)
            .try_for_each(|(&(e, c), run)| writeln!(w, "{}", summary_row(a.model, a.eta[e], c, run)))
    })?;
    for (&(e, c), run) in jobs.iter().zip(&runs) {
        let mut h = header.clone();
        h.set("run_eta", a.eta[e]).set("run_chain", c);
        out.stage(&format!("trace_eta{}_chain{c}.csv", a.eta[e]), |w| {
            run.trace.write_csv(w, h.lines())
        })?;
    }
    out.commit()
}
