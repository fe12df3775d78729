//! One function per subcommand. Each resolves its inputs (flag, else
//! config-file value, else default or error), runs the library call, writes
//! the outputs, and prints a short human summary to stdout.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use lingua_adapt::bpe::TokenizerModel;
use lingua_adapt::corpus::{load_corpus, sample_documents, Corpus, CorpusFormat, LoadMode};
use lingua_adapt::embed::{EmbeddingTable, InitKind, InitStrategy};
use lingua_adapt::metrics::{fertility, forgetting_delta, load_task_set, run_eval, MetricsReport};
use lingua_adapt::toylm::{
    loss_curve_csv, new_lm, resize_vocab, train, warm_start, LMCheckpoint, LMConfig, TrainSchedule,
    DEFAULT_WARM_LR,
};
use lingua_adapt::vocab_merge::{diff_vocab, merge_tokenizers, VocabDiffReport};
use lingua_adapt::{Error, Result};

use crate::config::{missing, Overlay};
use crate::svg::line_chart;
use crate::{
    CompareArgs, EvalArgs, InitEmbeddingsArgs, MergeVocabArgs, StrategyArg, SweepVocabArgs,
    TaskKindArg, TrainLmArgs, TrainTokenizerArgs,
};

pub fn train_tokenizer(args: &TrainTokenizerArgs, cfg: &Overlay) -> Result<()> {
    let corpus_path = pick(args.corpus.clone(), cfg.path("corpus")?, "corpus")?;
    let vocab_size = pick(args.vocab_size, cfg.usize("vocab_size")?, "vocab-size")?;
    let sample_n = args.sample_n.or(cfg.usize("sample_n")?);
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;

    let corpus = load_corpus_auto(&corpus_path)?;
    let corpus = match sample_n {
        Some(n) if n >= corpus.n_docs() => {
            eprintln!(
                "warning: --sample-n {n} covers the whole corpus ({} documents); using all of it",
                corpus.n_docs()
            );
            corpus
        }
        Some(n) => sample_documents(&corpus, n, seed),
        None => corpus,
    };
    let model = lingua_adapt::bpe::train_bpe(&corpus, vocab_size, seed)?;
    write_file(&out, model.to_json().as_bytes())?;
    println!(
        "achieved vocabulary {} (requested {vocab_size}) from {} documents; wrote {}",
        model.vocab_size(),
        corpus.n_docs(),
        out.display()
    );
    Ok(())
}

pub fn merge_vocab(args: &MergeVocabArgs, cfg: &Overlay) -> Result<()> {
    let base_path = pick(args.base.clone(), cfg.path("base")?, "base")?;
    let extra_path = pick(args.extra.clone(), cfg.path("extra")?, "extra")?;
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;
    let report_path = pick(args.report.clone(), cfg.path("report")?, "report")?;

    let base = TokenizerModel::load(&base_path)?;
    let extra = TokenizerModel::load(&extra_path)?;
    let (merged, diff) = merge_tokenizers(&base, &extra)?;
    write_file(&out, merged.to_json().as_bytes())?;
    let report = diff.report();
    write_file(&report_path, report.to_json().as_bytes())?;
    println!(
        "merged: {} base + {} new tokens = {} total ({} overlapping, {} duplicate merges dropped); wrote {}",
        base.vocab_size(),
        report.new_token_count,
        merged.vocab_size(),
        report.overlap_count,
        report.dropped_duplicate_merges,
        out.display()
    );
    Ok(())
}

pub fn sweep_vocab(args: &SweepVocabArgs, cfg: &Overlay) -> Result<()> {
    let base_path = pick(args.base.clone(), cfg.path("base")?, "base")?;
    let train_path = pick(
        args.corpus_train.clone(),
        cfg.path("corpus_train")?,
        "corpus-train",
    )?;
    let eval_path = pick(
        args.corpus_eval.clone(),
        cfg.path("corpus_eval")?,
        "corpus-eval",
    )?;
    let sizes_raw = pick(args.sizes.clone(), cfg.string("sizes")?, "sizes")?;
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;

    let sizes = parse_sizes(&sizes_raw)?;
    let base = TokenizerModel::load(&base_path)?;
    let train_corpus = load_corpus_auto(&train_path)?;
    let eval_corpus = load_corpus_auto(&eval_path)?;

    let mut csv = String::from("size,delta_v,avg_tokens_per_doc,tokens_per_byte\n");
    let mut points = Vec::new();
    for &size in &sizes {
        let extra = lingua_adapt::bpe::train_bpe(&train_corpus, size, seed)?;
        let (merged, diff) = merge_tokenizers(&base, &extra)?;
        let f = fertility(&merged, &eval_corpus)?;
        let tpb = f.tokens_per_byte.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{size},{},{},{tpb}\n",
            diff.new_ids.len(),
            f.avg_tokens_per_doc
        ));
        points.push((size as f64, f.avg_tokens_per_doc));
        println!(
            "size {size}: +{} tokens, {:.2} tokens/doc",
            diff.new_ids.len(),
            f.avg_tokens_per_doc
        );
    }
    let csv_path = with_suffix(&out, ".csv");
    let svg_path = with_suffix(&out, ".svg");
    write_file(&csv_path, csv.as_bytes())?;
    let chart = line_chart(
        "Fertility vs. extension vocabulary size",
        "target vocabulary size",
        "avg tokens per document",
        &points,
    );
    write_file(&svg_path, chart.as_bytes())?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

pub fn init_embeddings(args: &InitEmbeddingsArgs, cfg: &Overlay) -> Result<()> {
    let ckpt_path = pick(
        args.checkpoint.clone(),
        cfg.path("checkpoint")?,
        "checkpoint",
    )?;
    let base_path = pick(args.base_tok.clone(), cfg.path("base_tok")?, "base-tok")?;
    let merged_path = pick(
        args.merged_tok.clone(),
        cfg.path("merged_tok")?,
        "merged-tok",
    )?;
    let strategy_arg = match args.strategy {
        Some(s) => s,
        None => match cfg.string("strategy")? {
            Some(s) => parse_enum::<StrategyArg>(&s, "strategy")?,
            None => return Err(missing("strategy")),
        },
    };
    let aux_path = args.aux.clone().or(cfg.path("aux")?);
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let focus_k = args.focus_k.or(cfg.usize("focus_k")?).unwrap_or(10);
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;

    let lm = LMCheckpoint::load(&ckpt_path)?;
    let base = TokenizerModel::load(&base_path)?;
    let merged = TokenizerModel::load(&merged_path)?;
    let diff = diff_vocab(&base, &merged)?;
    // diff_vocab only takes a set difference; make sure `merged` really is
    // `base` with tokens appended, or the new ids would point at the wrong
    // surfaces
    let consistent = merged.vocab_size() == base.vocab_size() + diff.new_ids.len()
        && diff.new_ids.iter().enumerate().all(|(i, &v)| {
            merged
                .token_bytes(v)
                .map(|b| b == diff.new_tokens[i].as_slice())
                .unwrap_or(false)
        });
    if !consistent {
        return Err(Error::InvalidArgument(
            "--merged-tok is not the base model with tokens appended; \
             produce it with merge-vocab"
                .to_string(),
        ));
    }

    let kind = match strategy_arg {
        StrategyArg::Mean => InitKind::Mean,
        StrategyArg::Random => InitKind::Random,
        StrategyArg::RandomToken => InitKind::RandomToken,
        StrategyArg::Focus => InitKind::FocusLite,
    };
    if kind != InitKind::FocusLite && aux_path.is_some() {
        eprintln!("warning: --aux is only used by --strategy focus; ignoring it");
    }
    let aux = match (kind, &aux_path) {
        (InitKind::FocusLite, Some(p)) => Some(EmbeddingTable::load(p)?),
        (InitKind::FocusLite, None) => return Err(Error::MissingAuxEmbedding),
        _ => None,
    };
    let strategy = InitStrategy {
        kind,
        seed,
        focus_k,
    };
    let grown = resize_vocab(&lm, &merged, &base, &diff, &strategy, aux.as_ref())?;
    grown.save(&out)?;
    println!(
        "grew embedding tables from {} to {} rows ({} strategy); wrote {}",
        base.vocab_size(),
        merged.vocab_size(),
        strategy_name(strategy_arg),
        out.display()
    );
    Ok(())
}

pub fn train_lm(args: &TrainLmArgs, cfg: &Overlay) -> Result<()> {
    let ckpt_path = args.checkpoint.clone().or(cfg.path("checkpoint")?);
    let tok_path = pick(args.tokenizer.clone(), cfg.path("tokenizer")?, "tokenizer")?;
    let corpus_path = pick(args.corpus.clone(), cfg.path("corpus")?, "corpus")?;
    let steps = pick(args.steps, cfg.usize("steps")?, "steps")?;
    let warmup = args.warmup.or(cfg.usize("warmup")?).unwrap_or(0);
    let lr = pick(args.lr, cfg.f64("lr")?, "lr")?;
    let warm_frac = args.warm_start_frac.or(cfg.f64("warm_start_frac")?);
    let freeze_body = args.freeze_body || cfg.bool("freeze_body")?.unwrap_or(false);
    let seed = args.seed.or(cfg.u64("seed")?);
    let batch_size = args.batch_size.or(cfg.usize("batch_size")?).unwrap_or(16);
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;
    let loss_log = args.loss_log.clone().or(cfg.path("loss_log")?);

    let tokenizer = TokenizerModel::load(&tok_path)?;
    let corpus = load_corpus_auto(&corpus_path)?;
    let mut lm = match &ckpt_path {
        Some(dir) => {
            if seed.is_some() {
                eprintln!("warning: --seed is ignored when resuming a checkpoint");
            }
            LMCheckpoint::load(dir)?
        }
        None => new_lm(LMConfig {
            context_k: args.context_k.or(cfg.usize("context_k")?).unwrap_or(8),
            embed_dim: args.embed_dim.or(cfg.usize("embed_dim")?).unwrap_or(64),
            hidden_h: args.hidden_h.or(cfg.usize("hidden_h")?).unwrap_or(256),
            vocab_size: tokenizer.vocab_size(),
            seed: seed.unwrap_or(0),
        })?,
    };

    let mut records = Vec::new();
    if let Some(frac) = warm_frac {
        records.extend(warm_start(
            &mut lm,
            &corpus,
            &tokenizer,
            frac,
            DEFAULT_WARM_LR,
        )?);
        println!("warm start: {} embedding-only steps", records.len());
    }
    if steps > 0 {
        let schedule = TrainSchedule {
            freeze_body,
            ..TrainSchedule::new(steps, warmup, lr, batch_size)
        };
        records.extend(train(&mut lm, &corpus, &tokenizer, &schedule)?);
    }
    lm.save(&out)?;
    if let Some(log) = &loss_log {
        write_file(log, loss_curve_csv(&records).as_bytes())?;
    }
    match (records.first(), records.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps (model now at step {}): loss {:.4} -> {:.4}; wrote {}",
            records.len(),
            lm.step(),
            first.loss,
            last.loss,
            out.display()
        ),
        _ => println!("no training steps requested; wrote {}", out.display()),
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, cfg: &Overlay) -> Result<()> {
    let ckpt_path = pick(
        args.checkpoint.clone(),
        cfg.path("checkpoint")?,
        "checkpoint",
    )?;
    let tok_path = pick(args.tokenizer.clone(), cfg.path("tokenizer")?, "tokenizer")?;
    let task_path = pick(args.task.clone(), cfg.path("task")?, "task")?;
    let kind = match args.kind {
        Some(k) => k,
        None => match cfg.string("kind")? {
            Some(s) => parse_enum::<TaskKindArg>(&s, "kind")?,
            None => return Err(missing("kind")),
        },
    };
    let max_tokens = args.max_tokens.or(cfg.usize("max_tokens")?).unwrap_or(200);
    let added_from = args.added_from.clone().or(cfg.path("added_from")?);
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;

    let lm = LMCheckpoint::load(&ckpt_path)?;
    let tokenizer = TokenizerModel::load(&tok_path)?;
    let tasks = load_task_set(&task_path, kind.into())?;

    let added: Option<HashSet<u32>> = match &added_from {
        Some(path) => Some(added_ids_from_report(path)?),
        None => {
            if matches!(kind, TaskKindArg::Gen) {
                eprintln!(
                    "warning: no --added-from merge report; %Gen will be omitted from the report"
                );
            }
            None
        }
    };
    let report = run_eval(&lm, &tokenizer, &tasks, max_tokens, added.as_ref())?;
    write_file(&out, report.to_json().as_bytes())?;
    for (name, value) in &report.metrics {
        println!("{name}: {value:.4}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn compare(args: &CompareArgs, cfg: &Overlay) -> Result<()> {
    let base_path = pick(
        args.base_report.clone(),
        cfg.path("base_report")?,
        "base-report",
    )?;
    let adapted_path = pick(
        args.adapted_report.clone(),
        cfg.path("adapted_report")?,
        "adapted-report",
    )?;
    let out = pick(args.out.clone(), cfg.path("out")?, "out")?;

    let base = MetricsReport::load(&base_path)?;
    let adapted = MetricsReport::load(&adapted_path)?;
    let delta = forgetting_delta(&base, &adapted)?;
    write_file(&with_suffix(&out, ".csv"), delta.to_csv().as_bytes())?;
    write_file(&with_suffix(&out, ".json"), delta.to_json().as_bytes())?;
    for (name, d) in &delta.deltas {
        println!("{name}: {d:+.4}");
    }
    println!("mean: {:+.4}", delta.mean_delta);
    println!("wrote {}.csv and {}.json", out.display(), out.display());
    Ok(())
}

/// Flag value, else config value, else a "required" error naming the flag.
fn pick<T>(flag: Option<T>, cfg: Option<T>, name: &str) -> Result<T> {
    flag.or(cfg).ok_or_else(|| missing(name))
}

/// `.jsonl`/`.json` files hold one JSON record per line; anything else is
/// one plain-text document per line.
fn load_corpus_auto(path: &Path) -> Result<Corpus> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
        _ => CorpusFormat::Lines,
    };
    load_corpus(path, format, LoadMode::Strict)
}

fn parse_sizes(raw: &str) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = raw
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("invalid size {:?} in --sizes", s.trim()))
            })
        })
        .collect::<Result<_>>()?;
    if sizes.is_empty() {
        return Err(Error::InvalidArgument(
            "--sizes must list at least one size".to_string(),
        ));
    }
    Ok(sizes)
}

fn parse_enum<T: clap::ValueEnum>(s: &str, key: &str) -> Result<T> {
    T::from_str(s, true)
        .map_err(|_| Error::InvalidArgument(format!("config key {key:?}: unknown value {s:?}")))
}

fn strategy_name(s: StrategyArg) -> &'static str {
    match s {
        StrategyArg::Mean => "mean",
        StrategyArg::Random => "random",
        StrategyArg::RandomToken => "random-token",
        StrategyArg::Focus => "focus",
    }
}

/// ΔV ids from a merge-vocab report (`new_ids_range` is half-open).
fn added_ids_from_report(path: &Path) -> Result<HashSet<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let report: VocabDiffReport = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("merge report {}: {e}", path.display())))?;
    Ok((report.new_ids_range[0]..report.new_ids_range[1]).collect())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
