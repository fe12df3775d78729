//! Evaluation metrics: fertility, %Gen, throughput, byte-length-normalized
//! multiple-choice scoring, corpus BLEU, and forgetting deltas, plus the
//! task-file loader and the eval driver that ties them together.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bpe::TokenizerModel;
use crate::corpus::Corpus;
use crate::error::{read_file, Error, Result};
use crate::toylm::net::Net;
use crate::toylm::{check_tokenizer_matches, generate_greedy, LMCheckpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityReport {
    /// Fertility: mean token count per document.
    pub avg_tokens_per_doc: f64,
    /// Byte-normalized companion; `None` when the corpus has zero bytes.
    pub tokens_per_byte: Option<f64>,
    pub total_tokens: u64,
    pub n_docs: usize,
    pub tokenizer_id: String,
}

pub fn fertility(tokenizer: &TokenizerModel, corpus: &Corpus) -> Result<FertilityReport> {
    if corpus.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let total_tokens: u64 = tokenizer
        .encode_corpus(corpus)
        .iter()
        .map(|ids| ids.len() as u64)
        .sum();
    let total_bytes: u64 = corpus.docs.iter().map(|d| d.byte_len() as u64).sum();
    Ok(FertilityReport {
        avg_tokens_per_doc: total_tokens as f64 / corpus.n_docs() as f64,
        tokens_per_byte: (total_bytes > 0).then(|| total_tokens as f64 / total_bytes as f64),
        total_tokens,
        n_docs: corpus.n_docs(),
        tokenizer_id: tokenizer.fingerprint(),
    })
}

/// Percentage of `ids` that fall in the `added` set (ΔV membership).
pub fn percent_gen(ids: &[u32], added: &HashSet<u32>) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let hits = ids.iter().filter(|id| added.contains(id)).count();
    Ok(100.0 * hits as f64 / ids.len() as f64)
}

pub fn throughput(n_examples: usize, elapsed_seconds: f64) -> Result<f64> {
    // rejects NaN along with zero and negative durations
    if elapsed_seconds <= 0.0 || elapsed_seconds.is_nan() {
        return Err(Error::NonPositiveDuration(elapsed_seconds));
    }
    Ok(n_examples as f64 / elapsed_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    MultipleChoice,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McItem {
    pub prompt: String,
    pub choices: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenItem {
    pub prompt: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskItems {
    MultipleChoice(Vec<McItem>),
    Generation(Vec<GenItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub source_id: String,
    pub items: TaskItems,
}

impl TaskSet {
    pub fn multiple_choice(source_id: &str, items: Vec<McItem>) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if let Err(msg) = validate_mc_item(item) {
                return Err(Error::InvalidArgument(format!("item {i}: {msg}")));
            }
        }
        Ok(TaskSet {
            source_id: source_id.to_string(),
            items: TaskItems::MultipleChoice(items),
        })
    }

    pub fn generation(source_id: &str, items: Vec<GenItem>) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if let Err(msg) = validate_gen_item(item) {
                return Err(Error::InvalidArgument(format!("item {i}: {msg}")));
            }
        }
        Ok(TaskSet {
            source_id: source_id.to_string(),
            items: TaskItems::Generation(items),
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self.items {
            TaskItems::MultipleChoice(_) => TaskKind::MultipleChoice,
            TaskItems::Generation(_) => TaskKind::Generation,
        }
    }

    pub fn n_items(&self) -> usize {
        match &self.items {
            TaskItems::MultipleChoice(v) => v.len(),
            TaskItems::Generation(v) => v.len(),
        }
    }
}

fn validate_mc_item(item: &McItem) -> std::result::Result<(), String> {
    if item.choices.len() < 2 {
        return Err(format!("needs >= 2 choices, got {}", item.choices.len()));
    }
    if item.label >= item.choices.len() {
        return Err(format!(
            "label {} out of range for {} choices",
            item.label,
            item.choices.len()
        ));
    }
    Ok(())
}

fn validate_gen_item(item: &GenItem) -> std::result::Result<(), String> {
    if item.prompt.is_empty() {
        return Err("generation prompt is empty".to_string());
    }
    Ok(())
}

/// Load a JSON-lines task file. MC lines are
/// `{"prompt": str, "choices": [str,...], "label": int}`, generation lines
/// `{"prompt": str, "reference": str}`.
pub fn load_task_set(path: &Path, kind: TaskKind) -> Result<TaskSet> {
    let raw = read_file(path)?;
    let text = String::from_utf8(raw).map_err(|e| Error::InvalidUtf8 {
        offset: e.utf8_error().valid_up_to(),
    })?;
    let source_id = path.display().to_string();
    match kind {
        TaskKind::MultipleChoice => {
            let mut items = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let item: McItem =
                    serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                validate_mc_item(&item)
                    .map_err(|msg| Error::MalformedRecord { line: i + 1, msg })?;
                items.push(item);
            }
            Ok(TaskSet {
                source_id,
                items: TaskItems::MultipleChoice(items),
            })
        }
        TaskKind::Generation => {
            let mut items = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let item: GenItem =
                    serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                validate_gen_item(&item)
                    .map_err(|msg| Error::MalformedRecord { line: i + 1, msg })?;
                items.push(item);
            }
            Ok(TaskSet {
                source_id,
                items: TaskItems::Generation(items),
            })
        }
    }
}

/// Byte-length-normalized multiple choice: each choice is scored as the sum
/// of log softmax-probabilities of its tokens (conditioning on the prompt
/// and the preceding continuation tokens) divided by the choice's UTF-8
/// byte length; returns (argmax index, per-choice scores), ties going to
/// the lowest index.
pub fn score_multiple_choice(
    lm: &LMCheckpoint,
    tokenizer: &TokenizerModel,
    item: &McItem,
) -> Result<(usize, Vec<f64>)> {
    if item.choices.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "multiple choice needs >= 2 choices, got {}",
            item.choices.len()
        )));
    }
    if let Some(index) = item.choices.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyChoice { index });
    }
    check_tokenizer_matches(lm, tokenizer)?;

    let net = Net::from_checkpoint(lm);
    let k = lm.config.context_k;
    let prompt_ids = tokenizer.encode(&item.prompt);
    let mut ctx = vec![0u32; k];
    let mut logits = Vec::new();
    let mut scores = Vec::with_capacity(item.choices.len());
    for choice in &item.choices {
        let mut history = prompt_ids.clone();
        let mut total = 0.0f64;
        for &t in &tokenizer.encode(choice) {
            context_window(&history, &mut ctx);
            net.logits_one(&ctx, &mut logits);
            total += logits[t as usize] - logsumexp(&logits);
            history.push(t);
        }
        scores.push(total / choice.len() as f64);
    }
    let mut chosen = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[chosen] {
            chosen = i;
        }
    }
    Ok((chosen, scores))
}

/// Last-k window of `history`, left-padded with bos, oldest first.
fn context_window(history: &[u32], ctx: &mut [u32]) {
    let k = ctx.len();
    for (c, slot) in ctx.iter_mut().enumerate() {
        let back = k - c;
        *slot = if history.len() >= back {
            history[history.len() - back]
        } else {
            crate::bpe::BOS_ID
        };
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    None,
    AddK(f64),
}

/// Corpus-level BLEU in [0, 100] over sequences tokenized by `tokenizer`.
/// Modified n-gram precisions for n = 1..=max_n (orders with zero candidate
/// n-grams are excluded), geometric mean, brevity penalty
/// exp(1 − ref_len/cand_len) when the candidate side is shorter. With
/// `Smoothing::None` any zero precision zeroes the score; `AddK(k)` scores
/// each order as (matches + k) / (total + k).
pub fn bleu(
    candidates: &[&str],
    references: &[&str],
    tokenizer: &TokenizerModel,
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be >= 1".to_string()));
    }

    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;
    for (cand, rf) in candidates.iter().zip(references) {
        let c = tokenizer.encode(cand);
        let r = tokenizer.encode(rf);
        cand_len += c.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=max_n {
            let rc = ngram_counts(&r, n);
            let mut clipped = 0u64;
            let mut seen: HashMap<&[u32], u64> = HashMap::new();
            if c.len() >= n {
                for gram in c.windows(n) {
                    let used = seen.entry(gram).or_insert(0);
                    if *used < rc.get(gram).copied().unwrap_or(0) {
                        clipped += 1;
                    }
                    *used += 1;
                }
                totals[n - 1] += (c.len() - n + 1) as u64;
            }
            matches[n - 1] += clipped;
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0f64;
    let mut included = 0usize;
    for n in 0..max_n {
        if totals[n] == 0 {
            continue;
        }
        let p = match smoothing {
            Smoothing::None => {
                if matches[n] == 0 {
                    return Ok(0.0);
                }
                matches[n] as f64 / totals[n] as f64
            }
            Smoothing::AddK(k) => (matches[n] as f64 + k) / (totals[n] as f64 + k),
        };
        log_sum += p.ln();
        included += 1;
    }
    if included == 0 {
        return Ok(0.0);
    }
    let geo = (log_sum / included as f64).exp();
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * geo)
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], u64> {
    let mut counts = HashMap::new();
    if ids.len() >= n {
        for gram in ids.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tokenizer_id: String,
    pub checkpoint_id: String,
    pub task_id: String,
    pub n_items: usize,
    pub elapsed_seconds: f64,
    /// Seconds since the Unix epoch at report creation.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub meta: ReportMeta,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let report: MetricsReport =
            serde_json::from_str(json).map_err(|e| Error::MalformedRecord {
                line: e.line(),
                msg: e.to_string(),
            })?;
        for (name, v) in &report.metrics {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(format!("metric {name}")));
            }
        }
        Ok(report)
    }

    /// One `metric,value` row per metric, name-sorted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in &self.metrics {
            out.push_str(&format!("{name},{v}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = read_file(path)?;
        let text = String::from_utf8(raw).map_err(|e| Error::InvalidUtf8 {
            offset: e.utf8_error().valid_up_to(),
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// adapted − base for every shared metric name.
    pub deltas: BTreeMap<String, f64>,
    pub mean_delta: f64,
}

impl DeltaReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    /// `metric,delta` rows plus a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,delta\n");
        for (name, d) in &self.deltas {
            out.push_str(&format!("{name},{d}\n"));
        }
        out.push_str(&format!("mean,{}\n", self.mean_delta));
        out
    }
}

/// Per-metric adapted − base over the metric names the two reports share.
pub fn forgetting_delta(base: &MetricsReport, adapted: &MetricsReport) -> Result<DeltaReport> {
    let mut deltas = BTreeMap::new();
    for (name, b) in &base.metrics {
        if let Some(a) = adapted.metrics.get(name) {
            deltas.insert(name.clone(), a - b);
        }
    }
    if deltas.is_empty() {
        return Err(Error::NoSharedMetrics);
    }
    let mean_delta = deltas.values().sum::<f64>() / deltas.len() as f64;
    Ok(DeltaReport { deltas, mean_delta })
}

/// Injectable time source so the timing contract is testable; the real
/// clock is monotonic (`Instant`).
trait Clock {
    fn seconds(&self) -> f64;
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Evaluate a task set. Multiple choice reports `accuracy`; generation
/// reports `bleu` (add-1 smoothed), `throughput` over the generation loop's
/// wall time only (each generate call includes its own prompt encoding and
/// decoding), and — when `added` is given — `pct_gen` over the pooled
/// generated ids of the whole task.
pub fn run_eval(
    lm: &LMCheckpoint,
    tokenizer: &TokenizerModel,
    tasks: &TaskSet,
    gen_max_tokens: usize,
    added: Option<&HashSet<u32>>,
) -> Result<MetricsReport> {
    run_eval_with_clock(
        lm,
        tokenizer,
        tasks,
        gen_max_tokens,
        added,
        &WallClock(Instant::now()),
    )
}

fn run_eval_with_clock(
    lm: &LMCheckpoint,
    tokenizer: &TokenizerModel,
    tasks: &TaskSet,
    gen_max_tokens: usize,
    added: Option<&HashSet<u32>>,
    clock: &dyn Clock,
) -> Result<MetricsReport> {
    if tasks.n_items() == 0 {
        return Err(Error::InvalidArgument("task set has no items".to_string()));
    }
    check_tokenizer_matches(lm, tokenizer)?;
    let started = clock.seconds();
    let mut metrics = BTreeMap::new();
    match &tasks.items {
        TaskItems::MultipleChoice(items) => {
            let mut correct = 0usize;
            for item in items {
                let (chosen, _) = score_multiple_choice(lm, tokenizer, item)?;
                if chosen == item.label {
                    correct += 1;
                }
            }
            metrics.insert(
                "accuracy".to_string(),
                100.0 * correct as f64 / items.len() as f64,
            );
        }
        TaskItems::Generation(items) => {
            let gen_started = clock.seconds();
            let mut candidates = Vec::with_capacity(items.len());
            let mut pooled = Vec::new();
            for item in items {
                let g = generate_greedy(lm, tokenizer, &item.prompt, gen_max_tokens, false)?;
                pooled.extend_from_slice(&g.ids);
                candidates.push(g.text);
            }
            let gen_elapsed = clock.seconds() - gen_started;
            let cand: Vec<&str> = candidates.iter().map(String::as_str).collect();
            let refs: Vec<&str> = items.iter().map(|i| i.reference.as_str()).collect();
            metrics.insert(
                "bleu".to_string(),
                bleu(&cand, &refs, tokenizer, 4, Smoothing::AddK(1.0))?,
            );
            if let Some(added) = added {
                metrics.insert("pct_gen".to_string(), percent_gen(&pooled, added)?);
            }
            metrics.insert(
                "throughput".to_string(),
                throughput(items.len(), gen_elapsed)?,
            );
        }
    }
    for (name, v) in &metrics {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!("metric {name}")));
        }
    }
    Ok(MetricsReport {
        metrics,
        meta: ReportMeta {
            tokenizer_id: tokenizer.fingerprint(),
            checkpoint_id: lm.fingerprint(),
            task_id: tasks.source_id.clone(),
            n_items: tasks.n_items(),
            elapsed_seconds: clock.seconds() - started,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    })
}
