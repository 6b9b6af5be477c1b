//! Pairwise hinge-loss training with early stopping on validation MRR@10.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, Qrels, RunList};
use crate::model::{ForwardOptions, TkModel};
use crate::optim::Adam;
use crate::text::TokenSequence;
use crate::tsv::{TextRecord, TextTriple};

/// `max(0, margin - (s_pos - s_neg))`.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - (s_pos - s_neg)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub margin: f64,
    /// Embeddings, contextualization layers and the blend weight.
    pub lr_contextual: f64,
    /// Kernel pooling weights and everything else.
    pub lr_other: f64,
    /// Steps between validation checks.
    pub validate_every: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            margin: 1.0,
            lr_contextual: 1e-4,
            lr_other: 1e-3,
            validate_every: 100,
            patience: 4,
            max_steps: 10_000,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.lr_contextual >= 0.0 && self.lr_other >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if self.validate_every == 0 || self.patience == 0 || self.max_steps == 0 {
            return Err(Error::Config(
                "validate_every, patience and max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub query: TokenSequence,
    pub positive: TokenSequence,
    pub negative: TokenSequence,
}

/// Encodes text triples; a text without tokens is an error.
pub fn encode_triples(model: &TkModel, triples: &[TextTriple]) -> Result<Vec<TrainingTriple>> {
    triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let context = |e: Error| Error::InvalidArgument(format!("triple {}: {e}", i + 1));
            Ok(TrainingTriple {
                query: model.encode_query(&t.query).map_err(context)?,
                positive: model.encode_doc(&t.positive).map_err(context)?,
                negative: model.encode_doc(&t.negative).map_err(context)?,
            })
        })
        .collect()
}

/// Candidate lists of validation queries together with their judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub queries: Vec<ValidationQuery>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationQuery {
    pub id: String,
    pub query: TokenSequence,
    pub candidates: Vec<(String, TokenSequence)>,
}

impl ValidationSet {
    /// Collects the candidates of `run` for every query in `queries`.
    ///
    /// Queries without candidates and texts without tokens are skipped with a warning.
    pub fn build(
        model: &TkModel,
        queries: &[TextRecord],
        documents: &HashMap<String, String>,
        run: &RunList,
        qrels: Qrels,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for q in queries {
            let Some(entries) = run.get(&q.id).filter(|e| !e.is_empty()) else {
                log::warn!("validation query {} has no candidates; skipped", q.id);
                continue;
            };
            let query = match model.encode_query(&q.text) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("validation query {} skipped: {e}", q.id);
                    continue;
                }
            };
            let mut candidates = Vec::with_capacity(entries.len());
            for e in entries {
                let text = documents
                    .get(&e.doc_id)
                    .ok_or_else(|| Error::UnknownId(format!("document {}", e.doc_id)))?;
                match model.encode_doc(text) {
                    Ok(d) => candidates.push((e.doc_id.clone(), d)),
                    Err(err) => log::warn!("document {} skipped: {err}", e.doc_id),
                }
            }
            if candidates.is_empty() {
                log::warn!(
                    "validation query {} has no usable candidates; skipped",
                    q.id
                );
                continue;
            }
            out.push(ValidationQuery {
                id: q.id.clone(),
                query,
                candidates,
            });
        }
        if out.is_empty() {
            return Err(Error::Empty("validation set has no usable queries".into()));
        }
        Ok(ValidationSet {
            queries: out,
            qrels,
        })
    }

    /// Ranks every candidate list with `model`.
    pub fn rank(&self, model: &TkModel) -> Result<RunList> {
        let mut run = RunList::new("validation");
        for q in &self.queries {
            let scores = q
                .candidates
                .par_iter()
                .map(|(id, d)| Ok((id.clone(), model.forward(&q.query, d)?.score)))
                .collect::<Result<Vec<_>>>()?;
            run.set_scores(q.id.clone(), scores)?;
        }
        Ok(run)
    }

    pub fn mrr_at_10(&self, model: &TkModel) -> Result<f64> {
        mrr_at_k(&self.rank(model)?, &self.qrels, 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogEntry {
    Loss { step: usize, loss: f64 },
    Validation { step: usize, mrr: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn losses(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().filter_map(|e| match *e {
            LogEntry::Loss { step, loss } => Some((step, loss)),
            _ => None,
        })
    }

    pub fn validations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().filter_map(|e| match *e {
            LogEntry::Validation { step, mrr } => Some((step, mrr)),
            _ => None,
        })
    }

    /// One `step<TAB>loss` line per step; a validation check adds a
    /// `step<TAB>mrr@10` line right after the loss line of its step.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let (step, value) = match *e {
                LogEntry::Loss { step, loss } => (step, loss),
                LogEntry::Validation { step, mrr } => (step, mrr),
            };
            let _ = writeln!(out, "{step}\t{value}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The weights of the best validation check.
    pub model: TkModel,
    pub best_step: usize,
    pub best_mrr: f64,
    pub steps: usize,
    pub stopped_early: bool,
    pub log: TrainLog,
}

/// Trains with validation MRR@10 on `validation`.
pub fn train(
    model: TkModel,
    triples: &[TrainingTriple],
    validation: &ValidationSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_validator(model, triples, config, |m| validation.mrr_at_10(m))
}

/// Forward and backward pass of one triple; returns its loss and gradients.
fn triple_gradients(model: &TkModel, t: &TrainingTriple, margin: f64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&model.params);
    let options = ForwardOptions::default();
    let q = model.encode_on_tape(&mut tape, &t.query, options)?;
    let p = model.encode_on_tape(&mut tape, &t.positive, options)?;
    let n = model.encode_on_tape(&mut tape, &t.negative, options)?;
    let sp = model.score_on_tape(&mut tape, &q, &p)?.score;
    let sn = model.score_on_tape(&mut tape, &q, &n)?.score;
    let diff = tape.sub(sn, sp);
    let shifted = tape.add_scalar(diff, margin);
    let loss = tape.relu(shifted);
    Ok((tape.value(loss).item(), tape.backward(loss)))
}

/// Trains with an arbitrary validation metric (higher is better).
///
/// Batches are drawn from a seeded permutation per epoch and the final
/// partial batch of each epoch is dropped. The validator runs every
/// `validate_every` steps and once more after the last step if that step was
/// not a check. The returned model is the snapshot of the best check; ties
/// keep the earlier one.
pub fn train_with_validator<V>(
    mut model: TkModel,
    triples: &[TrainingTriple],
    config: &TrainConfig,
    mut validator: V,
) -> Result<TrainOutcome>
where
    V: FnMut(&TkModel) -> Result<f64>,
{
    config.validate()?;
    if triples.is_empty() {
        return Err(Error::Empty("no training triples".into()));
    }
    if triples.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} triples cannot fill one batch of {}",
            triples.len(),
            config.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params, config.lr_contextual, config.lr_other);
    let batches_per_epoch = triples.len() / config.batch_size;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, TkModel)> = None;
    let mut since_improvement = 0;
    let mut stopped_early = false;
    let mut step = 0;
    model.params.zero_grad();

    while step < config.max_steps {
        let batch_index = step % batches_per_epoch;
        if batch_index == 0 {
            order.shuffle(&mut rng);
        }
        step += 1;
        let batch = &order[batch_index * config.batch_size..(batch_index + 1) * config.batch_size];
        let results = batch
            .par_iter()
            .map(|&i| triple_gradients(&model, &triples[i], config.margin))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / config.batch_size as f64;
        let mut loss = 0.0;
        for (l, grads) in &results {
            loss += l;
            model.params.accumulate(grads, scale);
        }
        loss *= scale;
        adam.step(&mut model.params)?;
        log.entries.push(LogEntry::Loss { step, loss });
        log::debug!("step {step} loss {loss}");

        let last = step == config.max_steps;
        if step % config.validate_every == 0 || last {
            let mrr = validator(&model)?;
            log.entries.push(LogEntry::Validation { step, mrr });
            log::info!("step {step} validation {mrr:.4}");
            let improved = best.as_ref().is_none_or(|(_, b, _)| mrr > *b);
            if improved {
                best = Some((step, mrr, model.clone()));
                since_improvement = 0;
            } else {
                since_improvement += 1;
                if since_improvement >= config.patience {
                    stopped_early = !last;
                    break;
                }
            }
        }
    }
    let (best_step, best_mrr, best_model) = best.expect("at least one validation check runs");
    Ok(TrainOutcome {
        model: best_model,
        best_step,
        best_mrr,
        steps: step,
        stopped_early,
        log,
    })
}

/// Fraction of triples whose positive document outscores the negative.
pub fn pairwise_accuracy(model: &TkModel, triples: &[TrainingTriple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Empty("no triples".into()));
    }
    let correct = triples
        .par_iter()
        .map(|t| {
            let p = model.forward(&t.query, &t.positive)?.score;
            let n = model.forward(&t.query, &t.negative)?.score;
            Ok(usize::from(p > n))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / triples.len() as f64)
}
