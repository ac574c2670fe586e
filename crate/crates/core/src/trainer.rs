//! Per-sentence Adam training with dev-set model selection.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::Graph;
use crate::checkpoint::{self, Checkpoint};
use crate::conllu::{read_conllu, Sentence, Treebank};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, Metrics};
use crate::layers::Vocab;
use crate::model::{seeded_rng, Hyperparams, ModelParams, ModelRng};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub train_path: PathBuf,
    /// Without a dev file the training file is split 4:1.
    pub dev_path: Option<PathBuf>,
    pub model_out_path: Option<PathBuf>,
    pub hyper: Hyperparams,
    pub shuffle: bool,
}

#[derive(Clone, Debug)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev: Metrics,
    pub is_best: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochReport>,
}

/// First 80% of the sentences for training, the rest for development.
pub fn split_dev(treebank: &Treebank) -> (Treebank, Treebank) {
    let cut = treebank.len() * 4 / 5;
    let train = Treebank::new(treebank.sentences[..cut].to_vec());
    let dev = Treebank::new(treebank.sentences[cut..].to_vec());
    (train, dev)
}

/// Reads the treebanks named in `config`, trains, and writes the best checkpoint if a path is given.
pub fn train(config: &TrainConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<TrainOutcome> {
    let full = read_conllu(&config.train_path)?;
    let (train_set, dev_set) = match &config.dev_path {
        Some(path) => (full, read_conllu(path)?),
        None => split_dev(&full),
    };
    let outcome = train_on(&train_set, &dev_set, &config.hyper, config.shuffle, on_epoch)?;
    if let Some(path) = &config.model_out_path {
        checkpoint::serialize(&outcome.checkpoint, path)?;
    }
    Ok(outcome)
}

/// Builds the vocabulary from `train_set`, then runs `hyper.epochs` epochs.
pub fn train_on(
    train_set: &Treebank,
    dev_set: &Treebank,
    hyper: &Hyperparams,
    shuffle: bool,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if dev_set.token_count() == 0 {
        return Err(Error::Config("development set is empty".into()));
    }
    let vocab = Vocab::build(train_set)?;
    let mut rng = seeded_rng(hyper.seed);
    let mut model = ModelParams::new(hyper.clone(), vocab, &mut rng)?;
    // Fail on malformed trees before spending an epoch on them.
    for s in &train_set.sentences {
        model.gold(s)?;
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let start = Instant::now();
        if shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let loss = train_step(&mut model, &train_set.sentences[i], &mut rng).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, sentence: i },
                other => other,
            })?;
            total += loss;
        }
        let mean_loss = total / train_set.len().max(1) as f64;
        let dev = evaluate_model(&model, dev_set, EvalOptions::default())?;
        let is_best = best.as_ref().is_none_or(|(score, _, _)| dev.mixed > *score);
        if is_best {
            best = Some((dev.mixed, epoch, model.clone()));
        }
        let report = EpochReport {
            epoch,
            mean_loss,
            dev,
            is_best,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        history.push(report);
    }
    let (score, epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(params, score, epoch as u32),
        history,
    })
}

/// One forward/backward pass and Adam update on a single sentence. Returns the loss.
pub fn train_step(model: &mut ModelParams, sentence: &Sentence, rng: &mut ModelRng) -> Result<f64> {
    let (value, grads) = {
        let mut g = Graph::new(&model.store);
        let loss = model.joint_loss(&mut g, sentence, Some(rng))?;
        let value = g.scalar(loss.total);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, sentence: 0 });
        }
        (value, g.backward(loss.total)?.params)
    };
    model.store.accumulate(&grads);
    model.hyper.adam.update(&mut model.store)?;
    Ok(value)
}

pub fn predict_treebank(model: &ModelParams, treebank: &Treebank) -> Result<Treebank> {
    let mut out = treebank.clone();
    for s in out.sentences.iter_mut() {
        *s = model.annotate(s)?;
    }
    Ok(out)
}

/// Scores `model` on gold-annotated `treebank` in inference mode.
pub fn evaluate_model(model: &ModelParams, treebank: &Treebank, opts: EvalOptions) -> Result<Metrics> {
    let pred = predict_treebank(model, treebank)?;
    evaluate(treebank, &pred, opts)
}
