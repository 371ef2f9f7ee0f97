//! Two-stage training.
//!
//! Stage 1 fits the differentiator θ with the numerical integrator alone,
//! `s_{k+1} ≈ s_k + Ψ(s_k; θ)`, teacher-forced on consecutive snapshot
//! pairs. Stage 2 freezes θ and fits the correction φ on
//! `s_{k+1} ≈ s_k + Ψ(s_k; θ) + S(s_k, F; φ)`. Both use a mean absolute
//! error in normalized units.
//!
//! Mini-batch gradients are computed pair by pair in parallel and summed in
//! pair order, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{adam_step, AdamState, Graph, ParamStore, Tensor, Var};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{is_differentiator_param, snapshot_tensor, IntegratorSpec, Model, Scheme};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "PARC_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Differentiator,
    Correction,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Differentiator => 1,
            Stage::Correction => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate halves every this many epochs.
    pub halving_epochs: usize,
    pub min_learning_rate: f64,
    /// Stop after this many epochs without improvement; 0 disables.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Worker threads; `None` reads `PARC_THREADS`, then rayon's default.
    pub threads: Option<usize>,
    /// Stop once an epoch's training loss is at or below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-4,
            halving_epochs: 100,
            min_learning_rate: 1e-6,
            patience: 50,
            batch_size: 8,
            seed: 0,
            scheme: Scheme::Heun,
            threads: None,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be positive".into()));
        }
        if self.halving_epochs == 0 {
            return Err(Error::Validation("halving interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.min_learning_rate > 0.0) {
            return Err(Error::Validation("learning rates must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Validation("thread count must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.halving_epochs;
        (self.learning_rate * 0.5f64.powi(halvings.min(1000) as i32)).max(self.min_learning_rate)
    }

    fn thread_count(&self) -> Result<Option<usize>> {
        if let Some(n) = self.threads {
            return Ok(Some(n));
        }
        match std::env::var(THREADS_ENV) {
            Ok(s) => match s.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
            },
            Err(_) => Ok(None),
        }
    }
}

/// One row of the loss history. Epoch 0 is the untrained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

pub const HISTORY_COLUMNS: [&str; 4] = ["epoch", "train_loss", "val_loss", "lr"];

/// Loss history as CSV; an empty `val_loss` cell means no validation data.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = HISTORY_COLUMNS.join(",");
    s.push('\n');
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(s, "{},{:.16e},{},{:.16e}", r.epoch, r.train_loss, val, r.learning_rate).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 if training never improved).
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    /// Optimizer state after the last epoch run.
    pub optimizer: AdamState,
}

/// A teacher-forcing pair: snapshot `k` of entry `entry` and its successor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub entry: usize,
    pub step: usize,
}

pub fn pairs(ds: &Dataset, split: Split) -> Vec<PairIndex> {
    ds.entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == split)
        .flat_map(|(i, e)| (0..e.trajectory.len().saturating_sub(1)).map(move |k| PairIndex { entry: i, step: k }))
        .collect()
}

/// Tensors of one pair, plus the frozen `Ψ` and `F` for stage 2.
struct PreparedPair {
    state: Tensor,
    target: Tensor,
    cond: Option<Tensor>,
    frozen: Option<(Tensor, Tensor)>,
}

fn prepare(model: &Model, ds: &Dataset, p: PairIndex) -> Result<PreparedPair> {
    let e = &ds.entries()[p.entry];
    let s = &e.trajectory.snapshots()[p.step];
    model.check_snapshot(s)?;
    let grid = s.grid();
    let cond = if model.config.constants.is_empty() {
        None
    } else {
        Some(model.constant_tensor(&e.constants, grid.height, grid.width)?)
    };
    Ok(PreparedPair {
        state: snapshot_tensor(s),
        target: snapshot_tensor(&e.trajectory.snapshots()[p.step + 1]),
        cond,
        frozen: None,
    })
}

/// Mean over channels and cells of `|prediction - target| / half_range`.
fn normalized_l1(g: &mut Graph, model: &Model, pred: Var, target: Var) -> Result<Var> {
    let inv: Vec<f64> = model.norm.half_range.iter().map(|h| 1.0 / h).collect();
    let d = g.sub(pred, target)?;
    let d = g.channel_affine(d, &inv, &vec![0.0; inv.len()])?;
    Ok(g.mean_abs(d))
}

/// Binds `params`, marking `trainable` names as differentiable.
fn bind_split(g: &mut Graph, params: &ParamStore, trainable: &[String]) -> BTreeMap<String, Var> {
    let (t, f): (ParamStore, ParamStore) = params.iter().map(|(k, v)| (k.clone(), v.clone())).partition(|(k, _)| trainable.contains(k));
    let mut vars = g.bind(&t, true);
    vars.extend(g.bind(&f, false));
    vars
}

fn pair_loss(model: &Model, spec: &IntegratorSpec, dx: f64, pair: &PreparedPair, stage: Stage, trainable: &[String], grads: bool) -> Result<(f64, Option<BTreeMap<String, Tensor>>)> {
    let mut g = Graph::new();
    let vars = bind_split(&mut g, &model.params, if grads { trainable } else { &[] });
    let state = g.input(pair.state.clone());
    let target = g.input(pair.target.clone());
    let pred = match (stage, &pair.frozen) {
        (Stage::Differentiator, _) => {
            let cond = pair.cond.clone().map(|c| g.input(c));
            let (psi, _) = model.psi_graph(&mut g, &vars, state, cond, dx, spec)?;
            g.add(state, psi)?
        }
        (Stage::Correction, Some((psi, f))) => {
            let psi = g.input(psi.clone());
            let f = g.input(f.clone());
            let s = model.correction_graph(&mut g, &vars, state, f, spec.dt)?;
            let base = g.add(state, psi)?;
            g.add(base, s)?
        }
        (Stage::Correction, None) => unreachable!("stage-2 pairs are prepared with frozen increments"),
    };
    let loss = normalized_l1(&mut g, model, pred, target)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    if !grads {
        return Ok((value, None));
    }
    let gr = g.backward(loss)?.into_params();
    Ok((value, Some(gr)))
}

fn freeze(model: &Model, spec: &IntegratorSpec, dx: f64, pair: &mut PreparedPair) -> Result<()> {
    let mut g = Graph::new();
    let vars = g.bind(&model.params, false);
    let state = g.input(pair.state.clone());
    let cond = pair.cond.clone().map(|c| g.input(c));
    let (psi, f) = model.psi_graph(&mut g, &vars, state, cond, dx, spec)?;
    pair.frozen = Some((g.value(psi).clone(), g.value(f).clone()));
    Ok(())
}

fn check_trainable(model: &Model, stage: Stage, trainable: &[String]) -> Result<()> {
    for name in trainable {
        if !model.params.contains_key(name) {
            return Err(Error::Validation(format!("unknown parameter {name:?}")));
        }
        if stage == Stage::Correction && is_differentiator_param(name) {
            return Err(Error::Contract(format!(
                "stage 2 requires frozen differentiator parameters, but {name:?} is trainable"
            )));
        }
    }
    Ok(())
}

/// Default trainable set for a stage.
pub fn default_trainable(model: &Model, stage: Stage) -> Vec<String> {
    match stage {
        Stage::Differentiator => model.trainable_differentiator(),
        Stage::Correction => model.correction_names(),
    }
}

/// Loss of one pair for `stage`, without gradients.
pub fn stage_loss(model: &Model, ds: &Dataset, pair: PairIndex, stage: Stage, scheme: Scheme, trainable: &[String]) -> Result<f64> {
    check_trainable(model, stage, trainable)?;
    let spec = IntegratorSpec::new(scheme, ds.dt(), false)?;
    let dx = ds.entries()[pair.entry].trajectory.grid().dx;
    let mut p = prepare(model, ds, pair)?;
    if stage == Stage::Correction {
        freeze(model, &spec, dx, &mut p)?;
    }
    Ok(pair_loss(model, &spec, dx, &p, stage, trainable, false)?.0)
}

struct Trainer<'a> {
    spec: IntegratorSpec,
    dx: f64,
    stage: Stage,
    trainable: &'a [String],
}

impl Trainer<'_> {
    fn mean_loss(&self, model: &Model, pairs: &[PreparedPair]) -> Result<f64> {
        let losses: Vec<f64> = pairs
            .par_iter()
            .map(|p| pair_loss(model, &self.spec, self.dx, p, self.stage, self.trainable, false).map(|r| r.0))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Mean loss and mean gradient over `batch`, summed in batch order.
    fn batch_gradient(&self, model: &Model, batch: &[&PreparedPair]) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let results: Vec<(f64, Option<BTreeMap<String, Tensor>>)> = batch
            .par_iter()
            .map(|p| pair_loss(model, &self.spec, self.dx, p, self.stage, self.trainable, true))
            .collect::<Result<_>>()?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
        for (l, g) in results {
            loss += l;
            for (name, t) in g.expect("gradients requested") {
                match total.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                    None => {
                        total.insert(name, t);
                    }
                }
            }
        }
        for t in total.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x /= n);
        }
        Ok((loss / n, total))
    }
}

/// Trains `model` in place and returns the loss history. Parameters from the
/// epoch with the lowest validation loss (training loss if there is no
/// validation split) are kept. `on_epoch` sees every record as it is made.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
    trainable: Option<&[String]>,
    on_epoch: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<TrainReport> {
    cfg.validate()?;
    let trainable: Vec<String> = match trainable {
        Some(t) => t.to_vec(),
        None => default_trainable(model, stage),
    };
    check_trainable(model, stage, &trainable)?;
    if trainable.is_empty() {
        return Err(Error::Validation("nothing to train".into()));
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.thread_count()? {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Validation(format!("thread pool: {e}")))?
    };
    pool.install(|| train_inner(model, ds, cfg, stage, &trainable, on_epoch))
}

fn train_inner(model: &mut Model, ds: &Dataset, cfg: &TrainConfig, stage: Stage, trainable: &[String], on_epoch: &mut (dyn FnMut(&EpochRecord) + Send)) -> Result<TrainReport> {
    let train_idx = pairs(ds, Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Validation("the training split has no snapshot pairs".into()));
    }
    let val_idx = pairs(ds, Split::Validation);
    let spec = IntegratorSpec::new(cfg.scheme, ds.dt(), false)?;
    let dx = ds.entries()[0].trajectory.grid().dx;
    let build = |idx: &[PairIndex]| -> Result<Vec<PreparedPair>> {
        idx.par_iter()
            .map(|&p| {
                let mut pp = prepare(model, ds, p)?;
                if stage == Stage::Correction {
                    freeze(model, &spec, dx, &mut pp)?;
                }
                Ok(pp)
            })
            .collect()
    };
    let train_pairs = build(&train_idx)?;
    let val_pairs = build(&val_idx)?;

    let mut current = model.clone();
    let trainer = Trainer {
        spec,
        dx,
        stage,
        trainable,
    };
    let evaluate = |m: &Model| -> Result<(f64, Option<f64>)> {
        let t = trainer.mean_loss(m, &train_pairs)?;
        let v = if val_pairs.is_empty() { None } else { Some(trainer.mean_loss(m, &val_pairs)?) };
        Ok((t, v))
    };

    let (t0, v0) = evaluate(&current)?;
    let first = EpochRecord {
        epoch: 0,
        train_loss: t0,
        val_loss: v0,
        learning_rate: cfg.learning_rate_at(1),
    };
    on_epoch(&first);
    let mut history = vec![first];
    let mut best = (0usize, v0.unwrap_or(t0), current.params.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        adam.lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let (loss, grads) = trainer.batch_gradient(&current, &batch)?;
            running += loss * batch.len() as f64;
            let grads: BTreeMap<String, Tensor> = grads.into_iter().filter(|(k, _)| trainable.contains(k)).collect();
            adam_step(&mut current.params, &grads, &mut adam)?;
        }
        let train_loss = running / train_pairs.len() as f64;
        let val_loss = if val_pairs.is_empty() { None } else { Some(trainer.mean_loss(&current, &val_pairs)?) };
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: adam.lr,
        };
        on_epoch(&rec);
        history.push(rec);
        let score = match val_loss {
            Some(v) => v,
            // the running mean mixes parameter versions, so re-evaluate
            None => trainer.mean_loss(&current, &train_pairs)?,
        };
        if score < best.1 {
            best = (epoch, score, current.params.clone());
        } else if cfg.patience > 0 && epoch - best.0 >= cfg.patience {
            stopped_early = true;
            break;
        }
        if cfg.target_loss.is_some_and(|t| train_loss <= t) {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_loss, params) = best;
    model.params = params;
    Ok(TrainReport {
        stage,
        history,
        best_epoch,
        best_loss,
        stopped_early,
        optimizer: adam,
    })
}
