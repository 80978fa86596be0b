//! Mini-batch subgradient training with a row-sparse Adam optimizer and
//! dev-loss early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingModel, LossHyper, ModelKind, PairGradient};
use crate::error::{Error, Result};
use crate::folds::{FoldSet, LabeledPair};
use crate::metrics;
use crate::poset::{NodeId, NodeKind};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without a significant dev-loss improvement before stopping.
    pub patience: usize,
    /// Relative dev-loss drop (against the best so far) that counts as improvement.
    pub min_rel_improvement: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 500,
            learning_rate: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 1000,
            patience: 20,
            min_rel_improvement: 1e-3,
            dim: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.batch_size == 0 {
            Some("batch size must be at least 1")
        } else if self.patience == 0 {
            Some("patience must be at least 1")
        } else if !(self.min_rel_improvement > 0.0 && self.min_rel_improvement < 1.0) {
            Some("min relative improvement must lie in (0, 1)")
        } else if self.dim == 0 {
            Some("dimension must be at least 1")
        } else if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            Some("learning rate must be positive")
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::Config(p.into())),
            None => Ok(()),
        }
    }
}

/// Adam with first/second moments and a step counter per parameter row. Only
/// rows that received a gradient in a batch advance.
#[derive(Clone, Debug)]
pub struct SparseAdam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    dim: usize,
    steps: Vec<i32>,
    m_base: Vec<F>,
    v_base: Vec<F>,
    m_width: Option<Vec<F>>,
    v_width: Option<Vec<F>>,
}

impl<F: Scalar> SparseAdam<F> {
    pub fn new(model: &EmbeddingModel<F>, cfg: &TrainConfig) -> Self {
        let len = model.num_nodes() * model.dim();
        let widths = model.kind().has_widths();
        SparseAdam {
            lr: F::lit(cfg.learning_rate),
            beta1: F::lit(cfg.adam_beta1),
            beta2: F::lit(cfg.adam_beta2),
            eps: F::lit(cfg.adam_eps),
            dim: model.dim(),
            steps: vec![0; model.num_nodes()],
            m_base: vec![F::zero(); len],
            v_base: vec![F::zero(); len],
            m_width: widths.then(|| vec![F::zero(); len]),
            v_width: widths.then(|| vec![F::zero(); len]),
        }
    }

    /// Number of updates applied to `row` so far.
    pub fn row_steps(&self, row: NodeId) -> usize {
        self.steps[row.index()] as usize
    }

    /// Shape of each moment matrix, `(rows, columns)`.
    pub fn state_shape(&self) -> (usize, usize) {
        (self.steps.len(), self.dim)
    }

    /// One bias-corrected Adam update of `row` from its accumulated gradients.
    pub fn step_row(
        &mut self,
        model: &mut EmbeddingModel<F>,
        row: NodeId,
        grad_base: &[F],
        grad_width: Option<&[F]>,
    ) {
        let t = &mut self.steps[row.index()];
        *t += 1;
        let t = *t;
        let c1 = F::one() - self.beta1.powi(t);
        let c2 = F::one() - self.beta2.powi(t);
        let span = row.index() * self.dim..(row.index() + 1) * self.dim;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |params: &mut [F], m: &mut [F], v: &mut [F], g: &[F]| {
            for d in 0..params.len() {
                m[d] = b1 * m[d] + (F::one() - b1) * g[d];
                v[d] = b2 * v[d] + (F::one() - b2) * g[d] * g[d];
                let mhat = m[d] / c1;
                let vhat = v[d] / c2;
                params[d] = params[d] - lr * mhat / (vhat.sqrt() + eps);
            }
        };
        update(
            model.base_mut(row),
            &mut self.m_base[span.clone()],
            &mut self.v_base[span.clone()],
            grad_base,
        );
        if let (Some(g), Some(m), Some(v)) = (grad_width, self.m_width.as_mut(), self.v_width.as_mut()) {
            if let Some(params) = model.width_mut(row) {
                update(params, &mut m[span.clone()], &mut v[span], g);
            }
        }
    }
}

/// Loss accumulated over one epoch, evaluated batch by batch before each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// `Σ ℓ₊` over positives plus `Σ ℓ₋` over negatives.
    pub data: f64,
    /// Width penalty charged per row appearance.
    pub penalty: f64,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.data + self.penalty
    }
}

/// Batch gradient accumulator keyed by the rows a batch touches.
struct BatchGrad<F> {
    dim: usize,
    slot: Vec<u32>,
    rows: Vec<NodeId>,
    base: Vec<F>,
    width: Option<Vec<F>>,
}

impl<F: Scalar> BatchGrad<F> {
    fn new(num_nodes: usize, dim: usize, widths: bool) -> Self {
        BatchGrad {
            dim,
            slot: vec![u32::MAX; num_nodes],
            rows: Vec::new(),
            base: Vec::new(),
            width: widths.then(Vec::new),
        }
    }

    fn add(&mut self, row: NodeId, base: &[F], width: Option<&[F]>) {
        let mut s = self.slot[row.index()];
        if s == u32::MAX {
            s = self.rows.len() as u32;
            self.slot[row.index()] = s;
            self.rows.push(row);
            self.base.resize(self.base.len() + self.dim, F::zero());
            if let Some(w) = self.width.as_mut() {
                w.resize(w.len() + self.dim, F::zero());
            }
        }
        let span = s as usize * self.dim..(s as usize + 1) * self.dim;
        for (acc, &g) in self.base[span.clone()].iter_mut().zip(base) {
            *acc = *acc + g;
        }
        if let (Some(acc), Some(g)) = (self.width.as_mut(), width) {
            for (a, &g) in acc[span].iter_mut().zip(g) {
                *a = *a + g;
            }
        }
    }

    fn clear(&mut self) {
        for r in self.rows.drain(..) {
            self.slot[r.index()] = u32::MAX;
        }
        self.base.clear();
        if let Some(w) = self.width.as_mut() {
            w.clear();
        }
    }
}

/// One pass over `instances` in a freshly shuffled order. Each batch sums its
/// pair objectives and gradients against the pre-step parameters, then applies
/// one Adam step to the touched rows and re-projects their widths.
#[allow(clippy::too_many_arguments)]
pub fn epoch<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    instances: &[LabeledPair],
    hyper: &LossHyper<F>,
    cfg: &TrainConfig,
    adam: &mut SparseAdam<F>,
    rng: &mut ChaCha8Rng,
    epoch_index: usize,
) -> Result<EpochLoss> {
    if instances.is_empty() {
        return Err(Error::Config("no training instances".into()));
    }
    let mut order: Vec<u32> = (0..instances.len() as u32).collect();
    order.shuffle(rng);

    let widths = model.kind().has_widths();
    let mut acc = BatchGrad::new(model.num_nodes(), model.dim(), widths);
    let mut pair_grad = PairGradient::zeros(model.dim(), widths);
    let mut loss = EpochLoss {
        data: 0.0,
        penalty: 0.0,
    };
    for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut data = F::zero();
        let mut penalty = F::zero();
        for &i in chunk {
            let p = instances[i as usize];
            data = data + model.pair_loss(p.x, p.y, p.label, hyper);
            penalty = penalty + model.width_penalty(p.x, p.y, hyper);
            model.pair_gradient_into(p.x, p.y, p.label, hyper, &mut pair_grad);
            acc.add(p.x, &pair_grad.base_x, pair_grad.width_x.as_deref());
            acc.add(p.y, &pair_grad.base_y, pair_grad.width_y.as_deref());
        }
        let diverged = Error::Divergence {
            epoch: epoch_index,
            batch,
        };
        if !(data + penalty).is_finite() {
            return Err(diverged);
        }
        let dim = model.dim();
        for (s, &row) in acc.rows.iter().enumerate() {
            let span = s * dim..(s + 1) * dim;
            let gw = acc.width.as_ref().map(|w| &w[span.clone()]);
            adam.step_row(model, row, &acc.base[span], gw);
            model.project_row(row);
            let finite = model.base(row).iter().all(|v| v.is_finite())
                && model.width(row).is_none_or(|w| w.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(diverged);
            }
        }
        acc.clear();
        loss.data += data.as_f64();
        loss.penalty += penalty.as_f64();
    }
    Ok(loss)
}

/// Data loss (no width penalty) summed over `pairs`.
pub fn fold_loss<F: Scalar>(
    model: &EmbeddingModel<F>,
    pairs: impl IntoIterator<Item = LabeledPair>,
    hyper: &LossHyper<F>,
) -> f64 {
    pairs
        .into_iter()
        .map(|p| model.pair_loss(p.x, p.y, p.label, hyper).as_f64())
        .sum()
}

/// Patience counter over a stream of dev losses.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_rel_improvement: f64,
    best: Option<f64>,
    stale: usize,
}

/// Verdict for one observed loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    /// The loss is the lowest seen so far.
    pub new_best: bool,
    /// Patience is used up.
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel_improvement: f64) -> Self {
        EarlyStopping {
            patience,
            min_rel_improvement,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Observation {
        let (new_best, significant) = match self.best {
            None => (true, true),
            Some(best) => (loss < best, loss < best * (1.0 - self.min_rel_improvement)),
        };
        if new_best {
            self.best = Some(loss);
        }
        if significant {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            new_best,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_penalty: f64,
    pub dev_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_dev_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|r| r.dev_loss)
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.train_loss)
    }

    /// Loss trajectory without wall-clock times, for reproducibility checks.
    pub fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.epochs
            .iter()
            .map(|r| (r.train_loss, r.train_penalty, r.dev_loss))
            .collect()
    }

    /// CSV with header `epoch,train_loss,dev_loss,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_loss,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{:.6}\n",
                r.epoch, r.train_loss, r.dev_loss, r.seconds
            ));
        }
        out
    }
}

/// Shuffling stream for training, distinct from the initialisation stream.
fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Train until dev loss stalls for `patience` epochs or `max_epochs` pass, and
/// return the snapshot with the lowest dev loss.
pub fn fit<F: Scalar>(
    mut model: EmbeddingModel<F>,
    folds: &FoldSet,
    hyper: &LossHyper<F>,
    cfg: &TrainConfig,
) -> Result<(EmbeddingModel<F>, TrainHistory)> {
    cfg.validate()?;
    hyper.validate()?;
    if folds.dev_pos.is_empty() && folds.dev_neg.is_empty() {
        return Err(Error::Config("dev folds are empty".into()));
    }
    let instances: Vec<LabeledPair> = folds.learn().copied().collect();
    let mut rng = training_rng(cfg.seed);
    let mut adam = SparseAdam::new(&model, cfg);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_rel_improvement);
    let mut history = TrainHistory::default();
    let mut best = model.clone();

    for e in 1..=cfg.max_epochs {
        let started = Instant::now();
        let loss = epoch(&mut model, &instances, hyper, cfg, &mut adam, &mut rng, e)?;
        let dev_loss = fold_loss(&model, folds.dev().copied(), hyper);
        if !dev_loss.is_finite() {
            return Err(Error::Divergence { epoch: e, batch: 0 });
        }
        history.epochs.push(EpochRecord {
            epoch: e,
            train_loss: loss.data,
            train_penalty: loss.penalty,
            dev_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        history.stopped_epoch = e;
        let seen = stopper.observe(dev_loss);
        if seen.new_best {
            best.clone_from(&model);
            history.best_epoch = e;
        }
        if seen.stop {
            break;
        }
    }
    Ok((best, history))
}

/// Initialise a model from `cfg.seed` and [`fit`] it.
pub fn train_model<F: Scalar>(
    kind: ModelKind,
    node_kinds: &[NodeKind],
    folds: &FoldSet,
    hyper: &LossHyper<F>,
    cfg: &TrainConfig,
) -> Result<(EmbeddingModel<F>, TrainHistory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = EmbeddingModel::init(kind, node_kinds, cfg.dim, &mut rng)?;
    fit(model, folds, hyper, cfg)
}

/// Candidate values for each hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid<F> {
    pub delta: Vec<F>,
    pub psi: Vec<F>,
    pub alpha: Vec<F>,
    pub lambda: Vec<F>,
}

impl<F: Scalar> Default for HyperGrid<F> {
    fn default() -> Self {
        let lits = |v: &[f64]| v.iter().map(|&x| F::lit(x)).collect();
        HyperGrid {
            delta: lits(&[0.0, 0.1, 0.5, 1.0]),
            psi: lits(&[1.0, 3.0, 10.0]),
            alpha: lits(&[0.5, 1.0, 2.0]),
            lambda: lits(&[0.0, 1e-3, 1e-2]),
        }
    }
}

impl<F: Scalar> HyperGrid<F> {
    pub fn singleton(hyper: LossHyper<F>) -> Self {
        HyperGrid {
            delta: vec![hyper.delta],
            psi: vec![hyper.psi],
            alpha: vec![hyper.alpha],
            lambda: vec![hyper.lambda],
        }
    }

    /// Grid points that matter for `kind`, in tie-break order (ascending
    /// `Δ`, then `ψ`, `α`, `λ`). Axes a model ignores collapse to their
    /// smallest value: `α` is used only by `oe`, `Δ` and `ψ` only by the
    /// sigmoid models, `λ` only by `rect`.
    pub fn points(&self, kind: ModelKind) -> Result<Vec<LossHyper<F>>> {
        let axis = |v: &[F], used: bool| -> Result<Vec<F>> {
            let mut v = v.to_vec();
            if v.is_empty() || v.iter().any(|x| x.is_nan()) {
                return Err(Error::Config("hyperparameter grids must be nonempty".into()));
            }
            v.sort_by(|a, b| a.partial_cmp(b).expect("not NaN"));
            v.dedup();
            if !used {
                v.truncate(1);
            }
            Ok(v)
        };
        let sigmoid = kind != ModelKind::Oe;
        let deltas = axis(&self.delta, sigmoid)?;
        let psis = axis(&self.psi, sigmoid)?;
        let alphas = axis(&self.alpha, kind == ModelKind::Oe)?;
        let lambdas = axis(&self.lambda, kind.has_widths())?;
        let mut out = Vec::new();
        for &delta in &deltas {
            for &psi in &psis {
                for &alpha in &alphas {
                    for &lambda in &lambdas {
                        out.push(LossHyper {
                            alpha,
                            delta,
                            psi,
                            lambda,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial<F> {
    pub hyper: LossHyper<F>,
    /// `None` when the run diverged.
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome<F> {
    pub best: LossHyper<F>,
    pub dev_f1: f64,
    pub model: EmbeddingModel<F>,
    pub history: TrainHistory,
    pub trials: Vec<Trial<F>>,
}

/// Train one model per grid point and keep the one with the best dev F1 (at
/// its own dev-tuned threshold). Diverged points are skipped.
pub fn tune_hyper<F: Scalar>(
    kind: ModelKind,
    node_kinds: &[NodeKind],
    folds: &FoldSet,
    grid: &HyperGrid<F>,
    cfg: &TrainConfig,
) -> Result<TuneOutcome<F>> {
    let mut trials = Vec::new();
    let mut best: Option<TuneOutcome<F>> = None;
    for hyper in grid.points(kind)? {
        let (model, history) = match train_model(kind, node_kinds, folds, &hyper, cfg) {
            Ok(done) => done,
            Err(Error::Divergence { .. }) => {
                trials.push(Trial {
                    hyper,
                    dev_f1: None,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let dev = metrics::score_pairs(&model, folds.dev());
        let tau = metrics::tune_threshold(&dev)?;
        let f1 = metrics::classification_metrics(&dev, tau).f1;
        trials.push(Trial {
            hyper,
            dev_f1: Some(f1),
        });
        // points arrive in tie-break order, so only a strict gain replaces
        if best.as_ref().is_none_or(|b| f1 > b.dev_f1) {
            best = Some(TuneOutcome {
                best: hyper,
                dev_f1: f1,
                model,
                history,
                trials: Vec::new(),
            });
        }
    }
    let mut out = best.ok_or(Error::TuningFailed)?;
    out.trials = trials;
    Ok(out)
}
