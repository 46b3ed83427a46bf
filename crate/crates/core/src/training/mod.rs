//! Maximum-likelihood fitting by mini-batch Adam with box projection.

mod adam;
mod io;
mod params;

use std::collections::HashMap;

use rand::seq::SliceRandom;

pub use adam::Adam;
pub use io::ModelFile;
pub use params::Params;

use crate::error::{Error, Result};
use crate::eval::metrics::roc_auc;
use crate::models::{sigmoid, Family, ItemParams, SignConvention, SubjectParams, Z_CLAMP};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::{Format, ResponseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig<F> {
    pub family: Family,
    /// Upper bound shared by every parameter component.
    pub q: F,
    pub convention: SignConvention,
    pub learning_rate: F,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> Default for FitConfig<F> {
    fn default() -> Self {
        FitConfig {
            family: Family::M3irt,
            q: F::lit(4.0),
            convention: SignConvention::Corrected,
            learning_rate: F::lit(0.01),
            batch_size: 1024,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            epsilon: F::lit(1e-8),
        }
    }
}

impl<F: Scalar> FitConfig<F> {
    pub fn new(family: Family, q: F) -> Self {
        FitConfig {
            family,
            q,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > F::zero()) || !self.q.is_finite() {
            return Err(Error::invalid(format!("q must be positive, got {}", self.q)));
        }
        if !(self.learning_rate > F::zero()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if let Family::Mirt { dim: 0 } = self.family {
            return Err(Error::invalid("MIRT dimension must be at least 1"));
        }
        Ok(())
    }
}

/// Record with indices resolved against a model.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub subject: usize,
    pub item: usize,
    pub format: Format,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel<F> {
    pub config: FitConfig<F>,
    subject_ids: Vec<String>,
    item_ids: Vec<String>,
    subject_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    params: Params<F>,
    pub val_auc: Option<F>,
    pub train_nll: F,
    /// Training NLL at the random initialization.
    pub initial_nll: F,
    pub epochs_run: usize,
}

fn index_of(ids: &[String]) -> HashMap<String, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

impl<F: Scalar> FittedModel<F> {
    /// Assembles a model from explicit parameters.
    pub fn from_parts(
        config: FitConfig<F>,
        subject_ids: Vec<String>,
        item_ids: Vec<String>,
        params: Params<F>,
    ) -> Result<Self> {
        if params.family() != config.family
            || params.n_subjects() != subject_ids.len()
            || params.n_items() != item_ids.len()
        {
            return Err(Error::invalid("parameter layout does not match ids/family"));
        }
        Ok(FittedModel {
            subject_index: index_of(&subject_ids),
            item_index: index_of(&item_ids),
            subject_ids,
            item_ids,
            params,
            config,
            val_auc: None,
            train_nll: F::zero(),
            initial_nll: F::zero(),
            epochs_run: 0,
        })
    }

    /// Four-component model from decomposed parameter tables.
    pub fn from_decomposed(
        config: FitConfig<F>,
        subjects: &[(String, SubjectParams<F>)],
        items: &[(String, ItemParams<F>)],
    ) -> Result<Self> {
        if !matches!(config.family, Family::M2irt | Family::M3irt) {
            return Err(Error::invalid("decomposed parameters need the m2irt or m3irt family"));
        }
        let mut p = Params::zeros(config.family, subjects.len(), items.len());
        for (i, (_, sp)) in subjects.iter().enumerate() {
            p.theta_mut(i).copy_from_slice(&sp.theta);
        }
        for (j, (_, ip)) in items.iter().enumerate() {
            p.a_mut(j).copy_from_slice(&ip.a);
            p.b_mut(j).copy_from_slice(&ip.b);
        }
        Self::from_parts(
            config,
            subjects.iter().map(|(id, _)| id.clone()).collect(),
            items.iter().map(|(id, _)| id.clone()).collect(),
            p,
        )
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn q(&self) -> F {
        self.config.q
    }

    pub fn convention(&self) -> SignConvention {
        self.config.convention
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<F> {
        &mut self.params
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subject_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    fn require_subject(&self, id: &str) -> Result<usize> {
        self.subject_index(id).ok_or_else(|| Error::UnknownSubject(id.to_owned()))
    }

    fn require_item(&self, id: &str) -> Result<usize> {
        self.item_index(id).ok_or_else(|| Error::UnknownItem(id.to_owned()))
    }

    pub fn theta(&self, id: &str) -> Option<&[F]> {
        self.subject_index(id).map(|i| self.params.theta(i))
    }

    /// Componentwise mean ability over all subjects.
    pub fn mean_ability(&self) -> Vec<F> {
        let dim = self.family().subject_dim();
        let mut out = vec![F::zero(); dim];
        let n = self.subject_ids.len();
        for i in 0..n {
            for (o, &t) in out.iter_mut().zip(self.params.theta(i)) {
                *o = *o + t;
            }
        }
        if n > 0 {
            out.iter_mut().for_each(|o| *o = *o / F::lit(n as f64));
        }
        out
    }

    /// Decomposed ability of a subject (four-component families only).
    pub fn subject_params(&self, id: &str) -> Option<SubjectParams<F>> {
        let t = self.theta(id)?;
        (t.len() == 4).then(|| SubjectParams::new([t[0], t[1], t[2], t[3]]))
    }

    /// Decomposed item parameters (four-component families only).
    pub fn item_params(&self, id: &str) -> Option<ItemParams<F>> {
        let j = self.item_index(id)?;
        let (a, b) = (self.params.a(j), self.params.b(j));
        (a.len() == 4 && b.len() == 4).then(|| ItemParams::new([a[0], a[1], a[2], a[3]], [b[0], b[1], b[2], b[3]]))
    }

    /// Probability for an arbitrary ability vector against item index `j`.
    #[inline]
    pub fn prob_with_theta(&self, theta: &[F], j: usize, s: Format) -> F {
        self.family()
            .prob(self.convention(), theta, self.params.a(j), self.params.b(j), s)
    }

    #[inline]
    pub(crate) fn prob_cell(&self, subject: usize, item: usize, s: Format) -> F {
        self.prob_with_theta(self.params.theta(subject), item, s)
    }

    pub(crate) fn resolve(&self, t: &ResponseTensor) -> Result<Vec<Cell>> {
        t.records()
            .iter()
            .map(|r| {
                Ok(Cell {
                    subject: self.require_subject(t.subject_id(r))?,
                    item: self.require_item(t.item_id(r))?,
                    format: r.format,
                    correct: r.correct,
                })
            })
            .collect()
    }

    /// Negative log-likelihood of `batch`.
    pub fn nll(&self, batch: &ResponseTensor) -> Result<F> {
        let cells = self.resolve(batch)?;
        Ok(batch_nll(self, &cells))
    }

    /// Gradient of [`FittedModel::nll`], laid out like the model parameters.
    pub fn grad_nll(&self, batch: &ResponseTensor) -> Result<Params<F>> {
        let cells = self.resolve(batch)?;
        let mut g = Params::zeros(self.family(), self.subject_ids.len(), self.item_ids.len());
        accumulate_grad(self, &cells, &mut g);
        Ok(g)
    }

    /// Probabilities for `(subject, item, format)` cells, in order.
    pub fn predict<S: AsRef<str>, T: AsRef<str>>(&self, cells: &[(S, T, Format)]) -> Result<Vec<F>> {
        cells
            .iter()
            .map(|(s, i, f)| {
                let si = self.require_subject(s.as_ref())?;
                let ii = self.require_item(i.as_ref())?;
                Ok(self.prob_cell(si, ii, *f))
            })
            .collect()
    }

    /// Probabilities for every record of `t`, in record order.
    pub fn predict_tensor(&self, t: &ResponseTensor) -> Result<Vec<F>> {
        Ok(self
            .resolve(t)?
            .iter()
            .map(|c| self.prob_cell(c.subject, c.item, c.format))
            .collect())
    }

    /// ROC-AUC of predictions on `t`; `None` when undefined.
    pub fn auc_on(&self, t: &ResponseTensor) -> Result<Option<F>> {
        let scores = self.predict_tensor(t)?;
        let labels: Vec<bool> = t.records().iter().map(|r| r.correct).collect();
        Ok(roc_auc(&scores, &labels).ok())
    }
}

/// `softplus(z) - r z`, the per-record loss on a clamped logit.
#[inline]
fn record_loss<F: Scalar>(z: F, correct: bool) -> F {
    let z = crate::models::clamp_logit(z);
    let softplus = z.max(F::zero()) + (-z.abs()).exp().ln_1p();
    if correct {
        softplus - z
    } else {
        softplus
    }
}

pub(crate) fn batch_nll<F: Scalar>(model: &FittedModel<F>, cells: &[Cell]) -> F {
    let (fam, conv, p) = (model.family(), model.convention(), &model.params);
    cells
        .iter()
        .map(|c| record_loss(fam.logit(conv, p.theta(c.subject), p.a(c.item), p.b(c.item), c.format), c.correct))
        .fold(F::zero(), |acc, x| acc + x)
}

/// Adds the batch gradient into `grad` and returns the batch loss.
pub(crate) fn accumulate_grad<F: Scalar>(model: &FittedModel<F>, cells: &[Cell], grad: &mut Params<F>) -> F {
    let (fam, conv, p) = (model.family(), model.convention(), &model.params);
    let (dt, da, db) = (fam.subject_dim(), fam.item_a_dim(), fam.item_b_dim());
    let mut buf_t = [F::zero(); 16];
    let mut buf_a = [F::zero(); 16];
    let mut buf_b = [F::zero(); 16];
    let mut heap: Vec<F>;
    let (gt, ga, gb): (&mut [F], &mut [F], &mut [F]) = if dt <= 16 {
        (&mut buf_t[..dt], &mut buf_a[..da], &mut buf_b[..db])
    } else {
        heap = vec![F::zero(); dt + da + db];
        let (x, rest) = heap.split_at_mut(dt);
        let (y, z) = rest.split_at_mut(da);
        (x, y, z)
    };
    let clamp = F::lit(Z_CLAMP);
    let mut loss = F::zero();
    for c in cells {
        let (theta, a, b) = (p.theta(c.subject), p.a(c.item), p.b(c.item));
        let z = fam.logit(conv, theta, a, b, c.format);
        loss = loss + record_loss(z, c.correct);
        // d loss / d z vanishes where the clamp is active
        if z.abs() >= clamp {
            continue;
        }
        let r = if c.correct { F::one() } else { F::zero() };
        let dz = sigmoid(z) - r;
        fam.logit_grad(conv, theta, a, b, c.format, gt, ga, gb);
        let g = grad.as_mut_slice();
        for (k, idx) in p.theta_range(c.subject).enumerate() {
            g[idx] = g[idx] + dz * gt[k];
        }
        for (k, idx) in p.a_range(c.item).enumerate() {
            g[idx] = g[idx] + dz * ga[k];
        }
        for (k, idx) in p.b_range(c.item).enumerate() {
            g[idx] = g[idx] + dz * gb[k];
        }
    }
    loss
}

/// Fits `cfg.family` on `train`, early-stopping on `val` (if nonempty).
pub fn fit<F: Scalar>(train: &ResponseTensor, val: &ResponseTensor, cfg: &FitConfig<F>) -> Result<FittedModel<F>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training tensor"));
    }
    let family = cfg.family;
    let mut rng = seed::rng_for(cfg.seed, &[seed::STREAM_INIT]);
    let params = Params::random(family, train.subjects().len(), train.items().len(), cfg.q, &mut rng);
    let mut model = FittedModel::from_parts(cfg.clone(), train.subjects().to_vec(), train.items().to_vec(), params)?;
    let train_cells = model.resolve(train)?;
    let val_cells = model.resolve(val)?;

    let mut opt = Adam::new(
        model.params.as_slice().len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut grad = Params::zeros(family, train.subjects().len(), train.items().len());
    let mut order: Vec<usize> = (0..train_cells.len()).collect();
    let mut shuffle_rng = seed::rng_for(cfg.seed, &[seed::STREAM_SHUFFLE]);
    let mut batch: Vec<Cell> = Vec::with_capacity(cfg.batch_size);

    let init_nll = batch_nll(&model, &train_cells);
    let use_val = !val_cells.is_empty();
    let mut best_val = if use_val { batch_nll(&model, &val_cells) } else { F::infinity() };
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train_cells[k]));
            grad.fill_zero();
            accumulate_grad(&model, &batch, &mut grad);
            opt.step(model.params.as_mut_slice(), grad.as_slice());
            model.params.project(cfg.q);
        }
        if use_val {
            let v = batch_nll(&model, &val_cells);
            if v < best_val {
                best_val = v;
                best_params.clone_from(&model.params);
                best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if use_val {
        model.params = best_params;
    } else {
        best_epoch = epochs;
    }
    debug_assert!(model.params.in_bounds(cfg.q));
    model.train_nll = batch_nll(&model, &train_cells);
    if model.train_nll > init_nll {
        // validation picked a snapshot worse than the starting point on train
        log_warn(&format!(
            "fit: train NLL {} at epoch {best_epoch} exceeds initial {init_nll}",
            model.train_nll
        ));
    }
    model.initial_nll = init_nll;
    model.epochs_run = epochs;
    model.val_auc = if use_val { model.auc_on(val)? } else { None };
    Ok(model)
}

fn log_warn(msg: &str) {
    eprintln!("warning: {msg}");
}

/// One row of the q grid report.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow<F> {
    pub q: F,
    pub val_auc: Option<F>,
    pub val_nll: Option<F>,
    pub train_nll: F,
    pub epochs_run: usize,
}

/// Fits one model per `q` and keeps the one with the highest validation
/// AUC; ties go to the smaller `q`. Without a usable validation AUC the
/// lowest validation NLL (then train NLL) decides.
pub fn grid_search_q<F: Scalar>(
    train: &ResponseTensor,
    val: &ResponseTensor,
    base: &FitConfig<F>,
    q_grid: &[F],
) -> Result<(FittedModel<F>, Vec<GridRow<F>>)> {
    if q_grid.is_empty() {
        return Err(Error::Empty("q grid"));
    }
    let mut rows = Vec::with_capacity(q_grid.len());
    let mut best: Option<(FittedModel<F>, (F, F))> = None;
    let mut qs = q_grid.to_vec();
    qs.sort_by(|a, b| a.partial_cmp(b).expect("finite q"));
    qs.dedup();
    for q in qs {
        let cfg = FitConfig { q, ..base.clone() };
        let model = fit(train, val, &cfg)?;
        let val_nll = if val.is_empty() { None } else { Some(model.nll(val)?) };
        rows.push(GridRow {
            q,
            val_auc: model.val_auc,
            val_nll,
            train_nll: model.train_nll,
            epochs_run: model.epochs_run,
        });
        // larger key wins
        let key = match (model.val_auc, val_nll) {
            (Some(auc), _) => (auc, F::zero()),
            (None, Some(v)) => (-F::infinity(), -v),
            (None, None) => (-F::infinity(), -model.train_nll),
        };
        let better = match &best {
            None => true,
            Some((_, k)) => key.0 > k.0 || (key.0 == k.0 && key.1 > k.1),
        };
        if better {
            best = Some((model, key));
        }
    }
    Ok((best.expect("grid nonempty").0, rows))
}
