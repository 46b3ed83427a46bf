use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{contamination_gamma, spearman, write_json, write_stat_csv, StatRow};
use crate::cat::{run_cat_session, tensor_responder, CatOptions, Criterion};
use crate::error::{Error, Result};
use crate::models::Family;
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::{expanded_item_id, Format, QualityLabel, ResponseTensor};
use crate::training::{fit, FitConfig, FittedModel};

/// Subset extraction method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Random,
    /// Adaptive selection with a fitted model and its default criterion.
    Fitted(Family),
}

impl Method {
    fn code(self) -> u64 {
        match self {
            Method::Random => 0,
            Method::Fitted(Family::Irt) => 1,
            Method::Fitted(Family::Mirt { dim }) => 100 + dim as u64,
            Method::Fitted(Family::M2irt) => 2,
            Method::Fitted(Family::M3irt) => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Random => f.write_str("random"),
            Method::Fitted(fam) => write!(f, "{fam}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Method::Random),
            other => Ok(Method::Fitted(other.parse()?)),
        }
    }
}

/// How the held-out subject's full-pool accuracy is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Estimator {
    /// Observed answers on the subset plus predicted probabilities for the
    /// rest of the pool.
    #[default]
    Hybrid,
    /// Predicted probabilities over the whole pool.
    Model,
    /// Accuracy on the subset alone.
    Raw,
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Estimator::Hybrid),
            "model" => Ok(Estimator::Model),
            "raw" => Ok(Estimator::Raw),
            _ => Err(Error::invalid(format!("unknown estimator `{s}` (hybrid, model, raw)"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Hybrid => "hybrid",
            Estimator::Model => "model",
            Estimator::Raw => "raw",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingOptions<F> {
    pub methods: Vec<Method>,
    pub fractions: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// Base fit settings; the family is replaced per method.
    pub fit: FitConfig<F>,
    pub estimator: Estimator,
    /// Share of the remaining subjects' cells used for early stopping.
    pub val_frac: f64,
    pub format: Format,
    /// Start and regularize CAT abilities at the fitted population mean
    /// instead of the box midpoint.
    pub center_on_population: bool,
    /// Fit single-format families with one item per (item, format) pair.
    pub expand_classic: bool,
}

impl<F: Scalar> Default for RankingOptions<F> {
    fn default() -> Self {
        RankingOptions {
            methods: vec![
                Method::Random,
                Method::Fitted(Family::Irt),
                Method::Fitted(Family::Mirt { dim: 4 }),
                Method::Fitted(Family::M2irt),
                Method::Fitted(Family::M3irt),
            ],
            fractions: (1..=50).map(|k| k as f64 / 100.0).collect(),
            replicas: 24,
            seed: 0,
            fit: FitConfig::default(),
            estimator: Estimator::Hybrid,
            val_frac: 0.1,
            format: Format::FULL,
            center_on_population: false,
            expand_classic: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetResult {
    pub method: String,
    #[serde(skip)]
    pub items: Vec<String>,
    pub gamma: f64,
    /// 1-based position of the held-out subject in the estimated ranking.
    pub estimated_rank_position: usize,
    pub true_rank_position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaOutcome {
    pub replica: usize,
    pub held_out: String,
    pub fraction: f64,
    pub budget: usize,
    pub spearman: f64,
    pub estimated_accuracy: f64,
    pub true_accuracy: f64,
    /// Whether the method's fitted model stayed inside its box (None for Random).
    pub model_in_bounds: Option<bool>,
    pub subset: SubsetResult,
}

impl ReplicaOutcome {
    pub fn method(&self) -> &str {
        &self.subset.method
    }

    pub fn gamma(&self) -> f64 {
        self.subset.gamma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingReport {
    pub subset_fractions: Vec<f64>,
    pub replicas: usize,
    pub pool_size: usize,
    pub pool_contamination: f64,
    pub estimator: String,
    pub spearman: Vec<StatRow>,
    pub gamma: Vec<StatRow>,
    pub outcomes: Vec<ReplicaOutcome>,
}

impl RankingReport {
    pub fn spearman_row(&self, method: &str, fraction: f64) -> Option<&StatRow> {
        self.spearman.iter().find(|r| r.method == method && r.fraction_or_level == fraction)
    }

    pub fn gamma_row(&self, method: &str, fraction: f64) -> Option<&StatRow> {
        self.gamma.iter().find(|r| r.method == method && r.fraction_or_level == fraction)
    }

    pub fn outcomes_for<'a>(&'a self, method: &'a str, fraction: f64) -> impl Iterator<Item = &'a ReplicaOutcome> + 'a {
        self.outcomes
            .iter()
            .filter(move |o| o.method() == method && o.fraction == fraction)
    }

    /// Writes `ranking_spearman.csv`, `ranking_gamma.csv` and
    /// `ranking.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            dir.join("ranking_spearman.csv"),
            dir.join("ranking_gamma.csv"),
            dir.join("ranking.json"),
        ];
        write_stat_csv(&files[0], &self.spearman)?;
        write_stat_csv(&files[1], &self.gamma)?;
        write_json(&files[2], self)?;
        Ok(files.to_vec())
    }
}

/// Mean kernel probability over `pool` at ability `theta`.
pub fn estimated_accuracy<F: Scalar, S: AsRef<str>>(
    model: &FittedModel<F>,
    theta: &[F],
    pool: &[S],
    s: Format,
) -> Result<F> {
    if pool.is_empty() {
        return Err(Error::Empty("pool"));
    }
    if theta.len() != model.family().subject_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.family().subject_dim(),
            got: theta.len(),
        });
    }
    let mut sum = F::zero();
    for id in pool {
        let id = id.as_ref();
        let j = model.item_index(id).ok_or_else(|| Error::UnknownItem(id.to_owned()))?;
        sum = sum + model.prob_with_theta(theta, j, s);
    }
    Ok(sum / F::lit(pool.len() as f64))
}

fn budget_for(fraction: f64, pool: usize) -> usize {
    ((fraction * pool as f64).round() as usize).clamp(1, pool)
}

/// 1-based position of `k` when `values` are sorted descending.
fn rank_position(values: &[f64], k: usize) -> usize {
    1 + values.iter().enumerate().filter(|&(i, &v)| i != k && v > values[k]).count()
}

struct Context<'a, F> {
    tensor: &'a ResponseTensor,
    labels: &'a IndexMap<String, QualityLabel>,
    opts: &'a RankingOptions<F>,
    truth: Vec<f64>,
}

/// Hold-one-out subset ranking experiment.
///
/// Each replica holds out one subject, fits every model-based method on
/// the others, extracts subsets of each requested size for the held-out
/// subject, and compares the ranking with its estimated accuracy swapped
/// in against the true full-pool ranking.
pub fn ranking_experiment<F: Scalar>(
    tensor: &ResponseTensor,
    labels: &IndexMap<String, QualityLabel>,
    opts: &RankingOptions<F>,
) -> Result<RankingReport> {
    let m = tensor.subjects().len();
    if m < 3 {
        return Err(Error::invalid(format!("need at least 3 subjects, got {m}")));
    }
    if opts.replicas == 0 {
        return Err(Error::invalid("replicas must be at least 1"));
    }
    if opts.methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    if opts.fractions.is_empty() {
        return Err(Error::Empty("fraction list"));
    }
    if let Some(f) = opts.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::invalid(format!("subset fraction {f} outside (0, 1]")));
    }
    if let Some(id) = tensor.items().iter().find(|id| !labels.contains_key(*id)) {
        return Err(Error::invalid(format!("item `{id}` has no quality label")));
    }
    let summary = tensor.summarize();
    if summary.subjects.len() != m {
        return Err(Error::invalid(format!("every subject needs {} responses", opts.format)));
    }
    let ctx = Context {
        tensor,
        labels,
        opts,
        truth: summary.subjects.iter().map(|a| a.accuracy).collect(),
    };

    let mut held: Vec<usize> = (0..m).collect();
    held.shuffle(&mut seed::rng_for(opts.seed, &[seed::STREAM_REPLICA]));
    held.truncate(opts.replicas.min(m));

    let per_replica: Vec<Vec<ReplicaOutcome>> = held
        .par_iter()
        .enumerate()
        .map(|(r, &i)| run_replica(&ctx, r, i))
        .collect::<Result<_>>()?;
    let outcomes: Vec<ReplicaOutcome> = per_replica.into_iter().flatten().collect();

    let mut spearman_rows = Vec::new();
    let mut gamma_rows = Vec::new();
    for method in &opts.methods {
        let name = method.to_string();
        for &f in &opts.fractions {
            let sel: Vec<&ReplicaOutcome> = outcomes.iter().filter(|o| o.method() == name && o.fraction == f).collect();
            let rho: Vec<f64> = sel.iter().map(|o| o.spearman).collect();
            let gam: Vec<f64> = sel.iter().map(|o| o.gamma()).collect();
            spearman_rows.push(StatRow::from_values(&name, f, &rho));
            gamma_rows.push(StatRow::from_values(&name, f, &gam));
        }
    }
    Ok(RankingReport {
        subset_fractions: opts.fractions.clone(),
        replicas: held.len(),
        pool_size: tensor.items().len(),
        pool_contamination: contamination_gamma(tensor.items(), labels)?,
        estimator: opts.estimator.to_string(),
        spearman: spearman_rows,
        gamma: gamma_rows,
        outcomes,
    })
}

fn run_replica<F: Scalar>(ctx: &Context<'_, F>, r: usize, held: usize) -> Result<Vec<ReplicaOutcome>> {
    let opts = ctx.opts;
    let tensor = ctx.tensor;
    let held_id = tensor.subjects()[held].clone();
    let answers = tensor.responses_of(&held_id);
    let pool: Vec<String> = tensor
        .items()
        .iter()
        .filter(|id| answers.contains_key(&((*id).clone(), opts.format)))
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::invalid(format!("held-out subject `{held_id}` has no {} responses", opts.format)));
    }
    let n = pool.len();
    let budgets: Vec<usize> = opts.fractions.iter().map(|&f| budget_for(f, n)).collect();
    let max_budget = *budgets.iter().max().expect("fractions nonempty");
    let rest = tensor.filter(|rec| rec.subject != held);
    // format-expanded copies for single-format families, built on demand
    let cache = OnceLock::new();
    let expanded = || cache.get_or_init(|| (rest.expand_formats(), tensor.expand_formats()));

    let mut out = Vec::with_capacity(opts.methods.len() * budgets.len());
    for &method in &opts.methods {
        let path = [seed::STREAM_REPLICA, r as u64, method.code()];
        let expand = matches!(method, Method::Fitted(f) if f.is_classic() && opts.expand_classic);
        // pool ids and format as the model sees them
        let (model_pool, model_format): (Vec<String>, Format) = if expand {
            (pool.iter().map(|id| expanded_item_id(id, opts.format)).collect(), Format::FULL)
        } else {
            (pool.clone(), opts.format)
        };
        // (ordered subset, ability after each step); ability empty for Random
        let (subset, thetas, model): (Vec<String>, Vec<Vec<F>>, Option<FittedModel<F>>) = match method {
            Method::Random => {
                let mut perm = pool.clone();
                perm.shuffle(&mut seed::rng_for(opts.seed, &[seed::STREAM_SUBSET, r as u64]));
                perm.truncate(max_budget);
                (perm, Vec::new(), None)
            }
            Method::Fitted(family) => {
                let (fit_on, answer_from) = if expand { (&expanded().0, &expanded().1) } else { (&rest, tensor) };
                let (train, val, _) = fit_on.mask_cells(opts.val_frac, 0.0, seed::derive(opts.seed, &path))?;
                let cfg = FitConfig {
                    family,
                    seed: seed::derive(opts.seed, &[path[0], path[1], path[2], 1]),
                    ..opts.fit.clone()
                };
                let model = fit(&train, &val, &cfg)?;
                if let Some(id) = model_pool.iter().find(|id| model.item_index(id).is_none()) {
                    return Err(Error::invalid(format!("item `{id}` has no responses outside `{held_id}`")));
                }
                let mut cat = CatOptions::new(&model, max_budget, Criterion::default_for(family));
                cat.format = model_format;
                if opts.center_on_population {
                    cat.ability.center = Some(model.mean_ability());
                }
                let session = run_cat_session(&model, tensor_responder(answer_from, &held_id), &model_pool, &cat)?;
                let thetas = session
                    .log
                    .iter()
                    .map(|l| l.theta_hat.iter().map(|&x| F::lit(x)).collect())
                    .collect();
                let back: HashMap<&str, &str> =
                    model_pool.iter().map(String::as_str).zip(pool.iter().map(String::as_str)).collect();
                let items = session.items().iter().map(|id| back[id.as_str()].to_owned()).collect();
                (items, thetas, Some(model))
            }
        };

        for (&fraction, &k) in opts.fractions.iter().zip(&budgets) {
            let chosen = &subset[..k];
            let observed = chosen.iter().filter(|id| answers[&((*id).clone(), opts.format)]).count();
            let estimate = match (&model, opts.estimator) {
                (None, _) | (Some(_), Estimator::Raw) => observed as f64 / k as f64,
                (Some(m), Estimator::Model) => {
                    estimated_accuracy(m, &thetas[k - 1], &model_pool, model_format)?.as_f64()
                }
                (Some(m), Estimator::Hybrid) => {
                    let taken: HashSet<&str> = chosen.iter().map(String::as_str).collect();
                    let mut predicted = 0.0;
                    for (id, mid) in pool.iter().zip(&model_pool) {
                        if taken.contains(id.as_str()) {
                            continue;
                        }
                        let j = m.item_index(mid).expect("checked above");
                        predicted += m.prob_with_theta(&thetas[k - 1], j, model_format).as_f64();
                    }
                    (observed as f64 + predicted) / n as f64
                }
            };
            let mut ranked = ctx.truth.clone();
            ranked[held] = estimate;
            out.push(ReplicaOutcome {
                replica: r,
                held_out: held_id.clone(),
                fraction,
                budget: k,
                spearman: spearman(&ranked, &ctx.truth)?,
                estimated_accuracy: estimate,
                true_accuracy: ctx.truth[held],
                model_in_bounds: model.as_ref().map(|m| m.params().in_bounds(m.q())),
                subset: SubsetResult {
                    method: method.to_string(),
                    items: chosen.to_vec(),
                    gamma: contamination_gamma(chosen, ctx.labels)?,
                    estimated_rank_position: rank_position(&ranked, held),
                    true_rank_position: rank_position(&ctx.truth, held),
                },
            });
        }
    }
    Ok(out)
}
