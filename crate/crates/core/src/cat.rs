//! Computerized adaptive testing: Fisher information, greedy item
//! selection (maximum information or D-optimality) and ability updates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{sigmoid, Family, ItemParams, SignConvention, SubjectParams, Z_CLAMP};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::{Format, ResponseTensor};
use crate::training::{Adam, FittedModel};

/// Ridge added to the initial cumulative information.
pub const DEFAULT_INFO_EPSILON: f64 = 1e-6;
/// Strength of the pull toward the box midpoint during ability updates.
pub const DEFAULT_RIDGE: f64 = 0.01;
pub const ABILITY_MAX_STEPS: usize = 500;
pub const ABILITY_GRAD_TOL: f64 = 1e-6;

/// Dense symmetric information matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoMatrix<F> {
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> InfoMatrix<F> {
    pub fn zeros(dim: usize) -> Self {
        InfoMatrix {
            dim,
            data: vec![F::zero(); dim * dim],
        }
    }

    /// `eps * I`.
    pub fn scaled_identity(dim: usize, eps: F) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = eps;
        }
        m
    }

    /// `w * v v^T`, exactly symmetric.
    pub fn outer(v: &[F], w: F) -> Self {
        let dim = v.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let x = w * v[i] * v[j];
                m.data[i * dim + j] = x;
                m.data[j * dim + i] = x;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn trace(&self) -> F {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "information dimension mismatch");
        InfoMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(&x, &y)| x + y).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dim, other.dim, "information dimension mismatch");
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + y;
        }
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Determinant by LU factorization with partial pivoting.
    pub fn det(&self) -> F {
        determinant(self.dim, self.data.clone())
    }

    pub fn to_rows(&self) -> Vec<Vec<F>> {
        self.data.chunks(self.dim.max(1)).map(|r| r.to_vec()).collect()
    }
}

fn determinant<F: Scalar>(n: usize, mut a: Vec<F>) -> F {
    let mut det = F::one();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty range");
        if a[pivot * n + col] == F::zero() {
            return F::zero();
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det = det * p;
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f != F::zero() {
                for k in col..n {
                    a[row * n + k] = a[row * n + k] - f * a[col * n + k];
                }
            }
        }
    }
    det
}

/// Scalar Fisher information of an M2IRT item: `P (1 - P) a(s)^2`.
pub fn fisher_scalar<F: Scalar>(sp: &SubjectParams<F>, ip: &ItemParams<F>, s: Format) -> F {
    let p = crate::models::prob_m2(sp, ip, s);
    let a = ip.discrimination_at(s);
    p * (F::one() - p) * a * a
}

/// Fisher information matrix of an M3IRT item: `P (1 - P) v v^T` with
/// `v = diag(w) a`, `w` being the convention's ability weights.
pub fn fisher_matrix<F: Scalar>(sp: &SubjectParams<F>, ip: &ItemParams<F>, s: Format, conv: SignConvention) -> InfoMatrix<F> {
    let p = crate::models::prob_m3(sp, ip, s, conv);
    let w = conv.ability_weights::<F>(s);
    let v: Vec<F> = (0..4).map(|k| w[k] * ip.a[k]).collect();
    InfoMatrix::outer(&v, p * (F::one() - p))
}

/// Information contributed by item `j` at ability `theta` for the model's
/// family. Scalar families (IRT, M2IRT) yield a 1x1 matrix.
pub fn item_information<F: Scalar>(model: &FittedModel<F>, theta: &[F], j: usize, s: Format) -> InfoMatrix<F> {
    let a = model.params().a(j);
    // P(1-P) from the unclamped logit; 1 - P cancels badly near saturation
    let z = model
        .family()
        .logit(model.convention(), theta, a, model.params().b(j), s);
    let e = (-z.abs()).exp();
    let w = e / ((F::one() + e) * (F::one() + e));
    match model.family() {
        Family::Irt => InfoMatrix::outer(&[a[0]], w),
        Family::M2irt => {
            let u = s.active::<F>();
            let disc = (0..4).fold(F::zero(), |acc, k| acc + u[k] * a[k]);
            InfoMatrix::outer(&[disc], w)
        }
        Family::Mirt { .. } => InfoMatrix::outer(a, w),
        Family::M3irt => {
            let wt = model.convention().ability_weights::<F>(s);
            let v: Vec<F> = (0..4).map(|k| wt[k] * a[k]).collect();
            InfoMatrix::outer(&v, w)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Largest Fisher information (trace for matrix families).
    MaxInfo,
    /// Largest determinant of the cumulative information.
    DOptimal,
}

impl Criterion {
    /// Criterion conventionally paired with a family.
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Irt | Family::M2irt => Criterion::MaxInfo,
            Family::Mirt { .. } | Family::M3irt => Criterion::DOptimal,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::MaxInfo => "maxinfo",
            Criterion::DOptimal => "doptimal",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maxinfo" => Ok(Criterion::MaxInfo),
            "doptimal" => Ok(Criterion::DOptimal),
            _ => Err(Error::invalid(format!("unknown criterion `{s}` (expected maxinfo or doptimal)"))),
        }
    }
}

fn resolve_pool<F: Scalar, S: AsRef<str>>(model: &FittedModel<F>, pool: &[S]) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    pool.iter()
        .map(|id| {
            let id = id.as_ref();
            model.item_index(id).ok_or_else(|| Error::UnknownItem(id.to_owned()))
        })
        .collect()
}

/// Index into `cands` maximizing `score`; ties resolved by ascending item id.
fn argmax_by_id<F: Scalar>(model: &FittedModel<F>, cands: &[usize], mut score: impl FnMut(usize) -> F) -> usize {
    let ids = model.item_ids();
    let mut best = 0;
    let mut best_score = score(cands[0]);
    for (k, &j) in cands.iter().enumerate().skip(1) {
        let sc = score(j);
        if sc > best_score || (sc == best_score && ids[j] < ids[cands[best]]) {
            best = k;
            best_score = sc;
        }
    }
    best
}

/// Item in `pool` with the largest Fisher information at `theta`.
pub fn select_next_maxinfo<F: Scalar, S: AsRef<str>>(
    model: &FittedModel<F>,
    theta: &[F],
    pool: &[S],
    s: Format,
) -> Result<String> {
    let cands = resolve_pool(model, pool)?;
    let k = argmax_by_id(model, &cands, |j| item_information(model, theta, j, s).trace());
    Ok(model.item_ids()[cands[k]].clone())
}

/// D-optimal greedy step: the item maximizing `det(cum + I_j)` and the
/// updated cumulative matrix.
pub fn select_next_doptimal<F: Scalar, S: AsRef<str>>(
    model: &FittedModel<F>,
    cum_info: &InfoMatrix<F>,
    theta: &[F],
    pool: &[S],
    s: Format,
) -> Result<(String, InfoMatrix<F>)> {
    let cands = resolve_pool(model, pool)?;
    if cum_info.dim() != model.family().info_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.family().info_dim(),
            got: cum_info.dim(),
        });
    }
    let k = argmax_by_id(model, &cands, |j| cum_info.add(&item_information(model, theta, j, s)).det());
    let j = cands[k];
    Ok((model.item_ids()[j].clone(), cum_info.add(&item_information(model, theta, j, s))))
}

/// One administered item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Answer {
    pub item: String,
    pub format: Format,
    pub correct: bool,
}

/// Settings for ability re-estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct AbilityOptions<F> {
    pub ridge: F,
    pub max_steps: usize,
    pub grad_tol: F,
    pub learning_rate: F,
    /// Ridge centre and empty-history answer; the box midpoint when `None`.
    pub center: Option<Vec<F>>,
}

impl<F: Scalar> AbilityOptions<F> {
    pub fn for_model(model: &FittedModel<F>) -> Self {
        AbilityOptions {
            ridge: F::lit(DEFAULT_RIDGE),
            max_steps: ABILITY_MAX_STEPS,
            grad_tol: F::lit(ABILITY_GRAD_TOL),
            learning_rate: model.config.learning_rate,
            center: None,
        }
    }
}

/// Penalized maximum-likelihood ability given frozen item parameters:
/// maximizes `sum log P(answers) - ridge * |theta - c|^2` over the box by
/// projected Adam ascent, starting at `init` (default: `c`). `c` is
/// `opts.center` or the box midpoint.
pub fn estimate_ability<F: Scalar>(
    model: &FittedModel<F>,
    answered: &[Answer],
    opts: &AbilityOptions<F>,
    init: Option<&[F]>,
) -> Result<Vec<F>> {
    let fam = model.family();
    let dim = fam.subject_dim();
    let q = model.q();
    let mid: Vec<F> = match &opts.center {
        Some(c) if c.len() == dim => c.iter().map(|&x| x.max(F::zero()).min(q)).collect(),
        Some(c) => return Err(Error::DimensionMismatch { expected: dim, got: c.len() }),
        None => vec![q * F::half(); dim],
    };
    if answered.is_empty() {
        return Ok(mid);
    }
    let cells: Vec<(usize, Format, bool)> = answered
        .iter()
        .map(|a| {
            model
                .item_index(&a.item)
                .map(|j| (j, a.format, a.correct))
                .ok_or_else(|| Error::UnknownItem(a.item.clone()))
        })
        .collect::<Result<_>>()?;
    let mut theta: Vec<F> = match init {
        Some(t) if t.len() == dim => t.iter().map(|&x| x.max(F::zero()).min(q)).collect(),
        Some(t) => return Err(Error::DimensionMismatch { expected: dim, got: t.len() }),
        None => mid.clone(),
    };
    let conv = model.convention();
    let p = model.params();
    let mut opt = Adam::with_defaults(dim, opts.learning_rate);
    let mut grad = vec![F::zero(); dim];
    let mut gt = vec![F::zero(); dim];
    let mut ga = vec![F::zero(); fam.item_a_dim()];
    let mut gb = vec![F::zero(); fam.item_b_dim()];
    let two = F::lit(2.0);
    let clamp = F::lit(Z_CLAMP);
    for _ in 0..opts.max_steps {
        // gradient of the negative penalized log-likelihood
        for ((g, &t), &c) in grad.iter_mut().zip(&theta).zip(&mid) {
            *g = two * opts.ridge * (t - c);
        }
        for &(j, s, r) in &cells {
            let (a, b) = (p.a(j), p.b(j));
            let z = fam.logit(conv, &theta, a, b, s);
            if z.abs() >= clamp {
                continue;
            }
            let dz = sigmoid(z) - if r { F::one() } else { F::zero() };
            fam.logit_grad(conv, &theta, a, b, s, &mut gt, &mut ga, &mut gb);
            for (g, &d) in grad.iter_mut().zip(&gt) {
                *g = *g + dz * d;
            }
        }
        let pg_norm = theta
            .iter()
            .zip(&grad)
            .map(|(&t, &g)| {
                let blocked = (t <= F::zero() && g > F::zero()) || (t >= q && g < F::zero());
                if blocked {
                    F::zero()
                } else {
                    g * g
                }
            })
            .sum::<F>()
            .sqrt();
        if pg_norm < opts.grad_tol {
            break;
        }
        opt.step(&mut theta, &grad);
        for t in theta.iter_mut() {
            *t = t.max(F::zero()).min(q);
        }
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatOptions<F> {
    pub budget: usize,
    pub criterion: Criterion,
    pub format: Format,
    pub info_epsilon: F,
    pub ability: AbilityOptions<F>,
    /// Seeded uniform initial ability instead of the ridge centre.
    pub random_init: Option<u64>,
}

impl<F: Scalar> CatOptions<F> {
    pub fn new(model: &FittedModel<F>, budget: usize, criterion: Criterion) -> Self {
        CatOptions {
            budget,
            criterion,
            format: Format::FULL,
            info_epsilon: F::lit(DEFAULT_INFO_EPSILON),
            ability: AbilityOptions::for_model(model),
            random_init: None,
        }
    }
}

/// JSONL log line for one CAT step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub item: String,
    pub s_image: u8,
    pub s_text: u8,
    pub correct: u8,
    pub det_cum_info: f64,
    pub theta_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatSession<F> {
    pub answered: Vec<Answer>,
    pub theta_hat: Vec<F>,
    pub cum_info: InfoMatrix<F>,
    pub budget: usize,
    pub log: Vec<StepLog>,
}

impl<F: Scalar> CatSession<F> {
    pub fn items(&self) -> Vec<String> {
        self.answered.iter().map(|a| a.item.clone()).collect()
    }

    pub fn subject_params(&self) -> Option<SubjectParams<F>> {
        let t = &self.theta_hat;
        (t.len() == 4).then(|| SubjectParams::new([t[0], t[1], t[2], t[3]]))
    }

    pub fn write_log(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for line in &self.log {
            serde_json::to_writer(&mut w, line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A session stopped by a responder failure; holds everything answered so far.
#[derive(Debug)]
pub struct SessionAborted<F> {
    pub partial: CatSession<F>,
    pub error: Error,
}

impl<F: Scalar> fmt::Display for SessionAborted<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CAT session aborted after {} items: {}", self.partial.answered.len(), self.error)
    }
}

impl<F: Scalar> std::error::Error for SessionAborted<F> {}

impl<F: Scalar> From<SessionAborted<F>> for Error {
    fn from(e: SessionAborted<F>) -> Self {
        Error::Responder(e.to_string())
    }
}

/// Runs an adaptive test: select, query `responder`, record, re-estimate,
/// until `opts.budget` items have been administered.
pub fn run_cat_session<F, S, R>(
    model: &FittedModel<F>,
    mut responder: R,
    pool: &[S],
    opts: &CatOptions<F>,
) -> std::result::Result<CatSession<F>, SessionAborted<F>>
where
    F: Scalar,
    S: AsRef<str>,
    R: FnMut(&str, Format) -> std::result::Result<bool, String>,
{
    let dim = model.family().subject_dim();
    let q = model.q();
    let theta0 = match (opts.random_init, &opts.ability.center) {
        (Some(s), _) => {
            let mut rng = seed::rng(s);
            (0..dim).map(|_| F::lit(rng.gen::<f64>()) * q).collect()
        }
        (None, Some(c)) => c.iter().map(|&x| x.max(F::zero()).min(q)).collect(),
        (None, None) => vec![q * F::half(); dim],
    };
    let mut session = CatSession {
        answered: Vec::with_capacity(opts.budget),
        theta_hat: theta0,
        cum_info: InfoMatrix::scaled_identity(model.family().info_dim(), opts.info_epsilon),
        budget: opts.budget,
        log: Vec::with_capacity(opts.budget),
    };
    let abort = |partial: CatSession<F>, error: Error| SessionAborted { partial, error };
    if session.theta_hat.len() != dim {
        let got = session.theta_hat.len();
        return Err(abort(session, Error::DimensionMismatch { expected: dim, got }));
    }

    let mut remaining = match resolve_pool(model, pool) {
        Ok(c) => c,
        Err(e) => return Err(abort(session, e)),
    };
    remaining.sort_unstable();
    remaining.dedup();
    if opts.budget > remaining.len() {
        let e = Error::invalid(format!("budget {} exceeds pool size {}", opts.budget, remaining.len()));
        return Err(abort(session, e));
    }
    let s = opts.format;
    for step in 1..=opts.budget {
        let theta = session.theta_hat.clone();
        let k = match opts.criterion {
            Criterion::MaxInfo => argmax_by_id(model, &remaining, |j| item_information(model, &theta, j, s).trace()),
            Criterion::DOptimal => argmax_by_id(model, &remaining, |j| {
                session.cum_info.add(&item_information(model, &theta, j, s)).det()
            }),
        };
        let j = remaining.remove(k);
        let item = model.item_ids()[j].clone();
        let correct = match responder(&item, s) {
            Ok(c) => c,
            Err(msg) => return Err(abort(session, Error::Responder(msg))),
        };
        session.cum_info.add_assign(&item_information(model, &theta, j, s));
        session.answered.push(Answer {
            item: item.clone(),
            format: s,
            correct,
        });
        match estimate_ability(model, &session.answered, &opts.ability, Some(&theta)) {
            Ok(t) => session.theta_hat = t,
            Err(e) => return Err(abort(session, e)),
        }
        let (s_image, s_text) = s.flags();
        session.log.push(StepLog {
            step,
            item,
            s_image,
            s_text,
            correct: correct as u8,
            det_cum_info: session.cum_info.det().as_f64(),
            theta_hat: session.theta_hat.iter().map(|x| x.as_f64()).collect(),
        });
    }
    Ok(session)
}

/// Replays recorded answers of `subject` from a response tensor.
pub fn tensor_responder<'a>(
    tensor: &'a ResponseTensor,
    subject: &str,
) -> impl FnMut(&str, Format) -> std::result::Result<bool, String> + 'a {
    let answers = tensor.responses_of(subject);
    let subject = subject.to_owned();
    move |item: &str, s: Format| {
        answers
            .get(&(item.to_owned(), s))
            .copied()
            .ok_or_else(|| format!("no recorded response of `{subject}` to `{item}` under format {s}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{FitConfig, Params};

    fn model_from(items: &[([f64; 4], [f64; 4])], conv: SignConvention, family: Family) -> FittedModel<f64> {
        let cfg = FitConfig {
            convention: conv,
            ..FitConfig::new(family, 4.0)
        };
        let subjects = vec![("s".to_string(), SubjectParams::new([2.0; 4]))];
        let items: Vec<_> = items
            .iter()
            .enumerate()
            .map(|(j, (a, b))| (format!("q{j:02}"), ItemParams::new(*a, *b)))
            .collect();
        FittedModel::from_decomposed(cfg, &subjects, &items).unwrap()
    }

    #[test]
    fn fisher_scalar_examples() {
        // P = 0.5 with a(s) = 2
        let sp = SubjectParams::new([1.0, 0.0, 0.0, 0.0]);
        let ip = ItemParams::new([2.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(fisher_scalar(&sp, &ip, Format::FULL), 1.0);
        let ip0 = ItemParams::new([0.0; 4], [0.3, 0.0, 0.0, 0.0]);
        assert_eq!(fisher_scalar(&sp, &ip0, Format::FULL), 0.0);
        let ip1 = ItemParams::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        let p = crate::models::prob_m2(&sp, &ip1, Format::NONE);
        assert_eq!(p, 0.5);
        assert_eq!(fisher_scalar(&sp, &ip1, Format::NONE), p * (1.0 - p) * 1.0);
    }

    #[test]
    fn fisher_matrix_examples() {
        let sp = SubjectParams::new([1.0, 0.0, 0.0, 0.0]);
        let ip = ItemParams::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        for s in Format::ALL {
            for conv in [SignConvention::Corrected, SignConvention::AsWritten] {
                let m = fisher_matrix(&sp, &ip, s, conv);
                assert_eq!(m.get(0, 0), 0.25);
                let nonzero = m.as_slice().iter().filter(|&&x| x != 0.0).count();
                assert_eq!(nonzero, 1);
            }
        }
        // P = 0.5 at s = (1,1): z = 4 theta - (b0 - b1 - b2 - b3) = 0 with theta = 0.25
        let sp = SubjectParams::new([0.25; 4]);
        let ip = ItemParams::new([1.0; 4], [3.0, 1.0, 1.0, 0.0]);
        assert_eq!(crate::models::prob_m3(&sp, &ip, Format::FULL, SignConvention::Corrected), 0.5);
        let m = fisher_matrix(&sp, &ip, Format::FULL, SignConvention::Corrected);
        assert!(m.as_slice().iter().all(|&x| x == 0.25));
        let v = [1.0, -1.0, -1.0, -1.0];
        let w = fisher_matrix(&sp, &ip, Format::FULL, SignConvention::AsWritten);
        let p = crate::models::prob_m3(&sp, &ip, Format::FULL, SignConvention::AsWritten);
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        assert!((w.trace() - p * (1.0 - p) * norm2).abs() < 1e-15);
        assert!(w.is_symmetric(0.0));
    }

    #[test]
    fn determinant_matches_cofactor_expansion() {
        fn cofactor(n: usize, m: &[f64]) -> f64 {
            if n == 1 {
                return m[0];
            }
            (0..n)
                .map(|c| {
                    let minor: Vec<f64> = (1..n)
                        .flat_map(|r| (0..n).filter(move |&k| k != c).map(move |k| (r, k)))
                        .map(|(r, k)| m[r * n + k])
                        .collect();
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * m[c] * cofactor(n - 1, &minor)
                })
                .sum()
        }
        let mut rng = seed::rng(3);
        for n in 1..=5 {
            let data: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let m = InfoMatrix { dim: n, data: data.clone() };
            assert!((m.det() - cofactor(n, &data)).abs() < 1e-12);
        }
    }

    #[test]
    fn maxinfo_examples() {
        let m = model_from(
            &[([1.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]), ([2.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0])],
            SignConvention::Corrected,
            Family::M2irt,
        );
        let theta = [2.0, 0.0, 0.0, 0.0];
        assert_eq!(select_next_maxinfo(&m, &theta, &["q00"], Format::NONE).unwrap(), "q00");
        assert_eq!(select_next_maxinfo(&m, &theta, &["q00", "q01"], Format::NONE).unwrap(), "q01");
        assert!(select_next_maxinfo::<f64, &str>(&m, &theta, &[], Format::NONE).is_err());
        assert!(select_next_maxinfo(&m, &theta, &["zz"], Format::NONE).is_err());
    }

    #[test]
    fn ties_break_by_item_id() {
        let same = ([1.0, 0.5, 0.5, 0.5], [2.0, 0.5, 0.5, 0.5]);
        let m = model_from(&[same, same, same], SignConvention::Corrected, Family::M3irt);
        let theta = [2.0; 4];
        assert_eq!(select_next_maxinfo(&m, &theta, &["q02", "q01", "q00"], Format::FULL).unwrap(), "q00");
        let cum = InfoMatrix::scaled_identity(4, 1e-6);
        let (id, _) = select_next_doptimal(&m, &cum, &theta, &["q02", "q01"], Format::FULL).unwrap();
        assert_eq!(id, "q01");
    }

    #[test]
    fn doptimal_single_candidate_raises_det() {
        let m = model_from(&[([1.0, 0.5, 0.2, 0.3], [2.0, 0.5, 0.5, 0.5])], SignConvention::Corrected, Family::M3irt);
        let eps = 1e-6;
        let cum = InfoMatrix::scaled_identity(4, eps);
        let (id, upd) = select_next_doptimal(&m, &cum, &[2.0; 4], &["q00"], Format::FULL).unwrap();
        assert_eq!(id, "q00");
        assert!(upd.det() > eps.powi(4));
    }

    #[test]
    fn ability_empty_is_midpoint() {
        let m = model_from(&[([1.0; 4], [1.0; 4])], SignConvention::Corrected, Family::M3irt);
        let t = estimate_ability(&m, &[], &AbilityOptions::for_model(&m), None).unwrap();
        assert_eq!(t, vec![2.0; 4]);
    }

    #[test]
    fn ability_all_correct_hits_upper_bound() {
        let items: Vec<_> = (0..5).map(|_| ([0.5; 4], [3.0, 0.5, 0.5, 0.5])).collect();
        let m = model_from(&items, SignConvention::Corrected, Family::M3irt);
        let answered: Vec<Answer> = (0..5)
            .map(|j| Answer {
                item: format!("q{j:02}"),
                format: Format::FULL,
                correct: true,
            })
            .collect();
        // the maximizer sits on the bound; the default 500 steps stop short of it
        let opts = AbilityOptions {
            ridge: 0.0,
            max_steps: 20_000,
            ..AbilityOptions::for_model(&m)
        };
        let t = estimate_ability(&m, &answered, &opts, None).unwrap();
        assert!(t.iter().all(|&x| x == 4.0), "{t:?}");
    }

    #[test]
    fn information_stays_exact_past_the_clamp() {
        // z = 64 and z = 48 at theta = 2
        let items = vec![([4.0, 4.0, 0.0, 0.0], [0.0; 4]), ([3.0, 3.0, 0.0, 0.0], [0.0; 4])];
        let m = model_from(&items, SignConvention::Corrected, Family::M2irt);
        let th = [2.0; 4];
        let i0 = item_information(&m, &th, 0, Format::FULL).trace();
        let i1 = item_information(&m, &th, 1, Format::FULL).trace();
        let want0 = 64.0 * (-64.0f64).exp() / (1.0 + (-64.0f64).exp()).powi(2);
        let want1 = 36.0 * (-48.0f64).exp() / (1.0 + (-48.0f64).exp()).powi(2);
        assert!(((i0 - want0) / want0).abs() < 1e-12, "{i0} {want0}");
        assert!(((i1 - want1) / want1).abs() < 1e-12, "{i1} {want1}");
    }

    #[test]
    fn ability_center_moves_ridge_and_start() {
        let items = vec![([0.5, 0.3, 0.1, 0.4], [2.0, 0.5, 0.5, 0.5])];
        let m = model_from(&items, SignConvention::Corrected, Family::M3irt);
        let mut opts = AbilityOptions::for_model(&m);
        opts.center = Some(vec![1.0, 9.0, -1.0, 0.5]);
        // empty history returns the clamped centre
        assert_eq!(estimate_ability(&m, &[], &opts, None).unwrap(), vec![1.0, 4.0, 0.0, 0.5]);
        // a huge ridge pins the estimate to it
        opts.ridge = 1e6;
        let ans = [Answer { item: "q00".into(), format: Format::FULL, correct: true }];
        let t = estimate_ability(&m, &ans, &opts, None).unwrap();
        for (x, c) in t.iter().zip([1.0, 4.0, 0.0, 0.5]) {
            assert!((x - c).abs() < 1e-3, "{t:?}");
        }
        opts.center = Some(vec![1.0]);
        assert!(estimate_ability(&m, &ans, &opts, None).is_err());
    }

    #[test]
    fn session_budget_one_and_distinctness() {
        let items: Vec<_> = (0..8)
            .map(|j| ([0.2 + 0.1 * j as f64, 0.3, 0.1, 0.4], [2.0, 0.5, 0.25 * j as f64 / 4.0, 0.5]))
            .collect();
        let m = model_from(&items, SignConvention::Corrected, Family::M3irt);
        let pool: Vec<String> = m.item_ids().to_vec();
        let mid = [2.0; 4];
        let opts = CatOptions::new(&m, 1, Criterion::MaxInfo);
        let s = run_cat_session(&m, |_: &str, _| Ok(true), &pool, &opts).unwrap();
        assert_eq!(s.items(), vec![select_next_maxinfo(&m, &mid, &pool, Format::FULL).unwrap()]);

        let opts = CatOptions::new(&m, 8, Criterion::DOptimal);
        let s = run_cat_session(&m, |id: &str, _| Ok(id.ends_with('1')), &pool, &opts).unwrap();
        let mut items = s.items();
        items.sort();
        items.dedup();
        assert_eq!(items.len(), 8);
        assert_eq!(s.log.len(), 8);
        let dets: Vec<f64> = s.log.iter().map(|l| l.det_cum_info).collect();
        assert!(dets.windows(2).all(|w| w[1] >= w[0]));

        let opts = CatOptions::new(&m, 9, Criterion::DOptimal);
        assert!(run_cat_session(&m, |_: &str, _| Ok(true), &pool, &opts).is_err());
    }

    #[test]
    fn responder_failure_keeps_partial_session() {
        let items: Vec<_> = (0..4).map(|j| ([1.0, 0.1 * j as f64, 0.2, 0.3], [2.0, 0.5, 0.5, 0.5])).collect();
        let m = model_from(&items, SignConvention::Corrected, Family::M3irt);
        let pool: Vec<String> = m.item_ids().to_vec();
        let mut calls = 0;
        let responder = |_: &str, _| {
            calls += 1;
            if calls > 2 {
                Err("offline".to_string())
            } else {
                Ok(true)
            }
        };
        let err = run_cat_session(&m, responder, &pool, &CatOptions::new(&m, 4, Criterion::DOptimal)).unwrap_err();
        assert_eq!(err.partial.answered.len(), 2);
        assert!(matches!(err.error, Error::Responder(_)));
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("maxinfo".parse::<Criterion>().unwrap(), Criterion::MaxInfo);
        assert_eq!("DOptimal".parse::<Criterion>().unwrap(), Criterion::DOptimal);
        assert!("aoptimal".parse::<Criterion>().is_err());
    }

    #[test]
    fn classic_information_dims() {
        let mut rng = seed::rng(1);
        for (family, dim) in [(Family::Irt, 1), (Family::Mirt { dim: 3 }, 3)] {
            let p = Params::random(family, 1, 2, 4.0, &mut rng);
            let m = FittedModel::from_parts(FitConfig::new(family, 4.0), vec!["s".into()], vec!["a".into(), "b".into()], p)
                .unwrap();
            let info = item_information(&m, m.params().theta(0), 0, Format::FULL);
            assert_eq!(info.dim(), dim);
            assert!(info.trace() >= 0.0);
        }
    }
}
