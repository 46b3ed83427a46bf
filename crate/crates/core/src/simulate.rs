//! Synthetic benchmarks: ground-truth M3IRT parameters, low-quality item
//! injection and Bernoulli response sampling.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Family, ItemParams, SignConvention, SubjectParams};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::{Format, QualityLabel, ResponseTensor, TensorBuilder};
use crate::training::{FitConfig, FittedModel, ModelFile};

pub const DEFAULT_N_CHOICES: usize = 4;

/// How ground-truth parameters are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampler {
    /// Abilities share a general factor and are confined to `[0, q/2]`;
    /// `b_base ~ U[q/2, q]`, modality hints `~ U[0, q/4]`. Gives
    /// full-format accuracies spread roughly over 0.45..0.95.
    #[default]
    Calibrated,
    /// Independent `U[0, q]` abilities and difficulties with `b_base`
    /// resampled until `b_base >= max(b_image, b_text)`. Under M3IRT almost
    /// every full-format response is correct.
    Uniform,
}

impl FromStr for Sampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrated" => Ok(Sampler::Calibrated),
            "uniform" => Ok(Sampler::Uniform),
            _ => Err(Error::invalid(format!("unknown sampler `{s}`"))),
        }
    }
}

/// Mixture over low-quality types A, B and C.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowQualityMix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for LowQualityMix {
    fn default() -> Self {
        LowQualityMix {
            a: 1.0 / 3.0,
            b: 1.0 / 3.0,
            c: 1.0 / 3.0,
        }
    }
}

impl LowQualityMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.a, self.b, self.c];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || ((self.a + self.b + self.c) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mix ({}, {}, {}) must be non-negative and sum to 1",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }

    /// Splits `total` by largest remainder; ties favour A, then B.
    pub fn allocate(&self, total: usize) -> [usize; 3] {
        let shares = [self.a, self.b, self.c].map(|p| p * total as f64);
        let mut counts = shares.map(|s| s.floor() as usize);
        let mut rest = total - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| {
            let (fi, fj) = (shares[i] - shares[i].floor(), shares[j] - shares[j].floor());
            fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
        });
        for &k in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[k] += 1;
            rest -= 1;
        }
        counts
    }
}

/// Ground-truth M3IRT parameters of a synthetic benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<F> {
    pub subjects: Vec<(String, SubjectParams<F>)>,
    pub items: Vec<(String, ItemParams<F>)>,
    pub labels: IndexMap<String, QualityLabel>,
    pub q: F,
    pub convention: SignConvention,
    pub n_choices: usize,
}

fn unif<F: Scalar>(rng: &mut impl Rng, lo: F, hi: F) -> F {
    lo + (hi - lo) * F::lit(rng.gen::<f64>())
}

fn sample_item<F: Scalar>(rng: &mut impl Rng, q: F, sampler: Sampler) -> ItemParams<F> {
    let a_hi = q.min(F::lit(1.5));
    let a_lo = F::lit(0.2).min(a_hi);
    let a = [(); 4].map(|_| unif(rng, a_lo, a_hi));
    let b = match sampler {
        Sampler::Calibrated => {
            let base = unif(rng, q * F::half(), q);
            let quarter = q * F::lit(0.25);
            let [i, t, c] = [(); 3].map(|_| unif(rng, F::zero(), quarter));
            [base, i, t, c]
        }
        Sampler::Uniform => {
            let mut b = [(); 4].map(|_| unif(rng, F::zero(), q));
            while b[0] < b[1].max(b[2]) {
                b[0] = unif(rng, F::zero(), q);
            }
            b
        }
    };
    ItemParams::new(a, b)
}

/// Draws `m` subjects and `n` original items.
pub fn sample_ground_truth<F: Scalar>(
    m: usize,
    n: usize,
    q: F,
    conv: SignConvention,
    sampler: Sampler,
    seed_value: u64,
) -> Result<GroundTruth<F>> {
    if m < 2 || n < 2 {
        return Err(Error::invalid(format!("need at least 2 subjects and 2 items, got {m} x {n}")));
    }
    if !(q > F::zero()) {
        return Err(Error::invalid("q must be positive"));
    }
    let mut rng = seed::rng_for(seed_value, &[seed::STREAM_TRUTH]);
    let subjects = (0..m)
        .map(|i| {
            let theta = match sampler {
                Sampler::Calibrated => {
                    let general: f64 = rng.gen();
                    let half = q * F::half();
                    [(); 4].map(|_| half * F::lit(0.6 * general + 0.4 * rng.gen::<f64>()))
                }
                Sampler::Uniform => [(); 4].map(|_| unif(&mut rng, F::zero(), q)),
            };
            (format!("m{i:02}"), SubjectParams::new(theta))
        })
        .collect();
    let items: Vec<(String, ItemParams<F>)> = (0..n)
        .map(|j| (format!("q{j:04}"), sample_item(&mut rng, q, sampler)))
        .collect();
    let labels = items.iter().map(|(id, _)| (id.clone(), QualityLabel::Original)).collect();
    Ok(GroundTruth {
        subjects,
        items,
        labels,
        q,
        convention: conv,
        n_choices: DEFAULT_N_CHOICES,
    })
}

impl<F: Scalar> GroundTruth<F> {
    /// Parameters of an unsolvable item: no discrimination and a base
    /// difficulty putting every subject at `1 / n_choices`.
    pub fn chance_item(&self) -> ItemParams<F> {
        let floor = F::lit(((self.n_choices.max(2) - 1) as f64).ln()).min(self.q);
        ItemParams::new([F::zero(); 4], [floor, F::zero(), F::zero(), F::zero()])
    }

    /// Chance level `1 / n_choices`.
    pub fn chance(&self) -> f64 {
        1.0 / self.n_choices as f64
    }

    /// Probability of a correct response under the ground-truth kernel.
    pub fn prob(&self, subject: usize, item: usize, s: Format) -> F {
        let (sp, ip) = (&self.subjects[subject].1, &self.items[item].1);
        Family::M3irt.prob(self.convention, &sp.theta, &ip.a, &ip.b, s)
    }

    /// Number of low-quality items.
    pub fn low_quality_count(&self) -> usize {
        self.labels.values().filter(|l| l.is_low_quality()).count()
    }

    pub fn contamination(&self) -> f64 {
        self.low_quality_count() as f64 / self.items.len().max(1) as f64
    }

    /// Copy restricted to items labeled original.
    pub fn originals(&self) -> Self {
        let mut out = self.clone();
        out.items.retain(|(id, _)| self.labels.get(id) == Some(&QualityLabel::Original));
        out.labels.retain(|_, l| *l == QualityLabel::Original);
        out
    }

    /// Copy with every image/text/cross component zeroed, i.e. data that a
    /// unidimensional model describes exactly.
    pub fn base_only(&self) -> Self {
        let mut out = self.clone();
        for (_, sp) in out.subjects.iter_mut() {
            sp.theta[1..].iter_mut().for_each(|x| *x = F::zero());
        }
        for (_, ip) in out.items.iter_mut() {
            ip.a[1..].iter_mut().for_each(|x| *x = F::zero());
            ip.b[1..].iter_mut().for_each(|x| *x = F::zero());
        }
        out
    }

    /// The ground truth as an M3IRT model.
    pub fn to_model(&self) -> FittedModel<F> {
        let cfg = FitConfig {
            convention: self.convention,
            ..FitConfig::new(Family::M3irt, self.q)
        };
        FittedModel::from_decomposed(cfg, &self.subjects, &self.items).expect("ground truth layout is valid")
    }

    pub fn to_file(&self) -> ModelFile<F> {
        let mut f = self.to_model().to_file();
        f.labels = Some(self.labels.clone());
        f.n_choices = Some(self.n_choices);
        f
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = ModelFile::<F>::load(path)?;
        let labels = f.labels.clone();
        let n_choices = f.n_choices.unwrap_or(DEFAULT_N_CHOICES);
        let m = f.into_model()?;
        if m.family() != Family::M3irt {
            return Err(Error::invalid("ground truth must be an m3irt document"));
        }
        let subjects = m
            .subject_ids()
            .iter()
            .map(|id| (id.clone(), m.subject_params(id).expect("4-d")))
            .collect();
        let items: Vec<(String, ItemParams<F>)> = m
            .item_ids()
            .iter()
            .map(|id| (id.clone(), m.item_params(id).expect("4-d")))
            .collect();
        let labels = labels.unwrap_or_else(|| items.iter().map(|(id, _)| (id.clone(), QualityLabel::Original)).collect());
        Ok(GroundTruth {
            subjects,
            items,
            labels,
            q: m.q(),
            convention: m.convention(),
            n_choices,
        })
    }
}

/// Appends low-quality items so that they make up `fraction` of the pool.
///
/// Type A: zero discrimination at chance level. Type B (image swapped): the
/// text hint removes all base difficulty and image/cross components are
/// zero, so adding the image changes nothing. Type C mirrors B with the
/// roles of image and text exchanged.
pub fn inject_low_quality<F: Scalar>(
    gt: &GroundTruth<F>,
    fraction: f64,
    mix: LowQualityMix,
    seed_value: u64,
) -> Result<GroundTruth<F>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("contamination fraction {fraction} outside [0, 1)")));
    }
    mix.validate()?;
    let n = gt.items.len();
    let total = (fraction * n as f64 / (1.0 - fraction) - 1e-9).ceil().max(0.0) as usize;
    let counts = mix.allocate(total);
    let mut out = gt.clone();
    let mut rng = seed::rng_for(seed_value, &[seed::STREAM_INJECT]);
    let mut next = n;
    let kinds = [QualityLabel::LowA, QualityLabel::LowB, QualityLabel::LowC];
    for (kind, &count) in kinds.iter().zip(&counts) {
        for _ in 0..count {
            let mut ip = sample_item(&mut rng, gt.q, Sampler::Calibrated);
            match kind {
                QualityLabel::LowA => ip = gt.chance_item(),
                QualityLabel::LowB => {
                    ip.b[2] = ip.b[0];
                    ip.b[1] = F::zero();
                    ip.b[3] = F::zero();
                    ip.a[1] = F::zero();
                    ip.a[3] = F::zero();
                }
                QualityLabel::LowC => {
                    ip.b[1] = ip.b[0];
                    ip.b[2] = F::zero();
                    ip.b[3] = F::zero();
                    ip.a[2] = F::zero();
                    ip.a[3] = F::zero();
                }
                QualityLabel::Original => unreachable!(),
            }
            let id = format!("q{next:04}");
            next += 1;
            out.labels.insert(id.clone(), *kind);
            out.items.push((id, ip));
        }
    }
    Ok(out)
}

/// Draws responses for every kept `(subject, item, format)` cell.
pub fn sample_responses<F: Scalar>(
    gt: &GroundTruth<F>,
    formats: &[Format],
    density: f64,
    seed_value: u64,
) -> Result<ResponseTensor> {
    if formats.is_empty() {
        return Err(Error::Empty("format set"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("density {density} outside (0, 1]")));
    }
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut rng = seed::rng_for(seed_value, &[seed::STREAM_RESPONSES]);
    let mut b = TensorBuilder::new();
    for (id, _) in &gt.subjects {
        b.add_subject(id);
    }
    for (j, (item, _)) in gt.items.iter().enumerate() {
        b.add_item(item);
        for (i, (subject, _)) in gt.subjects.iter().enumerate() {
            for &s in &formats {
                if density < 1.0 && rng.gen::<f64>() >= density {
                    continue;
                }
                let p = gt.prob(i, j, s).as_f64();
                b.push(subject, item, s, rng.gen::<f64>() < p)?;
            }
        }
    }
    Ok(b.labels(Some(gt.labels.clone())).build())
}
