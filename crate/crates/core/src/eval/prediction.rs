use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{write_json, write_stat_csv, StatRow};
use crate::error::{Error, Result};
use crate::models::Family;
use crate::scalar::Scalar;
use crate::seed;
use crate::simulate::{inject_low_quality, sample_responses, GroundTruth, LowQualityMix};
use crate::tensor::Format;
use crate::training::{fit, FitConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOptions<F> {
    pub families: Vec<Family>,
    /// Low-quality fractions to inject before sampling responses.
    pub levels: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub fit: FitConfig<F>,
    pub mix: LowQualityMix,
    pub val_frac: f64,
    pub test_frac: f64,
    pub density: f64,
    pub formats: Vec<Format>,
    /// Fit single-format families with one item per (item, format) pair.
    pub expand_classic: bool,
}

impl<F: Scalar> Default for PredictionOptions<F> {
    fn default() -> Self {
        PredictionOptions {
            families: vec![Family::Irt, Family::M2irt, Family::M3irt],
            levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            replicas: 10,
            seed: 0,
            fit: FitConfig::default(),
            mix: LowQualityMix::default(),
            val_frac: 0.1,
            test_frac: 0.1,
            density: 1.0,
            formats: Format::ALL.to_vec(),
            expand_classic: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionOutcome {
    pub replica: usize,
    pub level: f64,
    pub family: String,
    pub test_auc: f64,
    pub val_auc: Option<f64>,
    pub epochs_run: usize,
    /// Every fitted parameter stayed inside its box.
    pub in_bounds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionReport {
    pub levels: Vec<f64>,
    pub replicas: usize,
    pub auc: Vec<StatRow>,
    pub outcomes: Vec<PredictionOutcome>,
}

impl PredictionReport {
    pub fn row(&self, family: &str, level: f64) -> Option<&StatRow> {
        self.auc.iter().find(|r| r.method == family && r.fraction_or_level == level)
    }

    /// Writes `prediction_auc.csv` and `prediction.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [dir.join("prediction_auc.csv"), dir.join("prediction.json")];
        write_stat_csv(&files[0], &self.auc)?;
        write_json(&files[1], self)?;
        Ok(files.to_vec())
    }
}

/// Held-out response prediction under growing contamination: for every
/// level and replica, inject low-quality items, sample responses, mask
/// validation/test cells, fit each family and score the test cells.
pub fn prediction_experiment<F: Scalar>(gt: &GroundTruth<F>, opts: &PredictionOptions<F>) -> Result<PredictionReport> {
    if opts.replicas == 0 {
        return Err(Error::invalid("replicas must be at least 1"));
    }
    if opts.families.is_empty() {
        return Err(Error::Empty("family list"));
    }
    if opts.levels.is_empty() {
        return Err(Error::Empty("contamination levels"));
    }
    if !(opts.test_frac > 0.0) {
        return Err(Error::invalid("test fraction must be positive"));
    }
    let jobs: Vec<(usize, usize)> = (0..opts.levels.len())
        .flat_map(|l| (0..opts.replicas).map(move |r| (l, r)))
        .collect();
    let results: Vec<Vec<PredictionOutcome>> = jobs
        .par_iter()
        .map(|&(l, r)| run_one(gt, opts, l, r))
        .collect::<Result<_>>()?;
    let outcomes: Vec<PredictionOutcome> = results.into_iter().flatten().collect();
    let mut auc = Vec::new();
    for fam in &opts.families {
        let name = fam.to_string();
        for &level in &opts.levels {
            let v: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.family == name && o.level == level)
                .map(|o| o.test_auc)
                .collect();
            auc.push(StatRow::from_values(&name, level, &v));
        }
    }
    Ok(PredictionReport {
        levels: opts.levels.clone(),
        replicas: opts.replicas,
        auc,
        outcomes,
    })
}

fn run_one<F: Scalar>(gt: &GroundTruth<F>, opts: &PredictionOptions<F>, l: usize, r: usize) -> Result<Vec<PredictionOutcome>> {
    let level = opts.levels[l];
    let path = |stream: u64| seed::derive(opts.seed, &[stream, l as u64, r as u64]);
    let pool = inject_low_quality(gt, level, opts.mix, path(seed::STREAM_INJECT))?;
    let t = sample_responses(&pool, &opts.formats, opts.density, path(seed::STREAM_RESPONSES))?;
    let expand = opts.expand_classic && opts.families.iter().any(|f| f.is_classic());
    // the same cells are held out for every family; with expansion the
    // draw keeps each (item, format) pair in training
    let (parts, expanded) = if expand {
        let e = t.expand_formats();
        let parts = e.mask_assignment(opts.val_frac, opts.test_frac, path(seed::STREAM_MASK))?;
        let split = e.partition(&parts)?;
        (parts, Some(split))
    } else {
        (t.mask_assignment(opts.val_frac, opts.test_frac, path(seed::STREAM_MASK))?, None)
    };
    let (train, val, test) = t.partition(&parts)?;
    let mut out = Vec::with_capacity(opts.families.len());
    for (k, &family) in opts.families.iter().enumerate() {
        let (train, val, test) = match &expanded {
            Some((a, b, c)) if family.is_classic() => (a, b, c),
            _ => (&train, &val, &test),
        };
        let cfg = FitConfig {
            family,
            seed: seed::derive(path(seed::STREAM_INIT), &[k as u64]),
            ..opts.fit.clone()
        };
        let model = fit(train, val, &cfg)?;
        let test_auc = model
            .auc_on(test)?
            .ok_or(Error::Undefined("test AUC needs both classes"))?;
        out.push(PredictionOutcome {
            replica: r,
            level,
            family: family.to_string(),
            test_auc: test_auc.as_f64(),
            val_auc: model.val_auc.map(|x| x.as_f64()),
            epochs_run: model.epochs_run,
            in_bounds: model.params().in_bounds(cfg.q),
        });
    }
    Ok(out)
}
