//! JSON document for fitted models (also used for simulation ground truth).

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{FitConfig, FittedModel, Params};
use crate::error::{Error, Result};
use crate::models::{Family, SignConvention};
use crate::scalar::Scalar;
use crate::tensor::QualityLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry<F> {
    pub a: Vec<F>,
    pub b: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct ModelFile<F> {
    pub family: String,
    pub dim: usize,
    pub q: F,
    pub convention: SignConvention,
    pub lr: F,
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub subjects: IndexMap<String, Vec<F>>,
    pub items: IndexMap<String, ItemEntry<F>>,
    pub val_auc: Option<F>,
    pub train_nll: F,
    #[serde(default)]
    pub initial_nll: F,
    pub epochs_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<IndexMap<String, QualityLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_choices: Option<usize>,
}

impl<F: Scalar> From<&FittedModel<F>> for ModelFile<F> {
    fn from(m: &FittedModel<F>) -> Self {
        let c = &m.config;
        let p = m.params();
        ModelFile {
            family: c.family.name().to_owned(),
            dim: c.family.subject_dim(),
            q: c.q,
            convention: c.convention,
            lr: c.learning_rate,
            seed: c.seed,
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
            patience: c.patience,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            subjects: m
                .subject_ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), p.theta(i).to_vec()))
                .collect(),
            items: m
                .item_ids()
                .iter()
                .enumerate()
                .map(|(j, id)| {
                    (
                        id.clone(),
                        ItemEntry {
                            a: p.a(j).to_vec(),
                            b: p.b(j).to_vec(),
                        },
                    )
                })
                .collect(),
            val_auc: m.val_auc,
            train_nll: m.train_nll,
            initial_nll: m.initial_nll,
            epochs_run: m.epochs_run,
            labels: None,
            n_choices: None,
        }
    }
}

impl<F: Scalar> ModelFile<F> {
    pub fn family(&self) -> Result<Family> {
        match self.family.as_str() {
            "mirt" => Ok(Family::Mirt { dim: self.dim }),
            other => other.parse(),
        }
    }

    pub fn into_model(self) -> Result<FittedModel<F>> {
        let family = self.family()?;
        let config = FitConfig {
            family,
            q: self.q,
            convention: self.convention,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        let mut p = Params::zeros(family, self.subjects.len(), self.items.len());
        let check = |what: &str, id: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{what} of `{id}` has {got} components, expected {want}"
                )))
            }
        };
        for (i, (id, theta)) in self.subjects.iter().enumerate() {
            check("theta", id, theta.len(), family.subject_dim())?;
            p.theta_mut(i).copy_from_slice(theta);
        }
        for (j, (id, e)) in self.items.iter().enumerate() {
            check("a", id, e.a.len(), family.item_a_dim())?;
            check("b", id, e.b.len(), family.item_b_dim())?;
            p.a_mut(j).copy_from_slice(&e.a);
            p.b_mut(j).copy_from_slice(&e.b);
        }
        let mut m = FittedModel::from_parts(
            config,
            self.subjects.into_keys().collect(),
            self.items.into_keys().collect(),
            p,
        )?;
        m.val_auc = self.val_auc;
        m.train_nll = self.train_nll;
        m.initial_nll = self.initial_nll;
        m.epochs_run = self.epochs_run;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

impl<F: Scalar> FittedModel<F> {
    pub fn to_file(&self) -> ModelFile<F> {
        ModelFile::from(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelFile::load(path)?.into_model()
    }
}
