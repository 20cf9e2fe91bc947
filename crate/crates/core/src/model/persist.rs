//! JSON model files.
//!
//! Layout: `{version, pooler, dims{D,C,h1,h2}, hyper{..}, weights{..}}`,
//! with matrices as nested row-major arrays. Floats are written in
//! shortest round-trip form, so save → load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, HyperParams, ImportanceMlp, Linear, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pooling::Pooler;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: &str = "adascan-model/1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct ModelFile<S> {
    version: String,
    pooler: Pooler,
    dims: Dims,
    hyper: HyperParams,
    weights: Weights<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct Weights<S> {
    imp_w1: Vec<Vec<S>>,
    imp_b1: Vec<S>,
    imp_w2: Vec<Vec<S>>,
    imp_b2: Vec<S>,
    imp_w3: Vec<Vec<S>>,
    imp_b3: Vec<S>,
    cls_w: Vec<Vec<S>>,
    cls_b: Vec<S>,
}

fn linear<S: Scalar>(w: &[Vec<S>], b: &[S]) -> Result<Linear<S>> {
    Ok(Linear {
        weight: Tensor::from_rows(w)?,
        bias: Tensor::new(vec![b.len()], b.to_vec())?,
    })
}

impl<S: Scalar> ModelParams<S> {
    pub fn to_json(&self) -> Result<String> {
        let [l1, l2, l3] = &self.imp.layers;
        let file = ModelFile {
            version: self.version.clone(),
            pooler: self.pooler,
            dims: self.dims,
            hyper: self.hyper.clone(),
            weights: Weights {
                imp_w1: l1.weight.to_rows(),
                imp_b1: l1.bias.data().to_vec(),
                imp_w2: l2.weight.to_rows(),
                imp_b2: l2.bias.data().to_vec(),
                imp_w3: l3.weight.to_rows(),
                imp_b3: l3.bias.data().to_vec(),
                cls_w: self.classifier.weight.to_rows(),
                cls_b: self.classifier.bias.data().to_vec(),
            },
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<S> = serde_json::from_str(text)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version '{}' (expected '{FORMAT_VERSION}')",
                file.version
            )));
        }
        let w = &file.weights;
        let params = ModelParams {
            version: file.version,
            pooler: file.pooler,
            dims: file.dims,
            hyper: file.hyper,
            imp: ImportanceMlp {
                layers: [
                    linear(&w.imp_w1, &w.imp_b1)?,
                    linear(&w.imp_w2, &w.imp_b2)?,
                    linear(&w.imp_w3, &w.imp_b3)?,
                ],
            },
            classifier: linear(&w.cls_w, &w.cls_b)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
