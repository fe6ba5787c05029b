use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{FusionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MOMENT1: &str = "#adam_m";
const MOMENT2: &str = "#adam_v";

/// Everything needed to rebuild a model and resume training: the config,
/// the optimiser step count and named tensors (parameters, batchnorm buffers
/// and Adam moments, the latter suffixed `#adam_m` / `#adam_v`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub adam_step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl FusionModel {
    pub fn to_state(&self) -> ModelState {
        let mut tensors = Vec::new();
        for id in self.params.ids() {
            tensors.push((String::from(self.params.name(id)), self.params.value(id).clone()));
        }
        for (name, t) in self.buffer_names.iter().zip(&self.buffers) {
            tensors.push((name.clone(), t.clone()));
        }
        for id in self.params.ids() {
            let (m, v) = self.params.adam_moments(id);
            let name = self.params.name(id);
            tensors.push((format!("{name}{MOMENT1}"), m.clone()));
            tensors.push((format!("{name}{MOMENT2}"), v.clone()));
        }
        ModelState {
            config: self.config.clone(),
            adam_step: self.params.step(),
            tensors,
        }
    }

    /// Rebuilds a model, checking that every expected tensor is present with
    /// the shape the config implies. Missing Adam moments default to zero.
    pub fn from_state(state: ModelState) -> Result<Self> {
        let mut model = FusionModel::new(state.config, 0)?;
        let mut by_name: alloc::collections::BTreeMap<String, Tensor> = alloc::collections::BTreeMap::new();
        for (name, t) in state.tensors {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Data(format!("duplicate tensor {name}")));
            }
        }
        fn take(
            map: &mut alloc::collections::BTreeMap<String, Tensor>,
            name: &str,
            like: &Tensor,
            required: bool,
        ) -> Result<Option<Tensor>> {
            match map.remove(name) {
                Some(t) if t.shape() == like.shape() => Ok(Some(t)),
                Some(t) => Err(Error::Shape(format!(
                    "tensor {name}: config implies {:?}, found {:?}",
                    like.shape(),
                    t.shape()
                ))),
                None if required => Err(Error::Data(format!("missing tensor {name}"))),
                None => Ok(None),
            }
        }
        let ids: Vec<_> = model.params.ids().collect();
        for &id in &ids {
            let name = String::from(model.params.name(id));
            let t = take(&mut by_name, &name, model.params.value(id), true)?.expect("required");
            *model.params.value_mut(id) = t;
            let (m0, _) = model.params.adam_moments(id);
            let m = take(&mut by_name, &format!("{name}{MOMENT1}"), &m0.clone(), false)?;
            let (_, v0) = model.params.adam_moments(id);
            let v = take(&mut by_name, &format!("{name}{MOMENT2}"), &v0.clone(), false)?;
            let (mm, vm) = model.params.adam_moments_mut(id);
            if let Some(m) = m {
                *mm = m;
            }
            if let Some(v) = v {
                *vm = v;
            }
        }
        for i in 0..model.buffers.len() {
            let name = model.buffer_names[i].clone();
            model.buffers[i] = take(&mut by_name, &name, &model.buffers[i], true)?.expect("required");
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::Data(format!("unexpected tensor {name}")));
        }
        model.params.set_step(state.adam_step);
        Ok(model)
    }
}
