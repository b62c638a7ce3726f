//! Single-layer per-task predictors used during uptraining.

use std::collections::BTreeMap;

use candle_core::Tensor;

use super::nn::Linear;
use super::params::ParamPath;
use super::{ModelConfig, Task};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Heads {
    heads: BTreeMap<Task, Linear>,
}

impl Heads {
    pub fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig, tasks: &[Task]) -> Result<Self> {
        let mut heads = BTreeMap::new();
        for &task in tasks {
            let out = if task == Task::Mlm { cfg.codebook_size } else { cfg.d_model };
            heads.insert(task, Linear::new(&mut p.pp(task.key()), cfg.d_model, out)?);
        }
        Ok(Self { heads })
    }

    pub fn tasks(&self) -> impl Iterator<Item = Task> + '_ {
        self.heads.keys().copied()
    }

    pub fn has(&self, task: Task) -> bool {
        self.heads.contains_key(&task)
    }

    /// Per-frame predictions: `[B,T,d]`, or `[B,T,codebook]` for MLM.
    pub fn predict(&self, task: Task, states: &Tensor) -> Result<Tensor> {
        self.heads
            .get(&task)
            .ok_or_else(|| Error::Config(format!("task {task} has no registered head")))?
            .forward(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn heads_are_separate_and_shaped() {
        let cfg = ModelConfig { d_model: 8, n_heads: 2, codebook_size: 5, ..Default::default() };
        let mut store = ParamStore::seeded(0, DType::F32);
        let heads = Heads::new(&mut store.root().pp("heads"), &cfg, &[Task::Acp, Task::Vcp, Task::Mlm]).unwrap();
        assert_eq!(store.names().filter(|n| n.starts_with("heads.acp.")).count(), 2);
        assert_eq!(store.names().filter(|n| n.starts_with("heads.vcp.")).count(), 2);
        let x = Tensor::ones((1, 3, 8), DType::F32, &Device::Cpu).unwrap();
        let a = heads.predict(Task::Acp, &x).unwrap();
        let v = heads.predict(Task::Vcp, &x).unwrap();
        assert_ne!(a.to_vec3::<f32>().unwrap(), v.to_vec3::<f32>().unwrap());
        assert_eq!(heads.predict(Task::Mlm, &x).unwrap().dims(), &[1, 3, 5]);
        assert!(matches!(heads.predict(Task::Mask, &x), Err(Error::Config(_))));
    }
}
