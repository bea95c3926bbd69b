//! Adam with bias correction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one [`ParamSet`], keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: IndexMap<String, Vec<f32>>,
    pub second: IndexMap<String, Vec<f32>>,
}

impl AdamState {
    /// Zeroed moments aligned with the trainable parameters of `params`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let mut first = IndexMap::new();
        let mut second = IndexMap::new();
        for (name, t) in params.trainable() {
            first.insert(name.to_string(), vec![0.0; t.len()]);
            second.insert(name.to_string(), vec![0.0; t.len()]);
        }
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    /// One update of every trainable parameter that holds a gradient.
    pub fn step(&mut self, params: &mut ParamSet, lr: f32) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::contract("adam_step", format!("lr must be > 0, got {lr}")));
        }
        for (name, p) in params.iter() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            match self.first.get(name) {
                Some(m) if m.len() == p.tensor.len() => {}
                Some(m) => {
                    return Err(Error::contract(
                        "adam_step",
                        format!("state for {name} has {} slots, parameter has {}", m.len(), p.tensor.len()),
                    ))
                }
                None => {
                    return Err(Error::contract("adam_step", format!("no state for {name}")))
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        for (name, p) in params.iter_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let Some(grad) = p.tensor.grad.take() else {
                continue;
            };
            let m = self.first.get_mut(name).expect("checked");
            let v = self.second.get_mut(name).expect("checked");
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                data[i] -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }

    /// Flattened `(name, tensor)` view for checkpointing: `m.<param>`, `v.<param>`, `step`.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.first.len() + 1);
        for (name, m) in &self.first {
            out.push((format!("m.{name}"), Tensor::new([m.len()], m.clone()).expect("1-d")));
        }
        for (name, v) in &self.second {
            out.push((format!("v.{name}"), Tensor::new([v.len()], v.clone()).expect("1-d")));
        }
        out.push(("step".into(), step_tensor(self.step)));
        out
    }

    /// Restores moments saved by [`AdamState::to_tensors`] into a state aligned with `params`.
    pub fn restore(
        params: &ParamSet,
        config: AdamConfig,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let mut state = Self::new(params, config);
        let mut problems = Vec::new();
        for (kind, map) in [("m", &mut state.first), ("v", &mut state.second)] {
            for (name, buf) in map.iter_mut() {
                match lookup(&format!("{kind}.{name}")) {
                    Some(t) if t.len() == buf.len() => buf.copy_from_slice(t.data()),
                    Some(t) => problems.push(format!(
                        "{kind}.{name}: {} slots, expected {}",
                        t.len(),
                        buf.len()
                    )),
                    None => problems.push(format!("missing {kind}.{name}")),
                }
            }
        }
        match lookup("step") {
            Some(t) => state.step = decode_step(&t)?,
            None => problems.push("missing step".into()),
        }
        if !problems.is_empty() {
            return Err(Error::Import(problems));
        }
        Ok(state)
    }
}

/// Step counters are stored as two 24-bit halves so they survive the f32 container exactly.
fn step_tensor(step: u64) -> Tensor {
    let lo = (step & 0xff_ffff) as f32;
    let hi = (step >> 24) as f32;
    Tensor::new([2], vec![lo, hi]).expect("2 elements")
}

fn decode_step(t: &Tensor) -> Result<u64> {
    match t.data() {
        [lo, hi] if *lo >= 0.0 && *hi >= 0.0 => Ok((*hi as u64) << 24 | (*lo as u64)),
        _ => Err(Error::Corrupt(format!("bad Adam step tensor {:?}", t.data()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::full([3], value), ParamKind::Trainable);
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = one_param(0.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        p.get_mut("w").unwrap().accumulate_grad(&[0.0; 3]).unwrap();
        s.step(&mut p, 1e-3).unwrap();
        assert_eq!(p.tensor("w").data(), &[0.5; 3]);
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        for g in [0.3f32, -2.0, 1e-3] {
            let mut p = one_param(1.0);
            let mut s = AdamState::new(&p, AdamConfig::default());
            p.get_mut("w").unwrap().accumulate_grad(&[g; 3]).unwrap();
            s.step(&mut p, 1e-2).unwrap();
            let expected = 1.0 - 1e-2 * g.signum() * (g.abs() / (g.abs() + 1e-8));
            for &v in p.tensor("w").data() {
                assert!((v - expected).abs() < 1e-6, "g={g}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn constant_positive_gradient_descends_each_step() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..2 {
            p.zero_grad();
            p.get_mut("w").unwrap().accumulate_grad(&[0.7; 3]).unwrap();
            s.step(&mut p, 1e-3).unwrap();
            let now = p.tensor("w").data()[0];
            assert!(now < last);
            last = now;
        }
        assert_eq!(s.step, 2);
    }

    #[test]
    fn misaligned_state_is_rejected() {
        let p = one_param(0.0);
        let s = AdamState::new(&p, AdamConfig::default());
        let mut other = ParamSet::new();
        other.insert("w", Tensor::zeros([4]), ParamKind::Trainable);
        let mut s2 = s.clone();
        assert!(matches!(s2.step(&mut other, 1e-3), Err(Error::Contract { .. })));
        assert_eq!(s2.step, 0, "step counter must not advance on error");
    }

    #[test]
    fn step_counter_round_trips_through_f32() {
        for step in [0u64, 1, 100_000, (1 << 24) + 3, 1 << 40] {
            assert_eq!(decode_step(&step_tensor(step)).unwrap(), step);
        }
    }
}
