use std::collections::BTreeMap;

use super::{GraphError, Tensor};

/// Adaptive-moment hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MomentState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

/// Named trainable tensors plus per-parameter optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    values: BTreeMap<String, Tensor>,
    state: BTreeMap<String, MomentState>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter, resetting its optimizer state.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let n = value.len();
        self.state.insert(name.clone(), MomentState { first: vec![0.0; n], second: vec![0.0; n], steps: 0 });
        self.values.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn values(&self) -> &BTreeMap<String, Tensor> {
        &self.values
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn steps(&self, name: &str) -> Option<u64> {
        self.state.get(name).map(|s| s.steps)
    }

    /// Merges another store's parameters into this one.
    pub fn extend(&mut self, other: ParameterStore) {
        self.values.extend(other.values);
        self.state.extend(other.state);
    }

    /// One bias-corrected adaptive-moment update. `grads` must contain exactly
    /// the parameter names of the store.
    pub fn optimizer_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<(), GraphError> {
        for name in self.values.keys() {
            let g = grads.get(name).ok_or_else(|| GraphError::UnknownParameter(name.clone()))?;
            if g.shape() != self.values[name].shape() {
                return Err(GraphError::ShapeMismatch {
                    node: 0,
                    op: "optimizer_step",
                    detail: format!(
                        "gradient for `{name}` has shape {:?}, parameter has {:?}",
                        g.shape(),
                        self.values[name].shape()
                    ),
                });
            }
        }
        if let Some(extra) = grads.keys().find(|k| !self.values.contains_key(*k)) {
            return Err(GraphError::UnknownParameter(extra.clone()));
        }
        for (name, value) in &mut self.values {
            let g = grads[name].data();
            let st = self.state.get_mut(name).expect("state tracks values");
            st.steps += 1;
            let bc1 = 1.0 - cfg.beta1.powi(st.steps as i32);
            let bc2 = 1.0 - cfg.beta2.powi(st.steps as i32);
            for (i, p) in value.data_mut().iter_mut().enumerate() {
                st.first[i] = cfg.beta1 * st.first[i] + (1.0 - cfg.beta1) * g[i];
                st.second[i] = cfg.beta2 * st.second[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = st.first[i] / bc1;
                let v_hat = st.second[i] / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::vector(vec![1.0, -2.0]));
        s.optimizer_step(&grads(&[("w", Tensor::zeros(&[2]))]), &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.steps("w"), Some(1));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::scalar(1.0));
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        s.optimizer_step(&grads(&[("p", Tensor::scalar(1.0))]), &cfg).unwrap();
        // m_hat = v_hat = 1 on the first step
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert_eq!(s.get("p").unwrap().data()[0], expected);
        assert!((s.get("p").unwrap().data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::scalar(0.0));
        s.insert("b", Tensor::scalar(0.0));
        let err = s.optimizer_step(&grads(&[("a", Tensor::scalar(1.0))]), &AdamConfig::default()).unwrap_err();
        assert_eq!(err, GraphError::UnknownParameter("b".into()));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = ParameterStore::new();
            s.insert("p", Tensor::vector(vec![0.3, -0.7, 1.1]));
            for k in 0..20 {
                let g = Tensor::vector(vec![(k as f64).sin(), 0.1 * k as f64, -0.5]);
                s.optimizer_step(&grads(&[("p", g)]), &AdamConfig::default()).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }
}
