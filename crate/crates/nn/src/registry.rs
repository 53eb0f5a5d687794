//! Flat registry of named weight tensors for a block or model instance.
//!
//! Trainable parameters and non-trainable buffers (batch-norm running
//! statistics) live in separate maps; iteration order is insertion order,
//! which fixes both initialization and update order.

use indexmap::IndexMap;

use detectlab_tensor::{Scalar, Tape, Tensor, Var, XorShiftRng};

use crate::error::{NnError, Result};

/// Momentum of the batch-norm running statistics:
/// `running <- (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct ParamRegistry<T: Scalar> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.buffers.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Total element count over registered trainable parameters.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn iter_params(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn iter_buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn iter_buffers_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.buffers.iter_mut()
    }

    /// Lifts every parameter onto the tape, as gradient leaves when
    /// `trainable` and as constants otherwise.
    pub fn leaves<'g>(&self, tape: &'g Tape<T>, trainable: bool) -> LeafMap<'g, T> {
        let mut map = IndexMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            let var = if trainable {
                tape.leaf_grad(t)
            } else {
                tape.constant(t)
            };
            map.insert(name.clone(), var);
        }
        LeafMap { map }
    }

    /// Folds training-mode batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) -> Result<()> {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::ONE - m;
        for u in updates {
            let rm = self.buffer_mut(&format!("{}.rm", u.name))?;
            for (r, b) in rm.data_mut().iter_mut().zip(&u.mean) {
                *r = keep * *r + m * *b;
            }
            let rv = self.buffer_mut(&format!("{}.rv", u.name))?;
            for (r, b) in rv.data_mut().iter_mut().zip(&u.var) {
                *r = keep * *r + m * *b;
            }
        }
        Ok(())
    }
}

/// Per-forward handles of every parameter on a tape.
pub struct LeafMap<'g, T: Scalar> {
    map: IndexMap<String, Var<'g, T>>,
}

impl<'g, T: Scalar> LeafMap<'g, T> {
    /// Builds a map from explicit (name, handle) pairs, e.g. when the caller
    /// manages the tape leaves itself.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var<'g, T>)>) -> Self {
        LeafMap {
            map: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'g, T>)> {
        self.map.iter()
    }
}

/// Batch statistics recorded by one batch-norm unit during a training
/// forward pass; `name` is the unit's buffer prefix.
#[derive(Debug, Clone)]
pub struct BnUpdate<T: Scalar> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// He-uniform initialization: uniform in `[-sqrt(6/fan_in), +sqrt(6/fan_in)]`.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut XorShiftRng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Conv weight `[cout, cin, kh, kw]` with He-uniform init (fan_in = cin*kh*kw).
pub fn conv_weight<T: Scalar>(
    cout: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    rng: &mut XorShiftRng,
) -> Tensor<T> {
    he_uniform(&[cout, cin, kh, kw], cin * kh * kw, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_sums_products_of_shapes() {
        let mut reg = ParamRegistry::<f32>::new();
        assert_eq!(reg.param_count(), 0);
        // one 1x1 conv, cin 8, cout 16, no bias
        reg.add_param("w", Tensor::zeros(&[16, 8, 1, 1])).unwrap();
        assert_eq!(reg.param_count(), 128);
        reg.add_param("b", Tensor::zeros(&[16])).unwrap();
        assert_eq!(reg.param_count(), 144);
        // buffers do not count
        reg.add_buffer("rm", Tensor::zeros(&[16])).unwrap();
        assert_eq!(reg.param_count(), 144);
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.add_param("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            reg.add_param("w", Tensor::zeros(&[2])),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn he_uniform_respects_bound_and_seed() {
        let mut rng = XorShiftRng::new(5);
        let w: Tensor<f64> = he_uniform(&[4, 3, 3, 3], 27, &mut rng);
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        let mut rng2 = XorShiftRng::new(5);
        let w2: Tensor<f64> = he_uniform(&[4, 3, 3, 3], 27, &mut rng2);
        assert_eq!(w, w2);
    }

    #[test]
    fn bn_update_folds_with_momentum() {
        let mut reg = ParamRegistry::<f64>::new();
        reg.add_buffer("cbs.bn.rm", Tensor::zeros(&[2])).unwrap();
        reg.add_buffer("cbs.bn.rv", Tensor::full(&[2], 1.0)).unwrap();
        reg.apply_bn_updates(&[BnUpdate {
            name: "cbs.bn".into(),
            mean: vec![1.0, 2.0],
            var: vec![3.0, 5.0],
        }])
        .unwrap();
        let rm = reg.buffer("cbs.bn.rm").unwrap();
        let rv = reg.buffer("cbs.bn.rv").unwrap();
        assert!((rm.data()[0] - 0.1).abs() < 1e-12);
        assert!((rm.data()[1] - 0.2).abs() < 1e-12);
        assert!((rv.data()[0] - (0.9 + 0.3)).abs() < 1e-12);
        assert!((rv.data()[1] - (0.9 + 0.5)).abs() < 1e-12);
    }
}
