use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Shape, Tensor};

/// How a freshly registered parameter tensor is filled.
pub enum Init<'r> {
    /// Kaiming-uniform fan-in scaling adjusted for the LeakyReLU slope;
    /// biases zero. One shared stream, consumed in registration order.
    Kaiming { rng: &'r mut ChaCha8Rng, slope: f64 },
    /// Shape-only registration (checkpoint loading, parameter counting).
    Zeros,
}

impl Init<'_> {
    fn weight<T: Scalar>(&mut self, shape: Shape, fan_in: usize) -> Tensor<T> {
        match self {
            Init::Kaiming { rng, slope } => {
                let gain_sq = 2.0 / (1.0 + *slope * *slope);
                let bound = (3.0 * gain_sq / fan_in as f64).sqrt();
                Tensor::rand_uniform(shape, -bound, bound, rng)
            }
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

/// Ordered, named collection of learnable tensors.
///
/// Names are hierarchical (`igaf.0.rgb_fwf.fe.1.conv1.weight`) and iteration
/// follows registration order, so equal configs yield identical layouts and
/// equal (config, seed) pairs yield bitwise-identical values.
#[derive(Debug)]
pub struct ParamStore<T: Scalar> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<T>) {
        let mut tensor = tensor;
        tensor.requires_grad = true;
        let prev = self.params.insert(name.to_string(), tensor);
        assert!(prev.is_none(), "duplicate parameter name '{name}'");
    }

    pub(crate) fn register_weight(&mut self, name: &str, shape: Shape, fan_in: usize, init: &mut Init) {
        self.register(name, init.weight(shape, fan_in));
    }

    pub(crate) fn register_bias(&mut self, name: &str, c_out: usize) {
        self.register(name, Tensor::zeros(Shape::new(1, c_out, 1, 1)));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.register(name, t.cast());
        }
        out
    }

    pub fn set_all_zero(&mut self) {
        for (_, t) in self.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copies gradients computed on `graph` back onto the store tensors.
    pub fn absorb_grads(&mut self, graph: &Graph<T>, bound: &BoundParams) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let id = bound.get(name)?;
            let g = graph
                .grad(id)
                .ok_or_else(|| Error::MissingGradient { name: name.clone() })?;
            t.grad = Some(g.to_vec());
        }
        Ok(())
    }
}

/// Name -> graph-leaf mapping for one forward pass.
pub struct BoundParams {
    map: HashMap<String, NodeId>,
}

impl BoundParams {
    /// Registers every store tensor as a requires-grad leaf on `graph`.
    pub fn bind<T: Scalar>(graph: &mut Graph<T>, store: &ParamStore<T>) -> Result<Self> {
        let mut map = HashMap::with_capacity(store.len());
        for (name, t) in store.iter() {
            map.insert(name.to_string(), graph.leaf(t)?);
        }
        Ok(BoundParams { map })
    }

    /// Binds pre-existing graph nodes by name (gradient-check harness).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        BoundParams { map: pairs.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter '{name}' not bound to graph")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn registration_order_is_iteration_order() {
        let mut store = ParamStore::<f32>::new();
        store.register("b.weight", Tensor::zeros(Shape::new(1, 1, 1, 1)));
        store.register("a.weight", Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["b.weight", "a.weight"]);
    }

    #[test]
    fn kaiming_draws_are_bounded_and_deterministic() {
        let shape = Shape::new(8, 4, 3, 3);
        let fan_in = 4 * 9;
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut init = Init::Kaiming { rng: &mut rng, slope: 0.1 };
            init.weight::<f32>(shape, fan_in)
        };
        let a = draw(3);
        let b = draw(3);
        assert_eq!(a.data(), b.data());
        let bound = (3.0 * 2.0 / (1.0 + 0.01) / fan_in as f64).sqrt() as f32;
        assert!(a.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut store = ParamStore::<f32>::new();
        store.register("w", Tensor::zeros(Shape::scalar()));
        store.register("w", Tensor::zeros(Shape::scalar()));
    }
}
