use ndarray::Array2;
use rand::Rng;

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Array2<T>) -> ParamId {
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a matrix with entries drawn from U(-scale, scale).
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: (usize, usize), scale: f64, rng: &mut R) -> ParamId {
        let v = Array2::from_shape_simple_fn(shape, || {
            T::from(rng.gen_range(-scale..=scale)).expect("representable")
        });
        self.add(name, v)
    }

    pub fn add_constant(&mut self, name: &str, shape: (usize, usize), c: f64) -> ParamId {
        self.add(name, Array2::from_elem(shape, T::from(c).expect("representable")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Plain SGD: `p -= lr * g`.
    pub fn sgd_step(&mut self, grads: &[(ParamId, Array2<T>)], lr: f64) {
        let lr = T::from(lr).expect("representable");
        for (id, g) in grads {
            self.values[id.0].scaled_add(-lr, g);
        }
    }
}

/// Euclidean norm of all gradients taken together.
pub fn global_norm<T: Real>(grads: &[(ParamId, Array2<T>)]) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [(ParamId, Array2<T>)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = T::from(max_norm / norm).expect("representable");
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}
