use super::{AutodiffError, Gradients, Real, Result, Tape, Var};

/// Dense row-major array that lives outside any tape.
///
/// A tensor takes part in differentiation only when it is bound to a tape
/// (see [`ParamStore::bind`]); gradients are then accumulated back into
/// `grad`. A tensor with `requires_grad == false` never receives gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != values.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![T::zero(); numel])
    }

    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        if !self.requires_grad {
            return;
        }
        let n = self.values.len();
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (a, b) in g.iter_mut().zip(delta) {
            *a += *b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor under a unique name. The tensor is marked trainable.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(AutodiffError::Invalid {
                op: "param_store",
                msg: format!("duplicate parameter name `{name}`"),
            });
        }
        self.names.push(name);
        self.tensors.push(tensor.requiring_grad());
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.shape().to_vec(), t.values().to_vec(), t.requires_grad()))
            .collect::<Result<Vec<_>>>()
            .expect("stored tensors have valid shapes");
        Bound { vars }
    }

    /// Records every parameter as a constant: forward-only evaluation.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.shape().to_vec(), t.values().to_vec()))
            .collect::<Result<Vec<_>>>()
            .expect("stored tensors have valid shapes");
        Bound { vars }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, bound: &Bound) {
        for (tensor, var) in self.tensors.iter_mut().zip(bound.vars()) {
            if let Some(g) = grads.get(*var) {
                tensor.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm.is_finite() && norm > max_norm && norm > 0.0 {
            let scale = T::lit(max_norm / norm);
            for t in &mut self.tensors {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn detached_tensor_never_receives_gradient() {
        let mut t = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0]);
        assert!(t.grad().is_none());
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .insert("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        store.get_mut(id).accumulate_grad(&[30.0, 40.0]);
        let before = store.clip_grad_norm(10.0);
        assert_eq!(before, 50.0);
        assert!((store.grad_norm() - 10.0).abs() < 1e-12);
        assert!(store.insert("w", Tensor::zeros(vec![1]).unwrap()).is_err());
    }
}
