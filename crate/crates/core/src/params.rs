//! Uniform access to the learnable tensors of a model, used by the optimiser,
//! the checkpoint container and gradient checks.

/// Read-only view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether weight decay applies (projection matrices only).
    pub decay: bool,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    pub data: &'a mut [f64],
}

/// Implemented by every parameter struct. Both methods must list tensors in
/// the same fixed order.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every value, in tensor order.
    fn flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += other`, element-wise; panics on layout mismatch.
    fn add_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "tensor layout mismatch");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.data.len(), s.data.len(), "tensor {} size mismatch", d.name);
            for (x, y) in d.data.iter_mut().zip(s.data) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Helper for building tensor lists from `(name, shape, decay, slice)` parts.
pub(crate) fn tref<'a>(name: String, shape: Vec<usize>, decay: bool, data: &'a [f64]) -> TensorRef<'a> {
    TensorRef {
        name,
        shape,
        decay,
        data,
    }
}

pub(crate) fn tmut<'a>(name: String, shape: Vec<usize>, decay: bool, data: &'a mut [f64]) -> TensorMut<'a> {
    TensorMut {
        name,
        shape,
        decay,
        data,
    }
}
