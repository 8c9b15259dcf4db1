use ndarray::Array2;

use crate::autodiff::ParamId;
use crate::Scalar;

/// Whether a tensor is optimised or only carried along (batch-norm
/// running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Buffer,
}

impl TensorKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            TensorKind::Weight => 0,
            TensorKind::Buffer => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TensorKind::Weight),
            1 => Some(TensorKind::Buffer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub kind: TensorKind,
    pub value: Array2<T>,
}

/// Named tensors addressed by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, kind: TensorKind, value: Array2<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate tensor name {name}");
        self.tensors.push(Tensor { name, kind, value });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.tensors[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.tensors[id].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter()
    }

    /// Ids of optimised tensors.
    pub fn weights(&self) -> Vec<ParamId> {
        (0..self.tensors.len())
            .filter(|&i| self.tensors[i].kind == TensorKind::Weight)
            .collect()
    }

    /// Number of scalar weights (buffers excluded).
    pub fn n_weight_scalars(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind == TensorKind::Weight)
            .map(|t| t.value.len())
            .sum()
    }

    /// Element-wise conversion to another float width.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    kind: t.kind,
                    value: t.value.mapv(|v| U::of(v.f64())),
                })
                .collect(),
        }
    }
}
