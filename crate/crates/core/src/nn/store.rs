use ndarray::{ArrayView2, ArrayViewMut2};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All tensors of a model in one contiguous buffer. Every tensor is a
/// row-major matrix; vectors are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate tensor name {name}");
        let offset = self.data.len();
        self.data.resize(offset + rows * cols, 0.0);
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            offset,
        });
        TensorId(self.specs.len() - 1)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.specs.iter().position(|s| s.name == name).map(TensorId)
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> {
        (0..self.specs.len()).map(TensorId)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.specs == other.specs
    }

    pub fn slice(&self, id: TensorId) -> &[f64] {
        let s = &self.specs[id.0];
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn slice_mut(&mut self, id: TensorId) -> &mut [f64] {
        let s = &self.specs[id.0];
        let range = s.offset..s.offset + s.len();
        &mut self.data[range]
    }

    pub fn view(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let s = &self.specs[id.0];
        ArrayView2::from_shape((s.rows, s.cols), self.slice(id)).expect("tensor shape")
    }

    pub fn view_mut(&mut self, id: TensorId) -> ArrayViewMut2<'_, f64> {
        let (rows, cols) = {
            let s = &self.specs[id.0];
            (s.rows, s.cols)
        };
        ArrayViewMut2::from_shape((rows, cols), self.slice_mut(id)).expect("tensor shape")
    }

    /// `self += other * scale`, elementwise over the whole buffer.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.specs
            .iter()
            .zip(self.ids())
            .find(|(_, id)| self.slice(*id).iter().any(|v| !v.is_finite()))
            .map(|(s, _)| s.name.as_str())
    }

    /// Replaces the buffer contents; the length must match.
    pub fn set_data(&mut self, data: &[f64]) {
        assert_eq!(data.len(), self.data.len());
        self.data.copy_from_slice(data);
    }
}
