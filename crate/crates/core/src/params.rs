//! Flat parameter storage with a named-view directory.
//!
//! Every learnable tensor of a model lives in one contiguous buffer. Views
//! never overlap and the buffer never changes length after construction, so
//! optimizer state can be kept as plain arrays congruent with [`ParamStore::data`].

use std::collections::HashMap;

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Shape collapsed to (rows, cols); rank-1 tensors become row vectors.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F = f32> {
    data: Vec<F>,
    views: Vec<ParamView>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            data: Vec::new(),
            views: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends a named tensor. Panics on duplicate names or a value/shape mismatch,
    /// both of which are construction bugs.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<F>) -> usize {
        let name = name.into();
        let len: usize = shape.iter().product();
        assert_eq!(values.len(), len, "values for {name} do not match shape {shape:?}");
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.views.len();
        self.views.push(ParamView {
            name: name.clone(),
            offset: self.data.len(),
            shape: shape.to_vec(),
            trainable: true,
        });
        self.data.extend(values);
        self.index.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn view(&self, id: usize) -> &ParamView {
        &self.views[id]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> &[F] {
        let id = self.id(name).unwrap_or_else(|e| panic!("{e}"));
        self.slice(id)
    }

    pub fn slice(&self, id: usize) -> &[F] {
        &self.data[self.views[id].range()]
    }

    pub fn slice_mut(&mut self, id: usize) -> &mut [F] {
        let range = self.views[id].range();
        &mut self.data[range]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [F] {
        let id = self.id(name).unwrap_or_else(|e| panic!("{e}"));
        self.slice_mut(id)
    }

    /// Sets the trainable flag on every view whose name starts with `prefix`.
    /// Returns how many views matched.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for v in self.views.iter_mut().filter(|v| v.name.starts_with(prefix)) {
            v.trainable = trainable;
            n += 1;
        }
        n
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for v in &mut self.views {
            v.trainable = trainable;
        }
    }

    /// Per-element trainable mask, congruent with [`Self::data`].
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for v in &self.views {
            if v.trainable {
                mask[v.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
            views: self.views.clone(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds every tensor of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore<F>) {
        for v in &other.views {
            let id = self.push(format!("{prefix}{}", v.name), &v.shape, other.slice_id(v).to_vec());
            self.views[id].trainable = v.trainable;
        }
    }

    fn slice_id(&self, v: &ParamView) -> &[F] {
        &self.data[v.range()]
    }

    /// Extracts the views under `prefix` (with the prefix stripped) into a new store.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for v in self.views.iter().filter(|v| v.name.starts_with(prefix)) {
            let id = out.push(&v.name[prefix.len()..], &v.shape, self.slice_id(v).to_vec());
            out.views[id].trainable = v.trainable;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_are_contiguous_and_disjoint() {
        let mut s = ParamStore::<f32>::new();
        s.push("a", &[2, 3], vec![1.0; 6]);
        s.push("b", &[4], vec![2.0; 4]);
        assert_eq!(s.len(), 10);
        assert_eq!(s.view(1).offset, 6);
        assert_eq!(s.get("b"), &[2.0; 4]);
        assert_eq!(s.view(0).matrix_dims(), (2, 3));
        assert_eq!(s.view(1).matrix_dims(), (1, 4));
    }

    #[test]
    fn trainable_mask_follows_prefix() {
        let mut s = ParamStore::<f32>::new();
        s.push("enc.w", &[2], vec![0.0; 2]);
        s.push("head.w", &[3], vec![0.0; 3]);
        assert_eq!(s.set_trainable("enc.", false), 1);
        assert_eq!(s.trainable_mask(), vec![false, false, true, true, true]);
    }

    #[test]
    fn prefix_roundtrip() {
        let mut a = ParamStore::<f64>::new();
        a.push("w", &[2], vec![1.0, 2.0]);
        let mut b = ParamStore::<f64>::new();
        b.extend_prefixed("x/", &a);
        assert_eq!(b.extract_prefixed("x/"), a);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::<f32>::new();
        s.push("a", &[1], vec![0.0]);
        s.push("a", &[1], vec![0.0]);
    }
}
