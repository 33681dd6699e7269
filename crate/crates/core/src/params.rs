//! Trainable parameter sets.
//!
//! [`Params`] doubles as the shape for gradients, Adam moments and SAM
//! perturbations, so every optimizer routine works on matched tensors.
//! Flattened order is: for each layer, weight (row-major) then bias, then
//! batch-norm scale and shift for hidden layers.

use ndarray::{Array1, Array2};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Batch-norm scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub linears: Vec<Linear>,
    pub norms: Vec<Affine>,
}

impl Params {
    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths.len() - 1;
        let linears = (0..layers)
            .map(|i| Linear {
                weight: Array2::zeros((widths[i + 1], widths[i])),
                bias: Array1::zeros(widths[i + 1]),
            })
            .collect();
        let norms = (0..layers - 1)
            .map(|i| Affine {
                scale: Array1::zeros(widths[i + 1]),
                shift: Array1::zeros(widths[i + 1]),
            })
            .collect();
        Self { linears, norms }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill(0.0);
        out
    }

    /// Layer widths `[input, hidden.., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.linears[0].weight.ncols()];
        w.extend(self.linears.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.linears.len());
        for (i, l) in self.linears.iter().enumerate() {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let Some(n) = self.norms.get(i) {
                out.push(n.scale.as_slice().expect("standard layout"));
                out.push(n.shift.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.linears.len());
        let mut norms = self.norms.iter_mut();
        for l in self.linears.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = norms.next() {
                out.push(n.scale.as_slice_mut().expect("standard layout"));
                out.push(n.shift.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Human-readable tensor names in flattened order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.linears.len() {
            out.push(format!("linear{}.weight", i + 1));
            out.push(format!("linear{}.bias", i + 1));
            if i < self.norms.len() {
                out.push(format!("norm{}.scale", i + 1));
                out.push(format!("norm{}.shift", i + 1));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites values from a flat vector in flattened order.
    ///
    /// Panics if `flat.len() != self.len()`.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    /// Mutable access to the `index`-th scalar in flattened order.
    pub fn get_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            if index < t.len() {
                return Some(&mut t[index]);
            }
            index -= t.len();
        }
        None
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, scale: f64, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index (flattened) of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .position(|v| !v.is_finite())
    }

    pub fn bit_eq(&self, other: &Params) -> bool {
        self.same_shape(other)
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}
