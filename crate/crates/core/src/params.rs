//! Uniform access to the trainable buffers of heterogeneous models.
//!
//! Gradients are stored in a value of the same type as the model (see
//! [`Parameterized::zeros_like`]), so an optimizer can walk parameters and
//! gradients in lockstep by visiting both in the same order.

use ndarray::{Array1, Array2, Array4};

pub trait Parameterized {
    /// Visits every trainable buffer in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    /// A copy with identical shapes and every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    /// Elementwise `self += other`. Shapes must match.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut bufs = Vec::new();
        other.visit(&mut |_, v| bufs.push(v.to_vec()));
        let mut it = bufs.into_iter();
        self.visit_mut(&mut |name, v| {
            let src = it.next().unwrap_or_else(|| panic!("missing buffer for {name}"));
            assert_eq!(src.len(), v.len(), "buffer size mismatch for {name}");
            v.iter_mut().zip(&src).for_each(|(a, b)| *a += b);
        });
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x *= factor));
    }

    /// Flattened copy of all buffers, in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, v| out.extend_from_slice(v));
        out
    }
}

impl Parameterized for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("param", self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("param", self);
    }

    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice4(a: &Array4<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice4_mut(a: &mut Array4<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}
