//! Linear maps `y = W x + b` with `W` either dense or in TT format.
//!
//! The TT forward pass never materializes `W`. The input batch is viewed as
//! `(B, n_1, .., n_d)` and the cores are contracted one at a time. After core
//! `k` the intermediate has layout
//!
//! ```text
//! (B, i_1 .. i_k, r_k, j_{k+1} .. j_d)
//! ```
//!
//! so each step is a batched product against a `(m_k, n_k, r_{k-1}, r_k)` core
//! with `O(r^2 m max(M, N))` work per sample. The backward pass walks the same
//! chain in reverse, reusing the forward intermediates.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewMut3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{slice1, slice1_mut, slice2, slice2_mut, slice4, slice4_mut, Parameterized};
use crate::tt_format::{glorot_init_with, TtMatrix, TtSpec, DENSE_CAP};

#[derive(Debug, Clone, PartialEq)]
pub enum LinearMap {
    Dense {
        /// `M x N`
        weight: Array2<f64>,
        bias: Option<Array1<f64>>,
    },
    Tt(TtMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightGrad {
    Dense(Array2<f64>),
    Tt(Vec<Array4<f64>>),
}

/// Gradients of a scalar loss given `dL/dy`. Parameter gradients are summed over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: WeightGrad,
    pub bias: Option<Array1<f64>>,
    /// `B x N`
    pub input: Array2<f64>,
}

impl LinearMap {
    /// Dense map with `N(0, 2/(M+N))` weights, which is the single-core case of the TT init.
    pub fn dense_glorot<R: Rng>(rows: usize, cols: usize, with_bias: bool, rng: &mut R) -> Self {
        let spec = TtSpec::from_slices(&[rows], &[cols], &[1, 1]).expect("positive dims");
        let tt = glorot_init_with(&spec, rng);
        let weight = tt.cores()[0]
            .clone()
            .into_shape_with_order((rows, cols))
            .expect("single core reshapes to M x N");
        LinearMap::Dense {
            weight,
            bias: with_bias.then(|| Array1::zeros(rows)),
        }
    }

    pub fn tt_glorot<R: Rng>(spec: &TtSpec, with_bias: bool, rng: &mut R) -> Self {
        let tt = glorot_init_with(spec, rng);
        let tt = if with_bias { tt } else { tt.with_bias(None).expect("no bias") };
        LinearMap::Tt(tt)
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearMap::Dense { weight, .. } => weight.ncols(),
            LinearMap::Tt(tt) => tt.cols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearMap::Dense { weight, .. } => weight.nrows(),
            LinearMap::Tt(tt) => tt.rows(),
        }
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        match self {
            LinearMap::Dense { bias, .. } => bias.as_ref(),
            LinearMap::Tt(tt) => tt.bias(),
        }
    }

    pub fn is_tt(&self) -> bool {
        matches!(self, LinearMap::Tt(_))
    }

    /// Weight entries plus bias entries.
    pub fn num_params(&self) -> usize {
        self.param_count()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match map input dim {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("batch must contain at least one row".into()));
        }
        Ok(())
    }

    /// `x W^T + b` over a `B x N` batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut y = self.forward_no_bias(x)?;
        if let Some(b) = self.bias() {
            y += b;
        }
        Ok(y)
    }

    pub fn forward_no_bias(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        match self {
            LinearMap::Dense { weight, .. } => Ok(x.dot(&weight.t())),
            LinearMap::Tt(tt) => {
                Ok(tt_forward(tt, x))
            }
        }
    }

    pub fn backward(&self, x: ArrayView2<f64>, grad_out: ArrayView2<f64>) -> Result<LinearGrads> {
        self.check_input(&x)?;
        if grad_out.dim() != (x.nrows(), self.out_dim()) {
            return Err(Error::Shape(format!(
                "grad_out has shape {:?}, expected {:?}",
                grad_out.dim(),
                (x.nrows(), self.out_dim())
            )));
        }
        let bias = self.bias().map(|_| grad_out.sum_axis(Axis(0)));
        match self {
            LinearMap::Dense { weight, .. } => Ok(LinearGrads {
                weight: WeightGrad::Dense(grad_out.t().dot(&x)),
                bias,
                input: grad_out.dot(weight),
            }),
            LinearMap::Tt(tt) => {
                let (cores, input) = tt_backward_chain(tt, x, grad_out);
                Ok(LinearGrads {
                    weight: WeightGrad::Tt(cores),
                    bias,
                    input,
                })
            }
        }
    }

    /// The weight matrix this map applies, plus its bias.
    pub fn dense_equivalent(&self) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
        match self {
            LinearMap::Dense { weight, bias } => Ok((weight.clone(), bias.clone())),
            LinearMap::Tt(tt) => Ok((tt.to_dense_capped(DENSE_CAP)?, tt.bias().cloned())),
        }
    }

    /// A dense map computing the same function.
    pub fn to_dense_map(&self) -> Result<LinearMap> {
        let (weight, bias) = self.dense_equivalent()?;
        Ok(LinearMap::Dense { weight, bias })
    }

    /// Adds `grads` into this map, which is used as a gradient accumulator of the same shape.
    pub fn add_grads(&mut self, grads: &LinearGrads) -> Result<()> {
        match (self, &grads.weight) {
            (LinearMap::Dense { weight, bias }, WeightGrad::Dense(gw)) => {
                if weight.dim() != gw.dim() {
                    return Err(Error::Shape("dense gradient shape mismatch".into()));
                }
                *weight += gw;
                add_bias(bias.as_mut(), grads.bias.as_ref())
            }
            (LinearMap::Tt(tt), WeightGrad::Tt(gc)) => {
                if tt.cores().len() != gc.len() {
                    return Err(Error::Shape("core gradient count mismatch".into()));
                }
                for (c, g) in tt.cores_mut().iter_mut().zip(gc) {
                    if c.dim() != g.dim() {
                        return Err(Error::Shape("core gradient shape mismatch".into()));
                    }
                    *c += g;
                }
                add_bias(tt.bias_mut(), grads.bias.as_ref())
            }
            _ => Err(Error::Shape("gradient variant does not match map variant".into())),
        }
    }

    /// Floats held by the contraction intermediates for one sample (zero for dense maps).
    pub fn intermediate_len_per_sample(&self) -> usize {
        match self {
            LinearMap::Dense { .. } => 0,
            LinearMap::Tt(tt) => {
                let spec = tt.spec();
                let (rows, cols) = (spec.row_modes().as_slice(), spec.col_modes().as_slice());
                (0..spec.d())
                    .map(|k| {
                        let done: usize = rows[..=k].iter().product();
                        let left: usize = cols[k + 1..].iter().product();
                        done * spec.ranks()[k + 1] * left
                    })
                    .sum()
            }
        }
    }
}

fn add_bias(target: Option<&mut Array1<f64>>, grad: Option<&Array1<f64>>) -> Result<()> {
    match (target, grad) {
        (Some(t), Some(g)) if t.len() == g.len() => {
            *t += g;
            Ok(())
        }
        (None, None) => Ok(()),
        _ => Err(Error::Shape("bias gradient does not match bias".into())),
    }
}

impl Parameterized for LinearMap {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        match self {
            LinearMap::Dense { weight, bias } => {
                f("weight", slice2(weight));
                if let Some(b) = bias {
                    f("bias", slice1(b));
                }
            }
            LinearMap::Tt(tt) => {
                for (k, core) in tt.cores().iter().enumerate() {
                    f(&format!("core{}", k + 1), slice4(core));
                }
                if let Some(b) = tt.bias() {
                    f("bias", slice1(b));
                }
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            LinearMap::Dense { weight, bias } => {
                f("weight", slice2_mut(weight));
                if let Some(b) = bias {
                    f("bias", slice1_mut(b));
                }
            }
            LinearMap::Tt(tt) => {
                for (k, core) in tt.cores_mut().iter_mut().enumerate() {
                    f(&format!("core{}", k + 1), slice4_mut(core));
                }
                if let Some(b) = tt.bias_mut() {
                    f("bias", slice1_mut(b));
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            LinearMap::Dense { weight, bias } => LinearMap::Dense {
                weight: Array2::zeros(weight.dim()),
                bias: bias.as_ref().map(|b| Array1::zeros(b.len())),
            },
            LinearMap::Tt(tt) => {
                let bias = tt.bias().map(|b| Array1::zeros(b.len()));
                LinearMap::Tt(
                    TtMatrix::zeros(tt.spec().clone())
                        .with_bias(bias)
                        .expect("same length"),
                )
            }
        }
    }
}

/// Core `(m, n, r_{k-1}, r_k)` as `r_k` blocks, each the `(m, r_{k-1} n)` matrix for one right rank index.
fn core_blocks(core: &Array4<f64>) -> Array3<f64> {
    let (m, n, rl, rr) = core.dim();
    core.view()
        .permuted_axes([3, 0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((rr, m, rl * n))
        .expect("standard layout")
}

fn blocks_to_core(g: Array3<f64>, (m, n, rl, rr): (usize, usize, usize, usize)) -> Array4<f64> {
    g.into_shape_with_order((rr, m, rl, n))
        .expect("core size")
        .permuted_axes([1, 3, 2, 0])
        .as_standard_layout()
        .into_owned()
}

/// One contraction step: `src` holds `Z_{k-1}`, `dst` receives `Z_k`.
fn tt_step(core: &Array4<f64>, src: &[f64], dst: &mut [f64]) {
    let (m, n, rl, rr) = core.dim();
    let rest = src.len() / (rl * n);
    let d = ArrayView2::from_shape((rl * n, rest), src).expect("layout");
    let a = core_blocks(core);
    let mut out = ArrayViewMut3::from_shape((rr, rest, m), dst).expect("layout");
    for r in 0..rr {
        general_mat_mul(1.0, &d.t(), &a.index_axis(Axis(0), r).t(), 0.0, &mut out.index_axis_mut(Axis(0), r));
    }
}

fn step_len(core: &Array4<f64>, src_len: usize) -> usize {
    let (m, n, rl, rr) = core.dim();
    src_len / (rl * n) * m * rr
}

/// Returns the intermediates `Z_0 .. Z_d`.
///
/// `Z_k` is stored with index order `(r_k, n_{k+1}, .., n_d, b, m_1, .., m_k)`, so the pair
/// contracted next always leads and the new row mode always trails. `Z_0` is `x^T` and
/// `Z_d` is the `B x M` output. Each step is one product per right rank index.
fn tt_forward_chain(tt: &TtMatrix, x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    let mut chain = Vec::with_capacity(tt.cores().len() + 1);
    chain.push(x.t().iter().copied().collect::<Vec<f64>>());
    for core in tt.cores() {
        let src = chain.last().expect("non-empty");
        let mut dst = vec![0.0; step_len(core, src.len())];
        tt_step(core, src, &mut dst);
        chain.push(dst);
    }
    chain
}

thread_local! {
    // Reused between calls: fresh multi-megabyte buffers on every call cost page faults
    // that grow faster than the arithmetic.
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Forward pass that keeps only the current intermediate.
fn tt_forward(tt: &TtMatrix, x: ArrayView2<f64>) -> Array2<f64> {
    SCRATCH.with(|s| {
        let (cur, next) = &mut *s.borrow_mut();
        cur.clear();
        cur.extend(x.t().iter().copied());
        for core in tt.cores() {
            next.clear();
            next.resize(step_len(core, cur.len()), 0.0);
            tt_step(core, cur, next);
            std::mem::swap(cur, next);
        }
        Array2::from_shape_vec((x.nrows(), tt.rows()), cur.clone()).expect("final layout is B x M")
    })
}

fn tt_backward_chain(
    tt: &TtMatrix,
    x: ArrayView2<f64>,
    grad_out: ArrayView2<f64>,
) -> (Vec<Array4<f64>>, Array2<f64>) {
    let spec = tt.spec();
    let chain = tt_forward_chain(tt, x);
    let mut core_grads: Vec<Array4<f64>> = Vec::with_capacity(spec.d());
    let mut upstream: Vec<f64> = grad_out.iter().copied().collect();
    for k in (0..spec.d()).rev() {
        let (m, n, rl, rr) = spec.core_shape(k);
        let rest = chain[k].len() / (rl * n);
        let d = ArrayView2::from_shape((rl * n, rest), &chain[k]).expect("layout");
        let up = ArrayView3::from_shape((rr, rest, m), &upstream).expect("layout");
        let a = core_blocks(&tt.cores()[k]);
        let mut da = Array3::zeros((rr, m, rl * n));
        let mut dd = Array2::zeros((rl * n, rest));
        for r in 0..rr {
            let u = up.index_axis(Axis(0), r);
            general_mat_mul(1.0, &u.t(), &d.t(), 0.0, &mut da.index_axis_mut(Axis(0), r));
            general_mat_mul(1.0, &a.index_axis(Axis(0), r).t(), &u.t(), 1.0, &mut dd);
        }
        core_grads.push(blocks_to_core(da, spec.core_shape(k)));
        upstream = dd.into_raw_vec_and_offset().0;
    }
    core_grads.reverse();
    let input = ArrayView2::from_shape((spec.cols(), x.nrows()), &upstream)
        .expect("Z_0 layout is N x B")
        .t()
        .as_standard_layout()
        .into_owned();
    (core_grads, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt_format::{glorot_init, seeded_rng};
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn random_tt(rows: &[usize], cols: &[usize], ranks: &[usize], seed: u64) -> LinearMap {
        let spec = TtSpec::from_slices(rows, cols, ranks).unwrap();
        let tt = glorot_init(&spec, seed);
        let bias = random_batch(1, spec.rows(), seed + 1000).row(0).to_owned();
        LinearMap::Tt(tt.with_bias(Some(bias)).unwrap())
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_cores_give_bias() {
        let spec = TtSpec::from_slices(&[2, 3], &[3, 2], &[1, 2, 1]).unwrap();
        let bias = Array1::from(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let map = LinearMap::Tt(TtMatrix::zeros(spec).with_bias(Some(bias.clone())).unwrap());
        let y = map.forward(random_batch(3, 6, 1).view()).unwrap();
        for row in y.rows() {
            assert_eq!(row, bias);
        }
    }

    #[test]
    fn single_core_unit_vector_selects_column() {
        let map = random_tt(&[5], &[4], &[1, 1], 3);
        let LinearMap::Tt(tt) = &map else { unreachable!() };
        for q in 0..4 {
            let mut x = Array2::zeros((1, 4));
            x[[0, q]] = 1.0;
            let y = map.forward(x.view()).unwrap();
            for p in 0..5 {
                let expected = tt.cores()[0][[p, q, 0, 0]] + tt.bias().unwrap()[p];
                assert_eq!(y[[0, p]], expected);
            }
        }
    }

    #[test]
    fn forward_matches_dense_reconstruction() {
        let map = random_tt(&[4, 4], &[4, 4], &[1, 3, 1], 11);
        let x = random_batch(8, 16, 12);
        let (w, b) = map.dense_equivalent().unwrap();
        let expected = x.dot(&w.t()) + &b.unwrap();
        assert!(max_abs(&map.forward(x.view()).unwrap(), &expected) <= 1e-10);

        let map = random_tt(&[2, 3, 4], &[3, 1, 5], &[1, 4, 2, 1], 13);
        let x = random_batch(5, 15, 14);
        let (w, b) = map.dense_equivalent().unwrap();
        let expected = x.dot(&w.t()) + &b.unwrap();
        assert!(max_abs(&map.forward(x.view()).unwrap(), &expected) <= 1e-10);
    }

    #[test]
    fn ones_tt_dense_equivalent_is_three() {
        let spec = TtSpec::from_slices(&[2, 2], &[3, 3], &[1, 3, 1]).unwrap();
        let cores = (0..2).map(|k| Array4::ones(spec.core_shape(k))).collect();
        let map = LinearMap::Tt(TtMatrix::new(spec, cores, None).unwrap());
        let (w, b) = map.dense_equivalent().unwrap();
        assert!(b.is_none());
        assert!(w.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn dense_equivalent_of_dense_is_identity() {
        let w = random_batch(3, 4, 2);
        let map = LinearMap::Dense {
            weight: w.clone(),
            bias: None,
        };
        assert_eq!(map.dense_equivalent().unwrap(), (w, None));
    }

    #[test]
    fn shape_errors() {
        let map = random_tt(&[2, 2], &[2, 2], &[1, 2, 1], 1);
        assert!(matches!(map.forward(Array2::zeros((2, 3)).view()), Err(Error::Shape(_))));
        assert!(matches!(map.forward(Array2::zeros((0, 4)).view()), Err(Error::Shape(_))));
        let x = Array2::zeros((2, 4));
        assert!(matches!(
            map.backward(x.view(), Array2::zeros((3, 4)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let map = random_tt(&[2, 3], &[3, 2], &[1, 2, 1], 5);
        let x = random_batch(4, 6, 6);
        let g = map.backward(x.view(), Array2::zeros((4, 6)).view()).unwrap();
        let WeightGrad::Tt(cores) = &g.weight else { panic!() };
        assert!(cores.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        assert!(g.bias.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_weight_grad_is_outer_product() {
        let map = LinearMap::Dense {
            weight: random_batch(3, 4, 1),
            bias: Some(Array1::zeros(3)),
        };
        let x = random_batch(1, 4, 2);
        let gy = random_batch(1, 3, 3);
        let g = map.backward(x.view(), gy.view()).unwrap();
        let WeightGrad::Dense(w) = &g.weight else { panic!() };
        for p in 0..3 {
            for q in 0..4 {
                assert_eq!(w[[p, q]], gy[[0, p]] * x[[0, q]]);
            }
        }
        assert_eq!(g.bias.unwrap(), gy.row(0));
    }

    /// Loss `sum(c .* forward(x))` with fixed random `c`; its gradient w.r.t. `y` is `c`.
    fn probe_loss(map: &LinearMap, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        (map.forward(x.view()).unwrap() * c).sum()
    }

    #[test]
    fn tt_grads_match_finite_differences() {
        let map = random_tt(&[2, 2], &[2, 2], &[1, 2, 1], 21);
        let x = random_batch(3, 4, 22);
        let c = random_batch(3, 4, 23);
        let grads = map.backward(x.view(), c.view()).unwrap();
        let mut analytic = map.zeros_like();
        analytic.add_grads(&grads).unwrap();
        let analytic = analytic.flatten();

        let h = 1e-5;
        let n = map.param_count();
        for idx in 0..n {
            let bump = |delta: f64| {
                let mut m = map.clone();
                let mut seen = 0;
                m.visit_mut(&mut |_, v| {
                    if idx >= seen && idx < seen + v.len() {
                        v[idx - seen] += delta;
                    }
                    seen += v.len();
                });
                probe_loss(&m, &x, &c)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let err = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-8);
            assert!(err <= 1e-5, "param {idx}: fd {fd} vs analytic {}", analytic[idx]);
        }

        for b in 0..3 {
            for q in 0..4 {
                let mut xp = x.clone();
                xp[[b, q]] += h;
                let mut xm = x.clone();
                xm[[b, q]] -= h;
                let fd = (probe_loss(&map, &xp, &c) - probe_loss(&map, &xm, &c)) / (2.0 * h);
                let a = grads.input[[b, q]];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8) <= 1e-5);
            }
        }
    }

    #[test]
    fn linearity() {
        let map = random_tt(&[3, 2], &[2, 4], &[1, 3, 1], 31);
        let x1 = random_batch(2, 8, 32);
        let x2 = random_batch(2, 8, 33);
        let (alpha, beta) = (0.7, -1.3);
        let lhs = map.forward((&x1 * alpha + &x2 * beta).view()).unwrap();
        let rhs = map.forward_no_bias(x1.view()).unwrap() * alpha
            + map.forward_no_bias(x2.view()).unwrap() * beta
            + map.bias().unwrap();
        assert!(max_abs(&lhs, &rhs) <= 1e-10);
    }

    #[test]
    fn intermediate_sizes() {
        let map = random_tt(&[4, 4], &[2, 8], &[1, 3, 1], 1);
        // after core 1: 4 * 3 * 8, after core 2: 16 * 1
        assert_eq!(map.intermediate_len_per_sample(), 96 + 16);
    }

    proptest::proptest! {
        #[test]
        fn tt_map_agrees_with_its_dense_matrix(
            modes in proptest::collection::vec((1usize..5, 1usize..5, 1usize..4), 1..4),
            batch in 1usize..4,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let rows: Vec<usize> = modes.iter().map(|m| m.0).collect();
            let cols: Vec<usize> = modes.iter().map(|m| m.1).collect();
            let mut ranks = vec![1];
            ranks.extend(modes[1..].iter().map(|m| m.2));
            ranks.push(1);
            let map = random_tt(&rows, &cols, &ranks, seed % 1000);
            let LinearMap::Tt(tt) = &map else { unreachable!() };
            let w = tt.to_dense().unwrap();
            let b = tt.bias().unwrap().clone();
            let x = random_batch(batch, w.ncols(), seed % 1000 + 1);
            let g = random_batch(batch, w.nrows(), seed % 1000 + 2);
            let y = map.forward(x.view()).unwrap();
            proptest::prop_assert!(max_abs(&y, &(x.dot(&w.t()) + &b)) <= 1e-12);
            let grads = map.backward(x.view(), g.view()).unwrap();
            proptest::prop_assert!(max_abs(&grads.input, &g.dot(&w)) <= 1e-12);
            let db = grads.bias.unwrap();
            proptest::prop_assert!(db.iter().zip(g.sum_axis(Axis(0)).iter()).all(|(a, e)| (a - e).abs() <= 1e-12));
        }
    }
}
