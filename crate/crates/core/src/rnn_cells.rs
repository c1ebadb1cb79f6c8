//! Simple RNN and GRU cells over dense or TT linear maps.
//!
//! ```text
//! SRNN:  h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h)
//!
//! GRU:   r_t = sigmoid(W_xr x_t + W_hr h_{t-1} + b_r)
//!        z_t = sigmoid(W_xz x_t + W_hz h_{t-1} + b_z)
//!        c_t = tanh(W_xh x_t + W_hh (r_t * h_{t-1}) + b_h)
//!        h_t = (1 - z_t) * h_{t-1} + z_t * c_t
//! ```
//!
//! Each pre-activation has exactly one bias, owned by the cell. The linear maps
//! inside a cell carry no bias of their own. Sequences are `(B, T, N)` arrays
//! with an optional `(B, T)` 0/1 mask; a masked step copies the previous
//! hidden state forward unchanged.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{slice1, slice1_mut, Parameterized};
use crate::tt_format::TtSpec;
use crate::tt_linear::LinearMap;

/// `B x M` hidden activations.
pub type HiddenState = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Srnn,
    Gru,
}

impl CellKind {
    /// Number of gate pre-activations, each with one input map, one hidden map and a bias.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Srnn => 1,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Srnn => "srnn",
            CellKind::Gru => "gru",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Parameterization {
    Dense,
    Tt {
        input_modes: Vec<usize>,
        hidden_modes: Vec<usize>,
        /// Full rank chain `r_0 .. r_d` with `r_0 = r_d = 1`.
        ranks: Vec<usize>,
    },
}

/// Everything needed to build or count a cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellDescription {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub parameterization: Parameterization,
}

impl CellDescription {
    pub fn dense(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        CellDescription {
            kind,
            input_dim,
            hidden_dim,
            parameterization: Parameterization::Dense,
        }
    }

    /// TT cell with interior ranks all equal to `rank`; dims are the mode products.
    pub fn tt(kind: CellKind, input_modes: &[usize], hidden_modes: &[usize], rank: usize) -> Self {
        let mut ranks = vec![rank; hidden_modes.len() + 1];
        ranks[0] = 1;
        *ranks.last_mut().expect("non-empty") = 1;
        CellDescription {
            kind,
            input_dim: input_modes.iter().product(),
            hidden_dim: hidden_modes.iter().product(),
            parameterization: Parameterization::Tt {
                input_modes: input_modes.to_vec(),
                hidden_modes: hidden_modes.to_vec(),
                ranks,
            },
        }
    }

    /// The input-side and hidden-side map specs, validated against the dims.
    pub fn tt_specs(&self) -> Result<Option<(TtSpec, TtSpec)>> {
        match &self.parameterization {
            Parameterization::Dense => Ok(None),
            Parameterization::Tt {
                input_modes,
                hidden_modes,
                ranks,
            } => {
                let x = TtSpec::from_slices(hidden_modes, input_modes, ranks)?;
                let h = TtSpec::from_slices(hidden_modes, hidden_modes, ranks)?;
                if x.cols() != self.input_dim || x.rows() != self.hidden_dim {
                    return Err(Error::Shape(format!(
                        "modes give a {}x{} map but the cell is {}x{}",
                        x.rows(),
                        x.cols(),
                        self.hidden_dim,
                        self.input_dim
                    )));
                }
                Ok(Some((x, h)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams {
    pub w_xh: LinearMap,
    pub w_hh: LinearMap,
    pub b_h: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: LinearMap,
    pub w_hr: LinearMap,
    pub w_xz: LinearMap,
    pub w_hz: LinearMap,
    pub w_xh: LinearMap,
    pub w_hh: LinearMap,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b_h: Array1<f64>,
}

fn check_pair(name: &str, w_x: &LinearMap, w_h: &LinearMap, bias: &Array1<f64>) -> Result<()> {
    let m = w_h.out_dim();
    if w_h.in_dim() != m || w_x.out_dim() != m || bias.len() != m {
        return Err(Error::Shape(format!(
            "{name}: input map {}x{}, hidden map {}x{}, bias {} are inconsistent",
            w_x.out_dim(),
            w_x.in_dim(),
            w_h.out_dim(),
            w_h.in_dim(),
            bias.len()
        )));
    }
    if w_x.bias().is_some() || w_h.bias().is_some() {
        return Err(Error::Shape(format!("{name}: cell maps must not carry their own bias")));
    }
    Ok(())
}

impl SrnnParams {
    pub fn new(w_xh: LinearMap, w_hh: LinearMap, b_h: Array1<f64>) -> Result<Self> {
        check_pair("srnn", &w_xh, &w_hh, &b_h)?;
        Ok(SrnnParams { w_xh, w_hh, b_h })
    }
}

impl GruParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_xr: LinearMap,
        w_hr: LinearMap,
        w_xz: LinearMap,
        w_hz: LinearMap,
        w_xh: LinearMap,
        w_hh: LinearMap,
        b_r: Array1<f64>,
        b_z: Array1<f64>,
        b_h: Array1<f64>,
    ) -> Result<Self> {
        check_pair("reset gate", &w_xr, &w_hr, &b_r)?;
        check_pair("update gate", &w_xz, &w_hz, &b_z)?;
        check_pair("candidate", &w_xh, &w_hh, &b_h)?;
        let n = w_xr.in_dim();
        if w_xz.in_dim() != n || w_xh.in_dim() != n || w_hr.out_dim() != w_hz.out_dim() || w_hz.out_dim() != w_hh.out_dim() {
            return Err(Error::Shape("gru gates disagree on input or hidden size".into()));
        }
        Ok(GruParams {
            w_xr,
            w_hr,
            w_xz,
            w_hz,
            w_xh,
            w_hh,
            b_r,
            b_z,
            b_h,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Srnn(SrnnParams),
    Gru(GruParams),
}

impl Cell {
    /// Glorot-initialized cell with zero biases.
    pub fn init<R: Rng>(desc: &CellDescription, rng: &mut R) -> Result<Self> {
        let specs = desc.tt_specs()?;
        let pair = |rng: &mut R| -> (LinearMap, LinearMap) {
            match &specs {
                None => (
                    LinearMap::dense_glorot(desc.hidden_dim, desc.input_dim, false, rng),
                    LinearMap::dense_glorot(desc.hidden_dim, desc.hidden_dim, false, rng),
                ),
                Some((xs, hs)) => (LinearMap::tt_glorot(xs, false, rng), LinearMap::tt_glorot(hs, false, rng)),
            }
        };
        let m = desc.hidden_dim;
        match desc.kind {
            CellKind::Srnn => {
                let (w_xh, w_hh) = pair(rng);
                Ok(Cell::Srnn(SrnnParams::new(w_xh, w_hh, Array1::zeros(m))?))
            }
            CellKind::Gru => {
                let (w_xr, w_hr) = pair(rng);
                let (w_xz, w_hz) = pair(rng);
                let (w_xh, w_hh) = pair(rng);
                Ok(Cell::Gru(GruParams::new(
                    w_xr,
                    w_hr,
                    w_xz,
                    w_hz,
                    w_xh,
                    w_hh,
                    Array1::zeros(m),
                    Array1::zeros(m),
                    Array1::zeros(m),
                )?))
            }
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Cell::Srnn(_) => CellKind::Srnn,
            Cell::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Cell::Srnn(p) => p.w_xh.in_dim(),
            Cell::Gru(p) => p.w_xh.in_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Cell::Srnn(p) => p.b_h.len(),
            Cell::Gru(p) => p.b_h.len(),
        }
    }

    /// Named linear maps in visit order.
    pub fn maps(&self) -> Vec<(&'static str, &LinearMap)> {
        match self {
            Cell::Srnn(p) => vec![("w_xh", &p.w_xh), ("w_hh", &p.w_hh)],
            Cell::Gru(p) => vec![
                ("w_xr", &p.w_xr),
                ("w_hr", &p.w_hr),
                ("w_xz", &p.w_xz),
                ("w_hz", &p.w_hz),
                ("w_xh", &p.w_xh),
                ("w_hh", &p.w_hh),
            ],
        }
    }

    /// Named gate biases in visit order.
    pub fn biases(&self) -> Vec<(&'static str, &Array1<f64>)> {
        match self {
            Cell::Srnn(p) => vec![("b_h", &p.b_h)],
            Cell::Gru(p) => vec![("b_r", &p.b_r), ("b_z", &p.b_z), ("b_h", &p.b_h)],
        }
    }

    /// Rebuilds a cell from named parts as produced by [`Cell::maps`] and [`Cell::biases`].
    pub fn from_parts(kind: CellKind, mut maps: Vec<LinearMap>, mut biases: Vec<Array1<f64>>) -> Result<Self> {
        let expected = kind.gates();
        if maps.len() != 2 * expected || biases.len() != expected {
            return Err(Error::Shape(format!(
                "{} cell needs {} maps and {} biases, got {} and {}",
                kind.name(),
                2 * expected,
                expected,
                maps.len(),
                biases.len()
            )));
        }
        match kind {
            CellKind::Srnn => {
                let b_h = biases.remove(0);
                let w_hh = maps.remove(1);
                let w_xh = maps.remove(0);
                Ok(Cell::Srnn(SrnnParams::new(w_xh, w_hh, b_h)?))
            }
            CellKind::Gru => {
                let mut m = maps.into_iter();
                let mut b = biases.into_iter();
                let mut next = || m.next().expect("count checked");
                let (w_xr, w_hr, w_xz, w_hz, w_xh, w_hh) = (next(), next(), next(), next(), next(), next());
                let mut nb = || b.next().expect("count checked");
                let (b_r, b_z, b_h) = (nb(), nb(), nb());
                Ok(Cell::Gru(GruParams::new(w_xr, w_hr, w_xz, w_hz, w_xh, w_hh, b_r, b_z, b_h)?))
            }
        }
    }

    /// The same cell with every TT map replaced by its dense reconstruction.
    pub fn to_dense_cell(&self) -> Result<Cell> {
        let maps = self
            .maps()
            .into_iter()
            .map(|(_, m)| m.to_dense_map())
            .collect::<Result<Vec<_>>>()?;
        let biases = self.biases().into_iter().map(|(_, b)| b.clone()).collect();
        Cell::from_parts(self.kind(), maps, biases)
    }

    pub fn step(&self, x: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Result<HiddenState> {
        match self {
            Cell::Srnn(p) => srnn_step(p, x, h_prev),
            Cell::Gru(p) => gru_step(p, x, h_prev),
        }
    }

    /// Runs the recurrence and keeps what the backward pass needs.
    pub fn forward_trace(
        &self,
        seq: ArrayView3<f64>,
        h0: Option<ArrayView2<f64>>,
        mask: Option<ArrayView2<f64>>,
    ) -> Result<Trace<'_>> {
        let (batch, steps, width) = seq.dim();
        if steps == 0 {
            return Err(Error::Shape("cannot unroll an empty sequence".into()));
        }
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "sequence width {width} does not match cell input dim {}",
                self.input_dim()
            )));
        }
        let m = self.hidden_dim();
        let h0 = match h0 {
            Some(h) if h.dim() != (batch, m) => {
                return Err(Error::Shape(format!("h0 has shape {:?}, expected {:?}", h.dim(), (batch, m))))
            }
            Some(h) => h.to_owned(),
            None => Array2::zeros((batch, m)),
        };
        let mask = match mask {
            Some(mk) => {
                if mk.dim() != (batch, steps) {
                    return Err(Error::Shape(format!(
                        "mask has shape {:?}, expected {:?}",
                        mk.dim(),
                        (batch, steps)
                    )));
                }
                if mk.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Data("mask entries must be 0 or 1".into()));
                }
                Some(mk.to_owned())
            }
            None => None,
        };

        let mut hidden = Array3::zeros((batch, steps, m));
        let mut caches = Vec::with_capacity(steps);
        let mut h = h0.clone();
        for t in 0..steps {
            let x = seq.slice(s![.., t, ..]).to_owned();
            let (h_new, cache) = match self {
                Cell::Srnn(p) => {
                    let h_new = srnn_step(p, x.view(), h.view())?;
                    (h_new.clone(), StepCache::Srnn { h_new })
                }
                Cell::Gru(p) => {
                    let g = gru_forward(p, x.view(), h.view())?;
                    (g.h_new.clone(), StepCache::Gru(g))
                }
            };
            let h_next = match &mask {
                Some(mk) => blend(&h_new, &h, mk.column(t)),
                None => h_new,
            };
            caches.push((x, std::mem::replace(&mut h, h_next), cache));
            hidden.slice_mut(s![.., t, ..]).assign(&h);
        }
        Ok(Trace {
            cell: self,
            caches,
            hidden,
            mask,
        })
    }
}

/// `mask * new + (1 - mask) * old`, row-wise.
fn blend(new: &Array2<f64>, old: &Array2<f64>, mask: ndarray::ArrayView1<f64>) -> Array2<f64> {
    let mut out = new.clone();
    for (b, &mk) in mask.iter().enumerate() {
        if mk == 0.0 {
            out.row_mut(b).assign(&old.row(b));
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_hidden(h: &ArrayView2<f64>, x: &ArrayView2<f64>, m: usize) -> Result<()> {
    if h.dim() != (x.nrows(), m) {
        return Err(Error::Shape(format!(
            "hidden state has shape {:?}, expected {:?}",
            h.dim(),
            (x.nrows(), m)
        )));
    }
    Ok(())
}

pub fn srnn_step(p: &SrnnParams, x: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Result<HiddenState> {
    check_hidden(&h_prev, &x, p.b_h.len())?;
    let mut a = p.w_xh.forward(x)? + p.w_hh.forward(h_prev)?;
    a += &p.b_h;
    a.mapv_inplace(f64::tanh);
    Ok(a)
}

pub fn gru_step(p: &GruParams, x: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Result<HiddenState> {
    Ok(gru_forward(p, x, h_prev)?.h_new)
}

#[derive(Debug, Clone)]
struct GruCache {
    r: Array2<f64>,
    z: Array2<f64>,
    cand: Array2<f64>,
    reset_h: Array2<f64>,
    h_new: Array2<f64>,
}

fn gru_forward(p: &GruParams, x: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Result<GruCache> {
    check_hidden(&h_prev, &x, p.b_h.len())?;
    let mut r = p.w_xr.forward(x)? + p.w_hr.forward(h_prev)?;
    r += &p.b_r;
    r.mapv_inplace(sigmoid);
    let mut z = p.w_xz.forward(x)? + p.w_hz.forward(h_prev)?;
    z += &p.b_z;
    z.mapv_inplace(sigmoid);
    let reset_h = &r * &h_prev;
    let mut cand = p.w_xh.forward(x)? + p.w_hh.forward(reset_h.view())?;
    cand += &p.b_h;
    cand.mapv_inplace(f64::tanh);
    let mut h_new = Array2::zeros(h_prev.dim());
    Zip::from(&mut h_new)
        .and(&z)
        .and(&h_prev)
        .and(&cand)
        .for_each(|h, &z, &hp, &c| *h = (1.0 - z) * hp + z * c);
    Ok(GruCache {
        r,
        z,
        cand,
        reset_h,
        h_new,
    })
}

#[derive(Debug, Clone)]
enum StepCache {
    Srnn { h_new: Array2<f64> },
    Gru(GruCache),
}

/// Forward activations of one unrolled sequence.
#[derive(Debug)]
pub struct Trace<'a> {
    cell: &'a Cell,
    /// `(x_t, h_{t-1}, step internals)` per step.
    caches: Vec<(Array2<f64>, Array2<f64>, StepCache)>,
    hidden: Array3<f64>,
    mask: Option<Array2<f64>>,
}

/// Gradients from [`bptt`]. `params` has the cell's shape and holds `dL/dtheta`.
#[derive(Debug, Clone)]
pub struct CellGrads {
    pub params: Cell,
    /// `B x T x N`
    pub inputs: Array3<f64>,
    /// `B x M`
    pub h0: Array2<f64>,
}

impl Trace<'_> {
    /// `B x T x M` states after each step.
    pub fn hidden_states(&self) -> &Array3<f64> {
        &self.hidden
    }

    pub fn into_hidden_states(self) -> Array3<f64> {
        self.hidden
    }

    /// Last state of every row.
    pub fn final_state(&self) -> Array2<f64> {
        let t = self.hidden.len_of(Axis(1)) - 1;
        self.hidden.slice(s![.., t, ..]).to_owned()
    }

    /// Reverse pass given `dL/dh_t` for every step.
    pub fn backward(&self, grad_hidden: ArrayView3<f64>) -> Result<CellGrads> {
        if grad_hidden.dim() != self.hidden.dim() {
            return Err(Error::Shape(format!(
                "hidden-state gradient has shape {:?}, expected {:?}",
                grad_hidden.dim(),
                self.hidden.dim()
            )));
        }
        let (batch, steps, m) = self.hidden.dim();
        let n = self.cell.input_dim();
        let mut grads = self.cell.zeros_like();
        let mut inputs = Array3::zeros((batch, steps, n));
        let mut carry = Array2::<f64>::zeros((batch, m));

        for t in (0..steps).rev() {
            let (x, h_prev, cache) = &self.caches[t];
            let total = &grad_hidden.slice(s![.., t, ..]) + &carry;
            // split into the part flowing through the cell and the part carried past it
            let (d_new, mut d_prev) = match &self.mask {
                Some(mk) => {
                    let mut d_new = total.clone();
                    let mut d_prev = Array2::zeros((batch, m));
                    for (b, &keep) in mk.column(t).iter().enumerate() {
                        if keep == 0.0 {
                            d_new.row_mut(b).fill(0.0);
                            d_prev.row_mut(b).assign(&total.row(b));
                        }
                    }
                    (d_new, d_prev)
                }
                None => (total, Array2::zeros((batch, m))),
            };

            let dx = match (self.cell, cache, &mut grads) {
                (Cell::Srnn(p), StepCache::Srnn { h_new }, Cell::Srnn(g)) => {
                    let da = &d_new * &h_new.mapv(|h| 1.0 - h * h);
                    g.b_h += &da.sum_axis(Axis(0));
                    let gx = p.w_xh.backward(x.view(), da.view())?;
                    g.w_xh.add_grads(&gx)?;
                    let gh = p.w_hh.backward(h_prev.view(), da.view())?;
                    g.w_hh.add_grads(&gh)?;
                    d_prev += &gh.input;
                    gx.input
                }
                (Cell::Gru(p), StepCache::Gru(c), Cell::Gru(g)) => {
                    d_prev += &(&d_new * &c.z.mapv(|z| 1.0 - z));
                    let dz = &d_new * &(&c.cand - h_prev);
                    let dc = &d_new * &c.z;

                    let da_h = &dc * &c.cand.mapv(|v| 1.0 - v * v);
                    g.b_h += &da_h.sum_axis(Axis(0));
                    let gxh = p.w_xh.backward(x.view(), da_h.view())?;
                    g.w_xh.add_grads(&gxh)?;
                    let ghh = p.w_hh.backward(c.reset_h.view(), da_h.view())?;
                    g.w_hh.add_grads(&ghh)?;
                    let dr = &ghh.input * h_prev;
                    d_prev += &(&ghh.input * &c.r);

                    let da_z = &dz * &c.z.mapv(|z| z * (1.0 - z));
                    g.b_z += &da_z.sum_axis(Axis(0));
                    let gxz = p.w_xz.backward(x.view(), da_z.view())?;
                    g.w_xz.add_grads(&gxz)?;
                    let ghz = p.w_hz.backward(h_prev.view(), da_z.view())?;
                    g.w_hz.add_grads(&ghz)?;
                    d_prev += &ghz.input;

                    let da_r = &dr * &c.r.mapv(|r| r * (1.0 - r));
                    g.b_r += &da_r.sum_axis(Axis(0));
                    let gxr = p.w_xr.backward(x.view(), da_r.view())?;
                    g.w_xr.add_grads(&gxr)?;
                    let ghr = p.w_hr.backward(h_prev.view(), da_r.view())?;
                    g.w_hr.add_grads(&ghr)?;
                    d_prev += &ghr.input;

                    gxh.input + gxz.input + gxr.input
                }
                _ => unreachable!("cache variant always matches the cell"),
            };
            inputs.slice_mut(s![.., t, ..]).assign(&dx);
            carry = d_prev;
        }
        Ok(CellGrads {
            params: grads,
            inputs,
            h0: carry,
        })
    }
}

/// All hidden states `B x T x M`; `h0` defaults to zeros and `mask` to all ones.
pub fn unroll(
    cell: &Cell,
    seq: ArrayView3<f64>,
    h0: Option<ArrayView2<f64>>,
    mask: Option<ArrayView2<f64>>,
) -> Result<Array3<f64>> {
    Ok(cell.forward_trace(seq, h0, mask)?.into_hidden_states())
}

/// Backpropagation through time for a loss whose gradient w.r.t. each `h_t` is `grad_hidden`.
pub fn bptt(
    cell: &Cell,
    seq: ArrayView3<f64>,
    h0: Option<ArrayView2<f64>>,
    mask: Option<ArrayView2<f64>>,
    grad_hidden: ArrayView3<f64>,
) -> Result<CellGrads> {
    cell.forward_trace(seq, h0, mask)?.backward(grad_hidden)
}

impl Parameterized for Cell {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (name, map) in self.maps() {
            map.visit(&mut |inner, v| f(&format!("{name}.{inner}"), v));
        }
        for (name, b) in self.biases() {
            f(name, slice1(b));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let (maps, biases): (Vec<(&str, &mut LinearMap)>, Vec<(&str, &mut Array1<f64>)>) = match self {
            Cell::Srnn(p) => (vec![("w_xh", &mut p.w_xh), ("w_hh", &mut p.w_hh)], vec![("b_h", &mut p.b_h)]),
            Cell::Gru(p) => (
                vec![
                    ("w_xr", &mut p.w_xr),
                    ("w_hr", &mut p.w_hr),
                    ("w_xz", &mut p.w_xz),
                    ("w_hz", &mut p.w_hz),
                    ("w_xh", &mut p.w_xh),
                    ("w_hh", &mut p.w_hh),
                ],
                vec![("b_r", &mut p.b_r), ("b_z", &mut p.b_z), ("b_h", &mut p.b_h)],
            ),
        };
        for (name, map) in maps {
            map.visit_mut(&mut |inner, v| f(&format!("{name}.{inner}"), v));
        }
        for (name, b) in biases {
            f(name, slice1_mut(b));
        }
    }

    fn zeros_like(&self) -> Self {
        let maps = self.maps().into_iter().map(|(_, m)| m.zeros_like()).collect();
        let biases = self.biases().into_iter().map(|(_, b)| Array1::zeros(b.len())).collect();
        Cell::from_parts(self.kind(), maps, biases).expect("shapes copied from a valid cell")
    }
}
