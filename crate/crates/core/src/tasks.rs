//! Task heads, losses, metrics and recurrent parameter accounting.
//!
//! Parameter counts cover the recurrent cell only: for every gate, the input
//! map, the hidden map and one bias vector. Projection and output layers are
//! not counted.

use std::fmt::Write as _;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::rnn_cells::{CellDescription, CellKind, Parameterization};
use crate::tt_format::tt_param_count;
use crate::tt_linear::LinearMap;

/// Number of piano keys in a piano-roll frame.
pub const NOTES: usize = 88;

/// Recurrent parameter count of a TT or dense cell compared against a dense baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelReport {
    pub rnn_param_count: usize,
    pub baseline_param_count: usize,
}

impl ModelReport {
    pub fn new(rnn_param_count: usize, baseline_param_count: usize) -> Self {
        ModelReport {
            rnn_param_count,
            baseline_param_count,
        }
    }

    pub fn compression_ratio(&self) -> f64 {
        self.baseline_param_count as f64 / self.rnn_param_count as f64
    }

    pub fn to_kv(&self, model: &str) -> String {
        format!(
            "model={model} rnn_params={} baseline_params={} compression={:.2}",
            self.rnn_param_count,
            self.baseline_param_count,
            self.compression_ratio()
        )
    }
}

/// Parameters of one cell, exact.
pub fn cell_param_count(desc: &CellDescription) -> Result<usize> {
    let m = desc.hidden_dim;
    let per_gate = match &desc.parameterization {
        Parameterization::Dense => m * desc.input_dim + m * m + m,
        Parameterization::Tt { .. } => {
            let (x, h) = desc.tt_specs()?.expect("tt parameterization");
            tt_param_count(&x, false) + tt_param_count(&h, false) + m
        }
    };
    Ok(desc.kind.gates() * per_gate)
}

/// Report against the dense cell of the same kind and dims.
pub fn count_cell_params(desc: &CellDescription) -> Result<ModelReport> {
    let baseline = CellDescription::dense(desc.kind, desc.input_dim, desc.hidden_dim);
    count_cell_params_against(desc, &baseline)
}

pub fn count_cell_params_against(desc: &CellDescription, baseline: &CellDescription) -> Result<ModelReport> {
    Ok(ModelReport::new(cell_param_count(desc)?, cell_param_count(baseline)?))
}

/// Names like `TT-GRU-H10x10-R3` or `RNN-H512`.
pub fn model_name(desc: &CellDescription) -> String {
    let base = match desc.kind {
        CellKind::Srnn => "SRNN",
        CellKind::Gru => "GRU",
    };
    match &desc.parameterization {
        Parameterization::Dense => {
            let base = if desc.kind == CellKind::Srnn { "RNN" } else { base };
            format!("{base}-H{}", desc.hidden_dim)
        }
        Parameterization::Tt { hidden_modes, ranks, .. } => {
            let modes: Vec<String> = hidden_modes.iter().map(|m| m.to_string()).collect();
            let interior = &ranks[1..ranks.len() - 1];
            let rank = if interior.is_empty() {
                "1".to_string()
            } else if interior.iter().all(|&r| r == interior[0]) {
                interior[0].to_string()
            } else {
                interior.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("-")
            };
            format!("TT-{base}-H{}-R{rank}", modes.join("x"))
        }
    }
}

/// Aligned plain-text table with the columns `Model | RNN Params | Compr.`.
pub fn format_report_table(rows: &[(String, ModelReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>8}", "Model", "RNN Params", "Compr.");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>8.2}",
            name,
            r.rnn_param_count,
            r.compression_ratio()
        );
    }
    out
}

/// Softmax cross-entropy over a batch of logits.
#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    /// Mean over the batch.
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    /// `dloss/dlogits` for the mean loss.
    pub grad_logits: Array2<f64>,
}

pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<ClassificationOutcome> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut loss = 0.0;
    let mut correct = 0;
    for (b, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[labels[b]];
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if argmax == labels[b] {
            correct += 1;
        }
        for (c, &v) in row.iter().enumerate() {
            grad[[b, c]] = (v - log_z).exp() / batch as f64;
        }
        grad[[b, labels[b]]] -= 1.0 / batch as f64;
    }
    Ok(ClassificationOutcome {
        loss: loss / batch as f64,
        accuracy: correct as f64 / batch as f64,
        correct,
        grad_logits: grad,
    })
}

/// Applies the output layer to the final hidden state and scores it.
pub fn classification_loss(last_hidden: ArrayView2<f64>, output: &LinearMap, labels: &[usize]) -> Result<ClassificationOutcome> {
    let logits = output.forward(last_hidden)?;
    softmax_cross_entropy(logits.view(), labels)
}

fn check_frames(targets: &ArrayView3<f64>, other: (usize, usize, usize), mask: &ArrayView2<f64>) -> Result<()> {
    if targets.dim() != other {
        return Err(Error::Shape(format!("targets {:?} vs predictions {:?}", targets.dim(), other)));
    }
    if mask.dim() != (other.0, other.1) {
        return Err(Error::Shape(format!("mask {:?} vs frames {:?}", mask.dim(), other)));
    }
    Ok(())
}

/// Sum of per-step Bernoulli NLL and the number of valid steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllSum {
    pub total: f64,
    pub steps: usize,
}

impl NllSum {
    pub fn mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total / self.steps as f64
        }
    }
}

/// Mean over valid steps of `sum_notes -[y ln p + (1-y) ln(1-p)]`, from probabilities.
pub fn prediction_nll(probs: ArrayView3<f64>, targets: ArrayView3<f64>, mask: ArrayView2<f64>) -> Result<f64> {
    check_frames(&targets, probs.dim(), &mask)?;
    const CLAMP: f64 = 1e-12;
    let mut sum = NllSum::default();
    for ((b, t), &valid) in mask.indexed_iter() {
        if valid == 0.0 {
            continue;
        }
        sum.steps += 1;
        for (&p, &y) in probs.slice(s![b, t, ..]).iter().zip(targets.slice(s![b, t, ..])) {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            sum.total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    Ok(sum.mean())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// NLL from logits; also returns `d(total / steps)/dlogits` (zero on masked steps).
pub fn prediction_nll_from_logits(
    logits: ArrayView3<f64>,
    targets: ArrayView3<f64>,
    mask: ArrayView2<f64>,
) -> Result<(NllSum, Array3<f64>)> {
    check_frames(&targets, logits.dim(), &mask)?;
    let mut sum = NllSum::default();
    let mut grad = Array3::zeros(logits.dim());
    for ((b, t), &valid) in mask.indexed_iter() {
        if valid == 0.0 {
            continue;
        }
        sum.steps += 1;
        for (n, (&z, &y)) in logits.slice(s![b, t, ..]).iter().zip(targets.slice(s![b, t, ..])).enumerate() {
            // -[y ln s(z) + (1-y) ln(1-s(z))] = y softplus(-z) + (1-y) softplus(z)
            sum.total += y * softplus(-z) + (1.0 - y) * softplus(z);
            grad[[b, t, n]] = sigmoid(z) - y;
        }
    }
    if sum.steps > 0 {
        grad /= sum.steps as f64;
    }
    Ok((sum, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl FrameCounts {
    pub fn accuracy(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn add(&mut self, other: FrameCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Pooled TP/FP/FN over valid (step, note) pairs; true negatives are ignored.
pub fn frame_counts(pred: ArrayView3<f64>, targets: ArrayView3<f64>, mask: ArrayView2<f64>) -> Result<FrameCounts> {
    check_frames(&targets, pred.dim(), &mask)?;
    let mut c = FrameCounts::default();
    for ((b, t), &valid) in mask.indexed_iter() {
        if valid == 0.0 {
            continue;
        }
        for (&p, &y) in pred.slice(s![b, t, ..]).iter().zip(targets.slice(s![b, t, ..])) {
            match (p >= 0.5, y >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

/// `TP / (TP + FP + FN)`, defined as 1 when nothing is on in either.
pub fn frame_accuracy(pred: ArrayView3<f64>, targets: ArrayView3<f64>, mask: ArrayView2<f64>) -> Result<f64> {
    Ok(frame_counts(pred, targets, mask)?.accuracy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Prediction,
}

/// Metrics of one batch, in sums so that batches can be pooled exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchEval {
    /// Sum of per-sample losses (classification) or per-step NLL (prediction).
    pub loss_sum: f64,
    /// Samples (classification) or valid steps (prediction).
    pub count: usize,
    pub correct: usize,
    pub frames: FrameCounts,
}

impl BatchEval {
    pub fn add(&mut self, other: &BatchEval) {
        self.loss_sum += other.loss_sum;
        self.count += other.count;
        self.correct += other.correct;
        self.frames.add(other.frames);
    }

    pub fn mean_loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Input projection, recurrent cell and output layer.
///
/// Classification reads the final hidden state into a softmax over classes.
/// Prediction emits per-note logits at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub task: Task,
    pub projection: Option<LinearMap>,
    pub cell: crate::rnn_cells::Cell,
    pub output: LinearMap,
}

impl SequenceModel {
    pub fn new(
        task: Task,
        projection: Option<LinearMap>,
        cell: crate::rnn_cells::Cell,
        output: LinearMap,
    ) -> Result<Self> {
        if let Some(p) = &projection {
            if p.out_dim() != cell.input_dim() {
                return Err(Error::Shape(format!(
                    "projection width {} does not match cell input {}",
                    p.out_dim(),
                    cell.input_dim()
                )));
            }
        }
        let expected_out = match task {
            Task::Classification { classes } => classes,
            Task::Prediction => NOTES,
        };
        if output.in_dim() != cell.hidden_dim() || output.out_dim() != expected_out {
            return Err(Error::Shape(format!(
                "output layer is {}x{}, expected {}x{}",
                output.out_dim(),
                output.in_dim(),
                expected_out,
                cell.hidden_dim()
            )));
        }
        Ok(SequenceModel {
            task,
            projection,
            cell,
            output,
        })
    }

    pub fn raw_input_dim(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.cell.input_dim(), |p| p.in_dim())
    }

    fn project(&self, inputs: &Array3<f64>) -> Result<(Array3<f64>, Option<Array2<f64>>)> {
        let (b, t, n) = inputs.dim();
        if n != self.raw_input_dim() {
            return Err(Error::Shape(format!(
                "inputs have width {n}, model expects {}",
                self.raw_input_dim()
            )));
        }
        match &self.projection {
            None => Ok((inputs.clone(), None)),
            Some(p) => {
                let flat = inputs
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((b * t, n))
                    .expect("contiguous");
                let y = p.forward(flat.view())?;
                let y = y.into_shape_with_order((b, t, p.out_dim())).expect("contiguous");
                Ok((y, Some(flat)))
            }
        }
    }

    /// Loss and metrics without gradients.
    pub fn evaluate(&self, batch: &crate::data::SequenceBatch) -> Result<BatchEval> {
        Ok(self.run(batch, false)?.0)
    }

    /// Loss, metrics and the gradient of the batch-mean loss.
    pub fn loss_and_grad(&self, batch: &crate::data::SequenceBatch) -> Result<(BatchEval, SequenceModel)> {
        let (eval, grads) = self.run(batch, true)?;
        Ok((eval, grads.expect("requested")))
    }

    /// Per-note probabilities `B x T x 88` of a prediction model.
    pub fn predict_probs(&self, inputs: &Array3<f64>, mask: &Array2<f64>) -> Result<Array3<f64>> {
        let (projected, _) = self.project(inputs)?;
        let hs = crate::rnn_cells::unroll(&self.cell, projected.view(), None, Some(mask.view()))?;
        let (b, t, m) = hs.dim();
        let flat = hs.into_shape_with_order((b * t, m)).expect("contiguous");
        let logits = self.output.forward(flat.view())?;
        Ok(logits.mapv(sigmoid).into_shape_with_order((b, t, self.output.out_dim())).expect("contiguous"))
    }

    fn run(&self, batch: &crate::data::SequenceBatch, want_grad: bool) -> Result<(BatchEval, Option<SequenceModel>)> {
        use crate::data::Targets;
        let (projected, flat_inputs) = self.project(&batch.inputs)?;
        let trace = self
            .cell
            .forward_trace(projected.view(), None, Some(batch.mask.view()))?;
        let hs = trace.hidden_states();
        let (b, t, m) = hs.dim();
        let mut grads = want_grad.then(|| self.zeros_like());
        let mut grad_hidden = Array3::zeros((b, t, m));
        let mut eval = BatchEval::default();

        match (&self.task, &batch.targets) {
            (Task::Classification { .. }, Targets::Labels(labels)) => {
                let last = trace.final_state();
                let logits = self.output.forward(last.view())?;
                let out = softmax_cross_entropy(logits.view(), labels)?;
                eval.loss_sum = out.loss * b as f64;
                eval.count = b;
                eval.correct = out.correct;
                if let Some(g) = grads.as_mut() {
                    let go = self.output.backward(last.view(), out.grad_logits.view())?;
                    g.output.add_grads(&go)?;
                    grad_hidden.slice_mut(s![.., t - 1, ..]).assign(&go.input);
                }
            }
            (Task::Prediction, Targets::Frames(targets)) => {
                let flat = hs.to_owned().into_shape_with_order((b * t, m)).expect("contiguous");
                let logits = self.output.forward(flat.view())?;
                let notes = self.output.out_dim();
                let logits = logits.into_shape_with_order((b, t, notes)).expect("contiguous");
                let (nll, grad_logits) = prediction_nll_from_logits(logits.view(), targets.view(), batch.mask.view())?;
                let pred = logits.mapv(|z| if z >= 0.0 { 1.0 } else { 0.0 });
                eval.loss_sum = nll.total;
                eval.count = nll.steps;
                eval.frames = frame_counts(pred.view(), targets.view(), batch.mask.view())?;
                if let Some(g) = grads.as_mut() {
                    let gl = grad_logits.into_shape_with_order((b * t, notes)).expect("contiguous");
                    let go = self.output.backward(flat.view(), gl.view())?;
                    g.output.add_grads(&go)?;
                    grad_hidden = go.input.into_shape_with_order((b, t, m)).expect("contiguous");
                }
            }
            _ => return Err(Error::Data("batch targets do not match the model task".into())),
        }

        if let Some(g) = grads.as_mut() {
            let cg = trace.backward(grad_hidden.view())?;
            g.cell.accumulate(&cg.params);
            if let (Some(p), Some(flat), Some(gp)) = (&self.projection, &flat_inputs, g.projection.as_mut()) {
                let gi = cg
                    .inputs
                    .into_shape_with_order((b * t, p.out_dim()))
                    .expect("contiguous");
                gp.add_grads(&p.backward(flat.view(), gi.view())?)?;
            }
        }
        Ok((eval, grads))
    }
}

impl Parameterized for SequenceModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        if let Some(p) = &self.projection {
            p.visit(&mut |n, v| f(&format!("projection.{n}"), v));
        }
        self.cell.visit(&mut |n, v| f(&format!("cell.{n}"), v));
        self.output.visit(&mut |n, v| f(&format!("output.{n}"), v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(p) = &mut self.projection {
            p.visit_mut(&mut |n, v| f(&format!("projection.{n}"), v));
        }
        self.cell.visit_mut(&mut |n, v| f(&format!("cell.{n}"), v));
        self.output.visit_mut(&mut |n, v| f(&format!("output.{n}"), v));
    }

    fn zeros_like(&self) -> Self {
        SequenceModel {
            task: self.task,
            projection: self.projection.as_ref().map(|p| p.zeros_like()),
            cell: self.cell.zeros_like(),
            output: self.output.zeros_like(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gru256() -> CellDescription {
        CellDescription::dense(CellKind::Gru, 32, 256)
    }

    #[test]
    fn dense_gru_count() {
        assert_eq!(cell_param_count(&gru256()).unwrap(), 221952);
        assert_eq!(cell_param_count(&gru256()).unwrap(), 3 * (256 * 32 + 256 * 256 + 256));
    }

    #[test]
    fn tt_gru_count_and_ratio() {
        let tt = CellDescription::tt(CellKind::Gru, &[4, 8], &[10, 10], 3);
        let r = count_cell_params_against(&tt, &gru256()).unwrap();
        assert_eq!(r.rnn_param_count, 3 * (360 + 600 + 100));
        assert_eq!(r.rnn_param_count, 3180);
        assert_eq!(format!("{:.1}", r.compression_ratio()), "69.8");
    }

    #[test]
    fn tt_srnn_h8x4x8x4_r5() {
        let tt = CellDescription::tt(CellKind::Srnn, &[4, 4, 4, 4], &[8, 4, 8, 4], 3);
        let base = CellDescription::dense(CellKind::Srnn, 256, 512);
        let r = count_cell_params_against(&tt, &base).unwrap();
        assert_eq!(r.rnn_param_count, 576 + 960 + 1024);
        assert_eq!(r.baseline_param_count, 393728);
        assert_eq!(format!("{:.2}", r.compression_ratio()), "153.80");
    }

    #[test]
    fn gru_is_three_srnns() {
        for (inp, hid) in [(vec![4, 8], vec![10, 10]), (vec![4, 4, 4, 4], vec![8, 4, 8, 4])] {
            for rank in [3, 5, 7] {
                let g = cell_param_count(&CellDescription::tt(CellKind::Gru, &inp, &hid, rank)).unwrap();
                let s = cell_param_count(&CellDescription::tt(CellKind::Srnn, &inp, &hid, rank)).unwrap();
                assert_eq!(g, 3 * s);
            }
        }
        assert_eq!(
            cell_param_count(&CellDescription::dense(CellKind::Gru, 256, 512)).unwrap(),
            3 * cell_param_count(&CellDescription::dense(CellKind::Srnn, 256, 512)).unwrap()
        );
    }

    #[test]
    fn names() {
        assert_eq!(model_name(&CellDescription::tt(CellKind::Gru, &[4, 8], &[10, 10], 3)), "TT-GRU-H10x10-R3");
        assert_eq!(model_name(&CellDescription::dense(CellKind::Srnn, 256, 512)), "RNN-H512");
        assert_eq!(model_name(&gru256()), "GRU-H256");
    }

    #[test]
    fn report_outputs() {
        let r = ModelReport::new(4864, 393728);
        assert_eq!(r.to_kv("X"), "model=X rnn_params=4864 baseline_params=393728 compression=80.95");
        let table = format_report_table(&[("RNN-H512".into(), ModelReport::new(393728, 393728)), ("X".into(), r)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with("80.95"));
        assert_eq!(lines[1].len(), lines[2].len());
    }

    #[test]
    fn uniform_logits_loss() {
        let out = softmax_cross_entropy(Array2::zeros((3, 10)).view(), &[0, 4, 9]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits() {
        let mut logits = Array2::zeros((2, 10));
        logits[[0, 3]] = 60.0;
        logits[[1, 7]] = 60.0;
        let out = softmax_cross_entropy(logits.view(), &[3, 7]).unwrap();
        assert!(out.loss < 1e-20);
        assert_eq!(out.accuracy, 1.0);
    }

    #[test]
    fn cross_entropy_by_hand() {
        let logits: Array2<f64> = array![[0.5, -1.0, 2.0], [1.0, 1.0, 0.0], [-0.3, 0.2, 0.1], [3.0, -2.0, 0.5]];
        let labels = [2, 0, 1, 1];
        let mut expected = 0.0;
        for (row, &l) in logits.rows().into_iter().zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[l].exp() / z).ln();
        }
        expected /= 4.0;
        let out = softmax_cross_entropy(logits.view(), &labels).unwrap();
        assert!((out.loss - expected).abs() <= 1e-12);
        assert_eq!(out.correct, 3);
    }

    #[test]
    fn bad_label() {
        assert!(matches!(
            softmax_cross_entropy(Array2::zeros((1, 10)).view(), &[10]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn half_probability_nll() {
        let probs = Array3::from_elem((2, 3, NOTES), 0.5);
        let mut targets = Array3::zeros((2, 3, NOTES));
        targets[[0, 1, 5]] = 1.0;
        let mask = Array2::ones((2, 3));
        let nll = prediction_nll(probs.view(), targets.view(), mask.view()).unwrap();
        assert!((nll - 88.0 * 2f64.ln()).abs() <= 1e-12);
        let (sum, _) = prediction_nll_from_logits(Array3::zeros((2, 3, NOTES)).view(), targets.view(), mask.view()).unwrap();
        assert!((sum.mean() - 88.0 * 2f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn nll_by_hand() {
        let probs = Array3::from_shape_vec((1, 1, 3), vec![0.9, 0.2, 0.6]).unwrap();
        let targets = Array3::from_shape_vec((1, 1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln());
        let nll = prediction_nll(probs.view(), targets.view(), Array2::ones((1, 1)).view()).unwrap();
        assert!((nll - expected).abs() <= 1e-12);
    }

    #[test]
    fn perfect_predictions_have_zero_nll() {
        let targets = Array3::from_shape_fn((1, 4, NOTES), |(_, t, n)| ((t + n) % 3 == 0) as u8 as f64);
        let nll = prediction_nll(targets.view(), targets.view(), Array2::ones((1, 4)).view()).unwrap();
        assert!(nll < 1e-9);
    }

    #[test]
    fn nll_improves_toward_target() {
        let targets = Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap();
        let mask = Array2::ones((1, 1));
        let a = Array3::from_shape_vec((1, 1, 2), vec![0.4, 0.3]).unwrap();
        let b = Array3::from_shape_vec((1, 1, 2), vec![0.5, 0.3]).unwrap();
        let c = Array3::from_shape_vec((1, 1, 2), vec![0.5, 0.2]).unwrap();
        let na = prediction_nll(a.view(), targets.view(), mask.view()).unwrap();
        let nb = prediction_nll(b.view(), targets.view(), mask.view()).unwrap();
        let nc = prediction_nll(c.view(), targets.view(), mask.view()).unwrap();
        assert!(nb < na && nc < nb);
    }

    fn frames(rows: &[&[u8]]) -> Array3<f64> {
        let notes = rows[0].len();
        Array3::from_shape_fn((1, rows.len(), notes), |(_, t, n)| rows[t][n] as f64)
    }

    #[test]
    fn frame_accuracy_cases() {
        let target = frames(&[&[1, 0, 1, 0], &[0, 1, 0, 0]]);
        let mask = Array2::ones((1, 2));
        assert_eq!(frame_accuracy(target.view(), target.view(), mask.view()).unwrap(), 1.0);
        let off = Array3::zeros(target.dim());
        assert_eq!(frame_accuracy(off.view(), target.view(), mask.view()).unwrap(), 0.0);

        // TP = 3, FP = 1, FN = 2
        let target = frames(&[&[1, 1, 1, 1, 1, 0]]);
        let pred = frames(&[&[1, 1, 1, 0, 0, 1]]);
        let c = frame_counts(pred.view(), target.view(), Array2::ones((1, 1)).view()).unwrap();
        assert_eq!(c, FrameCounts { tp: 3, fp: 1, fn_: 2 });
        assert_eq!(c.accuracy(), 0.5);

        let nothing = Array3::zeros((1, 1, 4));
        assert_eq!(frame_accuracy(nothing.view(), nothing.view(), Array2::ones((1, 1)).view()).unwrap(), 1.0);
    }

    #[test]
    fn frame_accuracy_ignores_masked_steps() {
        let target = frames(&[&[1, 0], &[1, 1]]);
        let pred = frames(&[&[1, 0], &[0, 0]]);
        let mask = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        assert_eq!(frame_accuracy(pred.view(), target.view(), mask.view()).unwrap(), 1.0);
    }
}
