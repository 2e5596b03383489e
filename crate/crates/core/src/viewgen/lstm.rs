//! Single-layer LSTM classifier trained with full-batch gradient descent.
//!
//! Gate pre-activations are stacked as `[input; forget; cell; output]` row
//! blocks of height `hidden`. The last hidden state feeds an affine head and a
//! softmax over the classes.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    input_size: usize,
    hidden: usize,
    classes: usize,
    input_scale: f64,
    w_input: DMatrix<f64>,
    w_hidden: DMatrix<f64>,
    bias: DVector<f64>,
    w_out: DMatrix<f64>,
    b_out: DVector<f64>,
}

/// Sequences as per-step `input × batch` matrices, already scaled.
struct Batch {
    steps: Vec<DMatrix<f64>>,
    steps_t: Vec<DMatrix<f64>>,
    labels: Vec<usize>,
}

struct StepCache {
    i: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    o: DMatrix<f64>,
    c: DMatrix<f64>,
    tanh_c: DMatrix<f64>,
    h: DMatrix<f64>,
}

struct Gradients {
    w_input: DMatrix<f64>,
    w_hidden: DMatrix<f64>,
    bias: DVector<f64>,
    w_out: DMatrix<f64>,
    b_out: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column-wise softmax; each column sums to one.
pub fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

impl SequenceModel {
    /// Uniform `±1/sqrt(hidden)` initialization with forget-gate bias 1.
    pub fn init(input_size: usize, hidden: usize, classes: usize, input_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        let w_input = draw(4 * hidden, input_size);
        let w_hidden = draw(4 * hidden, hidden);
        let w_out = draw(classes, hidden);
        let mut bias = DVector::zeros(4 * hidden);
        bias.rows_mut(hidden, hidden).fill(1.0);
        Self {
            input_size,
            hidden,
            classes,
            input_scale,
            w_input,
            w_hidden,
            bias,
            w_out,
            b_out: DVector::zeros(classes),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn parameter_count(&self) -> usize {
        let h4 = 4 * self.hidden;
        h4 * self.input_size + h4 * self.hidden + h4 + self.classes * self.hidden + self.classes
    }

    /// Parameters in the order input weights, recurrent weights, gate bias,
    /// head weights, head bias; matrices column-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(self.w_input.as_slice());
        out.extend_from_slice(self.w_hidden.as_slice());
        out.extend_from_slice(self.bias.as_slice());
        out.extend_from_slice(self.w_out.as_slice());
        out.extend_from_slice(self.b_out.as_slice());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::BadInput(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for dst in [
            self.w_input.as_mut_slice(),
            self.w_hidden.as_mut_slice(),
            self.bias.as_mut_slice(),
            self.w_out.as_mut_slice(),
            self.b_out.as_mut_slice(),
        ] {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
        Ok(())
    }

    /// Writes `input_size,hidden,classes,input_scale` then one parameter per line.
    pub fn write_params<W: Write>(&self, mut writer: W) -> Result<()> {
        let io = |e| Error::io("<model parameters>", e);
        writeln!(
            writer,
            "{},{},{},{:?}",
            self.input_size, self.hidden, self.classes, self.input_scale
        )
        .map_err(io)?;
        for v in self.to_flat() {
            writeln!(writer, "{v:?}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_params<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<model parameters>", e))?;
        let mut lines = text.lines();
        let bad = |what: &str| Error::BadInput(format!("malformed parameter file: {what}"));
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split(',').collect();
        if header.len() != 4 {
            return Err(bad("header"));
        }
        let dim = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("dimension"));
        let mut model = Self::init(
            dim(header[0])?,
            dim(header[1])?,
            dim(header[2])?,
            header[3].trim().parse().map_err(|_| bad("input scale"))?,
            0,
        );
        let flat = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        model.set_flat(&flat)?;
        Ok(model)
    }

    fn batch(&self, samples: &[(&DMatrix<f64>, usize)]) -> Result<Batch> {
        let steps_len = samples.first().map(|(f, _)| f.nrows()).unwrap_or(0);
        for (features, label) in samples {
            if features.ncols() != self.input_size || features.nrows() != steps_len {
                return Err(Error::BadInput("sequence shapes differ within a batch".into()));
            }
            if *label >= self.classes {
                return Err(Error::BadInput(format!(
                    "label {label} outside {} classes",
                    self.classes
                )));
            }
        }
        let b = samples.len();
        let steps: Vec<DMatrix<f64>> = (0..steps_len)
            .map(|t| DMatrix::from_fn(self.input_size, b, |n, s| samples[s].0[(t, n)] * self.input_scale))
            .collect();
        let steps_t = steps.iter().map(|m| m.transpose()).collect();
        Ok(Batch {
            steps,
            steps_t,
            labels: samples.iter().map(|(_, l)| *l).collect(),
        })
    }

    fn forward(&self, steps: &[DMatrix<f64>]) -> Vec<StepCache> {
        let hn = self.hidden;
        let b = steps.first().map(|m| m.ncols()).unwrap_or(0);
        let mut caches = Vec::with_capacity(steps.len());
        let mut h = DMatrix::<f64>::zeros(hn, b);
        let mut c = DMatrix::<f64>::zeros(hn, b);
        let mut z = DMatrix::zeros(4 * hn, b);
        for x in steps {
            z.gemm(1.0, &self.w_input, x, 0.0);
            z.gemm(1.0, &self.w_hidden, &h, 1.0);
            let mut i = DMatrix::zeros(hn, b);
            let mut f = DMatrix::zeros(hn, b);
            let mut g = DMatrix::zeros(hn, b);
            let mut o = DMatrix::zeros(hn, b);
            let mut c_next = DMatrix::zeros(hn, b);
            let mut tanh_c = DMatrix::zeros(hn, b);
            let mut h_next = DMatrix::zeros(hn, b);
            for s in 0..b {
                for r in 0..hn {
                    let iv = sigmoid(z[(r, s)] + self.bias[r]);
                    let fv = sigmoid(z[(hn + r, s)] + self.bias[hn + r]);
                    let gv = (z[(2 * hn + r, s)] + self.bias[2 * hn + r]).tanh();
                    let ov = sigmoid(z[(3 * hn + r, s)] + self.bias[3 * hn + r]);
                    let cv = fv * c[(r, s)] + iv * gv;
                    let tc = cv.tanh();
                    i[(r, s)] = iv;
                    f[(r, s)] = fv;
                    g[(r, s)] = gv;
                    o[(r, s)] = ov;
                    c_next[(r, s)] = cv;
                    tanh_c[(r, s)] = tc;
                    h_next[(r, s)] = ov * tc;
                }
            }
            h = h_next.clone();
            c = c_next.clone();
            caches.push(StepCache {
                i,
                f,
                g,
                o,
                c: c_next,
                tanh_c,
                h: h_next,
            });
        }
        caches
    }

    fn head(&self, last_hidden: &DMatrix<f64>) -> DMatrix<f64> {
        let mut logits = &self.w_out * last_hidden;
        for mut col in logits.column_iter_mut() {
            col += &self.b_out;
        }
        logits
    }

    fn last_hidden(&self, caches: &[StepCache], b: usize) -> DMatrix<f64> {
        caches
            .last()
            .map(|c| c.h.clone())
            .unwrap_or_else(|| DMatrix::zeros(self.hidden, b))
    }

    fn cross_entropy(probs: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let b = labels.len() as f64;
        -labels
            .iter()
            .enumerate()
            .map(|(s, &l)| probs[(l, s)].max(1e-300).ln())
            .sum::<f64>()
            / b
    }

    fn loss_and_gradients(&self, batch: &Batch) -> (f64, Gradients) {
        let hn = self.hidden;
        let b = batch.labels.len();
        let caches = self.forward(&batch.steps);
        let h_last = self.last_hidden(&caches, b);
        let probs = softmax_columns(&self.head(&h_last));
        let loss = Self::cross_entropy(&probs, &batch.labels);

        let mut dlogits = probs;
        for (s, &l) in batch.labels.iter().enumerate() {
            dlogits[(l, s)] -= 1.0;
        }
        dlogits /= b as f64;
        let w_out = &dlogits * h_last.transpose();
        let b_out = dlogits.column_sum();
        let mut dh = self.w_out.transpose() * &dlogits;
        let mut dc = DMatrix::<f64>::zeros(hn, b);

        let mut gw_input = DMatrix::zeros(4 * hn, self.input_size);
        let mut gw_hidden = DMatrix::zeros(4 * hn, hn);
        let mut gbias = DVector::zeros(4 * hn);
        let mut dz = DMatrix::<f64>::zeros(4 * hn, b);
        let zeros = DMatrix::<f64>::zeros(hn, b);
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let (c_prev, h_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&caches[t - 1].c, &caches[t - 1].h)
            };
            for s in 0..b {
                for r in 0..hn {
                    let (iv, fv, gv, ov, tc) = (
                        cache.i[(r, s)],
                        cache.f[(r, s)],
                        cache.g[(r, s)],
                        cache.o[(r, s)],
                        cache.tanh_c[(r, s)],
                    );
                    let dhv = dh[(r, s)];
                    let dcv = dc[(r, s)] + dhv * ov * (1.0 - tc * tc);
                    dz[(r, s)] = dcv * gv * iv * (1.0 - iv);
                    dz[(hn + r, s)] = dcv * c_prev[(r, s)] * fv * (1.0 - fv);
                    dz[(2 * hn + r, s)] = dcv * iv * (1.0 - gv * gv);
                    dz[(3 * hn + r, s)] = dhv * tc * ov * (1.0 - ov);
                    dc[(r, s)] = dcv * fv;
                }
            }
            gw_input.gemm(1.0, &dz, &batch.steps_t[t], 1.0);
            if t > 0 {
                gw_hidden.gemm(1.0, &dz, &h_prev.transpose(), 1.0);
            }
            gbias += dz.column_sum();
            dh.gemm_tr(1.0, &self.w_hidden, &dz, 0.0);
        }
        (
            loss,
            Gradients {
                w_input: gw_input,
                w_hidden: gw_hidden,
                bias: gbias,
                w_out,
                b_out,
            },
        )
    }

    /// Mean cross-entropy over `(features, label)` pairs.
    pub fn loss(&self, samples: &[(&DMatrix<f64>, usize)]) -> Result<f64> {
        let batch = self.batch(samples)?;
        let caches = self.forward(&batch.steps);
        let probs = softmax_columns(&self.head(&self.last_hidden(&caches, batch.labels.len())));
        Ok(Self::cross_entropy(&probs, &batch.labels))
    }

    /// Loss and its gradient, flattened in [`Self::to_flat`] order.
    pub fn loss_and_gradient(&self, samples: &[(&DMatrix<f64>, usize)]) -> Result<(f64, Vec<f64>)> {
        let batch = self.batch(samples)?;
        let (loss, g) = self.loss_and_gradients(&batch);
        let mut flat = Vec::with_capacity(self.parameter_count());
        flat.extend_from_slice(g.w_input.as_slice());
        flat.extend_from_slice(g.w_hidden.as_slice());
        flat.extend_from_slice(g.bias.as_slice());
        flat.extend_from_slice(g.w_out.as_slice());
        flat.extend_from_slice(g.b_out.as_slice());
        Ok((loss, flat))
    }

    /// Plain full-batch gradient descent; returns the loss before each epoch's update.
    pub fn fit(&mut self, samples: &[(&DMatrix<f64>, usize)], epochs: usize, learning_rate: f64) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let batch = self.batch(samples)?;
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let (loss, g) = self.loss_and_gradients(&batch);
            history.push(loss);
            self.w_input -= g.w_input * learning_rate;
            self.w_hidden -= g.w_hidden * learning_rate;
            self.bias -= g.bias * learning_rate;
            self.w_out -= g.w_out * learning_rate;
            self.b_out -= g.b_out * learning_rate;
        }
        Ok(history)
    }

    /// Class logits for one `steps × input_size` sequence.
    pub fn logits(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        if features.ncols() != self.input_size {
            return Err(Error::BadInput(format!(
                "sequence has {} inputs, model expects {}",
                features.ncols(),
                self.input_size
            )));
        }
        let steps: Vec<DMatrix<f64>> = (0..features.nrows())
            .map(|t| DMatrix::from_fn(self.input_size, 1, |n, _| features[(t, n)] * self.input_scale))
            .collect();
        let caches = self.forward(&steps);
        Ok(self.head(&self.last_hidden(&caches, 1)).column(0).into_owned())
    }

    pub fn probabilities(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        let logits = self.logits(features)?;
        Ok(
            softmax_columns(&DMatrix::from_column_slice(logits.len(), 1, logits.as_slice()))
                .column(0)
                .into_owned(),
        )
    }

    /// Predicted class: argmax of the logits, lowest index on ties.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<usize> {
        Ok(argmax_lowest(self.logits(features)?.iter().copied()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_samples(seed: u64, count: usize, steps: usize) -> Vec<(DMatrix<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let m = DMatrix::from_fn(steps, 2, |_, _| rng.random_range(-1.0..1.0));
                let label = usize::from(m.row_sum()[0] < m.row_sum()[1]);
                (m, label)
            })
            .collect()
    }

    fn refs(samples: &[(DMatrix<f64>, usize)]) -> Vec<(&DMatrix<f64>, usize)> {
        samples.iter().map(|(m, l)| (m, *l)).collect()
    }

    #[test]
    fn softmax_sums_to_one() {
        let logits = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 700.0, -700.0, 0.0]);
        let p = softmax_columns(&logits);
        for col in p.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest([0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_lowest([0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_lowest([0.0; 4]), 0);
    }

    #[test]
    fn flat_round_trip() {
        let model = SequenceModel::init(3, 4, 3, 1.0, 9);
        let mut buf = Vec::new();
        model.write_params(&mut buf).unwrap();
        let back = SequenceModel::read_params(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(model.to_flat().len(), model.parameter_count());
    }

    #[test]
    fn repeated_sample_loss_decreases() {
        let samples = toy_samples(1, 1, 4);
        let mut model = SequenceModel::init(2, 4, 2, 1.0, 3);
        let history = model.fit(&refs(&samples), 10, 0.1).unwrap();
        assert!(history.windows(2).all(|w| w[1] < w[0]), "{history:?}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let samples = toy_samples(5, 6, 3);
        let model = SequenceModel::init(2, 4, 2, 1.0, 11);
        let (_, analytic) = model.loss_and_gradient(&refs(&samples)).unwrap();
        let flat = model.to_flat();
        let step = 1e-5;
        let mut probe = model.clone();
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += step;
            probe.set_flat(&p).unwrap();
            let up = probe.loss(&refs(&samples)).unwrap();
            p[k] -= 2.0 * step;
            probe.set_flat(&p).unwrap();
            let down = probe.loss(&refs(&samples)).unwrap();
            let numeric = (up - down) / (2.0 * step);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "parameter {k}: {} vs {numeric}", analytic[k]);
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut model = SequenceModel::init(2, 4, 2, 1.0, 3);
        assert!(matches!(model.fit(&[], 5, 0.1), Err(Error::InsufficientData { .. })));
    }
}
