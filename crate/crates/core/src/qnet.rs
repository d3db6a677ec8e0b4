//! Fully connected Q-value network with ReLU hidden layers, a linear output,
//! MSE loss and Adam, plus a portable text model format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;

pub const MODEL_FORMAT: &str = "drlfwd-qnet";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub val_split: f64,
    pub gamma: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lr: 1e-4, batch: 32, epochs: 10, val_split: 0.2, gamma: 0.99 }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Gradients (or Adam moments), shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    fn zeros_like(layers: &[Dense]) -> Self {
        Grads {
            layers: layers
                .iter()
                .map(|l| Dense { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.raw_dim()) })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Grads,
    pub v: Grads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layers: Vec<Dense>,
    pub adam: AdamState,
    pub schema_hash: String,
    pub hyper: Hyper,
    /// Free-form provenance recorded in model files (config digest, seed...).
    pub meta: Vec<(String, String)>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl QNetwork {
    /// Network with layer widths `dims` (input first), He-uniform weights and zero biases.
    pub fn new(dims: &[usize], schema_hash: &str, hyper: Hyper, seed: u64) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer dims {dims:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = dims
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
                Dense { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        let adam = AdamState { step: 0, m: Grads::zeros_like(&layers), v: Grads::zeros_like(&layers) };
        QNetwork { layers, adam, schema_hash: schema_hash.to_string(), hyper, meta: Vec::new() }
    }

    /// `[F, 10F, F/2, 1]` for the given schema.
    pub fn for_schema(schema: &FeatureSchema, hyper: Hyper, seed: u64) -> Self {
        let f = schema.dim();
        Self::new(&[f, 10 * f, f / 2, 1], &schema.hash(), hyper, seed)
    }

    pub fn zeros(dims: &[usize], schema_hash: &str) -> Self {
        let mut net = Self::new(dims, schema_hash, Hyper::default(), 0);
        for l in &mut net.layers {
            l.w.fill(0.0);
        }
        net
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        let h = schema.hash();
        if h != self.schema_hash {
            return Err(Error::SchemaMismatch { expected: h, found: self.schema_hash.clone() });
        }
        if schema.dim() != self.input_dim() {
            return Err(Error::Dimension { expected: schema.dim(), got: self.input_dim() });
        }
        Ok(())
    }

    /// Q-values for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    /// Forward pass for inputs of the form `[state | action]` where many rows
    /// share a state: row `r` is `[states[owner[r]] | actions[r]]`. The state
    /// half of the first layer is computed once per state.
    pub fn forward_grouped(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, owner: &[usize]) -> Array1<f64> {
        let sd = states.ncols();
        let first = &self.layers[0];
        debug_assert_eq!(sd + actions.ncols(), first.w.ncols());
        debug_assert_eq!(owner.len(), actions.nrows());
        let hs = states.dot(&first.w.slice(s![.., ..sd]).t());
        let mut a = actions.dot(&first.w.slice(s![.., sd..]).t());
        let last = self.layers.len() - 1;
        for (mut row, &o) in a.outer_iter_mut().zip(owner) {
            row += &hs.row(o);
            row += &first.b;
            if last > 0 {
                row.mapv_inplace(relu);
            }
        }
        for (i, l) in self.layers.iter().enumerate().skip(1) {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    pub fn q(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.len() });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row shape");
        Ok(self.forward_batch(x)[0])
    }

    /// Q-value of one state/action pair.
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = Vec::with_capacity(state.len() + action.len());
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        self.q(&input)
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>, targets: ArrayView1<f64>) -> (f64, Grads) {
        let n = x.nrows() as f64;
        let last = self.layers.len() - 1;
        // Activations per layer input, and pre-activations.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w.t());
            z += &l.b;
            let a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let y = acts[self.layers.len()].column(0);
        let diff = &y - &targets;
        let loss = diff.mapv(|d| d * d).sum() / n;

        let mut grads = Grads::zeros_like(&self.layers);
        let mut delta: Array2<f64> = (diff.mapv(|d| 2.0 * d / n)).insert_axis(Axis(1));
        for i in (0..self.layers.len()).rev() {
            if i < last {
                delta.zip_mut_with(&pre[i], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads.layers[i].w = delta.t().dot(&acts[i]);
            grads.layers[i].b = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].w);
            }
        }
        (loss, grads)
    }

    pub fn mse(&self, batch: &TrainBatch) -> f64 {
        let y = self.forward_batch(batch.inputs.view());
        (&y - &batch.targets).mapv(|d| d * d).sum() / batch.len() as f64
    }

    pub fn adam_step(&mut self, grads: &Grads) {
        let lr = self.hyper.lr;
        let st = &mut self.adam;
        st.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(st.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(st.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        };
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let (m, v) = (&mut st.m.layers[li], &mut st.v.layers[li]);
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(
                |p, &g, m, v| update(p, g, m, v),
            );
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(
                |p, &g, m, v| update(p, g, m, v),
            );
        }
    }

    /// Runs `hyper.epochs` passes of Adam over `batches` in the given order.
    /// The trailing `val_split` fraction of batches is held out and only
    /// reported.
    pub fn train_epochs(&mut self, batches: &[TrainBatch]) -> Result<LossTrace> {
        if batches.is_empty() {
            return Ok(LossTrace::default());
        }
        let held = ((batches.len() as f64) * self.hyper.val_split).floor() as usize;
        let held = held.min(batches.len() - 1);
        let (train, val) = batches.split_at(batches.len() - held);
        let mut trace = LossTrace::default();
        for epoch in 0..self.hyper.epochs {
            let mut total = 0.0;
            let mut count = 0usize;
            for (bi, b) in train.iter().enumerate() {
                if b.is_empty() {
                    continue;
                }
                let (loss, grads) = self.loss_and_grads(b.inputs.view(), b.targets.view());
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                self.adam_step(&grads);
                total += loss * b.len() as f64;
                count += b.len();
            }
            let val_loss = if val.is_empty() {
                None
            } else {
                let n: usize = val.iter().map(|b| b.len()).sum();
                Some(val.iter().map(|b| self.mse(b) * b.len() as f64).sum::<f64>() / n as f64)
            };
            trace.epochs.push(EpochLoss { train: total / count.max(1) as f64, val: val_loss });
        }
        Ok(trace)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    // ----- model files -----

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        let h = &self.hyper;
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        writeln!(s, "{MODEL_FORMAT} {MODEL_VERSION}").unwrap();
        writeln!(s, "dims {}", dims.join(" ")).unwrap();
        writeln!(s, "schema_hash {}", self.schema_hash).unwrap();
        writeln!(s, "lr {}", fmt_f64(h.lr)).unwrap();
        writeln!(s, "batch {}", h.batch).unwrap();
        writeln!(s, "epochs {}", h.epochs).unwrap();
        writeln!(s, "val_split {}", fmt_f64(h.val_split)).unwrap();
        writeln!(s, "gamma {}", fmt_f64(h.gamma)).unwrap();
        writeln!(s, "adam_step {}", self.adam.step).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        let sections: [(&str, &Grads); 2] = [("adam_m", &self.adam.m), ("adam_v", &self.adam.v)];
        let params = Grads { layers: self.layers.clone() };
        for (name, set) in std::iter::once(("param", &params)).chain(sections) {
            for (i, l) in set.layers.iter().enumerate() {
                writeln!(s, "{name} {i} w {} {}", l.w.nrows(), l.w.ncols()).unwrap();
                for row in l.w.rows() {
                    write_row(&mut s, row.iter());
                }
                writeln!(s, "{name} {i} b {}", l.b.len()).unwrap();
                write_row(&mut s, l.b.iter());
            }
        }
        writeln!(s, "end").unwrap();
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::ModelFormat { line: 0, msg: "unexpected end of file".into() }),
            }
        };
        let bad = |line: usize, msg: String| Error::ModelFormat { line, msg };

        let (ln, head) = next()?;
        let mut it = head.split_whitespace();
        if it.next() != Some(MODEL_FORMAT) {
            return Err(bad(ln, "not a model file".into()));
        }
        let version: u32 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(ln, "missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(bad(ln, format!("unsupported model version {version}")));
        }
        let field = |ln: usize, line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(|r| r.trim().to_string())
                .ok_or_else(|| bad(ln, format!("expected '{key}'")))
        };
        let num = |ln: usize, v: String| -> Result<f64> { v.parse().map_err(|_| bad(ln, format!("bad number '{v}'"))) };
        let int = |ln: usize, v: String| -> Result<u64> { v.parse().map_err(|_| bad(ln, format!("bad integer '{v}'"))) };

        let (ln, l) = next()?;
        let dims: Vec<usize> = field(ln, &l, "dims")?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| bad(ln, format!("bad dim '{d}'"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(bad(ln, "need at least two non-zero dims".into()));
        }
        let (ln, l) = next()?;
        let schema_hash = field(ln, &l, "schema_hash")?;
        let (ln, l) = next()?;
        let lr = num(ln, field(ln, &l, "lr")?)?;
        let (ln, l) = next()?;
        let batch = int(ln, field(ln, &l, "batch")?)? as usize;
        let (ln, l) = next()?;
        let epochs = int(ln, field(ln, &l, "epochs")?)? as usize;
        let (ln, l) = next()?;
        let val_split = num(ln, field(ln, &l, "val_split")?)?;
        let (ln, l) = next()?;
        let gamma = num(ln, field(ln, &l, "gamma")?)?;
        let (ln, l) = next()?;
        let step = int(ln, field(ln, &l, "adam_step")?)?;

        let mut net = QNetwork::zeros(&dims, &schema_hash);
        net.hyper = Hyper { lr, batch, epochs, val_split, gamma };
        net.adam.step = step;

        let mut pending = next()?;
        while pending.1.starts_with("meta ") {
            let rest = &pending.1[5..];
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            net.meta.push((k.to_string(), v.to_string()));
            pending = next()?;
        }
        for section in ["param", "adam_m", "adam_v"] {
            for i in 0..net.layers.len() {
                let (out_d, in_d) = (dims[i + 1], dims[i]);
                let (ln, l) = pending;
                let expect = format!("{section} {i} w {out_d} {in_d}");
                if l.trim() != expect {
                    return Err(bad(ln, format!("expected '{expect}'")));
                }
                let mut w = Array2::zeros((out_d, in_d));
                for r in 0..out_d {
                    let (ln, l) = next()?;
                    let row = parse_row(ln, &l, in_d)?;
                    w.row_mut(r).assign(&Array1::from(row));
                }
                let (ln, l) = next()?;
                let expect = format!("{section} {i} b {out_d}");
                if l.trim() != expect {
                    return Err(bad(ln, format!("expected '{expect}'")));
                }
                let (ln, l) = next()?;
                let b = Array1::from(parse_row(ln, &l, out_d)?);
                let target = match section {
                    "param" => &mut net.layers[i],
                    "adam_m" => &mut net.adam.m.layers[i],
                    _ => &mut net.adam.v.layers[i],
                };
                target.w = w;
                target.b = b;
                pending = next()?;
            }
        }
        if pending.1.trim() != "end" {
            return Err(bad(pending.0, "expected 'end'".into()));
        }
        if !net.all_finite() {
            return Err(bad(0, "non-finite parameter".into()));
        }
        Ok(net)
    }

    /// Loads a model and checks it against the runtime feature schema.
    pub fn load(path: &Path, schema: &FeatureSchema) -> Result<Self> {
        let net = Self::load_unchecked(path)?;
        net.check_schema(schema)?;
        Ok(net)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::config(path, e.to_string()))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Copy of the weights only, for computing regression targets.
    pub fn snapshot(&self) -> QNetwork {
        self.clone()
    }

    /// Uses up to 17 significant digits, which round-trips every f64 exactly.
    pub fn param_slice(&self) -> Vec<f64> {
        Grads { layers: self.layers.clone() }.flat()
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<'a>(s: &mut String, vals: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in vals {
        if !first {
            s.push(' ');
        }
        first = false;
        write!(s, "{v:.16e}").unwrap();
    }
    s.push('\n');
}

fn parse_row(ln: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| Error::ModelFormat { line: ln, msg: format!("bad number '{v}'") }))
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(Error::ModelFormat { line: ln, msg: format!("expected {expected} values, found {}", vals.len()) });
    }
    Ok(vals)
}

/// Builds a batch from flat rows.
pub fn make_batch(rows: &[f64], dim: usize, targets: Vec<f64>) -> TrainBatch {
    let n = targets.len();
    assert_eq!(rows.len(), n * dim);
    TrainBatch { inputs: Array2::from_shape_vec((n, dim), rows.to_vec()).expect("batch shape"), targets: Array1::from(targets) }
}

/// Copies rows `range` of a batch.
pub fn slice_batch(b: &TrainBatch, start: usize, end: usize) -> TrainBatch {
    TrainBatch { inputs: b.inputs.slice(s![start..end, ..]).to_owned(), targets: b.targets.slice(s![start..end]).to_owned() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> QNetwork {
        // 2 -> 2 -> 1 with hand-set weights.
        let mut net = QNetwork::zeros(&[2, 2, 1], "h");
        net.layers[0].w = ndarray::arr2(&[[1.0, -2.0], [0.5, 3.0]]);
        net.layers[0].b = ndarray::arr1(&[0.1, -1.0]);
        net.layers[1].w = ndarray::arr2(&[[2.0, -1.0]]);
        net.layers[1].b = ndarray::arr1(&[0.25]);
        net
    }

    #[test]
    fn zero_weights_give_zero() {
        let net = QNetwork::zeros(&[63, 630, 31, 1], "h");
        assert_eq!(net.q(&[0.3; 63]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_forward() {
        // hidden = relu([1*1 - 2*0 + 0.1, 0.5*1 + 3*0 - 1]) = [1.1, 0]
        // out = 2*1.1 - 0 + 0.25 = 2.45
        let net = tiny();
        assert!((net.q(&[1.0, 0.0]).unwrap() - 2.45).abs() < 1e-15);
        // hidden = relu([0 - 2 + 0.1, 0 + 3 - 1]) = [0, 2]; out = -2 + 0.25
        assert!((net.q(&[0.0, 1.0]).unwrap() + 1.75).abs() < 1e-15);
    }

    #[test]
    fn grouped_forward_matches_plain() {
        let net = QNetwork::new(&[7, 12, 5, 1], "h", Hyper::default(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let actions: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let owner = [0, 0, 1, 2, 2, 2];
        let mut flat = Vec::new();
        for (r, &o) in owner.iter().enumerate() {
            flat.extend_from_slice(&states[o * 4..o * 4 + 4]);
            flat.extend_from_slice(&actions[r * 3..r * 3 + 3]);
        }
        let plain = net.forward_batch(ArrayView2::from_shape((6, 7), &flat).unwrap());
        let grouped = net.forward_grouped(
            ArrayView2::from_shape((3, 4), &states).unwrap(),
            ArrayView2::from_shape((6, 3), &actions).unwrap(),
            &owner,
        );
        for (a, b) in plain.iter().zip(grouped.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = tiny();
        assert!(matches!(net.q(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn architecture_for_default_schema() {
        let net = QNetwork::for_schema(&FeatureSchema::default(), Hyper::default(), 1);
        assert_eq!(net.dims(), vec![63, 630, 31, 1]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = QNetwork::new(&[4, 6, 3, 1], "h", Hyper::default(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<f64> = (0..5 * 4).map(|_| rng.random::<f64>()).collect();
        let b = make_batch(&rows, 4, vec![0.3, -1.0, 2.0, 0.0, 1.5]);
        let (_, g) = net.loss_and_grads(b.inputs.view(), b.targets.view());
        let analytic = g.flat();
        let h = 1e-6;
        let mut idx = 0;
        for li in 0..net.layers.len() {
            let nw = net.layers[li].w.len();
            let nb = net.layers[li].b.len();
            for k in 0..nw + nb {
                let perturbed = |delta: f64| {
                    let mut n2 = net.clone();
                    if k < nw {
                        n2.layers[li].w.as_slice_mut().unwrap()[k] += delta;
                    } else {
                        n2.layers[li].b[k - nw] += delta;
                    }
                    n2.mse(&b)
                };
                let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let a = analytic[idx];
                assert!((numeric - a).abs() <= 1e-5 * (1.0 + a.abs()), "param {idx}: {numeric} vs {a}");
                idx += 1;
            }
        }
        assert_eq!(idx, net.param_count());
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let mut net = QNetwork::new(&[4, 8, 1], "h", Hyper { lr: 0.0, ..Hyper::default() }, 3);
        let before = net.layers.clone();
        let b = make_batch(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], 4, vec![1.0, -1.0]);
        net.train_epochs(&[b]).unwrap();
        assert_eq!(net.layers, before);
    }

    #[test]
    fn zero_gradient_step_from_fresh_state_is_identity() {
        let mut net = QNetwork::new(&[3, 5, 1], "h", Hyper::default(), 4);
        let before = net.layers.clone();
        let zero = Grads::zeros_like(&net.layers);
        net.adam_step(&zero);
        assert_eq!(net.layers, before);
    }

    #[test]
    fn constant_target_converges() {
        let mut net = QNetwork::new(&[4, 16, 8, 1], "h", Hyper { lr: 1e-2, epochs: 1, ..Hyper::default() }, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<f64> = (0..64 * 4).map(|_| rng.random::<f64>()).collect();
        let batches: Vec<TrainBatch> =
            rows.chunks(32 * 4).map(|c| make_batch(c, 4, vec![-3.0; c.len() / 4])).collect();
        let initial = batches.iter().map(|b| net.mse(b)).sum::<f64>();
        let mut prev = initial;
        let mut losses = vec![];
        for _ in 0..300 {
            net.train_epochs(&batches).unwrap();
            let l = batches.iter().map(|b| net.mse(b)).sum::<f64>();
            losses.push(l);
            prev = prev.min(l);
        }
        assert!(losses[0] < initial && losses[1] < losses[0] && losses[2] < losses[1]);
        assert!(prev < 1e-3 * initial, "final {prev} initial {initial}");
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut net = QNetwork::new(&[2, 2, 1], "h", Hyper::default(), 1);
        let b = make_batch(&[0.5, 1.0], 2, vec![f64::NAN]);
        assert!(matches!(net.train_epochs(&[b]), Err(Error::NonFiniteLoss { epoch: 0, batch: 0 })));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut net = QNetwork::new(&[3, 6, 1], "h", Hyper { lr: 1e-3, ..Hyper::default() }, 9);
            let b = make_batch(&[0.1, 0.2, 0.3, 0.3, 0.2, 0.1], 3, vec![1.0, 2.0]);
            net.train_epochs(&[b.clone(), b]).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let mut net = QNetwork::new(&[5, 7, 3, 1], "abc123", Hyper::default(), 11);
        let b = make_batch(&[0.5; 10], 5, vec![1.0, 0.0]);
        net.train_epochs(&[b]).unwrap();
        net.set_meta("seed", 11);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = QNetwork::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn schema_checks() {
        let schema = FeatureSchema::default();
        let net = QNetwork::for_schema(&schema, Hyper::default(), 1);
        assert!(net.check_schema(&schema).is_ok());
        let mut tampered = net.clone();
        tampered.schema_hash = "0000000000000000".into();
        assert!(matches!(tampered.check_schema(&schema), Err(Error::SchemaMismatch { .. })));
        let narrow = QNetwork::new(&[62, 620, 31, 1], &schema.hash(), Hyper::default(), 1);
        assert!(matches!(narrow.check_schema(&schema), Err(Error::Dimension { .. })));
    }

    #[test]
    fn truncated_file_rejected_with_line() {
        let net = QNetwork::new(&[2, 2, 1], "h", Hyper::default(), 1);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let broken = text.replacen("param 0 w 2 2", "param 0 w 3 2", 1);
        assert!(matches!(QNetwork::read_from(broken.as_bytes()), Err(Error::ModelFormat { line: 10, .. })));
    }
}
