use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{labels_of, Classifier, Probabilities};
use crate::dataset::{FeatureWindow, FEATURE_WIDTH, NUM_CLASSES, ROAD_COLUMN};
use crate::error::{Error, Result};
use crate::scene::{ROAD_CLASSES, SLOT_COUNT};

const MAGIC: &[u8; 8] = b"DSPRSMX\0";
const SCHEMA_VERSION: u32 = 1;
const CHUNK: usize = 256;
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e3;

/// Hyper-parameters of the reference softmax regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftmaxConfig {
    /// L2 penalty on the non-bias weights.
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    /// Seed of the weight initialisation.
    pub seed: u64,
    /// Feed risk slots as `ln(1 + R)` sorted in descending order instead
    /// of raw values in slot order.
    pub log_risk: bool,
    /// Nesterov momentum on top of the backtracking gradient steps.
    pub momentum: bool,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig {
            l2: 1e-5,
            max_epochs: 800,
            tolerance: 1e-5,
            seed: 17,
            log_risk: true,
            momentum: true,
        }
    }
}

impl SoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// Trained weights plus the standardisation fitted on the training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    pub steps: usize,
    pub log_risk: bool,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `NUM_CLASSES` rows of `dim + 1` weights, bias last.
    pub weights: Vec<f64>,
    /// Epochs actually run.
    pub epochs: usize,
    pub final_loss: f64,
}

impl SoftmaxModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len() + usize::from(ROAD_CLASSES)
    }
}

/// Continuous inputs per window row: everything but the road class.
const CONTINUOUS_PER_STEP: usize = FEATURE_WIDTH - 1;

/// Raw continuous inputs of one window, before standardisation.
fn continuous_inputs(w: &FeatureWindow, log_risk: bool, out: &mut Vec<f64>) {
    for t in 0..w.steps {
        let row = w.row(t);
        let risk_start = FEATURE_WIDTH - SLOT_COUNT;
        out.extend(row[..risk_start].iter().enumerate().filter(|(i, _)| *i != ROAD_COLUMN).map(|(_, v)| *v));
        if log_risk {
            let start = out.len();
            out.extend(row[risk_start..].iter().map(|r| r.max(0.0).ln_1p()));
            out[start..].sort_by(|a, b| b.total_cmp(a));
        } else {
            out.extend_from_slice(&row[risk_start..]);
        }
    }
}

fn road_index(value: f64) -> usize {
    let c = value.round().clamp(1.0, f64::from(ROAD_CLASSES)) as usize;
    c - 1
}

/// Standardised design matrix, one row of `dim` inputs per window.
fn design(windows: &[FeatureWindow], steps: usize, log_risk: bool, mean: &[f64], scale: &[f64]) -> Result<Vec<f64>> {
    let n_cont = mean.len();
    let dim = n_cont + usize::from(ROAD_CLASSES);
    let rows: Vec<Result<Vec<f64>>> = windows
        .par_iter()
        .map(|w| {
            if w.steps != steps || w.rows.len() != steps * FEATURE_WIDTH {
                return Err(Error::Dimension {
                    expected: steps * FEATURE_WIDTH,
                    found: w.rows.len(),
                    context: "window shape vs model",
                });
            }
            let mut x = Vec::with_capacity(dim);
            continuous_inputs(w, log_risk, &mut x);
            for (v, (m, s)) in x.iter_mut().zip(mean.iter().zip(scale)) {
                *v = (*v - m) / s;
            }
            // Share of window rows in each road class.
            let mut ind = [0.0; ROAD_CLASSES as usize];
            for t in 0..steps {
                ind[road_index(w.row(t)[ROAD_COLUMN])] += 1.0 / steps as f64;
            }
            x.extend_from_slice(&ind);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite input in window {}@{}",
                    w.source.scenario_id, w.source.end_frame
                )));
            }
            Ok(x)
        })
        .collect();
    let mut flat = Vec::with_capacity(windows.len() * dim);
    for r in rows {
        flat.extend(r?);
    }
    Ok(flat)
}

/// Class scores of every row, `NUM_CLASSES` per row.
fn logits(weights: &[f64], x: &[f64], dim: usize) -> Vec<f64> {
    let stride = dim + 1;
    x.par_chunks(dim)
        .flat_map_iter(|xi| {
            (0..NUM_CLASSES).map(move |c| {
                let w = &weights[c * stride..(c + 1) * stride];
                w[..dim].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + w[dim]
            })
        })
        .collect()
}

fn softmax(z: &[f64]) -> Probabilities {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Probabilities = std::array::from_fn(|c| (z[c] - m).exp());
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    p
}

fn penalty(weights: &[f64], dim: usize, l2: f64) -> f64 {
    let stride = dim + 1;
    (0..NUM_CLASSES)
        .map(|c| weights[c * stride..c * stride + dim].iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
        * 0.5
        * l2
}

/// Mean cross-entropy of precomputed logits plus the L2 penalty.
fn loss_from_logits(z: &[f64], y: &[usize], weights: &[f64], dim: usize, l2: f64) -> f64 {
    let ce: f64 = z
        .chunks(NUM_CLASSES)
        .zip(y)
        .map(|(zi, &yi)| {
            let m = zi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + zi.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - zi[yi]
        })
        .sum();
    ce / y.len() as f64 + penalty(weights, dim, l2)
}

/// Gradient at `weights` given its logits. Chunks are reduced in order so
/// the result does not depend on scheduling.
fn gradient(z: &[f64], x: &[f64], y: &[usize], weights: &[f64], dim: usize, l2: f64) -> Vec<f64> {
    let stride = dim + 1;
    let parts: Vec<Vec<f64>> = x
        .par_chunks(CHUNK * dim)
        .zip(z.par_chunks(CHUNK * NUM_CLASSES))
        .zip(y.par_chunks(CHUNK))
        .map(|((xc, zc), yc)| {
            let mut grad = vec![0.0; NUM_CLASSES * stride];
            for ((xi, zi), &yi) in xc.chunks(dim).zip(zc.chunks(NUM_CLASSES)).zip(yc) {
                let p = softmax(zi);
                for c in 0..NUM_CLASSES {
                    let r = p[c] - if c == yi { 1.0 } else { 0.0 };
                    let g = &mut grad[c * stride..(c + 1) * stride];
                    for (gj, xj) in g[..dim].iter_mut().zip(xi) {
                        *gj += r * xj;
                    }
                    g[dim] += r;
                }
            }
            grad
        })
        .collect();
    let mut grad = vec![0.0; NUM_CLASSES * stride];
    for g in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / y.len() as f64;
    for c in 0..NUM_CLASSES {
        for j in 0..stride {
            let k = c * stride + j;
            grad[k] *= inv;
            if j < dim {
                grad[k] += l2 * weights[k];
            }
        }
    }
    grad
}

/// Objective and optionally its gradient, straight from the weights.
#[cfg(test)]
fn objective(weights: &[f64], x: &[f64], y: &[usize], dim: usize, l2: f64, with_grad: bool) -> (f64, Vec<f64>) {
    let z = logits(weights, x, dim);
    let loss = loss_from_logits(&z, y, weights, dim, l2);
    let grad = if with_grad { gradient(&z, x, y, weights, dim, l2) } else { Vec::new() };
    (loss, grad)
}

fn extrapolate(current: &[f64], previous: &[f64], beta: f64) -> Vec<f64> {
    current.iter().zip(previous).map(|(c, p)| c + beta * (c - p)).collect()
}

fn axpy(base: &[f64], step: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b - step * d).collect()
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// with Armijo backtracking.
#[derive(Debug, Clone, Default)]
pub struct SoftmaxRegression {
    pub config: SoftmaxConfig,
}

impl SoftmaxRegression {
    pub fn new(config: SoftmaxConfig) -> Self {
        SoftmaxRegression { config }
    }
}

impl Classifier for SoftmaxRegression {
    type Model = SoftmaxModel;

    fn train(&self, windows: &[FeatureWindow]) -> Result<SoftmaxModel> {
        self.config.validate()?;
        let first = windows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot train on an empty set".into()))?;
        let steps = first.steps;
        let log_risk = self.config.log_risk;
        let labels = labels_of(windows)?;
        let y: Vec<usize> = labels.iter().map(|&l| usize::from(l) - 1).collect();

        let n_cont = steps * CONTINUOUS_PER_STEP;
        let mut mean = vec![0.0; n_cont];
        let mut sq = vec![0.0; n_cont];
        let mut buf = Vec::with_capacity(n_cont);
        for w in windows {
            if w.steps != steps {
                return Err(Error::Dimension {
                    expected: steps,
                    found: w.steps,
                    context: "window length in training set",
                });
            }
            buf.clear();
            continuous_inputs(w, log_risk, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                mean[j] += v;
                sq[j] += v * v;
            }
        }
        let n = windows.len() as f64;
        let scale: Vec<f64> = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0);
                if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        if mean.iter().chain(&scale).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite standardisation statistics".into()));
        }

        let dim = n_cont + usize::from(ROAD_CLASSES);
        let x = design(windows, steps, log_risk, &mean, &scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let mut weights: Vec<f64> = (0..NUM_CLASSES * (dim + 1)).map(|_| init.sample(&mut rng)).collect();

        let l2 = self.config.l2;
        let momentum = self.config.momentum;
        // Logits are linear in the weights, so they are carried along with
        // the iterates and line-search trials cost no pass over the inputs.
        let mut z = logits(&weights, &x, dim);
        let mut loss = loss_from_logits(&z, &y, &weights, dim, l2);
        let (mut previous, mut z_previous) = (weights.clone(), z.clone());
        let mut since_restart = 0usize;
        let mut step = 1.0;
        let mut epochs = 0;
        while epochs < self.config.max_epochs {
            let (look, z_look, look_loss) = if momentum && since_restart > 0 {
                let beta = since_restart as f64 / (since_restart as f64 + 3.0);
                let look = extrapolate(&weights, &previous, beta);
                let z_look = extrapolate(&z, &z_previous, beta);
                let look_loss = loss_from_logits(&z_look, &y, &look, dim, l2);
                (look, z_look, look_loss)
            } else {
                (weights.clone(), z.clone(), loss)
            };
            let grad = gradient(&z_look, &x, &y, &look, dim, l2);
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2.sqrt() < self.config.tolerance {
                break;
            }
            let z_grad = logits(&grad, &x, dim);
            let mut accepted = None;
            while step >= MIN_STEP {
                let trial = axpy(&look, step, &grad);
                let z_trial = axpy(&z_look, step, &z_grad);
                let trial_loss = loss_from_logits(&z_trial, &y, &trial, dim, l2);
                if trial_loss <= look_loss - ARMIJO_C * step * gnorm2 {
                    accepted = Some((trial, z_trial, trial_loss));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, z_next, next_loss)) = accepted else { break };
            if !next_loss.is_finite() {
                return Err(Error::Numeric("training loss diverged".into()));
            }
            // Momentum overshot: restart from a plain gradient step.
            since_restart = if next_loss > loss { 0 } else { since_restart + 1 };
            previous = std::mem::replace(&mut weights, next);
            z_previous = std::mem::replace(&mut z, z_next);
            loss = next_loss;
            step = (step * 1.5).min(MAX_STEP);
            epochs += 1;
        }
        Ok(SoftmaxModel {
            steps,
            log_risk,
            mean,
            scale,
            weights,
            epochs,
            final_loss: loss,
        })
    }

    fn predict_proba(&self, model: &SoftmaxModel, windows: &[FeatureWindow]) -> Result<Vec<Probabilities>> {
        let dim = model.input_dim();
        let x = design(windows, model.steps, model.log_risk, &model.mean, &model.scale)?;
        Ok(logits(&model.weights, &x, dim).chunks(NUM_CLASSES).map(softmax).collect())
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    vs.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

/// Writes the model as a little-endian binary artifact with a versioned header.
pub fn save_model(model: &SoftmaxModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, SCHEMA_VERSION)?;
        put_u32(w, FEATURE_WIDTH as u32)?;
        put_u32(w, model.steps as u32)?;
        put_u32(w, NUM_CLASSES as u32)?;
        put_u32(w, u32::from(model.log_risk))?;
        put_u32(w, model.mean.len() as u32)?;
        put_u32(w, model.epochs as u32)?;
        put_f64s(w, &[model.final_loss])?;
        put_f64s(w, &model.mean)?;
        put_f64s(w, &model.scale)?;
        put_f64s(w, &model.weights)?;
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SoftmaxModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated model file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("not a model file".into()));
    }
    let mut header = [0u32; 7];
    for h in &mut header {
        *h = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    }
    let [version, width, steps, classes, log_risk, n_cont, epochs] = header;
    if version != SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema version {version}")));
    }
    if width as usize != FEATURE_WIDTH || classes as usize != NUM_CLASSES {
        return Err(bad(format!("incompatible layout: width {width}, classes {classes}")));
    }
    let (steps, log_risk, n_cont) = (steps as usize, log_risk != 0, n_cont as usize);
    if n_cont != steps * CONTINUOUS_PER_STEP {
        return Err(bad("standardisation length does not match header".into()));
    }
    let mut f64s = |n: usize| -> Result<Vec<f64>> {
        Ok(take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let final_loss = f64s(1)?[0];
    let mean = f64s(n_cont)?;
    let scale = f64s(n_cont)?;
    let dim = n_cont + usize::from(ROAD_CLASSES);
    let weights = f64s(NUM_CLASSES * (dim + 1))?;
    if pos != bytes.len() {
        return Err(bad("trailing bytes after weights".into()));
    }
    Ok(SoftmaxModel {
        steps,
        log_risk,
        mean,
        scale,
        weights,
        epochs: epochs as usize,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Provenance, WindowSource};
    use rand::Rng;

    fn window(rng: &mut ChaCha8Rng, label: u8, steps: usize) -> FeatureWindow {
        let mut rows = Vec::with_capacity(steps * FEATURE_WIDTH);
        for _ in 0..steps {
            for c in 0..FEATURE_WIDTH {
                rows.push(if c == ROAD_COLUMN {
                    f64::from(rng.random_range(1..=6u8))
                } else if c >= FEATURE_WIDTH - SLOT_COUNT {
                    rng.random_range(0.0..5.0) + f64::from(label) * if c == 6 { 10.0 } else { 0.0 }
                } else {
                    rng.random_range(-1.0..1.0)
                });
            }
        }
        FeatureWindow {
            rows,
            steps,
            label: Some(label),
            provenance: Some(Provenance::True),
            raw_label: Some(label),
            source: WindowSource {
                scenario_id: "s".into(),
                end_frame: 0,
                end_timestamp: 0.0,
            },
        }
    }

    fn sample(n: usize, steps: usize, seed: u64) -> Vec<FeatureWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| window(&mut rng, (i % 4) as u8 + 1, steps)).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let windows = sample(10, 2, 3);
        let clf = SoftmaxRegression::new(SoftmaxConfig {
            max_epochs: 3,
            l2: 0.01,
            ..SoftmaxConfig::default()
        });
        let model = clf.train(&windows).unwrap();
        let x = design(&windows, 2, true, &model.mean, &model.scale).unwrap();
        let y: Vec<usize> = windows.iter().map(|w| usize::from(w.label.unwrap()) - 1).collect();
        let dim = model.input_dim();
        let (_, grad) = objective(&model.weights, &x, &y, dim, 0.01, true);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let j = rng.random_range(0..model.weights.len());
            let mut wp = model.weights.clone();
            wp[j] += h;
            let mut wm = model.weights.clone();
            wm[j] -= h;
            let fd = (objective(&wp, &x, &y, dim, 0.01, false).0 - objective(&wm, &x, &y, dim, 0.01, false).0) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / grad[j].abs().max(1e-3);
            assert!(rel <= 1e-6, "coordinate {j}: fd {fd} analytic {}", grad[j]);
        }
    }

    #[test]
    fn learns_separable_classes_and_outputs_simplex() {
        let train = sample(1000, 1, 1);
        let test = sample(80, 1, 2);
        let clf = SoftmaxRegression::default();
        let model = clf.train(&train).unwrap();
        let probs = clf.predict_proba(&model, &test).unwrap();
        super::super::check_simplex(&probs).unwrap();
        let correct = probs
            .iter()
            .zip(&test)
            .filter(|(p, w)| super::super::argmax(p) + 1 == usize::from(w.label.unwrap()))
            .count();
        assert!(correct >= 76, "accuracy {correct}/80");
    }

    #[test]
    fn training_is_deterministic() {
        let train = sample(300, 2, 4);
        let clf = SoftmaxRegression::new(SoftmaxConfig {
            max_epochs: 30,
            ..SoftmaxConfig::default()
        });
        let a = clf.train(&train).unwrap();
        let b = clf.train(&train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn artifact_round_trip() {
        let train = sample(40, 2, 6);
        let clf = SoftmaxRegression::new(SoftmaxConfig {
            max_epochs: 10,
            ..SoftmaxConfig::default()
        });
        let model = clf.train(&train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn rejects_unlabeled_and_mismatched_windows() {
        let mut train = sample(8, 2, 7);
        train[3].label = None;
        assert!(SoftmaxRegression::default().train(&train).is_err());
        let train = sample(8, 2, 7);
        let model = SoftmaxRegression::new(SoftmaxConfig {
            max_epochs: 2,
            ..SoftmaxConfig::default()
        })
        .train(&train)
        .unwrap();
        let other = sample(2, 3, 8);
        assert!(SoftmaxRegression::default().predict_proba(&model, &other).is_err());
    }
}
