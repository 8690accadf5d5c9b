//! Linear probe: multinomial logistic regression on extracted features,
//! trained full-batch with Nesterov momentum. Deterministic.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 200,
            learning_rate: 0.5,
            momentum: 0.9,
            l2: 1e-4,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("probe.epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("probe.learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("probe.momentum", "must be in [0, 1)"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("probe.l2", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    mean: Array1<f64>,
    std: Array1<f64>,
    /// `(features + 1) x classes`, bias in the last row.
    weights: Array2<f64>,
}

fn with_bias(x: &Array2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let (n, f) = x.dim();
    let mut out = Array2::ones((n, f + 1));
    let mut body = out.slice_mut(ndarray::s![.., ..f]);
    body.assign(x);
    body -= mean;
    body /= std;
    out
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

fn check(features: &Array2<f64>, labels: &[u8]) -> Result<()> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(Error::Classifier("empty feature matrix".into()));
    }
    if features.nrows() != labels.len() {
        return Err(Error::Classifier(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Classifier("non-finite feature".into()));
    }
    Ok(())
}

pub fn train_probe(features: &Array2<f64>, labels: &[u8], classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    cfg.validate()?;
    check(features, labels)?;
    if classes < 2 || labels.iter().any(|&l| l as usize >= classes) {
        return Err(Error::Classifier(format!(
            "labels must lie in 0..{classes} with at least 2 classes"
        )));
    }
    let n = features.nrows() as f64;
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let std = features
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
    let x = with_bias(features, &mean, &std);
    let mut onehot = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l as usize]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((x.ncols(), classes));
    let mut v = Array2::<f64>::zeros(w.dim());
    let xt = x.t();
    for _ in 0..cfg.epochs {
        let look = &w + &(&v * cfg.momentum);
        let mut p = x.dot(&look);
        softmax_rows(&mut p);
        p -= &onehot;
        let mut grad = xt.dot(&p) / n;
        grad.scaled_add(cfg.l2, &look);
        v = &v * cfg.momentum - &(grad * cfg.learning_rate);
        w += &v;
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Classifier("probe training diverged".into()));
    }
    Ok(LinearProbe { mean, std, weights: w })
}

impl LinearProbe {
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<u8>> {
        if features.ncols() + 1 != self.weights.nrows() {
            return Err(Error::Classifier(format!(
                "{} features for a probe trained on {}",
                features.ncols(),
                self.weights.nrows() - 1
            )));
        }
        let scores = with_bias(features, &self.mean, &self.std).dot(&self.weights);
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Array2<f64>, labels: &[u8]) -> Result<f64> {
        check(features, labels)?;
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[2.0, 0.0], [-2.0, 1.0], [0.0, -3.0]];
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            centers[labels[i] as usize][j] + rng.random_range(-0.5..0.5)
        });
        (x, labels)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(300, 1);
        let probe = train_probe(&x, &y, 3, &ProbeConfig::default()).unwrap();
        let (xt, yt) = blobs(150, 2);
        assert_eq!(probe.accuracy(&xt, &yt).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(90, 3);
        let a = train_probe(&x, &y, 3, &ProbeConfig::default()).unwrap();
        let b = train_probe(&x, &y, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_fail_with_classifier_errors() {
        let (mut x, y) = blobs(30, 4);
        assert!(matches!(
            train_probe(&x, &y[..10], 3, &ProbeConfig::default()),
            Err(Error::Classifier(_))
        ));
        assert!(matches!(
            train_probe(&x, &y, 2, &ProbeConfig::default()),
            Err(Error::Classifier(_))
        ));
        x[[0, 0]] = f64::NAN;
        assert!(matches!(
            train_probe(&x, &y, 3, &ProbeConfig::default()),
            Err(Error::Classifier(_))
        ));
    }
}
