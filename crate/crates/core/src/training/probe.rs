use ndarray::{Array1, Array2, Axis};

use super::config::ProbeConfig;
use super::finetune::stratified_subset;
use crate::corpus::Dataset;
use crate::encoders::Cg3dModel;
use crate::inference::argmax;
use crate::losses::cross_entropy_with_grad;
use crate::{Error, Result};

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// `[d, classes]`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub train_accuracy: f64,
}

impl LinearProbe {
    fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        self.standardize(x).dot(&self.weights) + &self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("contiguous row")))
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
        if x.nrows() == 0 || x.nrows() != labels.len() {
            return Err(Error::invalid("need one label per feature row"));
        }
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!("features have {} columns, probe expects {}", x.ncols(), self.mean.len())));
        }
        let hits = self.predict(x).iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Largest eigenvalue of `aᵀa / n` by power iteration from a fixed start.
fn top_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows() as f64;
    let mut v = Array1::from_elem(a.ncols(), 1.0 / (a.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = a.t().dot(&a.dot(&v)) / n;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// Fits by full-batch gradient descent with step 1/L, where L bounds the
/// curvature of the regularized loss, stopping when the gradient norm drops
/// below `tol` or after `max_iter` iterations.
pub fn linear_probe(features: &Array2<f64>, labels: &[usize], config: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = features.dim();
    if n == 0 || labels.len() != n {
        return Err(Error::invalid("need one label per feature row"));
    }
    if !(config.l2 >= 0.0) || !(config.tol > 0.0) {
        return Err(Error::config("probe needs l2 >= 0 and tol > 0"));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let distinct = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(Error::invalid("linear probe needs at least two classes"));
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let scale = features
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let x = (features - &mean) / &scale;
    let mut aug = Array2::ones((n, d + 1));
    aug.slice_mut(ndarray::s![.., ..d]).assign(&x);
    // Softmax cross-entropy has Hessian bounded by ½·AᵀA/n per class block.
    let lipschitz = 0.5 * top_eigenvalue(&aug) * 1.01 + config.l2;
    let lr = 1.0 / lipschitz;

    let mut w = Array2::<f64>::zeros((d, classes));
    let mut b = Array1::<f64>::zeros(classes);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < config.max_iter {
        let logits = x.dot(&w) + &b;
        let (_, dl) = cross_entropy_with_grad(&logits, labels)?;
        let gw = x.t().dot(&dl) + &w * config.l2;
        let gb = dl.sum_axis(Axis(0));
        grad_norm = (gw.iter().chain(gb.iter()).map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm < config.tol {
            break;
        }
        w.scaled_add(-lr, &gw);
        b.scaled_add(-lr, &gb);
        iterations += 1;
    }
    let mut probe = LinearProbe {
        mean,
        scale,
        weights: w,
        bias: b,
        iterations,
        grad_norm,
        train_accuracy: 0.0,
    };
    probe.train_accuracy = probe.accuracy(features, labels)?;
    Ok(probe)
}

/// Held-out accuracy of a probe on image embeddings of `indices`, fitted on a
/// stratified `train_frac` of them and scored on the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProbe {
    pub probe: LinearProbe,
    pub n_train: usize,
    pub n_test: usize,
    pub test_accuracy: f64,
}

pub fn probe_image_features(
    data: &Dataset,
    indices: &[usize],
    model: &Cg3dModel<f32>,
    use_prompts: bool,
    train_frac: f64,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ImageProbe> {
    let train = stratified_subset(data, indices, train_frac, seed)?;
    let test: Vec<usize> = indices.iter().copied().filter(|i| train.binary_search(i).is_err()).collect();
    if test.is_empty() {
        return Err(Error::invalid("no records left for probe evaluation"));
    }
    let mut present: Vec<usize> = indices.iter().map(|&i| data.label(i)).collect();
    present.sort_unstable();
    present.dedup();
    let dense = |i: usize| present.binary_search(&data.label(i)).expect("label present");
    let features = |idx: &[usize]| -> Result<(Array2<f64>, Vec<usize>)> {
        let imgs: Vec<_> = idx.iter().map(|&i| data.image(i).clone()).collect();
        let e = model.embed_images(&imgs, use_prompts)?.mapv(f64::from);
        Ok((e, idx.iter().map(|&i| dense(i)).collect()))
    };
    let (xtr, ytr) = features(&train)?;
    let (xte, yte) = features(&test)?;
    let probe = linear_probe(&xtr, &ytr, config)?;
    let test_accuracy = probe.accuracy(&xte, &yte)?;
    Ok(ImageProbe {
        probe,
        n_train: train.len(),
        n_test: test.len(),
        test_accuracy,
    })
}
