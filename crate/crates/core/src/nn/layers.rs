use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::{normal_init, Grads, ParamGroup, ParamStore, TensorId};
use crate::Real;

/// `y = x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: TensorId,
    pub b: TensorId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights ~ N(0, std²); `std = None` uses 1/√in.
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        std: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let std = std.unwrap_or(1.0 / (in_dim as f64).sqrt());
        let w = store.register(format!("{name}.weight"), group, normal_init(in_dim, out_dim, std, rng));
        let b = store.register(format!("{name}.bias"), group, Array2::zeros((1, out_dim)));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(ps.value(self.w));
        y += &ps.value(self.b).row(0);
        y
    }

    /// Accumulates weight and bias gradients (when wanted) and returns dL/dx.
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: ArrayView2<F>,
        dy: ArrayView2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        self.backward_params(x, dy, grads);
        dy.dot(&ps.value(self.w).t())
    }

    /// Weight and bias gradients only, for layers whose input is data.
    pub fn backward_params<F: Real>(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grads: &mut Grads<F>) {
        if let Some(gw) = grads.slot(self.w) {
            general_mat_mul(F::one(), &x.t(), &dy, F::one(), gw);
        }
        if let Some(gb) = grads.slot(self.b) {
            let mut row = gb.row_mut(0);
            row += &dy.sum_axis(Axis(0));
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: TensorId,
    pub beta: TensorId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, group: ParamGroup, dim: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), group, Array2::ones((1, dim)));
        let beta = store.register(format!("{name}.beta"), group, Array2::zeros((1, dim)));
        Self { gamma, beta, dim }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let n = F::lit(self.dim as f64);
        let eps = F::lit(LN_EPS);
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / n;
            let s = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * s);
            *r = s;
        }
        let g = ps.value(self.gamma).row(0);
        let b = ps.value(self.beta).row(0);
        let mut y = &xhat * &g;
        y += &b;
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &LayerNormCache<F>,
        dy: ArrayView2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        if let Some(gg) = grads.slot(self.gamma) {
            let mut row = gg.row_mut(0);
            row += &(&dy * &cache.xhat).sum_axis(Axis(0));
        }
        if let Some(gb) = grads.slot(self.beta) {
            let mut row = gb.row_mut(0);
            row += &dy.sum_axis(Axis(0));
        }
        let g = ps.value(self.gamma).row(0);
        let n = F::lit(self.dim as f64);
        let mut dx = &dy * &g;
        for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
            let mean_d = row.sum() / n;
            let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
            Zip::from(&mut row).and(&xh).for_each(|d, &xv| {
                *d = r * (*d - mean_d - xv * mean_dx);
            });
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: &Array2<F>) -> Array2<F> {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    x.mapv(|v| half * v * (F::one() + (c * (v + a * v * v * v)).tanh()))
}

pub fn gelu_backward<F: Real>(x: &Array2<F>, dy: ArrayView2<F>) -> Array2<F> {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    let three = F::lit(3.0);
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(&dy).for_each(|o, &v, &d| {
        let u = c * (v + a * v * v * v);
        let t = u.tanh();
        let du = c * (F::one() + three * a * v * v);
        let grad = half * (F::one() + t) + half * v * (F::one() - t * t) * du;
        *o = grad * d;
    });
    out
}

pub fn relu_inplace<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Gradient through ReLU given its output.
pub fn relu_backward<F: Real>(out: &Array2<F>, dy: &mut Array2<F>) {
    Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn numeric_check(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>) {
        let eps = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            let ana = analytic.as_slice().unwrap()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + num.abs()), "idx {idx}: {num} vs {ana}");
        }
    }

    #[test]
    fn layer_norm_input_gradient() {
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", ParamGroup::Base2d, 5);
        *store.value_mut(ln.gamma) = normal_init(1, 5, 1.0, &mut seeded(1));
        let x: Array2<f64> = normal_init(3, 5, 1.0, &mut seeded(2));
        let w: Array2<f64> = normal_init(3, 5, 1.0, &mut seeded(3));
        let loss = |x: &Array2<f64>| (&ln.forward(&store, x.view()).0 * &w).sum();
        let (_, cache) = ln.forward(&store, x.view());
        let mut grads = Grads::new(&store, &[]);
        let dx = ln.backward(&store, &cache, w.view(), &mut grads);
        numeric_check(loss, &x, &dx);
    }

    #[test]
    fn gelu_gradient() {
        let x: Array2<f64> = normal_init(4, 3, 2.0, &mut seeded(4));
        let w: Array2<f64> = normal_init(4, 3, 1.0, &mut seeded(5));
        let dx = gelu_backward(&x, w.view());
        numeric_check(|x| (&gelu(x) * &w).sum(), &x, &dx);
    }

    #[test]
    fn linear_gradients() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", ParamGroup::Enc3d, 4, 3, None, &mut seeded(6));
        *store.value_mut(lin.b) = normal_init(1, 3, 1.0, &mut seeded(7));
        let x: Array2<f64> = normal_init(5, 4, 1.0, &mut seeded(8));
        let w: Array2<f64> = normal_init(5, 3, 1.0, &mut seeded(9));
        let mut grads = Grads::new(&store, &[ParamGroup::Enc3d]);
        let dx = lin.backward(&store, x.view(), w.view(), &mut grads);
        numeric_check(|x| (&lin.forward(&store, x.view()) * &w).sum(), &x, &dx);
        let gw = grads.get(lin.w).unwrap().clone();
        let wv = store.value(lin.w).clone();
        numeric_check(
            |wv| {
                let mut s = store.clone();
                *s.value_mut(lin.w) = wv.clone();
                (&lin.forward(&s, x.view()) * &w).sum()
            },
            &wv,
            &gw,
        );
    }
}
