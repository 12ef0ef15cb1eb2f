use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::nn::{Grads, Linear, ParamGroup, ParamStore};
use crate::{Error, Real, Result};

/// Pre-normalization norms below this are rejected.
pub const MIN_NORM: f64 = 1e-12;

/// Affine map onto the shared embedding space followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub struct ProjectionCache<F> {
    input: Array2<F>,
    output: Array2<F>,
    norms: Array1<F>,
}

impl ProjectionHead {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            linear: Linear::new(store, name, group, in_dim, embed_dim, None, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.linear.out_dim
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: ArrayView2<F>) -> Result<(Array2<F>, ProjectionCache<F>)> {
        if x.ncols() != self.linear.in_dim {
            return Err(Error::config(format!(
                "projection expects width {}, got {}",
                self.linear.in_dim,
                x.ncols()
            )));
        }
        let z = self.linear.forward(ps, x);
        let (y, norms) = l2_normalize(z)?;
        Ok((
            y.clone(),
            ProjectionCache {
                input: x.to_owned(),
                output: y,
                norms,
            },
        ))
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &ProjectionCache<F>,
        dy: &Array2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let mut dz = dy.clone();
        for ((mut row, y), &n) in dz.rows_mut().into_iter().zip(cache.output.rows()).zip(cache.norms.iter()) {
            let dot = row.dot(&y);
            Zip::from(&mut row).and(&y).for_each(|d, &yv| *d = (*d - yv * dot) / n);
        }
        self.linear.backward(ps, cache.input.view(), dz.view(), grads)
    }
}

/// Row-wise L2 normalization; returns the normalized rows and their original norms.
pub fn l2_normalize<F: Real>(mut z: Array2<F>) -> Result<(Array2<F>, Array1<F>)> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    for (mut row, &n) in z.rows_mut().into_iter().zip(norms.iter()) {
        let nf = n.as_f64();
        if !(nf >= MIN_NORM) {
            return Err(Error::DegenerateFeature { norm: nf });
        }
        row /= n;
    }
    Ok((z, norms))
}
