//! Multi-positive NCE and the composite alignment losses.
//!
//! For anchor row `i` with positive set `P(i)`:
//! `ℓ_i = (1/|P(i)|) Σ_{p∈P(i)} −log softmax_j(s_ij/τ)[p]`, averaged over rows.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

pub const DEFAULT_TAU: f64 = 0.07;

/// How in-batch positives are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveMode {
    /// Every pair with the same class label.
    #[default]
    Class,
    /// Only the matching instance.
    Instance,
}

pub fn positive_mask(labels: &[usize], mode: PositiveMode) -> Array2<bool> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| match mode {
        PositiveMode::Class => labels[i] == labels[j],
        PositiveMode::Instance => i == j,
    })
}

/// Similarities between an anchor batch (rows) and a candidate batch
/// (columns), with the positive mask and temperature.
#[derive(Debug, Clone)]
pub struct SimilarityBlock<F> {
    pub matrix: Array2<F>,
    pub pos_mask: Array2<bool>,
    pub tau: f64,
}

impl<F: Real> SimilarityBlock<F> {
    pub fn new(matrix: Array2<F>, pos_mask: Array2<bool>, tau: f64) -> Result<Self> {
        let b = Self { matrix, pos_mask, tau };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.matrix.dim() != self.pos_mask.dim() {
            return Err(Error::invalid(format!(
                "similarity {:?} and mask {:?} differ in shape",
                self.matrix.dim(),
                self.pos_mask.dim()
            )));
        }
        if self.matrix.is_empty() {
            return Err(Error::invalid("empty similarity block"));
        }
        if let Some(i) = self.pos_mask.rows().into_iter().position(|r| !r.iter().any(|&p| p)) {
            return Err(Error::Contract(format!("row {i} has no positive")));
        }
        Ok(())
    }

    pub fn transposed(&self) -> Self {
        Self {
            matrix: self.matrix.t().to_owned(),
            pos_mask: self.pos_mask.t().to_owned(),
            tau: self.tau,
        }
    }
}

pub fn nce<F: Real>(block: &SimilarityBlock<F>) -> Result<F> {
    Ok(nce_with_grad(block)?.0)
}

/// Loss and its gradient with respect to the similarity matrix.
pub fn nce_with_grad<F: Real>(block: &SimilarityBlock<F>) -> Result<(F, Array2<F>)> {
    block.validate()?;
    let inv_tau = F::lit(1.0 / block.tau);
    let rows = block.matrix.nrows();
    let inv_rows = F::lit(1.0 / rows as f64);
    let mut grad = Array2::zeros(block.matrix.raw_dim());
    let mut total = F::zero();
    for ((s, mask), mut g) in block
        .matrix
        .rows()
        .into_iter()
        .zip(block.pos_mask.rows())
        .zip(grad.rows_mut())
    {
        let logits = s.mapv(|v| v * inv_tau);
        let max = logits.fold(F::neg_infinity(), |a, &b| a.max(b));
        let exps = logits.mapv(|v| (v - max).exp());
        let z = exps.sum();
        let lse = max + z.ln();
        let n_pos = mask.iter().filter(|&&p| p).count();
        let inv_pos = F::lit(1.0 / n_pos as f64);
        let mut row_loss = F::zero();
        for (j, (&l, &p)) in logits.iter().zip(mask.iter()).enumerate() {
            let mut gj = exps[j] / z;
            if p {
                row_loss += lse - l;
                gj -= inv_pos;
            }
            g[j] = gj * inv_tau * inv_rows;
        }
        total += row_loss * inv_pos;
    }
    Ok((total * inv_rows, grad))
}

/// Symmetric loss between two aligned embedding batches, with gradients.
#[derive(Debug, Clone)]
pub struct PairLoss<F> {
    pub loss: F,
    pub d_a: Array2<F>,
    pub d_b: Array2<F>,
}

/// `nce(A→B) + nce(B→A)` over the inner-product matrix `A·Bᵀ`.
pub fn pair_loss<F: Real>(a: ArrayView2<F>, b: ArrayView2<F>, mask: &Array2<bool>, tau: f64) -> Result<F> {
    Ok(pair_loss_with_grad(a, b, mask, tau)?.loss)
}

pub fn pair_loss_with_grad<F: Real>(
    a: ArrayView2<F>,
    b: ArrayView2<F>,
    mask: &Array2<bool>,
    tau: f64,
) -> Result<PairLoss<F>> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("batches differ in shape: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let block = SimilarityBlock::new(a.dot(&b.t()), mask.clone(), tau)?;
    let (l1, g1) = nce_with_grad(&block)?;
    let (l2, g2) = nce_with_grad(&block.transposed())?;
    let ds = g1 + g2.t();
    Ok(PairLoss {
        loss: l1 + l2,
        d_a: ds.dot(&b),
        d_b: ds.t().dot(&a),
    })
}

/// Which of the two 3D alignment terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Loss3dTerms {
    pub with_image: bool,
    pub with_text: bool,
}

impl Default for Loss3dTerms {
    fn default() -> Self {
        Self {
            with_image: true,
            with_text: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Loss3d<F> {
    pub loss: F,
    pub d_3d: Array2<F>,
    pub d_2d: Option<Array2<F>>,
    pub d_text: Option<Array2<F>>,
}

/// `pair(3D, 2D) + pair(3D, text)`, either term switchable off.
pub fn loss_3d_with_grad<F: Real>(
    f3d: ArrayView2<F>,
    f2d: ArrayView2<F>,
    ftext: ArrayView2<F>,
    mask: &Array2<bool>,
    tau: f64,
    terms: Loss3dTerms,
) -> Result<Loss3d<F>> {
    if !terms.with_image && !terms.with_text {
        return Err(Error::config("3D loss needs at least one of the image and text terms"));
    }
    let mut out = Loss3d {
        loss: F::zero(),
        d_3d: Array2::zeros(f3d.raw_dim()),
        d_2d: None,
        d_text: None,
    };
    if terms.with_image {
        let p = pair_loss_with_grad(f3d, f2d, mask, tau)?;
        out.loss += p.loss;
        out.d_3d += &p.d_a;
        out.d_2d = Some(p.d_b);
    }
    if terms.with_text {
        let p = pair_loss_with_grad(f3d, ftext, mask, tau)?;
        out.loss += p.loss;
        out.d_3d += &p.d_a;
        out.d_text = Some(p.d_b);
    }
    Ok(out)
}

pub fn loss_3d<F: Real>(
    f3d: ArrayView2<F>,
    f2d: ArrayView2<F>,
    ftext: ArrayView2<F>,
    mask: &Array2<bool>,
    tau: f64,
) -> Result<F> {
    Ok(loss_3d_with_grad(f3d, f2d, ftext, mask, tau, Loss3dTerms::default())?.loss)
}

/// Image-text alignment loss used to train the prompt tokens.
pub fn loss_prompt<F: Real>(f2d: ArrayView2<F>, ftext: ArrayView2<F>, mask: &Array2<bool>, tau: f64) -> Result<F> {
    pair_loss(f2d, ftext, mask, tau)
}

pub fn loss_prompt_with_grad<F: Real>(
    f2d: ArrayView2<F>,
    ftext: ArrayView2<F>,
    mask: &Array2<bool>,
    tau: f64,
) -> Result<PairLoss<F>> {
    pair_loss_with_grad(f2d, ftext, mask, tau)
}

/// Rows rescaled to unit length; used by tests and evaluation helpers.
pub fn normalize_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut y = x.clone();
    for (mut r, &n) in y.rows_mut().into_iter().zip(norms.iter()) {
        r /= n;
    }
    y
}

/// Mean softmax cross-entropy of `logits` against class `labels`, with its
/// gradient.
pub fn cross_entropy_with_grad<F: Real>(logits: &Array2<F>, labels: &[usize]) -> Result<(f64, Array2<F>)> {
    let (b, c) = logits.dim();
    if b == 0 || labels.len() != b {
        return Err(Error::invalid(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {l} out of range for {c} classes")));
    }
    let mut grad = Array2::zeros((b, c));
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v)).as_f64();
        let e: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let z: f64 = e.iter().sum();
        loss += z.ln() + m - row[labels[i]].as_f64();
        for j in 0..c {
            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = F::lit((e[j] / z - onehot) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::normal_init;
    use crate::rng::seeded;
    use ndarray::array;
    use proptest::prelude::*;

    /// Direct, unstabilized evaluation straight from the definition.
    fn naive_nce(s: &Array2<f64>, mask: &Array2<bool>, tau: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..s.nrows() {
            let denom: f64 = (0..s.ncols()).map(|a| (s[[i, a]] / tau).exp()).sum();
            let pos: Vec<usize> = (0..s.ncols()).filter(|&j| mask[[i, j]]).collect();
            let l: f64 = pos.iter().map(|&p| -((s[[i, p]] / tau).exp() / denom).ln()).sum();
            total += l / pos.len() as f64;
        }
        total / s.nrows() as f64
    }

    fn block(s: Array2<f64>, mask: Array2<bool>, tau: f64) -> SimilarityBlock<f64> {
        SimilarityBlock::new(s, mask, tau).unwrap()
    }

    #[test]
    fn single_candidate_is_zero() {
        assert_eq!(nce(&block(array![[1.0]], array![[true]], 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let s = array![[1.0, 0.0], [0.0, 1.0]];
        let m = positive_mask(&[0, 1], PositiveMode::Class);
        let got = nce(&block(s.clone(), m.clone(), 1.0)).unwrap();
        let e = std::f64::consts::E;
        let oracle = -(e / (e + 1.0)).ln();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - naive_nce(&s, &m, 1.0)).abs() < 1e-12);
        assert!((got - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn uniform_similarities_give_ln_candidates() {
        for tau in [0.01, 0.07, 1.0, 5.0] {
            let s = Array2::from_elem((4, 4), 0.3);
            let got = nce(&block(s, positive_mask(&[0, 1, 2, 3], PositiveMode::Instance), tau)).unwrap();
            assert!((got - 4f64.ln()).abs() < 1e-9, "{tau}: {got}");
        }
    }

    #[test]
    fn bad_temperature_and_missing_positive() {
        let s = array![[1.0]];
        assert!(matches!(SimilarityBlock::new(s.clone(), array![[true]], 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(SimilarityBlock::new(s, array![[false]], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn multi_positive_matches_naive() {
        let s: Array2<f64> = normal_init(5, 5, 0.5, &mut seeded(3));
        let m = positive_mask(&[0, 1, 0, 2, 1], PositiveMode::Class);
        let got = nce(&block(s.clone(), m.clone(), 0.07)).unwrap();
        assert!((got - naive_nce(&s, &m, 0.07)).abs() < 1e-9);
    }

    #[test]
    fn pair_loss_is_symmetric() {
        let a = normalize_rows(&normal_init::<f64, _>(4, 6, 1.0, &mut seeded(1)));
        let b = normalize_rows(&normal_init::<f64, _>(4, 6, 1.0, &mut seeded(2)));
        let m = positive_mask(&[0, 1, 1, 2], PositiveMode::Class);
        let x = pair_loss(a.view(), b.view(), &m, 0.07).unwrap();
        let y = pair_loss(b.view(), a.view(), &m, 0.07).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn identical_batches_with_distinct_labels_approach_zero() {
        // Orthonormal rows so every off-diagonal similarity is 0.
        let a = Array2::<f64>::eye(4);
        let m = positive_mask(&[0, 1, 2, 3], PositiveMode::Class);
        let l = pair_loss(a.view(), a.view(), &m, 0.01).unwrap();
        assert!(l < 1e-2, "{l}");
    }

    #[test]
    fn loss_3d_is_sum_of_pairs() {
        let f: Vec<Array2<f64>> = (0..3).map(|s| normalize_rows(&normal_init(4, 5, 1.0, &mut seeded(s)))).collect();
        let m = positive_mask(&[0, 0, 1, 2], PositiveMode::Class);
        let total = loss_3d(f[0].view(), f[1].view(), f[2].view(), &m, 0.07).unwrap();
        let parts = pair_loss(f[0].view(), f[1].view(), &m, 0.07).unwrap() + pair_loss(f[0].view(), f[2].view(), &m, 0.07).unwrap();
        assert!((total - parts).abs() < 1e-12);
        let g = loss_3d_with_grad(f[0].view(), f[1].view(), f[2].view(), &m, 0.07, Loss3dTerms::default()).unwrap();
        assert!(g.d_2d.unwrap().iter().any(|v| v.abs() > 0.0));
        assert!(g.d_text.unwrap().iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn loss_3d_single_sample_equal_vectors_is_zero() {
        let v = array![[0.6, 0.8]];
        let m = positive_mask(&[0], PositiveMode::Class);
        assert_eq!(loss_3d(v.view(), v.view(), v.view(), &m, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn loss_3d_needs_a_term() {
        let v = array![[1.0, 0.0]];
        let m = positive_mask(&[0], PositiveMode::Class);
        let off = Loss3dTerms {
            with_image: false,
            with_text: false,
        };
        assert!(loss_3d_with_grad(v.view(), v.view(), v.view(), &m, 0.07, off).is_err());
    }

    #[test]
    fn prompt_loss_with_uniform_similarity_ignores_tau() {
        // Every image equals every caption: all similarities are 1.
        let f = Array2::from_elem((3, 1), 1.0);
        let m = positive_mask(&[0, 1, 2], PositiveMode::Instance);
        let a = loss_prompt(f.view(), f.view(), &m, 0.07).unwrap();
        let b = loss_prompt(f.view(), f.view(), &m, 0.035).unwrap();
        assert!((a - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s: Array2<f64> = normal_init(3, 3, 0.5, &mut seeded(9));
        let m = positive_mask(&[0, 1, 0], PositiveMode::Class);
        let (_, g) = nce_with_grad(&block(s.clone(), m.clone(), 0.5)).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = s.clone();
                p[[i, j]] += eps;
                let mut q = s.clone();
                q[[i, j]] -= eps;
                let fd = (naive_nce(&p, &m, 0.5) - naive_nce(&q, &m, 0.5)) / (2.0 * eps);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_and_gradient() {
        let z = Array2::<f64>::zeros((2, 4));
        let (l, _) = cross_entropy_with_grad(&z, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let x = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        let labels = [2, 0];
        let (_, g) = cross_entropy_with_grad(&x, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = x.clone();
                p[[i, j]] += eps;
                let mut m = x.clone();
                m[[i, j]] -= eps;
                let n = (cross_entropy_with_grad(&p, &labels).unwrap().0 - cross_entropy_with_grad(&m, &labels).unwrap().0) / (2.0 * eps);
                assert!((n - g[[i, j]]).abs() < 1e-8);
            }
        }
        assert!(cross_entropy_with_grad(&x, &[3, 0]).is_err());
    }

    #[test]
    fn lower_tau_widens_gap_to_uniform() {
        let s: Array2<f64> = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.9 } else { 0.1 * (i + j) as f64 / 8.0 });
        let m = positive_mask(&[0, 1, 2, 3], PositiveMode::Instance);
        let gap = |tau: f64| 4f64.ln() - nce(&block(s.clone(), m.clone(), tau)).unwrap();
        let taus = [1.0, 0.5, 0.2, 0.1, 0.07];
        for w in taus.windows(2) {
            assert!(gap(w[1]) > gap(w[0]));
        }
    }

    fn arb_case() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, Vec<usize>, f64)> {
        (2usize..6).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(0usize..3, n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                0.05f64..2.0,
            )
                .prop_map(move |(v, l, p, t)| (Array2::from_shape_vec((n, n), v).unwrap(), l, p, t))
        })
    }

    proptest! {
        #[test]
        fn nce_nonnegative_and_permutation_invariant((s, labels, perm, tau) in arb_case()) {
            let m = positive_mask(&labels, PositiveMode::Class);
            let l = nce(&block(s.clone(), m.clone(), tau)).unwrap();
            prop_assert!(l >= 0.0);
            let n = labels.len();
            let sp = Array2::from_shape_fn((n, n), |(i, j)| s[[perm[i], perm[j]]]);
            let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let l2 = nce(&block(sp, positive_mask(&lp, PositiveMode::Class), tau)).unwrap();
            prop_assert!((l - l2).abs() < 1e-10);
        }

        #[test]
        fn nce_zero_iff_all_mass_on_positives((s, labels, _perm, tau) in arb_case()) {
            let m = positive_mask(&labels, PositiveMode::Instance);
            let l = nce(&block(s, m, tau)).unwrap();
            let n = labels.len() as f64;
            // With one positive per row and n ≥ 2 candidates some mass always leaks.
            prop_assert!(l > 0.0 || n < 2.0);
        }
    }
}
