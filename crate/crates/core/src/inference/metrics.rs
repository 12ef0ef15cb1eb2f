use std::collections::HashMap;

/// Softmax at temperature 1, stabilised by the maximum.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Two
/// identical single-cluster labelings score 1.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut ra: HashMap<u32, u64> = HashMap::new();
    let mut rb: HashMap<u32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair-counting definition, O(n²).
    fn ari_pairs(a: &[u32], b: &[u32]) -> f64 {
        let n = a.len();
        let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        // Hubert-Arabie form.
        let num = 2.0 * (ss * dd - sd * ds);
        let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
        if den == 0.0 {
            1.0
        } else {
            num / den
        }
    }

    #[test]
    fn softmax_of_unit_vector_scores() {
        let s = softmax(&[0.0, 1.0, 0.0]);
        assert!((s[0] - 0.21194).abs() < 1e-5 && (s[1] - 0.57612).abs() < 1e-5);
        let e = std::f64::consts::E;
        assert!((s[1] - e / (e + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 9, 9]), 1.0);
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) - (-0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(pairs in proptest::collection::vec((0u32..3, 0u32..4), 2..40)) {
            let (a, b): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let x = adjusted_rand_index(&a, &b);
            let y = ari_pairs(&a, &b);
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
    }
}
