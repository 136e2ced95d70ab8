//! Predictive mass on motion tokens outside the example's source set.

use std::collections::BTreeSet;

use crate::lm::VocabLayout;
use crate::nn::softmax_row;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    /// Sum over rows of the off-example mass.
    pub value: f64,
    /// Set when the source set was empty and the penalty was forced to zero.
    pub empty_set: bool,
}

fn complement(layout: &VocabLayout, source: &BTreeSet<u32>) -> Vec<usize> {
    layout.all_motion_range().filter(|k| !source.contains(&(*k as u32))).collect()
}

/// Penalty over `rows` rows of logits, `vocab` wide.
pub fn off_example_penalty(logits: &[f64], layout: &VocabLayout, source: &BTreeSet<u32>) -> Penalty {
    off_example_penalty_grad(logits, layout, source, 0.0).0
}

/// Penalty and its gradient w.r.t. the logits, multiplied by `scale`.
///
/// With `P = sum_{k in C} p_k`, `dP/dz_j = p_j (1[j in C] - P)`.
pub fn off_example_penalty_grad(
    logits: &[f64],
    layout: &VocabLayout,
    source: &BTreeSet<u32>,
    scale: f64,
) -> (Penalty, Vec<f64>) {
    let v = layout.size();
    let mut grad = vec![0.0; logits.len()];
    if source.is_empty() {
        return (Penalty { value: 0.0, empty_set: true }, grad);
    }
    let comp = complement(layout, source);
    let mut in_comp = vec![false; v];
    for &k in &comp {
        in_comp[k] = true;
    }
    let mut value = 0.0;
    for (row, g) in logits.chunks_exact(v).zip(grad.chunks_exact_mut(v)) {
        let p = softmax_row(row);
        let mass: f64 = comp.iter().map(|&k| p[k]).sum();
        value += mass;
        if scale != 0.0 {
            for j in 0..v {
                g[j] = scale * p[j] * (if in_comp[j] { 1.0 } else { 0.0 } - mass);
            }
        }
    }
    (Penalty { value, empty_set: false }, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> VocabLayout {
        VocabLayout { text: 0, audio: 0, motion: 1, specials: false }
    }

    #[test]
    fn mass_outside_single_token_set() {
        let logits = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let p = off_example_penalty(&logits, &three(), &BTreeSet::from([0]));
        assert!((p.value - 0.5).abs() < 1e-12);
        assert!(!p.empty_set);
    }

    #[test]
    fn full_set_and_empty_set() {
        let logits = [0.1, -0.4, 2.0];
        assert_eq!(off_example_penalty(&logits, &three(), &BTreeSet::from([0, 1, 2])).value, 0.0);
        let p = off_example_penalty(&logits, &three(), &BTreeSet::new());
        assert!(p.empty_set);
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn ignores_non_motion_ranges() {
        let layout = VocabLayout { text: 2, audio: 1, motion: 1, specials: false };
        let logits = [5.0, 5.0, 5.0, 0.0, 0.0, 0.0];
        let p = off_example_penalty(&logits, &layout, &BTreeSet::from([3]));
        let e = |x: f64| x.exp();
        let z = 3.0 * e(5.0) + 3.0;
        assert!((p.value - 2.0 / z).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let layout = VocabLayout { text: 2, audio: 1, motion: 2, specials: false };
        let logits = [0.3, -0.2, 0.9, 0.1, -0.7, 0.4, 1.1, -0.3, 0.2, 0.5, 0.0, -0.1, 0.6, -0.9, 0.8, 0.3, -0.4, 0.05];
        let src = BTreeSet::from([4, 7]);
        let (_, g) = off_example_penalty_grad(&logits, &layout, &src, 1.0);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut a = logits;
            let mut b = logits;
            a[i] += h;
            b[i] -= h;
            let fd = (off_example_penalty(&a, &layout, &src).value - off_example_penalty(&b, &layout, &src).value) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
