use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Unweighted mean of per-class F1 over all classes.
    pub macro_f1: f64,
    /// F1 over pooled counts, which is accuracy for single-label data.
    pub micro_f1: f64,
    pub per_class: Vec<f64>,
    /// Classes absent from both truth and prediction; they score 0.
    pub absent_classes: Vec<usize>,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `Σ num/den` kept as an exact fraction while it fits.
fn rational_sum(terms: &[(u128, u128)]) -> Option<(u128, u128)> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in terms {
        if d == 0 {
            continue;
        }
        let g = gcd(den, d);
        let lcm = (den / g).checked_mul(d)?;
        num = num.checked_mul(lcm / den)?.checked_add(n.checked_mul(lcm / d)?)?;
        den = lcm;
        let g = gcd(num, den).max(1);
        num /= g;
        den /= g;
    }
    Some((num, den))
}

/// Scores `pred` against `truth` over `classes` labels.
///
/// The macro mean is formed as one exact fraction when it fits in 128 bits,
/// so hand-computed fixtures compare equal.
pub fn f1_scores(truth: &[usize], pred: &[usize], classes: usize) -> F1Scores {
    assert_eq!(truth.len(), pred.len(), "truth and prediction lengths differ");
    let mut tp = vec![0u128; classes];
    let mut fp = vec![0u128; classes];
    let mut fneg = vec![0u128; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let fractions: Vec<(u128, u128)> = (0..classes)
        .map(|c| (2 * tp[c], 2 * tp[c] + fp[c] + fneg[c]))
        .collect();
    let per_class: Vec<f64> = fractions
        .iter()
        .map(|&(n, d)| if d == 0 { 0.0 } else { n as f64 / d as f64 })
        .collect();
    let absent_classes = (0..classes).filter(|&c| fractions[c].1 == 0).collect();
    let macro_f1 = if classes == 0 {
        0.0
    } else {
        match rational_sum(&fractions) {
            Some((n, d)) => n as f64 / (d * classes as u128) as f64,
            None => per_class.iter().sum::<f64>() / classes as f64,
        }
    };
    let correct: u128 = tp.iter().sum();
    let micro_f1 = if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    };
    F1Scores {
        macro_f1,
        micro_f1,
        per_class,
        absent_classes,
    }
}
