//! Top-p truncation of a categorical distribution.

/// Keep the smallest highest-probability set with mass `>= top_p`
/// (ties broken toward lower index) and renormalize. `top_p >= 1` keeps
/// every state with positive mass and returns the input unchanged.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let total: f64 = probs.iter().sum();
    let mut kept = 0.0;
    let mut out = vec![0.0; probs.len()];
    for &i in &order {
        if probs[i] <= 0.0 {
            break;
        }
        out[i] = probs[i];
        kept += probs[i];
        if kept >= top_p * total {
            break;
        }
    }
    for v in &mut out {
        *v /= kept;
    }
    out
}
