//! All-point average precision: the area under the precision envelope over
//! recall, `AP = sum_k (r_k - r_{k-1}) * max_{r >= r_k} precision(r)`.

/// `flags` are TP markers in confidence-descending rank order;
/// `confidences` are the matching scores (used to sanity-check the order).
/// AP is 0 when there are detections but no ground truth; the caller skips
/// classes with neither.
pub fn average_precision(flags: &[bool], confidences: &[f64], num_gt: usize) -> f64 {
    debug_assert_eq!(flags.len(), confidences.len());
    debug_assert!(
        confidences.windows(2).all(|w| w[0] >= w[1]),
        "flags must be in confidence-descending order"
    );
    if num_gt == 0 || flags.is_empty() {
        return 0.0;
    }
    let n = flags.len();
    // precision after rank k (1-based cumulative)
    let mut precisions = Vec::with_capacity(n);
    let mut tp_cum = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (k + 1) as f64);
    }
    // precision envelope: max precision at any rank >= k
    let mut envelope = precisions.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        if envelope[k + 1] > envelope[k] {
            envelope[k] = envelope[k + 1];
        }
    }
    // each TP advances recall by 1/num_gt and contributes the envelope there
    let mut ap = 0.0;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            ap += envelope[k] / num_gt as f64;
        }
    }
    ap
}
