//! Stationary vectors of finite discrete-time birth-death chains.

/// Stationary distribution of a birth-death chain on `0..=K` where `up[j]` is
/// the probability of moving `j -> j + 1` and `down[j]` of moving `j -> j - 1`.
///
/// `up[K]` and `down[0]` are ignored. Weights are accumulated in log space so
/// long chains with extreme ratios neither overflow nor underflow. When some
/// `down[j]` is zero while `up[j - 1]` is positive, the levels below `j` are
/// transient and get zero mass; when `up[j - 1]` is zero the levels from `j` on
/// are unreachable from below and get zero mass.
pub fn stationary(up: &[f64], down: &[f64]) -> Vec<f64> {
    assert_eq!(up.len(), down.len(), "rate vectors must have equal length");
    let len = up.len();
    let mut log_w = vec![f64::NEG_INFINITY; len];
    log_w[0] = 0.0;
    for j in 1..len {
        let (u, d) = (up[j - 1], down[j]);
        if u <= 0.0 || log_w[j - 1] == f64::NEG_INFINITY {
            continue;
        }
        if d <= 0.0 {
            log_w[..j].iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
            log_w[j] = 0.0;
            continue;
        }
        log_w[j] = log_w[j - 1] + u.ln() - d.ln();
    }
    normalize_log(&log_w)
}

/// Exponentiates and normalizes log weights.
pub(crate) fn normalize_log(log_w: &[f64]) -> Vec<f64> {
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}
