/// Keeps the `n` largest values in place and zeroes the rest. Ties at the
/// cutoff go to the earliest slot.
pub fn top_n_peaks(values: &[f64], n: usize) -> Vec<f64> {
    assert!(n >= 1, "n must be at least 1");
    if n >= values.len() {
        return values.to_vec();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    for &i in &order[..n] {
        out[i] = values[i];
    }
    out
}
