//! Day similarity: temporal (cosine) times magnitude (ratio of absolute sums).

/// Norms and sums below this are treated as zero.
pub const DEGENERATE: f64 = 1e-9;

/// Cosine similarity; 0 if either vector is (numerically) zero.
pub fn temporal_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < DEGENERATE || nb < DEGENERATE {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `min(|Σa|, |Σb|) / max(|Σa|, |Σb|)`; 1 if both sums vanish, 0 if one does.
pub fn magnitude_similarity(a: &[f64], b: &[f64]) -> f64 {
    let sa = a.iter().sum::<f64>().abs();
    let sb = b.iter().sum::<f64>().abs();
    match (sa < DEGENERATE, sb < DEGENERATE) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => sa.min(sb) / sa.max(sb),
    }
}

pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "forecast lengths differ");
    temporal_similarity(a, b) * magnitude_similarity(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_scaling() {
        let a: Vec<f64> = (0..24).map(|h| 1.0 + (h as f64 * 0.3).sin()).collect();
        assert!((similarity(&a, &a) - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert!((temporal_similarity(&a, &b) - 1.0).abs() < 1e-12);
        assert!((magnitude_similarity(&a, &b) - 0.5).abs() < 1e-12);
        assert!((similarity(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_day_profile() {
        let a = vec![1.0; 24];
        let b: Vec<f64> = (0..24).map(|h| if h < 12 { 1.0 } else { 0.0 }).collect();
        let ts = 12.0 / 288f64.sqrt();
        assert!((temporal_similarity(&a, &b) - ts).abs() < 1e-12);
        assert!((similarity(&a, &b) - ts * 0.5).abs() < 1e-9);
        assert!((similarity(&a, &b) - 0.35355).abs() < 1e-5);
    }

    #[test]
    fn degenerate_inputs() {
        let z = vec![0.0; 24];
        let a = vec![1.0; 24];
        assert_eq!(temporal_similarity(&z, &a), 0.0);
        assert_eq!(magnitude_similarity(&z, &z), 1.0);
        assert_eq!(magnitude_similarity(&z, &a), 0.0);
        assert_eq!(similarity(&z, &z), 0.0);
        // Zero sum but nonzero shape.
        let w: Vec<f64> = (0..24).map(|h| if h % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(magnitude_similarity(&w, &a), 0.0);
    }
}
