//! Closed forms for the scalar linear-Gaussian problem `ρ = N(0, σ²)`, `h = H x`.
//!
//! The continuum kernel operator maps `x ↦ (1 − δ_ε) x`, so the fixed point
//! is `φ_ε = (ε/δ_ε) H x` and both gain formulas are constant in `x`.
//! Biases are signed as `K − K_ε` with `K = σ² H`.

/// `δ_ε = ε(σ² + 4ε)/(σ⁴ + 3εσ² + 4ε²)`.
pub fn delta(epsilon: f64, sigma2: f64) -> f64 {
    epsilon * (sigma2 + 4.0 * epsilon)
        / (sigma2 * sigma2 + 3.0 * epsilon * sigma2 + 4.0 * epsilon * epsilon)
}

/// Slope `ε/δ_ε` of the continuum fixed point `φ_ε = (ε/δ_ε) H x`.
pub fn phi_slope(epsilon: f64, sigma2: f64) -> f64 {
    epsilon / delta(epsilon, sigma2)
}

/// Continuum gain of the `∇T φ + ε∇h` formula, per unit `H`.
pub fn continuum_gain_g1(epsilon: f64, sigma2: f64) -> f64 {
    phi_slope(epsilon, sigma2)
}

/// Continuum gain of the `∇T(φ + ε(h − ĥ))` formula, per unit `H`.
pub fn continuum_gain_g2(epsilon: f64, sigma2: f64) -> f64 {
    let d = delta(epsilon, sigma2);
    (epsilon / d + epsilon) * (1.0 - d)
}

/// `ε(σ² − 4ε)/(σ² + 4ε)`, per unit `H`. Vanishes at `ε = σ²/4`.
pub fn bias_g1(epsilon: f64, sigma2: f64) -> f64 {
    epsilon * (sigma2 - 4.0 * epsilon) / (sigma2 + 4.0 * epsilon)
}

/// `εσ⁶/((σ² + 4ε)(σ⁴ + 3εσ² + 4ε²))`, per unit `H`. Positive, tends to zero
/// as `ε → ∞`.
pub fn bias_g2(epsilon: f64, sigma2: f64) -> f64 {
    epsilon * sigma2.powi(3)
        / ((sigma2 + 4.0 * epsilon)
            * (sigma2 * sigma2 + 3.0 * epsilon * sigma2 + 4.0 * epsilon * epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_match_continuum_gains() {
        for &s2 in &[0.3, 1.0, 2.5] {
            for &e in &[1e-3, 0.1, 0.25, 0.5, 1.0, 7.0] {
                assert!((s2 - continuum_gain_g1(e, s2) - bias_g1(e, s2)).abs() < 1e-12 * s2.max(e));
                assert!((s2 - continuum_gain_g2(e, s2) - bias_g2(e, s2)).abs() < 1e-12 * s2.max(e));
            }
        }
    }

    #[test]
    fn reference_values() {
        assert!((bias_g1(0.5, 1.0) + 1.0 / 6.0).abs() < 1e-15);
        assert!((bias_g2(0.5, 1.0) - 0.5 / (3.0 * 3.5)).abs() < 1e-15);
        assert_eq!(bias_g1(0.25, 1.0), 0.0);
        assert!(bias_g1(0.2, 1.0) > 0.0 && bias_g1(0.3, 1.0) < 0.0);
        assert!(bias_g2(1e6, 1.0) < 1e-12);
        // both ~ ε σ² ... to first order: ε|H| for σ² = 1
        assert!((bias_g1(1e-4, 1.0) / 1e-4 - 1.0).abs() < 1e-3);
        assert!((bias_g2(1e-4, 1.0) / 1e-4 - 1.0).abs() < 1e-3);
    }
}
