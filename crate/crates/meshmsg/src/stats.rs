//! Chi-square helpers shared by the statistical property tests (turn
//! uniformity, ciphertext byte distributions) and the key-privacy
//! distinguisher suite.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit statistic against a uniform distribution over the
/// buckets. Returns `(statistic, degrees_of_freedom)`.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    (stat, counts.len() - 1)
}

/// Two-sample homogeneity statistic over parallel category counts: are the
/// two samples drawn from the same distribution? Categories are pooled until
/// every expected cell count is at least 5, the usual validity rule; `None`
/// when there is nothing to compare (fewer than two populated categories).
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Option<(f64, usize)> {
    assert_eq!(a.len(), b.len());
    let n_a: u64 = a.iter().sum();
    let n_b: u64 = b.iter().sum();
    if n_a == 0 || n_b == 0 {
        return None;
    }
    let total = (n_a + n_b) as f64;
    // Pool sparse categories so each expected cell stays >= 5. The smaller
    // margin drives the bound: combined count must reach 5 * total / min(nA, nB).
    let min_combined = (5.0 * total / (n_a.min(n_b) as f64)).ceil() as u64;
    let mut cells: Vec<(u64, u64)> = Vec::new();
    let mut pool = (0u64, 0u64);
    for (&ca, &cb) in a.iter().zip(b) {
        if ca + cb == 0 {
            continue;
        }
        if ca + cb >= min_combined {
            cells.push((ca, cb));
        } else {
            pool.0 += ca;
            pool.1 += cb;
            if pool.0 + pool.1 >= min_combined {
                cells.push(pool);
                pool = (0, 0);
            }
        }
    }
    if pool.0 + pool.1 > 0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += pool.0;
                last.1 += pool.1;
            }
            None => cells.push(pool),
        }
    }
    if cells.len() < 2 {
        return None;
    }
    let mut stat = 0.0;
    for (ca, cb) in &cells {
        let col = (ca + cb) as f64;
        let e_a = col * n_a as f64 / total;
        let e_b = col * n_b as f64 / total;
        let da = *ca as f64 - e_a;
        let db = *cb as f64 - e_b;
        stat += da * da / e_a + db * db / e_b;
    }
    Some((stat, cells.len() - 1))
}

/// Critical value: the statistic above which the null is rejected at
/// significance `alpha` with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("dof > 0")
        .inverse_cdf(1.0 - alpha)
}

/// Right-tail p-value of a chi-square statistic.
pub fn chi_square_p_value(stat: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(stat)
}

/// Convenience: does a bucket histogram look uniform at significance `alpha`?
pub fn uniform_fit_passes(counts: &[u64], alpha: f64) -> bool {
    let (stat, dof) = chi_square_uniform(counts);
    stat < chi_square_critical(dof, alpha)
}

/// Byte histograms at every position across a corpus of equal-length strings.
pub fn byte_position_histograms(corpus: &[impl AsRef<[u8]>]) -> Vec<[u64; 256]> {
    let len = corpus.first().map(|p| p.as_ref().len()).unwrap_or(0);
    let mut hists = vec![[0u64; 256]; len];
    for item in corpus {
        for (pos, &byte) in item.as_ref().iter().enumerate() {
            hists[pos][byte as usize] += 1;
        }
    }
    hists
}

/// Per-byte-position homogeneity screen between two equal-shape corpora.
/// Returns positions whose statistic exceeds the critical value at the
/// family-wise significance `alpha` (Bonferroni-split across positions, since
/// a per-position test at raw alpha would flag several of 255 positions by
/// chance alone).
pub fn byte_position_outliers(
    a: &[impl AsRef<[u8]>],
    b: &[impl AsRef<[u8]>],
    alpha: f64,
) -> Vec<usize> {
    let ha = byte_position_histograms(a);
    let hb = byte_position_histograms(b);
    assert_eq!(ha.len(), hb.len());
    let per_position = alpha / ha.len().max(1) as f64;
    let mut outliers = Vec::new();
    for (pos, (ca, cb)) in ha.iter().zip(&hb).enumerate() {
        if let Some((stat, dof)) = chi_square_homogeneity(ca, cb) {
            if stat >= chi_square_critical(dof, per_position) {
                outliers.push(pos);
            }
        }
    }
    outliers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn uniform_counts_pass() {
        let counts = vec![100u64; 600];
        assert!(uniform_fit_passes(&counts, 0.01));
    }

    #[test]
    fn skewed_counts_fail() {
        let mut counts = vec![100u64; 600];
        counts[0] = 400;
        assert!(!uniform_fit_passes(&counts, 0.01));
    }

    #[test]
    fn homogeneity_accepts_same_distribution() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut a = [0u64; 256];
        let mut b = [0u64; 256];
        for _ in 0..20_000 {
            a[rng.gen::<u8>() as usize] += 1;
            b[rng.gen::<u8>() as usize] += 1;
        }
        let (stat, dof) = chi_square_homogeneity(&a, &b).unwrap();
        assert!(stat < chi_square_critical(dof, 0.001), "stat {stat} dof {dof}");
    }

    #[test]
    fn homogeneity_rejects_shifted_distribution() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut a = [0u64; 256];
        let mut b = [0u64; 256];
        for _ in 0..20_000 {
            a[rng.gen::<u8>() as usize] += 1;
            b[(rng.gen::<u8>() >> 1) as usize] += 1;
        }
        let (stat, dof) = chi_square_homogeneity(&a, &b).unwrap();
        assert!(stat > chi_square_critical(dof, 0.001));
    }

    #[test]
    fn homogeneity_handles_two_valued_category() {
        // Shape of a compressed-point tag byte: only 0x02 / 0x03 occur.
        let mut a = [0u64; 256];
        let mut b = [0u64; 256];
        a[2] = 2500;
        a[3] = 2500;
        b[2] = 2450;
        b[3] = 2550;
        let (stat, dof) = chi_square_homogeneity(&a, &b).unwrap();
        assert_eq!(dof, 1);
        assert!(stat < chi_square_critical(dof, 0.01));
    }

    #[test]
    fn critical_value_sanity() {
        // Textbook value: chi^2_{0.99, 1} = 6.635.
        let c = chi_square_critical(1, 0.01);
        assert!((c - 6.635).abs() < 0.01, "{c}");
    }
}
