//! Normalized edit-distance similarity for record linkage.
//!
//! Comparison is on casefolded character sequences; the score is
//! `1 - levenshtein(a, b) / max(|a|, |b|)`, so 1.0 means identical and 0.0
//! means nothing in common. Two empty strings score 1.0.

/// Similarity in [0, 1] between two strings, case-insensitive.
pub fn edit_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_strings_score_one() {
        assert_eq!(edit_ratio("Skyforge Cloud Services", "Skyforge Cloud Services"), 1.0);
        assert_eq!(edit_ratio("", ""), 1.0);
    }

    #[test]
    fn comparison_is_case_insensitive() {
        assert_eq!(edit_ratio("MEDISUPPLY", "medisupply"), 1.0);
    }

    #[test]
    fn single_character_edit_scores_below_one() {
        // One inserted character over 22: 1 - 1/22.
        let score = edit_ratio("Northwave Telecom LLC", "Northwave Telecomm LLC");
        assert!((score - (1.0 - 1.0 / 22.0)).abs() < 1e-12);
        assert!(score < 1.0);
    }

    #[test]
    fn fixture_vendor_variations_clear_the_threshold() {
        // Hand-checked distances for the reconciliation fixture pairs.
        let cases = [
            ("MediSupply Group Inc", "MediSupply Group, Inc.", 2, 22),
            ("Skyforge Cloud Services", "Skyforge Cloud Service", 1, 23),
            ("Skyforge Cloud Services", "Skyforge Cloud Services Inc", 4, 27),
        ];
        for (a, b, distance, longest) in cases {
            let expected = 1.0 - distance as f64 / longest as f64;
            let got = edit_ratio(a, b);
            assert!((got - expected).abs() < 1e-12, "{a} vs {b}: {got}");
            assert!(got >= 0.85, "{a} vs {b} must clear 0.85, got {got}");
        }
    }

    #[test]
    fn unrelated_names_fall_below_the_threshold() {
        assert!(edit_ratio("Office Depot", "MediSupply Group Inc") < 0.85);
        assert!(edit_ratio("Office Depot", "Northwave Telecom LLC") < 0.85);
        assert!(edit_ratio("Office Depot", "Skyforge Cloud Services") < 0.85);
    }

    #[test]
    fn distance_against_empty_is_full_length() {
        assert_eq!(edit_ratio("abc", ""), 0.0);
        assert_eq!(edit_ratio("", "abc"), 0.0);
    }
}
