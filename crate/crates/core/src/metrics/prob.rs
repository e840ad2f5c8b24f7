//! Probabilistic verification: fair CRPS and the spread/skill ratio.

use crate::error::{Error, Result};
use crate::metrics::pointwise::{rmse, GridWeights};

/// Fair ensemble CRPS at one point:
/// (1/M) sum |x_i - y| - 1/(2 M (M-1)) sum_{i,j} |x_i - x_j|,
/// falling back to |x - y| for a single member. The pairwise term uses the
/// O(M log M) sorted identity.
pub fn crps_point(members: &[f64], observation: f64) -> f64 {
    let m = members.len();
    assert!(m >= 1, "crps needs at least one member");
    let mae: f64 = members.iter().map(|&x| (x - observation).abs()).sum::<f64>() / m as f64;
    if m == 1 {
        return mae;
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite ensemble member"));
    // sum_{i<j} (x_(j) - x_(i)) = sum_k (2k - M + 1) x_(k)
    let mut pair_sum = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        pair_sum += (2.0 * k as f64 - (m as f64 - 1.0)) * x;
    }
    mae - pair_sum / (m as f64 * (m as f64 - 1.0))
}

/// Weighted-mean CRPS over a field: members are (M, n) rows, truth is (n).
pub fn crps_field(members: &[Vec<f64>], truth: &[f64], weights: &GridWeights) -> Result<f64> {
    let m = members.len();
    if m == 0 {
        return Err(Error::Input("crps needs at least one member".into()));
    }
    for (i, mem) in members.iter().enumerate() {
        if mem.len() != truth.len() {
            return Err(Error::Input(format!("member {i} length mismatch")));
        }
    }
    if truth.len() != weights.values.len() {
        return Err(Error::Input("crps weights length mismatch".into()));
    }
    let mut acc = 0.0;
    let mut point = vec![0.0f64; m];
    for j in 0..truth.len() {
        for (slot, mem) in point.iter_mut().zip(members) {
            *slot = mem[j];
        }
        acc += weights.values[j] * crps_point(&point, truth[j]);
    }
    Ok(acc)
}

/// Spread/skill ratio: sqrt((M+1)/M) * spread / skill, where spread is the
/// square root of the weighted-mean per-point ensemble variance (ddof = 1)
/// and skill is the RMSE of the ensemble mean. Undefined (None) when the
/// skill denominator is zero.
pub fn ssr(members: &[Vec<f64>], truth: &[f64], weights: &GridWeights) -> Result<Option<f64>> {
    let m = members.len();
    if m < 2 {
        return Err(Error::Input(format!("ssr needs at least 2 members, got {m}")));
    }
    let n = truth.len();
    let mut mean = vec![0.0f64; n];
    for mem in members {
        if mem.len() != n {
            return Err(Error::Input("ssr member length mismatch".into()));
        }
        for (a, &v) in mean.iter_mut().zip(mem) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let mut var_acc = 0.0;
    for j in 0..n {
        let mut sq = 0.0;
        for mem in members {
            let d = mem[j] - mean[j];
            sq += d * d;
        }
        var_acc += weights.values[j] * sq / (m as f64 - 1.0);
    }
    let spread = var_acc.sqrt();
    let skill = rmse(&mean, truth, weights)?;
    if skill == 0.0 {
        return Ok(None);
    }
    let correction = ((m as f64 + 1.0) / m as f64).sqrt();
    Ok(Some(correction * spread / skill))
}

/// Weighted-mean ensemble spread (the SSR numerator without correction).
pub fn ensemble_spread(members: &[Vec<f64>], weights: &GridWeights) -> Result<f64> {
    let m = members.len();
    if m < 2 {
        return Err(Error::Input("spread needs at least 2 members".into()));
    }
    let n = members[0].len();
    let mut mean = vec![0.0f64; n];
    for mem in members {
        for (a, &v) in mean.iter_mut().zip(mem) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let mut var_acc = 0.0;
    for j in 0..n {
        let mut sq = 0.0;
        for mem in members {
            let d = mem[j] - mean[j];
            sq += d * d;
        }
        var_acc += weights.values[j] * sq / (m as f64 - 1.0);
    }
    Ok(var_acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_members_equal_observation() {
        assert_eq!(crps_point(&[2.0, 2.0, 2.0], 2.0), 0.0);
    }

    #[test]
    fn single_member_absolute_error() {
        assert_eq!(crps_point(&[1.5], 0.5), 1.0);
    }

    #[test]
    fn crps_matches_brute_force_pairwise() {
        let members = [0.3f64, -1.2, 0.8, 2.1, -0.4];
        let y = 0.1;
        let m = members.len() as f64;
        let mae: f64 = members.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
        let mut pairs = 0.0;
        for &a in &members {
            for &b in &members {
                pairs += (a - b).abs();
            }
        }
        let brute = mae - pairs / (2.0 * m * (m - 1.0));
        let fast = crps_point(&members, y);
        assert!((brute - fast).abs() < 1e-12, "{brute} vs {fast}");
    }

    #[test]
    fn crps_upper_bounded_by_mae() {
        let members = [0.3f64, -1.2, 0.8, 2.1, -0.4, 0.0, 1.0];
        let y = -0.3;
        let mae: f64 = members.iter().map(|x| (x - y).abs()).sum::<f64>() / members.len() as f64;
        assert!(crps_point(&members, y) <= mae + 1e-12);
    }

    #[test]
    fn identical_members_zero_spread_ssr() {
        let w = GridWeights::uniform(1, 3);
        let members = vec![vec![1.0, 2.0, 3.0]; 5];
        let truth = vec![1.5, 2.5, 3.5];
        let s = ssr(&members, &truth, &w).unwrap().unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn ssr_undefined_for_zero_skill() {
        let w = GridWeights::uniform(1, 2);
        let truth = vec![1.0, 2.0];
        // Mean equals truth but members differ.
        let members = vec![vec![0.5, 1.5], vec![1.5, 2.5]];
        assert_eq!(ssr(&members, &truth, &w).unwrap(), None);
    }

    #[test]
    fn ssr_rejects_single_member() {
        let w = GridWeights::uniform(1, 2);
        assert!(ssr(&[vec![1.0, 2.0]], &[0.0, 0.0], &w).is_err());
    }

    #[test]
    fn doubling_deviations_doubles_spread() {
        let w = GridWeights::uniform(1, 4);
        let members = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 1.0, 4.0, 3.0],
            vec![0.0, 3.0, 2.0, 5.0],
        ];
        let n = members[0].len();
        let mut mean = vec![0.0; n];
        for mem in &members {
            for (a, &v) in mean.iter_mut().zip(mem) {
                *a += v / members.len() as f64;
            }
        }
        let doubled: Vec<Vec<f64>> = members
            .iter()
            .map(|mem| mem.iter().zip(&mean).map(|(&v, &mu)| mu + 2.0 * (v - mu)).collect())
            .collect();
        let s1 = ensemble_spread(&members, &w).unwrap();
        let s2 = ensemble_spread(&doubled, &w).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-12);
    }
}
