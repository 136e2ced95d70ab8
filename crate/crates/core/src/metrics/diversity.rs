use crate::error::{Error, Result};
use crate::motion::{joint_positions, MotionClip};

/// `1 / (2N(N-1)) Σ_i Σ_j ‖p^i − p^j‖₁` over flattened joint-position sequences.
pub fn l1_diversity_positions(positions: &[Vec<f64>]) -> Result<f64> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::Data(format!("diversity needs at least 2 clips, got {n}")));
    }
    let len = positions[0].len();
    if positions.iter().any(|p| p.len() != len) {
        return Err(Error::Shape("clips differ in length".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += positions[i].iter().zip(&positions[j]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    // each unordered pair appears twice in the double sum
    Ok(2.0 * total / (2.0 * n as f64 * (n - 1) as f64))
}

/// Diversity of clips through forward kinematics with the root translation zeroed.
pub fn l1_diversity(clips: &[MotionClip]) -> Result<f64> {
    if let Some(first) = clips.first() {
        if clips.iter().any(|c| c.frame_count() != first.frame_count() || c.joints() != first.joints()) {
            return Err(Error::Shape("diversity clips must share length and skeleton".into()));
        }
    }
    let pos: Vec<Vec<f64>> = clips.iter().map(joint_positions).collect::<Result<_>>()?;
    l1_diversity_positions(&pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_offset_pair() {
        let t = 7;
        let p = 12;
        let a = vec![0.25; t * p];
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let d = l1_diversity_positions(&[a, b]).unwrap();
        assert!((d - (t * p) as f64 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_is_zero_and_order_free() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(l1_diversity_positions(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        let set = vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![2.0, 2.0]];
        let mut rev = set.clone();
        rev.reverse();
        assert_eq!(l1_diversity_positions(&set).unwrap(), l1_diversity_positions(&rev).unwrap());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(l1_diversity_positions(&[vec![0.0; 3], vec![0.0; 4]]), Err(Error::Shape(_))));
    }
}
