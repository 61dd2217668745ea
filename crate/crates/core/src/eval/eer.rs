use crate::error::{invalid, Result};

/// Per-trial scores with their target flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials {
    pub scores: Vec<f64>,
    pub is_target: Vec<bool>,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, is_target: Vec<bool>) -> Result<Self> {
        if scores.len() != is_target.len() {
            return Err(invalid!("{} scores for {} trials", scores.len(), is_target.len()));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(invalid!("non-finite trial score {s}"));
        }
        Ok(Self { scores, is_target })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // one square root keeps parallel vectors at exactly 1 more often
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Equal error rate.
///
/// A trial is accepted when its score is at least the threshold. Thresholds sweep
/// `-inf`, every distinct score in ascending order, then `+inf`, so the false-accept
/// rate falls from 1 to 0 while the false-reject rate rises from 0 to 1. At the first
/// threshold where FRR >= FAR the curves have crossed: if they are equal there that
/// common value is the EER, otherwise both rates are interpolated linearly between
/// this and the previous threshold to the point where their difference vanishes.
pub fn compute_eer(st: &ScoredTrials) -> Result<f64> {
    let n_target = st.is_target.iter().filter(|&&t| t).count();
    let n_nontarget = st.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(invalid!("EER needs both target and non-target trials"));
    }
    let mut order: Vec<usize> = (0..st.len()).collect();
    order.sort_by(|&a, &b| st.scores[a].total_cmp(&st.scores[b]));

    // counts of trials strictly below the current threshold
    let (mut below_t, mut below_n) = (0usize, 0usize);
    let rates = |bt: usize, bn: usize| {
        let far = (n_nontarget - bn) as f64 / n_nontarget as f64;
        let frr = bt as f64 / n_target as f64;
        (far, frr)
    };
    let mut prev = rates(0, 0);
    let mut i = 0;
    loop {
        let (far, frr) = if i < order.len() {
            // threshold = order[i]'s score; everything before it is below
            let s = st.scores[order[i]];
            let r = rates(below_t, below_n);
            while i < order.len() && st.scores[order[i]] == s {
                if st.is_target[order[i]] {
                    below_t += 1;
                } else {
                    below_n += 1;
                }
                i += 1;
            }
            r
        } else {
            // the +inf threshold; reached only after every finite one
            let r = rates(below_t, below_n);
            i += 1;
            r
        };
        if frr >= far {
            return Ok(crossing(prev, (far, frr)));
        }
        prev = (far, frr);
        if i > order.len() {
            unreachable!("FRR reaches 1 and FAR 0 at +inf");
        }
    }
}

fn crossing((far0, frr0): (f64, f64), (far1, frr1): (f64, f64)) -> f64 {
    if frr1 == far1 {
        return far1;
    }
    let d0 = far0 - frr0;
    let d1 = far1 - frr1;
    let t = d0 / (d0 - d1);
    far0 + t * (far1 - far0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(targets: &[f64], nontargets: &[f64]) -> ScoredTrials {
        let mut scores = targets.to_vec();
        scores.extend_from_slice(nontargets);
        let flags = targets.iter().map(|_| true).chain(nontargets.iter().map(|_| false)).collect();
        ScoredTrials::new(scores, flags).unwrap()
    }

    #[test]
    fn hand_case() {
        let eer = compute_eer(&trials(&[0.9, 0.8, 0.7], &[0.75, 0.2, 0.1])).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_is_zero() {
        assert_eq!(compute_eer(&trials(&[0.9, 0.8], &[0.1, 0.2, 0.3])).unwrap(), 0.0);
    }

    #[test]
    fn fully_inverted_is_one() {
        assert_eq!(compute_eer(&trials(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
    }

    #[test]
    fn crossing_on_a_threshold_and_between_two() {
        assert_eq!(compute_eer(&trials(&[0.5], &[0.6])).unwrap(), 1.0);
        assert_eq!(compute_eer(&trials(&[0.5, 0.9], &[0.6, 0.1])).unwrap(), 0.5);
        // (FAR, FRR) goes (1, 1/2) -> (0, 1/2): the rates meet halfway
        assert_eq!(compute_eer(&trials(&[0.9, 0.4], &[0.5])).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(compute_eer(&trials(&[0.3], &[])).unwrap_err().is_validation());
    }

    #[test]
    fn cosine_extremes() {
        assert_eq!(cosine(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[1.0, -2.0], &[-1.0, 2.0]), -1.0);
    }
}
