use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub cer: f64,
    pub wer: f64,
}

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(x != y));
            diag = up;
        }
    }
    row[b.len()]
}

/// Character and word error rates of `hyp` against `reference`.
///
/// Words are whitespace-separated tokens; characters are those of the words joined by
/// single spaces, so runs of whitespace count once.
pub fn cer_wer(reference: &str, hyp: &str) -> Result<ErrorRates> {
    let rw: Vec<&str> = reference.split_whitespace().collect();
    if rw.is_empty() {
        return Err(invalid!("reference transcript is empty"));
    }
    let hw: Vec<&str> = hyp.split_whitespace().collect();
    let rc: Vec<char> = rw.join(" ").chars().collect();
    let hc: Vec<char> = hw.join(" ").chars().collect();
    Ok(ErrorRates {
        cer: edit_distance(&rc, &hc) as f64 / rc.len() as f64,
        wer: edit_distance(&rw, &hw) as f64 / rw.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(cer_wer("a b c", "a b c").unwrap(), ErrorRates { cer: 0.0, wer: 0.0 });
        assert_eq!(cer_wer("a b c", "a x c").unwrap().wer, 1.0 / 3.0);
        assert_eq!(cer_wer("a b c", "").unwrap().wer, 1.0);
        assert!(cer_wer("  ", "x").unwrap_err().is_validation());
        assert_eq!(edit_distance(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']), 3);
    }
}
