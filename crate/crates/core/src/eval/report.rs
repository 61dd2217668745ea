use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

/// Summary table written as `metric<TAB>value<TAB>n` lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub fn push(&mut self, metric: impl Into<String>, value: f64, n: usize) {
        self.rows.push(ScoreRow {
            metric: metric.into(),
            value,
            n,
        });
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("metric\tvalue\tn\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{}\n", r.metric, r.value, r.n));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = Self::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::format("score report", format!("line {}", i + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            report.push(f[0], f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?);
        }
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = ScoreReport::default();
        r.push("eer_speaker", 0.125, 400);
        r.push("wer", 0.5, 20);
        assert_eq!(ScoreReport::parse(&r.to_text()).unwrap(), r);
        assert_eq!(r.get("wer"), Some(0.5));
    }
}
