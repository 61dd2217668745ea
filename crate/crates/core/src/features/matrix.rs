use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Frame-level feature matrix (self-supervised features or the cepstral proxy).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f32>, rows: usize, cols: usize, frame_rate: f64) -> Result<Self> {
        if cols == 0 {
            return Err(invalid!("feature matrix needs at least one column"));
        }
        if data.len() != rows * cols {
            return Err(invalid!(
                "feature payload has {} values, expected {rows} x {cols}",
                data.len()
            ));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(invalid!("frame rate must be positive, got {frame_rate}"));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("non-finite feature value at row {}", i / cols));
        }
        Ok(Self {
            data,
            rows,
            cols,
            frame_rate,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols)
    }

    const MAGIC: &'static [u8; 4] = b"UFMX";
    const VERSION: u32 = 1;

    /// Layout (little-endian): magic `UFMX`, `u32 version`, `u32 rows`, `u32 cols`,
    /// `f64 frame_rate`, then `rows * cols` f32 values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format("feature matrix", m);
        if bytes.len() < 24 || &bytes[..4] != Self::MAGIC {
            return Err(bad("missing UFMX header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != Self::VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let rows = u32_at(8) as usize;
        let cols = u32_at(12) as usize;
        let frame_rate = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let payload = &bytes[24..];
        if payload.len() != rows * cols * 4 {
            return Err(bad(format!(
                "payload is {} bytes, header declares {rows} x {cols}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(data, rows, cols, frame_rate)
    }
}

pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

pub fn save_feature_matrix(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavlm_shaped_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let data: Vec<f32> = (0..100 * 768).map(|i| (i % 17) as f32 * 0.1).collect();
        let m = FeatureMatrix::new(data, 100, 768, 50.0).unwrap();
        save_feature_matrix(&path, &m).unwrap();
        let back = load_feature_matrix(&path).unwrap();
        assert_eq!((back.rows(), back.cols(), back.frame_rate()), (100, 768, 50.0));
        assert_eq!(back, m);
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = FeatureMatrix::new(vec![0.0; 6], 2, 3, 50.0).unwrap().to_bytes();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FeatureMatrix::from_bytes(&bytes).unwrap_err().is_validation());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = FeatureMatrix::new(vec![0.0; 6], 2, 3, 50.0).unwrap().to_bytes();
        bytes.pop();
        assert!(FeatureMatrix::from_bytes(&bytes).is_err());
    }
}
