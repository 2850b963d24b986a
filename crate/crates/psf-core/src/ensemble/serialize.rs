//! Self-describing model container.
//!
//! JSON with a format tag and version; floating-point values round-trip
//! bit-exactly through the shortest-representation encoder, so a reloaded
//! model reproduces predictions exactly.

use super::EnsembleModel;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT: &str = "psf-ensemble";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelContainer {
    format: String,
    version: u32,
    model: EnsembleModel,
}

impl EnsembleModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let container = ModelContainer {
            format: MODEL_FORMAT.to_string(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_vec(&container).map_err(|e| CoreError::Serialization(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let container: ModelContainer =
            serde_json::from_slice(bytes).map_err(|e| CoreError::Serialization(e.to_string()))?;
        if container.format != MODEL_FORMAT {
            return Err(CoreError::Serialization(format!(
                "unexpected format tag {:?}",
                container.format
            )));
        }
        if container.version != FORMAT_VERSION {
            return Err(CoreError::Serialization(format!(
                "unsupported format version {}",
                container.version
            )));
        }
        let model = container.model;
        let n_in = model.state_dim + model.action_dim;
        for (e, m) in model.members.iter().enumerate() {
            if m.n_in != n_in || m.n_out != model.state_dim {
                return Err(CoreError::Serialization(format!(
                    "member {e} dimensions {}→{} do not match model {}→{}",
                    m.n_in, m.n_out, n_in, model.state_dim
                )));
            }
        }
        if model.input_norm.mean.len() != n_in || model.output_norm.mean.len() != model.state_dim {
            return Err(CoreError::Serialization(
                "normalization dimensions do not match model".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Atomic write: temp file in the same directory, then rename.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| CoreError::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{GaussianMlp, Normalizer};
    use crate::rng::substream;
    use nalgebra::DVector;
    use rand::Rng;

    fn sample_model() -> EnsembleModel {
        let mut rng = substream(3, &[9]);
        EnsembleModel {
            members: (0..3)
                .map(|_| GaussianMlp::new(3, 2, &[8], -18.0, 4.6, &mut rng))
                .collect(),
            input_norm: Normalizer::identity(3),
            output_norm: Normalizer::identity(2),
            state_dim: 2,
            action_dim: 1,
            predict_delta: true,
        }
    }

    #[test]
    fn round_trip_preserves_predictions_bit_exactly() {
        let model = sample_model();
        let bytes = model.to_bytes().unwrap();
        let reloaded = EnsembleModel::from_bytes(&bytes).unwrap();
        let mut rng = substream(4, &[10]);
        for _ in 0..100 {
            let s = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let a = DVector::from_fn(1, |_, _| rng.random_range(-2.0..2.0));
            for e in 0..3 {
                let (m1, v1) = model.predict_member(e, &s, &a).unwrap();
                let (m2, v2) = reloaded.predict_member(e, &s, &a).unwrap();
                assert_eq!(m1, m2);
                assert_eq!(v1, v2);
            }
        }
    }

    #[test]
    fn corrupted_header_is_a_decode_error() {
        let model = sample_model();
        let mut bytes = model.to_bytes().unwrap();
        // Clobber the format tag.
        let text = String::from_utf8(bytes.clone()).unwrap();
        let corrupted = text.replacen(MODEL_FORMAT, "not-a-model", 1);
        bytes = corrupted.into_bytes();
        assert!(EnsembleModel::from_bytes(&bytes).is_err());
        assert!(EnsembleModel::from_bytes(b"{garbage").is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = sample_model();
        let mut container: serde_json::Value =
            serde_json::from_slice(&model.to_bytes().unwrap()).unwrap();
        container["model"]["state_dim"] = serde_json::json!(3);
        let bytes = serde_json::to_vec(&container).unwrap();
        assert!(EnsembleModel::from_bytes(&bytes).is_err());
    }
}
