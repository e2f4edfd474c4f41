use serde::{Deserialize, Serialize};

use nailguard::models::argmax;
use nailguard::{LabelTaxonomy, NUM_CLASSES};

use crate::error::{Result, ServiceError};

/// Severity per category, in taxonomy order. Configurable; the default is
/// melanoma first and healthy last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeights {
    pub weights: [f64; NUM_CLASSES],
}

impl Default for SeverityWeights {
    fn default() -> Self {
        // acral_lentiginous_melanoma, healthy_nail, onychogryphosis,
        // blue_finger, clubbing, pitting
        Self { weights: [1.0, 0.0, 0.4, 0.8, 0.6, 0.3] }
    }
}

impl SeverityWeights {
    pub fn new(weights: [f64; NUM_CLASSES], taxonomy: &LabelTaxonomy) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(ServiceError::Validation("severity weights must lie in [0, 1]".into()));
        }
        if let Some(i) = taxonomy.names().iter().position(|n| n == "healthy_nail") {
            if weights[i] != 0.0 {
                return Err(ServiceError::Validation("healthy_nail must have weight 0".into()));
            }
        }
        Ok(Self { weights })
    }
}

/// Severity of the predicted category times its probability.
pub fn priority_score(probs: &[f64; NUM_CLASSES], weights: &SeverityWeights) -> f64 {
    let top = argmax(probs);
    weights.weights[top] * probs[top]
}
