use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fa::features::FeatureTable;

/// Linear action-value approximation `Q(s, a; w) = phi(s, a) . w` over a
/// feature table shared by all agents.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    features: Arc<FeatureTable>,
    pub w: Vec<f64>,
}

impl LinearCritic {
    pub fn new(features: Arc<FeatureTable>, w: Vec<f64>) -> Result<Self> {
        if w.len() != features.dim() {
            return Err(Error::config(format!(
                "critic weights have dimension {}, features have {}",
                w.len(),
                features.dim()
            )));
        }
        Ok(Self { features, w })
    }

    pub fn zeros(features: Arc<FeatureTable>) -> Self {
        let w = vec![0.0; features.dim()];
        Self { features, w }
    }

    pub fn features(&self) -> &Arc<FeatureTable> {
        &self.features
    }

    /// `Q` at pair index `pair` (state-major: `s * |A| + a`).
    pub fn q(&self, pair: usize) -> f64 {
        self.features.dot(pair, &self.w)
    }
}

/// `phi(pair) . w`, checking the dimension.
pub fn q_value(features: &FeatureTable, w: &[f64], pair: usize) -> Result<f64> {
    if w.len() != features.dim() {
        return Err(Error::config(format!(
            "critic weights have dimension {}, features have {}",
            w.len(),
            features.dim()
        )));
    }
    if pair >= features.rows() {
        return Err(Error::Index {
            what: "state-action pair",
            index: pair,
            limit: features.rows(),
        });
    }
    Ok(features.dot(pair, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_zero() {
        let f = Arc::new(FeatureTable::generate(1, 0, 30, 20, [0.0, 1.0]));
        let c = LinearCritic::zeros(f);
        assert!((0..30).all(|i| c.q(i) == 0.0));
    }

    #[test]
    fn basis_feature_picks_weight() {
        let f = FeatureTable::from_dense(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(q_value(&f, &[3.0, 0.0, 0.0], 0).unwrap(), 3.0);
    }

    #[test]
    fn matches_naive_loop() {
        let f = FeatureTable::generate(9, 0, 40, 20, [0.0, 1.0]);
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        for pair in 0..40 {
            let row = f.row(pair);
            let mut naive = 0.0;
            for j in 0..20 {
                naive += row[j] * w[j];
            }
            assert!((q_value(&f, &w, pair).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let f = Arc::new(FeatureTable::generate(1, 0, 4, 20, [0.0, 1.0]));
        assert!(matches!(q_value(&f, &[0.0; 3], 0), Err(Error::Config(_))));
        assert!(LinearCritic::new(f, vec![0.0; 19]).is_err());
    }

    proptest! {
        #[test]
        fn q_is_linear_in_weights(
            w1 in prop::collection::vec(-5.0f64..5.0, 8),
            w2 in prop::collection::vec(-5.0f64..5.0, 8),
            a in -3.0f64..3.0,
            pair in 0usize..16,
        ) {
            let f = FeatureTable::generate(2, 0, 16, 8, [0.0, 1.0]);
            let combo: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + y).collect();
            let lhs = q_value(&f, &combo, pair).unwrap();
            let rhs = a * q_value(&f, &w1, pair).unwrap() + q_value(&f, &w2, pair).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
