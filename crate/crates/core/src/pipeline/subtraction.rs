use serde::Serialize;

use crate::error::{domain, Result};
use crate::spectrum::Spectrum;

/// Quantum noise inferred by removing the reference-derived classical noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtractionResult {
    /// `Q = D_s - (D_r - M_r)`.
    pub q: Spectrum,
    /// Classical noise estimate `D_r - M_r`.
    pub classical: Spectrum,
    pub squeezed_label: String,
    pub reference_label: String,
    pub model_label: String,
    /// Bins where `Q < 0`. These are statistical fluctuations and are kept.
    pub negative_bins: Vec<usize>,
}

pub fn infer_quantum(d_s: &Spectrum, d_r: &Spectrum, m_r: &Spectrum) -> Result<SubtractionResult> {
    d_s.check_same_grid(d_r)?;
    d_s.check_same_grid(m_r)?;
    let classical = d_r.zip_with(m_r, "classical", |d, m| d - m)?;
    let q = d_s.zip_with(&classical, "quantum_inferred", |d, c| d - c)?;
    let negative_bins = q
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(SubtractionResult {
        q,
        classical,
        squeezed_label: d_s.label.clone(),
        reference_label: d_r.label.clone(),
        model_label: m_r.label.clone(),
        negative_bins,
    })
}

/// Observed squeezing `S*_obs = Q / M_unsqueezed`.
pub fn observed_squeezing(q: &Spectrum, m_unsqueezed: &Spectrum) -> Result<Spectrum> {
    q.check_same_grid(m_unsqueezed)?;
    if let Some(i) = m_unsqueezed.values.iter().position(|v| *v <= 0.0) {
        return domain(format!(
            "unsqueezed model is not positive at {} Hz",
            m_unsqueezed.frequencies()[i]
        ));
    }
    q.zip_with(m_unsqueezed, "squeezing_observed", |a, b| a / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::FrequencyGrid;

    fn spec(v: &[f64]) -> Spectrum {
        let grid = FrequencyGrid::linspace(10.0, 10.0 * v.len() as f64, v.len()).unwrap();
        Spectrum::new(grid, v.to_vec(), "s").unwrap()
    }

    #[test]
    fn identities() {
        let d = spec(&[3.0, 4.0, 5.0]);
        let m = spec(&[1.0, 2.0, 0.5]);
        assert_eq!(infer_quantum(&d, &d, &m).unwrap().q.values, m.values);
        let zero = spec(&[0.0; 3]);
        let r = spec(&[2.0, 5.0, 1.0]);
        let res = infer_quantum(&d, &r, &zero).unwrap();
        assert_eq!(res.q.values, vec![1.0, -1.0, 4.0]);
        assert_eq!(res.negative_bins, vec![1]);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = spec(&[1.0, 2.0]);
        let b = spec(&[1.0, 2.0, 3.0]);
        assert!(infer_quantum(&a, &b, &b).is_err());
    }

    #[test]
    fn observed_squeezing_basic() {
        let m = spec(&[2.0, 4.0]);
        assert_eq!(observed_squeezing(&m, &m).unwrap().values, vec![1.0, 1.0]);
        assert!(observed_squeezing(&m, &spec(&[1.0, 0.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn common_additive_noise_cancels(
            ds in proptest::collection::vec(0.1f64..10.0, 8),
            dr in proptest::collection::vec(0.1f64..10.0, 8),
            mr in proptest::collection::vec(0.1f64..10.0, 8),
            x in proptest::collection::vec(0.0f64..100.0, 8),
        ) {
            let base = infer_quantum(&spec(&ds), &spec(&dr), &spec(&mr)).unwrap();
            let ds2: Vec<f64> = ds.iter().zip(&x).map(|(a, b)| a + b).collect();
            let dr2: Vec<f64> = dr.iter().zip(&x).map(|(a, b)| a + b).collect();
            let shifted = infer_quantum(&spec(&ds2), &spec(&dr2), &spec(&mr)).unwrap();
            for (a, b) in base.q.values.iter().zip(&shifted.q.values) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * (1.0 + x.iter().cloned().fold(0.0, f64::max)));
            }
        }
    }
}
