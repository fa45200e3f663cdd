//! Quantitative comparison of reconstructions against ground truth.

use ndarray::{ArrayView, Dimension};

use crate::error::{Error, Result};
use crate::C64;

/// Normalized RMSE after optimal global complex scaling:
/// min_c ‖c·x − ref‖₂ / ‖ref‖₂ with c* = Σ conj(x)·ref / Σ |x|².
///
/// The scaling removes the global gauge (any complex constant can migrate
/// between density and sensitivity maps), so reconstructions are compared on
/// structure alone. Invariant under x → a·x for any a ≠ 0 by construction.
pub fn nrmse<D: Dimension>(x: ArrayView<'_, C64, D>, reference: ArrayView<'_, C64, D>) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            reference.shape()
        )));
    }
    let ref_sq: f64 = reference.iter().map(|z| z.norm_sqr()).sum();
    if ref_sq == 0.0 {
        return Err(Error::InvalidParameter("nrmse needs a nonzero reference".into()));
    }
    let x_sq: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    if x_sq == 0.0 {
        return Ok(1.0);
    }
    let cross: C64 = x.iter().zip(reference.iter()).map(|(a, b)| a.conj() * b).sum();
    let c = cross / x_sq;
    let err: f64 = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (c * a - b).norm_sqr())
        .sum();
    Ok((err / ref_sq).sqrt())
}

/// Summary statistics reported by the comparison front-end.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub nrmse: f64,
    /// Largest basis-projection error across coils, when maps are compared.
    pub max_coil_projection_error: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn v(data: &[(f64, f64)]) -> Array1<C64> {
        data.iter().map(|&(r, i)| C64::new(r, i)).collect()
    }

    #[test]
    fn identical_inputs_score_zero() {
        let r = v(&[(1.0, 2.0), (-0.5, 0.3), (4.0, 0.0)]);
        assert_eq!(nrmse(r.view(), r.view()).unwrap(), 0.0);
    }

    #[test]
    fn global_complex_scaling_is_removed() {
        let r = v(&[(1.0, 2.0), (-0.5, 0.3), (4.0, 0.0)]);
        let x = r.mapv(|z| z * C64::new(0.0, 5.0));
        assert!(nrmse(x.view(), r.view()).unwrap() < 1e-14);
    }

    #[test]
    fn perturbed_input_matches_projection_identity() {
        // err = √(1 − |⟨x,ref⟩|²/(‖x‖²‖ref‖²)): the optimally scaled residual
        // is the component of ref orthogonal to x.
        let r = v(&[(3.0, 0.0), (0.0, 4.0), (1.0, 1.0)]);
        let rnorm: f64 = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut x = r.clone();
        x[0] += C64::new(rnorm, 0.0);
        let got = nrmse(x.view(), r.view()).unwrap();
        let xx: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let rr: f64 = r.iter().map(|z| z.norm_sqr()).sum();
        let xr: C64 = x.iter().zip(r.iter()).map(|(a, b)| a.conj() * b).sum();
        let want = (1.0 - xr.norm_sqr() / (xx * rr)).max(0.0).sqrt();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.1);
    }

    #[test]
    fn zero_reference_is_rejected_and_zero_input_scores_one() {
        let z = Array1::<C64>::zeros(4);
        let r = v(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        assert!(nrmse(r.view(), z.view()).is_err());
        assert_eq!(nrmse(z.view(), r.view()).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Array1::<C64>::zeros(4);
        let b = Array1::<C64>::zeros(5);
        assert!(nrmse(a.view(), b.view()).is_err());
    }
}
