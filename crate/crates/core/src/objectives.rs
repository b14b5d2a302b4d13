//! Training losses evaluated on fixed embeddings.
//!
//! Nothing here trains a network; the functions score a set of embeddings,
//! prototypes and outliers the way a training step would, so the effect of a
//! synthesized batch on the objective can be measured directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dot, UnitVector};

/// Weight of the OOD discernment term in the combined objective.
pub const DEFAULT_LAMBDA_D: f64 = 0.1;

/// Softmax temperature `tau`. The same quantity is often given as a
/// concentration `kappa = 1 / tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::BadArg(format!("temperature must be positive, got {tau}")));
        }
        Ok(Temperature(tau))
    }

    pub fn from_kappa(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::BadArg(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Temperature(1.0 / kappa))
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

/// Logits `z^T mu_j / tau` and their log-sum-exp.
fn logits(z: &UnitVector, prototypes: &[UnitVector], tau: f64) -> (Vec<f64>, f64) {
    let s: Vec<f64> = prototypes.iter().map(|mu| dot(z.as_slice(), mu.as_slice()) / tau).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + s.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    (s, lse)
}

fn check_prototypes(prototypes: &[UnitVector]) -> Result<()> {
    if prototypes.len() < 2 {
        return Err(Error::BadArg(format!("need at least two prototypes, got {}", prototypes.len())));
    }
    Ok(())
}

/// Mean over outliers of the class-averaged log-softmax,
/// `(1/M) sum_i (1/C) sum_j log softmax_j(z_i^T mu / tau)`.
///
/// The value is at most `-ln C`, reached when an outlier is equally similar
/// to every prototype.
pub fn ood_discernment_loss(outliers: &[UnitVector], prototypes: &[UnitVector], tau: Temperature) -> Result<f64> {
    check_prototypes(prototypes)?;
    if outliers.is_empty() {
        return Err(Error::BadArg("need at least one outlier".into()));
    }
    let c = prototypes.len() as f64;
    let total: f64 = outliers
        .iter()
        .map(|z| {
            let (s, lse) = logits(z, prototypes, tau.tau());
            s.iter().map(|x| x - lse).sum::<f64>() / c
        })
        .sum();
    Ok(total / outliers.len() as f64)
}

/// Gradient of [`ood_discernment_loss`] with respect to each outlier's
/// coordinates, treating them as free (unnormalized) variables.
pub fn ood_discernment_grad(
    outliers: &[UnitVector],
    prototypes: &[UnitVector],
    tau: Temperature,
) -> Result<Vec<Vec<f64>>> {
    check_prototypes(prototypes)?;
    if outliers.is_empty() {
        return Err(Error::BadArg("need at least one outlier".into()));
    }
    let m = outliers.len() as f64;
    let c = prototypes.len() as f64;
    let t = tau.tau();
    let d = prototypes[0].dim();
    let mut mean_mu = vec![0.0; d];
    for mu in prototypes {
        for (a, x) in mean_mu.iter_mut().zip(mu.as_slice()) {
            *a += x / c;
        }
    }
    Ok(outliers
        .iter()
        .map(|z| {
            let (s, lse) = logits(z, prototypes, t);
            let mut g: Vec<f64> = mean_mu.clone();
            for (sj, mu) in s.iter().zip(prototypes) {
                let p = (sj - lse).exp();
                for (gi, x) in g.iter_mut().zip(mu.as_slice()) {
                    *gi -= p * x;
                }
            }
            // d/dz of (1/C) sum_j (s_j - lse) = (1/tau) (mean_mu - sum_j p_j mu_j)
            g.iter().map(|x| x / (t * m)).collect()
        })
        .collect())
}

/// Prototype dispersion and sample compactness losses:
///
/// ```text
/// L_disp = (1/C) sum_i ln[ (1/(C-1)) sum_{j != i} exp(mu_i^T mu_j / tau) ]
/// L_comp = -(1/N) sum_i ln softmax_{c(i)}(z_i^T mu / tau)
/// ```
pub fn cider_losses(
    id_embeddings: &[(UnitVector, usize)],
    prototypes: &[UnitVector],
    tau: Temperature,
) -> Result<(f64, f64)> {
    check_prototypes(prototypes)?;
    let c = prototypes.len();
    let t = tau.tau();
    let mut disp = 0.0;
    for (i, a) in prototypes.iter().enumerate() {
        let sims: Vec<f64> = prototypes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| a.dot(b) / t)
            .collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + sims.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        disp += lse - ((c - 1) as f64).ln();
    }
    disp /= c as f64;

    let mut comp = 0.0;
    for (z, label) in id_embeddings {
        if *label >= c {
            return Err(Error::BadClass {
                class_id: *label,
                num_classes: c,
            });
        }
        let (s, lse) = logits(z, prototypes, t);
        comp -= s[*label] - lse;
    }
    if !id_embeddings.is_empty() {
        comp /= id_embeddings.len() as f64;
    }
    Ok((disp, comp))
}

/// `ce + id_con + lambda_d * ood_disc`.
pub fn combined_objective(ce_value: f64, id_con_value: f64, ood_disc_value: f64, lambda_d: f64) -> f64 {
    ce_value + id_con_value + lambda_d * ood_disc_value
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn e(d: usize, i: usize) -> UnitVector {
        UnitVector::basis(d, i)
    }

    #[test]
    fn equidistant_outlier_gives_minus_ln_c() {
        let protos = vec![e(4, 0), e(4, 1), e(4, 2)];
        let tau = Temperature::new(0.5).unwrap();
        let loss = ood_discernment_loss(&[e(4, 3)], &protos, tau).unwrap();
        assert!((loss + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_class_closed_form() {
        let protos = vec![e(2, 0), e(2, 1)];
        let tau = Temperature::new(1.0).unwrap();
        let loss = ood_discernment_loss(&[e(2, 0)], &protos, tau).unwrap();
        let expected = 0.5 * ((E / (E + 1.0)).ln() + (1.0 / (E + 1.0)).ln());
        assert!((loss - expected).abs() < 1e-15);

        let (disp, comp) = cider_losses(&[(e(2, 0), 0)], &protos, tau).unwrap();
        assert!(disp.abs() < 1e-15);
        assert!((comp + (E / (E + 1.0)).ln()).abs() < 1e-15);
    }

    #[test]
    fn argument_checks() {
        let tau = Temperature::new(1.0).unwrap();
        assert!(ood_discernment_loss(&[], &[e(2, 0), e(2, 1)], tau).is_err());
        assert!(ood_discernment_loss(&[e(2, 0)], &[e(2, 0)], tau).is_err());
        assert!(cider_losses(&[(e(2, 0), 2)], &[e(2, 0), e(2, 1)], tau).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::from_kappa(-1.0).is_err());
    }

    #[test]
    fn combined_arithmetic() {
        assert_eq!(combined_objective(1.0, 0.5, -2.3, 0.0), 1.5);
        assert_eq!(combined_objective(0.0, 0.0, 0.0, 0.1), 0.0);
        assert!((combined_objective(1.0, 0.5, -2.3, 0.1) - 1.27).abs() < 1e-12);
    }

    #[test]
    fn kappa_and_tau_agree() {
        let protos = vec![e(3, 0), e(3, 1), e(3, 2)];
        let z = crate::sphere::normalize(&[0.3, 0.5, -0.2]).unwrap();
        let a = ood_discernment_loss(std::slice::from_ref(&z), &protos, Temperature::new(0.5).unwrap()).unwrap();
        let b = ood_discernment_loss(&[z], &protos, Temperature::from_kappa(2.0).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
