//! Information-balanced soft lane probability objective.
//!
//! Positive observations are certain, negatives may be false negatives. The
//! loss interpolates the two cross-entropy contributions by the ratio of
//! observed positives, so each sample's positives and negatives carry equal
//! total weight:
//!
//! ```text
//! L = -(1/|Y|) sum_{region} [ a (1-y) log(1-y_hat) + (1-a) y log(y_hat) ]
//! a = |Y_pos| / (|Y_pos| + |Y_neg|)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{DslpError, Result};
use crate::field::{GridField, ObservationSet};

/// Clamp applied to predictions before logarithms: `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

#[inline]
pub fn clamp_pred(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Weighting between negative and positive contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    /// Per-sample ratio of observed positives.
    Auto,
    Constant(f64),
}

impl Alpha {
    pub fn constant(a: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&a) {
            Ok(Self::Constant(a))
        } else {
            Err(DslpError::InvalidArgument(format!("alpha {a} outside [0, 1]")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlpLossReport {
    pub loss: f64,
    pub alpha_ib: f64,
    /// Alpha actually used for the loss (equals `alpha_ib` in auto mode).
    pub alpha: f64,
    pub pos_count: f64,
    pub neg_count: f64,
    /// Set when the sample has no positive observations.
    pub degenerate: bool,
    /// d loss / d y_hat, zero outside the region and where the clamp is active.
    pub grad: GridField,
}

impl SlpLossReport {
    pub fn metrics(&self) -> SlpMetrics {
        SlpMetrics {
            loss: self.loss,
            alpha_ib: self.alpha_ib,
            pos_count: self.pos_count,
            neg_count: self.neg_count,
        }
    }
}

/// JSON metrics record of a loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlpMetrics {
    pub loss: f64,
    pub alpha_ib: f64,
    pub pos_count: f64,
    pub neg_count: f64,
}

/// `|Y_pos| / (|Y_pos| + |Y_neg|)`; 0 when there are no positives.
pub fn alpha_ib(obs: &ObservationSet) -> Result<f64> {
    let pos = obs.pos_count();
    let neg = obs.neg_count();
    if pos + neg == 0 {
        return Err(DslpError::NoSupervision);
    }
    Ok(pos as f64 / (pos + neg) as f64)
}

/// Soft-label generalization: `sum(y) / |region|` over region cells.
pub fn alpha_ib_soft(labels: &GridField, region: &GridField) -> Result<f64> {
    labels.ensure_same_dims(region)?;
    let (mut pos, mut n) = (0.0, 0usize);
    for (&y, &r) in labels.values().iter().zip(region.values()) {
        if r > 0.5 {
            pos += y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(DslpError::NoSupervision);
    }
    Ok(pos / n as f64)
}

/// `-sum_{pos} log y_hat`.
pub fn info_contrib_pos(obs: &ObservationSet, y_hat: &GridField) -> Result<f64> {
    obs.pos_mask.ensure_same_dims(y_hat)?;
    Ok(-obs
        .pos_mask
        .values()
        .iter()
        .zip(y_hat.values())
        .filter(|(&m, _)| m > 0.5)
        .map(|(_, &p)| clamp_pred(p).ln())
        .sum::<f64>())
}

/// `-sum_{neg} log(1 - y_hat)`.
pub fn info_contrib_neg(obs: &ObservationSet, y_hat: &GridField) -> Result<f64> {
    obs.neg_mask.ensure_same_dims(y_hat)?;
    Ok(-obs
        .neg_mask
        .values()
        .iter()
        .zip(y_hat.values())
        .filter(|(&m, _)| m > 0.5)
        .map(|(_, &p)| (1.0 - clamp_pred(p)).ln())
        .sum::<f64>())
}

/// Balanced information contribution `a * H_neg + (1 - a) * H_pos`.
pub fn balanced_information(obs: &ObservationSet, y_hat: &GridField, alpha: f64) -> Result<f64> {
    Ok(alpha * info_contrib_neg(obs, y_hat)? + (1.0 - alpha) * info_contrib_pos(obs, y_hat)?)
}

/// Balanced loss for an observation set (hard labels from the masks).
pub fn slp_loss(obs: &ObservationSet, y_hat: &GridField, alpha: Alpha) -> Result<SlpLossReport> {
    slp_loss_soft(&obs.pos_mask, &obs.region(), y_hat, alpha)
}

/// Balanced loss with soft labels `y in [0, 1]` over a binary region.
pub fn slp_loss_soft(labels: &GridField, region: &GridField, y_hat: &GridField, alpha: Alpha) -> Result<SlpLossReport> {
    labels.ensure_same_dims(region)?;
    labels.ensure_same_dims(y_hat)?;
    let ratio = alpha_ib_soft(labels, region)?;
    let a = match alpha {
        Alpha::Auto => ratio,
        Alpha::Constant(c) => c,
    };
    let mut n = 0usize;
    let mut pos = 0.0;
    let mut acc = 0.0;
    let mut grad = vec![0.0; labels.len()];
    for (k, ((&y, &r), &p)) in labels.values().iter().zip(region.values()).zip(y_hat.values()).enumerate() {
        if r <= 0.5 {
            continue;
        }
        n += 1;
        pos += y;
        let pc = clamp_pred(p);
        acc += a * (1.0 - y) * (1.0 - pc).ln() + (1.0 - a) * y * pc.ln();
        if p > EPS && p < 1.0 - EPS {
            grad[k] = a * (1.0 - y) / (1.0 - pc) - (1.0 - a) * y / pc;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(SlpLossReport {
        loss: -acc * inv,
        alpha_ib: ratio,
        alpha: a,
        pos_count: pos,
        neg_count: n as f64 - pos,
        degenerate: pos == 0.0,
        grad: GridField::from_values(labels.width(), labels.height(), labels.cell_size(), grad)?,
    })
}

/// Summed Bernoulli NLL of `y_true` under `y_hat` over the region.
pub fn nll_slp(y_true: &GridField, y_hat: &GridField, region: &GridField) -> Result<f64> {
    y_true.ensure_same_dims(y_hat)?;
    y_true.ensure_same_dims(region)?;
    let mut n = 0usize;
    let mut acc = 0.0;
    for ((&y, &p), &r) in y_true.values().iter().zip(y_hat.values()).zip(region.values()) {
        if r <= 0.5 {
            continue;
        }
        n += 1;
        let pc = clamp_pred(p);
        acc += y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    if n == 0 {
        return Err(DslpError::EmptyMask);
    }
    Ok(-acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_observation_set;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn obs_from(pos: &[usize], neg: &[usize]) -> ObservationSet {
        let mut p = GridField::zeros(8, 8, 1.0).unwrap();
        let mut n = GridField::zeros(8, 8, 1.0).unwrap();
        for &k in pos {
            p.values_mut()[k] = 1.0;
        }
        for &k in neg {
            n.values_mut()[k] = 1.0;
        }
        ObservationSet {
            pos_mask: p,
            neg_mask: n,
            trajectories: vec![],
        }
    }

    #[test]
    fn alpha_ratio() {
        let region = GridField::from_fn(10, 10, 1.0, |_, _| 1.0).unwrap();
        let obs = build_observation_set(vec![vec![[0.0, 0.5], [9.99, 0.5]]], &region);
        assert_eq!(obs.pos_count(), 10);
        assert!((alpha_ib(&obs).unwrap() - 0.1).abs() < 1e-15);
        let empty = build_observation_set(vec![], &region);
        assert_eq!(alpha_ib(&empty).unwrap(), 0.0);
        let nothing = obs_from(&[], &[]);
        assert!(matches!(alpha_ib(&nothing), Err(DslpError::NoSupervision)));
        assert!(slp_loss(&nothing, &GridField::filled(8, 8, 1.0, 0.5).unwrap(), Alpha::Auto).is_err());
    }

    #[test]
    fn two_cell_closed_form() {
        let obs = obs_from(&[0], &[1]);
        let y_hat = GridField::filled(8, 8, 1.0, 0.5).unwrap();
        let r = slp_loss(&obs, &y_hat, Alpha::Auto).unwrap();
        assert_eq!(r.alpha_ib, 0.5);
        assert!((r.loss - LN_2 / 2.0).abs() < 1e-12);
        assert!((r.loss - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let obs = obs_from(&[0, 2, 4], &[1, 3]);
        let y_hat = obs.pos_mask.clone();
        let r = slp_loss(&obs, &y_hat, Alpha::Auto).unwrap();
        assert!(r.loss <= 2.0 * EPS);
        assert_eq!(r.grad.values().iter().filter(|g| **g != 0.0).count(), 0);
    }

    #[test]
    fn info_contributions() {
        let obs = obs_from(&[0, 1], &[2, 3, 4, 5]);
        let half = GridField::filled(8, 8, 1.0, 0.5).unwrap();
        assert!((info_contrib_neg(&obs, &half).unwrap() - 4.0 * LN_2).abs() < 1e-12);
        let good = GridField::filled(8, 8, 1.0, 1.0 - EPS).unwrap();
        assert!(info_contrib_pos(&obs, &good).unwrap() < 3.0 * EPS);
    }

    #[test]
    fn nll_closed_forms() {
        let region = GridField::from_fn(8, 8, 1.0, |i, j| if j == 0 && i < 8 || (j == 1 && i < 2) { 1.0 } else { 0.0 })
            .unwrap();
        assert_eq!(region.count_set(), 10);
        let y = region.map(|_| 1.0);
        let half = GridField::filled(8, 8, 1.0, 0.5).unwrap();
        assert!((nll_slp(&y, &half, &region).unwrap() - 10.0 * LN_2).abs() < 1e-12);
        assert!(nll_slp(&y, &y, &region).unwrap() < 1e-5);
        let none = GridField::zeros(8, 8, 1.0).unwrap();
        assert!(nll_slp(&y, &half, &none).is_err());
    }

    #[test]
    fn soft_labels_are_accepted() {
        let labels = GridField::filled(8, 8, 1.0, 0.25).unwrap();
        let region = GridField::filled(8, 8, 1.0, 1.0).unwrap();
        let y_hat = GridField::filled(8, 8, 1.0, 0.25).unwrap();
        let r = slp_loss_soft(&labels, &region, &y_hat, Alpha::Constant(0.5)).unwrap();
        // balanced optimum at y_hat = y when alpha = 0.5
        assert!(r.grad.values().iter().all(|g| g.abs() < 1e-12));
        assert!((r.alpha_ib - 0.25).abs() < 1e-15);
    }

    fn random_case(seed: u64) -> (ObservationSet, GridField) {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut pos = vec![];
        let mut neg = vec![];
        let mut yh = vec![];
        for k in 0..64 {
            let r = next();
            if r < 0.3 {
                pos.push(k);
            } else if r < 0.8 {
                neg.push(k);
            }
            yh.push(0.02 + 0.96 * next());
        }
        (obs_from(&pos, &neg), GridField::from_values(8, 8, 1.0, yh).unwrap())
    }

    proptest! {
        #[test]
        fn balance_bound(seed in any::<u64>()) {
            let (obs, y_hat) = random_case(seed);
            let hp = info_contrib_pos(&obs, &y_hat).unwrap();
            let hn = info_contrib_neg(&obs, &y_hat).unwrap();
            let a = alpha_ib(&obs).unwrap();
            let h = balanced_information(&obs, &y_hat, a).unwrap();
            prop_assert!(h >= 0.0 && h <= hp.max(hn));
        }

        #[test]
        fn half_alpha_is_half_mean_bce(seed in any::<u64>()) {
            let (obs, y_hat) = random_case(seed);
            prop_assume!(obs.pos_count() + obs.neg_count() > 0);
            let r = slp_loss(&obs, &y_hat, Alpha::Constant(0.5)).unwrap();
            let region = obs.region();
            let bce = nll_slp(&obs.pos_mask, &y_hat, &region).unwrap() / region.count_set() as f64;
            prop_assert!((r.loss - 0.5 * bce).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_prediction(seed in any::<u64>(), cell in 0usize..64, bump in 0.001f64..0.01) {
            let (obs, y_hat) = random_case(seed);
            prop_assume!(obs.pos_count() + obs.neg_count() > 0);
            let base = slp_loss(&obs, &y_hat, Alpha::Auto).unwrap().loss;
            let mut v = y_hat.clone().into_values();
            v[cell] += bump;
            let up = slp_loss(&obs, &GridField::from_values(8, 8, 1.0, v).unwrap(), Alpha::Auto).unwrap().loss;
            if obs.pos_mask.values()[cell] > 0.5 {
                prop_assert!(up <= base);
            } else if obs.neg_mask.values()[cell] > 0.5 {
                prop_assert!(up >= base);
            } else {
                prop_assert_eq!(up, base);
            }
        }
    }
}
