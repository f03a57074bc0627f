//! Consolidation matrix lifecycle for cyclical weight consolidation.
//!
//! The matrix `C` weights a quadratic penalty `σ Σ_i C_i (θ_i - θ_prev,i)²`
//! that pulls each parameter toward the anchor received from the previous
//! site. After every site the site's importance estimate is folded into `C`;
//! at each round boundary `C` is attenuated by `γ`:
//!
//! ```text
//! C(1,1)   = 0
//! C(k+1,r) = C(k,r) + E(k,r)
//! C(1,r+1) = γ (C(K,r) + E(K,r))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceEstimate;
use crate::nn::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationState {
    c: ParamVector,
    anchor: ParamVector,
    sigma: f64,
    gamma: f64,
    /// 1-based site the matrix currently applies to.
    site: usize,
    /// 1-based communication round.
    round: usize,
    /// Sum only the current round's earlier sites, dropping the attenuated
    /// carry-over once the first site of a later round reports.
    strict_eq4: bool,
}

impl ConsolidationState {
    /// State for site 1 of round 1: an all-zero matrix anchored at `params`.
    pub fn new(params: &[f64], sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "consolidation factor must be finite and non-negative, got {sigma}"
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "attenuation rate must lie in [0, 1], got {gamma}"
            )));
        }
        Ok(Self {
            c: ParamVector::zeros(params.len()),
            anchor: params.to_vec().into(),
            sigma,
            gamma,
            site: 1,
            round: 1,
            strict_eq4: false,
        })
    }

    pub fn with_strict_eq4(mut self, strict: bool) -> Self {
        self.strict_eq4 = strict;
        self
    }

    pub fn matrix(&self) -> &ParamVector {
        &self.c
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Record the parameters exactly as they arrive at the next site.
    pub fn set_anchor(&mut self, params: &[f64]) -> Result<()> {
        Error::check_len("consolidation anchor", self.c.len(), params.len())?;
        self.anchor.copy_from_slice(params);
        Ok(())
    }

    /// `σ Σ_i C_i (θ_i - anchor_i)²`.
    pub fn penalty_loss(&self, params: &[f64]) -> Result<f64> {
        Error::check_len("penalty parameters", self.c.len(), params.len())?;
        if self.sigma == 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = self
            .c
            .iter()
            .zip(params)
            .zip(self.anchor.iter())
            .map(|((c, p), a)| c * (p - a) * (p - a))
            .sum();
        Ok(self.sigma * sum)
    }

    /// Gradient of `penalty_loss`: `2σ C_i (θ_i - anchor_i)`.
    pub fn penalty_grad(&self, params: &[f64]) -> Result<ParamVector> {
        let mut grad = ParamVector::zeros(params.len());
        self.add_penalty_grad(params, &mut grad)?;
        Ok(grad)
    }

    /// Add the penalty gradient into `grad`.
    ///
    /// Coordinates with `C_i == 0` (and everything when `σ == 0`) are left
    /// untouched, so an inert penalty cannot even flip the sign of a zero.
    pub fn add_penalty_grad(&self, params: &[f64], grad: &mut [f64]) -> Result<()> {
        Error::check_len("penalty parameters", self.c.len(), params.len())?;
        Error::check_len("penalty gradient", self.c.len(), grad.len())?;
        if self.sigma == 0.0 {
            return Ok(());
        }
        let scale = 2.0 * self.sigma;
        for (((g, &c), p), a) in grad.iter_mut().zip(self.c.iter()).zip(params).zip(self.anchor.iter()) {
            if c != 0.0 {
                *g += scale * c * (p - a);
            }
        }
        Ok(())
    }

    /// Fold in the estimate of the site that just finished: `C += E`.
    pub fn accumulate_site(&mut self, estimate: &ImportanceEstimate) -> Result<()> {
        let e = checked_values(estimate, self.c.len())?;
        if self.strict_eq4 && self.site == 1 && self.round > 1 {
            self.c.copy_from_slice(e);
        } else {
            for (c, v) in self.c.iter_mut().zip(e) {
                *c += v;
            }
        }
        self.site += 1;
        Ok(())
    }

    /// Round boundary after the last site: `C = γ (C + E_last)`.
    pub fn attenuate_round(&mut self, last: &ImportanceEstimate) -> Result<()> {
        let e = checked_values(last, self.c.len())?;
        let gamma = self.gamma;
        for (c, v) in self.c.iter_mut().zip(e) {
            *c = gamma * (*c + v);
        }
        self.site = 1;
        self.round += 1;
        Ok(())
    }
}

fn checked_values(estimate: &ImportanceEstimate, len: usize) -> Result<&[f64]> {
    Error::check_len("importance estimate", len, estimate.len())?;
    let values = estimate.values();
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeImportance { index, value });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(v: &[f64]) -> ImportanceEstimate {
        ImportanceEstimate::new(v.to_vec().into(), 1, 1).unwrap()
    }

    fn state_with(c: &[f64], anchor: &[f64], sigma: f64) -> ConsolidationState {
        let mut st = ConsolidationState::new(anchor, sigma, 0.5).unwrap();
        st.accumulate_site(&est(c)).unwrap();
        st
    }

    #[test]
    fn penalty_arithmetic() {
        let st = state_with(&[1.0, 2.0], &[0.0, 0.0], 0.1);
        assert!((st.penalty_loss(&[1.0, 1.0]).unwrap() - 0.3).abs() < 1e-15);
        let g = st.penalty_grad(&[1.0, 1.0]).unwrap();
        assert!((g[0] - 0.2).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        assert_eq!(st.penalty_loss(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_sigma_or_zero_matrix_is_inert() {
        let st = state_with(&[1.0, 2.0], &[0.0, 0.0], 0.0);
        assert_eq!(st.penalty_loss(&[3.0, -2.0]).unwrap(), 0.0);
        assert!(st.penalty_grad(&[3.0, -2.0]).unwrap().iter().all(|&g| g == 0.0));
        let fresh = ConsolidationState::new(&[0.0, 0.0], 0.1, 0.5).unwrap();
        let mut grad = vec![-0.0, 1.5];
        fresh.add_penalty_grad(&[1.0, -1.0], &mut grad).unwrap();
        assert_eq!(grad[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(grad[1], 1.5);
    }

    #[test]
    fn shape_errors() {
        let st = ConsolidationState::new(&[0.0, 0.0], 0.1, 0.5).unwrap();
        assert!(st.penalty_loss(&[0.0]).is_err());
        assert!(st.penalty_grad(&[0.0]).is_err());
        let mut st = st;
        assert!(st.accumulate_site(&est(&[1.0])).is_err());
        assert!(ConsolidationState::new(&[0.0], -1.0, 0.5).is_err());
        assert!(ConsolidationState::new(&[0.0], 1.0, 1.5).is_err());
    }

    #[test]
    fn accumulate_and_attenuate_arithmetic() {
        let mut st = state_with(&[1.0], &[0.0], 0.1);
        st.accumulate_site(&est(&[0.5])).unwrap();
        assert_eq!(st.matrix()[0], 1.5);
        st.accumulate_site(&est(&[0.0])).unwrap();
        assert_eq!(st.matrix()[0], 1.5);

        let mut st = state_with(&[2.0], &[0.0], 0.1);
        st.attenuate_round(&est(&[4.0])).unwrap();
        assert_eq!(st.matrix()[0], 3.0);
        assert_eq!((st.site(), st.round()), (1, 2));

        let mut zero = ConsolidationState::new(&[0.0], 0.1, 0.0).unwrap();
        zero.accumulate_site(&est(&[7.0])).unwrap();
        zero.attenuate_round(&est(&[1.0])).unwrap();
        assert_eq!(zero.matrix()[0], 0.0);

        let mut ident = ConsolidationState::new(&[0.0], 0.1, 1.0).unwrap();
        ident.accumulate_site(&est(&[7.0])).unwrap();
        ident.attenuate_round(&est(&[0.0])).unwrap();
        assert_eq!(ident.matrix()[0], 7.0);
    }

    #[test]
    fn strict_reading_drops_carry_over() {
        let mut st = ConsolidationState::new(&[0.0], 0.1, 0.5)
            .unwrap()
            .with_strict_eq4(true);
        st.accumulate_site(&est(&[2.0])).unwrap();
        st.attenuate_round(&est(&[2.0])).unwrap();
        assert_eq!(st.matrix()[0], 2.0);
        st.accumulate_site(&est(&[0.25])).unwrap();
        assert_eq!(st.matrix()[0], 0.25);
        st.accumulate_site(&est(&[0.5])).unwrap();
        assert_eq!(st.matrix()[0], 0.75);
    }

    proptest! {
        #[test]
        fn penalty_grad_matches_finite_differences(
            entries in prop::collection::vec((0.0f64..5.0, -2.0f64..2.0, -2.0f64..2.0), 1..12),
            sigma in 0.0f64..3.0,
        ) {
            let c: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let anchor: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let theta: Vec<f64> = entries.iter().map(|e| e.2).collect();
            let st = state_with(&c, &anchor, sigma);
            let grad = st.penalty_grad(&theta).unwrap();
            let h = 1e-5;
            for i in 0..theta.len() {
                let mut up = theta.clone();
                up[i] += h;
                let mut down = theta.clone();
                down[i] -= h;
                let numeric = (st.penalty_loss(&up).unwrap() - st.penalty_loss(&down).unwrap()) / (2.0 * h);
                prop_assert!((numeric - grad[i]).abs() < 1e-6);
            }
        }
    }
}
