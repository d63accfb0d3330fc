use super::{AdversarialQuery, Disjunct, InputBox, LinearConstraint, Relation};
use crate::error::{Error, Result};

/// ℓ∞ robustness around a reference input.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessParams {
    pub center: Vec<f64>,
    pub epsilon: f64,
    pub target: usize,
    pub clip_lower: Option<f64>,
    pub clip_upper: Option<f64>,
}

impl RobustnessParams {
    pub fn new(center: Vec<f64>, epsilon: f64, target: usize) -> Self {
        RobustnessParams {
            center,
            epsilon,
            target,
            clip_lower: None,
            clip_upper: None,
        }
    }

    pub fn clipped(mut self, lower: f64, upper: f64) -> Self {
        self.clip_lower = Some(lower);
        self.clip_upper = Some(upper);
        self
    }
}

/// Negated robustness: some input in the (clipped) ε-ball makes another class
/// score at least as high as the target. One disjunct per competing class.
pub fn make_robustness_query(
    params: &RobustnessParams,
    num_inputs: usize,
    num_outputs: usize,
) -> Result<AdversarialQuery> {
    if params.center.len() != num_inputs {
        return Err(Error::DimensionMismatch(format!(
            "center has {} entries, expected {num_inputs}",
            params.center.len()
        )));
    }
    if params.target >= num_outputs {
        return Err(Error::DimensionMismatch(format!(
            "target class {} with {num_outputs} outputs",
            params.target
        )));
    }
    if !(params.epsilon >= 0.0 && params.epsilon.is_finite()) {
        return Err(Error::InvalidQuery(format!(
            "epsilon must be finite and non-negative, got {}",
            params.epsilon
        )));
    }
    let lo_clip = params.clip_lower.unwrap_or(f64::NEG_INFINITY);
    let hi_clip = params.clip_upper.unwrap_or(f64::INFINITY);
    let lower = params
        .center
        .iter()
        .map(|c| (c - params.epsilon).max(lo_clip))
        .collect();
    let upper = params
        .center
        .iter()
        .map(|c| (c + params.epsilon).min(hi_clip))
        .collect();
    let input_box = InputBox::from_bounds(lower, upper);

    let disjuncts = (0..num_outputs)
        .filter(|&i| i != params.target)
        .map(|i| {
            LinearConstraint::difference(i, params.target, Relation::GreaterEq)
                .map(|c| Disjunct::new(input_box.clone(), vec![c]))
        })
        .collect::<Result<Vec<_>>>()?;
    AdversarialQuery::new(num_inputs, num_outputs, disjuncts)
}

/// One disjunct per unsafe conjunction, all over the same input box.
pub fn make_unsafe_set_query(
    input_box: &InputBox,
    unsafe_disjuncts: Vec<Vec<LinearConstraint>>,
    num_outputs: usize,
) -> Result<AdversarialQuery> {
    if unsafe_disjuncts.is_empty() {
        return Err(Error::InvalidQuery("empty unsafe set".into()));
    }
    let disjuncts = unsafe_disjuncts
        .into_iter()
        .map(|cs| Disjunct::new(input_box.clone(), cs))
        .collect();
    AdversarialQuery::new(input_box.dim(), num_outputs, disjuncts)
}
