//! Shape-congruent containers for model weights, stochastic gradients, and
//! proposed updates.
//!
//! Everything is a flat `f64` vector per named parameter group. Group order is
//! declaration order and is the canonical iteration order everywhere, so two
//! runs over the same model touch coordinates in the same sequence.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("invalid group name {0:?}")]
    InvalidGroupName(String),
    #[error("duplicate group name {0:?}")]
    DuplicateGroup(String),
    #[error("model must contain at least one parameter")]
    EmptyModel,
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite result in group {0:?}")]
    NonFiniteResult(String),
}

/// A fixed-length vector of finite 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFiniteEntry { index });
            }
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One named parameter group ("layer") of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    name: String,
    params: ParamVector,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, params: ParamVector) -> Result<Self, CoreError> {
        let name = name.into();
        // Names end up verbatim in CSV cells, so keep them delimiter-free.
        if name.is_empty() || name.contains([',', '"', '\n', '\r']) {
            return Err(CoreError::InvalidGroupName(name));
        }
        Ok(Self { name, params })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn values(&self) -> &[f64] {
        self.params.as_slice()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

fn check_distinct_names(groups: &[ParamGroup]) -> Result<(), CoreError> {
    for (i, g) in groups.iter().enumerate() {
        if groups[..i].iter().any(|h| h.name == g.name) {
            return Err(CoreError::DuplicateGroup(g.name.clone()));
        }
    }
    Ok(())
}

fn check_congruent(a: &[ParamGroup], b: &[ParamGroup], what: &str) -> Result<(), CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{what}: {} groups vs {}",
            a.len(),
            b.len()
        )));
    }
    for (ga, gb) in a.iter().zip(b) {
        if ga.name != gb.name {
            return Err(CoreError::ShapeMismatch(format!(
                "{what}: group {:?} vs {:?}",
                ga.name, gb.name
            )));
        }
        if ga.len() != gb.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{what}: group {:?} has {} entries vs {}",
                ga.name,
                ga.len(),
                gb.len()
            )));
        }
    }
    Ok(())
}

/// Full model state: an ordered list of distinct named groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    groups: Vec<ParamGroup>,
}

impl ModelParams {
    pub fn new(groups: Vec<ParamGroup>) -> Result<Self, CoreError> {
        check_distinct_names(&groups)?;
        if groups.iter().map(ParamGroup::len).sum::<usize>() == 0 {
            return Err(CoreError::EmptyModel);
        }
        Ok(Self { groups })
    }

    /// Single-group model, the common case for the synthetic problems.
    pub fn single(name: impl Into<String>, values: Vec<f64>) -> Result<Self, CoreError> {
        Self::new(vec![ParamGroup::new(name, ParamVector::new(values)?)?])
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Result<&ParamGroup, CoreError> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| CoreError::UnknownGroup(name.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.groups.iter().map(ParamGroup::len).sum()
    }

    /// Concatenation of all groups in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for g in &self.groups {
            out.extend_from_slice(g.values());
        }
        out
    }

    /// Groupwise `self - base` as a step proposal.
    pub fn delta_from(&self, base: &ModelParams) -> Result<StepProposal, CoreError> {
        check_congruent(&self.groups, &base.groups, "delta_from")?;
        let groups = self
            .groups
            .iter()
            .zip(&base.groups)
            .map(|(a, b)| {
                let values: Vec<f64> = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| x - y)
                    .collect();
                ParamGroup::new(a.name.clone(), ParamVector::new(values)?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StepProposal { groups })
    }

    /// In-place `self += scale * step`, for optimizers exposed through the
    /// in-place interface.
    pub fn add_scaled(&mut self, step: &StepProposal, scale: f64) -> Result<(), CoreError> {
        check_congruent(&self.groups, &step.groups, "add_scaled")?;
        for (g, s) in self.groups.iter_mut().zip(&step.groups) {
            for (w, d) in g.params.values.iter_mut().zip(s.values()) {
                *w += scale * d;
                if !w.is_finite() {
                    return Err(CoreError::NonFiniteResult(g.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> Result<f64, CoreError> {
        check_congruent(&self.groups, &other.groups, "max_abs_diff")?;
        let mut max = 0.0f64;
        for (a, b) in self.groups.iter().zip(&other.groups) {
            for (x, y) in a.values().iter().zip(b.values()) {
                max = max.max((x - y).abs());
            }
        }
        Ok(max)
    }
}

/// A stochastic gradient, shape-congruent to its model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    groups: Vec<ParamGroup>,
}

/// A proposed update `w_next - w`, shape-congruent to its model.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProposal {
    groups: Vec<ParamGroup>,
}

macro_rules! grouped_container {
    ($ty:ident) => {
        impl $ty {
            pub fn from_groups(groups: Vec<ParamGroup>) -> Result<Self, CoreError> {
                check_distinct_names(&groups)?;
                Ok(Self { groups })
            }

            pub fn single(name: impl Into<String>, values: Vec<f64>) -> Result<Self, CoreError> {
                Ok(Self {
                    groups: vec![ParamGroup::new(name, ParamVector::new(values)?)?],
                })
            }

            pub fn zeros_like(model: &ModelParams) -> Self {
                Self {
                    groups: model
                        .groups
                        .iter()
                        .map(|g| ParamGroup {
                            name: g.name.clone(),
                            params: ParamVector::zeros(g.len()),
                        })
                        .collect(),
                }
            }

            pub fn groups(&self) -> &[ParamGroup] {
                &self.groups
            }

            pub fn group(&self, name: &str) -> Result<&ParamGroup, CoreError> {
                self.groups
                    .iter()
                    .find(|g| g.name() == name)
                    .ok_or_else(|| CoreError::UnknownGroup(name.to_string()))
            }

            pub fn congruent_to(&self, model: &ModelParams) -> Result<(), CoreError> {
                check_congruent(&self.groups, &model.groups, stringify!($ty))
            }
        }
    };
}

grouped_container!(Gradient);
grouped_container!(StepProposal);

impl StepProposal {
    /// Euclidean norm of one group's delta.
    pub fn group_norm(&self, group_name: &str) -> Result<f64, CoreError> {
        Ok(self.group(group_name)?.params().norm())
    }

    /// Euclidean norm of the concatenation of all groups.
    pub fn global_norm(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.values().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every group by the same factor.
    pub fn scaled(&self, factor: f64) -> Result<StepProposal, CoreError> {
        self.scaled_per_group(&vec![factor; self.groups.len()])
    }

    /// Scale group `i` by `factors[i]`.
    pub fn scaled_per_group(&self, factors: &[f64]) -> Result<StepProposal, CoreError> {
        if factors.len() != self.groups.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "scaled_per_group: {} factors for {} groups",
                factors.len(),
                self.groups.len()
            )));
        }
        let groups = self
            .groups
            .iter()
            .zip(factors)
            .map(|(g, &f)| {
                let values: Vec<f64> = g.values().iter().map(|v| f * v).collect();
                ParamGroup::new(g.name.clone(), ParamVector::new(values)?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StepProposal { groups })
    }
}

/// Pure `w + scale * s`; the inputs are left untouched.
pub fn axpy(w: &ModelParams, s: &StepProposal, scale: f64) -> Result<ModelParams, CoreError> {
    s.congruent_to(w)?;
    let groups = w
        .groups
        .iter()
        .zip(&s.groups)
        .map(|(wg, sg)| {
            let values: Vec<f64> = wg
                .values()
                .iter()
                .zip(sg.values())
                .map(|(x, d)| x + scale * d)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFiniteResult(wg.name.clone()));
            }
            ParamGroup::new(wg.name.clone(), ParamVector::new(values)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelParams { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proposal(groups: &[(&str, &[f64])]) -> StepProposal {
        StepProposal::from_groups(
            groups
                .iter()
                .map(|(n, v)| ParamGroup::new(*n, ParamVector::new(v.to_vec()).unwrap()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn group_norm_three_four_five() {
        let p = proposal(&[("fc", &[3.0, 4.0])]);
        assert_eq!(p.group_norm("fc").unwrap(), 5.0);
    }

    #[test]
    fn group_norm_zero() {
        let p = proposal(&[("fc", &[0.0, 0.0, 0.0])]);
        assert_eq!(p.group_norm("fc").unwrap(), 0.0);
    }

    #[test]
    fn group_norm_ones() {
        let p = proposal(&[("fc", &[1.0, 1.0, 1.0, 1.0])]);
        assert_eq!(p.group_norm("fc").unwrap(), 2.0);
    }

    #[test]
    fn group_norm_unknown_group() {
        let p = proposal(&[("fc", &[1.0])]);
        assert_eq!(
            p.group_norm("nope"),
            Err(CoreError::UnknownGroup("nope".into()))
        );
    }

    #[test]
    fn global_norm_two_groups() {
        let p = proposal(&[("a", &[3.0]), ("b", &[4.0])]);
        assert_eq!(p.global_norm(), 5.0);
    }

    #[test]
    fn global_norm_single_group_equals_group_norm() {
        let p = proposal(&[("a", &[1.5, -2.5, 0.25])]);
        assert_eq!(p.global_norm(), p.group_norm("a").unwrap());
    }

    #[test]
    fn global_norm_three_small_groups() {
        let p = proposal(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0])]);
        assert_eq!(p.global_norm(), 2.0);
    }

    #[test]
    fn axpy_basic() {
        let w = ModelParams::single("w", vec![1.0, 1.0]).unwrap();
        let s = StepProposal::single("w", vec![0.5, -0.5]).unwrap();
        let out = axpy(&w, &s, 2.0).unwrap();
        assert_eq!(out.flatten(), vec![2.0, 0.0]);
        // inputs untouched
        assert_eq!(w.flatten(), vec![1.0, 1.0]);
    }

    #[test]
    fn axpy_zero_scale_is_identity() {
        let w = ModelParams::single("w", vec![0.3, -7.0]).unwrap();
        let s = StepProposal::single("w", vec![100.0, 100.0]).unwrap();
        assert_eq!(axpy(&w, &s, 0.0).unwrap(), w);
    }

    #[test]
    fn axpy_negative_unit() {
        let w = ModelParams::single("w", vec![0.0, 0.0, 0.0]).unwrap();
        let s = StepProposal::single("w", vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(axpy(&w, &s, -1.0).unwrap().flatten(), vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn axpy_shape_mismatch() {
        let w = ModelParams::single("w", vec![1.0]).unwrap();
        let s = StepProposal::single("other", vec![1.0]).unwrap();
        assert!(matches!(
            axpy(&w, &s, 1.0),
            Err(CoreError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn axpy_overflow_detected() {
        let w = ModelParams::single("w", vec![f64::MAX]).unwrap();
        let s = StepProposal::single("w", vec![f64::MAX]).unwrap();
        assert!(matches!(
            axpy(&w, &s, 1.0),
            Err(CoreError::NonFiniteResult(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn duplicate_group_rejected() {
        let g = |n: &str| ParamGroup::new(n, ParamVector::zeros(2)).unwrap();
        assert_eq!(
            ModelParams::new(vec![g("a"), g("a")]),
            Err(CoreError::DuplicateGroup("a".into()))
        );
    }

    #[test]
    fn empty_model_rejected() {
        assert_eq!(ModelParams::new(vec![]), Err(CoreError::EmptyModel));
    }

    #[test]
    fn bad_group_name_rejected() {
        assert!(ParamGroup::new("", ParamVector::zeros(1)).is_err());
        assert!(ParamGroup::new("a,b", ParamVector::zeros(1)).is_err());
    }

    #[test]
    fn axpy_round_trip_exact_on_integers() {
        let w = ModelParams::single("w", vec![3.0, -7.0, 12.0, 0.0]).unwrap();
        let s = StepProposal::single("w", vec![5.0, 2.0, -9.0, 4.0]).unwrap();
        let forward = axpy(&w, &s, 1.0).unwrap();
        let back = axpy(&forward, &s, -1.0).unwrap();
        assert_eq!(back, w);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_proposal() -> impl Strategy<Value = StepProposal> {
            proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 1..16), 1..5)
                .prop_map(|groups| {
                    StepProposal::from_groups(
                        groups
                            .into_iter()
                            .enumerate()
                            .map(|(i, values)| {
                                ParamGroup::new(format!("g{i}"), ParamVector::new(values).unwrap())
                                    .unwrap()
                            })
                            .collect(),
                    )
                    .unwrap()
                })
        }

        proptest! {
            #[test]
            fn global_norm_squares_sum_group_norms(p in arb_proposal()) {
                let total: f64 = p
                    .groups()
                    .iter()
                    .map(|g| {
                        let n = p.group_norm(g.name()).unwrap();
                        n * n
                    })
                    .sum();
                let global_sq = p.global_norm() * p.global_norm();
                let denom = global_sq.max(1e-300);
                prop_assert!((global_sq - total).abs() / denom <= 1e-12);
            }

            #[test]
            fn axpy_round_trip_on_integer_values(
                values in proptest::collection::vec((-1000i32..1000, -1000i32..1000), 1..32)
            ) {
                let (w_vals, s_vals): (Vec<f64>, Vec<f64>) = values
                    .iter()
                    .map(|&(a, b)| (a as f64, b as f64))
                    .unzip();
                let w = ModelParams::single("w", w_vals).unwrap();
                let s = StepProposal::single("w", s_vals).unwrap();
                let back = axpy(&axpy(&w, &s, 1.0).unwrap(), &s, -1.0).unwrap();
                prop_assert_eq!(back, w);
            }
        }
    }
}
