//! First-order optimization: adaptive-moment updates with per-group learning
//! rates, and the central finite-difference gradient used as a test oracle.

use thiserror::Error;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in group `{group}`; step skipped")]
    NonFiniteGradient { group: String },
    #[error("group count mismatch: state has {expected}, got {got}")]
    GroupCount { expected: usize, got: usize },
    #[error("shape mismatch in group `{group}`: state has {expected}, got {got}")]
    Shape { group: String, expected: usize, got: usize },
    #[error("objective returned a non-finite value at coordinate {coordinate}")]
    NonFiniteObjective { coordinate: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Maps raw per-group gradients to descent directions. The learning rate is
/// applied by the caller, so a rule only decides the direction's shape.
pub trait UpdateRule {
    fn directions(&mut self, grads: &[&[f64]]) -> Result<Vec<Vec<f64>>, OptimError>;
}

/// Plain gradient descent: the direction is the gradient itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainGradient;

impl UpdateRule for PlainGradient {
    fn directions(&mut self, grads: &[&[f64]]) -> Result<Vec<Vec<f64>>, OptimError> {
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { group: format!("#{i}") });
            }
        }
        Ok(grads.iter().map(|g| g.to_vec()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// Adaptive-moment state for a fixed list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    groups: Vec<ParamGroup>,
    step: u64,
}

impl OptimizerState {
    /// `groups` is `(name, learning rate, parameter count)` per group.
    pub fn new(groups: &[(&str, f64, usize)]) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|&(name, lr, n)| ParamGroup {
                    name: name.to_string(),
                    lr,
                    first_moment: vec![0.0; n],
                    second_moment: vec![0.0; n],
                })
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Appends zero moments so group `g` holds `new_len` parameters.
    pub fn extend_group(&mut self, g: usize, new_len: usize) {
        let group = &mut self.groups[g];
        if new_len > group.first_moment.len() {
            group.first_moment.resize(new_len, 0.0);
            group.second_moment.resize(new_len, 0.0);
        }
    }

    /// Keeps only the parameters flagged in `keep` for group `g`.
    pub fn retain_group(&mut self, g: usize, keep: &[bool]) {
        let group = &mut self.groups[g];
        let mut it = keep.iter();
        group.first_moment.retain(|_| *it.next().unwrap_or(&true));
        let mut it = keep.iter();
        group.second_moment.retain(|_| *it.next().unwrap_or(&true));
    }

    fn check(&self, grads: &[&[f64]]) -> Result<(), OptimError> {
        if grads.len() != self.groups.len() {
            return Err(OptimError::GroupCount { expected: self.groups.len(), got: grads.len() });
        }
        for (group, g) in self.groups.iter().zip(grads) {
            if g.len() != group.len() {
                return Err(OptimError::Shape { group: group.name.clone(), expected: group.len(), got: g.len() });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { group: group.name.clone() });
            }
        }
        Ok(())
    }

    /// In-place update `p -= lr_g * m_hat / (sqrt(v_hat) + eps)` for every group.
    /// A non-finite gradient anywhere rejects the whole step and leaves both
    /// parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), OptimError> {
        if params.len() != self.groups.len() {
            return Err(OptimError::GroupCount { expected: self.groups.len(), got: params.len() });
        }
        for (group, p) in self.groups.iter().zip(params.iter()) {
            if p.len() != group.len() {
                return Err(OptimError::Shape { group: group.name.clone(), expected: group.len(), got: p.len() });
            }
        }
        let dirs = self.directions(grads)?;
        for ((p, d), group) in params.iter_mut().zip(&dirs).zip(&self.groups) {
            for (pi, di) in p.iter_mut().zip(d) {
                *pi -= group.lr * di;
            }
        }
        Ok(())
    }
}

impl UpdateRule for OptimizerState {
    fn directions(&mut self, grads: &[&[f64]]) -> Result<Vec<Vec<f64>>, OptimError> {
        self.check(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let mut out = Vec::with_capacity(grads.len());
        for (group, g) in self.groups.iter_mut().zip(grads) {
            let mut dir = Vec::with_capacity(g.len());
            for ((m, v), &gi) in group.first_moment.iter_mut().zip(group.second_moment.iter_mut()).zip(g.iter()) {
                *m = BETA1 * *m + (1.0 - BETA1) * gi;
                *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                dir.push(m_hat / (v_hat.sqrt() + EPSILON));
            }
            out.push(dir);
        }
        Ok(out)
    }
}

/// Central differences `(f(p + h e_k) - f(p - h e_k)) / 2h` for every coordinate.
pub fn finite_diff_grad(
    mut objective: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>, OptimError> {
    if !(h > 0.0) {
        return Err(OptimError::BadStep(h));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let plus = objective(&p);
        p[k] = orig - h;
        let minus = objective(&p);
        p[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(OptimError::NonFiniteObjective { coordinate: k });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_advances_counter() {
        let mut st = OptimizerState::new(&[("a", 0.1, 2)]);
        let mut p = vec![1.0, -2.0];
        st.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g, v_hat = g^2, so the first update is lr * g / (|g| + eps).
        let mut st = OptimizerState::new(&[("a", 0.01, 3)]);
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        st.step(&mut [&mut p], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -0.01 * gi / (gi.abs() + EPSILON);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f = (x - 3)^2 + 10 (y + 1)^2
        let mut st = OptimizerState::new(&[("xy", 0.05, 2)]);
        let mut p = vec![0.0, 0.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        let dist = ((p[0] - 3.0).powi(2) + (p[1] + 1.0).powi(2)).sqrt();
        assert!(dist < 1e-4, "distance {dist}");
    }

    #[test]
    fn quadratic_bowl_200_steps() {
        let mut st = OptimizerState::new(&[("xy", 0.1, 2)]);
        let mut p = vec![0.5, 0.2];
        for _ in 0..200 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] - 0.5)];
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        let dist = ((p[0] - 1.0).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
        assert!(dist < 1e-4, "distance {dist}");
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut st = OptimizerState::new(&[("a", 0.1, 1), ("b", 0.1, 1)]);
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let err = st.step(&mut [&mut a, &mut b], &[&[1.0], &[f64::NAN]]).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { group: "b".into() });
        assert_eq!((a[0], b[0], st.step_count()), (1.0, 1.0, 0));
    }

    #[test]
    fn group_isolation_and_determinism() {
        let run = |lr_b: f64| {
            let mut st = OptimizerState::new(&[("a", 0.1, 2), ("b", lr_b, 1)]);
            let mut a = vec![0.3, -0.2];
            let mut b = vec![0.7];
            for i in 0..10 {
                let ga = [a[0] * 2.0 + i as f64 * 0.1, a[1].sin()];
                let gb = [b[0] - 0.1];
                st.step(&mut [&mut a, &mut b], &[&ga, &gb]).unwrap();
            }
            (a, b)
        };
        let (a1, b1) = run(0.1);
        let (a2, b2) = run(0.5);
        assert_eq!(a1, a2);
        assert_ne!(b1, b2);
        assert_eq!(run(0.1), (a1, b1));
    }

    #[test]
    fn extend_appends_zero_moments() {
        let mut st = OptimizerState::new(&[("a", 0.1, 1)]);
        let mut p = vec![1.0];
        st.step(&mut [&mut p], &[&[1.0]]).unwrap();
        st.extend_group(0, 3);
        assert_eq!(st.groups()[0].len(), 3);
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(&p[1..], &[2.0, 3.0]);
    }

    #[test]
    fn finite_diff_known_derivatives() {
        let g = finite_diff_grad(|p| p[0] * p[0] + p[1] * p[1], &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 7.0, &[1.0, 2.0, 3.0], 1e-3).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(finite_diff_grad(|p| 1.0 / p[0], &[0.0], 1e-3).is_ok());
        assert_eq!(
            finite_diff_grad(|p| if p[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3),
            Err(OptimError::NonFiniteObjective { coordinate: 0 })
        );
        assert!(finite_diff_grad(|_| 0.0, &[0.0], 0.0).is_err());
    }
}
