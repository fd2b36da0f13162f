//! Euclidean projection onto a polyhedron `{x : n_i . x >= b_i}`.
//!
//! Dual active-set method (Goldfarb–Idnani) specialised to the identity
//! Hessian: start from the unconstrained minimiser, repeatedly add the most
//! violated constraint and drop active constraints whose multipliers would
//! turn negative. Active normals stay linearly independent, and an
//! infeasible system is detected when the violated normal lies in the cone
//! spanned by the negatives of the active ones.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse normal as `(index, coefficient)` pairs.
    pub normal: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: String,
}

impl Constraint {
    pub fn new(normal: Vec<(usize, f64)>, rhs: f64, label: impl Into<String>) -> Self {
        Self {
            normal,
            rhs,
            label: label.into(),
        }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.normal.iter().map(|&(i, a)| a * x[i]).sum::<f64>() - self.rhs
    }

    fn dense(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for &(i, a) in &self.normal {
            v[i] += a;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub x: Vec<f64>,
    /// Indices of the constraints active at the solution with their
    /// multipliers.
    pub active: Vec<(usize, f64)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Infeasible {
    /// Labels of the constraints that certify infeasibility.
    pub conflicting: Vec<String>,
}

/// Projects `target` onto the constraint set. Constraints with slack above
/// `-tol` count as satisfied.
pub fn project(target: &[f64], constraints: &[Constraint], tol: f64) -> Result<Projection, Infeasible> {
    let n = target.len();
    let normals: Vec<DVector<f64>> = constraints.iter().map(|c| c.dense(n)).collect();
    let mut x = DVector::from_column_slice(target);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let max_iter = 50 * (constraints.len() + n) + 100;
    let mut iterations = 0;

    let slack = |x: &DVector<f64>, i: usize| normals[i].dot(x) - constraints[i].rhs;

    loop {
        // Most violated constraint, measured in normalised distance.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..constraints.len() {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&x, i);
            if s < -tol {
                let norm = normals[i].norm().max(f64::MIN_POSITIVE);
                let score = s / norm;
                if pick.is_none_or(|(_, best)| score < best) {
                    pick = Some((i, score));
                }
            }
        }
        let Some((p, _)) = pick else {
            return Ok(Projection {
                x: x.iter().copied().collect(),
                active: active.iter().copied().zip(lambda.iter().copied()).collect(),
                iterations,
            });
        };
        let np = &normals[p];
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Infeasible {
                    conflicting: vec![format!("iteration limit while enforcing {}", constraints[p].label)],
                });
            }
            let (z, r) = directions(&normals, &active, np);
            let zz = z.dot(np);
            let s_p = slack(&x, p);
            let t2 = if zz > 1e-14 * np.norm_squared() {
                -s_p / zz
            } else {
                f64::INFINITY
            };
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let ratio = lambda[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            if t1.is_infinite() && t2.is_infinite() {
                let mut conflicting = vec![constraints[p].label.clone()];
                conflicting.extend(
                    active
                        .iter()
                        .zip(r.iter())
                        .filter(|(_, rk)| rk.abs() > 1e-12)
                        .map(|(&a, _)| constraints[a].label.clone()),
                );
                return Err(Infeasible { conflicting });
            }
            if t2 <= t1 {
                x += &z * t2;
                for (l, rk) in lambda.iter_mut().zip(r.iter()) {
                    *l -= t2 * rk;
                }
                active.push(p);
                lambda.push(lambda_p + t2);
                break;
            }
            if t2.is_finite() {
                x += &z * t1;
            }
            for (l, rk) in lambda.iter_mut().zip(r.iter()) {
                *l -= t1 * rk;
            }
            lambda_p += t1;
            let k = drop_at.expect("t1 finite");
            active.remove(k);
            lambda.remove(k);
        }
    }
}

/// Primal step `z = n_p - N r` in the null space of the active normals and
/// dual step `r = (N^T N)^{-1} N^T n_p`.
fn directions(normals: &[DVector<f64>], active: &[usize], np: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
    if active.is_empty() {
        return (np.clone(), Vec::new());
    }
    let n = np.len();
    let q = active.len();
    let mut mat = DMatrix::zeros(n, q);
    for (c, &a) in active.iter().enumerate() {
        mat.set_column(c, &normals[a]);
    }
    let gram = mat.transpose() * &mat;
    let rhs = mat.transpose() * np;
    let r = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
    };
    let z = np - &mat * &r;
    (z, r.iter().copied().collect())
}
