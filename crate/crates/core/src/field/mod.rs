//! Vector fields `f: U -> R^n`: the builtin catalog, user-defined fields
//! parsed from expressions, and the Lipschitz / sup-norm estimates that feed
//! every downstream certificate.

pub mod catalog;
pub mod expr;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{Aabb, GridSpec, NormSpec};
use expr::ExprAst;

pub use catalog::builtin;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("syntax error at {line}:{col} near {token:?}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        token: String,
        message: String,
    },
    #[error("unknown identifier {name:?} at {line}:{col}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("function {name:?} at {line}:{col} needs a parenthesized argument")]
    ArityMismatch {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("expected {expected} component expressions, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("unknown builtin field {0:?}")]
    UnknownBuiltin(String),
    #[error("builtin {name:?} requires parameter {param:?}")]
    MissingParam { name: String, param: String },
    #[error("region is not contained in the field's domain box")]
    RegionOutsideDomain,
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An evaluable vector field with its computational domain box and an
/// optional Lipschitz-constant hint. Immutable and shareable across
/// threads; evaluation is pure.
#[derive(Clone)]
pub struct VectorFieldSpec {
    name: String,
    dim: usize,
    domain: Aabb,
    params: BTreeMap<String, f64>,
    lipschitz_hint: Option<f64>,
    eval: Arc<EvalFn>,
    exprs: Option<Vec<ExprAst>>,
}

impl std::fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("params", &self.params)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl VectorFieldSpec {
    pub fn from_closure(
        name: impl Into<String>,
        dim: usize,
        domain: Aabb,
        params: BTreeMap<String, f64>,
        lipschitz_hint: Option<f64>,
        eval: Arc<EvalFn>,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            domain,
            params,
            lipschitz_hint,
            eval,
            exprs: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    /// Component expressions when the field came from the parser.
    pub fn exprs(&self) -> Option<&[ExprAst]> {
        self.exprs.as_deref()
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Same field restricted to a different domain box.
    pub fn with_domain(mut self, domain: Aabb) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_lipschitz_hint(mut self, hint: f64) -> Self {
        self.lipschitz_hint = Some(hint);
        self
    }

    /// `f + c` for a constant offset vector `c`.
    pub fn offset(&self, c: Vec<f64>) -> VectorFieldSpec {
        assert_eq!(c.len(), self.dim);
        let base = self.eval.clone();
        let c2 = c.clone();
        let dim = self.dim;
        VectorFieldSpec {
            name: format!("{}+offset", self.name),
            dim,
            domain: self.domain.clone(),
            params: self.params.clone(),
            lipschitz_hint: self.lipschitz_hint,
            eval: Arc::new(move |x, out| {
                base(x, out);
                for (o, &ci) in out.iter_mut().zip(&c2) {
                    *o += ci;
                }
            }),
            exprs: None,
        }
    }

    /// Largest `||f(x)||` over a coarse sample of the region (not certified;
    /// used only inside conservative padding terms).
    pub fn sup_norm_on(&self, region: &Aabb, n: &NormSpec, per_axis: usize) -> f64 {
        let dim = self.dim;
        let mut best = 0.0f64;
        let mut out = vec![0.0; dim];
        let mut idx = vec![0usize; dim];
        let steps = per_axis.max(2);
        loop {
            let x: Vec<f64> = (0..dim)
                .map(|a| {
                    let t = idx[a] as f64 / (steps - 1) as f64;
                    region.lo()[a] + t * (region.hi()[a] - region.lo()[a])
                })
                .collect();
            self.eval_into(&x, &mut out);
            best = best.max(n.eval(&out));
            let mut a = dim;
            loop {
                if a == 0 {
                    return best;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < steps {
                    break;
                }
                idx[a] = 0;
                if a == 0 {
                    return best;
                }
            }
        }
    }
}

/// Parses `dim` semicolon- or newline-separated component expressions into a
/// field. The domain box defaults to `[-10, 10]^dim` and can be replaced
/// with `with_domain`.
pub fn parse_field(
    source: &str,
    dim: usize,
    params: BTreeMap<String, f64>,
) -> Result<VectorFieldSpec, FieldError> {
    let exprs = expr::parse_components(source, dim, &params)?;
    let domain = Aabb::new(vec![-10.0; dim], vec![10.0; dim]).expect("static box");
    let exprs_for_eval = exprs.clone();
    let params_for_eval = params.clone();
    let eval: Arc<EvalFn> = Arc::new(move |x, out| {
        for (o, e) in out.iter_mut().zip(&exprs_for_eval) {
            *o = e.eval(x, &params_for_eval);
        }
    });
    Ok(VectorFieldSpec {
        name: "user".into(),
        dim,
        domain,
        params,
        lipschitz_hint: None,
        eval,
        exprs: Some(exprs),
    })
}

/// Sampled Lipschitz-constant estimate over `region`: max difference
/// quotient over random pairs plus central finite-difference directional
/// derivatives at random points, times a 1.1 safety factor. An estimate,
/// not a proof — downstream certificates are conditional on it.
pub fn estimate_lipschitz(
    f: &VectorFieldSpec,
    region: &Aabb,
    n: &NormSpec,
    samples: usize,
) -> Result<f64, FieldError> {
    use rand::{Rng, SeedableRng};
    if region.dim() != f.dim() {
        return Err(FieldError::DimMismatch {
            expected: f.dim(),
            got: region.dim(),
        });
    }
    for a in 0..region.dim() {
        if region.lo()[a] < f.domain.lo()[a] - 1e-12 || region.hi()[a] > f.domain.hi()[a] + 1e-12 {
            return Err(FieldError::RegionOutsideDomain);
        }
    }
    let dim = f.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x11b5_c417);
    let mut best = 0.0f64;
    let mut fx = vec![0.0; dim];
    let mut fy = vec![0.0; dim];
    let span: Vec<f64> = (0..dim).map(|a| region.hi()[a] - region.lo()[a]).collect();
    let eps_scale = 1e-6;
    let sample_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|a| rng.gen_range(region.lo()[a]..=region.hi()[a]))
            .collect()
    };
    for _ in 0..samples {
        // Macro-scale pair quotient.
        let x = sample_point(&mut rng);
        let y = sample_point(&mut rng);
        let d = n.distance(&x, &y);
        if d > 1e-12 {
            f.eval_into(&x, &mut fx);
            f.eval_into(&y, &mut fy);
            let q = n.distance(&fx, &fy) / d;
            best = best.max(q);
        }
        // Local directional derivative at x.
        let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = n.eval(&dir);
        if len > 1e-12 {
            let eps = eps_scale * span.iter().fold(f64::INFINITY, |m: f64, &s| m.min(s));
            let xp: Vec<f64> = x
                .iter()
                .zip(&dir)
                .enumerate()
                .map(|(a, (&xi, &di))| (xi + eps * di / len).clamp(region.lo()[a], region.hi()[a]))
                .collect();
            let xm: Vec<f64> = x
                .iter()
                .zip(&dir)
                .enumerate()
                .map(|(a, (&xi, &di))| (xi - eps * di / len).clamp(region.lo()[a], region.hi()[a]))
                .collect();
            let d2 = n.distance(&xp, &xm);
            if d2 > 1e-12 {
                f.eval_into(&xp, &mut fx);
                f.eval_into(&xm, &mut fy);
                best = best.max(n.distance(&fx, &fy) / d2);
            }
        }
    }
    Ok(best * 1.1)
}

/// Sampled logarithmic-norm (one-sided Lipschitz) estimate over `region`:
/// max over sampled finite-difference Jacobians of the matrix measure for
/// the norm. Trajectory pairs satisfy the Dahlquist bound
/// `||x(t) - y(t)|| <= e^(mu t) ||x(0) - y(0)||`, so for contracting flow
/// (`mu < L`) this propagates enclosure radii far more tightly than the
/// Lipschitz constant. Supported for p in {1, 2, inf} (mu_2 via a
/// Gershgorin bound on the symmetrized Jacobian); `None` for other norms.
/// An estimate, not a proof — downstream certificates are conditional on
/// it, like the sampled Lipschitz constant.
pub fn estimate_log_norm(
    f: &VectorFieldSpec,
    region: &Aabb,
    n: &NormSpec,
    samples: usize,
) -> Result<Option<f64>, FieldError> {
    use rand::{Rng, SeedableRng};
    if region.dim() != f.dim() {
        return Err(FieldError::DimMismatch {
            expected: f.dim(),
            got: region.dim(),
        });
    }
    for a in 0..region.dim() {
        if region.lo()[a] < f.domain.lo()[a] - 1e-12 || region.hi()[a] > f.domain.hi()[a] + 1e-12 {
            return Err(FieldError::RegionOutsideDomain);
        }
    }
    if log_norm_at(f, &region.center(), n).is_none() {
        return Ok(None);
    }
    let dim = f.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7a3d_91e5);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim)
            .map(|a| rng.gen_range(region.lo()[a]..=region.hi()[a]))
            .collect();
        if let Some(mu) = log_norm_at(f, &x, n) {
            best = best.max(mu);
        }
    }
    if !best.is_finite() {
        return Ok(None);
    }
    // Safety factor away from zero in the unsafe direction.
    Ok(Some(if best >= 0.0 { best * 1.1 } else { best * 0.9 }))
}

/// Matrix measure of the finite-difference Jacobian at one point, for
/// p in {1, 2, inf}; `None` for other norms or points outside the domain.
/// mu_2 uses a Gershgorin bound on the symmetrized Jacobian.
pub fn log_norm_at(f: &VectorFieldSpec, x: &[f64], n: &NormSpec) -> Option<f64> {
    let p = n.p();
    let is_inf = p.is_infinite();
    if !is_inf && p != 1.0 && p != 2.0 {
        return None;
    }
    if !f.domain.contains(x) {
        return None;
    }
    let dim = f.dim();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    let mut jac = vec![vec![0.0; dim]; dim];
    for j in 0..dim {
        let span = f.domain.hi()[j] - f.domain.lo()[j];
        let eps = (1e-6 * span).max(1e-9);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] = (x[j] + eps).min(f.domain.hi()[j]);
        xm[j] = (x[j] - eps).max(f.domain.lo()[j]);
        let w = xp[j] - xm[j];
        if w <= 0.0 {
            return None;
        }
        f.eval_into(&xp, &mut fp);
        f.eval_into(&xm, &mut fm);
        for i in 0..dim {
            jac[i][j] = (fp[i] - fm[i]) / w;
        }
    }
    let mu = if is_inf {
        // mu_inf: max row sum with diagonal kept signed.
        (0..dim)
            .map(|i| {
                jac[i][i]
                    + (0..dim)
                        .filter(|&j| j != i)
                        .map(|j| jac[i][j].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    } else if p == 1.0 {
        // mu_1: max column sum with diagonal kept signed.
        (0..dim)
            .map(|j| {
                jac[j][j]
                    + (0..dim)
                        .filter(|&i| i != j)
                        .map(|i| jac[i][j].abs())
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        (0..dim)
            .map(|i| {
                jac[i][i]
                    + (0..dim)
                        .filter(|&j| j != i)
                        .map(|j| (jac[i][j] + jac[j][i]).abs() / 2.0)
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    mu.is_finite().then_some(mu)
}

/// Effective Lipschitz constant for a field on a region: the hint when
/// available, otherwise a sampled estimate.
pub fn lipschitz_for(f: &VectorFieldSpec, region: &Aabb, n: &NormSpec) -> f64 {
    match f.lipschitz_hint {
        Some(l) => l,
        None => estimate_lipschitz(f, region, n, 2000).unwrap_or(1.0),
    }
}

/// Bounds on `sup ||f - g||` over a region.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FieldDistance {
    /// Sample max over cell centers: a lower bound.
    pub lower: f64,
    /// Lower bound plus `(L_f + L_g) * cell radius`: a certified upper
    /// bound conditional on the Lipschitz estimates.
    pub upper: f64,
}

/// Sup-norm distance between two fields over the cells of `grid` that lie
/// inside `region`.
pub fn sup_norm_distance(
    f: &VectorFieldSpec,
    g: &VectorFieldSpec,
    region: &Aabb,
    n: &NormSpec,
    grid: &GridSpec,
) -> Result<FieldDistance, FieldError> {
    if f.dim() != g.dim() {
        return Err(FieldError::DimMismatch {
            expected: f.dim(),
            got: g.dim(),
        });
    }
    let dim = f.dim();
    let mut fx = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let mut lower = 0.0f64;
    for lin in 0..grid.total_cells() {
        let c = grid.center_of(lin);
        if !region.contains(&c) {
            continue;
        }
        f.eval_into(&c, &mut fx);
        g.eval_into(&c, &mut gx);
        lower = lower.max(n.distance(&fx, &gx));
    }
    let lf = lipschitz_for(f, region, n);
    let lg = lipschitz_for(g, region, n);
    let upper = lower + (lf + lg) * grid.cell_radius(n);
    Ok(FieldDistance { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_logistic() {
        let f = parse_field("x - x^2", 1, BTreeMap::new()).unwrap();
        assert_relative_eq!(f.eval(&[0.5])[0], 0.25);
    }

    #[test]
    fn parse_diagonal_2d() {
        let f = parse_field("-x; -2*y", 2, BTreeMap::new()).unwrap();
        let v = f.eval(&[1.0, 1.0]);
        assert_eq!(v, vec![-1.0, -2.0]);
    }

    #[test]
    fn parse_predator_prey_matches_hand_evaluation() {
        let params: BTreeMap<String, f64> = [
            ("a", 1.0),
            ("K", 3.0),
            ("k", 0.5),
            ("c", 1.5),
            ("b", 0.5),
            ("beta", 1.0),
            ("f0", 0.5),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let f = parse_field(
            "a*x*(1-x/K) - k*y*(1-exp(-c*x)); -b*y + beta*y*(1-exp(-f0*x))",
            2,
            params,
        )
        .unwrap();
        let v = f.eval(&[1.0, 1.0]);
        // Hand evaluation: 1*1*(1 - 1/3) - 0.5*(1 - e^{-1.5}) and
        // -0.5 + (1 - e^{-0.5}).
        let expect0 = 2.0 / 3.0 - 0.5 * (1.0 - (-1.5f64).exp());
        let expect1 = -0.5 + (1.0 - (-0.5f64).exp());
        assert_relative_eq!(v[0], expect0, epsilon = 1e-12);
        assert_relative_eq!(v[1], expect1, epsilon = 1e-12);
    }

    #[test]
    fn lipschitz_linear() {
        let f = builtin("linear1d", &[("lambda", 2.0)].map(|(k, v)| (k.to_string(), v)).into())
            .unwrap();
        let region = Aabb::new(vec![-1.0], vec![1.0]).unwrap();
        let l = estimate_lipschitz(&f, &region, &NormSpec::l2(), 2000).unwrap();
        assert!((l - 2.2).abs() / 2.2 < 0.05, "L = {l}");
    }

    #[test]
    fn lipschitz_logistic() {
        let f = parse_field("x - x^2", 1, BTreeMap::new()).unwrap();
        let region = Aabb::new(vec![0.0], vec![2.0]).unwrap();
        let l = estimate_lipschitz(&f, &region, &NormSpec::l2(), 4000).unwrap();
        assert!((l - 3.3).abs() / 3.3 < 0.05, "L = {l}");
    }

    #[test]
    fn lipschitz_constant_field() {
        let f = parse_field("1.5", 1, BTreeMap::new()).unwrap();
        let region = Aabb::new(vec![-1.0], vec![1.0]).unwrap();
        let l = estimate_lipschitz(&f, &region, &NormSpec::l2(), 1000).unwrap();
        assert!(l.abs() < 1e-6, "L = {l}");
    }

    #[test]
    fn distance_to_self_is_zero() {
        let f = parse_field("x - x^2", 1, BTreeMap::new()).unwrap();
        let region = Aabb::new(vec![0.0], vec![2.0]).unwrap();
        let grid = GridSpec::uniform(&region, 0.01).unwrap();
        let d = sup_norm_distance(&f, &f, &region, &NormSpec::l2(), &grid).unwrap();
        assert_eq!(d.lower, 0.0);
        assert!(d.upper >= 0.0);
    }

    #[test]
    fn distance_constant_shift() {
        let f = parse_field("x - x^2", 1, BTreeMap::new()).unwrap();
        let g = f.offset(vec![0.3]);
        let region = Aabb::new(vec![0.0], vec![2.0]).unwrap();
        let grid = GridSpec::uniform(&region, 0.01).unwrap();
        let d = sup_norm_distance(&f, &g, &region, &NormSpec::l2(), &grid).unwrap();
        assert_relative_eq!(d.lower, 0.3, epsilon = 1e-12);
        assert!(d.upper >= 0.3 && d.upper < 0.4);
    }

    #[test]
    fn distance_scaled_logistic() {
        let f = parse_field("x*(1 - x)", 1, BTreeMap::new()).unwrap();
        let g = parse_field("3*x*(1 - x)", 1, BTreeMap::new()).unwrap();
        let region = Aabb::new(vec![0.5], vec![1.5]).unwrap();
        let grid = GridSpec::uniform(&region, 0.001).unwrap();
        let d = sup_norm_distance(&f, &g, &region, &NormSpec::l2(), &grid).unwrap();
        // |c-1| * max|x(1-x)| on [1/2, 3/2]; the max sits at the endpoint
        // x = 3/2 where |x(1-x)| = 3/4, so the distance is 2 * 3/4 = 1.5.
        assert!((d.lower - 1.5).abs() < 0.01, "lower = {}", d.lower);
        assert!(d.upper >= 1.5 && d.upper < 1.6, "upper = {}", d.upper);
    }

    #[test]
    fn print_parse_round_trip_on_catalog_expressions() {
        for (src, dim) in [
            ("x - x^2", 1),
            ("-x; -2*y", 2),
            ("-x*(x - 1)*(x - 2)", 1),
            ("3/4*x^4 - x^3 - 3*x^2 - 1", 1),
            (
                "sqrt(2)/4*(x + y)^2 - x; sqrt(2)/4*(x + y)^2 - y",
                2,
            ),
        ] {
            let f = parse_field(src, dim, BTreeMap::new()).unwrap();
            let printed: Vec<String> =
                f.exprs().unwrap().iter().map(|e| e.to_string()).collect();
            let back = parse_field(&printed.join("; "), dim, BTreeMap::new()).unwrap();
            assert_eq!(back.exprs(), f.exprs(), "round trip failed for {src:?}");
        }
    }
}
