//! Builtin field catalog.
//!
//! | name              | dim | expression                                              | params (defaults)                                   | domain box          |
//! |-------------------|-----|---------------------------------------------------------|-----------------------------------------------------|---------------------|
//! | `linear1d`        | 1   | `-lambda*x`                                             | `lambda` (1)                                        | `[-10, 10]`         |
//! | `logistic_shift`  | 1   | `x - x^2`                                               | —                                                   | `[-3, 4]`           |
//! | `logistic_c`      | 1   | `c*x*(1-x)`                                             | `c` (1)                                             | `[-3, 4]`           |
//! | `sine_piecewise`  | 1   | `x` for x<0; `sin(pi x)/pi` on [0,1); `1-x` for x≥1     | —                                                   | `[-5, 5]`           |
//! | `cubic_sva`       | 1   | `-x*(x-1)*(x-2)`                                        | —                                                   | `[-3, 5]`           |
//! | `quartic_ck`      | 1   | `3/4*x^4 - x^3 - 3*x^2 - 1`                             | —                                                   | `[-8, 8]`           |
//! | `diag2d`          | 2   | `-x; -2*y`                                              | —                                                   | `[-2, 2]^2`         |
//! | `uv`              | 2   | `u*(u-1); -v`                                           | —                                                   | `[-3, 3]^2`         |
//! | `saddle_node_rot` | 2   | `sqrt(2)/4*(x+y)^2 - x; sqrt(2)/4*(x+y)^2 - y`          | —                                                   | `[-3, 3]^2`         |
//! | `pp`              | 2   | `a*x*(1-x/K) - k*y*(1-exp(-c*x)); -b*y + beta*y*(1-exp(-f0*x))` | `K` (required), `a` (1), `k` (0.5), `c` (1.5), `b` (0.5), `beta` (1), `f0` (0.5) | `[-1, 8] x [-1, 6]` |
//!
//! The predator-prey growth-response parameter is published as `f`; the
//! catalog calls it `f0` to avoid shadowing the field symbol.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::geometry::Aabb;

use super::{FieldError, VectorFieldSpec};

fn box1(lo: f64, hi: f64) -> Aabb {
    Aabb::new(vec![lo], vec![hi]).expect("static box")
}

fn box2(lo: [f64; 2], hi: [f64; 2]) -> Aabb {
    Aabb::new(lo.to_vec(), hi.to_vec()).expect("static box")
}

fn merged(
    name: &str,
    supplied: &BTreeMap<String, f64>,
    defaults: &[(&str, Option<f64>)],
) -> Result<BTreeMap<String, f64>, FieldError> {
    let mut out = BTreeMap::new();
    for &(key, default) in defaults {
        match supplied.get(key).copied().or(default) {
            Some(v) => {
                out.insert(key.to_string(), v);
            }
            None => {
                return Err(FieldError::MissingParam {
                    name: name.to_string(),
                    param: key.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Instantiates a catalog field. Missing optional parameters take their
/// defaults; `pp` requires `K`.
pub fn builtin(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<VectorFieldSpec, FieldError> {
    match name {
        "linear1d" => {
            let p = merged(name, params, &[("lambda", Some(1.0))])?;
            let lambda = p["lambda"];
            Ok(VectorFieldSpec::from_closure(
                name,
                1,
                box1(-10.0, 10.0),
                p,
                Some(lambda.abs()),
                Arc::new(move |x, out| out[0] = -lambda * x[0]),
            ))
        }
        "logistic_shift" => Ok(VectorFieldSpec::from_closure(
            name,
            1,
            box1(-3.0, 4.0),
            BTreeMap::new(),
            Some(7.0), // sup |1 - 2x| on [-3, 4]
            Arc::new(|x, out| out[0] = x[0] - x[0] * x[0]),
        )),
        "logistic_c" => {
            let p = merged(name, params, &[("c", Some(1.0))])?;
            let c = p["c"];
            Ok(VectorFieldSpec::from_closure(
                name,
                1,
                box1(-3.0, 4.0),
                p,
                Some(7.0 * c.abs()),
                Arc::new(move |x, out| out[0] = c * x[0] * (1.0 - x[0])),
            ))
        }
        "sine_piecewise" => Ok(VectorFieldSpec::from_closure(
            name,
            1,
            box1(-5.0, 5.0),
            BTreeMap::new(),
            Some(1.0),
            Arc::new(|x, out| {
                let v = x[0];
                out[0] = if v < 0.0 {
                    v
                } else if v < 1.0 {
                    (std::f64::consts::PI * v).sin() / std::f64::consts::PI
                } else {
                    1.0 - v
                };
            }),
        )),
        "cubic_sva" => Ok(VectorFieldSpec::from_closure(
            name,
            1,
            box1(-3.0, 5.0),
            BTreeMap::new(),
            None,
            Arc::new(|x, out| {
                let v = x[0];
                out[0] = -v * (v - 1.0) * (v - 2.0);
            }),
        )),
        "quartic_ck" => Ok(VectorFieldSpec::from_closure(
            name,
            1,
            box1(-8.0, 8.0),
            BTreeMap::new(),
            None,
            Arc::new(|x, out| {
                let v = x[0];
                out[0] = 0.75 * v.powi(4) - v.powi(3) - 3.0 * v * v - 1.0;
            }),
        )),
        "diag2d" => Ok(VectorFieldSpec::from_closure(
            name,
            2,
            box2([-2.0, -2.0], [2.0, 2.0]),
            BTreeMap::new(),
            Some(2.0),
            Arc::new(|x, out| {
                out[0] = -x[0];
                out[1] = -2.0 * x[1];
            }),
        )),
        "uv" => Ok(VectorFieldSpec::from_closure(
            name,
            2,
            box2([-3.0, -3.0], [3.0, 3.0]),
            BTreeMap::new(),
            None,
            Arc::new(|x, out| {
                out[0] = x[0] * (x[0] - 1.0);
                out[1] = -x[1];
            }),
        )),
        "saddle_node_rot" => Ok(VectorFieldSpec::from_closure(
            name,
            2,
            box2([-3.0, -3.0], [3.0, 3.0]),
            BTreeMap::new(),
            None,
            Arc::new(|x, out| {
                let q = std::f64::consts::SQRT_2 / 4.0 * (x[0] + x[1]) * (x[0] + x[1]);
                out[0] = q - x[0];
                out[1] = q - x[1];
            }),
        )),
        "pp" => {
            let p = merged(
                name,
                params,
                &[
                    ("K", None),
                    ("a", Some(1.0)),
                    ("k", Some(0.5)),
                    ("c", Some(1.5)),
                    ("b", Some(0.5)),
                    ("beta", Some(1.0)),
                    ("f0", Some(0.5)),
                ],
            )?;
            let (a, kk, k, c, b, beta, f0) =
                (p["a"], p["K"], p["k"], p["c"], p["b"], p["beta"], p["f0"]);
            Ok(VectorFieldSpec::from_closure(
                name,
                2,
                box2([-1.0, -1.0], [8.0, 6.0]),
                p,
                None,
                Arc::new(move |x, out| {
                    let (u, v) = (x[0], x[1]);
                    out[0] = a * u * (1.0 - u / kk) - k * v * (1.0 - (-c * u).exp());
                    out[1] = -b * v + beta * v * (1.0 - (-f0 * u).exp());
                }),
            ))
        }
        _ => Err(FieldError::UnknownBuiltin(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn linear1d_eval() {
        let f = builtin("linear1d", &params(&[("lambda", 2.0)])).unwrap();
        assert_eq!(f.eval(&[3.0])[0], -6.0);
    }

    #[test]
    fn quartic_local_and_global_minimum_values() {
        let f = builtin("quartic_ck", &BTreeMap::new()).unwrap();
        assert_relative_eq!(f.eval(&[-1.0])[0], -2.25);
        assert_relative_eq!(f.eval(&[2.0])[0], -9.0);
    }

    #[test]
    fn sine_piecewise_branches() {
        let f = builtin("sine_piecewise", &BTreeMap::new()).unwrap();
        assert_eq!(f.eval(&[-2.0])[0], -2.0);
        assert_relative_eq!(
            f.eval(&[0.5])[0],
            1.0 / std::f64::consts::PI,
            epsilon = 1e-14
        );
        assert_eq!(f.eval(&[3.0])[0], -2.0);
    }

    #[test]
    fn missing_required_param() {
        assert!(matches!(
            builtin("pp", &BTreeMap::new()),
            Err(FieldError::MissingParam { .. })
        ));
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            builtin("nope", &BTreeMap::new()),
            Err(FieldError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn rotated_system_matches_uv_under_rotation() {
        // The rotated field is the (u,v) saddle-node pushed through the 45
        // degree rotation u = (x+y)/sqrt2, v = (y-x)/sqrt2.
        let rot = builtin("saddle_node_rot", &BTreeMap::new()).unwrap();
        let uv = builtin("uv", &BTreeMap::new()).unwrap();
        let s = std::f64::consts::SQRT_2;
        for (x, y) in [(0.3, -0.1), (-0.5, 0.4), (1.0, 1.0)] {
            let w = rot.eval(&[x, y]);
            let (u, v) = ((x + y) / s, (y - x) / s);
            let duv = uv.eval(&[u, v]);
            // Rotate (du, dv) back to (dx, dy).
            let dx = (duv[0] - duv[1]) / s;
            let dy = (duv[0] + duv[1]) / s;
            assert_relative_eq!(w[0], dx, epsilon = 1e-12);
            assert_relative_eq!(w[1], dy, epsilon = 1e-12);
        }
    }
}
