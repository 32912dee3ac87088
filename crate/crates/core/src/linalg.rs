//! Small dense vector helpers on `Vec<f64>` plus least-squares solves.

use nalgebra::{DMatrix, DVector};

pub type Vector = Vec<f64>;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn scale(v: &[f64], s: f64) -> Vector {
    v.iter().map(|a| a * s).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// a + s * b
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unit vector in the direction of `v`, or `None` for (numerically) zero input.
pub fn normalize(v: &[f64]) -> Option<Vector> {
    let n = norm(v);
    if n <= f64::MIN_POSITIVE * 1e8 || !n.is_finite() {
        None
    } else {
        Some(scale(v, 1.0 / n))
    }
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Orthonormal basis of the tangent space of the unit sphere at `u`.
pub fn tangent_basis(u: &[f64]) -> Vec<Vector> {
    let m = u.len();
    let mut basis: Vec<Vector> = Vec::new();
    let mut refs: Vec<Vector> = vec![u.to_vec()];
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        for r in &refs {
            let c = dot(&e, r);
            e = axpy(&e, -c, r);
        }
        let n = norm(&e);
        if n > 1e-6 {
            let e = scale(&e, 1.0 / n);
            refs.push(e.clone());
            basis.push(e);
        }
        if basis.len() + 1 == m {
            break;
        }
    }
    basis
}

/// Move along the sphere from `u` by tangent coordinates `c` in `basis`, then renormalise.
pub fn sphere_retract(u: &[f64], basis: &[Vector], c: &[f64]) -> Vector {
    let mut v = u.to_vec();
    for (b, ci) in basis.iter().zip(c) {
        v = axpy(&v, *ci, b);
    }
    normalize(&v).unwrap_or_else(|| u.to_vec())
}

/// Minimum-norm least-squares solution of `J d = r`.
pub fn lstsq(j: &DMatrix<f64>, r: &[f64]) -> Vector {
    if j.ncols() == 0 {
        return Vec::new();
    }
    if j.nrows() == 0 {
        return vec![0.0; j.ncols()];
    }
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 + 1e-300;
    let rhs = DVector::from_column_slice(r);
    match svd.solve(&rhs, eps) {
        Ok(d) => d.iter().cloned().collect(),
        Err(_) => vec![0.0; j.ncols()],
    }
}

/// Singular values in decreasing order.
pub fn singular_values(j: &DMatrix<f64>) -> Vec<f64> {
    if j.nrows() == 0 || j.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = j.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Orthonormal basis (as columns) of the null space of `j`.
pub fn null_space(j: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = j.ncols();
    if j.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to square so that the SVD yields a full V
    let mut a = DMatrix::zeros(j.nrows().max(n), n);
    a.view_mut((0, 0), (j.nrows(), n)).copy_from(j);
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        for r in 0..n {
            out[(r, k)] = vt[(i, r)];
        }
    }
    out
}

/// Wrap an angle into [-π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let mut r = (a + std::f64::consts::PI) % t;
    if r < 0.0 {
        r += t;
    }
    r - std::f64::consts::PI
}

/// Quintic smoothstep with value 0 below `a` and 1 above `b`.
pub fn smoothstep(a: f64, b: f64, s: f64) -> f64 {
    if s <= a {
        return 0.0;
    }
    if s >= b {
        return 1.0;
    }
    let u = (s - a) / (b - a);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_basis_is_orthonormal() {
        let u = normalize(&[0.3, -0.4, 0.5, 0.1]).unwrap();
        let b = tangent_basis(&u);
        assert_eq!(b.len(), 3);
        for (i, e) in b.iter().enumerate() {
            assert!(dot(e, &u).abs() < 1e-14);
            for f in &b[..i] {
                assert!(dot(e, f).abs() < 1e-14);
            }
            assert!((norm(e) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn smoothstep_endpoints_and_symmetry() {
        assert_eq!(smoothstep(1.0, 2.0, 0.5), 0.0);
        assert_eq!(smoothstep(1.0, 2.0, 2.5), 1.0);
        assert!((smoothstep(0.0, 1.0, 0.5) - 0.5).abs() < 1e-15);
        let s = 0.3;
        assert!((smoothstep(0.0, 1.0, s) + smoothstep(0.0, 1.0, 1.0 - s) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lstsq_min_norm() {
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let d = lstsq(&j, &[2.0]);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_row() {
        let j = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]);
        let n = null_space(&j, 1e-10);
        assert_eq!(n.ncols(), 2);
        for k in 0..2 {
            assert!(n[(2, k)].abs() < 1e-12);
        }
    }
}
