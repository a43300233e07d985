//! Minimal fixed-size linear algebra for 3-vectors and 3x3 matrices.
//!
//! Everything here is `Copy` and allocation-free; the coefficient tensors of
//! the dynamics are all of the form `alpha*I + beta*(v v^T)`, so the few
//! dense routines (solve, eigenvalues) are only needed for cross-checks and
//! generic callers.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector along `self`; `None` for the zero vector.
    pub fn unit(self) -> Option<Vec3> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        let a = self.0;
        let b = other.0;
        Vec3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    /// Some orthonormal pair completing `self.unit()` to a right-handed triad.
    pub fn orthonormal_complement(self) -> (Vec3, Vec3) {
        let n = self.unit().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let seed = if n.0[0].abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let a = (seed - n * seed.dot(n)).unit().expect("seed not parallel");
        let b = n.cross(a);
        (a, b)
    }

    pub fn max_abs(self) -> f64 {
        self.0[0].abs().max(self.0[1].abs()).max(self.0[2].abs())
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        self * (1.0 / s)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn diagonal(d: f64) -> Mat3 {
        Mat3([[d, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, d]])
    }

    /// `a b^T`.
    pub fn outer(a: Vec3, b: Vec3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = a.0[i] * b.0[j];
            }
        }
        Mat3(m)
    }

    pub fn transpose(self) -> Mat3 {
        let m = self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(self) -> f64 {
        let m = self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Solve `self * x = b` by partial-pivot elimination.
    pub fn solve(self, b: Vec3) -> Option<Vec3> {
        let mut a = self.0;
        let mut rhs = b.0;
        for col in 0..3 {
            let mut piv = col;
            for row in col + 1..3 {
                if a[row][col].abs() > a[piv][col].abs() {
                    piv = row;
                }
            }
            if a[piv][col] == 0.0 {
                return None;
            }
            a.swap(col, piv);
            rhs.swap(col, piv);
            for row in col + 1..3 {
                let f = a[row][col] / a[col][col];
                for k in col..3 {
                    a[row][k] -= f * a[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = [0.0; 3];
        for row in (0..3).rev() {
            let mut s = rhs[row];
            for k in row + 1..3 {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        Some(Vec3(x))
    }

    pub fn inverse(self) -> Option<Mat3> {
        let c0 = self.solve(Vec3::new(1.0, 0.0, 0.0))?;
        let c1 = self.solve(Vec3::new(0.0, 1.0, 0.0))?;
        let c2 = self.solve(Vec3::new(0.0, 0.0, 1.0))?;
        Some(Mat3([
            [c0.0[0], c1.0[0], c2.0[0]],
            [c0.0[1], c1.0[1], c2.0[1]],
            [c0.0[2], c1.0[2], c2.0[2]],
        ]))
    }

    /// Cholesky factor `L` (lower triangular, `self = L L^T`) of a symmetric
    /// positive-definite matrix.
    pub fn cholesky(self) -> Option<Mat3> {
        let a = self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i][j] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(Mat3(l))
    }

    /// Solve `L x = b` with `self` lower triangular.
    pub fn solve_lower(self, b: Vec3) -> Vec3 {
        let l = self.0;
        let mut x = [0.0; 3];
        x[0] = b.0[0] / l[0][0];
        x[1] = (b.0[1] - l[1][0] * x[0]) / l[1][1];
        x[2] = (b.0[2] - l[2][0] * x[0] - l[2][1] * x[1]) / l[2][2];
        Vec3(x)
    }

    pub fn max_abs(self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Eigenvalues of a symmetric matrix, ascending (analytic 3x3 routine).
    pub fn sym_eigenvalues(self) -> [f64; 3] {
        let a = self.0;
        // Scale out the diagonal mean for conditioning, then use the
        // trigonometric form of Cardano on the shifted matrix.
        let q = self.trace() / 3.0;
        let b = [
            [a[0][0] - q, a[0][1], a[0][2]],
            [a[1][0], a[1][1] - q, a[1][2]],
            [a[2][0], a[2][1], a[2][2] - q],
        ];
        let p2 = b[0][0] * b[0][0]
            + b[1][1] * b[1][1]
            + b[2][2] * b[2][2]
            + 2.0 * (b[0][1] * b[0][1] + b[0][2] * b[0][2] + b[1][2] * b[1][2]);
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q, q, q];
        }
        let bm = Mat3(b);
        let r = bm.det() / (2.0 * p * p * p);
        let phi = (r.clamp(-1.0, 1.0)).acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut ev = [e1, e2, e3];
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let m = self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(m)
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut m = self.0;
        for row in &mut m {
            for x in row {
                *x *= s;
            }
        }
        Mat3(m)
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self.0;
        for (row, orow) in m.iter_mut().zip(o.0.iter()) {
            for (x, y) in row.iter_mut().zip(orow.iter()) {
                *x += y;
            }
        }
        Mat3(m)
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o * -1.0
    }
}

/// Eigenvalues of `a^{-1} m` for symmetric positive-definite `a` and
/// symmetric `m`, ascending. Computed from the congruent symmetric pencil
/// `L^{-1} m L^{-T}` with `a = L L^T`, so the result is real by construction.
pub fn generalized_eigenvalues(a: Mat3, m: Mat3) -> Option<[f64; 3]> {
    let l = a.cholesky()?;
    // Columns of L^{-1} m L^{-T}.
    let linv_m = {
        let mt = m;
        let c0 = l.solve_lower(Vec3::new(mt.0[0][0], mt.0[1][0], mt.0[2][0]));
        let c1 = l.solve_lower(Vec3::new(mt.0[0][1], mt.0[1][1], mt.0[2][1]));
        let c2 = l.solve_lower(Vec3::new(mt.0[0][2], mt.0[1][2], mt.0[2][2]));
        Mat3([
            [c0.0[0], c1.0[0], c2.0[0]],
            [c0.0[1], c1.0[1], c2.0[1]],
            [c0.0[2], c1.0[2], c2.0[2]],
        ])
    };
    // (L^{-1} m L^{-T}) = L^{-1} (m L^{-T}) = (L^{-1} (L^{-1} m^T)^T)^T applied twice;
    // since m is symmetric, apply solve_lower to the rows of linv_m.
    let r0 = l.solve_lower(Vec3::new(linv_m.0[0][0], linv_m.0[0][1], linv_m.0[0][2]));
    let r1 = l.solve_lower(Vec3::new(linv_m.0[1][0], linv_m.0[1][1], linv_m.0[1][2]));
    let r2 = l.solve_lower(Vec3::new(linv_m.0[2][0], linv_m.0[2][1], linv_m.0[2][2]));
    let sym = Mat3([r0.0, r1.0, r2.0]);
    Some(sym.sym_eigenvalues())
}
