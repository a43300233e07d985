//! Quadrature rules: Gauss-Legendre nodes and composite integration.

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on `P_n` from the Chebyshev initial guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_deriv(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrate `f` over `[a, b]` with a single application of the rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Integrate over `[a, b]` split into `panels` equal panels.
    pub fn integrate_composite<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        assert!(panels >= 1);
        let w = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            acc += self.integrate(a + p as f64 * w, a + (p + 1) as f64 * w, &mut f);
        }
        acc
    }
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Trapezoid rule over uniformly sampled values with spacing `dx`.
///
/// For smooth integrands whose odd derivatives vanish at both ends (even
/// decaying functions in particular) this rule converges superalgebraically,
/// which is why the spectral integrals in this crate use uniform grids.
pub fn trapezoid_uniform(values: &[f64], dx: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dx * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}

/// Spherical Bessel function `j1(x) = sin(x)/x^2 - cos(x)/x`, with the
/// series branch near zero and `j1(x)/x` (an even, entire function) exposed
/// separately because kernels divide by the argument.
pub fn spherical_j1(x: f64) -> f64 {
    x * spherical_j1_over_x(x)
}

/// `j1(x)/x`, entire; equals `1/3` at `x = 0`.
pub fn spherical_j1_over_x(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.05 {
        // j1(x)/x = 1/3 - x^2/30 + x^4/840 - x^6/45360 + ...
        let x2 = x * x;
        1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0 - x2 * x2 * x2 / 45360.0
    } else {
        (x.sin() / (x * x) - x.cos() / x) / x
    }
}

/// Lagrange weights for 4-point cubic interpolation on a uniform grid,
/// evaluated at offset `u` from the first stencil node (0 <= u <= 3 when the
/// query lies inside the stencil).
pub fn lagrange_cubic_weights(u: f64) -> [f64; 4] {
    let u1 = u - 1.0;
    let u2 = u - 2.0;
    let u3 = u - 3.0;
    [
        -u1 * u2 * u3 / 6.0,
        u * u2 * u3 / 2.0,
        -u * u1 * u3 / 2.0,
        u * u1 * u2 / 6.0,
    ]
}

/// `sin(x)/x`, with the series branch near zero.
pub fn sinc(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}
