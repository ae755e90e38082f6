//! Quadratic polynomial expansion of an image.
//!
//! Around every pixel the intensity is fitted, in the weighted least-squares
//! sense, by `f(x) ~ x^T A x + b^T x + c` with Gaussian applicability
//! weights over a `(2n + 1)^2` neighbourhood. The basis and the weights are
//! separable, so the projections reduce to 1-D correlations; the constant
//! normal-equation matrix is inverted once.

use super::plane::Plane;

/// Per-pixel `A` and `b` of the local quadratic model.
#[derive(Debug, Clone)]
pub(crate) struct PolyCoeffs {
    pub width: usize,
    pub height: usize,
    /// `[b_x, b_y, a_xx, a_yy, a_xy]`, where `A = [[a_xx, a_xy], [a_xy, a_yy]]`.
    pub coeffs: Vec<[f64; 5]>,
}

impl PolyCoeffs {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64; 5] {
        &self.coeffs[y * self.width + x]
    }

    /// Bilinear interpolation of all five coefficients, edges replicated.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 5] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let corners = [self.at(x0, y0), self.at(x1, y0), self.at(x0, y1), self.at(x1, y1)];
        let mut out = [0.0; 5];
        for (c, wk) in corners.iter().zip(w) {
            for k in 0..5 {
                out[k] += wk * c[k];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PolyExpansion {
    radius: usize,
    g: Vec<f64>,
    xg: Vec<f64>,
    xxg: Vec<f64>,
    /// Inverse of the 6x6 weighted Gram matrix of `[1, x, y, x^2, y^2, xy]`.
    gram_inv: [[f64; 6]; 6],
}

impl PolyExpansion {
    pub fn new(radius: usize, sigma: f64) -> Self {
        let r = radius as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let xg: Vec<f64> = (-r..=r).zip(&g).map(|(k, w)| k as f64 * w).collect();
        let xxg: Vec<f64> = (-r..=r).zip(&g).map(|(k, w)| (k * k) as f64 * w).collect();

        let mut gram = [[0.0; 6]; 6];
        for v in -r..=r {
            for u in -r..=r {
                let w = g[(u + r) as usize] * g[(v + r) as usize];
                let (x, y) = (u as f64, v as f64);
                let basis = [1.0, x, y, x * x, y * y, x * y];
                for i in 0..6 {
                    for j in 0..6 {
                        gram[i][j] += w * basis[i] * basis[j];
                    }
                }
            }
        }
        let gram_inv = invert6(gram).expect("polynomial basis Gram matrix is non-singular");
        PolyExpansion {
            radius,
            g,
            xg,
            xxg,
            gram_inv,
        }
    }

    pub fn expand(&self, img: &Plane) -> PolyCoeffs {
        let (w, h) = (img.width, img.height);
        let r = self.radius as isize;
        // Vertical pass: moments 0, 1, 2 in y.
        let mut v0 = vec![0.0; w * h];
        let mut v1 = vec![0.0; w * h];
        let mut v2 = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for k in -r..=r {
                    let p = img.clamped(x as isize, y as isize + k);
                    let i = (k + r) as usize;
                    s0 += self.g[i] * p;
                    s1 += self.xg[i] * p;
                    s2 += self.xxg[i] * p;
                }
                let idx = y * w + x;
                v0[idx] = s0;
                v1[idx] = s1;
                v2[idx] = s2;
            }
        }
        let (v0, v1, v2) = (
            Plane::new(w, h, v0),
            Plane::new(w, h, v1),
            Plane::new(w, h, v2),
        );

        let mut coeffs = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                // Projections onto [1, x, y, x^2, y^2, xy].
                let mut c = [0.0; 6];
                for k in -r..=r {
                    let i = (k + r) as usize;
                    let (xi, yi) = (x as isize + k, y as isize);
                    let p0 = v0.clamped(xi, yi);
                    let p1 = v1.clamped(xi, yi);
                    let p2 = v2.clamped(xi, yi);
                    c[0] += self.g[i] * p0;
                    c[1] += self.xg[i] * p0;
                    c[2] += self.g[i] * p1;
                    c[3] += self.xxg[i] * p0;
                    c[4] += self.g[i] * p2;
                    c[5] += self.xg[i] * p1;
                }
                let mut sol = [0.0; 6];
                for (i, row) in self.gram_inv.iter().enumerate() {
                    sol[i] = row.iter().zip(&c).map(|(a, b)| a * b).sum();
                }
                coeffs.push([sol[1], sol[2], sol[3], sol[4], sol[5] * 0.5]);
            }
        }
        PolyCoeffs {
            width: w,
            height: h,
            coeffs,
        }
    }
}

/// Gauss-Jordan inversion with partial pivoting.
fn invert6(mut m: [[f64; 6]; 6]) -> Option<[[f64; 6]; 6]> {
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        for k in 0..6 {
            m[col][k] /= p;
            inv[col][k] /= p;
        }
        for r in 0..6 {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for k in 0..6 {
                        m[r][k] -= f * m[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_quadratic() {
        // f = 2x^2 - y^2 + 0.5xy + 3x - 4y + 7 around every interior pixel.
        let (w, h) = (21, 21);
        let f = |x: f64, y: f64| 2.0 * x * x - y * y + 0.5 * x * y + 3.0 * x - 4.0 * y + 7.0;
        let data = (0..w * h)
            .map(|i| f((i % w) as f64, (i / w) as f64))
            .collect();
        let img = Plane::new(w, h, data);
        let coeffs = PolyExpansion::new(3, 1.1).expand(&img);
        let (x0, y0) = (10.0, 10.0);
        // Local expansion around (x0, y0): b = grad f(x0, y0).
        let c = coeffs.at(10, 10);
        let bx = 4.0 * x0 + 0.5 * y0 + 3.0;
        let by = -2.0 * y0 + 0.5 * x0 - 4.0;
        let want = [bx, by, 2.0, -1.0, 0.25];
        for (got, want) in c.iter().zip(want) {
            assert!((got - want).abs() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn inverse_of_identity() {
        let mut m = [[0.0; 6]; 6];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 2.0;
        }
        let inv = invert6(m).unwrap();
        assert_eq!(inv[3][3], 0.5);
    }
}
