//! Single-channel float image with the resampling helpers the flow
//! estimator needs.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Bilinear sample with edge replication.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Separable correlation with a symmetric odd-length kernel, replicating
    /// edges.
    pub fn convolve_separable(&self, kernel: &[f64]) -> Plane {
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (k, &c) in kernel.iter().enumerate() {
                    s += c * self.clamped(x as isize + k as isize - r, y as isize);
                }
                tmp[y * w + x] = s;
            }
        }
        let tmp = Plane::new(w, h, tmp);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (k, &c) in kernel.iter().enumerate() {
                    s += c * tmp.clamped(x as isize, y as isize + k as isize - r);
                }
                out[y * w + x] = s;
            }
        }
        Plane::new(w, h, out)
    }

    pub fn gaussian_blur(&self, sigma: f64) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        self.convolve_separable(&gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize))
    }

    /// Mean over a `size x size` box (edges replicated), via running sums.
    pub fn box_mean(&self, size: usize) -> Plane {
        let r = (size / 2) as isize;
        let norm = 1.0 / (2 * r + 1) as f64;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let mut s: f64 = (-r..=r).map(|k| self.clamped(k, y as isize)).sum();
            for x in 0..w {
                tmp[y * w + x] = s * norm;
                s += self.clamped(x as isize + r + 1, y as isize)
                    - self.clamped(x as isize - r, y as isize);
            }
        }
        let tmp = Plane::new(w, h, tmp);
        let mut out = vec![0.0; w * h];
        for x in 0..w {
            let mut s: f64 = (-r..=r).map(|k| tmp.clamped(x as isize, k)).sum();
            for y in 0..h {
                out[y * w + x] = s * norm;
                s += tmp.clamped(x as isize, y as isize + r + 1)
                    - tmp.clamped(x as isize, y as isize - r);
            }
        }
        Plane::new(w, h, out)
    }

    /// Bilinear resize with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                out.push(self.bilinear(src_x, src_y));
            }
        }
        Plane::new(width, height, out)
    }

    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// Normalized Gaussian taps for offsets `-radius ..= radius`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}
