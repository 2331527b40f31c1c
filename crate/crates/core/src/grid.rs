//! Row-major 2D grids.

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(h: usize, w: usize, v: T) -> Self {
        Grid2 {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w, "grid data length");
        Grid2 { h, w, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.w + c] = v;
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Grid2<U> {
        Grid2 {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid2<f32> {
    /// Bilinear sample at fractional `(r, c)`; coordinates are clamped to the
    /// grid so samples beyond the outermost centres extend the edge value.
    pub fn sample_bilinear(&self, r: f64, c: f64) -> f32 {
        let r = r.clamp(0.0, (self.h - 1) as f64);
        let c = c.clamp(0.0, (self.w - 1) as f64);
        let (r0, c0) = (r.floor() as usize, c.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(self.h - 1), (c0 + 1).min(self.w - 1));
        let (fr, fc) = (r - r0 as f64, c - c0 as f64);
        let top = self.get(r0, c0) as f64 * (1.0 - fc) + self.get(r0, c1) as f64 * fc;
        let bot = self.get(r1, c0) as f64 * (1.0 - fc) + self.get(r1, c1) as f64 * fc;
        (top * (1.0 - fr) + bot * fr) as f32
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Normalized 1D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Reflect index into `[0, n)` without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian smoothing with reflected borders. `sigma <= 0` returns
/// the input unchanged.
pub fn gaussian_blur(g: &Grid2<f32>, sigma: f64) -> Grid2<f32> {
    if sigma <= 0.0 {
        return g.clone();
    }
    let k = gaussian_kernel(sigma);
    let rad = (k.len() / 2) as isize;
    let mut tmp = vec![0f64; g.h * g.w];
    for r in 0..g.h {
        for c in 0..g.w {
            let mut acc = 0.0;
            for (t, &wt) in k.iter().enumerate() {
                let cc = reflect(c as isize + t as isize - rad, g.w);
                acc += wt * g.get(r, cc) as f64;
            }
            tmp[r * g.w + c] = acc;
        }
    }
    let mut out = Grid2::filled(g.h, g.w, 0f32);
    for r in 0..g.h {
        for c in 0..g.w {
            let mut acc = 0.0;
            for (t, &wt) in k.iter().enumerate() {
                let rr = reflect(r as isize + t as isize - rad, g.h);
                acc += wt * tmp[rr * g.w + c];
            }
            out.set(r, c, acc as f32);
        }
    }
    out
}
