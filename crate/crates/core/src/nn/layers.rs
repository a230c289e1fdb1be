use super::{Fmap, Params, Real, Slot};

/// Unfolds `k x k` zero-padded neighbourhoods into a `(c*k*k) x (h*w)` matrix.
pub fn im2col<T: Real>(x: &Fmap<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (x.c, x.h, x.w);
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::zero(); c * k * k * plane];
    for ci in 0..c {
        let src = &x.data[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1]
                        .copy_from_slice(&src[sy * w + s0..sy * w + s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Fmap<T> {
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut out = Fmap::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    let d = &mut dst[sy * w + s0..sy * w + s0 + (x1 - x0)];
                    for (o, &v) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

/// Same-padded 2-D convolution with odd kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Conv2d {
    /// Registers `name.weight` (filled by `init`) and a zero `name.bias`.
    pub fn register<T: Real>(
        params: &mut Params<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        init: impl FnMut() -> T,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let weight = params.add(format!("{name}.weight"), &[out_c, in_c, k, k], init);
        let bias = params.add(format!("{name}.bias"), &[out_c], T::zero);
        Self {
            in_c,
            out_c,
            k,
            weight,
            bias,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    /// Returns the output and the unfolded input kept for the backward pass.
    pub fn forward<T: Real>(&self, p: &[T], x: &Fmap<T>) -> (Fmap<T>, Vec<T>) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let plane = x.plane();
        let cols = if self.k == 1 {
            x.data.clone()
        } else {
            im2col(x, self.k)
        };
        let mut y = Fmap::zeros(self.out_c, x.h, x.w);
        let bias = self.bias.of(p);
        for (o, b) in bias.iter().enumerate() {
            y.data[o * plane..(o + 1) * plane].fill(*b);
        }
        let kk = self.fan_in();
        T::gemm(
            self.out_c,
            kk,
            plane,
            self.weight.of(p),
            (kk as isize, 1),
            &cols,
            (plane as isize, 1),
            T::one(),
            &mut y.data,
            (plane as isize, 1),
        );
        (y, cols)
    }

    /// Accumulates weight and bias gradients into `g`; returns the input
    /// gradient when `need_dx`.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        cols: &[T],
        dy: &Fmap<T>,
        need_dx: bool,
    ) -> Option<Fmap<T>> {
        let plane = dy.plane();
        let kk = self.fan_in();
        T::gemm(
            self.out_c,
            plane,
            kk,
            &dy.data,
            (plane as isize, 1),
            cols,
            (1, plane as isize),
            T::one(),
            self.weight.of_mut(g),
            (kk as isize, 1),
        );
        let gb = self.bias.of_mut(g);
        for (o, b) in gb.iter_mut().enumerate() {
            *b += dy.data[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * plane];
        T::gemm(
            kk,
            self.out_c,
            plane,
            self.weight.of(p),
            (1, kk as isize),
            &dy.data,
            (plane as isize, 1),
            T::zero(),
            &mut dcols,
            (plane as isize, 1),
        );
        Some(if self.k == 1 {
            Fmap::new(self.in_c, dy.h, dy.w, dcols)
        } else {
            col2im(&dcols, self.in_c, dy.h, dy.w, self.k)
        })
    }
}

/// Dense layer `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Linear {
    pub fn register<T: Real>(
        params: &mut Params<T>,
        name: &str,
        in_f: usize,
        out_f: usize,
        init: impl FnMut() -> T,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), &[out_f, in_f], init);
        let bias = params.add(format!("{name}.bias"), &[out_f], T::zero);
        Self {
            in_f,
            out_f,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> Vec<T> {
        let w = self.weight.of(p);
        self.bias
            .of(p)
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                b + w[o * self.in_f..(o + 1) * self.in_f]
                    .iter()
                    .zip(x)
                    .map(|(&a, &v)| a * v)
                    .sum::<T>()
            })
            .collect()
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        {
            let gw = self.weight.of_mut(g);
            for (o, &d) in dy.iter().enumerate() {
                for (gi, &xi) in gw[o * self.in_f..(o + 1) * self.in_f].iter_mut().zip(x) {
                    *gi += d * xi;
                }
            }
        }
        for (gb, &d) in self.bias.of_mut(g).iter_mut().zip(dy) {
            *gb += d;
        }
        let w = self.weight.of(p);
        (0..self.in_f)
            .map(|i| (0..self.out_f).map(|o| w[o * self.in_f + i] * dy[o]).sum())
            .collect()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x * sigmoid(x)`
pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Multiplies `dy` by the SiLU derivative at pre-activation `x`, in place.
pub fn silu_backward<T: Real>(x: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(x) {
        let s = sigmoid(v);
        *d *= s * (T::one() + v * (T::one() - s));
    }
}

/// 2x2 mean pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &Fmap<T>) -> Fmap<T> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let quarter = T::lit(0.25);
    let mut out = Fmap::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w2 + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Fmap<T>) -> Fmap<T> {
    let quarter = T::lit(0.25);
    let mut up = upsample2(dy);
    up.data.iter_mut().for_each(|v| *v *= quarter);
    up
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Fmap<T>) -> Fmap<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Fmap::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Fmap<T>) -> Fmap<T> {
    let (h2, w2) = (dy.h / 2, dy.w / 2);
    let mut out = Fmap::zeros(dy.c, h2, w2);
    for c in 0..dy.c {
        let src = &dy.data[c * dy.plane()..(c + 1) * dy.plane()];
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..dy.h {
            for xx in 0..dy.w {
                dst[(y / 2) * w2 + xx / 2] += src[y * dy.w + xx];
            }
        }
    }
    out
}

pub fn concat_channels<T: Real>(a: &Fmap<T>, b: &Fmap<T>) -> Fmap<T> {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat extent");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Fmap::new(a.c + b.c, a.h, a.w, data)
}

/// Splits a gradient of `concat_channels(a, b)` into its two parts.
pub fn split_channels_grad<T: Real>(d: Fmap<T>, first: usize) -> (Fmap<T>, Fmap<T>) {
    let cut = first * d.plane();
    let mut head = d.data;
    let tail = head.split_off(cut);
    (
        Fmap::new(first, d.h, d.w, head),
        Fmap::new(d.c - first, d.h, d.w, tail),
    )
}

/// Sinusoidal features of progress `m` (scaled by 1000, the usual timestep
/// range): `[sin(1000 m f_i), cos(1000 m f_i)]` with geometric frequencies.
pub fn sinusoidal_embedding<T: Real>(m: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let t = m * 1000.0;
    let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
    let (sin, cos): (Vec<T>, Vec<T>) = freqs
        .map(|f| (T::lit((t * f).sin()), T::lit((t * f).cos())))
        .unzip();
    sin.into_iter().chain(cos).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot<T: Real>(a: &[T], b: &[T]) -> T {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let x = Fmap::new(2, 3, 4, (0..24).map(|i| (i as f64 * 0.37).sin()).collect());
        let cols_len = 2 * 9 * 12;
        let c: Vec<f64> = (0..cols_len).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs = dot(&im2col(&x, 3), &c);
        let rhs = dot(&x.data, &col2im(&c, 2, 3, 4, 3).data);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_and_upsampling_adjoints() {
        let x = Fmap::new(1, 4, 4, (0..16).map(|i| i as f64).collect());
        let p = avg_pool2(&x);
        assert_eq!(p.data, vec![2.5, 4.5, 10.5, 12.5]);
        let d = Fmap::new(1, 2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        assert!((dot(&p.data, &d.data) - dot(&x.data, &avg_pool2_backward(&d).data)).abs() < 1e-12);
        let u = upsample2(&d);
        assert!((dot(&u.data, &x.data) - dot(&d.data, &upsample2_backward(&x).data)).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut params = Params::<f64>::new();
        let conv = Conv2d::register(&mut params, "c", 1, 1, 3, || 0.0);
        params.get_mut("c.weight").unwrap()[4] = 1.0;
        params.get_mut("c.bias").unwrap()[0] = 0.5;
        let x = Fmap::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (y, _) = conv.forward(params.flat(), &x);
        assert_eq!(y.data, vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    #[test]
    fn embedding_layout() {
        let e: Vec<f64> = sinusoidal_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let a: Vec<f64> = sinusoidal_embedding(0.0, 16);
        let b: Vec<f64> = sinusoidal_embedding(1.0, 16);
        assert_ne!(a, b);
    }
}
