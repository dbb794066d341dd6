//! Stride-1 2D convolution with "same" zero padding and a dilation rate,
//! operating on `(H, W, C)` tensors. Weights are laid out
//! `[ky][kx][in][out]` so the innermost loop runs over output channels.

use rayon::prelude::*;

use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub struct ConvGrads {
    pub input: Option<LatentTensor>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; kernel * kernel * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_fn(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel);
        for ky in 0..kernel {
            for kx in 0..kernel {
                for ci in 0..in_channels {
                    for co in 0..out_channels {
                        let i = conv.widx(ky, kx, ci, co);
                        conv.weight[i] = f(ky, kx, ci, co);
                    }
                }
            }
        }
        conv
    }

    #[inline]
    pub fn widx(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + ci) * self.out_channels + co
    }

    /// Side length of the receptive field at the given dilation.
    pub fn receptive_field(&self, dilation: usize) -> usize {
        dilation * (self.kernel - 1) + 1
    }

    /// Zero-padding width on each side at the given dilation.
    pub fn padding(&self, dilation: usize) -> usize {
        dilation * (self.kernel - 1) / 2
    }

    pub fn forward(&self, x: &LatentTensor, dilation: usize) -> LatentTensor {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (h, w) = (x.height(), x.width());
        let (cin, cout) = (self.in_channels, self.out_channels);
        let pad = self.padding(dilation) as isize;
        let mut out = vec![0.0f32; h * w * cout];
        let row_len = w * cout;
        let xs = x.data();

        let compute_row = |r: usize, row: &mut [f32]| {
            for c in 0..w {
                let acc = &mut row[c * cout..(c + 1) * cout];
                acc.copy_from_slice(&self.bias);
                for ky in 0..self.kernel {
                    let rr = r as isize + (ky * dilation) as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let cc = c as isize + (kx * dilation) as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let xin = &xs[(rr as usize * w + cc as usize) * cin..][..cin];
                        let wbase = (ky * self.kernel + kx) * cin * cout;
                        for (ci, &xv) in xin.iter().enumerate() {
                            let wrow = &self.weight[wbase + ci * cout..][..cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        };

        if h * w >= 4096 {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(r, row)| compute_row(r, row));
        } else {
            out.chunks_mut(row_len)
                .enumerate()
                .for_each(|(r, row)| compute_row(r, row));
        }
        LatentTensor::from_vec(h, w, cout, out).expect("conv output size")
    }

    /// Gradients of a scalar loss given `dL/dy` for `y = self.forward(x, dilation)`.
    pub fn backward(&self, x: &LatentTensor, grad_out: &LatentTensor, dilation: usize, need_input: bool) -> ConvGrads {
        let (h, w) = (x.height(), x.width());
        let (cin, cout) = (self.in_channels, self.out_channels);
        let pad = self.padding(dilation) as isize;
        let mut gw = vec![0.0f32; self.weight.len()];
        let mut gb = vec![0.0f32; cout];
        let mut gx = if need_input {
            vec![0.0f32; h * w * cin]
        } else {
            Vec::new()
        };
        let xs = x.data();
        let gys = grad_out.data();

        for r in 0..h {
            for c in 0..w {
                let gy = &gys[(r * w + c) * cout..][..cout];
                for (b, &g) in gb.iter_mut().zip(gy) {
                    *b += g;
                }
                for ky in 0..self.kernel {
                    let rr = r as isize + (ky * dilation) as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let cc = c as isize + (kx * dilation) as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let xoff = (rr as usize * w + cc as usize) * cin;
                        let wbase = (ky * self.kernel + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xs[xoff + ci];
                            let woff = wbase + ci * cout;
                            let gwrow = &mut gw[woff..woff + cout];
                            for (gwv, &g) in gwrow.iter_mut().zip(gy) {
                                *gwv += xv * g;
                            }
                            if need_input {
                                let wrow = &self.weight[woff..woff + cout];
                                let dot: f32 = wrow.iter().zip(gy).map(|(a, b)| a * b).sum();
                                gx[xoff + ci] += dot;
                            }
                        }
                    }
                }
            }
        }

        ConvGrads {
            input: need_input.then(|| LatentTensor::from_vec(h, w, cin, gx).expect("grad size")),
            weight: gw,
            bias: gb,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_conv(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Conv2d {
        let mut conv = Conv2d::from_fn(cin, cout, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        conv
    }

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> LatentTensor {
        LatentTensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    /// Direct zero-padded dilated convolution, written independently of the
    /// layer's loop structure.
    fn brute_force(conv: &Conv2d, x: &LatentTensor, d: usize) -> LatentTensor {
        let k = conv.kernel as isize;
        let half = (k - 1) / 2;
        LatentTensor::from_fn(x.height(), x.width(), conv.out_channels, |r, c, co| {
            let mut acc = conv.bias[co] as f64;
            for dy in -half..=half {
                for dx in -half..=half {
                    let rr = r as isize + dy * d as isize;
                    let cc = c as isize + dx * d as isize;
                    if rr < 0 || cc < 0 || rr >= x.height() as isize || cc >= x.width() as isize {
                        continue;
                    }
                    for ci in 0..conv.in_channels {
                        let wv = conv.weight[conv.widx((dy + half) as usize, (dx + half) as usize, ci, co)];
                        acc += wv as f64 * x.get(rr as usize, cc as usize, ci) as f64;
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn forward_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = random_conv(&mut rng, 2, 3);
        let x = random_tensor(&mut rng, 9, 7, 2);
        for d in [1, 2, 3] {
            let got = conv.forward(&x, d);
            let want = brute_force(&conv, &x, d);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-5, "dilation {d}");
        }
    }

    #[test]
    fn dilated_receptive_field() {
        let conv = Conv2d::zeros(1, 1, 3);
        assert_eq!(conv.receptive_field(1), 3);
        assert_eq!(conv.receptive_field(2), 5);
        // An impulse spreads exactly over the dilated footprint.
        let ones = Conv2d::from_fn(1, 1, 3, |_, _, _, _| 1.0);
        let mut x = LatentTensor::zeros(11, 11, 1);
        x.set(5, 5, 0, 1.0);
        let y = ones.forward(&x, 2);
        let support: Vec<_> = (0..11)
            .flat_map(|r| (0..11).map(move |c| (r, c)))
            .filter(|&(r, c)| y.get(r, c, 0) != 0.0)
            .collect();
        assert_eq!(support.len(), 9);
        let rows: Vec<_> = support.iter().map(|p| p.0).collect();
        assert_eq!(*rows.iter().min().unwrap(), 3);
        assert_eq!(*rows.iter().max().unwrap(), 7);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = random_conv(&mut rng, 2, 2);
        let x = random_tensor(&mut rng, 5, 6, 2);
        let gy = random_tensor(&mut rng, 5, 6, 2);
        let d = 2;
        // L = <gy, conv(x)>, so dL/dy = gy.
        let loss = |conv: &Conv2d, x: &LatentTensor| -> f64 {
            let y = conv.forward(x, d);
            y.data().iter().zip(gy.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let grads = conv.backward(&x, &gy, d, true);
        let h = 1e-2f32;

        for i in [0, 5, 17, conv.weight.len() - 1] {
            let mut p = conv.clone();
            p.weight[i] += h;
            let mut m = conv.clone();
            m.weight[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h as f64);
            assert!(
                (fd - grads.weight[i] as f64).abs() < 1e-2,
                "weight {i}: {fd} vs {}",
                grads.weight[i]
            );
        }
        for i in 0..2 {
            let mut p = conv.clone();
            p.bias[i] += h;
            let mut m = conv.clone();
            m.bias[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h as f64);
            assert!((fd - grads.bias[i] as f64).abs() < 1e-2);
        }
        let gx = grads.input.unwrap();
        for i in [0, 13, 40, x.len() - 1] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h as f64);
            assert!((fd - gx.data()[i] as f64).abs() < 1e-2, "input {i}");
        }
    }

    #[test]
    fn parallel_and_serial_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = random_conv(&mut rng, 3, 4);
        let x = random_tensor(&mut rng, 80, 80, 3);
        let big = conv.forward(&x, 2);
        let want = brute_force(&conv, &x, 2);
        assert!(big.max_abs_diff(&want).unwrap() < 1e-5);
    }
}
