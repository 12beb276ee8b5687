//! Layer kernels on flat `f64` buffers in channel-major, row-major order.

/// Valid cross-correlation. `input` is `[c_in][h][w]`, `weights` is
/// `[c_out][c_in][k][k]`; output is `[c_out][h-k+1][w-k+1]`.
pub fn conv2d_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..c_in {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let ker = &weights[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = ker[ky * k + kx];
                    for y in 0..oh {
                        let row = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; c_out];
    for co in 0..c_out {
        let go = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        gb[co] = go.iter().sum();
        for ci in 0..c_in {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let base = (co * c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weights[base + ky * k + kx];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let row = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let g = &go[y * ow..(y + 1) * ow];
                        let gdst = &mut gi[ci * h * w + (y + ky) * w + kx..ci * h * w + (y + ky) * w + kx + ow];
                        for ((gv, s), d) in g.iter().zip(row).zip(gdst.iter_mut()) {
                            acc += gv * s;
                            *d += gv * wv;
                        }
                    }
                    gw[base + ky * k + kx] = acc;
                }
            }
        }
    }
    (gi, gw, gb)
}

/// 2×2 max-pool, stride 2, trailing odd rows/columns dropped. Returns the
/// pooled values and the flat input index of each maximum (first on ties,
/// scanning row-major within the window).
pub fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = ch * h * w + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                    if input[j] > input[best] {
                        best = j;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut gi = vec![0.0; input_len];
    for (g, &i) in grad_out.iter().zip(argmax) {
        gi[i] += g;
    }
    gi
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weights[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Returns `(grad_x, grad_weights, grad_bias)`.
pub fn dense_backward(x: &[f64], weights: &[f64], grad_y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    let mut gx = vec![0.0; n_in];
    let mut gw = vec![0.0; weights.len()];
    for (o, g) in grad_y.iter().enumerate() {
        let row = &weights[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            gx[i] += g * row[i];
            grow[i] = g * x[i];
        }
    }
    (gx, gw, grad_y.to_vec())
}

pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient is zero wherever the pre-activation is `<= 0`.
pub fn relu_backward(z: &[f64], grad: &[f64]) -> Vec<f64> {
    z.iter().zip(grad).map(|(zv, g)| if *zv > 0.0 { *g } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// max |analytic − fd| / max |fd|
    fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        analytic.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
    }

    fn fd_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-6;
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xp[i];
                xp[i] = orig + h;
                let up = f(&xp);
                xp[i] = orig - h;
                let down = f(&xp);
                xp[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn conv_hand_example() {
        // 1 channel 3x3 input, 2x2 kernel
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w = [1.0, 0.0, 0.0, -1.0];
        let out = conv2d_forward(&input, 1, 3, 3, &w, &[0.5], 1, 2);
        assert_eq!(out, vec![1.0 - 5.0 + 0.5, 2.0 - 6.0 + 0.5, 4.0 - 8.0 + 0.5, 5.0 - 9.0 + 0.5]);
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c_in, h, w, c_out, k) = (2, 7, 6, 3, 3);
        let input = rand_vec(&mut rng, c_in * h * w);
        let weights = rand_vec(&mut rng, c_out * c_in * k * k);
        let bias = rand_vec(&mut rng, c_out);
        let probe = rand_vec(&mut rng, c_out * (h - k + 1) * (w - k + 1));
        let (gi, gw, gb) = conv2d_backward(&input, c_in, h, w, &weights, c_out, k, &probe);
        let fi = fd_grad(&input, |x| dot(&conv2d_forward(x, c_in, h, w, &weights, &bias, c_out, k), &probe));
        let fw = fd_grad(&weights, |x| dot(&conv2d_forward(&input, c_in, h, w, x, &bias, c_out, k), &probe));
        let fb = fd_grad(&bias, |x| dot(&conv2d_forward(&input, c_in, h, w, &weights, x, c_out, k), &probe));
        assert!(rel_err(&gi, &fi) < 1e-6);
        assert!(rel_err(&gw, &fw) < 1e-6);
        assert!(rel_err(&gb, &fb) < 1e-6);
    }

    #[test]
    fn dense_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_vec(&mut rng, 9);
        let w = rand_vec(&mut rng, 36);
        let b = rand_vec(&mut rng, 4);
        let probe = rand_vec(&mut rng, 4);
        let (gx, gw, gb) = dense_backward(&x, &w, &probe);
        assert!(rel_err(&gx, &fd_grad(&x, |v| dot(&dense_forward(v, &w, &b), &probe))) < 1e-6);
        assert!(rel_err(&gw, &fd_grad(&w, |v| dot(&dense_forward(&x, v, &b), &probe))) < 1e-6);
        assert!(rel_err(&gb, &fd_grad(&b, |v| dot(&dense_forward(&x, &w, v), &probe))) < 1e-6);
    }

    #[test]
    fn maxpool_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (2, 6, 5);
        let x = rand_vec(&mut rng, c * h * w);
        let (out, idx) = maxpool2_forward(&x, c, h, w);
        assert_eq!(out.len(), c * 3 * 2);
        let probe = rand_vec(&mut rng, out.len());
        let g = maxpool2_backward(&probe, &idx, x.len());
        let fd = fd_grad(&x, |v| dot(&maxpool2_forward(v, c, h, w).0, &probe));
        assert!(rel_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn relu_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand_vec(&mut rng, 20);
        let probe = rand_vec(&mut rng, 20);
        let g = relu_backward(&z, &probe);
        let fd = fd_grad(&z, |v| dot(&relu(v), &probe));
        assert!(rel_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let (out, idx) = maxpool2_forward(&x, 1, 2, 2);
        assert_eq!(out, vec![1.0]);
        assert_eq!(idx, vec![0]);
        assert_eq!(maxpool2_backward(&[2.0], &idx, 4), vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_kink_has_zero_gradient() {
        assert_eq!(relu_backward(&[0.0, -1.0, 2.0], &[5.0, 5.0, 5.0]), vec![0.0, 0.0, 5.0]);
    }
}
