//! Convolution and pooling against independently coded nested-loop oracles.

use detectlab_tensor::conv::conv_out_dim;
use detectlab_tensor::{Tape, Tensor, XorShiftRng};

/// Direct quadruple-loop convolution, written without reference to the
/// production kernel: walks every output element and sums taps one by one.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    n: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, kh, stride, padding, dilation).unwrap();
    let ow = conv_out_dim(wd, kw, stride, padding, dilation).unwrap();
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as i64 - padding as i64;
                                let ix = (ox * stride + kx * dilation) as i64 - padding as i64;
                                if iy < 0 || iy >= h as i64 || ix < 0 || ix >= wd as i64 {
                                    continue;
                                }
                                let xv =
                                    x[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn rand_vec(rng: &mut XorShiftRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn run_conv(
    x: Tensor<f64>,
    w: Tensor<f64>,
    bias: Option<Tensor<f64>>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Vec<f64> {
    let tape = Tape::new();
    let xv = tape.constant(&x);
    let wv = tape.constant(&w);
    let bv = bias.as_ref().map(|b| tape.constant(b));
    xv.conv2d(wv, bv, stride, padding, dilation)
        .unwrap()
        .value_vec()
}

#[test]
fn dilation_three_example_matches_oracle() {
    let mut rng = XorShiftRng::new(101);
    let x = rand_vec(&mut rng, 2 * 7 * 7);
    let w = rand_vec(&mut rng, 3 * 2 * 3 * 3);
    let got = run_conv(
        Tensor::new(vec![1, 2, 7, 7], x.clone()).unwrap(),
        Tensor::new(vec![3, 2, 3, 3], w.clone()).unwrap(),
        None,
        1,
        3,
        3,
    );
    let want = conv_oracle(&x, &w, None, 1, 2, 7, 7, 3, 3, 3, 1, 3, 3);
    assert_eq!(got.len(), want.len());
    for (g, o) in got.iter().zip(&want) {
        assert!((g - o).abs() < 1e-12, "{g} vs {o}");
    }
}

#[test]
fn fifty_random_configurations_match_oracle() {
    let mut rng = XorShiftRng::new(2024);
    let mut tried = 0;
    while tried < 50 {
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(4);
        let h = 3 + rng.below(8);
        let w = 3 + rng.below(8);
        let kh = 1 + rng.below(3);
        let kw = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let padding = rng.below(4);
        let dilation = 1 + rng.below(3);
        if conv_out_dim(h, kh, stride, padding, dilation).is_none()
            || conv_out_dim(w, kw, stride, padding, dilation).is_none()
        {
            continue;
        }
        tried += 1;
        let x = rand_vec(&mut rng, n * cin * h * w);
        let wt = rand_vec(&mut rng, cout * cin * kh * kw);
        let with_bias = rng.below(2) == 1;
        let b = with_bias.then(|| rand_vec(&mut rng, cout));
        let got = run_conv(
            Tensor::new(vec![n, cin, h, w], x.clone()).unwrap(),
            Tensor::new(vec![cout, cin, kh, kw], wt.clone()).unwrap(),
            b.clone()
                .map(|b| Tensor::new(vec![cout], b).unwrap()),
            stride,
            padding,
            dilation,
        );
        let want = conv_oracle(
            &x,
            &wt,
            b.as_deref(),
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            dilation,
        );
        for (g, o) in got.iter().zip(&want) {
            assert!(
                (g - o).abs() < 1e-12,
                "config n{n} cin{cin} cout{cout} {h}x{w} k{kh}x{kw} s{stride} p{padding} d{dilation}"
            );
        }
    }
}

/// Nested-loop max-pool oracle with explicit -inf padding.
fn max_pool_oracle(
    x: &[f64],
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best = f64::NEG_INFINITY;
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let iy = (oy * stride + ky) as i64 - padding as i64;
                    let ix = (ox * stride + kx) as i64 - padding as i64;
                    let v = if iy < 0 || iy >= h as i64 || ix < 0 || ix >= w as i64 {
                        f64::NEG_INFINITY
                    } else {
                        x[iy as usize * w + ix as usize]
                    };
                    if v > best {
                        best = v;
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

#[test]
fn max_pool_matches_oracle() {
    let mut rng = XorShiftRng::new(9);
    let x = rand_vec(&mut rng, 81);
    let tape = Tape::new();
    let xv = tape.constant(&Tensor::new(vec![1, 1, 9, 9], x.clone()).unwrap());
    let got = xv.pool_max2d(5, 1, 2).unwrap().value_vec();
    let want = max_pool_oracle(&x, 9, 9, 5, 1, 2);
    assert_eq!(got, want);
}

#[test]
fn max_pool_geometry_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(&Tensor::zeros(&[1, 1, 4, 4]));
    assert!(x.pool_max2d(9, 1, 2).is_err());
}

/// Gradients of conv and pooling against explicit finite differences on the
/// summed output (independent of the production backward code).
#[test]
fn conv_backward_matches_finite_differences() {
    let mut rng = XorShiftRng::new(77);
    let x = Tensor::new(vec![1, 2, 6, 6], rand_vec(&mut rng, 72)).unwrap();
    let w = Tensor::new(vec![2, 2, 3, 3], rand_vec(&mut rng, 36)).unwrap();
    let b = Tensor::new(vec![2], rand_vec(&mut rng, 2)).unwrap();

    let f = |inputs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let xv = tape.constant(&inputs[0]);
        let wv = tape.constant(&inputs[1]);
        let bv = tape.constant(&inputs[2]);
        // weight the sum so the gradient is not uniform
        let y = xv.conv2d(wv, Some(bv), 2, 1, 2).unwrap();
        let m = y.sigmoid().sum_all();
        m.item().unwrap()
    };

    let tape = Tape::new();
    let xv = tape.leaf_grad(&x);
    let wv = tape.leaf_grad(&w);
    let bv = tape.leaf_grad(&b);
    let y = xv.conv2d(wv, Some(bv), 2, 1, 2).unwrap();
    let loss = y.sigmoid().sum_all();
    let grads = tape.backward(loss).unwrap();

    let inputs = [x, w, b];
    let h = 1e-6;
    for (ti, var) in [(0, xv), (1, wv), (2, bv)] {
        let analytic = grads.wrt(var).unwrap();
        for flat in 0..inputs[ti].numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[flat] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[flat] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(
                (analytic[flat] - numeric).abs() < 1e-6,
                "input {ti} coord {flat}: {} vs {numeric}",
                analytic[flat]
            );
        }
    }
}
