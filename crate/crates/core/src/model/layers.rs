//! Network building blocks with explicit forward/backward passes:
//! feature-axis normalization, affine maps, and the gated recurrent unit.
//!
//! Activations are `(rows, features)` matrices; sequence inputs are
//! `(steps, batch, features)` tensors. Every backward pass was validated
//! against central finite differences (see the tests below and the
//! whole-model gradient check in `net.rs`).

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

/// Variance floor of the normalization layers.
pub const NORM_EPS: f64 = 1e-5;

pub struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Feature-axis normalization with learned gain and bias, per row.
pub fn norm_forward(
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
    x: &Array2<f64>,
) -> (Array2<f64>, NormCache) {
    let (rows, feat) = x.dim();
    let mut xhat = Array2::<f64>::zeros((rows, feat));
    let mut inv_std = Array1::<f64>::zeros(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / feat as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / feat as f64;
        let istd = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[r] = istd;
        for (c, &v) in row.iter().enumerate() {
            xhat[[r, c]] = (v - mean) * istd;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * gain[c] + bias[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of [`norm_forward`]; returns (dx, dgain, dbias).
pub fn norm_backward(
    gain: ArrayView1<f64>,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (rows, feat) = dy.dim();
    let mut dgain = Array1::<f64>::zeros(feat);
    let mut dbias = Array1::<f64>::zeros(feat);
    let mut dx = Array2::<f64>::zeros((rows, feat));
    for r in 0..rows {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..feat {
            let d = dy[[r, c]];
            let xh = cache.xhat[[r, c]];
            dgain[c] += d * xh;
            dbias[c] += d;
            let dxh = d * gain[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh;
        }
        let n = feat as f64;
        let istd = cache.inv_std[r];
        for c in 0..feat {
            let dxh = dy[[r, c]] * gain[c];
            let xh = cache.xhat[[r, c]];
            dx[[r, c]] = istd * (dxh - sum_dxhat / n - xh * sum_dxhat_xhat / n);
        }
    }
    (dx, dgain, dbias)
}

/// y = x W^T + b with W stored `(out, in)`.
pub fn affine_forward(w: ArrayView2<f64>, b: ArrayView1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        row += &b;
    }
    y
}

/// Backward of [`affine_forward`]; returns (dx, dw, db).
pub fn affine_backward(
    w: ArrayView2<f64>,
    x: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let dx = dy.dot(&w);
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

/// Parameter views of one GRU direction. Gate order along the 3H axis is
/// reset, update, new.
#[derive(Clone, Copy)]
pub struct GruViews<'a> {
    pub w_ih: ArrayView2<'a, f64>,
    pub w_hh: ArrayView2<'a, f64>,
    pub b_ih: ArrayView1<'a, f64>,
    pub b_hh: ArrayView1<'a, f64>,
}

pub struct GruCache {
    /// Per processing step k: gate activations and the hidden-side new-gate
    /// pre-projection, each (steps, batch, hidden).
    r: Array3<f64>,
    z: Array3<f64>,
    n: Array3<f64>,
    hh_n: Array3<f64>,
    h_prev: Array3<f64>,
}

pub struct GruGrads {
    pub dw_ih: Array2<f64>,
    pub dw_hh: Array2<f64>,
    pub db_ih: Array1<f64>,
    pub db_hh: Array1<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Run one GRU direction over a sequence tensor `(steps, batch, input)`.
/// With `reverse` the scan runs from the last step to the first; outputs
/// are always stored at their own step index. Returns the hidden states
/// `(steps, batch, hidden)` and, when requested, the cache for backward.
pub fn gru_forward(
    p: GruViews,
    xs: &Array3<f64>,
    reverse: bool,
    want_cache: bool,
) -> (Array3<f64>, Option<GruCache>) {
    let (steps, batch, input) = xs.dim();
    let hidden = p.w_hh.ncols();
    debug_assert_eq!(p.w_ih.ncols(), input);
    debug_assert_eq!(p.w_ih.nrows(), 3 * hidden);

    // One GEMM for all input-side projections.
    let xs_flat = xs
        .view()
        .into_shape_with_order((steps * batch, input))
        .expect("standard layout");
    let xp = xs_flat.dot(&p.w_ih.t()); // (steps*batch, 3H)

    let mut hs = Array3::<f64>::zeros((steps, batch, hidden));
    let mut cache = want_cache.then(|| GruCache {
        r: Array3::zeros((steps, batch, hidden)),
        z: Array3::zeros((steps, batch, hidden)),
        n: Array3::zeros((steps, batch, hidden)),
        hh_n: Array3::zeros((steps, batch, hidden)),
        h_prev: Array3::zeros((steps, batch, hidden)),
    });

    let mut h = Array2::<f64>::zeros((batch, hidden));
    for k in 0..steps {
        let s_idx = if reverse { steps - 1 - k } else { k };
        let hp = h.dot(&p.w_hh.t()); // (batch, 3H)
        if let Some(c) = cache.as_mut() {
            c.h_prev.slice_mut(s![k, .., ..]).assign(&h);
        }
        let mut h_new = Array2::<f64>::zeros((batch, hidden));
        for bt in 0..batch {
            for j in 0..hidden {
                let xi = s_idx * batch + bt;
                let a_r = xp[[xi, j]] + p.b_ih[j] + hp[[bt, j]] + p.b_hh[j];
                let a_z =
                    xp[[xi, hidden + j]] + p.b_ih[hidden + j] + hp[[bt, hidden + j]] + p.b_hh[hidden + j];
                let hh_n = hp[[bt, 2 * hidden + j]] + p.b_hh[2 * hidden + j];
                let r = sigmoid(a_r);
                let z = sigmoid(a_z);
                let n = (xp[[xi, 2 * hidden + j]] + p.b_ih[2 * hidden + j] + r * hh_n).tanh();
                let h_out = (1.0 - z) * n + z * h[[bt, j]];
                h_new[[bt, j]] = h_out;
                if let Some(c) = cache.as_mut() {
                    c.r[[k, bt, j]] = r;
                    c.z[[k, bt, j]] = z;
                    c.n[[k, bt, j]] = n;
                    c.hh_n[[k, bt, j]] = hh_n;
                }
            }
        }
        hs.slice_mut(s![s_idx, .., ..]).assign(&h_new);
        h = h_new;
    }
    (hs, cache)
}

/// Backpropagation through time for one GRU direction.
/// Returns the input gradient `(steps, batch, input)` and parameter grads.
pub fn gru_backward(
    p: GruViews,
    xs: &Array3<f64>,
    cache: &GruCache,
    dhs: &Array3<f64>,
    reverse: bool,
) -> (Array3<f64>, GruGrads) {
    let (steps, batch, input) = xs.dim();
    let hidden = p.w_hh.ncols();

    // Input-side and hidden-side pre-activation gradients per step.
    let mut g_in = Array3::<f64>::zeros((steps, batch, 3 * hidden));
    let mut g_hid = Array3::<f64>::zeros((steps, batch, 3 * hidden));
    let mut dh_carry = Array2::<f64>::zeros((batch, hidden));

    for k in (0..steps).rev() {
        let s_idx = if reverse { steps - 1 - k } else { k };
        for bt in 0..batch {
            for j in 0..hidden {
                let dh = dhs[[s_idx, bt, j]] + dh_carry[[bt, j]];
                let r = cache.r[[k, bt, j]];
                let z = cache.z[[k, bt, j]];
                let n = cache.n[[k, bt, j]];
                let hh_n = cache.hh_n[[k, bt, j]];
                let h_prev = cache.h_prev[[k, bt, j]];

                let dz = dh * (h_prev - n);
                let dn = dh * (1.0 - z);
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * hh_n;
                let da_hn = dn_pre * r;
                let dz_pre = dz * z * (1.0 - z);
                let dr_pre = dr * r * (1.0 - r);

                g_in[[k, bt, j]] = dr_pre;
                g_in[[k, bt, hidden + j]] = dz_pre;
                g_in[[k, bt, 2 * hidden + j]] = dn_pre;
                g_hid[[k, bt, j]] = dr_pre;
                g_hid[[k, bt, hidden + j]] = dz_pre;
                g_hid[[k, bt, 2 * hidden + j]] = da_hn;
                dh_carry[[bt, j]] = dh * z;
            }
        }
        // dh_prev contribution through the hidden-side projections.
        let hg = g_hid.slice(s![k, .., ..]);
        dh_carry += &hg.dot(&p.w_hh);
    }

    // Reorder the input-side gradients to sequence order for the GEMMs.
    let mut g_in_seq = Array3::<f64>::zeros((steps, batch, 3 * hidden));
    for k in 0..steps {
        let s_idx = if reverse { steps - 1 - k } else { k };
        g_in_seq
            .slice_mut(s![s_idx, .., ..])
            .assign(&g_in.slice(s![k, .., ..]));
    }

    let g_in_flat = g_in_seq
        .view()
        .into_shape_with_order((steps * batch, 3 * hidden))
        .expect("standard layout");
    let xs_flat = xs
        .view()
        .into_shape_with_order((steps * batch, input))
        .expect("standard layout");
    let g_hid_flat = g_hid
        .view()
        .into_shape_with_order((steps * batch, 3 * hidden))
        .expect("standard layout");
    let h_prev_flat = cache
        .h_prev
        .view()
        .into_shape_with_order((steps * batch, hidden))
        .expect("standard layout");

    let dw_ih = g_in_flat.t().dot(&xs_flat);
    let dw_hh = g_hid_flat.t().dot(&h_prev_flat);
    let db_ih = g_in_flat.sum_axis(Axis(0));
    let db_hh = g_hid_flat.sum_axis(Axis(0));
    let dxs_flat = g_in_flat.dot(&p.w_ih);
    let dxs = dxs_flat
        .into_shape_with_order((steps, batch, input))
        .expect("standard layout");

    (dxs, GruGrads { dw_ih, dw_hh, db_ih, db_hh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn rand3(rng: &mut ChaCha8Rng, a: usize, b: usize, c: usize) -> Array3<f64> {
        Array3::from_shape_fn((a, b, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn norm_zero_input_maps_to_bias() {
        let gain = Array1::from_elem(4, 2.0);
        let bias = Array1::from_elem(4, 0.5);
        let x = Array2::<f64>::zeros((3, 4));
        let (y, _) = norm_forward(gain.view(), bias.view(), &x);
        assert!(y.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rows, feat) = (3, 5);
        let x = rand2(&mut rng, rows, feat);
        let gain = Array1::from_shape_fn(feat, |_| rng.gen_range(0.5..1.5));
        let bias = Array1::from_shape_fn(feat, |_| rng.gen_range(-0.5..0.5));
        let dy = rand2(&mut rng, rows, feat);

        let (_, cache) = norm_forward(gain.view(), bias.view(), &x);
        let (dx, dgain, dbias) = norm_backward(gain.view(), &cache, &dy);

        let loss = |x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>| {
            let (y, _) = norm_forward(g.view(), b.view(), x);
            (y * &dy).sum()
        };
        let h = 1e-6;
        for r in 0..rows {
            for c in 0..feat {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&xp, &gain, &bias) - loss(&xm, &gain, &bias)) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-6, "dx[{r},{c}]: {fd} vs {}", dx[[r, c]]);
            }
        }
        for c in 0..feat {
            let mut gp = gain.clone();
            gp[c] += h;
            let mut gm = gain.clone();
            gm[c] -= h;
            let fd = (loss(&x, &gp, &bias) - loss(&x, &gm, &bias)) / (2.0 * h);
            assert!((fd - dgain[c]).abs() < 1e-6);
            let mut bp = bias.clone();
            bp[c] += h;
            let mut bm = bias.clone();
            bm[c] -= h;
            let fd = (loss(&x, &gain, &bp) - loss(&x, &gain, &bm)) / (2.0 * h);
            assert!((fd - dbias[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (rows, fin, fout) = (4, 3, 5);
        let x = rand2(&mut rng, rows, fin);
        let w = rand2(&mut rng, fout, fin);
        let b = Array1::from_shape_fn(fout, |_| rng.gen_range(-0.5..0.5));
        let dy = rand2(&mut rng, rows, fout);

        let (dx, dw, db) = affine_backward(w.view(), &x, &dy);
        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            (affine_forward(w.view(), b.view(), x) * &dy).sum()
        };
        let h = 1e-6;
        for r in 0..rows {
            for c in 0..fin {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-6);
            }
        }
        for o in 0..fout {
            for i in 0..fin {
                let mut wp = w.clone();
                wp[[o, i]] += h;
                let mut wm = w.clone();
                wm[[o, i]] -= h;
                let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
                assert!((fd - dw[[o, i]]).abs() < 1e-6);
            }
            let mut bp = b.clone();
            bp[o] += h;
            let mut bm = b.clone();
            bm[o] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - db[o]).abs() < 1e-6);
        }
    }

    struct GruParams {
        w_ih: Array2<f64>,
        w_hh: Array2<f64>,
        b_ih: Array1<f64>,
        b_hh: Array1<f64>,
    }

    impl GruParams {
        fn random(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
            Self {
                w_ih: rand2(rng, 3 * hidden, input),
                w_hh: rand2(rng, 3 * hidden, hidden),
                b_ih: Array1::from_shape_fn(3 * hidden, |_| rng.gen_range(-0.5..0.5)),
                b_hh: Array1::from_shape_fn(3 * hidden, |_| rng.gen_range(-0.5..0.5)),
            }
        }

        fn views(&self) -> GruViews<'_> {
            GruViews {
                w_ih: self.w_ih.view(),
                w_hh: self.w_hh.view(),
                b_ih: self.b_ih.view(),
                b_hh: self.b_hh.view(),
            }
        }
    }

    #[test]
    fn gru_single_step_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::random(&mut rng, 4, 3);
        let xs = rand3(&mut rng, 1, 2, 4);
        let (a, _) = gru_forward(p.views(), &xs, false, false);
        let (b, _) = gru_forward(p.views(), &xs, false, false);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gru_reverse_is_forward_on_flipped_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruParams::random(&mut rng, 3, 2);
        let xs = rand3(&mut rng, 5, 2, 3);
        let mut flipped = xs.clone();
        for k in 0..5 {
            flipped.slice_mut(s![k, .., ..]).assign(&xs.slice(s![4 - k, .., ..]));
        }
        let (rev, _) = gru_forward(p.views(), &xs, true, false);
        let (fwd_flip, _) = gru_forward(p.views(), &flipped, false, false);
        for k in 0..5 {
            let a = rev.slice(s![k, .., ..]);
            let b = fwd_flip.slice(s![4 - k, .., ..]);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
        }
    }

    fn gru_fd_check(reverse: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, batch, input, hidden) = (4, 2, 3, 3);
        let p = GruParams::random(&mut rng, input, hidden);
        let xs = rand3(&mut rng, steps, batch, input);
        let dy = rand3(&mut rng, steps, batch, hidden);

        let (_, cache) = gru_forward(p.views(), &xs, reverse, true);
        let (dxs, grads) = gru_backward(p.views(), &xs, cache.as_ref().unwrap(), &dy, reverse);

        let loss = |p: &GruParams, xs: &Array3<f64>| {
            let (hs, _) = gru_forward(p.views(), xs, reverse, false);
            (hs * &dy).sum()
        };
        let h = 1e-6;
        let tol = 1e-6;
        for k in 0..steps {
            for bt in 0..batch {
                for i in 0..input {
                    let mut xp = xs.clone();
                    xp[[k, bt, i]] += h;
                    let mut xm = xs.clone();
                    xm[[k, bt, i]] -= h;
                    let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
                    assert!(
                        (fd - dxs[[k, bt, i]]).abs() < tol,
                        "dxs[{k},{bt},{i}] fd {fd} vs {}",
                        dxs[[k, bt, i]]
                    );
                }
            }
        }
        let check_mat = |get: &dyn Fn(&GruParams) -> &Array2<f64>,
                             make: &dyn Fn(&GruParams, usize, usize, f64) -> GruParams,
                             grad: &Array2<f64>,
                             label: &str| {
            let mat = get(&p);
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    let fd = (loss(&make(&p, r, c, h), &xs) - loss(&make(&p, r, c, -h), &xs))
                        / (2.0 * h);
                    assert!(
                        (fd - grad[[r, c]]).abs() < tol,
                        "{label}[{r},{c}] fd {fd} vs {}",
                        grad[[r, c]]
                    );
                }
            }
        };
        check_mat(
            &|p| &p.w_ih,
            &|p, r, c, d| {
                let mut q = GruParams {
                    w_ih: p.w_ih.clone(),
                    w_hh: p.w_hh.clone(),
                    b_ih: p.b_ih.clone(),
                    b_hh: p.b_hh.clone(),
                };
                q.w_ih[[r, c]] += d;
                q
            },
            &grads.dw_ih,
            "dw_ih",
        );
        check_mat(
            &|p| &p.w_hh,
            &|p, r, c, d| {
                let mut q = GruParams {
                    w_ih: p.w_ih.clone(),
                    w_hh: p.w_hh.clone(),
                    b_ih: p.b_ih.clone(),
                    b_hh: p.b_hh.clone(),
                };
                q.w_hh[[r, c]] += d;
                q
            },
            &grads.dw_hh,
            "dw_hh",
        );
        for j in 0..3 * hidden {
            let mut qp = GruParams {
                w_ih: p.w_ih.clone(),
                w_hh: p.w_hh.clone(),
                b_ih: p.b_ih.clone(),
                b_hh: p.b_hh.clone(),
            };
            qp.b_ih[j] += h;
            let mut qm = GruParams {
                w_ih: p.w_ih.clone(),
                w_hh: p.w_hh.clone(),
                b_ih: p.b_ih.clone(),
                b_hh: p.b_hh.clone(),
            };
            qm.b_ih[j] -= h;
            let fd = (loss(&qp, &xs) - loss(&qm, &xs)) / (2.0 * h);
            assert!((fd - grads.db_ih[j]).abs() < tol, "db_ih[{j}]");

            let mut qp = GruParams {
                w_ih: p.w_ih.clone(),
                w_hh: p.w_hh.clone(),
                b_ih: p.b_ih.clone(),
                b_hh: p.b_hh.clone(),
            };
            qp.b_hh[j] += h;
            let mut qm = GruParams {
                w_ih: p.w_ih.clone(),
                w_hh: p.w_hh.clone(),
                b_ih: p.b_ih.clone(),
                b_hh: p.b_hh.clone(),
            };
            qm.b_hh[j] -= h;
            let fd = (loss(&qp, &xs) - loss(&qm, &xs)) / (2.0 * h);
            assert!((fd - grads.db_hh[j]).abs() < tol, "db_hh[{j}]");
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        gru_fd_check(false, 10);
        gru_fd_check(true, 11);
    }
}
