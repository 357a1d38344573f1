//! Batched evaluation of the gated network together with directional input
//! derivatives, and the matching reverse sweep over parameters.
//!
//! Activations are stored as `[width × M·(K+1)]` stacks: in every row the
//! first `M` entries hold values and the following blocks of `M` hold
//! tangents along the `K` requested input directions. Every weight product
//! then acts on values and tangents in one matrix multiply. The reverse sweep
//! differentiates both the value and the tangent recursions, so parameter
//! gradients of losses built from input derivatives are exact.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::eval::EvalContext;
use super::kernels;
use super::params::{Dims, Gate, NetworkParams};
use crate::autodiff::scalar::{sigmoid_f64, softplus_f64};

/// Network values and directional derivatives on a batch.
#[derive(Debug, Clone)]
pub struct JetOutput {
    pub values: Vec<f64>,
    /// `tangents[k][s]` = `∇f(x_s) · dir_k(x_s)`.
    pub tangents: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    width: usize,
    m: usize,
    k: usize,
}

impl Shape {
    fn cols(&self) -> usize {
        self.m * (self.k + 1)
    }

    fn stack(&self) -> Array2<f64> {
        Array2::zeros((self.width, self.cols()))
    }
}

struct LayerCache {
    input: Array2<f64>,
    pre: [Array2<f64>; 4],
    act: [Array2<f64>; 4],
    gated: Array2<f64>,
}

/// Intermediates kept for [`jet_backward`].
pub struct JetCache {
    shape: Shape,
    xin: Array2<f64>,
    pre0: Array2<f64>,
    act0: Array2<f64>,
    layers: Vec<LayerCache>,
    last: Array2<f64>,
    out_pre: Vec<f64>,
}

fn param_matrix(net: &NetworkParams, r: std::ops::Range<usize>, cols: usize) -> ArrayView2<'_, f64> {
    let rows = r.len() / cols;
    ArrayView2::from_shape((rows, cols), &net.data[r]).expect("parameter block shape")
}

fn grad_matrix(grad: &mut [f64], r: std::ops::Range<usize>, cols: usize) -> ArrayViewMut2<'_, f64> {
    let rows = r.len() / cols;
    ArrayViewMut2::from_shape((rows, cols), &mut grad[r]).expect("gradient block shape")
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn flat_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// `U·xin + W·q + b` with the bias added to the value block only.
#[inline(always)]
fn affine(
    net: &NetworkParams,
    u: std::ops::Range<usize>,
    w: Option<(std::ops::Range<usize>, &Array2<f64>)>,
    b: std::ops::Range<usize>,
    xin: &Array2<f64>,
    sh: Shape,
) -> Array2<f64> {
    let d = net.dims.inputs;
    let mut out = sh.stack();
    general_mat_mul(1.0, &param_matrix(net, u, d), xin, 0.0, &mut out);
    if let Some((wr, q)) = w {
        general_mat_mul(1.0, &param_matrix(net, wr, sh.width), q, 1.0, &mut out);
    }
    let cols = sh.cols();
    for (row, &bi) in flat_mut(&mut out).chunks_exact_mut(cols).zip(&net.data[b]) {
        for v in &mut row[..sh.m] {
            *v += bi;
        }
    }
    out
}

#[inline(always)]
fn tanh_jet(pre: &Array2<f64>, sh: Shape) -> Array2<f64> {
    let (m, cols) = (sh.m, sh.cols());
    let mut out = sh.stack();
    for (p, o) in flat(pre).chunks_exact(cols).zip(flat_mut(&mut out).chunks_exact_mut(cols)) {
        let (ov, ot) = o.split_at_mut(m);
        for (y, &x) in ov.iter_mut().zip(&p[..m]) {
            *y = kernels::tanh(x);
        }
        for (ob, pb) in ot.chunks_exact_mut(m).zip(p[m..].chunks_exact(m)) {
            for s in 0..m {
                ob[s] = (1.0 - ov[s] * ov[s]) * pb[s];
            }
        }
    }
    out
}

/// Reverse of [`tanh_jet`]: adjoint of the pre-activation stack.
#[inline(always)]
fn tanh_jet_back(adj: &Array2<f64>, act: &Array2<f64>, pre: &Array2<f64>, sh: Shape) -> Array2<f64> {
    let (m, cols) = (sh.m, sh.cols());
    let mut out = sh.stack();
    let rows = flat(adj)
        .chunks_exact(cols)
        .zip(flat(act).chunks_exact(cols))
        .zip(flat(pre).chunks_exact(cols))
        .zip(flat_mut(&mut out).chunks_exact_mut(cols));
    for (((a, y), p), o) in rows {
        let (ov, ot) = o.split_at_mut(m);
        let yv = &y[..m];
        ov.copy_from_slice(&a[..m]);
        for ((ob, ab), pb) in ot.chunks_exact_mut(m).zip(a[m..].chunks_exact(m)).zip(p[m..].chunks_exact(m)) {
            for s in 0..m {
                ov[s] -= 2.0 * yv[s] * pb[s] * ab[s];
                ob[s] = (1.0 - yv[s] * yv[s]) * ab[s];
            }
        }
        for s in 0..m {
            ov[s] *= 1.0 - yv[s] * yv[s];
        }
    }
    out
}

/// Elementwise jet product `a ⊙ b`.
#[inline(always)]
fn mul_jet(a: &Array2<f64>, b: &Array2<f64>, sh: Shape) -> Array2<f64> {
    let (m, cols) = (sh.m, sh.cols());
    let mut out = sh.stack();
    let rows = flat(a)
        .chunks_exact(cols)
        .zip(flat(b).chunks_exact(cols))
        .zip(flat_mut(&mut out).chunks_exact_mut(cols));
    for ((x, y), o) in rows {
        let (xv, yv) = (&x[..m], &y[..m]);
        let (ov, ot) = o.split_at_mut(m);
        for s in 0..m {
            ov[s] = xv[s] * yv[s];
        }
        let blocks = ot.chunks_exact_mut(m).zip(x[m..].chunks_exact(m)).zip(y[m..].chunks_exact(m));
        for ((ob, xb), yb) in blocks {
            for s in 0..m {
                ob[s] = xb[s] * yv[s] + xv[s] * yb[s];
            }
        }
    }
    out
}

/// Adds the adjoint contributions of `c = a ⊙ b` into `adj_a` and `adj_b`.
#[inline(always)]
fn mul_jet_back(
    adj: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    adj_a: &mut Array2<f64>,
    adj_b: &mut Array2<f64>,
    sh: Shape,
) {
    let (m, cols) = (sh.m, sh.cols());
    let rows = flat(adj)
        .chunks_exact(cols)
        .zip(flat(a).chunks_exact(cols))
        .zip(flat(b).chunks_exact(cols))
        .zip(flat_mut(adj_a).chunks_exact_mut(cols))
        .zip(flat_mut(adj_b).chunks_exact_mut(cols));
    for ((((g, x), y), ga), gb) in rows {
        let (xv, yv, gv) = (&x[..m], &y[..m], &g[..m]);
        let (gav, gat) = ga.split_at_mut(m);
        let (gbv, gbt) = gb.split_at_mut(m);
        for s in 0..m {
            gav[s] += yv[s] * gv[s];
            gbv[s] += xv[s] * gv[s];
        }
        for k in 1..=sh.k {
            let r = k * m..(k + 1) * m;
            let (gk, xk, yk) = (&g[r.clone()], &x[r.clone()], &y[r]);
            let (gak, gbk) = (&mut gat[(k - 1) * m..k * m], &mut gbt[(k - 1) * m..k * m]);
            for s in 0..m {
                gav[s] += yk[s] * gk[s];
                gbv[s] += xk[s] * gk[s];
                gak[s] += yv[s] * gk[s];
                gbk[s] += xv[s] * gk[s];
            }
        }
    }
}

/// `X' = (1 − G) ⊙ H + Z ⊙ X` on jet stacks.
#[inline(always)]
fn blend_jet(x: &Array2<f64>, z: &Array2<f64>, g: &Array2<f64>, h: &Array2<f64>, sh: Shape) -> Array2<f64> {
    let (m, cols) = (sh.m, sh.cols());
    let mut out = sh.stack();
    let rows = flat(x)
        .chunks_exact(cols)
        .zip(flat(z).chunks_exact(cols))
        .zip(flat(g).chunks_exact(cols))
        .zip(flat(h).chunks_exact(cols))
        .zip(flat_mut(&mut out).chunks_exact_mut(cols));
    for ((((xr, zr), gr), hr), o) in rows {
        let (xv, zv, gv, hv) = (&xr[..m], &zr[..m], &gr[..m], &hr[..m]);
        let (ov, ot) = o.split_at_mut(m);
        for s in 0..m {
            ov[s] = (1.0 - gv[s]) * hv[s] + zv[s] * xv[s];
        }
        for k in 1..=sh.k {
            let r = k * m..(k + 1) * m;
            let (xk, zk, gk, hk) = (&xr[r.clone()], &zr[r.clone()], &gr[r.clone()], &hr[r]);
            let ok = &mut ot[(k - 1) * m..k * m];
            for s in 0..m {
                ok[s] = -gk[s] * hv[s] + (1.0 - gv[s]) * hk[s] + zk[s] * xv[s] + zv[s] * xk[s];
            }
        }
    }
    out
}

/// Reverse of [`blend_jet`]: adjoints of `(H, G, Z, X)`.
#[inline(always)]
fn blend_jet_back(
    adj: &Array2<f64>,
    x: &Array2<f64>,
    z: &Array2<f64>,
    g: &Array2<f64>,
    h: &Array2<f64>,
    sh: Shape,
) -> [Array2<f64>; 4] {
    let (m, cols) = (sh.m, sh.cols());
    let mut outs = [sh.stack(), sh.stack(), sh.stack(), sh.stack()];
    let [ah, ag, az, ax] = &mut outs;
    let rows = flat(adj)
        .chunks_exact(cols)
        .zip(flat(x).chunks_exact(cols))
        .zip(flat(z).chunks_exact(cols))
        .zip(flat(g).chunks_exact(cols))
        .zip(flat(h).chunks_exact(cols))
        .zip(flat_mut(ah).chunks_exact_mut(cols))
        .zip(flat_mut(ag).chunks_exact_mut(cols))
        .zip(flat_mut(az).chunks_exact_mut(cols))
        .zip(flat_mut(ax).chunks_exact_mut(cols));
    for ((((((((a, xr), zr), gr), hr), ahr), agr), azr), axr) in rows {
        let (av, xv, zv, gv, hv) = (&a[..m], &xr[..m], &zr[..m], &gr[..m], &hr[..m]);
        for s in 0..m {
            ahr[s] = (1.0 - gv[s]) * av[s];
            agr[s] = -hv[s] * av[s];
            azr[s] = xv[s] * av[s];
            axr[s] = zv[s] * av[s];
        }
        for k in 1..=sh.k {
            let r = k * m..(k + 1) * m;
            let (ak, xk, zk, gk, hk) = (&a[r.clone()], &xr[r.clone()], &zr[r.clone()], &gr[r.clone()], &hr[r.clone()]);
            let (ahv, aht) = ahr.split_at_mut(m);
            let (agv, agt) = agr.split_at_mut(m);
            let (azv, azt) = azr.split_at_mut(m);
            let (axv, axt) = axr.split_at_mut(m);
            let off = (k - 1) * m..k * m;
            let (ahk, agk, azk, axk) = (
                &mut aht[off.clone()],
                &mut agt[off.clone()],
                &mut azt[off.clone()],
                &mut axt[off],
            );
            for s in 0..m {
                ahv[s] -= gk[s] * ak[s];
                agv[s] -= hk[s] * ak[s];
                azv[s] += xk[s] * ak[s];
                axv[s] += zk[s] * ak[s];
                ahk[s] = (1.0 - gv[s]) * ak[s];
                agk[s] = -hv[s] * ak[s];
                azk[s] = xv[s] * ak[s];
                axk[s] = zv[s] * ak[s];
            }
        }
    }
    outs
}

/// Per-sample scalars of the output transform.
struct Transform {
    clamp_mask: Vec<f64>,
    /// `∂(payoff + extension)/∂x₀`
    outer_slope: Vec<f64>,
    outer_value: Vec<f64>,
    extension: Vec<f64>,
}

fn transform(ctx: &EvalContext, points: ArrayView2<f64>) -> Transform {
    let m = points.nrows();
    let kd = ctx.discounted_strike();
    let mut t = Transform {
        clamp_mask: Vec::with_capacity(m),
        outer_slope: Vec::with_capacity(m),
        outer_value: Vec::with_capacity(m),
        extension: Vec::with_capacity(m),
    };
    for s in 0..m {
        let x0 = points[[s, 0]];
        // Same subgradient conventions as the scalar path: min(x, x_p) has
        // slope 1 only for x < x_p, relu only for a positive argument.
        let (clamped, mask) = if -x0 > -ctx.x_p { (x0, 1.0) } else { (ctx.x_p, 0.0) };
        let ext_arg = x0 + (-ctx.x_p);
        let (ext, ext_slope) = if ext_arg > 0.0 { (ext_arg, 1.0) } else { (0.0, 0.0) };
        let pay_arg = clamped + (-kd);
        let (pay, pay_slope) = if pay_arg > 0.0 { (pay_arg, 1.0) } else { (0.0, 0.0) };
        t.clamp_mask.push(mask);
        t.outer_slope.push(pay_slope * mask + ext_slope);
        t.outer_value.push(pay);
        t.extension.push(ext);
    }
    t
}

#[cfg(target_arch = "x86_64")]
fn wide_simd() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

/// Forward pass on `points` (`[M × d]`) with tangents along `dirs` (each
/// `[M × d]`). Returns values, directional derivatives and the cache needed
/// by [`jet_backward`].
pub fn jet_forward(
    net: &NetworkParams,
    ctx: &EvalContext,
    points: ArrayView2<f64>,
    dirs: &[ArrayView2<f64>],
) -> (JetOutput, JetCache) {
    #[cfg(target_arch = "x86_64")]
    if wide_simd() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { jet_forward_avx2(net, ctx, points, dirs) };
    }
    jet_forward_impl(net, ctx, points, dirs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn jet_forward_avx2(
    net: &NetworkParams,
    ctx: &EvalContext,
    points: ArrayView2<f64>,
    dirs: &[ArrayView2<f64>],
) -> (JetOutput, JetCache) {
    jet_forward_impl(net, ctx, points, dirs)
}

#[inline(always)]
fn jet_forward_impl(
    net: &NetworkParams,
    ctx: &EvalContext,
    points: ArrayView2<f64>,
    dirs: &[ArrayView2<f64>],
) -> (JetOutput, JetCache) {
    let dims: Dims = net.dims;
    let d = dims.inputs;
    let m = points.nrows();
    assert!(m > 0, "empty batch");
    assert_eq!(points.ncols(), d, "points must have one column per input");
    let sh = Shape {
        width: dims.width,
        m,
        k: dirs.len(),
    };
    let tr = transform(ctx, points);

    let mut xin = Array2::<f64>::zeros((d, sh.cols()));
    for s in 0..m {
        xin[[0, s]] = if tr.clamp_mask[s] > 0.0 { points[[s, 0]] } else { ctx.x_p };
        for j in 1..d {
            xin[[j, s]] = points[[s, j]];
        }
    }
    for (k, dir) in dirs.iter().enumerate() {
        assert_eq!(dir.dim(), (m, d), "direction block shape");
        let off = (k + 1) * m;
        for s in 0..m {
            xin[[0, off + s]] = dir[[s, 0]] * tr.clamp_mask[s];
            for j in 1..d {
                xin[[j, off + s]] = dir[[s, j]];
            }
        }
    }

    let pre0 = affine(net, dims.input_weight(), None, dims.input_bias(), &xin, sh);
    let act0 = tanh_jet(&pre0, sh);

    let mut layers = Vec::with_capacity(dims.layers);
    let mut state = act0.clone();
    for l in 0..dims.layers {
        let gate_pre = |g: Gate, q: &Array2<f64>| {
            affine(
                net,
                dims.gate_u(l, g),
                Some((dims.gate_w(l, g), q)),
                dims.gate_b(l, g),
                &xin,
                sh,
            )
        };
        let zp = gate_pre(Gate::Z, &state);
        let gp = gate_pre(Gate::G, &state);
        let rp = gate_pre(Gate::R, &state);
        let z = tanh_jet(&zp, sh);
        let g = tanh_jet(&gp, sh);
        let r = tanh_jet(&rp, sh);
        let gated = mul_jet(&state, &r, sh);
        let hp = gate_pre(Gate::H, &gated);
        let h = tanh_jet(&hp, sh);
        let next = blend_jet(&state, &z, &g, &h, sh);
        layers.push(LayerCache {
            input: std::mem::replace(&mut state, next),
            pre: [zp, gp, rp, hp],
            act: [z, g, r, h],
            gated,
        });
    }

    let w_out = &net.data[dims.output_weight()];
    let b_out = net.data[dims.output_bias()];
    let mut out_pre = vec![0.0; sh.cols()];
    for (row, &wi) in flat(&state).chunks_exact(sh.cols()).zip(w_out) {
        for (o, v) in out_pre.iter_mut().zip(row) {
            *o += wi * v;
        }
    }
    for o in &mut out_pre[..m] {
        *o += b_out;
    }

    let mut values = Vec::with_capacity(m);
    let mut tangents = vec![Vec::with_capacity(m); sh.k];
    for s in 0..m {
        let o = out_pre[s];
        // Same summation order as the scalar path: payoff + softplus + extension.
        values.push(tr.outer_value[s] + softplus_f64(o) + tr.extension[s]);
        let sig = sigmoid_f64(o);
        for (k, tk) in tangents.iter_mut().enumerate() {
            tk.push(sig * out_pre[(k + 1) * m + s] + tr.outer_slope[s] * dirs[k][[s, 0]]);
        }
    }

    let cache = JetCache {
        shape: sh,
        xin,
        pre0,
        act0,
        layers,
        last: state,
        out_pre,
    };
    (JetOutput { values, tangents }, cache)
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂f_s` (`value_adj`) and
/// `∂L/∂t_{k,s}` (`tangent_adj[k]`) for the batch cached in `cache`.
pub fn jet_backward(
    net: &NetworkParams,
    cache: &JetCache,
    value_adj: &[f64],
    tangent_adj: &[Vec<f64>],
    grad: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if wide_simd() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { jet_backward_avx2(net, cache, value_adj, tangent_adj, grad) };
    }
    jet_backward_impl(net, cache, value_adj, tangent_adj, grad)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn jet_backward_avx2(
    net: &NetworkParams,
    cache: &JetCache,
    value_adj: &[f64],
    tangent_adj: &[Vec<f64>],
    grad: &mut [f64],
) {
    jet_backward_impl(net, cache, value_adj, tangent_adj, grad)
}

#[inline(always)]
fn jet_backward_impl(
    net: &NetworkParams,
    cache: &JetCache,
    value_adj: &[f64],
    tangent_adj: &[Vec<f64>],
    grad: &mut [f64],
) {
    let dims = net.dims;
    let sh = cache.shape;
    let (m, d, cols) = (sh.m, dims.inputs, sh.cols());
    assert_eq!(value_adj.len(), m);
    assert_eq!(tangent_adj.len(), sh.k);
    assert_eq!(grad.len(), dims.param_count());

    // Output layer.
    let mut o_adj = vec![0.0; cols];
    for s in 0..m {
        let o = cache.out_pre[s];
        let sig = sigmoid_f64(o);
        let dsig = sig * (1.0 - sig);
        let mut acc = value_adj[s] * sig;
        for k in 0..sh.k {
            let c = (k + 1) * m + s;
            acc += tangent_adj[k][s] * dsig * cache.out_pre[c];
            o_adj[c] = tangent_adj[k][s] * sig;
        }
        o_adj[s] = acc;
    }
    grad[dims.output_bias()] += o_adj[..m].iter().sum::<f64>();
    {
        let gw = &mut grad[dims.output_weight()];
        for (g, row) in gw.iter_mut().zip(flat(&cache.last).chunks_exact(cols)) {
            *g += row.iter().zip(&o_adj).map(|(x, a)| x * a).sum::<f64>();
        }
    }
    let mut adj = sh.stack();
    for (row, &wi) in flat_mut(&mut adj).chunks_exact_mut(cols).zip(&net.data[dims.output_weight()]) {
        for (a, g) in row.iter_mut().zip(&o_adj) {
            *a = wi * g;
        }
    }

    for l in (0..dims.layers).rev() {
        let lc = &cache.layers[l];
        let [z, g, r, h] = &lc.act;
        let x = &lc.input;
        let [adj_h, adj_g, adj_z, mut adj_x] = blend_jet_back(&adj, x, z, g, h, sh);

        // H gate: its recurrent input is the gated state X ⊙ R.
        let pre_h_adj = tanh_jet_back(&adj_h, h, &lc.pre[Gate::H as usize], sh);
        let adj_gated = affine_back(net, grad, l, Gate::H, &pre_h_adj, &lc.gated, &cache.xin, sh);
        let mut adj_r = sh.stack();
        mul_jet_back(&adj_gated, x, r, &mut adj_x, &mut adj_r, sh);

        for (gate, gate_adj) in [(Gate::Z, &adj_z), (Gate::G, &adj_g), (Gate::R, &adj_r)] {
            let pre_adj = tanh_jet_back(gate_adj, &lc.act[gate as usize], &lc.pre[gate as usize], sh);
            let back = affine_back(net, grad, l, gate, &pre_adj, x, &cache.xin, sh);
            for (a, b) in flat_mut(&mut adj_x).iter_mut().zip(flat(&back)) {
                *a += b;
            }
        }
        adj = adj_x;
    }

    // Input layer.
    let pre0_adj = tanh_jet_back(&adj, &cache.act0, &cache.pre0, sh);
    {
        let mut gu = grad_matrix(grad, dims.input_weight(), d);
        general_mat_mul(1.0, &pre0_adj, &cache.xin.t(), 1.0, &mut gu);
    }
    add_rowsum(&mut grad[dims.input_bias()], &pre0_adj, sh);
}

/// Parameter adjoints of one gate's affine map; returns the adjoint of its
/// recurrent input `q`.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn affine_back(
    net: &NetworkParams,
    grad: &mut [f64],
    layer: usize,
    gate: Gate,
    pre_adj: &Array2<f64>,
    q: &Array2<f64>,
    xin: &Array2<f64>,
    sh: Shape,
) -> Array2<f64> {
    let dims = net.dims;
    {
        let mut gw = grad_matrix(grad, dims.gate_w(layer, gate), sh.width);
        general_mat_mul(1.0, pre_adj, &q.t(), 1.0, &mut gw);
    }
    {
        let mut gu = grad_matrix(grad, dims.gate_u(layer, gate), dims.inputs);
        general_mat_mul(1.0, pre_adj, &xin.t(), 1.0, &mut gu);
    }
    add_rowsum(&mut grad[dims.gate_b(layer, gate)], pre_adj, sh);
    let w = param_matrix(net, dims.gate_w(layer, gate), sh.width);
    let mut back = sh.stack();
    general_mat_mul(1.0, &w.t(), pre_adj, 0.0, &mut back);
    back
}

fn add_rowsum(target: &mut [f64], adj: &Array2<f64>, sh: Shape) {
    for (t, row) in target.iter_mut().zip(flat(adj).chunks_exact(sh.cols())) {
        *t += row[..sh.m].iter().sum::<f64>();
    }
}

/// Network values only (no tangents) on `[M × d]` points.
pub fn values(net: &NetworkParams, ctx: &EvalContext, points: ArrayView2<f64>) -> Vec<f64> {
    jet_forward(net, ctx, points, &[]).0.values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{value_and_grad, Dual, Scalar, Var};
    use crate::network::eval::{forward, forward_with, grad_wrt_inputs};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Case {
        net: NetworkParams,
        ctx: EvalContext,
        points: Array2<f64>,
        dirs: Vec<Array2<f64>>,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
    }

    fn case(d: usize, width: usize, layers: usize, m: usize, k: usize, seed: u64) -> Case {
        let dims = Dims::new(d, width, layers).unwrap();
        let mut net = NetworkParams::init(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        // non-zero biases so every parameter block is exercised
        for v in net.data.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let ctx = EvalContext::new(0.03, 0.4, 2.0).unwrap();
        let mut points = Array2::zeros((m, d));
        for s in 0..m {
            points[[s, 0]] = rng.random_range(0.01..3.0);
            for j in 1..d {
                points[[s, j]] = rng.random_range(-0.05..0.1);
            }
        }
        let dirs = (0..k)
            .map(|_| Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let alpha = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = (0..k)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Case {
            net,
            ctx,
            points,
            dirs,
            alpha,
            beta,
        }
    }

    fn jet_grad(c: &Case) -> (JetOutput, Vec<f64>) {
        let views: Vec<_> = c.dirs.iter().map(|d| d.view()).collect();
        let (out, cache) = jet_forward(&c.net, &c.ctx, c.points.view(), &views);
        let mut grad = vec![0.0; c.net.len()];
        jet_backward(&c.net, &cache, &c.alpha, &c.beta, &mut grad);
        (out, grad)
    }

    /// `Σ α_s f(x_s) + Σ β_{k,s} ∇f(x_s)·dir_k(x_s)` recorded scalar by scalar.
    fn tape_grad(c: &Case) -> Vec<f64> {
        let (m, d) = c.points.dim();
        value_and_grad(&c.net.data, |p| {
            let mut acc = Var::constant(0.0);
            for s in 0..m {
                let xs: Vec<Dual<Var>> = (0..d).map(|j| Dual::constant(c.points[[s, j]])).collect();
                let y = forward_with(&c.net.dims, |i| Dual::constant_of(p[i]), &c.ctx, &xs);
                acc = acc + y.value * c.alpha[s];
                for (dir, beta) in c.dirs.iter().zip(&c.beta) {
                    let xs: Vec<Dual<Var>> = (0..d)
                        .map(|j| Dual::new(Var::constant(c.points[[s, j]]), Var::constant(dir[[s, j]])))
                        .collect();
                    let y = forward_with(&c.net.dims, |i| Dual::constant_of(p[i]), &c.ctx, &xs);
                    acc = acc + y.tangent * beta[s];
                }
            }
            acc
        })
        .1
    }

    #[test]
    fn values_and_tangents_match_scalar_path() {
        let c = case(3, 6, 2, 9, 2, 1);
        let (out, _) = jet_grad(&c);
        for s in 0..9 {
            let x: Vec<f64> = c.points.row(s).to_vec();
            let f = forward(&c.net, &c.ctx, &x).unwrap();
            assert!((out.values[s] - f).abs() < 1e-13);
            let g = grad_wrt_inputs(&c.net, &c.ctx, &x).unwrap();
            for (k, dir) in c.dirs.iter().enumerate() {
                let t: f64 = g.iter().zip(dir.row(s)).map(|(a, b)| a * b).sum();
                assert!((out.tangents[k][s] - t).abs() < 1e-13, "{} vs {t}", out.tangents[k][s]);
            }
        }
        let v = values(&c.net, &c.ctx, c.points.view());
        for (a, b) in v.iter().zip(&out.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn parameter_gradient_matches_tape() {
        for (d, w, l, m, k, seed) in [(1, 5, 3, 7, 1, 2), (2, 4, 2, 5, 2, 3), (4, 3, 1, 6, 2, 4), (2, 3, 2, 4, 0, 5)] {
            let c = case(d, w, l, m, k, seed);
            let (_, g) = jet_grad(&c);
            let reference = tape_grad(&c);
            let scale = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (i, (a, b)) in g.iter().zip(&reference).enumerate() {
                assert!((a - b).abs() < 1e-12 * (1.0 + scale), "param {i}: {a} vs {b} (d={d})");
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let c = case(2, 4, 2, 5, 2, 9);
        let (_, g) = jet_grad(&c);
        let objective = |net: &NetworkParams| -> f64 {
            let mut acc = 0.0;
            for s in 0..c.points.nrows() {
                let x: Vec<f64> = c.points.row(s).to_vec();
                acc += c.alpha[s] * forward(net, &c.ctx, &x).unwrap();
                let gx = grad_wrt_inputs(net, &c.ctx, &x).unwrap();
                for (dir, beta) in c.dirs.iter().zip(&c.beta) {
                    acc += beta[s] * gx.iter().zip(dir.row(s)).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            acc
        };
        for i in (0..c.net.len()).step_by(7) {
            let mut plus = c.net.clone();
            let mut minus = c.net.clone();
            plus.data[i] += 1e-6;
            minus.data[i] -= 1e-6;
            let fd = (objective(&plus) - objective(&minus)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradient_accumulates() {
        let c = case(1, 4, 1, 3, 1, 6);
        let views: Vec<_> = c.dirs.iter().map(|d| d.view()).collect();
        let (_, cache) = jet_forward(&c.net, &c.ctx, c.points.view(), &views);
        let mut once = vec![0.0; c.net.len()];
        jet_backward(&c.net, &cache, &c.alpha, &c.beta, &mut once);
        let mut twice = once.clone();
        jet_backward(&c.net, &cache, &c.alpha, &c.beta, &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-15 * (1.0 + b.abs()));
        }
    }
}
