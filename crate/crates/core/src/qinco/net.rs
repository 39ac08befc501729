//! Per-stage centroid network and its reverse-mode gradients.
//!
//! A [`StageNet`] maps `(x_hat, c_bar)` to an adapted centroid:
//!
//! ```text
//! z_0     = W_c c_bar + (W_x x_hat + b)          (affine over the concatenation)
//! z_{l+1} = z_l + fc2(relu(fc1(z_l)))            (L residual blocks)
//! c       = c_bar + out_proj(z_L)
//! ```
//!
//! All matrix products accumulate over the input index in increasing order,
//! one row at a time, so a row evaluated alone is bit-identical to the same
//! row evaluated inside a batch.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

/// Floating-point element type of the network (f32 in production, f64 for
/// gradient checks).
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_f32(self) -> f32;
}

impl Real for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Dense affine map; `weight` is `in_dim x out_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Weights and biases uniform in `[-bound, bound]`.
    pub fn uniform(in_dim: usize, out_dim: usize, bound: f32, rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f32(rng.random_range(-bound..=bound))).collect() };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Affine {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    fn cast<U: Real>(&self) -> Affine<U> {
        Affine {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            bias: self.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// `x W + b` for every row of `x`.
    fn forward(&self, x: &[T]) -> Vec<T> {
        let rows = x.len() / self.in_dim;
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        accumulate(&self.weight, 0..self.in_dim, self.out_dim, x, self.in_dim, &mut out);
        out
    }

    /// Gradient of the parameters given the layer input `x` and output
    /// gradient `g`, accumulated into `grad`.
    fn accumulate_grad(&self, x: &[T], g: &[T], grad: &mut Affine<T>) {
        outer_accumulate(&mut grad.weight, 0, x, self.in_dim, g, self.out_dim);
        bias_accumulate(&mut grad.bias, g, self.out_dim);
    }

    /// `g W^T`, the gradient flowing into the layer input.
    fn input_grad(&self, g: &[T]) -> Vec<T> {
        input_grad_rows(&self.weight, 0..self.in_dim, self.out_dim, g)
    }
}

/// `out[r, :] += sum_{i in rows} x[r, i - rows.start] * w[i, :]`, rows of `x`
/// being `x_stride` wide.
///
/// Each output element accumulates its terms in increasing `i` starting from
/// its current value, whatever the tiling, so any row split of a batch gives
/// bitwise identical results.
fn accumulate<T: Real>(w: &[T], rows: std::ops::Range<usize>, out_dim: usize, x: &[T], x_stride: usize, out: &mut [T]) {
    const R: usize = 4;
    const C: usize = 8;
    let n_rows = out.len() / out_dim;
    let col_blocks = out_dim / C;
    let mut r = 0;
    while r + R <= n_rows {
        for cb in 0..col_blocks {
            let j = cb * C;
            let mut acc = [[T::zero(); C]; R];
            for (a, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(r + a) * out_dim + j..(r + a) * out_dim + j + C]);
            }
            for (t, i) in rows.clone().enumerate() {
                let wr: &[T; C] = w[i * out_dim + j..i * out_dim + j + C].try_into().unwrap();
                for (a, row) in acc.iter_mut().enumerate() {
                    let xv = x[(r + a) * x_stride + t];
                    for l in 0..C {
                        row[l] += xv * wr[l];
                    }
                }
            }
            for (a, row) in acc.iter().enumerate() {
                out[(r + a) * out_dim + j..(r + a) * out_dim + j + C].copy_from_slice(row);
            }
        }
        if col_blocks * C < out_dim {
            accumulate_plain(
                w,
                rows.clone(),
                col_blocks * C..out_dim,
                out_dim,
                &x[r * x_stride..(r + R) * x_stride],
                x_stride,
                &mut out[r * out_dim..(r + R) * out_dim],
            );
        }
        r += R;
    }
    if r < n_rows {
        accumulate_plain(w, rows, 0..out_dim, out_dim, &x[r * x_stride..], x_stride, &mut out[r * out_dim..]);
    }
}

/// Untiled form of [`accumulate`] restricted to output columns `cols`.
fn accumulate_plain<T: Real>(
    w: &[T],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out_dim: usize,
    x: &[T],
    x_stride: usize,
    out: &mut [T],
) {
    for (xr, or) in x.chunks_exact(x_stride).zip(out.chunks_exact_mut(out_dim)) {
        for (i, &a) in rows.clone().zip(xr) {
            let wr = &w[i * out_dim + cols.start..i * out_dim + cols.end];
            for (o, &wv) in or[cols.clone()].iter_mut().zip(wr) {
                *o += a * wv;
            }
        }
    }
}

/// `gw[row_offset + i, :] += sum_r x[r, i] * g[r, :]`.
fn outer_accumulate<T: Real>(gw: &mut [T], row_offset: usize, x: &[T], x_dim: usize, g: &[T], out_dim: usize) {
    for (xr, gr) in x.chunks_exact(x_dim).zip(g.chunks_exact(out_dim)) {
        for (i, &a) in xr.iter().enumerate() {
            let row = &mut gw[(row_offset + i) * out_dim..(row_offset + i + 1) * out_dim];
            for (o, &gv) in row.iter_mut().zip(gr) {
                *o += a * gv;
            }
        }
    }
}

fn bias_accumulate<T: Real>(gb: &mut [T], g: &[T], out_dim: usize) {
    for gr in g.chunks_exact(out_dim) {
        for (b, &gv) in gb.iter_mut().zip(gr) {
            *b += gv;
        }
    }
}

/// `gx[r, i - rows.start] = sum_o w[i, o] * g[r, o]` for `i` in `rows`.
fn input_grad_rows<T: Real>(w: &[T], rows: std::ops::Range<usize>, out_dim: usize, g: &[T]) -> Vec<T> {
    let width = rows.len();
    let mut gx = Vec::with_capacity(g.len() / out_dim * width);
    for gr in g.chunks_exact(out_dim) {
        for i in rows.clone() {
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            let mut acc = T::zero();
            for (&wv, &gv) in wr.iter().zip(gr) {
                acc += wv * gv;
            }
            gx.push(acc);
        }
    }
    gx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub fc1: Affine<T>,
    pub fc2: Affine<T>,
}

/// Conditional centroid network for one quantization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageNet<T> {
    pub dim: usize,
    pub hidden: usize,
    /// `2D x d_h`; rows `0..D` act on the base centroid, rows `D..2D` on the
    /// partial reconstruction.
    pub in_proj: Affine<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub out_proj: Affine<T>,
}

/// Activations kept by [`StageNet::forward_cached`] for the backward pass.
pub(crate) struct Cache<T> {
    c_bar: Vec<T>,
    x_hat: Vec<T>,
    /// `z_0 .. z_L`
    zs: Vec<Vec<T>>,
    /// pre-activations of every block's first layer
    pre: Vec<Vec<T>>,
}

impl<T: Real> StageNet<T> {
    /// Hidden layers uniform in `+-1/sqrt(fan_in)`, output projection zero.
    pub fn init(dim: usize, hidden: usize, blocks: usize, rng: &mut impl Rng) -> Self {
        let in_bound = 1.0 / ((2 * dim) as f32).sqrt();
        let h_bound = 1.0 / (hidden as f32).sqrt();
        let in_proj = Affine::uniform(2 * dim, hidden, in_bound, rng);
        let blocks = (0..blocks)
            .map(|_| ResidualBlock {
                fc1: Affine::uniform(hidden, hidden, h_bound, rng),
                fc2: Affine::uniform(hidden, hidden, h_bound, rng),
            })
            .collect();
        StageNet {
            dim,
            hidden,
            in_proj,
            blocks,
            out_proj: Affine::zeros(hidden, dim),
        }
    }

    pub fn zeros(dim: usize, hidden: usize, blocks: usize) -> Self {
        StageNet {
            dim,
            hidden,
            in_proj: Affine::zeros(2 * dim, hidden),
            blocks: (0..blocks)
                .map(|_| ResidualBlock {
                    fc1: Affine::zeros(hidden, hidden),
                    fc2: Affine::zeros(hidden, hidden),
                })
                .collect(),
            out_proj: Affine::zeros(hidden, dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.hidden, self.blocks.len())
    }

    pub fn cast<U: Real>(&self) -> StageNet<U> {
        StageNet {
            dim: self.dim,
            hidden: self.hidden,
            in_proj: self.in_proj.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    fc1: b.fc1.cast(),
                    fc2: b.fc2.cast(),
                })
                .collect(),
            out_proj: self.out_proj.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `(name, shape, values)` for every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = vec![
            (
                "in_proj.weight".to_string(),
                vec![self.in_proj.in_dim, self.in_proj.out_dim],
                &self.in_proj.weight[..],
            ),
            ("in_proj.bias".to_string(), vec![self.hidden], &self.in_proj.bias[..]),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (layer, a) in [("fc1", &b.fc1), ("fc2", &b.fc2)] {
                out.push((format!("blocks.{i}.{layer}.weight"), vec![a.in_dim, a.out_dim], &a.weight[..]));
                out.push((format!("blocks.{i}.{layer}.bias"), vec![a.out_dim], &a.bias[..]));
            }
        }
        out.push((
            "out_proj.weight".to_string(),
            vec![self.hidden, self.dim],
            &self.out_proj.weight[..],
        ));
        out.push(("out_proj.bias".to_string(), vec![self.dim], &self.out_proj.bias[..]));
        out
    }

    /// Mutable views of the parameter tensors, in the order of [`StageNet::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.in_proj.weight, &mut self.in_proj.bias];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.fc1.weight);
            out.push(&mut b.fc1.bias);
            out.push(&mut b.fc2.weight);
            out.push(&mut b.fc2.bias);
        }
        out.push(&mut self.out_proj.weight);
        out.push(&mut self.out_proj.bias);
        out
    }

    /// Adapted centroid for one `(x_hat, c_bar)` pair.
    pub fn forward(&self, x_hat: &[T], c_bar: &[T]) -> Vec<T> {
        let pc = self.centroid_proj(c_bar);
        let px = self.recon_proj(x_hat);
        let z: Vec<T> = pc.iter().zip(&px).map(|(&a, &b)| a + b).collect();
        self.head(z, c_bar)
    }

    /// `W_c c_bar` for every row of `c_bar`.
    pub(crate) fn centroid_proj(&self, c_bar: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); c_bar.len() / self.dim * self.hidden];
        accumulate(&self.in_proj.weight, 0..self.dim, self.hidden, c_bar, self.dim, &mut out);
        out
    }

    /// `W_x x_hat + b` for every row of `x_hat`.
    pub(crate) fn recon_proj(&self, x_hat: &[T]) -> Vec<T> {
        let rows = x_hat.len() / self.dim;
        let mut out = Vec::with_capacity(rows * self.hidden);
        for _ in 0..rows {
            out.extend_from_slice(&self.in_proj.bias);
        }
        accumulate(&self.in_proj.weight, self.dim..2 * self.dim, self.hidden, x_hat, self.dim, &mut out);
        out
    }

    /// Residual blocks and output projection applied to `z_0`, plus the
    /// base-centroid skip.
    fn head(&self, mut z: Vec<T>, c_bar: &[T]) -> Vec<T> {
        for block in &self.blocks {
            let mut h = block.fc1.forward(&z);
            relu(&mut h);
            let delta = block.fc2.forward(&h);
            for (zv, &d) in z.iter_mut().zip(&delta) {
                *zv += d;
            }
        }
        let mut out = self.out_proj.forward(&z);
        for (o, &c) in out.iter_mut().zip(c_bar) {
            *o = c + *o;
        }
        out
    }

    /// Candidate centroids for every pair of partial reconstruction and base
    /// entry: row `b * K + k` holds `f(x_hat[b], base[k])`.
    pub fn candidates(&self, x_hats: &[T], base: &[T]) -> Vec<T> {
        let pc = self.centroid_proj(base);
        let px = self.recon_proj(x_hats);
        self.candidates_with(&pc, &px, base)
    }

    pub(crate) fn candidates_with(&self, pc: &[T], px: &[T], base: &[T]) -> Vec<T> {
        let h = self.hidden;
        let k = pc.len() / h;
        let rows = px.len() / h;
        let mut z = Vec::with_capacity(rows * k * h);
        let mut skip = Vec::with_capacity(rows * k * self.dim);
        for pxr in px.chunks_exact(h) {
            for pcr in pc.chunks_exact(h) {
                z.extend(pcr.iter().zip(pxr).map(|(&a, &b)| a + b));
            }
            skip.extend_from_slice(base);
        }
        self.head(z, &skip)
    }

    /// Batched forward over paired rows, keeping activations for backward.
    pub(crate) fn forward_cached(&self, x_hat: &[T], c_bar: &[T]) -> (Vec<T>, Cache<T>) {
        let pc = self.centroid_proj(c_bar);
        let px = self.recon_proj(x_hat);
        let mut z: Vec<T> = pc.iter().zip(&px).map(|(&a, &b)| a + b).collect();
        let mut zs = Vec::with_capacity(self.blocks.len() + 1);
        let mut pre = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let a = block.fc1.forward(&z);
            let mut h = a.clone();
            relu(&mut h);
            let delta = block.fc2.forward(&h);
            zs.push(z.clone());
            pre.push(a);
            for (zv, &d) in z.iter_mut().zip(&delta) {
                *zv += d;
            }
        }
        let mut out = self.out_proj.forward(&z);
        zs.push(z);
        for (o, &c) in out.iter_mut().zip(c_bar) {
            *o = c + *o;
        }
        (
            out,
            Cache {
                c_bar: c_bar.to_vec(),
                x_hat: x_hat.to_vec(),
                zs,
                pre,
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the `x_hat` input. `g_out` is the gradient of the
    /// adapted centroid rows.
    pub(crate) fn backward(&self, cache: &Cache<T>, g_out: &[T], grad: &mut StageNet<T>) -> Vec<T> {
        let z_last = cache.zs.last().expect("cache holds z_L");
        self.out_proj.accumulate_grad(z_last, g_out, &mut grad.out_proj);
        let mut g_z = self.out_proj.input_grad(g_out);

        for (l, block) in self.blocks.iter().enumerate().rev() {
            let z_in = &cache.zs[l];
            let pre = &cache.pre[l];
            let mut h = pre.clone();
            relu(&mut h);
            // z_{l+1} = z_l + fc2(relu(fc1(z_l)))
            block.fc2.accumulate_grad(&h, &g_z, &mut grad.blocks[l].fc2);
            let mut g_pre = block.fc2.input_grad(&g_z);
            for (g, &a) in g_pre.iter_mut().zip(pre) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            block.fc1.accumulate_grad(z_in, &g_pre, &mut grad.blocks[l].fc1);
            let g_skip = block.fc1.input_grad(&g_pre);
            for (g, &d) in g_z.iter_mut().zip(&g_skip) {
                *g += d;
            }
        }

        let (d, h) = (self.dim, self.hidden);
        outer_accumulate(&mut grad.in_proj.weight, 0, &cache.c_bar, d, &g_z, h);
        outer_accumulate(&mut grad.in_proj.weight, d, &cache.x_hat, d, &g_z, h);
        bias_accumulate(&mut grad.in_proj.bias, &g_z, h);
        input_grad_rows(&self.in_proj.weight, d..2 * d, h, &g_z)
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> StageNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = StageNet::<f64>::init(3, 5, 2, &mut rng);
        net.out_proj = Affine::uniform(5, 3, 0.5, &mut rng);
        net
    }

    #[test]
    fn tiled_product_matches_plain_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(rows, in_dim, out_dim) in &[(1, 3, 5), (7, 5, 19), (9, 16, 32), (4, 2, 8)] {
            let w: Vec<f32> = (0..(in_dim + 2) * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f32> = (0..rows * (in_dim + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let start: Vec<f32> = (0..rows * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tiled = start.clone();
            accumulate(&w, 2..in_dim + 2, out_dim, &x, in_dim + 1, &mut tiled);
            let mut plain = start;
            accumulate_plain(&w, 2..in_dim + 2, 0..out_dim, out_dim, &x, in_dim + 1, &mut plain);
            assert_eq!(tiled, plain);
        }
    }

    #[test]
    fn zero_net_is_pure_skip() {
        let net = StageNet::<f32>::zeros(4, 8, 3);
        let c = [0.25f32, -1.5, 3.0, 7.0];
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0], &c), c.to_vec());
    }

    #[test]
    fn zero_output_init_is_pure_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = StageNet::<f32>::init(4, 8, 2, &mut rng);
        let c = [0.25f32, -1.5, 3.0, 7.0];
        assert_eq!(net.forward(&[1.0, -2.0, 0.5, 4.0], &c), c.to_vec());
    }

    #[test]
    fn batched_candidates_match_single_calls() {
        let net: StageNet<f32> = random_net(1).cast();
        let x_hats = [0.1f32, 0.2, -0.3, 1.0, -1.0, 0.5];
        let base = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.3, 0.3, -2.0, 0.0, 0.0, 0.0];
        let cands = net.candidates(&x_hats, &base);
        for b in 0..2 {
            for k in 0..4 {
                let single = net.forward(&x_hats[b * 3..b * 3 + 3], &base[k * 3..k * 3 + 3]);
                assert_eq!(&cands[(b * 4 + k) * 3..(b * 4 + k + 1) * 3], &single[..]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_inputs() {
        let net = random_net(9);
        let x = [0.3, -0.7, 1.1];
        let c = [-0.2, 0.4, 0.9];
        let w = [0.5, -1.0, 2.0];
        let objective = |x: &[f64]| -> f64 { net.forward(x, &c).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let (_, cache) = net.forward_cached(&x, &c);
        let mut grad = net.zeros_like();
        let gx = net.backward(&cache, &w, &mut grad);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7, "input {i}: fd {fd} vs {}", gx[i]);
        }
    }

    #[test]
    fn parameter_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (d, h, l) = (32usize, 384usize, 4usize);
        let net = StageNet::<f32>::init(d, h, l, &mut rng);
        assert_eq!(net.param_count(), (2 * d + 1) * h + l * 2 * (h + 1) * h + (h + 1) * d);
    }
}
