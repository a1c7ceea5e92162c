//! Transformer building blocks with explicit backward passes.
//!
//! Every layer is a plain parameter struct. A forward pass returns its output
//! together with a cache; `backward` consumes the cache and the output
//! gradient, accumulates parameter gradients into a struct of the same type,
//! and returns the input gradient. Activations are row-major `[positions, features]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array, Array1, Array2, Axis, Dimension};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

/// Flat views of a module's parameters in a fixed order: `(name, shape, data)`.
pub type ParamList<'a, F> = Vec<(String, Vec<usize>, &'a [F])>;
pub type ParamListMut<'a, F> = Vec<&'a mut [F]>;

pub(crate) fn push<'a, F: Real, D: Dimension>(
    out: &mut ParamList<'a, F>,
    prefix: &str,
    name: &str,
    a: &'a Array<F, D>,
) {
    out.push((
        format!("{prefix}.{name}"),
        a.shape().to_vec(),
        a.as_slice().expect("parameters are contiguous"),
    ));
}

pub(crate) fn push_mut<'a, F: Real, D: Dimension>(out: &mut ParamListMut<'a, F>, a: &'a mut Array<F, D>) {
    out.push(a.as_slice_mut().expect("parameters are contiguous"));
}

fn normal<F: Real, D: Dimension>(shape: D, std: f64, rng: &mut impl Rng) -> Array<F, D> {
    let dist = Normal::new(0.0, std).expect("std is positive");
    Array::from_shape_simple_fn(shape, || F::lit(dist.sample(rng)))
}

/// `y = x W + b`, with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: normal(ndarray::Ix2(inp, out), (1.0 / inp as f64).sqrt(), rng),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Array2::zeros((inp, out)),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (i, o) = self.weight.dim();
        Self::zeros(i, o)
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>, g: &mut Self) -> Array2<F> {
        general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut g.weight);
        g.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        push(out, prefix, "weight", &self.weight);
        push(out, prefix, "bias", &self.bias);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        push_mut(out, &mut self.weight);
        push_mut(out, &mut self.bias);
    }
}

const LN_EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = F::from(x.ncols()).expect("width fits");
        let eps = F::lit(LN_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / d;
            let inv = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: &Array2<F>, g: &mut Self) -> Array2<F> {
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let d = F::from(dy.ncols()).expect("width fits");
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &inv) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh).map(|(&a, &b)| a * b).fold(F::zero(), |a, b| a + b) / d;
            row.zip_mut_with(&xh, |v, &h| *v = inv * (*v - mean_d - h * mean_dx));
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        push(out, prefix, "gamma", &self.gamma);
        push(out, prefix, "beta", &self.beta);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        push_mut(out, &mut self.gamma);
        push_mut(out, &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    let u = F::lit(GELU_C) * (x + F::lit(GELU_A) * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x)
}

/// `Linear → GELU → Linear`. Also serves as the two-layer classifier MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<F> {
    pub l1: Linear<F>,
    pub l2: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<F> {
    x: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

impl<F: Real> FeedForward<F> {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(d_in, d_hidden, rng),
            l2: Linear::new(d_hidden, d_out, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, FeedForwardCache<F>) {
        let pre = self.l1.forward(x);
        let act = pre.mapv(gelu);
        let y = self.l2.forward(&act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FeedForwardCache<F>, dy: &Array2<F>, g: &mut Self) -> Array2<F> {
        let mut dact = self.l2.backward(&cache.act, dy, &mut g.l2);
        dact.zip_mut_with(&cache.pre, |d, &p| *d *= gelu_grad(p));
        self.l1.backward(&cache.x, &dact, &mut g.l1)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        self.l1.params(&format!("{prefix}.l1"), out);
        self.l2.params(&format!("{prefix}.l2"), out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        self.l1.params_mut(out);
        self.l2.params_mut(out);
    }
}

/// Which keys a query row may attend to. Keys `>= key_len` are padding; with
/// `causal`, query `i` additionally sees only keys `<= i`. Every row's visible
/// keys form a prefix, possibly empty, in which case the row attends to nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyMask {
    pub key_len: usize,
    pub causal: bool,
}

impl KeyMask {
    pub fn visible(&self, query: usize) -> usize {
        if self.causal {
            self.key_len.min(query + 1)
        } else {
            self.key_len
        }
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<F> {
    pub q: Linear<F>,
    pub k: Linear<F>,
    pub v: Linear<F>,
    pub o: Linear<F>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    xq: Array2<F>,
    xkv: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

fn masked_softmax_rows<F: Real>(s: &mut Array2<F>, mask: KeyMask, scale: F) {
    for (i, mut row) in s.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("scores are contiguous");
        let lim = mask.visible(i).min(row.len());
        let (live, dead) = row.split_at_mut(lim);
        dead.fill(F::zero());
        if live.is_empty() {
            continue;
        }
        let mut max = F::neg_infinity();
        for v in live.iter_mut() {
            *v *= scale;
            max = max.max(*v);
        }
        let mut sum = F::zero();
        for v in live.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = F::one() / sum;
        live.iter_mut().for_each(|v| *v *= inv);
    }
}

impl<F: Real> Attention<F> {
    pub fn new(d: usize, n_heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(d, d, rng),
            k: Linear::new(d, d, rng),
            v: Linear::new(d, d, rng),
            o: Linear::new(d, d, rng),
            n_heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
            n_heads: self.n_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.weight.ncols() / self.n_heads
    }

    pub fn forward(&self, xq: &Array2<F>, xkv: &Array2<F>, mask: KeyMask) -> (Array2<F>, AttentionCache<F>) {
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let dh = self.head_dim();
        let scale = F::one() / F::from(dh).expect("head width fits").sqrt();
        let mut ctx = Array2::zeros(q.dim());
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t());
            masked_softmax_rows(&mut a, mask, scale);
            ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            probs.push(a);
        }
        let out = self.o.forward(&ctx);
        let cache = AttentionCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        (out, cache)
    }

    /// Returns `(d_xq, d_xkv)`; for self-attention the caller adds both.
    pub fn backward(&self, c: &AttentionCache<F>, dy: &Array2<F>, g: &mut Self) -> (Array2<F>, Array2<F>) {
        let dctx = self.o.backward(&c.ctx, dy, &mut g.o);
        let dh = self.head_dim();
        let scale = F::one() / F::from(dh).expect("head width fits").sqrt();
        let mut dq = Array2::zeros(c.q.dim());
        let mut dk = Array2::zeros(c.k.dim());
        let mut dv = Array2::zeros(c.v.dim());
        for (h, a) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            // dS = A ⊙ (dA − rowsum(dA ⊙ A)) · scale; masked entries have A = 0.
            let mut ds = dctx_h.dot(&c.v.slice(cols).t());
            for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot = drow.iter().zip(arow).map(|(&x, &y)| x * y).fold(F::zero(), |s, t| s + t);
                drow.zip_mut_with(&arow, |d, &p| *d = p * (*d - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let dxq = self.q.backward(&c.xq, &dq, &mut g.q);
        let mut dxkv = self.k.backward(&c.xkv, &dk, &mut g.k);
        dxkv += &self.v.backward(&c.xkv, &dv, &mut g.v);
        (dxq, dxkv)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        self.q.params(&format!("{prefix}.q"), out);
        self.k.params(&format!("{prefix}.k"), out);
        self.v.params(&format!("{prefix}.v"), out);
        self.o.params(&format!("{prefix}.o"), out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        self.q.params_mut(out);
        self.k.params_mut(out);
        self.v.params_mut(out);
        self.o.params_mut(out);
    }
}

/// Post-LN encoder layer: `h = LN(x + SelfAttn(x))`, `y = LN(h + FF(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F> {
    pub attn: Attention<F>,
    pub ln1: LayerNorm<F>,
    pub ff: FeedForward<F>,
    pub ln2: LayerNorm<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    attn: AttentionCache<F>,
    ln1: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    ln2: LayerNormCache<F>,
}

impl<F: Real> EncoderLayer<F> {
    pub fn new(d: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            attn: Attention::new(d, n_heads, rng),
            ln1: LayerNorm::new(d),
            ff: FeedForward::new(d, d_ff, d, rng),
            ln2: LayerNorm::new(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            attn: self.attn.zeros_like(),
            ln1: self.ln1.zeros_like(),
            ff: self.ff.zeros_like(),
            ln2: self.ln2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array2<F>, key_len: usize) -> (Array2<F>, EncoderCache<F>) {
        let mask = KeyMask { key_len, causal: false };
        let (a, attn) = self.attn.forward(x, x, mask);
        let (h, ln1) = self.ln1.forward(&(x + &a));
        let (f, ff) = self.ff.forward(&h);
        let (y, ln2) = self.ln2.forward(&(h + &f));
        (y, EncoderCache { attn, ln1, ff, ln2 })
    }

    pub fn backward(&self, c: &EncoderCache<F>, dy: &Array2<F>, g: &mut Self) -> Array2<F> {
        let dr2 = self.ln2.backward(&c.ln2, dy, &mut g.ln2);
        let dh = self.ff.backward(&c.ff, &dr2, &mut g.ff) + &dr2;
        let dr1 = self.ln1.backward(&c.ln1, &dh, &mut g.ln1);
        let (dq, dkv) = self.attn.backward(&c.attn, &dr1, &mut g.attn);
        dr1 + &dq + &dkv
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        self.attn.params(&format!("{prefix}.attn"), out);
        self.ln1.params(&format!("{prefix}.ln1"), out);
        self.ff.params(&format!("{prefix}.ff"), out);
        self.ln2.params(&format!("{prefix}.ln2"), out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        self.attn.params_mut(out);
        self.ln1.params_mut(out);
        self.ff.params_mut(out);
        self.ln2.params_mut(out);
    }
}

/// Post-LN decoder layer: causal self-attention, cross-attention over the
/// encoder memory, feed-forward; each followed by residual and LN.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<F> {
    pub self_attn: Attention<F>,
    pub ln1: LayerNorm<F>,
    pub cross_attn: Attention<F>,
    pub ln2: LayerNorm<F>,
    pub ff: FeedForward<F>,
    pub ln3: LayerNorm<F>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<F> {
    self_attn: AttentionCache<F>,
    ln1: LayerNormCache<F>,
    cross_attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    ln3: LayerNormCache<F>,
}

impl<F: Real> DecoderLayer<F> {
    pub fn new(d: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            self_attn: Attention::new(d, n_heads, rng),
            ln1: LayerNorm::new(d),
            cross_attn: Attention::new(d, n_heads, rng),
            ln2: LayerNorm::new(d),
            ff: FeedForward::new(d, d_ff, d, rng),
            ln3: LayerNorm::new(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            self_attn: self.self_attn.zeros_like(),
            ln1: self.ln1.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff: self.ff.zeros_like(),
            ln3: self.ln3.zeros_like(),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<F>,
        memory: &Array2<F>,
        key_len: usize,
        memory_len: usize,
    ) -> (Array2<F>, DecoderCache<F>) {
        let (a, self_attn) = self.self_attn.forward(x, x, KeyMask { key_len, causal: true });
        let (h1, ln1) = self.ln1.forward(&(x + &a));
        let mem_mask = KeyMask {
            key_len: memory_len,
            causal: false,
        };
        let (c, cross_attn) = self.cross_attn.forward(&h1, memory, mem_mask);
        let (h2, ln2) = self.ln2.forward(&(h1 + &c));
        let (f, ff) = self.ff.forward(&h2);
        let (y, ln3) = self.ln3.forward(&(h2 + &f));
        let cache = DecoderCache {
            self_attn,
            ln1,
            cross_attn,
            ln2,
            ff,
            ln3,
        };
        (y, cache)
    }

    /// Returns `(d_x, d_memory)`.
    pub fn backward(&self, c: &DecoderCache<F>, dy: &Array2<F>, g: &mut Self) -> (Array2<F>, Array2<F>) {
        let dr3 = self.ln3.backward(&c.ln3, dy, &mut g.ln3);
        let dh2 = self.ff.backward(&c.ff, &dr3, &mut g.ff) + &dr3;
        let dr2 = self.ln2.backward(&c.ln2, &dh2, &mut g.ln2);
        let (dq, dmem) = self.cross_attn.backward(&c.cross_attn, &dr2, &mut g.cross_attn);
        let dh1 = dq + &dr2;
        let dr1 = self.ln1.backward(&c.ln1, &dh1, &mut g.ln1);
        let (dq, dkv) = self.self_attn.backward(&c.self_attn, &dr1, &mut g.self_attn);
        (dr1 + &dq + &dkv, dmem)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        self.self_attn.params(&format!("{prefix}.self_attn"), out);
        self.ln1.params(&format!("{prefix}.ln1"), out);
        self.cross_attn.params(&format!("{prefix}.cross_attn"), out);
        self.ln2.params(&format!("{prefix}.ln2"), out);
        self.ff.params(&format!("{prefix}.ff"), out);
        self.ln3.params(&format!("{prefix}.ln3"), out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        self.self_attn.params_mut(out);
        self.ln1.params_mut(out);
        self.cross_attn.params_mut(out);
        self.ln2.params_mut(out);
        self.ff.params_mut(out);
        self.ln3.params_mut(out);
    }
}

/// Token embedding plus learned absolute positional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F> {
    pub token: Array2<F>,
    pub position: Array2<F>,
}

impl<F: Real> Embedding<F> {
    pub fn new(vocab: usize, max_len: usize, d: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / d as f64).sqrt();
        Self {
            token: normal(ndarray::Ix2(vocab, d), std, rng),
            position: normal(ndarray::Ix2(max_len, d), std, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            token: Array2::zeros(self.token.dim()),
            position: Array2::zeros(self.position.dim()),
        }
    }

    /// Callers guarantee `ids.len() <= max_len` and every id `< vocab`.
    pub fn forward(&self, ids: &[usize]) -> Array2<F> {
        let mut out = self.position.slice(s![..ids.len(), ..]).to_owned();
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row += &self.token.row(id);
        }
        out
    }

    pub fn backward(&self, ids: &[usize], dy: &Array2<F>, g: &mut Self) {
        for (i, (&id, drow)) in ids.iter().zip(dy.rows()).enumerate() {
            let mut t = g.token.row_mut(id);
            t += &drow;
            let mut p = g.position.row_mut(i);
            p += &drow;
        }
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, F>) {
        push(out, prefix, "token", &self.token);
        push(out, prefix, "position", &self.position);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut ParamListMut<'a, F>) {
        push_mut(out, &mut self.token);
        push_mut(out, &mut self.position);
    }
}
