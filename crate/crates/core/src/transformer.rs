//! Attention primitives, encoder/decoder stacks and the clip-feature
//! embedding of the video stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Sinusoidal encoding of one position.
pub fn positional_encoding(pos: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::invalid(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let p = pos as f64;
    Ok(Tensor::from_fn(&[d_model], |j| {
        let i = (j / 2) as f64;
        let angle = p / 10000f64.powf(2.0 * i / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Rows `0..n` of the sinusoidal table, `[n × d_model]`.
pub fn positional_encoding_table(n: usize, d_model: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * d_model);
    for pos in 0..n {
        data.extend(positional_encoding(pos, d_model)?.into_data());
    }
    Tensor::new(&[n, d_model], data)
}

/// Number of `window`-frame clips at `stride` that fit in `t_len` frames.
pub fn window_count(t_len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    if t_len < window {
        return Err(Error::invalid(format!(
            "sequence of {t_len} frames is shorter than one {window}-frame window"
        )));
    }
    Ok((t_len - window) / stride + 1)
}

/// Boolean `[rows × cols]` matrix, `true` = attention forbidden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    forbidden: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, forbidden: Vec<bool>) -> Result<Self> {
        if forbidden.len() != rows * cols {
            return Err(Error::shape("attention mask", &[rows, cols], &[forbidden.len()]));
        }
        Ok(AttentionMask {
            rows,
            cols,
            forbidden,
        })
    }

    /// Strictly upper-triangular mask: position `i` sees `0..=i`.
    pub fn causal(n: usize) -> Self {
        let forbidden = (0..n * n).map(|k| k % n > k / n).collect();
        AttentionMask {
            rows: n,
            cols: n,
            forbidden,
        }
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        self.forbidden[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.forbidden
    }
}

/// `softmax(QKᵀ/√d_k)·V`, returning `(output, weights)`.
pub fn scaled_dot_attention(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<(Var, Var)> {
    let (n, dk) = g.value(q).dims2()?;
    let (m, dk2) = g.value(k).dims2()?;
    let (m2, _) = g.value(v).dims2()?;
    if dk != dk2 || m != m2 {
        return Err(Error::shape("attention", g.shape(q), g.shape(k)));
    }
    if let Some(mask) = mask {
        if mask.shape() != (n, m) {
            return Err(Error::shape("attention mask", &[mask.rows, mask.cols], &[n, m]));
        }
    }
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.masked_softmax(scores, 1, mask.map(AttentionMask::as_slice))?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Elementwise inverted dropout; identity when `rng` is `None` or `p == 0`.
pub fn dropout(g: &mut Graph<'_>, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(g.shape(x), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
    let m = g.constant(mask);
    g.mul(x, m)
}

/// Affine map `x·W + b` with `W` of shape `[in × out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.weight"), &[d_in, d_out], d_in, d_out, rng)?;
        let b = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[d]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

/// Multi-head attention. Column block `i` (width `d_k`) of `wq`, `wk`, `wv`
/// is head `i`'s projection; `wo` maps the concatenated heads back.
#[derive(Debug, Clone)]
pub struct MultiHeadParams {
    pub heads: usize,
    pub d_model: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl MultiHeadParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::invalid(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        let mut mk = |suffix: &str| {
            store.add_glorot(format!("{name}.{suffix}"), &[d_model, d_model], d_model, d_model, rng)
        };
        Ok(MultiHeadParams {
            heads,
            d_model,
            wq: mk("wq")?,
            wk: mk("wk")?,
            wv: mk("wv")?,
            wo: mk("wo")?,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    /// Attention of `queries[n×d]` over `keys_values[m×d]`.
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        queries: Var,
        keys_values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        self.forward_with_weights(g, store, queries, keys_values, mask)
            .map(|(out, _)| out)
    }

    /// As [`forward`](Self::forward), also returning each head's weight matrix.
    pub fn forward_with_weights<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        queries: Var,
        keys_values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Vec<Var>)> {
        for x in [queries, keys_values] {
            let (_, d) = g.value(x).dims2()?;
            if d != self.d_model {
                return Err(Error::shape("multi-head attention", g.shape(x), &[self.d_model]));
            }
        }
        let wq = g.param(store, self.wq);
        let wk = g.param(store, self.wk);
        let wv = g.param(store, self.wv);
        let wo = g.param(store, self.wo);
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(keys_values, wk)?;
        let v = g.matmul(keys_values, wv)?;
        let dk = self.d_k();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dk, dk)?;
            let kh = g.slice(k, 1, h * dk, dk)?;
            let vh = g.slice(v, 1, h * dk, dk)?;
            let (o, w) = scaled_dot_attention(g, qh, kh, vh, mask)?;
            outs.push(o);
            weights.push(w);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        Ok((g.matmul(cat, wo)?, weights))
    }
}

/// Position-wise `ReLU(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        ffn_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.ff1"), d_model, ffn_dim, true, rng)?,
            outer: Linear::new(store, &format!("{name}.ff2"), ffn_dim, d_model, true, rng)?,
        })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, store, x)?;
        let h = g.relu(h);
        self.outer.forward(g, store, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerDims {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

/// `LN(x + dropout(sub))`.
fn residual_norm<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    ln: &LayerNormParams,
    x: Var,
    sub: Var,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let sub = dropout(g, sub, p, rng)?;
    let s = g.add(x, sub)?;
    ln.forward(g, store, s)
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub self_attn: MultiHeadParams,
    pub norm1: LayerNormParams,
    pub ff: FeedForward,
    pub norm2: LayerNormParams,
    pub dropout: f64,
}

impl EncoderLayerParams {
    pub fn new(store: &mut ParamStore, name: &str, dims: TransformerDims, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderLayerParams {
            self_attn: MultiHeadParams::new(store, &format!("{name}.attn"), dims.d_model, dims.heads, rng)?,
            norm1: LayerNormParams::new(store, &format!("{name}.ln1"), dims.d_model)?,
            ff: FeedForward::new(store, name, dims.d_model, dims.ffn_dim, rng)?,
            norm2: LayerNormParams::new(store, &format!("{name}.ln2"), dims.d_model)?,
            dropout: dims.dropout,
        })
    }

    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let a = self.self_attn.forward(g, store, x, x, None)?;
        let x = residual_norm(g, store, &self.norm1, x, a, self.dropout, rng.as_deref_mut())?;
        let f = self.ff.forward(g, store, x)?;
        residual_norm(g, store, &self.norm2, x, f, self.dropout, rng)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayerParams {
    pub self_attn: MultiHeadParams,
    pub norm1: LayerNormParams,
    pub cross_attn: MultiHeadParams,
    pub norm2: LayerNormParams,
    pub ff: FeedForward,
    pub norm3: LayerNormParams,
    pub dropout: f64,
}

impl DecoderLayerParams {
    pub fn new(store: &mut ParamStore, name: &str, dims: TransformerDims, rng: &mut impl Rng) -> Result<Self> {
        let d = dims.d_model;
        Ok(DecoderLayerParams {
            self_attn: MultiHeadParams::new(store, &format!("{name}.self_attn"), d, dims.heads, rng)?,
            norm1: LayerNormParams::new(store, &format!("{name}.ln1"), d)?,
            cross_attn: MultiHeadParams::new(store, &format!("{name}.cross_attn"), d, dims.heads, rng)?,
            norm2: LayerNormParams::new(store, &format!("{name}.ln2"), d)?,
            ff: FeedForward::new(store, name, d, dims.ffn_dim, rng)?,
            norm3: LayerNormParams::new(store, &format!("{name}.ln3"), d)?,
            dropout: dims.dropout,
        })
    }

    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        x: Var,
        memory: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let n = g.shape(x)[0];
        let causal = AttentionMask::causal(n);
        let a = self.self_attn.forward(g, store, x, x, Some(&causal))?;
        let x = residual_norm(g, store, &self.norm1, x, a, self.dropout, rng.as_deref_mut())?;
        let c = self.cross_attn.forward(g, store, x, memory, None)?;
        let x = residual_norm(g, store, &self.norm2, x, c, self.dropout, rng.as_deref_mut())?;
        let f = self.ff.forward(g, store, x)?;
        residual_norm(g, store, &self.norm3, x, f, self.dropout, rng)
    }
}

pub fn encoder_forward<'p>(
    layers: &[EncoderLayerParams],
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    x: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let mut h = x;
    for layer in layers {
        h = layer.forward(g, store, h, rng.as_deref_mut())?;
    }
    Ok(h)
}

pub fn decoder_forward<'p>(
    layers: &[DecoderLayerParams],
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    target: Var,
    memory: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let (_, d) = g.value(target).dims2()?;
    let (_, dm) = g.value(memory).dims2()?;
    if d != dm {
        return Err(Error::shape("decoder memory", g.shape(target), g.shape(memory)));
    }
    let mut h = target;
    for layer in layers {
        h = layer.forward(g, store, h, memory, rng.as_deref_mut())?;
    }
    Ok(h)
}

/// Source of fixed-width clip descriptors for the video stream.
pub trait ClipFeatureProvider {
    fn feature_dim(&self) -> usize;

    /// Descriptor rows for the clip covering frames `start..start + len`,
    /// one row per temporal sub-step; the embedding averages them.
    fn clip_features(&self, clip: usize, start: usize, len: usize) -> Result<Tensor>;
}

/// Averaged descriptor per clip, `[T' × F]`.
pub fn aggregate_clips(
    provider: &dyn ClipFeatureProvider,
    video_len: usize,
    window: usize,
    stride: usize,
) -> Result<Tensor> {
    let clips = window_count(video_len, window, stride)?;
    let f = provider.feature_dim();
    let mut data = Vec::with_capacity(clips * f);
    for c in 0..clips {
        let rows = provider.clip_features(c, c * stride, window)?;
        let (s, width) = rows.dims2()?;
        if width != f {
            return Err(Error::shape("clip features", rows.shape(), &[s, f]));
        }
        let mut mean = vec![0.0; f];
        for r in 0..s {
            for (m, x) in mean.iter_mut().zip(rows.row(r)) {
                *m += x;
            }
        }
        data.extend(mean.into_iter().map(|m| m / s as f64));
    }
    Tensor::new(&[clips, f], data)
}

/// Clip descriptors → linear projection → plus positional encoding.
pub fn video_embed<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    projection: &Linear,
    provider: &dyn ClipFeatureProvider,
    video_len: usize,
    window: usize,
    stride: usize,
) -> Result<Var> {
    let feats = aggregate_clips(provider, video_len, window, stride)?;
    let x = g.constant(feats);
    let e = projection.forward(g, store, x)?;
    let (n, d) = g.value(e).dims2()?;
    let pe = g.constant(positional_encoding_table(n, d)?);
    g.add(e, pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pe_examples() {
        let p0 = positional_encoding(0, 8).unwrap();
        assert_eq!(p0.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = positional_encoding(1, 8).unwrap();
        assert!((p1.data()[0] - 0.841471).abs() < 1e-6);
        assert!(positional_encoding(0, 7).is_err());
    }

    #[test]
    fn causal_mask_is_strict_upper() {
        let m = AttentionMask::causal(3);
        assert!(!m.is_forbidden(1, 1));
        assert!(m.is_forbidden(0, 2));
        assert!(!m.is_forbidden(2, 0));
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![3.0, -1.0], vec![0.2, 9.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
        let v = g.constant(Tensor::from_rows(&[vec![7.0, -2.0, 1.5]]).unwrap());
        let (o, _) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(o).row(0), &[7.0, -2.0, 1.5]);
        assert_eq!(g.value(o).row(1), &[7.0, -2.0, 1.5]);
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_count(60, 16, 8).unwrap(), 6);
        assert_eq!(window_count(16, 16, 8).unwrap(), 1);
        assert!(window_count(15, 16, 8).is_err());
    }
}
