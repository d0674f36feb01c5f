//! Keypoint stream: stacked spatio-temporal graph convolution blocks followed
//! by LSTM layers, pooled to the clip-window rate of the video stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::skelgraph::HopAdjacencySet;
use crate::transformer::{positional_encoding_table, window_count};

/// Hyperparameters of one STGCN block.
#[derive(Debug, Clone, PartialEq)]
pub struct StgcnBlockConfig {
    pub c_in: usize,
    /// Filters of the leading temporal convolution.
    pub c_u: usize,
    pub u_width: usize,
    /// Number of hop matrices used (`A_0 .. A_{hops-1}`).
    pub hops: usize,
    /// Graph-convolution output channels per hop.
    pub c_g: usize,
    pub tcn_widths: Vec<usize>,
    /// Filters per TCN level.
    pub c_l: usize,
    pub dropout_p: f64,
}

impl StgcnBlockConfig {
    /// The block of the published layer summary (37,680 parameters at `c_in = 3`).
    pub fn shipped(c_in: usize) -> Self {
        StgcnBlockConfig {
            c_in,
            c_u: 64,
            u_width: 9,
            hops: 2,
            c_g: 64,
            tcn_widths: vec![9, 15, 19],
            c_l: 16,
            dropout_p: 0.1,
        }
    }

    pub fn c_out(&self) -> usize {
        self.tcn_widths.len() * self.c_l
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_u == 0 || self.c_g == 0 || self.c_l == 0 || self.hops == 0 {
            return Err(Error::invalid("STGCN channel counts must be positive"));
        }
        if self.tcn_widths.is_empty() {
            return Err(Error::invalid("STGCN block needs at least one TCN level"));
        }
        if std::iter::once(self.u_width)
            .chain(self.tcn_widths.iter().copied())
            .any(|w| w % 2 == 0)
        {
            return Err(Error::invalid("STGCN temporal widths must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("dropout probability must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Parameter counts in layer order: Γ^u, each hop's W_k, each TCN level.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.c_u * self.c_in * self.u_width + self.c_u];
        let z = self.c_in + self.c_u;
        counts.extend(std::iter::repeat_n(z * self.c_g + self.c_g, self.hops));
        let mut c_prev = self.hops * self.c_g;
        for &w in &self.tcn_widths {
            counts.push(self.c_l * c_prev * w + self.c_l);
            c_prev = self.c_l;
        }
        counts
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

impl ConvParams {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_out: usize,
        c_in: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_glorot(
            format!("{name}.weight"),
            &[c_out, c_in, 1, width],
            c_in * width,
            c_out * width,
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(ConvParams { weight, bias })
    }

    fn apply<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_temporal(x, w, Some(b), true)
    }
}

/// Zeroes whole channels of `x[C×N×T]` with probability `p`, scaling the
/// survivors by `1/(1−p)`. Identity when `rng` is `None`.
pub fn channel_dropout(
    g: &mut Graph<'_>,
    x: Var,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let per_channel: usize = shape[1..].iter().product();
    let keep: Vec<f64> = (0..shape[0])
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
        .collect();
    let mask = Tensor::from_fn(&shape, |i| keep[i / per_channel]);
    let m = g.constant(mask);
    g.mul(x, m)
}

/// One spatio-temporal graph convolution block.
#[derive(Debug, Clone)]
pub struct StgcnBlock {
    config: StgcnBlockConfig,
    temporal: ConvParams,
    hop_weights: Vec<ConvParams>,
    tcn: Vec<ConvParams>,
}

impl StgcnBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: StgcnBlockConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let temporal = ConvParams::new(
            store,
            &format!("{prefix}.gamma_u"),
            config.c_u,
            config.c_in,
            config.u_width,
            rng,
        )?;
        let z = config.c_in + config.c_u;
        let hop_weights = (0..config.hops)
            .map(|k| ConvParams::new(store, &format!("{prefix}.hop{k}"), config.c_g, z, 1, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut c_prev = config.hops * config.c_g;
        let mut tcn = Vec::new();
        for (i, &w) in config.tcn_widths.iter().enumerate() {
            tcn.push(ConvParams::new(
                store,
                &format!("{prefix}.tcn{}", i + 1),
                config.c_l,
                c_prev,
                w,
                rng,
            )?);
            c_prev = config.c_l;
        }
        Ok(StgcnBlock {
            config,
            temporal,
            hop_weights,
            tcn,
        })
    }

    pub fn config(&self) -> &StgcnBlockConfig {
        &self.config
    }

    /// `V[C×N×T] → Y[C_out×N×T]`:
    /// `Z = V ⊕ ReLU(Γ^u ⊗ V)`, `G_k = ReLU(Ã_k Z W_k)`, hop outputs concatenated,
    /// then a cascade of temporal convolutions whose outputs are concatenated.
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        hops: &HopAdjacencySet,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (c, n, _) = g.value(x).dims3()?;
        if c != self.config.c_in {
            return Err(Error::shape(
                "stgcn block channels",
                g.shape(x),
                &[self.config.c_in],
            ));
        }
        if hops.joint_count() != n || hops.len() < self.config.hops {
            return Err(Error::shape(
                "stgcn block joints",
                g.shape(x),
                &[hops.len(), hops.joint_count()],
            ));
        }
        let u = self.temporal.apply(g, store, x)?;
        let u = g.relu(u);
        let z = g.concat(&[x, u], 0)?;
        let mut per_hop = Vec::with_capacity(self.hop_weights.len());
        for (k, w) in self.hop_weights.iter().enumerate() {
            let zw = w.apply(g, store, z)?;
            let adj = g.constant(hops.normalized()[k].clone());
            let mixed = g.node_mix(adj, zw)?;
            per_hop.push(g.relu(mixed));
        }
        let mut m = g.concat(&per_hop, 0)?;
        let mut levels = Vec::with_capacity(self.tcn.len());
        for conv in &self.tcn {
            let y = conv.apply(g, store, m)?;
            let y = g.relu(y);
            m = channel_dropout(g, y, self.config.dropout_p, rng.as_deref_mut())?;
            levels.push(m);
        }
        g.concat(&levels, 0)
    }
}

/// Applies `blocks` in sequence; consecutive blocks must agree on channels.
pub fn stack_blocks<'p>(
    blocks: &[StgcnBlock],
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    hops: &HopAdjacencySet,
    x: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::invalid("empty STGCN stack"));
    }
    for pair in blocks.windows(2) {
        if pair[0].config.c_out() != pair[1].config.c_in {
            return Err(Error::invalid(format!(
                "STGCN block emits {} channels but the next expects {}",
                pair[0].config.c_out(),
                pair[1].config.c_in
            )));
        }
    }
    let mut h = x;
    for b in blocks {
        h = b.forward(g, store, hops, h, rng.as_deref_mut())?;
    }
    Ok(h)
}

/// Weights of one LSTM layer. Row blocks of height `C` hold the gates in
/// order `f, i, o, c`: `w` is `[4C × input]`, `u` is `[4C × C]`, `b` is `[4C]`.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

impl LstmCellParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut glorot = |cols: usize| {
            let limit = (6.0 / (cols + hidden) as f64).sqrt();
            Tensor::from_fn(&[4 * hidden, cols], |_| rng.gen_range(-limit..limit))
        };
        let w = glorot(input_size);
        let u = glorot(hidden);
        Ok(LstmCellParams {
            input_size,
            hidden,
            w: store.add(format!("{prefix}.w"), w)?,
            u: store.add(format!("{prefix}.u"), u)?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden]))?,
        })
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input_size + self.hidden + 1)
    }
}

/// Runs one LSTM layer over `seq[T×input]` from zero state, returning every
/// hidden state `[T×C]`.
pub fn lstm_forward<'p>(
    cell: &LstmCellParams,
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    seq: Var,
) -> Result<Var> {
    let (t_len, input) = g.value(seq).dims2()?;
    if input != cell.input_size {
        return Err(Error::shape("lstm input", g.shape(seq), &[cell.input_size]));
    }
    let c = cell.hidden;
    let w_all = g.param(store, cell.w);
    let u_all = g.param(store, cell.u);
    let b_all = g.param(store, cell.b);
    let gx = g.matmul_nt(seq, w_all)?;
    let gx = g.add_bias(gx, b_all, 1)?;

    let mut hs = Vec::with_capacity(t_len);
    let mut state: Option<(Var, Var)> = None;
    for t in 0..t_len {
        let mut pre = g.slice(gx, 0, t, 1)?;
        if let Some((h, _)) = state {
            let gh = g.matmul_nt(h, u_all)?;
            pre = g.add(pre, gh)?;
        }
        let f = g.slice(pre, 1, 0, c)?;
        let f = g.sigmoid(f);
        let i = g.slice(pre, 1, c, c)?;
        let i = g.sigmoid(i);
        let o = g.slice(pre, 1, 2 * c, c)?;
        let o = g.sigmoid(o);
        let cand = g.slice(pre, 1, 3 * c, c)?;
        let cand = g.tanh(cand);
        let ic = g.mul(i, cand)?;
        let cell_state = match state {
            Some((_, c_prev)) => {
                let fc = g.mul(f, c_prev)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(cell_state);
        let h = g.mul(o, tc)?;
        hs.push(h);
        state = Some((h, cell_state));
    }
    g.concat(&hs, 0)
}

/// Windowed mean-pooling matrix `[T'×T]` for window `w`, stride `s`.
pub fn window_pool_matrix(t_len: usize, window: usize, stride: usize) -> Result<Tensor> {
    let n = window_count(t_len, window, stride)?;
    Ok(Tensor::from_fn(&[n, t_len], |k| {
        let (r, t) = (k / t_len, k % t_len);
        if t >= r * stride && t < r * stride + window {
            1.0 / window as f64
        } else {
            0.0
        }
    }))
}

/// STGCN stack, LSTM layers and window pooling.
#[derive(Debug, Clone)]
pub struct KeypointEncoder {
    pub blocks: Vec<StgcnBlock>,
    pub lstms: Vec<LstmCellParams>,
    pub window: usize,
    pub stride: usize,
    pub positional_encoding: bool,
}

/// Shape options for [`KeypointEncoder::new`].
#[derive(Debug, Clone)]
pub struct KeypointEncoderConfig {
    pub joints: usize,
    pub stgcn_layers: usize,
    pub first_block: StgcnBlockConfig,
    pub lstm_layers: usize,
    pub hidden: usize,
    pub window: usize,
    pub stride: usize,
    pub positional_encoding: bool,
}

impl KeypointEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &KeypointEncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.stgcn_layers == 0 || cfg.lstm_layers == 0 {
            return Err(Error::invalid("keypoint encoder needs at least one STGCN and one LSTM layer"));
        }
        let mut blocks = Vec::with_capacity(cfg.stgcn_layers);
        let mut block_cfg = cfg.first_block.clone();
        for l in 0..cfg.stgcn_layers {
            let b = StgcnBlock::new(store, &format!("{prefix}.stgcn{l}"), block_cfg.clone(), rng)?;
            block_cfg.c_in = b.config.c_out();
            blocks.push(b);
        }
        let mut input = cfg.joints * block_cfg.c_in;
        let mut lstms = Vec::with_capacity(cfg.lstm_layers);
        for l in 0..cfg.lstm_layers {
            lstms.push(LstmCellParams::new(
                store,
                &format!("{prefix}.lstm{l}"),
                input,
                cfg.hidden,
                rng,
            )?);
            input = cfg.hidden;
        }
        Ok(KeypointEncoder {
            blocks,
            lstms,
            window: cfg.window,
            stride: cfg.stride,
            positional_encoding: cfg.positional_encoding,
        })
    }

    /// `pose[T×N×3] → H[T'×C]`.
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        hops: &HopAdjacencySet,
        pose: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (t_len, joints, coords) = pose.dims3()?;
        let pool = window_pool_matrix(t_len, self.window, self.stride)?;
        let first = &self.blocks[0].config;
        if coords != first.c_in {
            return Err(Error::shape("keypoint_encode", pose.shape(), &[t_len, joints, first.c_in]));
        }
        if !pose.all_finite() {
            return Err(Error::invalid("pose sequence contains non-finite values"));
        }
        let x = g.constant(pose.permute(&[2, 1, 0])?);
        let y = stack_blocks(&self.blocks, g, store, hops, x, rng.as_deref_mut())?;
        let c_out = g.shape(y)[0];
        let y = g.permute(y, &[2, 1, 0])?;
        let mut h = g.reshape(y, &[t_len, joints * c_out])?;
        for cell in &self.lstms {
            h = lstm_forward(cell, g, store, h)?;
        }
        let pool = g.constant(pool);
        let mut pooled = g.matmul(pool, h)?;
        if self.positional_encoding {
            let (tp, d) = g.value(pooled).dims2()?;
            let pe = g.constant(positional_encoding_table(tp, d)?);
            pooled = g.add(pooled, pe)?;
        }
        Ok(pooled)
    }

    pub fn output_dim(&self) -> usize {
        self.lstms.last().map_or(0, |l| l.hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skelgraph::{build_hops, SkeletonTopology};
    use rand::SeedableRng;

    #[test]
    fn shipped_block_counts() {
        let c = StgcnBlockConfig::shipped(3);
        assert_eq!(c.layer_param_counts(), vec![1792, 4352, 4352, 18448, 3856, 4880]);
        assert_eq!(c.param_count(), 37_680);
        assert_eq!(c.c_out(), 48);
    }

    #[test]
    fn even_width_rejected() {
        let mut c = StgcnBlockConfig::shipped(3);
        c.tcn_widths[1] = 14;
        assert!(c.validate().is_err());
    }

    #[test]
    fn block_shape_and_registered_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let block = StgcnBlock::new(&mut store, "b", StgcnBlockConfig::shipped(3), &mut rng).unwrap();
        assert_eq!(store.num_scalars(), 37_680);
        let hops = build_hops(&SkeletonTopology::pose33(), 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 33, 12], |i| (i as f64 * 0.37).sin()));
        let y = block.forward(&mut g, &store, &hops, x, None).unwrap();
        assert_eq!(g.shape(y), &[48, 33, 12]);
    }

    #[test]
    fn empty_stack_rejected() {
        let hops = build_hops(&SkeletonTopology::pose33(), 1).unwrap();
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 33, 4]));
        assert!(stack_blocks(&[], &mut g, &store, &hops, x, None).is_err());
    }

    #[test]
    fn pool_matrix_rows_average_windows() {
        let p = window_pool_matrix(60, 16, 8).unwrap();
        assert_eq!(p.shape(), &[6, 60]);
        for r in 0..6 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(window_pool_matrix(15, 16, 8).is_err());
    }
}
