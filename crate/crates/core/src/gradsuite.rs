//! Finite-difference checks of every differentiable operation and of the
//! assembled model at toy sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{fuse, FusionKind, FusionStrategy};
use crate::numerics::{grad_check, GradCheckReport, Graph, ParamId, ParamStore, Tensor, Var};
use crate::pipeline::{lsce_loss, Model, ModelConfig};
use crate::skelgraph::{build_hops, SkeletonTopology};
use crate::stgcn::{
    lstm_forward, window_pool_matrix, KeypointEncoder, KeypointEncoderConfig, LstmCellParams, StgcnBlock,
    StgcnBlockConfig,
};
use crate::transformer::{
    scaled_dot_attention, AttentionMask, DecoderLayerParams, EncoderLayerParams, MultiHeadParams,
    TransformerDims,
};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Step size and sampling used by [`gradient_suite`].
#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub eps: f64,
    /// Coordinates sampled per case when it has more scalars than this.
    pub probes: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            eps: 1e-5,
            probes: 200,
            seed: 17,
        }
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ x ⊙ R` for a fixed random `R`, so the loss depends on every output.
fn readout(g: &mut Graph<'_>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = uniform(g.shape(x), &mut rng);
    let r = g.constant(r);
    let y = g.mul(x, r)?;
    Ok(g.sum(y))
}

struct Runner {
    opts: SuiteOptions,
    rng: ChaCha8Rng,
    cases: Vec<SuiteCase>,
}

impl Runner {
    fn store(&mut self, shapes: &[(&str, &[usize])]) -> Result<(ParamStore, Vec<ParamId>)> {
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .map(|(name, shape)| store.add(*name, uniform(shape, &mut self.rng)))
            .collect::<Result<Vec<_>>>()?;
        Ok((store, ids))
    }

    fn check<F>(&mut self, name: &'static str, store: &ParamStore, f: F) -> Result<()>
    where
        F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Result<Var>,
    {
        let seed = self.opts.seed.wrapping_add(self.cases.len() as u64);
        let report = grad_check(store, f, self.opts.eps, self.opts.probes, seed)?;
        self.cases.push(SuiteCase { name, report });
        Ok(())
    }

    /// Checks `op(params…)` followed by a random readout.
    fn unary<F>(&mut self, name: &'static str, shapes: &[(&str, &[usize])], op: F) -> Result<()>
    where
        F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
    {
        let (store, ids) = self.store(shapes)?;
        let seed = self.cases.len() as u64;
        self.check(name, &store, |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = op(g, &vars)?;
            readout(g, y, seed)
        })
    }
}

/// Runs every check. Each case reports its worst relative error.
pub fn gradient_suite(opts: SuiteOptions) -> Result<Vec<SuiteCase>> {
    let mut r = Runner {
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        cases: Vec::new(),
    };
    elementwise(&mut r)?;
    structural(&mut r)?;
    losses(&mut r)?;
    layers(&mut r)?;
    end_to_end(&mut r)?;
    Ok(r.cases)
}

fn elementwise(r: &mut Runner) -> Result<()> {
    let ab: &[(&str, &[usize])] = &[("a", &[3, 4]), ("b", &[3, 4])];
    r.unary("add", ab, |g, v| g.add(v[0], v[1]))?;
    r.unary("sub", ab, |g, v| g.sub(v[0], v[1]))?;
    r.unary("mul", ab, |g, v| g.mul(v[0], v[1]))?;
    r.unary("scale", &[("a", &[5])], |g, v| Ok(g.scale(v[0], -2.5)))?;
    r.unary("add_bias rows", &[("x", &[3, 4]), ("b", &[4])], |g, v| {
        g.add_bias(v[0], v[1], 1)
    })?;
    r.unary("add_bias channels", &[("x", &[3, 2, 2]), ("b", &[3])], |g, v| {
        g.add_bias(v[0], v[1], 0)
    })?;
    r.unary("relu", &[("a", &[4, 5])], |g, v| Ok(g.relu(v[0])))?;
    r.unary("sigmoid", &[("a", &[4, 5])], |g, v| Ok(g.sigmoid(v[0])))?;
    r.unary("tanh", &[("a", &[4, 5])], |g, v| Ok(g.tanh(v[0])))?;
    r.unary("sum", &[("a", &[3, 3])], |g, v| {
        let s = g.sum(v[0]);
        Ok(g.mul(s, s)?)
    })?;
    r.unary("mean", &[("a", &[3, 3])], |g, v| {
        let m = g.mean(v[0]);
        let t = g.tanh(m);
        Ok(g.mul(t, m)?)
    })?;
    Ok(())
}

fn structural(r: &mut Runner) -> Result<()> {
    r.unary("matmul", &[("a", &[3, 4]), ("b", &[4, 5])], |g, v| g.matmul(v[0], v[1]))?;
    r.unary("matmul_nt", &[("a", &[3, 4]), ("b", &[5, 4])], |g, v| g.matmul_nt(v[0], v[1]))?;
    r.unary("linear", &[("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2])], |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    })?;
    r.unary("transpose", &[("a", &[3, 5])], |g, v| g.transpose(v[0]))?;
    r.unary("reshape", &[("a", &[2, 6])], |g, v| g.reshape(v[0], &[3, 4]))?;
    r.unary("permute", &[("a", &[2, 3, 4])], |g, v| g.permute(v[0], &[2, 0, 1]))?;
    r.unary("concat", &[("a", &[2, 3]), ("b", &[2, 2])], |g, v| g.concat(&[v[0], v[1]], 1))?;
    r.unary("slice", &[("a", &[4, 3])], |g, v| g.slice(v[0], 0, 1, 2))?;
    r.unary("softmax rows", &[("a", &[3, 5])], |g, v| g.softmax(v[0], 1))?;
    r.unary("softmax columns", &[("a", &[3, 5])], |g, v| g.softmax(v[0], 0))?;
    r.unary("masked_softmax", &[("a", &[3, 3])], |g, v| {
        let mask = AttentionMask::causal(3);
        g.masked_softmax(v[0], 1, Some(mask.as_slice()))
    })?;
    r.unary("log_softmax", &[("a", &[3, 5])], |g, v| g.log_softmax(v[0], 1))?;
    r.unary("layer_norm", &[("x", &[3, 6]), ("gamma", &[6]), ("beta", &[6])], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    })?;
    r.unary("conv same", &[("x", &[2, 3, 7]), ("k", &[4, 2, 1, 3]), ("b", &[4])], |g, v| {
        g.conv_temporal(v[0], v[1], Some(v[2]), true)
    })?;
    r.unary("conv valid", &[("x", &[2, 3, 7]), ("k", &[3, 2, 1, 5])], |g, v| {
        g.conv_temporal(v[0], v[1], None, false)
    })?;
    r.unary("node_mix", &[("adj", &[4, 4]), ("x", &[2, 4, 3])], |g, v| g.node_mix(v[0], v[1]))?;
    r.unary("embedding", &[("table", &[5, 3])], |g, v| g.embedding(v[0], &[4, 1, 4, 0]))?;
    Ok(())
}

fn losses(r: &mut Runner) -> Result<()> {
    let targets = [Some(2), None, Some(0), Some(4)];
    r.unary("smoothed cross-entropy", &[("logits", &[4, 5])], move |g, v| {
        lsce_loss(g, v[0], &targets, 0.1, false)
    })?;
    r.unary("smoothed cross-entropy literal", &[("logits", &[4, 5])], move |g, v| {
        lsce_loss(g, v[0], &targets, 0.3, true)
    })?;
    Ok(())
}

fn layers(r: &mut Runner) -> Result<()> {
    let (store, ids) = r.store(&[("q", &[3, 4]), ("k", &[5, 4]), ("v", &[5, 2])])?;
    let mask = AttentionMask::new(3, 5, (0..15).map(|i| i % 4 == 1).collect())?;
    r.check("scaled dot attention", &store, |g, s| {
        let [q, k, v] = [0, 1, 2].map(|i| g.param(s, ids[i]));
        let (out, _) = scaled_dot_attention(g, q, k, v, Some(&mask))?;
        readout(g, out, 1)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(r.opts.seed ^ 0x1a7e);
    let mut store = ParamStore::new();
    let mha = MultiHeadParams::new(&mut store, "mha", 4, 2, &mut rng)?;
    let xq = store.add("xq", uniform(&[3, 4], &mut rng))?;
    let xkv = store.add("xkv", uniform(&[4, 4], &mut rng))?;
    r.check("multi-head attention", &store, |g, s| {
        let q = g.param(s, xq);
        let kv = g.param(s, xkv);
        let y = mha.forward(g, s, q, kv, None)?;
        readout(g, y, 2)
    })?;

    let dims = TransformerDims {
        d_model: 4,
        heads: 2,
        ffn_dim: 6,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let enc = EncoderLayerParams::new(&mut store, "enc", dims, &mut rng)?;
    let dec = DecoderLayerParams::new(&mut store, "dec", dims, &mut rng)?;
    let src = store.add("src", uniform(&[3, 4], &mut rng))?;
    let tgt = store.add("tgt", uniform(&[2, 4], &mut rng))?;
    r.check("encoder and decoder layers", &store, |g, s| {
        let x = g.param(s, src);
        let m = enc.forward(g, s, x, None)?;
        let t = g.param(s, tgt);
        let y = dec.forward(g, s, t, m, None)?;
        readout(g, y, 3)
    })?;

    let mut store = ParamStore::new();
    let cell = LstmCellParams::new(&mut store, "lstm", 3, 4, &mut rng)?;
    let seq = store.add("seq", uniform(&[5, 3], &mut rng))?;
    r.check("lstm", &store, |g, s| {
        let x = g.param(s, seq);
        let y = lstm_forward(&cell, g, s, x)?;
        readout(g, y, 4)
    })?;

    for kind in [FusionKind::Summation, FusionKind::Linear, FusionKind::Lstm] {
        let mut store = ParamStore::new();
        let strategy = FusionStrategy::new(kind, &mut store, "fusion", 4, &mut rng)?;
        let psi = store.add("psi", uniform(&[3, 4], &mut rng))?;
        let h = store.add("h", uniform(&[3, 4], &mut rng))?;
        let name = match kind {
            FusionKind::Summation => "fusion summation",
            FusionKind::Linear => "fusion linear",
            FusionKind::Lstm => "fusion lstm",
        };
        r.check(name, &store, |g, s| {
            let a = g.param(s, psi);
            let b = g.param(s, h);
            let y = fuse(g, s, a, b, &strategy)?;
            readout(g, y, 5)
        })?;
    }

    let hops = build_hops(&SkeletonTopology::pose33(), 1)?;
    let config = StgcnBlockConfig {
        c_in: 3,
        c_u: 2,
        u_width: 3,
        hops: 2,
        c_g: 2,
        tcn_widths: vec![3, 5],
        c_l: 2,
        dropout_p: 0.5,
    };
    let mut store = ParamStore::new();
    let block = StgcnBlock::new(&mut store, "block", config, &mut rng)?;
    let input = store.add("input", uniform(&[3, 33, 6], &mut rng))?;
    r.check("stgcn block with channel dropout", &store, |g, s| {
        let x = g.param(s, input);
        let mut drop = ChaCha8Rng::seed_from_u64(9);
        let y = block.forward(g, s, &hops, x, Some(&mut drop))?;
        readout(g, y, 6)
    })?;

    let enc_cfg = KeypointEncoderConfig {
        joints: 33,
        stgcn_layers: 2,
        first_block: StgcnBlockConfig {
            dropout_p: 0.0,
            tcn_widths: vec![3],
            ..block.config().clone()
        },
        lstm_layers: 2,
        hidden: 4,
        window: 4,
        stride: 2,
        positional_encoding: true,
    };
    let mut store = ParamStore::new();
    let encoder = KeypointEncoder::new(&mut store, "kp", &enc_cfg, &mut rng)?;
    let pose = uniform(&[8, 33, 3], &mut rng);
    r.check("keypoint encoder", &store, |g, s| {
        let y = encoder.forward(g, s, &hops, &pose, None)?;
        readout(g, y, 8)
    })?;

    let pool = window_pool_matrix(6, 4, 2)?;
    let (store, ids) = r.store(&[("seq", &[6, 3])])?;
    r.check("window pooling", &store, |g, s| {
        let x = g.param(s, ids[0]);
        let p = g.constant(pool.clone());
        let y = g.matmul(p, x)?;
        readout(g, y, 7)
    })?;
    Ok(())
}

/// Configuration of the toy model used by the end-to-end check.
pub fn tiny_config(fusion: FusionKind) -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        decoder_layers: 1,
        heads: 2,
        ffn_dim: 8,
        embed_dim: 4,
        stgcn_layers: 2,
        stgcn_temporal_channels: 2,
        stgcn_temporal_width: 3,
        stgcn_graph_channels: 2,
        stgcn_tcn_widths: vec![3],
        stgcn_tcn_channels: 2,
        fusion,
        feature_dim: 6,
        window: 4,
        stride: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn end_to_end(r: &mut Runner) -> Result<()> {
    let config = tiny_config(FusionKind::Lstm);
    let mut store = ParamStore::new();
    let model = Model::new(&config, 7, &mut store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(r.opts.seed ^ 0xe2e);
    let pose = Tensor::from_fn(&[8, 33, 3], |_| rng.gen_range(0.0..1.0));
    let ids = [1, 5, 4, 6];
    let targets = [Some(5), Some(4), Some(6), Some(2)];
    r.check("end-to-end model", &store, |g, s| {
        let memory = model.encode(g, s, &pose, None, None)?;
        let logits = model.decode_logits(g, s, memory, &ids, None)?;
        lsce_loss(g, logits, &targets, 0.1, false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let cases = gradient_suite(SuiteOptions {
            probes: 40,
            ..SuiteOptions::default()
        })
        .unwrap();
        for c in &cases {
            assert!(c.report.passes(1e-4), "{}: {:?}", c.name, c.report);
        }
    }
}
