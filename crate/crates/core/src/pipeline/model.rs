use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{synthetic_projection, FileClipFeatures, SyntheticClipFeatures};
use crate::fusion::{fuse, FusionStrategy};
use crate::io::{load_keypoints, ManifestRecord};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::pipeline::config::ModelConfig;
use crate::skelgraph::{build_hops, HopAdjacencySet, SkeletonTopology, POSE_JOINTS};
use crate::stgcn::{KeypointEncoder, KeypointEncoderConfig};
use crate::text::embed_target;
use crate::transformer::{
    decoder_forward, encoder_forward, video_embed, ClipFeatureProvider, DecoderLayerParams,
    EncoderLayerParams, Linear,
};

/// One training or inference example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[T × 33 × 3]`.
    pub keypoints: Tensor,
    /// Optional `[clips × F]` clip descriptors.
    pub features: Option<Tensor>,
    pub text: String,
}

impl Sample {
    pub fn load(record: &ManifestRecord) -> Result<Self> {
        let keypoints = load_keypoints(&record.keypoints)?;
        let features = match &record.features {
            Some(p) => Some(FileClipFeatures::load(p)?.rows().clone()),
            None => None,
        };
        Ok(Sample {
            id: record.id.clone(),
            keypoints,
            features,
            text: record.text.clone(),
        })
    }
}

/// The full translation network. Parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    vocab_size: usize,
    hops: HopAdjacencySet,
    feature_projection: Tensor,
    keypoint: KeypointEncoder,
    video_projection: Linear,
    encoder: Vec<EncoderLayerParams>,
    fusion: FusionStrategy,
    embedding: ParamId,
    decoder: Vec<DecoderLayerParams>,
    output: Linear,
}

impl Model {
    /// Registers all parameters in `store`, initialised from `config.seed`.
    pub fn new(config: &ModelConfig, vocab_size: usize, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        if vocab_size < 4 {
            return Err(Error::invalid("vocabulary must hold at least the four specials"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let topo = SkeletonTopology::pose33();
        let max_hop = config.stgcn_hops.saturating_sub(1).max(1);
        let hops = build_hops(&topo, max_hop)?;
        let keypoint = KeypointEncoder::new(
            store,
            "keypoint",
            &KeypointEncoderConfig {
                joints: POSE_JOINTS,
                stgcn_layers: config.stgcn_layers,
                first_block: config.stgcn_block(3),
                lstm_layers: config.lstm_layers,
                hidden: d,
                window: config.window,
                stride: config.stride,
                positional_encoding: config.keypoint_pe,
            },
            &mut rng,
        )?;
        let video_projection =
            Linear::new(store, "video.projection", config.feature_dim, d, true, &mut rng)?;
        let dims = config.transformer_dims();
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayerParams::new(store, &format!("encoder.{l}"), dims, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionStrategy::new(config.fusion, store, "fusion", d, &mut rng)?;
        let embedding = store.add_glorot("target.embedding", &[vocab_size, d], vocab_size, d, &mut rng)?;
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayerParams::new(store, &format!("decoder.{l}"), dims, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new(store, "output", d, vocab_size, true, &mut rng)?;
        let feature_projection = synthetic_projection(POSE_JOINTS * 3, config.feature_dim, config.seed);
        Ok(Model {
            config: config.clone(),
            vocab_size,
            hops,
            feature_projection,
            keypoint,
            video_projection,
            encoder,
            fusion,
            embedding,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hops(&self) -> &HopAdjacencySet {
        &self.hops
    }

    /// Fused encoder memory `[T' × d]` for one sample.
    pub fn encode<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        keypoints: &Tensor,
        features: Option<&Tensor>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (t_len, _, _) = keypoints.dims3()?;
        let h = self
            .keypoint
            .forward(g, store, &self.hops, keypoints, rng.as_deref_mut())?;
        let synthetic;
        let file;
        let provider: &dyn ClipFeatureProvider = match features {
            Some(rows) => {
                let (_, f) = rows.dims2()?;
                if f != self.config.feature_dim {
                    return Err(Error::shape("clip features", rows.shape(), &[self.config.feature_dim]));
                }
                file = FileClipFeatures::new(rows.clone())?;
                &file
            }
            None => {
                synthetic = SyntheticClipFeatures::new(keypoints, self.feature_projection.clone())?;
                &synthetic
            }
        };
        let e = video_embed(
            g,
            store,
            &self.video_projection,
            provider,
            t_len,
            self.config.window,
            self.config.stride,
        )?;
        let psi = encoder_forward(&self.encoder, g, store, e, rng.as_deref_mut())?;
        fuse(g, store, psi, h, &self.fusion)
    }

    /// Unnormalised next-token scores `[n × V]` for decoder inputs `ids`
    /// (which start with bos).
    pub fn decode_logits<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        memory: Var,
        ids: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let table = g.param(store, self.embedding);
        let x = embed_target(g, table, ids)?;
        let y = decoder_forward(&self.decoder, g, store, x, memory, rng)?;
        self.output.forward(g, store, y)
    }

    /// Log-probabilities `[n × V]` of each next token given `ids`.
    pub fn forward_log_probs<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        sample: &Sample,
        ids: &[usize],
    ) -> Result<Var> {
        let memory = self.encode(g, store, &sample.keypoints, sample.features.as_ref(), None)?;
        let logits = self.decode_logits(g, store, memory, ids, None)?;
        g.log_softmax(logits, 1)
    }
}

/// Evaluation-mode log-probabilities as a plain tensor.
pub fn forward_translate_logits(
    model: &Model,
    store: &ParamStore,
    sample: &Sample,
    ids: &[usize],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let lp = model.forward_log_probs(&mut g, store, sample, ids)?;
    Ok(g.value(lp).clone())
}
