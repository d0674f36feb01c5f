use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::stgcn::StgcnBlockConfig;
use crate::transformer::TransformerDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Cosine,
    Constant,
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Scheduler::Cosine),
            "constant" => Ok(Scheduler::Constant),
            other => Err(Error::invalid(format!("unknown scheduler {other:?}"))),
        }
    }
}

impl Scheduler {
    fn as_str(self) -> &'static str {
        match self {
            Scheduler::Cosine => "cosine",
            Scheduler::Constant => "constant",
        }
    }
}

/// Every tunable of the model and the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; `0` means run all epochs.
    pub max_steps: u64,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub lr: f64,
    pub ffn_dim: usize,
    pub embed_dim: usize,
    pub scheduler: Scheduler,
    /// Linear ramp from `lr/warmup_steps` to `lr` before the schedule starts.
    pub warmup_steps: u64,
    pub stgcn_layers: usize,
    pub stgcn_temporal_channels: usize,
    pub stgcn_temporal_width: usize,
    pub stgcn_hops: usize,
    pub stgcn_graph_channels: usize,
    pub stgcn_tcn_widths: Vec<usize>,
    pub stgcn_tcn_channels: usize,
    pub lstm_layers: usize,
    pub fusion: FusionKind,
    pub label_smoothing: f64,
    /// Use the printed smoothing weights (target `α`, others `(1−α)/(V−1)`).
    pub literal_lsce: bool,
    pub beam_size: usize,
    pub length_norm: bool,
    pub max_len: usize,
    pub validate_every: usize,
    pub seed: u64,
    pub dropout: f64,
    pub window: usize,
    pub stride: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub keypoint_pe: bool,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            batch_size: 32,
            epochs: 250,
            max_steps: 0,
            encoder_layers: 6,
            decoder_layers: 3,
            heads: 4,
            lr: 1e-3,
            ffn_dim: 1024,
            embed_dim: 256,
            scheduler: Scheduler::Cosine,
            warmup_steps: 0,
            stgcn_layers: 3,
            stgcn_temporal_channels: 64,
            stgcn_temporal_width: 9,
            stgcn_hops: 2,
            stgcn_graph_channels: 64,
            stgcn_tcn_widths: vec![9, 15, 19],
            stgcn_tcn_channels: 16,
            lstm_layers: 1,
            fusion: FusionKind::Summation,
            label_smoothing: 0.1,
            literal_lsce: false,
            beam_size: 5,
            length_norm: true,
            max_len: 64,
            validate_every: 2,
            seed: 0,
            dropout: 0.1,
            window: 16,
            stride: 8,
            feature_dim: 1024,
            vocab_size: 2000,
            keypoint_pe: false,
            max_grad_norm: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid value {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, found {v:?}")),
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

impl ModelConfig {
    pub const KEYS: [&'static str; 38] = [
        "batch_size",
        "epochs",
        "max_steps",
        "encoder_layers",
        "decoder_layers",
        "heads",
        "lr",
        "ffn_dim",
        "embed_dim",
        "scheduler",
        "warmup_steps",
        "stgcn_layers",
        "stgcn_temporal_channels",
        "stgcn_temporal_width",
        "stgcn_hops",
        "stgcn_graph_channels",
        "stgcn_tcn_widths",
        "stgcn_tcn_channels",
        "lstm_layers",
        "fusion",
        "label_smoothing",
        "literal_lsce",
        "beam_size",
        "length_norm",
        "max_len",
        "validate_every",
        "seed",
        "dropout",
        "window",
        "stride",
        "feature_dim",
        "vocab_size",
        "keypoint_pe",
        "max_grad_norm",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "layers",
    ];

    /// Sets one field from its textual value. `layers = E-D` is shorthand
    /// for the encoder and decoder depths.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim().trim_matches('"');
        match key {
            "batch_size" => self.batch_size = parse_num(v)?,
            "epochs" => self.epochs = parse_num(v)?,
            "max_steps" => self.max_steps = parse_num(v)?,
            "encoder_layers" => self.encoder_layers = parse_num(v)?,
            "decoder_layers" => self.decoder_layers = parse_num(v)?,
            "layers" => {
                let (e, d) = v
                    .split_once('-')
                    .ok_or_else(|| format!("expected E-D, found {v:?}"))?;
                self.encoder_layers = parse_num(e.trim())?;
                self.decoder_layers = parse_num(d.trim())?;
            }
            "heads" => self.heads = parse_num(v)?,
            "lr" => self.lr = parse_num(v)?,
            "ffn_dim" => self.ffn_dim = parse_num(v)?,
            "embed_dim" => self.embed_dim = parse_num(v)?,
            "scheduler" => self.scheduler = v.parse().map_err(|e: Error| e.to_string())?,
            "warmup_steps" => self.warmup_steps = parse_num(v)?,
            "stgcn_layers" => self.stgcn_layers = parse_num(v)?,
            "stgcn_temporal_channels" => self.stgcn_temporal_channels = parse_num(v)?,
            "stgcn_temporal_width" => self.stgcn_temporal_width = parse_num(v)?,
            "stgcn_hops" => self.stgcn_hops = parse_num(v)?,
            "stgcn_graph_channels" => self.stgcn_graph_channels = parse_num(v)?,
            "stgcn_tcn_widths" => self.stgcn_tcn_widths = parse_list(v)?,
            "stgcn_tcn_channels" => self.stgcn_tcn_channels = parse_num(v)?,
            "lstm_layers" => self.lstm_layers = parse_num(v)?,
            "fusion" => self.fusion = v.parse().map_err(|e: Error| e.to_string())?,
            "label_smoothing" => self.label_smoothing = parse_num(v)?,
            "literal_lsce" => self.literal_lsce = parse_bool(v)?,
            "beam_size" => self.beam_size = parse_num(v)?,
            "length_norm" => self.length_norm = parse_bool(v)?,
            "max_len" => self.max_len = parse_num(v)?,
            "validate_every" => self.validate_every = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "dropout" => self.dropout = parse_num(v)?,
            "window" => self.window = parse_num(v)?,
            "stride" => self.stride = parse_num(v)?,
            "feature_dim" => self.feature_dim = parse_num(v)?,
            "vocab_size" => self.vocab_size = parse_num(v)?,
            "keypoint_pe" => self.keypoint_pe = parse_bool(v)?,
            "max_grad_norm" => self.max_grad_norm = parse_num(v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(v)?,
            "adam_eps" => self.adam_eps = parse_num(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let k = k.trim();
            if !Self::KEYS.contains(&k) {
                return Err(Error::UnknownConfigKey {
                    line: n + 1,
                    key: k.to_string(),
                });
            }
            cfg.set(k, v).map_err(|m| err(format!("{k}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical text form: every key, fixed order, shortest round-trip numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("heads", self.heads.to_string());
        kv("lr", self.lr.to_string());
        kv("ffn_dim", self.ffn_dim.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("scheduler", self.scheduler.as_str().to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("stgcn_layers", self.stgcn_layers.to_string());
        kv("stgcn_temporal_channels", self.stgcn_temporal_channels.to_string());
        kv("stgcn_temporal_width", self.stgcn_temporal_width.to_string());
        kv("stgcn_hops", self.stgcn_hops.to_string());
        kv("stgcn_graph_channels", self.stgcn_graph_channels.to_string());
        let widths: Vec<String> = self.stgcn_tcn_widths.iter().map(|w| w.to_string()).collect();
        kv("stgcn_tcn_widths", widths.join(","));
        kv("stgcn_tcn_channels", self.stgcn_tcn_channels.to_string());
        kv("lstm_layers", self.lstm_layers.to_string());
        kv("fusion", self.fusion.to_string());
        kv("label_smoothing", self.label_smoothing.to_string());
        kv("literal_lsce", self.literal_lsce.to_string());
        kv("beam_size", self.beam_size.to_string());
        kv("length_norm", self.length_norm.to_string());
        kv("max_len", self.max_len.to_string());
        kv("validate_every", self.validate_every.to_string());
        kv("seed", self.seed.to_string());
        kv("dropout", self.dropout.to_string());
        kv("window", self.window.to_string());
        kv("stride", self.stride.to_string());
        kv("feature_dim", self.feature_dim.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("keypoint_pe", self.keypoint_pe.to_string());
        kv("max_grad_norm", self.max_grad_norm.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return bad(format!("embed_dim {} must be even and positive", self.embed_dim));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.ffn_dim == 0 || self.feature_dim == 0 {
            return bad("ffn_dim and feature_dim must be positive".into());
        }
        if self.stgcn_layers == 0 || self.lstm_layers == 0 {
            return bad("stgcn_layers and lstm_layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.beam_size == 0 || self.max_len == 0 {
            return bad("beam_size and max_len must be at least 1".into());
        }
        if self.window == 0 || self.stride == 0 {
            return bad("window and stride must be positive".into());
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        self.stgcn_block(3).validate()
    }

    /// Configuration of the first STGCN block for `c_in` input channels.
    pub fn stgcn_block(&self, c_in: usize) -> StgcnBlockConfig {
        StgcnBlockConfig {
            c_in,
            c_u: self.stgcn_temporal_channels,
            u_width: self.stgcn_temporal_width,
            hops: self.stgcn_hops,
            c_g: self.stgcn_graph_channels,
            tcn_widths: self.stgcn_tcn_widths.clone(),
            c_l: self.stgcn_tcn_channels,
            dropout_p: self.dropout,
        }
    }

    pub fn transformer_dims(&self) -> TransformerDims {
        TransformerDims {
            d_model: self.embed_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_roundtrip() {
        let mut c = ModelConfig::default();
        c.fusion = FusionKind::Lstm;
        c.lr = 3.5e-4;
        c.stgcn_tcn_widths = vec![3, 5];
        let text = c.to_text();
        let back = ModelConfig::parse(&text, Path::new("c")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_key_is_error() {
        let err = ModelConfig::parse("heads = 4\nhedas = 2\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::UnknownConfigKey { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn layers_shorthand() {
        let c = ModelConfig::parse("layers = 2-2 # small\n", Path::new("c")).unwrap();
        assert_eq!((c.encoder_layers, c.decoder_layers), (2, 2));
    }

    #[test]
    fn heads_must_divide() {
        assert!(ModelConfig::parse("heads = 3", Path::new("c")).is_err());
    }
}
