use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slt_core::numerics::{Graph, ParamStore, Tensor};
use slt_core::transformer::{
    decoder_forward, encoder_forward, positional_encoding, scaled_dot_attention, video_embed, AttentionMask,
    ClipFeatureProvider, DecoderLayerParams, EncoderLayerParams, Linear, MultiHeadParams, TransformerDims,
};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&AttentionMask>) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (o, w) = scaled_dot_attention(&mut g, qv, kv, vv, mask).unwrap();
    (g.value(o).clone(), g.value(w).clone())
}

#[test]
fn positional_encoding_examples() {
    let p = positional_encoding(0, 6).unwrap();
    assert_eq!(p.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let p = positional_encoding(1, 6).unwrap();
    assert!((p.data()[0] - 0.841471).abs() < 1e-6);
    assert!(positional_encoding(3, 5).is_err());
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = Tensor::new(&[1, 3], vec![4.0, -1.0, 2.5]).unwrap();
    let (o, _) = attend(&random(&[2, 2], &mut rng), &random(&[1, 2], &mut rng), &v, None);
    assert_eq!(o.row(0), v.row(0));
    assert_eq!(o.row(1), v.row(0));

    let k = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let v = Tensor::new(&[2, 2], vec![2.0, 4.0, 6.0, 0.0]).unwrap();
    let q = Tensor::new(&[1, 2], vec![0.3, 0.9]).unwrap();
    let (o, _) = attend(&q, &k, &v, None);
    assert_eq!(o.data(), &[4.0, 2.0]);
}

#[test]
fn two_queries_three_keys() {
    let q = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.5, -1.0]).unwrap();
    let k = Tensor::new(&[3, 2], vec![1.0, 1.0, 0.0, 2.0, -1.0, 0.5]).unwrap();
    let v = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let scale = 1.0 / 2f64.sqrt();
    let mut want_w = [[0.0; 3]; 2];
    let mut want_o = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..3)
            .map(|j| (q.at(&[i, 0]) * k.at(&[j, 0]) + q.at(&[i, 1]) * k.at(&[j, 1])) * scale)
            .collect();
        let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..3 {
            want_w[i][j] = e[j] / z;
            for c in 0..2 {
                want_o[i][c] += want_w[i][j] * v.at(&[j, c]);
            }
        }
    }
    let (o, w) = attend(&q, &k, &v, None);
    assert!(close(w.data(), &want_w.concat(), 1e-15), "{w:?}");
    assert!(close(o.data(), &want_o.concat(), 1e-14), "{o:?}");
}

#[test]
fn attention_shape_errors() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::zeros(&[2, 3]));
    let k = g.constant(Tensor::zeros(&[4, 2]));
    let v = g.constant(Tensor::zeros(&[4, 2]));
    assert!(scaled_dot_attention(&mut g, q, k, v, None).is_err());
    let k = g.constant(Tensor::zeros(&[4, 3]));
    let v = g.constant(Tensor::zeros(&[5, 3]));
    assert!(scaled_dot_attention(&mut g, q, k, v, None).is_err());
}

#[test]
fn single_head_with_identity_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let mha = MultiHeadParams::new(&mut store, "a", 4, 1, &mut rng).unwrap();
    for id in [mha.wq, mha.wk, mha.wv, mha.wo] {
        store.get_mut(id).value = Tensor::eye(4);
    }
    let x = random(&[3, 4], &mut rng);
    let m = random(&[5, 4], &mut rng);
    let mut g = Graph::new();
    let (xv, mv) = (g.constant(x.clone()), g.constant(m.clone()));
    let out = mha.forward(&mut g, &store, xv, mv, None).unwrap();
    let (want, _) = attend(&x, &m, &m, None);
    assert!(close(g.value(out).data(), want.data(), 1e-15));
}

#[test]
fn shipped_width_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let dims = TransformerDims {
        d_model: 256,
        heads: 4,
        ffn_dim: 1024,
        dropout: 0.1,
    };
    let enc = EncoderLayerParams::new(&mut store, "e", dims, &mut rng).unwrap();
    let dec = DecoderLayerParams::new(&mut store, "d", dims, &mut rng).unwrap();
    assert_eq!(enc.self_attn.d_k(), 64);
    let mut g = Graph::new();
    let x = g.constant(random(&[7, 256], &mut rng));
    let t = g.constant(random(&[3, 256], &mut rng));
    let m = encoder_forward(std::slice::from_ref(&enc), &mut g, &store, x, None).unwrap();
    assert_eq!(g.shape(m), &[7, 256]);
    let y = decoder_forward(std::slice::from_ref(&dec), &mut g, &store, t, m, None).unwrap();
    assert_eq!(g.shape(y), &[3, 256]);
    assert!(MultiHeadParams::new(&mut store, "bad", 10, 4, &mut rng).is_err());
}

#[test]
fn empty_encoder_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = ParamStore::new();
    let x = random(&[4, 6], &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = encoder_forward(&[], &mut g, &store, xv, None).unwrap();
    assert_eq!(*g.value(y), x);
}

fn tiny_dims() -> TransformerDims {
    TransformerDims {
        d_model: 8,
        heads: 2,
        ffn_dim: 12,
        dropout: 0.0,
    }
}

#[test]
fn causal_self_attention_position_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let mha = MultiHeadParams::new(&mut store, "a", 8, 2, &mut rng).unwrap();
    let mask = AttentionMask::causal(5);
    let x = random(&[5, 8], &mut rng);
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mha.forward(&mut g, &store, xv, xv, Some(&mask)).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    let mut moved = x.clone();
    for v in &mut moved.data_mut()[8..] {
        *v += 3.0;
    }
    assert_eq!(run(&moved).row(0), base.row(0));
}

#[test]
fn decoder_causality_and_memory_dependence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let layers: Vec<_> = (0..2)
        .map(|i| DecoderLayerParams::new(&mut store, &format!("d{i}"), tiny_dims(), &mut rng).unwrap())
        .collect();
    let target = random(&[5, 8], &mut rng);
    let memory = random(&[4, 8], &mut rng);
    let run = |t: &Tensor, m: &Tensor| {
        let mut g = Graph::new();
        let (tv, mv) = (g.constant(t.clone()), g.constant(m.clone()));
        let y = decoder_forward(&layers, &mut g, &store, tv, mv, None).unwrap();
        g.value(y).clone()
    };
    let base = run(&target, &memory);
    for i in 0..4 {
        let mut t = target.clone();
        for v in &mut t.data_mut()[(i + 1) * 8..] {
            *v = rng.gen_range(-5.0..5.0);
        }
        let out = run(&t, &memory);
        for r in 0..=i {
            assert_eq!(out.row(r), base.row(r));
        }
    }

    let first = target.slice(0, 0, 1).unwrap();
    let mut other = memory.clone();
    other.data_mut()[3] += 1.0;
    assert_ne!(run(&first, &memory), run(&first, &other));
}

#[test]
fn encoder_is_permutation_equivariant_without_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let layers: Vec<_> = (0..2)
        .map(|i| EncoderLayerParams::new(&mut store, &format!("e{i}"), tiny_dims(), &mut rng).unwrap())
        .collect();
    let x = random(&[5, 8], &mut rng);
    let perm = [3, 0, 4, 1, 2];
    let permuted = Tensor::from_fn(&[5, 8], |k| x.at(&[perm[k / 8], k % 8]));
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = encoder_forward(&layers, &mut g, &store, xv, None).unwrap();
        g.value(y).clone()
    };
    let a = run(&x);
    let b = run(&permuted);
    for (r, &p) in perm.iter().enumerate() {
        assert!(close(b.row(r), a.row(p), 1e-12), "row {r}");
    }
}

#[test]
fn attention_can_be_asymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mha = MultiHeadParams::new(&mut store, "a", 4, 1, &mut rng).unwrap();
    assert_ne!(store.value(mha.wq), store.value(mha.wk));
    let x = random(&[4, 4], &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let (_, w) = mha.forward_with_weights(&mut g, &store, xv, xv, None).unwrap();
    let w = g.value(w[0]);
    assert_ne!(*w, w.transpose().unwrap());
}

struct Constant(Vec<f64>);

impl ClipFeatureProvider for Constant {
    fn feature_dim(&self) -> usize {
        self.0.len()
    }
    fn clip_features(&self, _clip: usize, _start: usize, _len: usize) -> slt_core::Result<Tensor> {
        Tensor::new(&[2, self.0.len()], [self.0.clone(), self.0.clone()].concat())
    }
}

#[test]
fn video_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let proj = Linear::new(&mut store, "p", 3, 6, true, &mut rng).unwrap();
    let provider = Constant(vec![0.5, -1.0, 2.0]);
    let mut g = Graph::new();
    let e = video_embed(&mut g, &store, &proj, &provider, 60, 16, 8).unwrap();
    let e = g.value(e).clone();
    assert_eq!(e.shape(), &[6, 6]);
    for i in 0..6 {
        for j in i + 1..6 {
            assert_ne!(e.row(i), e.row(j));
        }
    }
    let mut plain = Graph::new();
    let x = plain.constant(Tensor::new(&[1, 3], provider.0.clone()).unwrap());
    let base = proj.forward(&mut plain, &store, x).unwrap();
    for i in 0..6 {
        let pe = positional_encoding(i, 6).unwrap();
        let want: Vec<f64> = plain.value(base).data().iter().zip(pe.data()).map(|(a, b)| a + b).collect();
        assert!(close(e.row(i), &want, 1e-15));
    }

    store.get_mut(proj.w).value = Tensor::zeros(&[3, 6]);
    let mut g = Graph::new();
    let e = video_embed(&mut g, &store, &proj, &provider, 60, 16, 8).unwrap();
    for i in 0..6 {
        assert_eq!(g.value(e).row(i), positional_encoding(i, 6).unwrap().data());
    }
    assert!(video_embed(&mut g, &store, &proj, &provider, 15, 16, 8).is_err());
}

proptest! {
    #[test]
    fn positional_encoding_bounded(pos in 0usize..100_000, half in 1usize..64) {
        let p = positional_encoding(pos, 2 * half).unwrap();
        prop_assert!(p.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, causal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::from_fn(&[n, 3], |_| rng.gen_range(-20.0..20.0));
        let k = Tensor::from_fn(&[m, 3], |_| rng.gen_range(-20.0..20.0));
        let v = random(&[m, 2], &mut rng);
        let mask = if causal && n == m { Some(AttentionMask::causal(n)) } else { None };
        let (_, w) = attend(&q, &k, &v, mask.as_ref());
        for r in 0..n {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            if let Some(mask) = &mask {
                for c in 0..m {
                    if mask.is_forbidden(r, c) {
                        prop_assert_eq!(w.at(&[r, c]), 0.0);
                    }
                }
            }
        }
    }
}
