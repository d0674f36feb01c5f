use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slt_core::fusion::{fuse, FusionKind, FusionStrategy};
use slt_core::numerics::{Graph, ParamStore, Tensor};
use slt_core::Error;

fn run(strategy: &FusionStrategy, store: &ParamStore, a: &Tensor, b: &Tensor) -> slt_core::Result<Tensor> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let y = fuse(&mut g, store, av, bv, strategy)?;
    Ok(g.value(y).clone())
}

#[test]
fn summation_examples() {
    let store = ParamStore::new();
    let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
    let s = FusionStrategy::Summation;
    assert_eq!(run(&s, &store, &a, &b).unwrap().data(), &[4.0, 6.0]);
    assert_eq!(run(&s, &store, &b, &a).unwrap(), run(&s, &store, &a, &b).unwrap());
    assert_eq!(run(&s, &store, &a, &Tensor::zeros(&[1, 2])).unwrap(), a);
}

#[test]
fn linear_with_stacked_identities_is_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let d = 5;
    let strategy = FusionStrategy::new(FusionKind::Linear, &mut store, "f", d, &mut rng).unwrap();
    let FusionStrategy::Linear(lin) = &strategy else { panic!("expected linear") };
    let stacked = Tensor::concat(&[&Tensor::eye(d), &Tensor::eye(d)], 0).unwrap();
    store.get_mut(lin.w).value = stacked;
    let a = Tensor::from_fn(&[4, d], |_| rng.gen_range(-1.0..1.0));
    let b = Tensor::from_fn(&[4, d], |_| rng.gen_range(-1.0..1.0));
    let linear = run(&strategy, &store, &a, &b).unwrap();
    let sum = run(&FusionStrategy::Summation, &store, &a, &b).unwrap();
    assert_eq!(linear, sum);
}

#[test]
fn every_strategy_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::from_fn(&[6, 8], |_| rng.gen_range(-1.0..1.0));
    let b = Tensor::from_fn(&[6, 8], |_| rng.gen_range(-1.0..1.0));
    for kind in [FusionKind::Summation, FusionKind::Linear, FusionKind::Lstm] {
        let mut store = ParamStore::new();
        let s = FusionStrategy::new(kind, &mut store, "f", 8, &mut rng).unwrap();
        assert_eq!(s.kind(), kind);
        assert_eq!(run(&s, &store, &a, &b).unwrap().shape(), &[6, 8]);
        let err = run(&s, &store, &a, &Tensor::zeros(&[5, 8])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{kind}: {err}");
    }
}

#[test]
fn kinds_parse_from_config_names() {
    for (name, kind) in [
        ("summation", FusionKind::Summation),
        ("linear", FusionKind::Linear),
        ("lstm", FusionKind::Lstm),
    ] {
        assert_eq!(name.parse::<FusionKind>().unwrap(), kind);
        assert_eq!(kind.to_string(), name);
    }
    assert!("attention".parse::<FusionKind>().is_err());
}
