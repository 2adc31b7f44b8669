use panoqa_sapnet::graph::{iwt_tensor, Graph};
use panoqa_sapnet::loss::LossWeights;
use panoqa_sapnet::model::{error_map, RsabSpec};
use panoqa_sapnet::params::ParamStore;
use panoqa_sapnet::{Ablation, ModelConfig, SapNet, Shape, Tensor, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect())
}

fn patches(n: usize, p: usize, seed: u64) -> Tensor {
    uniform(Shape::new(n, 3, p, p), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn desk(patch: usize) -> ModelConfig {
    ModelConfig {
        patch_size: patch,
        ..ModelConfig::desk()
    }
}

#[test]
fn shapes_follow_stride_arithmetic_and_scale_with_patch_size() {
    for p in [64, 128] {
        let net = SapNet::new(desk(p), Ablation::None, 1).unwrap();
        let out = net.forward(&patches(2, p, 0)).unwrap();
        assert_eq!(out.score.shape, Shape::new(2, 1, 1, 1));
        assert_eq!(out.enhanced.shape, Shape::new(2, 3, p, p));
        assert_eq!(out.error.shape, Shape::new(2, 3, p, p));
        assert_eq!(out.subbands.shape, Shape::new(2, 12, p / 2, p / 2));
        assert_eq!(out.sapq.shape, Shape::new(2, 1, p / 8, p / 8));
        assert_eq!(out.concat.shape, Shape::new(2, 4, p / 8, p / 8));
        assert!(iwt_tensor(&out.subbands).max_abs_diff(&out.enhanced) < 1e-5);
    }
}

#[test]
fn identity_at_init_with_zero_head() {
    let cfg = ModelConfig {
        head_init_std: 0.0,
        ..desk(64)
    };
    let net = SapNet::new(cfg, Ablation::None, 3).unwrap();
    let x = patches(2, 64, 1);
    let out = net.forward(&x).unwrap();
    assert!(out.enhanced.max_abs_diff(&x) < 1e-5);
    assert!(out.error.data.iter().all(|e| e.abs() < 1e-5));
}

#[test]
fn sixteen_rsabs_in_resnet34_stages() {
    let blocks = ModelConfig::default().rsab_blocks();
    assert_eq!(blocks.len(), 16);
    let per_stage: Vec<usize> = (1..=4)
        .map(|s| blocks.iter().filter(|b| b.name.starts_with(&format!("pqe.stage{s}."))).count())
        .collect();
    assert_eq!(per_stage, vec![3, 4, 6, 3]);
    let strides: Vec<usize> = blocks.iter().filter(|b| b.stride == 2).map(|b| b.out_channels).collect();
    assert_eq!(strides, vec![128, 256, 512]);
}

#[test]
fn finite_outputs_and_open_unit_sapq_over_100_random_patches() {
    for round in 0..10u64 {
        let net = SapNet::new(desk(64), Ablation::None, 100 + round).unwrap();
        let out = net.forward(&patches(10, 64, round)).unwrap();
        assert!(out.all_finite());
        assert!(out.sapq.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let net = SapNet::new(desk(64), Ablation::None, 5).unwrap();
    let x = patches(2, 64, 5);
    let a = net.forward(&x).unwrap();
    let b = SapNet::new(desk(64), Ablation::None, 5).unwrap().forward(&x).unwrap();
    assert_eq!(a.score.data, b.score.data);
    assert_eq!(a.sapq.data, b.sapq.data);
    assert_eq!(a.enhanced.data, b.enhanced.data);
}

#[test]
fn shape_mismatches_are_argument_errors() {
    let net = SapNet::new(desk(64), Ablation::None, 0).unwrap();
    let err = net.forward(&patches(1, 32, 0)).unwrap_err();
    assert!(err.is_user_error());
    let a = Tensor::zeros(Shape::new(1, 3, 4, 4));
    assert!(error_map(&a, &Tensor::zeros(Shape::new(1, 3, 4, 2))).is_err());
    let bad = ModelConfig {
        patch_size: 48,
        ..ModelConfig::desk()
    };
    assert!(SapNet::new(bad, Ablation::None, 0).is_err());
}

#[test]
fn error_map_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let i = uniform(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut rng);
    assert!(error_map(&i, &i).unwrap().data.iter().all(|&v| v == 0.0));
    let shifted = Tensor::new(i.shape, i.data.iter().map(|v| v + 0.1).collect());
    assert!(error_map(&shifted, &i).unwrap().data.iter().all(|v| (v - 0.1).abs() < 1e-12));
}

fn first_block(net: &SapNet) -> RsabSpec {
    net.rsab_blocks().into_iter().nth(1).unwrap()
}

#[test]
fn zero_attention_conv_gives_half_mask() {
    let mut net = SapNet::new(desk(64), Ablation::None, 2).unwrap();
    let name = format!("{}.attn", first_block(&net).name);
    for suffix in ["weight", "bias"] {
        let t = net.params.get_mut(&format!("{name}.{suffix}")).unwrap();
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(false);
    let f = g.input(uniform(Shape::new(2, 8, 16, 16), -3.0, 3.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let m = net.spatial_attention(&mut g, &name, f).unwrap();
    assert_eq!(g.shape(m), Shape::new(2, 1, 16, 16));
    assert!(g.value(m).data.iter().all(|&v| v == 0.5));
}

#[test]
fn attention_mask_ignores_channel_order() {
    let net = SapNet::new(desk(64), Ablation::None, 4).unwrap();
    let name = format!("{}.attn", first_block(&net).name);
    let x = uniform(Shape::new(1, 8, 12, 12), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let mut perm: Vec<usize> = (0..8).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let hw = 144;
    let mut permuted = Tensor::zeros(x.shape);
    for (dst, &src) in perm.iter().enumerate() {
        permuted.data[dst * hw..(dst + 1) * hw].copy_from_slice(&x.data[src * hw..(src + 1) * hw]);
    }
    let mask = |t: Tensor| {
        let mut g = Graph::new(false);
        let v = g.input(t);
        let m = net.spatial_attention(&mut g, &name, v).unwrap();
        g.value(m).clone()
    };
    let a = mask(x);
    assert!(a.data.iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(a.max_abs_diff(&mask(permuted)) < 1e-6);
}

#[test]
fn rsab_with_zeroed_branch_is_identity() {
    let mut net = SapNet::new(desk(64), Ablation::None, 6).unwrap();
    let block = first_block(&net);
    assert!(!block.has_projection());
    for suffix in ["gamma", "beta"] {
        let t = net.params.get_mut(&format!("{}.conv2.bn.{suffix}", block.name)).unwrap();
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    for training in [false, true] {
        let mut g = Graph::new(training);
        let x = uniform(Shape::new(2, 8, 16, 16), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(7));
        let xv = g.input(x.clone());
        let y = net.rsab_forward(&mut g, &block, xv).unwrap();
        assert_eq!(g.value(y).shape, x.shape);
        assert!(g.value(y).max_abs_diff(&x) == 0.0);
    }
}

#[test]
fn attention_conv_receives_gradient() {
    let net = SapNet::new(desk(64), Ablation::None, 8).unwrap();
    let block = first_block(&net);
    let mut g = Graph::new(true);
    let x = uniform(Shape::new(2, 8, 16, 16), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
    let xv = g.input(x.clone());
    let y = net.rsab_forward(&mut g, &block, xv).unwrap();
    let target = Tensor::zeros(x.shape);
    let l = g.charbonnier(y, &target, [1.0; 4], 1e-3);
    g.backward(l);
    let grads = g.param_grads();
    let gw = &grads[&format!("{}.attn.weight", block.name)];
    assert!(gw.iter().all(|v| v.is_finite()));
    assert!(gw.iter().any(|&v| v != 0.0));
}

#[test]
fn stems_are_not_weight_tied() {
    let net = SapNet::new(desk(64), Ablation::None, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let i = uniform(Shape::new(2, 3, 64, 64), 0.0, 1.0, &mut rng);
    let e = uniform(Shape::new(2, 3, 64, 64), -0.2, 0.2, &mut rng);
    let sapq = |a: &Tensor, b: &Tensor| {
        let mut g = Graph::new(false);
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let p = net.pqe_forward(&mut g, av, bv).unwrap();
        g.value(p).clone()
    };
    let fwd = sapq(&i, &e);
    assert_eq!(fwd.shape, Shape::new(2, 1, 8, 8));
    assert!(fwd.max_abs_diff(&sapq(&e, &i)) > 0.0);
}

#[test]
fn zero_final_fc_outputs_its_bias() {
    let mut net = SapNet::new(desk(64), Ablation::None, 11).unwrap();
    net.params.get_mut("qr.fc2.weight").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    net.params.get_mut("qr.fc2.bias").unwrap().data[0] = 37.25;
    let s = net.predict(&patches(3, 64, 11)).unwrap();
    assert_eq!(s, vec![37.25; 3]);
}

#[test]
fn max_pool_branch_matters() {
    let net = SapNet::new(desk(64), Ablation::None, 12).unwrap();
    let x = patches(2, 64, 12);
    let before = net.predict(&x).unwrap();
    let mut cut = net.clone();
    let q1 = cut.config.qr.conv_channels[1];
    let w = cut.params.get_mut("qr.fc1.weight").unwrap();
    let fin = w.shape.c;
    assert_eq!(fin, 2 * q1);
    for row in 0..w.shape.n {
        for col in 0..q1 {
            w.data[row * fin + col] = 0.0;
        }
    }
    let after = cut.predict(&x).unwrap();
    assert!(before.iter().zip(&after).any(|(a, b)| a != b));
}

#[test]
fn ablation_variants_change_structure() {
    let full = SapNet::new(desk(64), Ablation::None, 0).unwrap();
    let no_rsab = SapNet::new(desk(64), Ablation::NoRsab, 0).unwrap();
    let no_concat = SapNet::new(desk(64), Ablation::NoConcat, 0).unwrap();
    assert!(full.params.names().any(|n| n.ends_with(".attn.weight")));
    assert!(!no_rsab.params.names().any(|n| n.ends_with(".attn.weight")));
    let x = patches(1, 64, 0);
    assert_eq!(no_concat.forward(&x).unwrap().concat.shape.c, 3);
    assert!(no_rsab.forward(&x).unwrap().all_finite());
}

#[test]
fn every_parameter_gets_a_finite_nonzero_gradient() {
    let net = SapNet::new(desk(64), Ablation::None, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = patches(2, 64, 13);
    let f = uniform(Shape::new(2, 12, 32, 32), -1.0, 1.0, &mut rng);
    let w = LossWeights {
        lambda1: 10.0,
        beta: [1.0, 2.0, 2.0, 4.0],
        epsilon: 1e-3,
    };
    let (loss, grads, _) = Trainer::loss_and_grads(&net, &w, &x, &f, &[30.0, 60.0]).unwrap();
    assert!(loss.total.is_finite());
    let names: Vec<&str> = net.params.names().collect();
    assert_eq!(grads.len(), names.len());
    for n in names {
        let g = &grads[n];
        assert!(g.iter().all(|v| v.is_finite()), "{n}");
        assert!(g.iter().any(|&v| v != 0.0), "dead gradient for {n}");
    }
}

/// Central differences of the total loss on 20 random scalar parameters.
#[test]
fn total_loss_gradients_match_finite_differences() {
    let cfg = desk(64);
    assert_eq!(cfg.wbre.base_channels, 8);
    let net = SapNet::new(cfg, Ablation::None, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = patches(2, 64, 21);
    let f = uniform(Shape::new(2, 12, 32, 32), -1.0, 1.0, &mut rng);
    let s = [0.4, -0.3];
    let w = LossWeights {
        lambda1: 10.0,
        beta: [1.0, 2.0, 2.0, 4.0],
        epsilon: 1e-3,
    };
    let (_, grads, _) = Trainer::loss_and_grads(&net, &w, &x, &f, &s).unwrap();
    let loss_at = |params: ParamStore| {
        let probe = SapNet::from_params(net.config.clone(), net.ablation, params).unwrap();
        Trainer::loss_and_grads(&probe, &w, &x, &f, &s).unwrap().0.total
    };
    let names: Vec<String> = net.params.names().map(String::from).collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let name = &names[rng.random_range(0..names.len())];
        let idx = rng.random_range(0..net.params.get(name).unwrap().numel());
        let mut plus = net.params.clone();
        plus.get_mut(name).unwrap().data[idx] += h;
        let mut minus = net.params.clone();
        minus.get_mut(name).unwrap().data[idx] -= h;
        let numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        let analytic = grads[name][idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        assert!(rel <= 1e-3, "{name}[{idx}]: analytic {analytic}, numeric {numeric}");
    }
    println!("worst relative gradient error over 20 parameters: {worst:.3e}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = SapNet::new(desk(64), Ablation::NoConcat, 14).unwrap();
    let p = dir.path().join("x.ckpt");
    net.params.save(&p).unwrap();
    let loaded = ParamStore::load(&p).unwrap();
    assert_eq!(loaded, net.params);
    assert!(SapNet::from_params(desk(64), Ablation::NoConcat, loaded.clone()).is_ok());
    assert!(SapNet::from_params(desk(64), Ablation::None, loaded).is_err());
    std::fs::write(&p, b"garbage").unwrap();
    assert!(ParamStore::load(&p).is_err());
}

