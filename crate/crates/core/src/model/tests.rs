use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::landmark::build_clip_tensor;
use crate::tensor::{finite_diff_grad, layer_norm, max_relative_error};

fn mini_config() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden_dim: 8,
        num_heads: 2,
        num_layers: 2,
        ffn_dim: 16,
        dropout_p: 0.2,
        num_classes: 3,
        max_seq_len: 5,
        ..ModelConfig::default()
    }
}

fn random_clip(rng: &mut impl Rng, data: usize, t_data: usize, f: usize) -> ClipTensor {
    let frames: Vec<Vec<f32>> = (0..data).map(|_| (0..f).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    build_clip_tensor(&frames, t_data, f, None).unwrap()
}

fn layout(seq_len: usize, masks: Vec<Vec<bool>>) -> BatchLayout {
    BatchLayout { seq_len, masks }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig { num_heads: 3, ..ModelConfig::default() };
    assert!(bad.validate().is_err());
    let bad = ModelConfig { dropout_p: 1.0, ..ModelConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::BadProbability(_))));
    let bad = ModelConfig { hidden_dim: 9, num_heads: 3, ..ModelConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::OddDimension(9))));
}

#[test]
fn init_is_deterministic_and_bounded() {
    let config = ModelConfig::default();
    let a = init_params::<f32>(&config, 17).unwrap();
    let b = init_params::<f32>(&config, 17).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init_params::<f32>(&config, 18).unwrap());

    let bound = (6.0f64 / (144.0 + 512.0)).sqrt();
    assert!((bound - 0.09563).abs() < 1e-5);
    assert!(a.embed_weight.values().iter().all(|&v| (v as f64).abs() <= bound + 1e-7));
    assert_eq!(a.embed_weight.shape(), &[144, 512]);
    for layer in &a.layers {
        assert!(layer.norm1_gain.values().iter().all(|&v| v == 1.0));
        assert!(layer.norm2_gain.values().iter().all(|&v| v == 1.0));
        assert!(layer.query_bias.values().iter().all(|&v| v == 0.0));
    }
    assert!(a.final_norm_gain.values().iter().all(|&v| v == 1.0));
    a.validate(&config).unwrap();
}

#[test]
fn ordered_slots_round_trip() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 1).unwrap();
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "embed_weight");
    assert_eq!(names[2], "layers.0.query_weight");
    assert_eq!(names.len(), 2 + 16 * 2 + 4);
    let slots: Vec<Tensor<f64>> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
    let back = ModelTensors::from_ordered(config.num_layers, slots.clone()).unwrap();
    assert_eq!(back, p);
    assert!(ModelTensors::from_ordered(config.num_layers, slots[1..].to_vec()).is_none());
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding::<f64>(17, 512).unwrap();
    for i in 0..256 {
        assert_eq!(pe.row(0)[2 * i], 0.0);
        assert_eq!(pe.row(0)[2 * i + 1], 1.0);
    }
    assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-15);
    assert!((pe.row(1)[0] - 0.84147098).abs() < 1e-8);
    // column 2i at pos: sin(pos / 10000^(2i/d)), checked independently at one spot
    let expect = (5.0f64 / 10000f64.powf(6.0 / 512.0)).sin();
    assert!((pe.row(5)[6] - expect).abs() < 1e-15);
    assert!(pe.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(matches!(positional_encoding::<f64>(4, 7), Err(Error::OddDimension(7))));
}

#[test]
fn attention_single_frame() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 3).unwrap();
    let mut tape = Tape::new();
    let vars = register_constants(&mut tape, &p);
    let x = Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
    let xv = tape.constant(x.clone());
    let attn = multi_head_attention(&mut tape, xv, &layout(1, vec![vec![true]]), &vars.layers[0], 2).unwrap();
    for w in &attn.weights[0] {
        assert_eq!(tape.value(*w).values(), &[1.0]);
    }
    // output = ((x Wv + bv) Wo + bo)
    let layer = &p.layers[0];
    let value = crate::tensor::matmul(&x, &layer.value_weight).unwrap();
    let want = crate::tensor::matmul(&value, &layer.output_weight).unwrap();
    assert!(tape.value(attn.output).max_abs_diff(&want) < 1e-12);
}

#[test]
fn attention_identical_frames_and_mask() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 4).unwrap();
    let mut tape = Tape::new();
    let vars = register_constants(&mut tape, &p);
    let row: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
    let xv = tape.constant(Tensor::from_rows(&[row.clone(), row]).unwrap());
    let attn = multi_head_attention(&mut tape, xv, &layout(2, vec![vec![true, true]]), &vars.layers[0], 2).unwrap();
    for w in &attn.weights[0] {
        assert!(tape.value(*w).values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let xv = tape.constant(x);
    let attn =
        multi_head_attention(&mut tape, xv, &layout(3, vec![vec![true, true, false]]), &vars.layers[0], 2).unwrap();
    for w in &attn.weights[0] {
        let weights = tape.value(*w);
        for r in 0..3 {
            assert_eq!(weights.row(r)[2], 0.0);
            assert!((weights.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn degenerate_encoder_layer_is_double_norm() {
    let config = mini_config();
    let mut p = init_params::<f64>(&config, 6).unwrap();
    let l = &mut p.layers[0];
    for w in [
        &mut l.query_weight,
        &mut l.key_weight,
        &mut l.value_weight,
        &mut l.output_weight,
        &mut l.ffn_in_weight,
        &mut l.ffn_out_weight,
    ] {
        *w = Tensor::zeros(w.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::new(vec![4, 8], (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let mut tape = Tape::new();
    let vars = register_constants(&mut tape, &p);
    let xv = tape.constant(x.clone());
    let mut ctx = DropoutCtx { p: 0.2, mode: Mode::Eval, rng: &mut rng };
    let lay = layout(2, vec![vec![true, true], vec![true, false]]);
    let out = encoder_layer(&mut tape, xv, &lay, &vars.layers[0], &config, &mut ctx).unwrap();
    let ones = Tensor::ones(&[8]);
    let zeros = Tensor::zeros(&[8]);
    let once = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
    let twice = layer_norm(&once, &ones, &zeros, 1e-5).unwrap();
    assert_eq!(tape.value(out).shape(), x.shape());
    assert!(tape.value(out).max_abs_diff(&twice) < 1e-12);
}

#[test]
fn encoder_layer_gradient_matches_finite_differences() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::new(vec![6, 8], (0..48).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let lay = layout(3, vec![vec![true, true, false], vec![true, true, true]]);
    let layer_sum = |layer: &LayerTensors<Tensor<f64>>, grads: bool| {
        let mut tape = Tape::new();
        let vars = layer.map_named("l", &mut |_, t: &Tensor<f64>| tape.param(t.clone()));
        let xv = tape.constant(x.clone());
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = DropoutCtx { p: 0.2, mode: Mode::Train, rng: &mut r };
        let out = encoder_layer(&mut tape, xv, &lay, &vars, &config, &mut ctx).unwrap();
        let w = tape.constant(Tensor::new(vec![6, 8], (0..48).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap());
        let weighted = tape.mul(out, w).unwrap();
        let loss = tape.sum(weighted);
        let value = tape.value(loss).values()[0];
        let g = grads.then(|| {
            let mut g = tape.backward(loss).unwrap();
            let mut all = Vec::new();
            let mut names = Vec::new();
            vars.collect("l", &mut names);
            for (_, v) in names {
                all.push(g.take(*v).unwrap());
            }
            all
        });
        (value, g)
    };
    let layer = p.layers[0].clone();
    let (_, analytic) = layer_sum(&layer, true);
    let analytic = analytic.unwrap();
    let mut names = Vec::new();
    layer.collect("l", &mut names);
    for (slot, (name, tensor)) in names.iter().enumerate() {
        let numeric = finite_diff_grad(
            |t| {
                let mut l = layer.clone();
                let mut slots = Vec::new();
                l.collect_mut(&mut slots);
                *slots[slot] = t.clone();
                layer_sum(&l, false).0
            },
            tensor,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic[slot], &numeric);
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn masked_pooling() {
    let mut tape = Tape::new();
    let v: Vec<f64> = vec![0.5, -1.0, 2.0];
    let x = tape.constant(Tensor::from_rows(&[v.clone(), v.clone(), v.clone()]).unwrap());
    let out = masked_mean_pool(&mut tape, x, &layout(3, vec![vec![true; 3]])).unwrap();
    assert_eq!(tape.value(out).values(), v.as_slice());

    let x = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap());
    let out = masked_mean_pool(&mut tape, x, &layout(2, vec![vec![true, false]])).unwrap();
    assert_eq!(tape.value(out).values(), &[2.0, 0.0]);

    // padding contents never leak into the pooled vector
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let want: Vec<f64> = (0..4).map(|j| (rows[0][j] + rows[1][j]) / 2.0).collect();
    let mut noisy = rows.clone();
    for r in &mut noisy[2..] {
        r.iter_mut().for_each(|v| *v += 100.0);
    }
    let x = tape.constant(Tensor::from_rows(&noisy).unwrap());
    let mask = vec![true, true, false, false, false];
    let out = masked_mean_pool(&mut tape, x, &layout(5, vec![mask])).unwrap();
    for (g, w) in tape.value(out).values().iter().zip(&want) {
        assert!((g - w).abs() < 1e-15);
    }

    let x = tape.constant(Tensor::<f64>::zeros(&[2, 2]));
    assert!(matches!(masked_mean_pool(&mut tape, x, &layout(2, vec![vec![false, false]])), Err(Error::EmptyMask(0))));
}

#[test]
fn autsl_logits_shape_and_determinism() {
    let config = ModelConfig::default();
    let p = init_params::<f32>(&config, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clips: Vec<ClipTensor> = (0..2).map(|i| random_clip(&mut rng, 10 + i * 6, 16, 144)).collect();
    let a = logits(&p, &config, &clips).unwrap();
    assert_eq!(a.shape(), &[2, 226]);
    let b = logits(&p, &config, &clips).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_rejects_bad_batches() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let too_long = random_clip(&mut rng, 5, 5, 6);
    assert!(matches!(logits(&p, &config, &[too_long]), Err(Error::SequenceTooLong { len: 6, max: 5 })));
    let wrong_width = random_clip(&mut rng, 2, 4, 7);
    assert!(matches!(logits(&p, &config, &[wrong_width]), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(logits(&p, &config, &[]), Err(Error::EmptyDataset)));
}

#[test]
fn padding_does_not_change_logits() {
    let config = ModelConfig { max_seq_len: 24, ..mini_config() };
    let p = init_params::<f32>(&config, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [0, 1, 3, 8] {
        let clip = random_clip(&mut rng, n, 8, 6);
        let base = logits(&p, &config, std::slice::from_ref(&clip)).unwrap();
        let padded = logits(&p, &config, &[clip.pad_to(13).unwrap()]).unwrap();
        assert!(base.max_abs_diff(&padded) < 1e-5);
    }
}

#[test]
fn frame_order_matters() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 12).unwrap();
    let frames: Vec<Vec<f32>> = (0..4).map(|i| (0..6).map(|j| (i * 6 + j) as f32 * 0.05).collect()).collect();
    let reversed: Vec<Vec<f32>> = frames.iter().rev().cloned().collect();
    let a = logits(&p, &config, &[build_clip_tensor(&frames, 4, 6, None).unwrap()]).unwrap();
    let b = logits(&p, &config, &[build_clip_tensor(&reversed, 4, 6, None).unwrap()]).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let config = mini_config();
    let p = init_params::<f64>(&config, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let clips = vec![random_clip(&mut rng, 4, 4, 6), random_clip(&mut rng, 2, 4, 6)];
    let labels = [2, 0];
    let loss_at = |params: &ModelParams<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        loss_and_grads(params, &config, &clips, &labels, Mode::Train, &mut r).unwrap()
    };
    let (_, grads) = loss_at(&p);
    let names = p.named();
    for (slot, ((name, tensor), (_, grad))) in names.iter().zip(grads.named()).enumerate() {
        let numeric = finite_diff_grad(
            |t| {
                let mut q = p.clone();
                *q.slots_mut()[slot] = t.clone();
                loss_at(&q).0
            },
            tensor,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(grad, &numeric);
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn topk_ranking() {
    assert_eq!(predict_topk(&[0.0; 4], 1).unwrap(), vec![(0, 0.25)]);
    let top = predict_topk(&[0.0, 10.0, 0.0], 2).unwrap();
    assert_eq!(top[0].0, 1);
    let want = 10f64.exp() / (10f64.exp() + 2.0);
    assert!((top[0].1 as f64 - want).abs() < 1e-6);
    assert!((want - 0.9999092).abs() < 1e-7);
    assert_eq!(top[1].0, 0);

    let logits = [0.3, -1.2, 2.2, 0.3, 0.9];
    let all = predict_topk(&logits, 5).unwrap();
    assert!((all.iter().map(|p| p.1).sum::<f32>() - 1.0).abs() < 1e-6);
    assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
    assert_eq!(all.iter().map(|p| p.0).collect::<Vec<_>>(), [2, 4, 0, 3, 1]);
    assert!(matches!(predict_topk(&logits, 0), Err(Error::BadK { .. })));
    assert!(matches!(predict_topk(&logits, 6), Err(Error::BadK { .. })));
}
