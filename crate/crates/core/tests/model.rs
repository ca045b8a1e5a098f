use colactc::model::{
    beam_search, ctc_head, decoder_states, encode, greedy_decode, interpolated_loss, mle_loss, sequence_score,
    ModelParams, TrainConfig,
};
use colactc::tensor::log_sum_exp;
use colactc::{CoarseMapper, LabelSource, MappingKind, Matrix, Rng, Triplet};

fn micro_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        d_model: 4,
        heads: 2,
        ffn_dim: 6,
        enc_layers: 1,
        dec_layers: 1,
        k_concat: 3,
        feat_dim: 3,
        vocab_src: 6,
        vocab_tgt: 7,
        label_size: 3,
        label_smoothing: 0.1,
        ..TrainConfig::default()
    }
}

fn triplet(rng: &mut Rng, frames: usize, transcript: Vec<usize>, translation: Vec<usize>) -> Triplet {
    Triplet {
        frames: Matrix::from_fn(frames, 3, |_, _| rng.normal() as f32),
        transcript_ids: transcript,
        translation_ids: translation,
    }
}

/// 15 frames -> T = 5 encoder positions, |y| = 3, plus an item whose
/// labels cannot fit its 2 positions.
fn micro_batch() -> Vec<Triplet> {
    let mut rng = Rng::new(11);
    vec![
        triplet(&mut rng, 15, vec![1, 4, 4], vec![2, 6, 0]),
        triplet(&mut rng, 5, vec![0, 3, 5], vec![1, 1, 3]),
        triplet(&mut rng, 10, vec![2, 5], vec![5, 4, 3]),
    ]
}

fn loss_at(params: &ModelParams<f64>, cfg: &TrainConfig, batch: &[&Triplet], mapper: &mut CoarseMapper) -> f64 {
    interpolated_loss(batch, params, cfg, mapper, LabelSource::Transcript)
        .unwrap()
        .total
}

fn check_full_gradient(cfg: &TrainConfig, seed: u64) {
    let data = micro_batch();
    let batch: Vec<&Triplet> = data.iter().collect();
    let mut mapper = CoarseMapper::new(MappingKind::Modulo, cfg.vocab_src, cfg.label_size).unwrap();
    let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(seed));
    let out = interpolated_loss(&batch, &params, cfg, &mut mapper, LabelSource::Transcript).unwrap();
    assert_eq!(out.skipped_infeasible, usize::from(cfg.lambda > 0.0));
    let grads = out.grads.unwrap();
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, m)| m.as_slice().to_vec())
        .collect();
    let eps = 1e-5;
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        for (j, &an) in analytic[ti].iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].as_mut_slice()[j] += eps;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].as_mut_slice()[j] -= eps;
            let fd =
                (loss_at(&plus, cfg, &batch, &mut mapper) - loss_at(&minus, cfg, &batch, &mut mapper)) / (2.0 * eps);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}]: fd {fd:e} analytic {an:e}"));
            }
        }
    }
    eprintln!("worst relative error {:e} at {}", worst.0, worst.1);
    assert!(worst.0 <= 1e-3, "worst relative error {:e} at {}", worst.0, worst.1);
}

#[test]
fn full_gradient_matches_finite_differences() {
    check_full_gradient(&micro_config(0.3), 1);
}

#[test]
fn full_gradient_without_ctc_branch() {
    check_full_gradient(&micro_config(0.0), 2);
}

#[test]
fn full_gradient_ctc_only() {
    check_full_gradient(&micro_config(1.0), 3);
}

#[test]
fn full_gradient_with_shared_head() {
    let cfg = TrainConfig {
        share_params: true,
        label_size: 7,
        vocab_src: 7,
        ..micro_config(0.4)
    };
    check_full_gradient(&cfg, 4);
}

fn endpoint_values(lambda: f64) -> (f64, f64, Option<f64>) {
    let data = micro_batch();
    let batch: Vec<&Triplet> = data.iter().collect();
    let base = micro_config(0.3);
    let params = ModelParams::<f64>::init(base.dims(), &mut Rng::new(9));
    let cfg = TrainConfig { lambda, ..base };
    let mut mapper = CoarseMapper::new(MappingKind::Modulo, 6, 3).unwrap();
    let out = interpolated_loss(&batch, &params, &cfg, &mut mapper, LabelSource::Transcript).unwrap();
    (out.total, out.mle, out.ctc)
}

#[test]
fn interpolation_endpoints_and_linearity() {
    let (t0, mle0, ctc0) = endpoint_values(0.0);
    assert_eq!(t0, mle0);
    assert_eq!(ctc0, None);
    let (t1, _, ctc1) = endpoint_values(1.0);
    assert!((t1 - ctc1.unwrap()).abs() <= 1e-12);
    for lambda in [0.1, 0.3, 0.77] {
        let (t, _, _) = endpoint_values(lambda);
        assert!(((1.0 - lambda) * t0 + lambda * t1 - t).abs() <= 1e-12);
    }
}

#[test]
fn lambda_outside_unit_interval_is_rejected() {
    let data = micro_batch();
    let batch: Vec<&Triplet> = data.iter().collect();
    let cfg = micro_config(0.3);
    let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(9));
    let mut mapper = CoarseMapper::new(MappingKind::Modulo, 6, 3).unwrap();
    let bad = TrainConfig { lambda: 1.2, ..cfg };
    assert!(interpolated_loss(&batch, &params, &bad, &mut mapper, LabelSource::Transcript).is_err());
}

#[test]
fn mle_loss_matches_direct_formula() {
    let cfg = micro_config(0.3);
    let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(21));
    let data = micro_batch();
    let enc = encode(&data[0].frames.cast(), &params).unwrap();
    let y = [3usize, 1, 7];
    let states = decoder_states(&enc, &y[..2], &params).unwrap();
    let got = mle_loss(&states, &y, &params, 0.2).unwrap();
    let mut want = 0.0;
    for (t, &target) in y.iter().enumerate() {
        let logits: Vec<f64> = (0..params.w_mle.rows())
            .map(|v| (0..4).map(|k| params.w_mle.get(v, k) * states.states.get(t, k)).sum())
            .collect();
        let z = log_sum_exp(&logits);
        let nll: Vec<f64> = logits.iter().map(|l| z - l).collect();
        want += 0.8 * nll[target] + 0.2 * nll.iter().sum::<f64>() / nll.len() as f64;
    }
    want /= 3.0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(mle_loss(&states, &[0, 1, 8], &params, 0.0).is_err());
}

#[test]
fn uniform_softmax_gives_log_vocab() {
    let cfg = micro_config(0.3);
    let mut params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(2));
    params.w_mle.fill_zero();
    let enc = encode(&micro_batch()[0].frames.cast(), &params).unwrap();
    let states = decoder_states(&enc, &[1, 2], &params).unwrap();
    let loss = mle_loss(&states, &[1, 2, 7], &params, 0.0).unwrap();
    assert!((loss - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn encoder_length_and_determinism() {
    let cfg = micro_config(0.3);
    let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(2));
    let mut rng = Rng::new(4);
    for (frames, want) in [(6, 2), (7, 3), (1, 1)] {
        let f = Matrix::from_fn(frames, 3, |_, _| rng.normal());
        let a = encode(&f, &params).unwrap();
        assert_eq!(a.states.rows(), want);
        assert_eq!(a, encode(&f, &params).unwrap());
    }
    assert!(encode(&Matrix::<f64>::zeros(4, 2), &params).is_err());
}

#[test]
fn ctc_head_rows_are_normalized() {
    let cfg = micro_config(0.3);
    let mut params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(2));
    let enc = encode(&micro_batch()[0].frames.cast(), &params).unwrap();
    let lat = ctc_head(&enc, &params).unwrap();
    assert_eq!(lat.classes(), 4);
    assert!(lat.normalization_error() < 1e-12);
    params.w_ctc.as_mut().unwrap().fill_zero();
    let lat = ctc_head(&enc, &params).unwrap();
    for t in 0..lat.frames() {
        for c in 0..4 {
            assert!((lat.get(t, c) + 4f64.ln()).abs() < 1e-12);
        }
    }
    let no_head = ModelParams::<f64>::init(micro_config(0.0).dims(), &mut Rng::new(2));
    assert!(ctc_head(&enc, &no_head).is_err());
}

#[test]
fn decoder_is_causal() {
    let cfg = micro_config(0.3);
    let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(8));
    let enc = encode(&micro_batch()[0].frames.cast(), &params).unwrap();
    let base = [1usize, 2, 3, 4, 5];
    let a = decoder_states(&enc, &base, &params).unwrap().states;
    for t in 0..base.len() {
        let mut changed = base;
        changed[t] = (changed[t] + 3) % 7;
        let b = decoder_states(&enc, &changed, &params).unwrap().states;
        // input row t + 1 holds target token t
        for r in 0..=t {
            assert_eq!(a.row(r), b.row(r), "row {r} moved when token {t} changed");
        }
        assert_ne!(a.row(t + 1), b.row(t + 1));
    }
}

#[test]
fn beam_of_one_is_greedy_and_beam_dominates() {
    let cfg = micro_config(0.3);
    for seed in 0..6 {
        let params = ModelParams::<f64>::init(cfg.dims(), &mut Rng::new(seed));
        let frames: Matrix<f64> = micro_batch()[(seed % 3) as usize].frames.cast();
        let greedy = greedy_decode(&frames, &params, 6).unwrap();
        assert_eq!(beam_search(&frames, &params, 1, 6).unwrap(), greedy);
        let beam = beam_search(&frames, &params, 4, 6).unwrap();
        let enc = encode(&frames, &params).unwrap();
        let sb = sequence_score(&enc, &beam, &params).unwrap();
        let sg = sequence_score(&enc, &greedy, &params).unwrap();
        assert!(sb >= sg, "beam {sb} < greedy {sg}");
        assert!(beam.len() <= 6 && beam.iter().all(|&t| t < 7));
    }
}
