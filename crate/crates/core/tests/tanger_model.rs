use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tanger_autograd::{finite_difference_check, Tape, Tensor, Var};
use tanger_core::error::TangerError;
use tanger_core::gradient_audit::tiny_config;
use tanger_core::losses::TargetEncoding;
use tanger_core::model::{block_parameter_count, reduce_sequence, Mode, ModelConfig, ModelParams, Net};
use tanger_core::pipeline::{batch_inputs, batch_loss, prepare_features, PlanMode};
use tanger_core::vision::Image;
use tanger_core::visual_words::Codebook;
use tanger_core::vocab::{PAD, STOP};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Runs `f` on an eval-mode net over freshly bound parameters.
fn with_net<R>(params: &ModelParams<f64>, f: impl FnOnce(&Net<'_, f64>) -> R) -> R {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let net = Net::new(&tape, params, &vars, Mode::eval());
    f(&net)
}

fn primary_and_pyramid(params: &ModelParams<f64>, tokens: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    with_net(params, |net| {
        let x = net.tape.constant(tokens.clone());
        let t_pt = net.encode_primary(x).unwrap();
        let (_, _, f4) = net.encode_pyramid(x).unwrap();
        (net.tape.value(t_pt).unwrap(), net.tape.value(f4).unwrap())
    })
}

#[test]
fn one_encoder_serves_both_branches() {
    let config = tiny_config();
    let full = ModelParams::<f64>::init(&config, 1).unwrap();
    let primary = ModelParams::<f64>::init(&ModelConfig { pyramid: false, ..config.clone() }, 1).unwrap();
    assert_eq!(full.count_parameters()["encoder"], primary.count_parameters()["encoder"]);
    assert!(!primary.count_parameters().contains_key("supplementary_embed"));

    let tokens = random_tensor(&[1, config.patch_count(), config.embed_dim], 2);
    let (a_pt, a_st) = primary_and_pyramid(&full, &tokens);
    let mut mutated = full.clone();
    let w = mutated.get("encoder.0.fc1.weight").unwrap().clone();
    let bumped = w.with_entry(0, w.data()[0] + 0.5).unwrap();
    mutated.set("encoder.0.fc1.weight", bumped).unwrap();
    let (b_pt, b_st) = primary_and_pyramid(&mutated, &tokens);
    assert_ne!(bits(&a_pt), bits(&b_pt));
    assert_ne!(bits(&a_st), bits(&b_st));
}

#[test]
fn empty_stack_is_the_identity() {
    let config = ModelConfig { depth: 0, ..tiny_config() };
    let params = ModelParams::<f64>::init(&config, 3).unwrap();
    assert_eq!(params.count_parameters()["encoder"], 0);
    let tokens = random_tensor(&[2, 8, 16], 4);
    with_net(&params, |net| {
        let t = net.tape;
        let x = t.constant(tokens.clone());
        assert_eq!(t.value(net.encode_primary(x).unwrap()).unwrap(), tokens);
        let (_, _, f4) = net.encode_pyramid(x).unwrap();
        let twice = reduce_sequence(t, reduce_sequence(t, x).unwrap()).unwrap();
        assert_eq!(t.value(f4).unwrap(), t.value(twice).unwrap());
    });
}

#[test]
fn reduction_windows() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![1, 5, 2], vec![1.0, 9.0, 4.0, 2.0, -3.0, 0.0, 7.0, 7.0, 5.0, -1.0]).unwrap());
    let y = tape.value(reduce_sequence(&tape, x).unwrap()).unwrap();
    assert_eq!(y.shape(), &[1, 3, 2]);
    assert_eq!(y.data(), &[4.0, 9.0, 7.0, 7.0, 5.0, -1.0]);

    let four = tape.slice(x, 1, 0, 4).unwrap();
    let y = tape.value(reduce_sequence(&tape, four).unwrap()).unwrap();
    assert_eq!(y.data(), &[4.0, 9.0, 7.0, 7.0]);

    let flat = tape.constant(Tensor::full(&[1, 6, 3], 0.25));
    assert_eq!(tape.value(reduce_sequence(&tape, flat).unwrap()).unwrap(), Tensor::full(&[1, 3, 3], 0.25));
}

#[test]
fn eight_tokens_give_stages_of_eight_four_two() {
    let params = ModelParams::<f64>::init(&tiny_config(), 5).unwrap();
    with_net(&params, |net| {
        let x = net.tape.constant(random_tensor(&[1, 8, 16], 6));
        let (f2, f3, f4) = net.encode_pyramid(x).unwrap();
        let lens: Vec<usize> = [f2, f3, f4].iter().map(|&v| net.tape.shape(v).unwrap()[1]).collect();
        assert_eq!(lens, vec![8, 4, 2]);
        let short = net.tape.constant(random_tensor(&[1, 3, 16], 7));
        assert!(matches!(net.encode_pyramid(short), Err(TangerError::Config(_))));
    });
}

#[test]
fn eval_forward_is_bit_stable() {
    let config = tiny_config();
    let params = ModelParams::<f64>::init(&config, 8).unwrap();
    let patches = random_tensor(&[2, 8, config.raw_dim()], 9);
    let pooled = random_tensor(&[2, 8, config.pooled_dim()], 10);
    let run = || {
        with_net(&params, |net| {
            let t = net.tape;
            let out = net.forward(t.constant(patches.clone()), Some(t.constant(pooled.clone())), None).unwrap();
            let pyr = out.pyramid.unwrap();
            [out.y, pyr.language, pyr.coherence].map(|v| bits(&t.value(v).unwrap()))
        })
    };
    assert_eq!(run(), run());
}

#[test]
fn recognition_head_shape_and_zero_case() {
    let config = ModelConfig {
        maxlen: 8,
        vocab_size: 12,
        ..tiny_config()
    };
    let mut params = ModelParams::<f64>::init(&config, 11).unwrap();
    with_net(&params, |net| {
        let y = net.recognition_logits(net.tape.constant(random_tensor(&[1, 8, 16], 12))).unwrap();
        assert_eq!(net.tape.shape(y).unwrap(), vec![1, 8, 12]);
    });
    params.set("recognition.bias", Tensor::zeros(&[12])).unwrap();
    with_net(&params, |net| {
        let y = net.recognition_logits(net.tape.constant(Tensor::zeros(&[1, 8, 16]))).unwrap();
        assert!(net.tape.value(y).unwrap().data().iter().all(|&v| v == 0.0));
    });
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// `max over tokens of fc2(gelu(fc1(x)))` in plain loops.
fn branch_oracle(params: &ModelParams<f64>, prefix: &str, x: &Tensor<f64>) -> Vec<f64> {
    let p = |s: &str| params.get(&format!("{prefix}.{s}")).unwrap().data().to_vec();
    let (w1, b1, w2, b2) = (p("fc1.weight"), p("fc1.bias"), p("fc2.weight"), p("fc2.bias"));
    let (l, c) = (x.shape()[1], x.shape()[2]);
    let out = b2.len();
    let mut best = vec![f64::NEG_INFINITY; out];
    for r in 0..l {
        let row = &x.data()[r * c..(r + 1) * c];
        let h: Vec<f64> = (0..c).map(|j| gelu(b1[j] + (0..c).map(|i| row[i] * w1[i * c + j]).sum::<f64>())).collect();
        for k in 0..out {
            let v = b2[k] + (0..c).map(|j| h[j] * w2[j * out + k]).sum::<f64>();
            best[k] = best[k].max(v);
        }
    }
    best
}

#[test]
fn duplicated_language_branch_doubles_the_pooled_logits() {
    let mut params = ModelParams::<f64>::init(&tiny_config(), 13).unwrap();
    for part in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
        let src = params.get(&format!("language.primary.{part}")).unwrap().clone();
        let src = src.map(|v| v + 0.1);
        params.set(&format!("language.primary.{part}"), src.clone()).unwrap();
        params.set(&format!("language.supplementary.{part}"), src).unwrap();
    }
    let x = random_tensor(&[1, 8, 16], 14);
    let oracle = branch_oracle(&params, "language.primary", &x);
    with_net(&params, |net| {
        let v = net.tape.constant(x.clone());
        let logits = net.tape.value(net.language_logits(v, v).unwrap()).unwrap();
        for (got, want) in logits.data().iter().zip(&oracle) {
            assert!((got - 2.0 * want).abs() < 1e-12, "{got} vs {want}");
        }
    });

    for part in ["fc1.bias", "fc2.bias"] {
        for branch in ["primary", "supplementary"] {
            let name = format!("language.{branch}.{part}");
            let shape = params.get(&name).unwrap().shape().to_vec();
            params.set(&name, Tensor::zeros(&shape)).unwrap();
        }
    }
    with_net(&params, |net| {
        let z = net.tape.constant(Tensor::zeros(&[1, 8, 16]));
        let logits = net.tape.value(net.language_logits(z, z).unwrap()).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    });
}

#[test]
fn coherence_scores_are_open_unit_and_half_for_a_zero_head() {
    let config = tiny_config();
    let mut params = ModelParams::<f64>::init(&config, 15).unwrap();
    let y = random_tensor(&[2, config.maxlen, config.vocab_size], 16);
    let t_st = random_tensor(&[2, 2, 16], 17).map(|v| 40.0 * v);
    with_net(&params, |net| {
        let s = net.coherence_scores(net.tape.constant(y.clone()), net.tape.constant(t_st.clone())).unwrap();
        let s = net.tape.value(s).unwrap();
        assert_eq!(s.shape(), &[2, config.maxlen]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    });
    params.set("coherence.head.weight", Tensor::zeros(&[32, 1])).unwrap();
    params.set("coherence.head.bias", Tensor::zeros(&[1])).unwrap();
    with_net(&params, |net| {
        let s = net.coherence_scores(net.tape.constant(y.clone()), net.tape.constant(t_st.clone())).unwrap();
        assert!(net.tape.value(s).unwrap().data().iter().all(|&v| v == 0.5));
    });
}

#[test]
fn encoder_count_follows_the_block_formula() {
    for c in [8usize, 16, 64] {
        // ln1, ln2: 2c each; qkv: 3c^2 + 3c; proj: c^2 + c; fc1, fc2 with hidden 4c: 8c^2 + 5c
        let per_block = 12 * c * c + 13 * c;
        assert_eq!(block_parameter_count(c, 4 * c), per_block);
        for depth in [0usize, 1, 2, 4] {
            let config = ModelConfig {
                embed_dim: c,
                depth,
                heads: 2,
                ..tiny_config()
            };
            let params = ModelParams::<f32>::init(&config, 0).unwrap();
            assert_eq!(params.count_parameters()["encoder"], depth * per_block);
        }
    }
}

#[test]
fn pyramid_gradients_match_finite_differences() {
    let config = tiny_config();
    let params = ModelParams::<f64>::init(&config, 18).unwrap();
    let tokens = random_tensor(&[1, 8, 16], 19);
    let probe = random_tensor(&[2, 16], 20);
    let report = finite_difference_check::<TangerError, _>(params.tensors(), 1e-5, |tape, vars| {
        let net = Net::new(tape, &params, vars, Mode::train(3, 1));
        let (_, _, f4) = net.encode_pyramid(tape.constant(tokens.clone()))?;
        let f4 = tape.reshape(f4, &[2, 16])?;
        let prod = tape.mul(f4, tape.constant(probe.clone()))?;
        let enc_only = tape.sum(prod)?;
        // keep every parameter on the tape so each has a gradient entry
        let rest: Vec<Var> = vars.iter().map(|&v| tape.sum(v)).collect::<Result<_, _>>()?;
        let mut total = enc_only;
        for r in rest {
            total = tape.add(total, tape.scale(r, 1e-3)?)?;
        }
        Ok(total)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// Gradients of the objective at `alpha = 0` for the shared parameters, with
/// and without the auxiliary heads attached.
#[test]
fn zero_alpha_gradients_equal_the_detached_build_bitwise() {
    let config = ModelConfig { alpha: 0.0, ..tiny_config() };
    let primary_config = ModelConfig { pyramid: false, ..config.clone() };
    let full = ModelParams::<f64>::init(&config, 21).unwrap();
    let named = full
        .names()
        .iter()
        .zip(full.tensors())
        .filter(|(n, _)| primary_config_has(n))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let primary = ModelParams::<f64>::from_named(&primary_config, named).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let images: Vec<Image> = (0..2)
        .map(|_| Image::new(8, 16, (0..8 * 16 * 3).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    let codebook = Codebook::new((0..4 * 12).map(|i| (i % 7) as f64 / 7.0 - 0.4).collect(), 4, 12, String::new()).unwrap();
    let targets: Vec<TargetEncoding> = [vec![3, 4], vec![5, 6, 7]]
        .into_iter()
        .map(|mut chars: Vec<usize>| {
            let effective_len = chars.len() + 1;
            chars.push(STOP);
            chars.resize(4, PAD);
            TargetEncoding {
                chars,
                effective_len,
                language: vec![0.5, 0.25, 0.25],
            }
        })
        .collect();

    let grads = |params: &ModelParams<f64>, cfg: &ModelConfig| {
        let features: Vec<_> = images
            .iter()
            .map(|img| prepare_features(img, cfg, Some(&codebook), PlanMode::Adaptive).unwrap())
            .collect();
        let refs: Vec<_> = features.iter().collect();
        let inputs = batch_inputs::<f64>(&refs, cfg).unwrap();
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let net = Net::new(&tape, params, &vars, Mode::train(42, 7));
        let parts = batch_loss(&net, &inputs, &targets, None).unwrap();
        let loss = tape.value(parts.total).unwrap().item().unwrap();
        let g = tape.backward(parts.total).unwrap();
        let per_name: Vec<(String, Vec<u64>)> = params
            .names()
            .iter()
            .zip(&vars)
            .filter(|(n, _)| primary_config_has(n))
            .map(|(n, &v)| (n.clone(), bits(g.get(v).unwrap())))
            .collect();
        (loss.to_bits(), per_name)
    };
    let (loss_full, g_full) = grads(&full, &config);
    let (loss_primary, g_primary) = grads(&primary, &primary_config);
    assert_eq!(loss_full, loss_primary);
    assert_eq!(g_full.len(), g_primary.len());
    for ((name, a), (_, b)) in g_full.iter().zip(&g_primary) {
        assert_eq!(a, b, "gradient of {name} differs");
    }
}

fn primary_config_has(name: &str) -> bool {
    ["primary_embed.", "encoder.", "recognition."].iter().any(|p| name.starts_with(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stage_lengths_halve_with_ceiling(cols in 4usize..24) {
        let config = ModelConfig {
            embed_dim: 4,
            depth: 1,
            heads: 2,
            maxlen: 2,
            vocab_size: 4,
            patch: 2,
            image_height: 2,
            image_width: 2 * cols,
            descriptor_split: 1,
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::init(&config, 0).unwrap();
        let p = config.patch_count();
        let lens = with_net(&params, |net| {
            let x = net.tape.constant(random_tensor(&[1, p, 4], cols as u64));
            let (f2, f3, f4) = net.encode_pyramid(x).unwrap();
            [f2, f3, f4].map(|v| net.tape.shape(v).unwrap()[1])
        });
        prop_assert_eq!(lens, [p, p.div_ceil(2), p.div_ceil(2).div_ceil(2)]);
    }
}
