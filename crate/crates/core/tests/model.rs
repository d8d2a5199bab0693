use wdn::autograd::Graph;
use wdn::imaging::{upscale, ImagePlane};
use wdn::model::{prepare_inputs, Mode, UpsamplingModule, WdnConfig, WdnModel};
use wdn::training::loss_output;
use wdn::{Real, Rng, Tensor};

fn plane(h: usize, w: usize, seed: u64) -> ImagePlane {
    let mut rng = Rng::new(seed);
    ImagePlane::from_fn(h, w, |_, _| rng.uniform(0.0, 1.0))
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap()
}

/// Turns every block into an exact pass-through of its single input channel.
fn make_identity<T: Real>(model: &mut WdnModel<T>) {
    for store in model.stores_mut() {
        for (name, p) in store.iter_mut() {
            let shape = p.value.shape().to_vec();
            let data = p.value.data_mut();
            data.iter_mut().for_each(|v| *v = T::zero());
            if name.contains(".act") && name.ends_with(".b") {
                // sigmoid(-1e4) is exactly zero, so calibration returns its input.
                data.iter_mut().for_each(|v| *v = T::lit(-1e4));
            } else if name.ends_with(".w") && !name.contains(".act") {
                let (kh, kw) = (shape[2], shape[3]);
                data[kh / 2 * kw + kw / 2] = T::one();
            }
        }
    }
}

#[test]
fn identity_blocks_reduce_the_network_to_bicubic() {
    let config = WdnConfig {
        attention: false,
        ..WdnConfig::desk()
    };
    let mut model = WdnModel::<f64>::new(config.clone(), 1).unwrap();
    make_identity(&mut model);
    model.set_noise_suppression(false);
    let lr = plane(10, 7, 2);
    let inputs = prepare_inputs::<f64>(&[&lr], &config).unwrap();
    let out = model.infer(&inputs).unwrap();
    let expect = upscale(&lr, 4).unwrap().clamp01();
    let got = ImagePlane::from_tensor(&out, 0, 0).unwrap();
    assert!(got.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn pre_blur_output_follows_input_shifts() {
    let config = WdnConfig::desk();
    let module = UpsamplingModule::<f64>::new("m", &config, &mut Rng::new(3)).unwrap();
    let (h, w, shift) = (24, 24, 2);
    let base: Vec<Tensor<f64>> = (0..4).map(|i| random(&[1, 1, h, w], 10 + i)).collect();
    let shifted: Vec<Tensor<f64>> = base
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let fill = random(&[1, 1, h, w], 20 + i as u64);
            let data = (0..h * w)
                .map(|k| {
                    let (y, x) = (k / w, k % w);
                    if x >= shift {
                        t.data()[y * w + x - shift]
                    } else {
                        fill.data()[k]
                    }
                })
                .collect();
            Tensor::from_vec(&[1, 1, h, w], data).unwrap()
        })
        .collect();
    let run = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let parts = module.forward_parts(&mut g, &vars, Mode::Eval).unwrap();
        g.value(parts.pre_blur).clone()
    };
    let a = run(&base);
    let b = run(&shifted);
    let (oh, ow) = (2 * h, 2 * w);
    // Five 3x3 convolutions per block reach five input pixels.
    let margin = 2 * (5 + shift);
    let mut compared = 0;
    for y in margin..oh - margin {
        for x in margin..ow - margin - 2 * shift {
            let d = a.data()[y * ow + x] - b.data()[y * ow + x + 2 * shift];
            assert!(d.abs() <= 1e-5, "({y},{x}) differs by {d}");
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn sibling_paths_share_one_attention_block() {
    let config = WdnConfig::desk();
    let mut module = UpsamplingModule::<f64>::new("m", &config, &mut Rng::new(4)).unwrap();
    let attn: Vec<&String> = module
        .store
        .iter()
        .map(|(n, _)| n)
        .filter(|n| n.starts_with("attn."))
        .collect();
    let proc0: Vec<&String> = module
        .store
        .iter()
        .map(|(n, _)| n)
        .filter(|n| n.starts_with("proc0."))
        .collect();
    assert_eq!(attn.len(), proc0.len());
    let adam = wdn::params::AdamConfig::default();
    for step in 0..3 {
        let x = random(&[2, 4, 8, 8], 30 + step);
        let t = random(&[2, 1, 16, 16], 40 + step);
        wdn::training::trainer::module_step(&mut module, x, &t, &adam).unwrap();
        // The same input on every path must give bitwise-equal attention maps.
        let same = random(&[1, 1, 8, 8], 50 + step);
        let mut g = Graph::new();
        let vars: Vec<_> = (0..4).map(|_| g.input(same.clone())).collect();
        let parts = module.forward_parts(&mut g, &vars, Mode::Eval).unwrap();
        let maps = parts.attention.unwrap();
        for &m in &maps[1..] {
            assert_eq!(g.value(m), g.value(maps[0]));
        }
        assert!(g.value(maps[0]).data().iter().all(|&v| v == 0.25));
    }
}

#[test]
fn attention_weights_form_a_distribution() {
    let config = WdnConfig::desk();
    let module = UpsamplingModule::<f64>::new("m", &config, &mut Rng::new(5)).unwrap();
    let mut g = Graph::new();
    let vars: Vec<_> = (0..4).map(|i| g.input(random(&[1, 1, 9, 7], 60 + i))).collect();
    let maps = module
        .forward_parts(&mut g, &vars, Mode::Eval)
        .unwrap()
        .attention
        .unwrap();
    for i in 0..63 {
        let vals: Vec<f64> = maps.iter().map(|&m| g.value(m).data()[i]).collect();
        assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((vals.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn ablated_attention_parameter_counts() {
    for attention in [true, false] {
        let config = WdnConfig {
            attention,
            ..WdnConfig::desk()
        };
        let model = WdnModel::<f32>::new(config.clone(), 0).unwrap();
        let formula = WdnModel::<f32>::parameter_formula(&config);
        for s in 1..=3u8 {
            assert_eq!(model.stage_parameters(s), formula[s as usize - 1]);
        }
        assert_eq!(model.count_parameters(), formula.iter().sum::<usize>());
    }
    let formula = WdnModel::<f32>::parameter_formula(&WdnConfig::desk());
    assert_eq!(formula, [290_600, 72_650, 14_530]);
    let ablated = WdnModel::<f32>::parameter_formula(&WdnConfig {
        attention: false,
        ..WdnConfig::desk()
    });
    assert_eq!(ablated, [232_480, 58_120, 7_265]);
}

#[test]
fn ablations_change_shapes_as_documented() {
    let lr = plane(6, 8, 7);
    let cases = [
        (WdnConfig::desk(), 16, 8),
        (
            WdnConfig {
                frequency_division: false,
                ..WdnConfig::desk()
            },
            16,
            8,
        ),
        (
            WdnConfig {
                scale_division: false,
                ..WdnConfig::desk()
            },
            4,
            0,
        ),
    ];
    for (config, per_band, modules) in cases {
        let model = WdnModel::<f32>::new(config.clone(), 0).unwrap();
        assert_eq!(model.stage1.len(), modules);
        let inputs = prepare_inputs::<f32>(&[&lr], &config).unwrap();
        let block = config.input_block();
        assert_eq!(inputs.hf.shape(), &[1, per_band, 24 / block, 32 / block]);
        if !config.frequency_division {
            assert_eq!(inputs.hf, inputs.lf);
        }
        let out = model.infer(&inputs).unwrap();
        assert_eq!(out.shape(), &[1, 1, 24, 32]);
        assert!(out.all_finite());
    }
}

#[test]
fn inference_is_bitwise_repeatable() {
    let model = WdnModel::<f32>::new(WdnConfig::desk(), 9).unwrap();
    let lr = plane(12, 12, 8);
    let a = model.upsample_luma(&lr).unwrap();
    let b = model.upsample_luma(&lr).unwrap();
    assert!(a
        .values()
        .iter()
        .zip(b.values())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn single_precision_forward_gradients_match_differences() {
    let config = WdnConfig::desk();
    let model = WdnModel::<f32>::new(config.clone(), 11).unwrap();
    let lr = plane(12, 12, 12);
    let inputs = prepare_inputs::<f32>(&[&lr], &config).unwrap();
    let target = random(&[1, 1, 48, 48], 13).cast::<f32>();
    let mut rng = Rng::new(14);
    let stores = model.stores();
    let loss_with = |name: &str, idx: usize, delta: f32| {
        let mut g = Graph::<f32>::new();
        let store = stores
            .iter()
            .find(|s| name.starts_with(&format!("{}.", s.group())))
            .unwrap();
        let mut t = store.value(&name[store.group().len() + 1..]).unwrap().clone();
        t.data_mut()[idx] += delta;
        let var = g.param(name, &t);
        let fwd = model.forward_graph(&mut g, &inputs, Mode::Train, false).unwrap();
        let tv = g.input(target.clone());
        let loss = loss_output(&mut g, fwd.output, tv).unwrap();
        (g, loss, var)
    };
    let step = 1e-2f32;
    let (mut diff, mut scale, mut checked) = (0.0f64, 0.0f64, 0);
    while checked < 20 {
        let store = stores[rng.below(stores.len())];
        let names: Vec<&String> = store.iter().map(|(n, _)| n).collect();
        let name = store.qualified(names[rng.below(names.len())]);
        let idx = rng.below(store.value(&name[store.group().len() + 1..]).unwrap().len());
        let (mut g, loss, var) = loss_with(&name, idx, 0.0);
        let pattern = g.relu_pattern();
        g.backward(loss).unwrap();
        let analytic = g.grad(var).map_or(0.0, |t| t.data()[idx] as f64);
        let (gp, lp, _) = loss_with(&name, idx, step);
        let (gm, lm, _) = loss_with(&name, idx, -step);
        if gp.relu_pattern() != pattern || gm.relu_pattern() != pattern {
            continue;
        }
        let numeric = (gp.value(lp).data()[0] as f64 - gm.value(lm).data()[0] as f64) / (2.0 * step as f64);
        diff += (analytic - numeric).powi(2);
        scale += analytic.powi(2).max(numeric.powi(2));
        checked += 1;
    }
    let rel = diff.sqrt() / scale.sqrt().max(1e-12);
    assert!(rel <= 1e-3, "relative error {rel}");
}
