use expressnet::generator::{GeneratorConfig, HeatmapGenerator};
use expressnet::metrics::EvalReport;
use expressnet::ops::{self, Activation, Conv2dSpec, PoolSpec};
use expressnet::{preprocess, Eval, ExpressNet32, ExpressNetConfig, Graph, Label, Mode, ParamStore64, Tensor};
use image::GrayImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_the_input(seed in any::<u64>(), a in -4.0f64..4.0, c in 1usize..4, hw in 3usize..9, stride in 1usize..3) {
        let x = tensor(seed, &[1, c, hw, hw]);
        let w = tensor(seed ^ 1, &[2, c, 3, 3]);
        let spec = Conv2dSpec::same(stride);
        let lhs = ops::conv2d(&x.map(|v| a * v), &w, None, spec).unwrap();
        let rhs = ops::conv2d(&x, &w, None, spec).unwrap().map(|v| a * v);
        let scale = rhs.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6 * scale);
    }

    #[test]
    fn same_padding_keeps_spatial_dims(h in 1usize..12, w in 1usize..12, k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let x = Tensor::<f32>::zeros([1, 1, h, w]);
        let wt = Tensor::<f32>::zeros([1, 1, k, k]);
        let y = ops::conv2d(&x, &wt, None, Conv2dSpec::same(1)).unwrap();
        prop_assert_eq!(y.shape(), &[1, 1, h, w]);
    }

    #[test]
    fn maxpool_inverts_upsample(seed in any::<u64>(), f in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let x = tensor(seed, &[2, 3, h, w]);
        let up = ops::upsample2d(&x, f).unwrap();
        prop_assert_eq!(up.shape(), &[2, 3, h * f, w * f]);
        let (back, _) = ops::maxpool2d(&up, PoolSpec::new(f, f)).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn squashing_stays_in_open_interval(v in prop::collection::vec(-200.0f32..200.0, 1..64)) {
        let x = Tensor::new([v.len()], v).unwrap();
        let t = ops::activation(&x, Activation::Tanh);
        prop_assert!(t.data().iter().all(|&y| y > -1.0 && y < 1.0));
        let s = ops::activation(&x, Activation::Sigmoid);
        prop_assert!(s.data().iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn report_is_permutation_invariant(scores in prop::collection::vec(0.0f64..1.0, 4..40), seed in any::<u64>()) {
        let labels: Vec<Label> = (0..scores.len()).map(|i| if i % 2 == 0 { Label::Live } else { Label::Spoof }).collect();
        let base = EvalReport::from_scores(&scores, &labels, 0.5).unwrap();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let s: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let l: Vec<Label> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(EvalReport::from_scores(&s, &l, 0.5).unwrap(), base);
    }

    #[test]
    fn live_set_shrinks_as_threshold_rises(scores in prop::collection::vec(0.0f64..1.0, 1..50), t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        let live = |th: f64| scores.iter().filter(|&&s| Label::from_score(s, th) == Label::Live).count();
        prop_assert!(live(t + dt) <= live(t));
    }
}

fn small_generator() -> (HeatmapGenerator, ParamStore64) {
    let cfg = GeneratorConfig { encoder_channels: [3, 4], decoder_channels: [4, 4], reduction: 2, ..GeneratorConfig::default() };
    let g = HeatmapGenerator::new(cfg);
    let mut store = ParamStore64::new();
    g.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
    (g, store)
}

#[test]
fn raising_a_logit_raises_its_attention_weight() {
    let (gen, mut store) = small_generator();
    let dec = tensor(5, &[1, 4, 6, 6]).map(f64::abs);
    let attention = |store: &ParamStore64| {
        let mut g = Eval;
        let d = g.constant(dec.clone());
        gen.channel_attention(&mut g, store, &d).unwrap().into_owned()
    };
    let before = attention(&store);
    assert!(before.data().iter().all(|&a| a > 0.0 && a < 1.0));
    for c in 0..4 {
        store.get_mut("gen.cab.b1").unwrap().data_mut()[c] += 0.5;
        let after = attention(&store);
        assert!(after.data()[c] > before.data()[c], "channel {c}");
        for o in (0..4).filter(|&o| o != c) {
            assert_eq!(after.data()[o], before.data()[o]);
        }
        store.get_mut("gen.cab.b1").unwrap().data_mut()[c] -= 0.5;
    }
}

#[test]
fn zero_attention_cuts_a_channel_out_of_the_heatmap() {
    let (gen, store) = small_generator();
    let mut attn = Tensor::full([1, 4], 0.7);
    attn.data_mut()[2] = 0.0;
    let heatmap = |dec: &Tensor<f64>| {
        let mut g = Eval;
        let (d, a) = (g.constant(dec.clone()), g.constant(attn.clone()));
        gen.generate_heatmap(&mut g, &store, &d, &a).unwrap().into_owned()
    };
    let dec = tensor(9, &[1, 4, 5, 5]);
    let mut perturbed = dec.clone();
    for (i, v) in perturbed.data_mut().iter_mut().enumerate() {
        if i / 25 == 2 {
            *v += 3.0 + i as f64;
        }
    }
    assert_eq!(heatmap(&dec), heatmap(&perturbed));
    let mut other = dec.clone();
    other.data_mut()[0] += 1.0;
    assert_ne!(heatmap(&dec), heatmap(&other));
}

#[test]
fn eval_forward_is_bit_reproducible() {
    let model = ExpressNet32::new(ExpressNetConfig::micro(), 21);
    let twin = ExpressNet32::new(ExpressNetConfig::micro(), 21);
    let x = Tensor::from_fn([3, 1, 32, 32], |i| ((i * 13) % 29) as f32 / 29.0);
    let a = model.forward(&x).unwrap();
    assert_eq!(a, model.forward(&x).unwrap());
    assert_eq!(a, twin.forward(&x).unwrap());
    assert!(a.data().iter().all(|&s| s > 0.0 && s < 1.0));
}

#[test]
fn classifier_sees_only_the_heatmap() {
    let model = ExpressNet32::new(ExpressNetConfig::micro(), 2);
    let x = Tensor::from_fn([2, 1, 32, 32], |i| (i % 7) as f32 / 7.0);
    let h = model.heatmap(&x).unwrap();
    let mut g = Eval;
    let hv = g.constant(h);
    let via_heatmap = model.classifier().classify(&mut g, &model.params, &hv, Mode::Eval, &mut Vec::new()).unwrap();
    assert_eq!(via_heatmap.into_owned(), model.forward(&x).unwrap());
}

#[test]
fn preprocess_examples() {
    let img = GrayImage::from_fn(512, 512, |x, y| image::Luma([((x * 3 + y * 5) % 256) as u8]));
    let t = preprocess::<f64>(&img);
    assert_eq!(t.shape(), &[1, 1, 512, 512]);
    assert!(t.data().iter().zip(img.as_raw()).all(|(&v, &p)| v == p as f64 / 255.0));

    for (w, h) in [(17, 33), (1, 1), (700, 300)] {
        let flat = GrayImage::from_pixel(w, h, image::Luma([128]));
        let t = preprocess::<f32>(&flat);
        assert!(t.data().iter().all(|&v| v == 128.0 / 255.0), "{w}×{h}");
    }
    assert_eq!(preprocess::<f32>(&GrayImage::new(1024, 768)).shape(), &[1, 1, 512, 512]);
}

#[test]
fn loss_examples() {
    let half = Tensor::full([3, 1], 0.5);
    for label in [0.0, 1.0] {
        let l = ops::bce_loss(&half, &Tensor::full([3, 1], label)).unwrap().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
    let perfect = Tensor::new([2, 1], vec![1.0, 0.0]).unwrap();
    let l = ops::bce_loss(&perfect, &perfect).unwrap().item();
    assert!(l <= 1e-6 + 1e-7);
    assert!(ops::bce_loss(&half, &Tensor::full([3, 1], 0.3)).is_err());
}
