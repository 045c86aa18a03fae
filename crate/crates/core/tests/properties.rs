use proptest::prelude::*;

use radsr::autodiff::gradcheck::{grad_check, op_suite, random_tensor, GradCheckConfig};
use radsr::autodiff::{Adam, AdamConfig, Graph, ParamStore, Shape};
use radsr::degrade::{
    convolve, degrade_pair, degrade_with_params, gaussian_kernel, motion_kernel, DegradationConfig, DegradationParams,
};
use radsr::image::to_luma;
use radsr::metrics::{psnr, ssim};
use radsr::models::{denoiser_forward, AttentionMode, ModelSpec, ModelState};
use radsr::Image;

fn image(w: usize, h: usize, channels: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..=1.0, w * h * channels).prop_map(move |d| Image::new(w, h, channels, d).unwrap())
}

fn sized_image(max: usize) -> impl Strategy<Value = Image> {
    (4usize..max, 4usize..max).prop_flat_map(|(w, h)| image(w, h, 1))
}

fn smooth(w: usize, h: usize, seed: u64) -> Image {
    let f = (seed % 7) as f64 + 1.0;
    Image::from_fn(w, h, |x, y| 0.5 + 0.4 * ((x as f64 * f / w as f64) + (y as f64 * 0.3)).sin()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernels_sum_to_one(size in (0usize..6).prop_map(|k| 2 * k + 1), sigma in 0.05f64..6.0, angle in 0.0f64..std::f64::consts::PI) {
        let g: f64 = gaussian_kernel(size, sigma).unwrap().weights().iter().sum();
        let m: f64 = motion_kernel(size, angle).unwrap().weights().iter().sum();
        prop_assert!((g - 1.0).abs() <= 1e-12);
        prop_assert!((m - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn convolution_keeps_constants(v in 0.0f64..=1.0, size in (0usize..5).prop_map(|k| 2 * k + 1), angle in 0.0f64..3.1) {
        let img = Image::filled(13, 11, 1, v).unwrap();
        for k in [gaussian_kernel(size, 1.3).unwrap(), motion_kernel(size, angle).unwrap()] {
            let out = convolve(&img, &k);
            prop_assert!(out.data().iter().all(|o| (o - v).abs() <= 1e-12));
        }
    }

    #[test]
    fn degradation_is_pure_and_replayable(seed in any::<u64>(), scale in prop_oneof![Just(2usize), Just(4)], img_seed in 0u64..100) {
        let x = smooth(32, 24, img_seed);
        let cfg = DegradationConfig { scale, ..Default::default() };
        let a = degrade_pair(&x, &cfg, seed).unwrap();
        let b = degrade_pair(&x, &cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let (y, y_clean) = degrade_with_params(&x, &a.params).unwrap();
        prop_assert_eq!(y, a.y);
        prop_assert_eq!(y_clean, a.y_clean);
    }

    #[test]
    fn quality_100_noise_off_stays_above_50_db(x in image(24, 16, 1), scale in prop_oneof![Just(2usize), Just(4)]) {
        let (y, y_clean) = degrade_with_params(&x, &DegradationParams::clean(100, scale, 0)).unwrap();
        prop_assert!(psnr(&y, &y_clean, 0).unwrap() >= 50.0);
    }

    #[test]
    fn metrics_are_symmetric_and_pure((a, b) in (12usize..24, 12usize..24).prop_flat_map(|(w, h)| (image(w, h, 1), image(w, h, 1)))) {
        let ab = ssim(&a, &b, 0).unwrap();
        prop_assert!((ab - ssim(&b, &a, 0).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(ab.to_bits(), ssim(&a, &b, 0).unwrap().to_bits());
        prop_assert_eq!(psnr(&a, &b, 0).unwrap(), psnr(&b, &a, 0).unwrap());
        prop_assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_ignores_a_common_shift((a, b) in (image(30, 30, 1), image(30, 30, 1)), dx in 0usize..4, dy in 0usize..4) {
        let base_a = a.crop(4, 4, 22, 22).unwrap();
        let base_b = b.crop(4, 4, 22, 22).unwrap();
        let sa = a.crop(4 - dx, 4 - dy, 22, 22).unwrap();
        let sb = b.crop(4 - dx, 4 - dy, 22, 22).unwrap();
        // Shifting both images, then cropping the shifted border away, scores the same content.
        let shifted = ssim(&sa.crop(dx, dy, 18 - dx, 18 - dy).unwrap(), &sb.crop(dx, dy, 18 - dx, 18 - dy).unwrap(), 0).unwrap();
        let direct = ssim(&base_a.crop(0, 0, 18 - dx, 18 - dy).unwrap(), &base_b.crop(0, 0, 18 - dx, 18 - dy).unwrap(), 0).unwrap();
        prop_assert!((shifted - direct).abs() <= 1e-12);
    }

    #[test]
    fn luma_is_idempotent(img in (4usize..12, 4usize..12).prop_flat_map(|(w, h)| image(w, h, 3))) {
        let once = to_luma(&img);
        prop_assert_eq!(to_luma(&once), once);
    }

    #[test]
    fn operations_leave_inputs_alone(img in sized_image(20)) {
        let copy = img.clone();
        let _ = to_luma(&img);
        let _ = convolve(&img, &gaussian_kernel(3, 1.0).unwrap());
        let _ = ssim(&img, &img, 0);
        prop_assert_eq!(img, copy);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn op_suite_passes_for_any_seed(seed in any::<u64>()) {
        let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
        for r in op_suite(&cfg).unwrap() {
            prop_assert!(r.passed, "{} rel err {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn conv_passes_for_random_shapes(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, h in 3usize..8, w in 3usize..8,
        k in prop_oneof![Just(1usize), Just(3)], stride in 1usize..3, seed in any::<u64>(),
    ) {
        let pad = k / 2;
        let inputs = [
            random_tensor(Shape::new(n, cin, h, w), -1.0, 1.0, seed).with_grad(),
            random_tensor(Shape::new(cout, cin, k, k), -1.0, 1.0, seed ^ 1).with_grad(),
            random_tensor(Shape::new(1, cout, 1, 1), -1.0, 1.0, seed ^ 2).with_grad(),
        ];
        let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
        let r = grad_check("conv", &inputs, &cfg, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad)).unwrap();
        prop_assert!(r.passed, "rel err {}", r.max_rel_error);
    }

    #[test]
    fn adam_with_zero_lr_is_a_no_op(values in proptest::collection::vec(-3.0f64..3.0, 1..20), grads in proptest::collection::vec(-3.0f64..3.0, 20)) {
        let mut store = ParamStore::<f64>::new();
        let t = radsr::autodiff::Tensor::from_vec(Shape::new(1, 1, 1, values.len()), values.clone()).unwrap();
        store.push("w", t).unwrap();
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), &store);
        for _ in 0..3 {
            store.get_mut("w").unwrap().accumulate_grad(&grads[..values.len()]);
            adam.step(&mut store).unwrap();
        }
        prop_assert_eq!(store.get("w").unwrap().data(), before.get("w").unwrap().data());
    }

    #[test]
    fn attention_keeps_shape_and_forward_is_deterministic(
        seed in any::<u64>(), channel in any::<bool>(), h in 4usize..10, w in 4usize..10,
    ) {
        let mode = if channel { AttentionMode::Channel } else { AttentionMode::Spatial };
        let spec = ModelSpec::tiny(2, mode);
        let state = ModelState::<f64>::randomized(&spec, seed, 0.5).unwrap();
        let x = random_tensor(Shape::new(2, 1, h, w), 0.0, 1.0, seed ^ 3);
        let run = || {
            let mut g = Graph::new();
            let p = g.bind(&state.denoiser);
            let xv = g.input(&x);
            let y = denoiser_forward(&mut g, &spec.denoiser, &p, xv).unwrap();
            (g.shape(y), g.value(y).to_vec())
        };
        let (s1, v1) = run();
        let (s2, v2) = run();
        prop_assert_eq!(s1, x.shape());
        prop_assert_eq!(s2, s1);
        prop_assert_eq!(v1, v2);
    }
}
