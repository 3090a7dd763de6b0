use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ugformer::data::ugt::{decode, encode};
use ugformer::data::Dtype;
use ugformer::kernels::conv::conv2d;
use ugformer::kernels::deform::deform_conv2d;
use ugformer::kernels::graph::{gcn_bridge, gram_adjacency, gram_softmax, normalize_adjacency};
use ugformer::pipeline::{augment_sample, compute_roi, crop_to_roi, minmax_normalize, restore_zero_pad, two_stage_predict};
use ugformer::pipeline::{Roi, Sample, SampleMeta, TwoStageConfig};
use ugformer::training::{composite_loss, dice_score, lr_on_validation, LossWeights, TrainConfig, TrainState};
use ugformer::{Model, ModelConfig, Result, Tensor};

fn uniform(r: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| r.random_range(lo..hi))
}

fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Tensor {
    Tensor::from_fn(&[h, w], |_| r.random_bool(p) as u8 as f32)
}

fn spectral_radius(p: &Tensor<f64>) -> f64 {
    let [n, _] = p.dims2().unwrap();
    let mut v = Tensor::from_fn(&[n, 1], |i| 1.0 + 0.1 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = p.matmul(&v).unwrap();
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let num: f64 = v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        lambda = (num / v.data().iter().map(|x| x * x).sum::<f64>()).abs();
        v = w.scale(1.0 / norm);
    }
    lambda
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn deform_with_zero_offsets_is_convolution(
        seed in any::<u64>(), batch in 1usize..3, ci in 1usize..4, co in 1usize..4, h in 3usize..8, w in 3usize..8,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, &[batch, ci, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[co, ci, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let off = Tensor::zeros(&[batch, 18, h, w]);
        let d = deform_conv2d(&x, &off, &k, Some(&b)).unwrap();
        let c = conv2d(&x, &k, Some(&b), 1, 1).unwrap();
        prop_assert_eq!(d.dims(), c.dims());
        let diff = d.data().iter().zip(c.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-6, "max diff {}", diff);
    }

    #[test]
    fn gram_rows_are_stochastic_and_symmetrization_exact(
        seed in any::<u64>(), c in 1usize..5, h in 1usize..5, w in 1usize..5, scale in 0.1f64..10.0,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let f = uniform(&mut r, &[c, h, w], -scale, scale);
        let a = gram_softmax(&f).unwrap();
        let n = h * w;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| a.at2(i, j)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-6);
        }
        let s = gram_adjacency(&f).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.at2(i, j).to_bits(), s.at2(j, i).to_bits());
                prop_assert!(s.at2(i, j) > 0.0 && s.at2(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn propagation_matrix_is_contractive(seed in any::<u64>(), n in 1usize..9, scale in 0.0f64..5.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let raw = uniform(&mut r, &[n, n], 0.0, scale.max(1e-9));
        let sym = Tensor::from_fn(&[n, n], |i| 0.5 * (raw.data()[i] + raw.data()[(i % n) * n + i / n]));
        let p = normalize_adjacency(&sym).unwrap();
        prop_assert!(spectral_radius(&p) <= 1.0 + 1e-6);
    }

    #[test]
    fn dice_is_symmetric_and_permutation_invariant(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_mask(&mut r, h, w, 0.4), random_mask(&mut r, h, w, 0.6));
        let d = dice_score(&a, &b).unwrap();
        prop_assert_eq!(d, dice_score(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(&mut r);
        let pa = Tensor::from_fn(&[h, w], |i| a.data()[perm[i]]);
        let pb = Tensor::from_fn(&[h, w], |i| b.data()[perm[i]]);
        prop_assert_eq!(d, dice_score(&pa, &pb).unwrap());
    }

    #[test]
    fn loss_is_nonnegative(
        seed in any::<u64>(), n in 1usize..40, spread in 0.0f64..30.0, bce in 0.0f64..2.0, dice in 0.0f64..2.0,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let z = uniform(&mut r, &[1, 1, 1, n], -spread - 1e-9, spread + 1e-9);
        let y = Tensor::<f64>::from_fn(&[1, 1, 1, n], |_| r.random_bool(0.5) as u8 as f64);
        let loss = composite_loss(&z, &y, LossWeights { bce, dice }).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn lr_never_increases(dices in prop::collection::vec(0.0f64..=1.0, 1..30), record in any::<bool>()) {
        let cfg = TrainConfig {
            decay_policy: if record { ugformer::training::DecayPolicy::Record } else { ugformer::training::DecayPolicy::Plateau },
            ..Default::default()
        };
        let mut s = TrainState::new(&cfg);
        let (mut decays, mut improvements) = (0, 0);
        for (i, &d) in dices.iter().enumerate() {
            let prev_best = s.best_dice;
            let next = lr_on_validation(&s, d, &cfg);
            prop_assert!(next.lr <= s.lr && next.lr > 0.0);
            if next.lr < s.lr {
                decays += 1;
            }
            if i > 0 && prev_best.is_some_and(|b| d > b) {
                improvements += 1;
            }
            if let (Some(a), Some(b)) = (prev_best, next.best_dice) {
                prop_assert!(b >= a);
            }
            s = next;
        }
        if record {
            prop_assert!(decays <= improvements);
        }
    }

    #[test]
    fn minmax_stays_in_unit_range_and_is_idempotent(values in prop::collection::vec(-1e4f32..1e4, 1..64)) {
        let t = Tensor::new(&[values.len()], values).unwrap();
        let n = minmax_normalize(&t);
        prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let lo = t.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = t.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            prop_assert_eq!(minmax_normalize(&n), n);
        }
    }

    #[test]
    fn roi_is_monotone(seed in any::<u64>(), h in 4usize..40, w in 4usize..40, tol in 0usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut a = random_mask(&mut r, h, w, 0.05);
        a.data_mut()[r.random_range(0..h * w)] = 1.0;
        let extra = random_mask(&mut r, h, w, 0.05);
        let b = a.zip_map(&extra, |x, y| x.max(y)).unwrap();
        let (ra, rb) = (compute_roi(&a, tol).unwrap(), compute_roi(&b, tol).unwrap());
        prop_assert!(rb.x_min <= ra.x_min && rb.y_min <= ra.y_min && rb.x_max >= ra.x_max && rb.y_max >= ra.y_max);
        // brute-force box check
        let on: Vec<(usize, usize)> = (0..h * w).filter(|&i| a.data()[i] != 0.0).map(|i| (i / w, i % w)).collect();
        let y0 = on.iter().map(|p| p.0).min().unwrap();
        let y1 = on.iter().map(|p| p.0).max().unwrap();
        let x0 = on.iter().map(|p| p.1).min().unwrap();
        let x1 = on.iter().map(|p| p.1).max().unwrap();
        prop_assert_eq!(
            (ra.y_min, ra.y_max, ra.x_min, ra.x_max),
            (y0.saturating_sub(tol), (y1 + tol).min(h - 1), x0.saturating_sub(tol), (x1 + tol).min(w - 1))
        );
    }

    #[test]
    fn crop_and_restore_are_inverse_on_the_roi(
        seed in any::<u64>(), h in 1usize..20, w in 1usize..20, a in any::<(u16, u16, u16, u16)>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (ya, yb) = (a.0 as usize % h, a.1 as usize % h);
        let (xa, xb) = (a.2 as usize % w, a.3 as usize % w);
        let roi = Roi { y_min: ya.min(yb), y_max: ya.max(yb), x_min: xa.min(xb), x_max: xa.max(xb), tolerance: 0, orig_h: h, orig_w: w };
        let img = Tensor::from_fn(&[h, w], |_| r.random_range(-1.0f32..1.0));
        let patch = crop_to_roi(&img, &roi).unwrap();
        let back = restore_zero_pad(&patch, &roi).unwrap();
        for i in 0..h * w {
            let expected = if roi.contains(i / w, i % w) { img.data()[i] } else { 0.0 };
            prop_assert_eq!(back.data()[i], expected);
        }
        prop_assert_eq!(crop_to_roi(&back, &roi).unwrap(), patch);
    }

    #[test]
    fn two_stage_scar_stays_inside_roi(seed in any::<u64>(), tol in 0usize..10) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::from_fn(&[32, 32], |_| r.random_range(0.0f32..1.0));
        let la_logits = Tensor::from_fn(&[1, 1, 32, 32], |_| r.random_range(-6.0f32..2.0));
        let lapm = move |_: &Tensor| -> Result<Tensor> { Ok(la_logits.clone()) };
        let s = r.random::<u64>();
        let spm = move |x: &Tensor| -> Result<Tensor> {
            let mut q = ChaCha8Rng::seed_from_u64(s);
            Ok(Tensor::from_fn(x.dims(), |_| q.random_range(-2.0f32..2.0)))
        };
        let cfg = TwoStageConfig { tolerance: tol, scar_input: 16, ..Default::default() };
        let out = two_stage_predict(&img, &lapm, &spm, &cfg).unwrap();
        match out.roi {
            Some(roi) => {
                for (i, &v) in out.scar_mask.data().iter().enumerate() {
                    prop_assert!(v == 0.0 || roi.contains(i / 32, i % 32));
                }
            }
            None => prop_assert!(out.scar_mask.data().iter().all(|&v| v == 0.0)),
        }
    }

    #[test]
    fn augmentation_keeps_masks_binary(seed in any::<u64>(), h in 8usize..24, w in 8usize..24) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::from_fn(&[1, h, w], |_| r.random_range(0.0f32..1.0));
        let la = random_mask(&mut r, h, w, 0.3);
        let scar = la.zip_map(&random_mask(&mut r, h, w, 0.5), |a, b| a * b).unwrap();
        let s = Sample::new(img, Some(la), Some(scar), SampleMeta { seed: 0, style: "t".into(), original_size: (h, w) }).unwrap();
        for a in augment_sample(&s, &mut r) {
            prop_assert_eq!(a.image.dims(), s.image.dims());
            for m in [a.la_mask.unwrap(), a.scar_mask.unwrap()] {
                prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn tensor_files_round_trip(dims in prop::collection::vec(1usize..5, 1..=4), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let real = Tensor::from_fn(&dims, |_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff));
        let (back, _) = decode(&encode(&real, Dtype::F32).unwrap()).unwrap();
        prop_assert!(back.dims() == real.dims() && back.data().iter().zip(real.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bytes = Tensor::from_fn(&dims, |_| r.random_range(0..=255u8) as f32);
        prop_assert_eq!(decode(&encode(&bytes, Dtype::U8).unwrap()).unwrap().0, bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bridge_is_equivariant_on_three_by_three(seed in any::<u64>(), c in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let f = uniform(&mut r, &[1, c, 3, 3], -1.0, 1.0);
        let w1 = uniform(&mut r, &[c, c], -1.0, 1.0);
        let w2 = uniform(&mut r, &[c, c], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut r);
        let permute = |t: &Tensor<f64>| Tensor::from_fn(t.dims(), |i| t.data()[(i / 9) * 9 + perm[i % 9]]);
        let (y, _) = gcn_bridge(&f, &w1, &w2).unwrap();
        let (py, _) = gcn_bridge(&permute(&f), &w1, &w2).unwrap();
        prop_assert_eq!(py, permute(&y));
    }

    #[test]
    fn forward_keeps_spatial_shape(seed in any::<u64>(), stages in 1usize..3, hk in 1usize..3, wk in 1usize..3, batch in 1usize..3) {
        let cfg = ModelConfig { base_channels: 4, num_stages: stages, heads: 2, node_budget: 64, ..ModelConfig::default() };
        let model = Model::<f32>::new(cfg.clone(), seed).unwrap();
        let (h, w) = (hk * cfg.divisor(), wk * cfg.divisor());
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[batch, 1, h, w], |_| r.random_range(0.0f32..=1.0));
        let y = model.predict(&x).unwrap();
        prop_assert_eq!(y.dims(), &[batch, 1, h, w]);
        prop_assert!(y.is_finite());
    }
}
