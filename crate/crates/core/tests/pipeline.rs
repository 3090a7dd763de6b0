use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ugformer::data::{generate_phantom, PhantomSpec, Style};
use ugformer::pipeline::augment::{AUGMENT_COPIES, MAX_ANGLE_DEG};
use ugformer::pipeline::{
    augment_sample, compute_roi, crop_black_margins, crop_to_roi, minmax_normalize, prepare_sample, resize_bilinear,
    resize_nearest, restore_zero_pad, two_stage_predict, Roi, Sample, SampleMeta, Transform, TwoStageConfig,
};
use ugformer::training::dice_score;
use ugformer::{Error, Result, Tensor};

fn plane(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Tensor {
    Tensor::from_fn(&[h, w], |i| f(i / w, i % w))
}

fn mask_from(h: usize, w: usize, pts: &[(usize, usize)]) -> Tensor {
    let mut m = Tensor::zeros(&[h, w]);
    for &(y, x) in pts {
        m.data_mut()[y * w + x] = 1.0;
    }
    m
}

// ---- margins, resizing, normalization ----

#[test]
fn zero_border_is_cropped() {
    let img = plane(10, 10, |y, x| if (2..8).contains(&y) && (2..8).contains(&x) { 1.0 } else { 0.0 });
    let (crop, off) = crop_black_margins(&img).unwrap();
    assert_eq!(crop.dims(), &[6, 6]);
    assert_eq!(off, (2, 2));
    assert!(crop.data().iter().all(|&v| v == 1.0));
}

#[test]
fn bright_image_is_unchanged() {
    let img = plane(5, 7, |y, x| 0.5 + 0.01 * (y + x) as f32);
    let (crop, off) = crop_black_margins(&img).unwrap();
    assert_eq!(crop, img);
    assert_eq!(off, (0, 0));
}

#[test]
fn faint_border_below_threshold_is_removed() {
    // 1% border, interior at full intensity, plus a 3% column that must stay
    let img = plane(12, 12, |y, x| {
        if x == 10 && (1..11).contains(&y) {
            0.03
        } else if (3..9).contains(&y) && (1..9).contains(&x) {
            1.0
        } else {
            0.01
        }
    });
    let (crop, off) = crop_black_margins(&img).unwrap();
    // scan-line oracle: keep lines whose max exceeds 2% of the global max
    let rows: Vec<usize> = (0..12).filter(|&y| (0..12).any(|x| img.at2(y, x) > 0.02)).collect();
    let cols: Vec<usize> = (0..12).filter(|&x| (0..12).any(|y| img.at2(y, x) > 0.02)).collect();
    let (r0, r1) = (rows[0], *rows.last().unwrap());
    let (c0, c1) = (cols[0], *cols.last().unwrap());
    assert_eq!(off, (r0, c0));
    assert_eq!(crop.dims(), &[r1 - r0 + 1, c1 - c0 + 1]);
    assert_eq!((r0, r1, c0, c1), (1, 10, 1, 10));
}

#[test]
fn all_black_image_is_rejected() {
    assert!(matches!(crop_black_margins(&Tensor::zeros(&[4, 4])), Err(Error::AllBlackImage)));
}

#[test]
fn same_size_resize_is_identity() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let img = plane(5, 6, |_, _| r.random_range(0.0..1.0));
    assert_eq!(resize_bilinear(&img, 5, 6).unwrap(), img);
    assert_eq!(resize_nearest(&img, 5, 6).unwrap(), img);
}

#[test]
fn constant_image_resizes_to_constant() {
    let img = Tensor::full(&[3, 5], 0.25);
    assert!(resize_bilinear(&img, 7, 4).unwrap().data().iter().all(|&v| v == 0.25));
}

#[test]
fn upsampling_matches_per_pixel_bilinear_oracle() {
    let src = [[0.0f64, 1.0], [2.0, 3.0]];
    let img = plane(2, 2, |y, x| src[y][x] as f32);
    let out = resize_bilinear(&img, 4, 4).unwrap();
    let coord = |t: usize| ((t as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    for ty in 0..4 {
        for tx in 0..4 {
            let (sy, sx) = (coord(ty), coord(tx));
            let expected = src[0][0] * (1.0 - sy) * (1.0 - sx)
                + src[0][1] * (1.0 - sy) * sx
                + src[1][0] * sy * (1.0 - sx)
                + src[1][1] * sy * sx;
            assert!((out.at2(ty, tx) as f64 - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_target_size_is_rejected() {
    assert!(matches!(resize_bilinear(&Tensor::zeros(&[2, 2]), 0, 3), Err(Error::ZeroTargetSize)));
}

#[test]
fn minmax_examples() {
    let t = Tensor::new(&[3], vec![2.0, 4.0, 6.0]).unwrap();
    assert_eq!(minmax_normalize(&t).data(), &[0.0, 0.5, 1.0]);
    assert!(minmax_normalize(&Tensor::full(&[2, 2], 3.0)).data().iter().all(|&v| v == 0.0));
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let n = minmax_normalize(&Tensor::from_fn(&[50], |_| r.random_range(-3.0..9.0)));
    let lo = n.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = n.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    assert_eq!((lo, hi), (0.0, 1.0));
}

#[test]
fn prepared_phantom_is_normalized_and_binary() {
    let s = generate_phantom(&PhantomSpec::random(3, 96, 96, Style::LowRes)).unwrap();
    let p = prepare_sample(&s, 64).unwrap();
    assert_eq!(p.image.dims(), &[1, 64, 64]);
    assert!(p.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    for m in [&p.la_mask, &p.scar_mask] {
        let m = m.as_ref().unwrap();
        assert_eq!(m.dims(), &[64, 64]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

// ---- augmentation ----

fn sample(h: usize, w: usize, la: Tensor) -> Sample {
    let img = Tensor::from_fn(&[1, h, w], |i| ((i * 7) % 11) as f32 / 11.0);
    Sample::new(img, Some(la), None, SampleMeta { seed: 0, style: "test".into(), original_size: (h, w) }).unwrap()
}

#[test]
fn identity_transform_leaves_sample_unchanged() {
    let s = sample(9, 12, mask_from(9, 12, &[(2, 3), (4, 4)]));
    let t = Transform::IDENTITY.apply(&s);
    assert_eq!(t.image, s.image);
    assert_eq!(t.la_mask, s.la_mask);
}

#[test]
fn four_copies_per_input() {
    let s = sample(16, 16, mask_from(16, 16, &[(8, 8)]));
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let out = augment_sample(&s, &mut r);
    assert_eq!(out.len(), 4);
    assert_eq!(AUGMENT_COPIES, 4);
    for a in &out {
        assert!(a.la_mask.as_ref().unwrap().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn shifts_stay_below_a_tenth_of_width() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let (mut max_shift, mut max_angle) = (0, 0.0f64);
    for _ in 0..10_000 {
        let t = Transform::random(&mut r, 224);
        assert!(t.dx.abs() <= 22 && t.dy.abs() <= 22);
        assert!((0.0..=MAX_ANGLE_DEG).contains(&t.angle_deg));
        max_shift = max_shift.max(t.dx.abs()).max(t.dy.abs());
        max_angle = max_angle.max(t.angle_deg);
    }
    assert_eq!(max_shift, 22);
    assert!(max_angle > 170.0);
}

fn disk(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Tensor {
    plane(h, w, |y, x| if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r { 1.0 } else { 0.0 })
}

#[test]
fn rotated_disk_mask_tracks_analytic_disk() {
    let (h, w) = (96, 96);
    let (cy, cx, rad) = (38.0, 57.0, 18.0);
    let s = sample(h, w, disk(h, w, cy, cx, rad));
    let (oy, ox) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for step in 0..=36 {
        let angle = step as f64 * 5.0;
        let t = Transform { angle_deg: angle, dx: 0, dy: 0 };
        let rotated = t.apply(&s);
        // the transform reads source R·(p − o) + o, so the centre moves by Rᵀ
        let (sin, cos) = angle.to_radians().sin_cos();
        let (ry, rx) = (cy - oy, cx - ox);
        let analytic = disk(h, w, cos * ry + sin * rx + oy, -sin * ry + cos * rx + ox, rad);
        let d = dice_score(rotated.la_mask.as_ref().unwrap(), &analytic).unwrap();
        assert!(d >= 0.98, "angle {angle}: dice {d}");
    }
}

// ---- ROI ----

#[test]
fn roi_expands_box_by_tolerance() {
    let m = mask_from(224, 224, &[(50, 40), (90, 80)]);
    let roi = compute_roi(&m, 30).unwrap();
    assert_eq!((roi.x_min, roi.y_min, roi.x_max, roi.y_max), (10, 20, 110, 120));
}

#[test]
fn roi_clamps_at_frame_edges() {
    let m = mask_from(64, 64, &[(0, 0), (5, 7)]);
    let roi = compute_roi(&m, 30).unwrap();
    assert_eq!((roi.x_min, roi.y_min), (0, 0));
    let m = mask_from(64, 64, &[(63, 60)]);
    let roi = compute_roi(&m, 30).unwrap();
    assert_eq!((roi.x_max, roi.y_max), (63, 63));
}

#[test]
fn single_pixel_roi() {
    let roi = compute_roi(&mask_from(224, 224, &[(100, 100)]), 30).unwrap();
    assert_eq!((roi.x_min, roi.y_min, roi.x_max, roi.y_max), (70, 70, 130, 130));
}

#[test]
fn empty_mask_has_no_roi() {
    assert!(matches!(compute_roi(&Tensor::zeros(&[8, 8]), 30), Err(Error::EmptyMask)));
}

#[test]
fn crop_edge_cases() {
    let img = plane(6, 5, |y, x| (y * 5 + x) as f32);
    assert_eq!(crop_to_roi(&img, &Roi::full_frame(6, 5)).unwrap(), img);
    let one = Roi { x_min: 3, y_min: 2, x_max: 3, y_max: 2, tolerance: 0, orig_h: 6, orig_w: 5 };
    assert_eq!(crop_to_roi(&img, &one).unwrap().data(), &[13.0]);
    let out = Roi { x_max: 5, ..one };
    assert!(matches!(crop_to_roi(&img, &out), Err(Error::RoiOutOfBounds(_))));
}

#[test]
fn restore_places_patch_and_zeros_elsewhere() {
    let img = plane(10, 12, |y, x| 1.0 + (y * 12 + x) as f32);
    let roi = Roi { x_min: 2, y_min: 3, x_max: 7, y_max: 5, tolerance: 0, orig_h: 10, orig_w: 12 };
    let patch = crop_to_roi(&img, &roi).unwrap();
    let back = restore_zero_pad(&patch, &roi).unwrap();
    for y in 0..10 {
        for x in 0..12 {
            let expected = if roi.contains(y, x) { img.at2(y, x) } else { 0.0 };
            assert_eq!(back.at2(y, x), expected);
        }
    }
    assert_eq!(back.sum(), patch.sum());
    assert_eq!(crop_to_roi(&back, &roi).unwrap(), patch);
    let zero = restore_zero_pad(&Tensor::zeros(&[3, 6]), &roi).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    assert!(matches!(restore_zero_pad(&Tensor::zeros(&[3, 5]), &roi), Err(Error::PatchRoiMismatch { .. })));
}

// ---- two-stage prediction ----

#[test]
fn negative_atrium_logits_fall_back_to_empty_scar() {
    let img = Tensor::full(&[32, 32], 0.4);
    let neg = |x: &Tensor| -> Result<Tensor> { Ok(Tensor::full(x.dims(), -3.0)) };
    let out = two_stage_predict(&img, &neg, &neg, &TwoStageConfig::default()).unwrap();
    assert!(out.empty_la);
    assert_eq!(out.la_mask.dims(), &[32, 32]);
    assert_eq!(out.scar_mask, Tensor::zeros(&[32, 32]));
}

#[test]
fn phantom_scar_prediction_stays_inside_roi() {
    for seed in 0..6 {
        let s = prepare_sample(&generate_phantom(&PhantomSpec::random(seed, 96, 96, Style::ALL[seed as usize % 4])).unwrap(), 64)
            .unwrap();
        let la = s.la_mask.clone().unwrap();
        let lapm = move |_: &Tensor| -> Result<Tensor> { Ok(la.map(|v| if v > 0.0 { 4.0 } else { -4.0 })) };
        // scar model that claims scar everywhere in its patch
        let spm = |x: &Tensor| -> Result<Tensor> { Ok(Tensor::full(x.dims(), 4.0)) };
        let cfg = TwoStageConfig { tolerance: 8, scar_input: 32, ..Default::default() };
        let out = two_stage_predict(&s.plane(), &lapm, &spm, &cfg).unwrap();
        assert_eq!(out.scar_mask.dims(), &[64, 64]);
        let roi = out.roi.unwrap();
        assert_eq!(roi, compute_roi(s.la_mask.as_ref().unwrap(), 8).unwrap());
        for (i, &v) in out.scar_mask.data().iter().enumerate() {
            assert_eq!(v == 1.0, roi.contains(i / 64, i % 64));
        }
        // the true scar lies on the rim, which the ROI covers
        let scar = s.scar_mask.as_ref().unwrap();
        for (i, &v) in scar.data().iter().enumerate() {
            if v == 1.0 {
                assert!(roi.contains(i / 64, i % 64));
            }
        }
        assert_eq!(out.patch.unwrap().dims(), &[32, 32]);
    }
}
