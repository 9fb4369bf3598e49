use dermtriage_core::imaging::*;
use proptest::prelude::*;

fn image(w: u32, h: u32, seed: u8) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| {
        let v = (x.wrapping_mul(31) ^ y.wrapping_mul(17)) as u8;
        [v.wrapping_add(seed), v / 2, 255 - v]
    })
    .unwrap()
}

/// Box placement written out case by case, independent of `roi_rect`.
fn translated_box(w: u32, h: u32, cx: f64, cy: f64, r: f64, pad: f64) -> (u32, u32, u32) {
    let mut side = (2.0 * r * pad).round() as u32;
    side = side.max(1).min(w.min(h));
    let place = |c: f64, extent: u32| -> u32 {
        let start = (c - side as f64 / 2.0).floor();
        if start < 0.0 {
            0
        } else if start as u32 + side > extent {
            extent - side
        } else {
            start as u32
        }
    };
    (place(cx, w), place(cy, h), side)
}

#[test]
fn crop_examples() {
    let r = center_square_rect(4000, 3000, CropSpec::default()).unwrap();
    assert_eq!((r.x, r.y, r.side), (500, 0, 3000));
    let img = image(512, 512, 0);
    assert_eq!(center_square_crop(&img, CropSpec::default()).unwrap(), img);
    let r = center_square_rect(1000, 1000, CropSpec::new(0.8).unwrap()).unwrap();
    assert_eq!((r.x, r.y, r.side), (100, 100, 800));
}

#[test]
fn roi_examples() {
    let roi = |cx, cy, r| RoiCircle {
        center_x: cx,
        center_y: cy,
        radius: r,
    };
    let b = roi_rect(512, 512, roi(100.0, 100.0, 50.0), 1.2).unwrap();
    assert_eq!((b.x, b.y, b.right(), b.bottom()), (40, 40, 160, 160));
    let b = roi_rect(512, 512, roi(10.0, 10.0, 50.0), 1.0).unwrap();
    assert_eq!((b.x, b.y, b.right(), b.bottom()), (0, 0, 100, 100));
    assert!(matches!(
        roi_rect(512, 512, roi(100.0, 100.0, 0.0), 1.0),
        Err(dermtriage_core::Error::InvalidRoi(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn crop_is_square_bounded_centered_and_idempotent(
        w in 1u32..300, h in 1u32..300, f in 0.01f64..=1.0, seed in any::<u8>()
    ) {
        let img = image(w, h, seed);
        let spec = CropSpec::new(f).unwrap();
        let expected_side = (f * w.min(h) as f64).floor() as u32;
        match center_square_crop(&img, spec) {
            Ok(c) => {
                prop_assert_eq!(c.width(), c.height());
                prop_assert_eq!(c.width(), expected_side);
                let r = center_square_rect(w, h, spec).unwrap();
                prop_assert_eq!((r.x, r.y), ((w - r.side) / 2, (h - r.side) / 2));
                prop_assert_eq!(c.pixel(0, 0), img.pixel(r.x, r.y));
                let full = center_square_crop(&img, CropSpec::default()).unwrap();
                prop_assert_eq!(center_square_crop(&full, CropSpec::default()).unwrap(), full);
            }
            Err(_) => prop_assert_eq!(expected_side, 0),
        }
    }

    #[test]
    fn roi_box_is_square_and_inside(
        w in 1u32..400, h in 1u32..400,
        fx in 0.0f64..1.0, fy in 0.0f64..1.0,
        r in 0.1f64..300.0, pad in 1.0f64..3.0
    ) {
        let roi = RoiCircle { center_x: fx * (w as f64 - 1e-9), center_y: fy * (h as f64 - 1e-9), radius: r };
        let b = roi_rect(w, h, roi, pad).unwrap();
        prop_assert!(b.side >= 1 && b.right() <= w && b.bottom() <= h);
        prop_assert_eq!((b.x, b.y, b.side), translated_box(w, h, roi.center_x, roi.center_y, r, pad));
        let img = image(w, h, 3);
        let c = roi_crop(&img, roi, pad).unwrap();
        prop_assert_eq!((c.width(), c.height()), (b.side, b.side));
    }

    #[test]
    fn zero_magnitude_distortions_are_identity(
        w in 1u32..48, h in 1u32..48, seed in any::<u8>(), k in 0usize..4
    ) {
        let img = image(w, h, seed);
        let kind = DistortionKind::ALL[k];
        let spec = DistortionSpec { kind, magnitude: kind.neutral_magnitude() };
        prop_assert_eq!(apply_distortion(&img, spec).unwrap(), img);
    }

    #[test]
    fn exposure_keeps_constant_images_constant(v in any::<u8>(), gain in 0.01f64..8.0) {
        let img = ImageBuffer::filled(9, 7, [v, v, v]).unwrap();
        let out = apply_distortion(&img, DistortionSpec { kind: DistortionKind::Exposure, magnitude: gain }).unwrap();
        let first = out.pixel(0, 0);
        prop_assert!(out.pixels().chunks(3).all(|p| p == first));
    }

    #[test]
    fn distortions_are_pure(w in 16u32..40, seed in any::<u8>(), k in 0usize..4, m in 0.0f64..4.0) {
        let img = image(w, w, seed);
        let kind = DistortionKind::ALL[k];
        let magnitude = match kind {
            DistortionKind::SharpnessLoss => 1.0 + m,
            DistortionKind::Exposure => 0.1 + m,
            DistortionKind::Compression => m * 20.0,
            DistortionKind::Blur => m,
        };
        let spec = DistortionSpec { kind, magnitude };
        prop_assert_eq!(apply_distortion(&img, spec).unwrap(), apply_distortion(&img, spec).unwrap());
    }
}

#[test]
fn distortion_examples() {
    let gray = ImageBuffer::filled(16, 16, [128; 3]).unwrap();
    let bright = apply_distortion(
        &gray,
        DistortionSpec {
            kind: DistortionKind::Exposure,
            magnitude: 2.0,
        },
    )
    .unwrap();
    assert_eq!(bright, ImageBuffer::filled(16, 16, [255; 3]).unwrap());

    let board = ImageBuffer::from_fn(64, 64, |x, y| if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] }).unwrap();
    let blurred = apply_distortion(
        &board,
        DistortionSpec {
            kind: DistortionKind::Blur,
            magnitude: 3.0,
        },
    )
    .unwrap();
    assert!(
        quality_features(&blurred).unwrap().laplacian_variance < quality_features(&board).unwrap().laplacian_variance
    );
    assert!("warp".parse::<DistortionKind>().is_err());
}
