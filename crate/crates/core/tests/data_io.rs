mod common;

use std::f64::consts::PI;

use common::rng;
use tfcns::data::*;
use tfcns::tensor::Tensor;
use tfcns::Error;

#[test]
fn tensor_file_round_trips_every_dtype() {
    let dir = tempfile::tempdir().unwrap();
    let f32s = Tensor::<f32>::randn(&[2, 3, 4, 5], 1.0, &mut rng(1)).unwrap();
    write_tensor(dir.path().join("a.tnsr"), &f32s).unwrap();
    let back: Tensor<f32> = read_tensor(dir.path().join("a.tnsr")).unwrap();
    assert_eq!(back.shape(), f32s.shape());
    assert!(back.data().iter().zip(f32s.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let f64s = Tensor::<f64>::randn(&[7], 1.0, &mut rng(2)).unwrap();
    assert_eq!(decode_tensor::<f64>(&encode_tensor(&f64s)).unwrap(), f64s);
    let labels = Tensor::<u8>::from_vec(&[4, 4], (0..16).map(|i| (i * 17) as u8).collect()).unwrap();
    assert_eq!(decode_tensor::<u8>(&encode_tensor(&labels)).unwrap(), labels);
    let ints = Tensor::<i32>::from_vec(&[3, 1], vec![-5, 0, i32::MAX]).unwrap();
    assert_eq!(decode_tensor::<i32>(&encode_tensor(&ints)).unwrap(), ints);
    let scalar = Tensor::<f64>::scalar(2.5);
    assert_eq!(decode_tensor::<f64>(&encode_tensor(&scalar)).unwrap(), scalar);
}

#[test]
fn tensor_file_layout_is_pinned() {
    let t = Tensor::<u8>::from_vec(&[1, 2], vec![7, 9]).unwrap();
    let bytes = encode_tensor(&t);
    let mut expect = b"TNSR".to_vec();
    expect.extend_from_slice(&[1, 0, 2, 2, 1, 0, 0, 0, 2, 0, 0, 0, 7, 9]);
    let crc = crc32fast_oracle(&expect);
    expect.extend_from_slice(&crc.to_le_bytes());
    assert_eq!(bytes, expect);
}

/// Bitwise CRC-32 (IEEE, reflected) used as an independent check.
fn crc32fast_oracle(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn tensor_file_errors() {
    let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let bytes = encode_tensor(&t);
    for n in [0, 3, 10, bytes.len() - 1] {
        assert!(matches!(decode_tensor::<f32>(&bytes[..n]), Err(Error::Format(_))), "truncated at {n}");
    }
    let mut flipped = bytes.clone();
    flipped[14] ^= 1;
    assert!(matches!(decode_tensor::<f32>(&flipped), Err(Error::Format(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_tensor::<f32>(&magic), Err(Error::Format(_))));
    assert!(matches!(decode_tensor::<f64>(&bytes), Err(Error::Format(_))));
}

#[test]
fn mask_ppm_checkerboard() {
    let mask = Tensor::<u8>::from_vec(&[2, 2], vec![0, 1, 1, 0]).unwrap();
    let palette = [[10, 20, 30], [200, 100, 50]];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ppm");
    write_mask_image(&path, &mask, &palette).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"P6\n2 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[10, 20, 30, 200, 100, 50, 200, 100, 50, 10, 20, 30]);
    let bad = Tensor::<u8>::from_vec(&[1, 1], vec![2]).unwrap();
    assert!(matches!(mask_rgb(&bad, &palette), Err(Error::ClassOutOfRange { class: 2, .. })));
    assert_eq!(DEFAULT_PALETTE[0], [0, 0, 0]);
    assert_eq!(DEFAULT_PALETTE[1], [255, 0, 0]);
}

#[test]
fn heatmap_and_overlay() {
    let zeros = Tensor::<f32>::zeros(&[3, 2]).unwrap();
    let rgb = heatmap_rgb(&zeros).unwrap();
    assert!(rgb.chunks(3).all(|p| p == colormap(0)));
    assert_eq!(colormap(0), [0, 0, 255]);
    assert_eq!(colormap(255), [255, 0, 0]);

    let heat = Tensor::<f32>::from_vec(&[2, 2], vec![0.0, 0.3, 0.6, 1.0]).unwrap();
    let image = Tensor::<f32>::full(&[1, 2, 2], 0.5).unwrap();
    assert!(cam_overlay_rgb(&image, &heat, 1.0).unwrap().iter().all(|&b| b == 0));
    let everywhere = cam_overlay_rgb(&image, &heat, 0.0).unwrap();
    assert_eq!(&everywhere[..3], &[0, 0, 0]);
    assert!(everywhere[3..].chunks(3).all(|p| p != [0, 0, 0]));
    let default = cam_overlay_rgb(&image, &heat, DEFAULT_CAM_THRESHOLD).unwrap();
    assert_eq!(&default[..6], &[0; 6]);
    // 0.5 gray (level 128) blended with colormap(255) = (255, 0, 0).
    assert_eq!(&default[9..], &[191, 64, 64]);
}

#[test]
fn synthetic_noise_free_intensities_and_determinism() {
    let spec = SyntheticSpec {
        noise_sigma: 0.0,
        ..SyntheticSpec::new(4, 32, 4, 9)
    };
    let cases = generate_synthetic(&spec).unwrap();
    assert_eq!(cases.len(), 4);
    for c in &cases {
        for (&v, &m) in c.image.data().iter().zip(c.mask.data()) {
            assert_eq!(v, spec.intensity(m as usize));
        }
        for class in 0..4u8 {
            assert!(c.mask.data().contains(&class));
        }
        assert!(c.mask.data().iter().all(|&m| m < 4));
    }
    assert_eq!(generate_synthetic(&spec).unwrap(), cases);
    let noisy = SyntheticSpec::new(2, 32, 4, 9);
    let a = generate_synthetic(&noisy).unwrap();
    assert_eq!(a, generate_synthetic(&noisy).unwrap());
    assert!(a[0].image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a, generate_synthetic(&SyntheticSpec::new(2, 32, 4, 10)).unwrap());
}

#[test]
fn synthetic_areas_within_radius_bounds() {
    let spec = SyntheticSpec {
        r_min: 4.0,
        r_max: 7.0,
        ..SyntheticSpec::new(20, 64, 5, 3)
    };
    for case in generate_synthetic(&spec).unwrap() {
        for class in 1..5u8 {
            let count = case.mask.data().iter().filter(|&&m| m == class).count() as f64;
            // Pixel-centre rasterization misses at most a one-pixel band
            // along each boundary curve.
            let ext = 7.0 * 2.0 / 3f64.sqrt();
            let slack = 2.0 * 2.0 * PI * ext + 8.0;
            assert!(count >= PI * 16.0 - slack && count <= PI * 49.0 + slack, "class {class}: {count}");
        }
        for (i, &m) in case.mask.data().iter().enumerate() {
            if m == 1 {
                // Disks sit at least one pixel from the border.
                let (y, x) = (i / 64, i % 64);
                assert!(y > 0 && x > 0 && y < 63 && x < 63);
            }
        }
    }
    let crowded = SyntheticSpec {
        r_min: 10.0,
        r_max: 10.0,
        ..SyntheticSpec::new(1, 24, 6, 0)
    };
    assert!(generate_synthetic(&crowded).is_err());
}

#[test]
fn dataset_directory_round_trip_and_orphans() {
    let dir = tempfile::tempdir().unwrap();
    let cases = generate_synthetic(&SyntheticSpec::new(3, 16, 3, 1)).unwrap();
    save_dataset(dir.path(), &cases[..1]).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, cases[..1]);

    save_dataset(dir.path(), &cases).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), cases);

    write_tensor(dir.path().join("stray.msk.tnsr"), &cases[0].mask).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Dataset(msg)) => assert!(msg.contains("stray.msk.tnsr"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_dataset(dir.path().join("missing")), Err(Error::Dataset(_))));
}

#[test]
fn split_is_seeded_and_partitions() {
    let items: Vec<u32> = (0..10).collect();
    let (a, b) = split(&items, 0.8, 5).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
    assert_eq!(split(&items, 0.8, 5).unwrap(), (a.clone(), b.clone()));
    let mut all: Vec<u32> = a.into_iter().chain(b).collect();
    all.sort();
    assert_eq!(all, items);
    assert!(split(&items, 1.5, 0).is_err());
}

#[test]
fn pair_validation() {
    let img = Tensor::<f32>::zeros(&[4, 4]).unwrap();
    let mask = Tensor::<u8>::from_vec(&[4, 4], vec![3; 16]).unwrap();
    let p = SegmentationPair::new(img, mask.clone(), "x").unwrap();
    assert_eq!(p.image.shape(), &[1, 4, 4]);
    assert!(p.check_classes(4).is_ok());
    assert!(p.check_classes(3).is_err());
    assert!(SegmentationPair::new(Tensor::zeros(&[1, 4, 5]).unwrap(), mask, "y").is_err());
}
