use handsar_core::phase_error::Trajectory;
use handsar_core::{Complex64, ComplexGrid};
use handsar_io::binfmt::{
    decode_grid, decode_trajectory, encode_grid, encode_trajectory, read_grid, read_trajectory, write_grid,
    write_trajectory,
};
use handsar_io::checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_VERSION};
use handsar_io::pgm::{decode_pgm16, encode_amplitude_pgm, read_pgm16, export_amplitude_image};
use handsar_io::{read_checkpoint, write_checkpoint, IoError, TrainingMeta};
use handsar_nn::model::IfnetArch;
use handsar_nn::UnfoldingModel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f32_grid(rows: usize, cols: usize, seed: u64) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexGrid::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1e3f32..1e3) as f64, rng.random_range(-1e3f32..1e3) as f64)
    })
}

fn bits(g: &ComplexGrid) -> Vec<(u64, u64)> {
    g.as_slice().iter().map(|v| (v.re.to_bits(), v.im.to_bits())).collect()
}

proptest! {
    #[test]
    fn grid_round_trip_is_bitwise(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let g = f32_grid(rows, cols, seed);
        let back = decode_grid(&encode_grid(&g).unwrap()).unwrap();
        prop_assert_eq!(back.dims(), (rows, cols));
        prop_assert_eq!(bits(&back), bits(&g));
    }

    #[test]
    fn trajectory_round_trip_is_bitwise(dz in prop::collection::vec(-1.0f64..1.0, 1..200)) {
        let t = Trajectory::new(dz.clone(), 0);
        let back = decode_trajectory(&encode_trajectory(&t).unwrap()).unwrap();
        let a: Vec<u64> = back.dz.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = dz.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let g = f32_grid(7, 5, 3);
    write_grid(&dir.path().join("g.csg"), &g).unwrap();
    assert_eq!(bits(&read_grid(&dir.path().join("g.csg")).unwrap()), bits(&g));

    let t = Trajectory::new(vec![1e-4, -3.5e-4, f64::MIN_POSITIVE], 9);
    write_trajectory(&dir.path().join("t.trj"), &t).unwrap();
    assert_eq!(read_trajectory(&dir.path().join("t.trj")).unwrap().dz, t.dz);

    let missing = read_grid(&dir.path().join("none.csg"));
    assert!(matches!(missing, Err(IoError::Io { .. })));
}

fn small_arch() -> IfnetArch {
    IfnetArch {
        n_stages: 2,
        n_resblocks: 1,
        rows: 16,
        cols: 16,
        ..IfnetArch::default()
    }
}

#[test]
fn checkpoint_reload_reproduces_forward_pass_bitwise() {
    let model = UnfoldingModel::<f32>::new(small_arch(), 11).unwrap();
    let meta = TrainingMeta {
        best_epoch: Some(3),
        dataset: Some("unit".into()),
        ..TrainingMeta::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ifn");
    write_checkpoint(&path, &model, &meta).unwrap();
    let (back, meta_back) = read_checkpoint(&path).unwrap();
    assert_eq!(meta_back, meta);
    assert_eq!(back.arch, model.arch);
    let pv: Vec<u32> = model.params.values().iter().map(|v| v.to_bits()).collect();
    let bv: Vec<u32> = back.params.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(pv, bv);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = ComplexGrid::from_fn(16, 16, |_, _| Complex64::new(rng.random(), rng.random()));
    let (a_img, a_phi) = model.forward_grid(&input).unwrap();
    let (b_img, b_phi) = back.forward_grid(&input).unwrap();
    assert_eq!(bits(&a_img), bits(&b_img));
    assert_eq!(bits(&a_phi), bits(&b_phi));
}

#[test]
fn checkpoint_errors_are_typed() {
    let model = UnfoldingModel::<f32>::new(small_arch(), 1).unwrap();
    let bytes = encode_checkpoint(&model, &TrainingMeta::default()).unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&wrong_version),
        Err(IoError::Version { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));

    let short = &bytes[..bytes.len() - 4];
    assert!(matches!(decode_checkpoint(short), Err(IoError::HeaderPayloadMismatch { .. })));

    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_checkpoint(&long), Err(IoError::HeaderPayloadMismatch { .. })));

    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad_magic), Err(IoError::BadMagic { .. })));
}

#[test]
fn constant_image_exports_as_zeros() {
    let g = ComplexGrid::filled(4, 6, Complex64::new(2.0, -1.0));
    let img = decode_pgm16(&encode_amplitude_pgm(&g)).unwrap();
    assert_eq!(img.dims(), (4, 6));
    assert!(img.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn pgm_header_and_layout() {
    let g = ComplexGrid::from_fn(2, 3, |r, c| Complex64::new((r * 3 + c) as f64, 0.0));
    let bytes = encode_amplitude_pgm(&g);
    let header = b"P5\n3 2\n65535\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 12);
    assert_eq!(&bytes[header.len()..header.len() + 2], &[0, 0]);
    assert_eq!(&bytes[bytes.len() - 2..], &[0xff, 0xff]);
}

#[test]
fn pgm_quantization_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let g = f32_grid(9, 13, 21);
    export_amplitude_image(&g, &path).unwrap();
    let img = read_pgm16(&path).unwrap();
    assert_eq!(img.dims(), (9, 13));
    // oracle: min-max normalized magnitudes computed directly
    let amps: Vec<f64> = g.as_slice().iter().map(|v| (v.re * v.re + v.im * v.im).sqrt()).collect();
    let lo = amps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = amps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (a, p) in amps.iter().zip(img.as_slice()) {
        assert!(((a - lo) / (hi - lo) - p).abs() <= 1.0 / 65535.0);
    }
}
