use super::*;
use crate::net::NetworkConfig;
use tempfile::tempdir;

fn pgm16(w: usize, h: usize, samples: &[u16]) -> Vec<u8> {
    let mut b = format!("P5 {w} {h} 65535\n").into_bytes();
    b.extend(samples.iter().flat_map(|s| s.to_be_bytes()));
    b
}

#[test]
fn decodes_16_bit_pgm_with_unit_scale_and_mask() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    fs::write(&p, pgm16(2, 2, &[0, 1000, 2000, 3000])).unwrap();
    let d = load_depth(&p, 0.1).unwrap();
    assert_eq!((d.height, d.width), (2, 2));
    let expected = [0.0f32, 100.0, 200.0, 300.0];
    for (v, e) in d.values.iter().zip(expected) {
        assert!((v - e).abs() <= 1e-4 * e.max(1.0), "{v} vs {e}");
    }
    assert_eq!(d.valid, Some(vec![false, true, true, true]));
    assert_eq!(d.unit_scale, 0.1);
}

#[test]
fn header_comments_and_8_bit_samples() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    let mut bytes = b"P5\n# made by hand\n3 1\n# max\n255\n".to_vec();
    bytes.extend([0u8, 7, 255]);
    fs::write(&p, bytes).unwrap();
    assert_eq!(load_depth(&p, 1.0).unwrap().values, vec![0.0, 7.0, 255.0]);
}

#[test]
fn truncated_file_is_an_error() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    let mut bytes = pgm16(4, 4, &[5; 16]);
    bytes.truncate(bytes.len() - 3);
    fs::write(&p, bytes).unwrap();
    let err = load_depth(&p, 1.0).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn unsupported_format_reports_header_bytes() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    fs::write(&p, b"P2 2 2 255\n1 2 3 4\n").unwrap();
    match load_depth(&p, 1.0).unwrap_err() {
        Error::Format { header, .. } => assert_eq!(&header[..4], b"P2 2"),
        other => panic!("unexpected {other}"),
    }
    fs::write(&p, b"GIF89a").unwrap();
    assert!(matches!(load_depth(&p, 1.0), Err(Error::Format { .. })));
}

#[test]
fn missing_file_names_path() {
    let err = load_depth(Path::new("/nonexistent/x.pgm"), 1.0).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.pgm"));
}

fn ramp_depth() -> DepthMap {
    let vals: Vec<f32> = (0..12).map(|i| (i * 431 % 9000) as f32 * 0.1).collect();
    let mut d = DepthMap::new(3, 4, vals).unwrap().with_unit_scale(0.1);
    d.valid = Some(d.values.iter().map(|&v| v != 0.0).collect());
    d
}

#[test]
fn depth_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    for (name, fmt) in [("a.pgm", DepthFormat::Pgm16), ("a.png", DepthFormat::Png16)] {
        let p = dir.path().join(name);
        let d = ramp_depth();
        assert_eq!(save_depth(&d, &p, fmt).unwrap().clamped, 0);
        let back = load_depth(&p, 0.1).unwrap();
        assert_eq!(back.values, d.values, "{name}");
        assert_eq!(back.valid, d.valid);
        let bytes = fs::read(&p).unwrap();
        save_depth(&back, &p, fmt).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes, "{name}: re-save is byte-identical");
    }
}

#[test]
fn constant_map_payload_is_uniform() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("c.pgm");
    save_depth(&DepthMap::constant(5, 3, 1234.0), &p, DepthFormat::Pgm16).unwrap();
    let bytes = fs::read(&p).unwrap();
    let payload = &bytes[bytes.len() - 30..];
    assert!(payload.chunks_exact(2).all(|b| b == 1234u16.to_be_bytes()));
    assert!(bytes.starts_with(b"P5\n3 5\n65535\n"));
}

#[test]
fn out_of_range_values_are_clamped_and_counted() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("c.pgm");
    let d = DepthMap::new(1, 3, vec![-4.0, 70000.0, 5.0]).unwrap();
    assert_eq!(save_depth(&d, &p, DepthFormat::Pgm16).unwrap().clamped, 2);
    assert_eq!(load_depth(&p, 1.0).unwrap().values, vec![0.0, 65535.0, 5.0]);
}

#[test]
fn white_ppm_is_all_ones() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("w.ppm");
    let mut b = b"P6 3 2 255\n".to_vec();
    b.extend([255u8; 18]);
    fs::write(&p, b).unwrap();
    assert!(load_rgb(&p).unwrap().values.iter().all(|&v| v == 1.0));
}

#[test]
fn ppm_decodes_planar_rationals() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("k.ppm");
    let mut b = b"P6\n2 2\n255\n".to_vec();
    b.extend([0u8, 1, 2, 51, 102, 153, 204, 254, 255, 10, 20, 30]);
    fs::write(&p, b).unwrap();
    let img = load_rgb(&p).unwrap();
    assert_eq!(img.channel(0), &[0.0, 51.0 / 255.0, 204.0 / 255.0, 10.0 / 255.0]);
    assert_eq!(img.channel(1), &[1.0 / 255.0, 102.0 / 255.0, 254.0 / 255.0, 20.0 / 255.0]);
    assert_eq!(img.channel(2), &[2.0 / 255.0, 153.0 / 255.0, 1.0, 30.0 / 255.0]);
}

#[test]
fn rgb_save_load_round_trip() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("r.ppm");
    let vals: Vec<f32> = (0..3 * 6).map(|i| (i * 37 % 256) as f32 / 255.0).collect();
    let img = GuidanceImage::new(2, 3, vals).unwrap();
    save_rgb(&img, &p).unwrap();
    assert_eq!(load_rgb(&p).unwrap(), img);
}

#[test]
fn grayscale_is_rejected_as_guidance() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("g.pgm");
    fs::write(&p, pgm16(1, 1, &[3])).unwrap();
    assert!(load_rgb(&p).is_err());
}

#[test]
fn manifest_round_trip_and_relative_paths() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("set.tsv");
    fs::write(
        &p,
        "# name = toy\n# unit_scale = 0.1\n\n# a comment\nrgb/0.ppm\tdepth/0.pgm\ttrain\n/abs/1.ppm\tdepth/1.pgm\tval\n",
    )
    .unwrap();
    let m = Manifest::load(&p).unwrap();
    assert_eq!(m.name, "toy");
    assert_eq!(m.unit_scale, 0.1);
    assert_eq!(m.entries[0].rgb, dir.path().join("rgb/0.ppm"));
    assert_eq!(m.entries[1].rgb, PathBuf::from("/abs/1.ppm"));
    assert_eq!(m.split(Split::Val).count(), 1);
    let q = dir.path().join("copy.tsv");
    m.save(&q).unwrap();
    let again = Manifest::load(&q).unwrap();
    assert_eq!(again.entries, m.entries);
    assert!(fs::read_to_string(&q).unwrap().contains("rgb/0.ppm\tdepth/0.pgm\ttrain"));
}

#[test]
fn manifest_errors_carry_line_numbers() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("bad.tsv");
    fs::write(&p, "a\tb\ttrain\na\tb\tholdout\n").unwrap();
    let err = Manifest::load(&p).unwrap_err().to_string();
    assert!(err.contains(":2:") && err.contains("holdout"), "{err}");
    fs::write(&p, "a b train\n").unwrap();
    assert!(Manifest::load(&p).is_err());
}

fn tiny_cfg() -> NetworkConfig {
    NetworkConfig::for_scale(4).unwrap().with_base_channels(2).with_state_size(2)
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let cfg = tiny_cfg();
    let (net, params) = MsfumNet::<f32>::build(cfg, 3).unwrap();
    checkpoint_save(&params, &cfg, &p).unwrap();
    let ck = checkpoint_load(&p).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.params.names().collect::<Vec<_>>(), params.names().collect::<Vec<_>>());
    for (a, b) in ck.params.tensors().zip(params.tensors()) {
        assert_eq!(a.shape(), b.shape());
        let (av, bv): (Vec<u32>, Vec<u32>) = (a.to_vec().iter().map(|v| v.to_bits()).collect(), b.to_vec().iter().map(|v| v.to_bits()).collect());
        assert_eq!(av, bv);
    }
    assert_eq!(encode_checkpoint(&ck.params, &ck.config), fs::read(&p).unwrap());

    let reloaded = MsfumNet::from_params(ck.config, &ck.params).unwrap();
    let lr = Tensor::new(&[1, 1, 2, 2], vec![0.1, 0.5, 0.9, 0.3]).unwrap();
    let rgb = Tensor::full(&[1, 3, 8, 8], 0.25);
    let a: Vec<u32> = net.forward(&lr, &rgb).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = reloaded.forward(&lr, &rgb).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn corrupted_header_is_rejected() {
    let cfg = tiny_cfg();
    let (_, params) = MsfumNet::<f32>::build(cfg, 3).unwrap();
    let good = encode_checkpoint(&params, &cfg);
    for (pos, why) in [(0, "magic"), (4, "version"), (8, "scale")] {
        let mut bad = good.clone();
        bad[pos] ^= 0x40;
        assert!(decode_checkpoint(&bad).is_err(), "corrupt {why}");
    }
    assert!(decode_checkpoint(&good[..good.len() - 1]).is_err());
    let mut long = good.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
}

#[test]
fn parameters_inconsistent_with_config_are_rejected() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let (_, params) = MsfumNet::<f32>::build(tiny_cfg(), 3).unwrap();
    checkpoint_save(&params, &tiny_cfg().with_base_channels(3), &p).unwrap();
    assert!(matches!(checkpoint_load(&p), Err(Error::Checkpoint(_))));
}

#[test]
fn empty_parameter_set_is_a_valid_container() {
    let empty = NetworkParams::<f32>::new(Vec::new()).unwrap();
    let bytes = encode_checkpoint(&empty, &tiny_cfg());
    let ck = decode_checkpoint(&bytes).unwrap();
    assert!(ck.params.is_empty());
    assert_eq!(ck.config, tiny_cfg());
}
