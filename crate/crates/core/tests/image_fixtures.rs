//! Decoding agrees with a reference decoder (Pillow) on a small fixture
//! corpus; `fixtures/expected.txt` lists the integer samples it produced.

use std::path::PathBuf;

use msfum_core::io::{load_depth, load_rgb};

struct Golden {
    file: String,
    width: usize,
    height: usize,
    samples: Vec<u32>,
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden() -> Vec<Golden> {
    let text = std::fs::read_to_string(fixtures().join("expected.txt")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            Golden {
                file: cols[0].to_string(),
                width: cols[1].parse().unwrap(),
                height: cols[2].parse().unwrap(),
                samples: cols[3].split(' ').map(|v| v.parse().unwrap()).collect(),
            }
        })
        .collect()
}

#[test]
fn colour_fixtures_match_reference_decoder() {
    let mut seen = 0;
    for g in golden().iter().filter(|g| g.file.starts_with("rgb")) {
        let img = load_rgb(&fixtures().join(&g.file)).unwrap();
        assert_eq!((img.width, img.height), (g.width, g.height), "{}", g.file);
        let n = g.width * g.height;
        for (i, px) in g.samples.chunks_exact(3).enumerate() {
            for c in 0..3 {
                assert_eq!(img.values[c * n + i], px[c] as f32 / 255.0, "{} pixel {i} channel {c}", g.file);
            }
        }
        seen += 1;
    }
    assert_eq!(seen, 3);
}

#[test]
fn depth_fixtures_match_reference_decoder() {
    let mut seen = 0;
    for g in golden().iter().filter(|g| g.file.starts_with("depth")) {
        let d = load_depth(&fixtures().join(&g.file), 1.0).unwrap();
        assert_eq!((d.width, d.height), (g.width, g.height), "{}", g.file);
        let expected: Vec<f32> = g.samples.iter().map(|&s| s as f32).collect();
        assert_eq!(d.values, expected, "{}", g.file);
        let mask: Vec<bool> = g.samples.iter().map(|&s| s != 0).collect();
        assert_eq!(d.valid.as_deref(), Some(&mask[..]), "{}", g.file);
        seen += 1;
    }
    assert_eq!(seen, 4);
}
