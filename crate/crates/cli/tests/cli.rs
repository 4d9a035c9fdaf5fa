use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqnet_core::image_io::{load_image, save_image, to_u8};
use eqnet_core::net::{Network, NetworkSpec};
use eqnet_core::Tensor;

fn eqnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn bytes(img: &Tensor<f32>) -> Vec<u8> {
    img.data().iter().map(|&v| to_u8(v)).collect()
}

/// Three grey images with sizes that are not multiples of 4.
fn write_inputs(dir: &Path) -> PathBuf {
    let imgs = dir.join("imgs");
    std::fs::create_dir_all(&imgs).unwrap();
    for (i, (h, w)) in [(30, 37), (21, 16), (17, 29)].into_iter().enumerate() {
        let t = Tensor::from_fn([1, 1, h, w], |_, _, y, x| ((y * 7 + x * 3 + i * 11) % 256) as f32 / 255.0);
        save_image(&t, imgs.join(format!("img{i}.png"))).unwrap();
    }
    imgs
}

fn save_net(dir: &Path, spec: NetworkSpec, zero: bool) -> PathBuf {
    let mut net = Network::<f32>::build(&NetworkSpec {
        in_channels: 1,
        base_channels: 4,
        depth: 2,
        blocks_per_stage: 1,
        ..spec
    })
    .unwrap();
    if zero {
        net.zero_weights();
    }
    let path = dir.join("net.eqnet");
    net.save(&path).unwrap();
    path
}

#[test]
fn zero_sigma_noise_reproduces_inputs() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let out = eqnet(dir.path(), &["--out", "o", "gen-noise", "--in", "imgs", "--family", "gaussian", "--sigma", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let a = load_image(dir.path().join(format!("imgs/img{i}.png"))).unwrap();
        let b = load_image(dir.path().join(format!("o/noisy/img{i}.png"))).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
    }
    let manifest = eqnet_core::noise::NoiseManifest::load(dir.path().join("o/manifest.toml")).unwrap();
    assert_eq!(manifest.entries.len(), 3);
}

#[test]
fn echoed_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let first = eqnet(dir.path(), &["--out", "a", "--seed", "5", "gen-noise", "--in", "imgs", "--family", "mixture"]);
    assert_eq!(code(&first), 0);
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert!(stdout.starts_with("# effective config for `gen-noise`"));
    let again = eqnet(dir.path(), &["--out", "b", "--config", "a/gen-noise.toml", "gen-noise"]);
    assert_eq!(code(&again), 0);
    for i in 0..3 {
        let name = format!("noisy/img{i}.png");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    assert_eq!(code(&eqnet(dir.path(), &["gen-noise", "--in", "imgs", "--family", "pink"])), 1);
    assert_eq!(code(&eqnet(dir.path(), &["gen-noise"])), 1);
    assert_eq!(code(&eqnet(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&eqnet(dir.path(), &["--out", "s", "sweep"])), 1);
    std::fs::write(dir.path().join("bad.toml"), "nonsense = 1\n").unwrap();
    assert_eq!(code(&eqnet(dir.path(), &["--config", "bad.toml", "gen-noise"])), 1);
}

#[test]
fn zero_weight_checkpoint_denoises_to_the_input() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    save_net(dir.path(), NetworkSpec::sevnet(), true);
    let out = eqnet(dir.path(), &["--out", "d", "denoise", "--ckpt", "net.eqnet", "--in", "imgs"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let a = load_image(dir.path().join(format!("imgs/img{i}.png"))).unwrap();
        let b = load_image(dir.path().join(format!("d/denoised/img{i}.png"))).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert_eq!(bytes(&a), bytes(&b));
    }
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    std::fs::write(dir.path().join("bad.eqnet"), b"not a checkpoint").unwrap();
    let out = eqnet(dir.path(), &["--out", "d", "denoise", "--ckpt", "bad.eqnet", "--in", "imgs"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn eval_writes_metric_csv() {
    let dir = tempfile::tempdir().unwrap();
    save_net(dir.path(), NetworkSpec::baseline(), false);
    let out = eqnet(dir.path(), &["--out", "e", "eval", "--ckpt", "net.eqnet", "--synthetic", "2", "--size", "24"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e/metrics.csv")).unwrap();
    assert!(csv.starts_with("image_id,noise_spec,psnr,ssim\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 17);
}

#[test]
fn audit_of_baseline_checkpoint_is_all_order1() {
    let dir = tempfile::tempdir().unwrap();
    save_net(dir.path(), NetworkSpec::baseline(), false);
    let out = eqnet(dir.path(), &["--out", "a", "audit", "--ckpt", "net.eqnet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("a/audit.toml")).unwrap();
    assert!(report.contains("all_order1 = true"));
    assert!(std::fs::read_to_string(dir.path().join("a/audit.csv")).unwrap().starts_with("node,slope"));
}

#[test]
fn train_is_reproducible_from_its_echo() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--out", "t", "--seed", "2", "train", "--synthetic", "3", "--size", "20", "--preset", "sevnet",
        "--in-channels", "1", "--base-channels", "4", "--depth", "1", "--blocks", "1", "--epochs", "1",
        "--steps-per-epoch", "6", "--patch", "16", "--batch", "2",
    ];
    assert_eq!(code(&eqnet(dir.path(), &args)), 0);
    assert_eq!(code(&eqnet(dir.path(), &["--out", "u", "--config", "t/train.toml", "train"])), 0);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("t/model.eqnet"), read("u/model.eqnet"));
    assert_eq!(read("t/losses.csv"), read("u/losses.csv"));
}

#[test]
fn table4_sweep_lists_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqnet(
        dir.path(),
        &["--out", "s", "sweep", "--table4", "--synthetic", "3", "--size", "32", "--epochs", "1", "--steps-per-epoch", "2"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for label in ["(1a)", "(1f)", "(2f)", "(2g)"] {
        assert!(stdout.contains(label), "{label} missing");
    }
    assert!(dir.path().join("s/sweep.toml").exists());
}
