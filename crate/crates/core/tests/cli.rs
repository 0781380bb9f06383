use std::path::Path;
use std::process::{Command, Output};

use ffvol::volume::volz::save_volz;
use ffvol::volume::{Dims, Grid, MultiGridVolume};

fn ffvol(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffvol"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run ffvol")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rows_reported(o: &Output) -> usize {
    let text = stdout(o);
    let line = text.lines().find(|l| l.contains("training rows")).expect("row line");
    line.split_whitespace()
        .rev()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap()
}

const SMALL: &[&str] = &[
    "--epochs", "2", "--features", "8", "--hidden-layers", "1", "--width", "8", "--batch-size", "64",
];

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.volz", "b.volz"] {
        let o = ffvol(&["--seed", "5", "gen", "--dims", "16,16,16", "-o", name], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a.volz")).unwrap();
    let b = std::fs::read(dir.path().join("b.volz")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_rejects_tiny_dims() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffvol(&["gen", "--dims", "4,16,16", "-o", "x.volz"], dir.path());
    assert!(!o.status.success());
    assert!(!dir.path().join("x.volz").exists());
}

#[test]
fn mask_variants_order_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffvol(&["gen", "--dims", "16,16,16", "--carve-quadrant", "-o", "v.volz"], dir.path());
    assert!(o.status.success());
    let mut counts = Vec::new();
    for mask in ["bbx", "dilated:1", "avm"] {
        let mut args = vec!["--strict-determinism", "train", "v.volz", "--mask", mask, "-o", "n.ffck"];
        args.extend_from_slice(SMALL);
        let o = ffvol(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        counts.push(rows_reported(&o));
    }
    assert_eq!(counts[0], 4096);
    assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
    let csv = std::fs::read_to_string(dir.path().join("n.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn all_zero_volume_with_avm_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(8, 8, 8);
    let vol = MultiGridVolume::new(
        dims,
        vec![Grid {
            name: "density".into(),
            values: vec![0.0; dims.len()],
        }],
    )
    .unwrap();
    save_volz(dir.path().join("zero.volz"), &vol, None).unwrap();
    let mut args = vec!["train", "zero.volz", "--mask", "avm", "-o", "z.ffck"];
    args.extend_from_slice(SMALL);
    let o = ffvol(&args, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty training set"));
    assert!(!dir.path().join("z.ffck").exists());
}

#[test]
fn train_eval_slice_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(ffvol(&["gen", "--dims", "16,16,12", "--carve-quadrant", "-o", "v.volz"], p).status.success());
    let mut args = vec!["train", "v.volz", "--mask", "dilated:2", "-o", "n.ffck"];
    args.extend_from_slice(SMALL);
    assert!(ffvol(&args, p).status.success());

    let o = ffvol(&["eval", "n.ffck", "v.volz", "--region", "quadrant", "--csv", "r.csv"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("region"));
    let csv = std::fs::read_to_string(p.join("r.csv")).unwrap();
    assert!(csv.starts_with("variant,psnr_db,nrmse,ssim,score,time_s,compression"));

    let o = ffvol(&["slice", "n.ffck", "--z", "3", "-o", "s.pgm"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = std::fs::read(p.join("s.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);

    let o = ffvol(&["slice", "v.volz", "--z", "3", "--grid", "temperature", "-o", "t.pgm"], p);
    assert!(o.status.success());
}

#[test]
fn eval_dims_mismatch_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(ffvol(&["gen", "--dims", "16,16,12", "-o", "a.volz"], p).status.success());
    assert!(ffvol(&["gen", "--dims", "16,16,13", "-o", "b.volz"], p).status.success());
    let mut args = vec!["train", "a.volz", "-o", "n.ffck"];
    args.extend_from_slice(SMALL);
    assert!(ffvol(&args, p).status.success());
    let o = ffvol(&["eval", "n.ffck", "b.volz", "--csv", "r.csv"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());
    assert!(!p.join("r.csv").exists());
}

#[test]
fn bad_mask_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = ffvol(&["train", "missing.volz", "--mask", "dilated:0", "-o", "n.ffck"], dir.path());
    assert!(!o.status.success());
}
