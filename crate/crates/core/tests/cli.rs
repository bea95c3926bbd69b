//! End-to-end runs of the `mfsr` binary on small synthetic directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfsr::image::{self, ImageRgb};
use mfsr::synthetic::{corpus, dead_leaves, gradient_shapes};
use tempfile::TempDir;

fn mfsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfsr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_pngs(dir: &Path, images: &[ImageRgb]) {
    fs::create_dir_all(dir).unwrap();
    for (i, im) in images.iter().enumerate() {
        image::save_png(im, dir.join(format!("im{i:02}.png"))).unwrap();
    }
}

const TOY: &str = "\
# toy run
lr_patch = 8
batch_size = 1
pretrain_iters = 2
gan_iters = 2
res_blocks = 1
gen_channels = 8
";

fn toy_setup(mode: &str) -> (TempDir, PathBuf, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let hr = tmp.path().join("hr");
    write_pngs(&hr, &corpus(gradient_shapes, 3, 48, 48, 3));
    let config = tmp.path().join("toy.cfg");
    fs::write(&config, format!("{TOY}mode = {mode}\n")).unwrap();
    (tmp, hr, config)
}

#[test]
fn degrade_shrinks_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let hr = tmp.path().join("hr");
    write_pngs(&hr, &corpus(dead_leaves, 2, 64, 64, 1));
    fs::write(hr.join("broken.png"), b"not a png").unwrap();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = mfsr(&["degrade", "--in", s(&hr), "--out", s(&out), "--noise-sigma", "0.02", "--blur", "on", "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("broken.png"));
    }
    for name in ["im00.png", "im01.png"] {
        let lr = image::load_png(tmp.path().join("a").join(name)).unwrap();
        assert_eq!((lr.height(), lr.width()), (16, 16));
        assert_eq!(fs::read(tmp.path().join("a").join(name)).unwrap(), fs::read(tmp.path().join("b").join(name)).unwrap());
    }
    assert!(!tmp.path().join("a").join("broken.png").exists());
    let manifest = fs::read_to_string(tmp.path().join("a").join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed"), "{manifest}");
}

#[test]
fn degrade_without_pngs_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = mfsr(&["degrade", "--in", s(&empty), "--out", s(&tmp.path().join("lr"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_violations_exit_with_one_and_list_everything() {
    let (tmp, hr, _) = toy_setup("GAN-IMCW");
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "lr = -1\nfrobnicate = 2\nlr_patch = 7\n").unwrap();
    let o = mfsr(&["pretrain", "--config", s(&bad), "--hr", s(&hr), "--out", s(&tmp.path().join("g.ckpt"))]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("frobnicate"), "{err}");
    let o = mfsr(&["degrade", "--in", s(&hr), "--out", s(&tmp.path().join("lr")), "--scale", "0"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&mfsr(&["no-such-command"])), 1);
}

#[test]
fn pretrain_train_sr_pipeline() {
    let (tmp, hr, config) = toy_setup("GAN-IMCW");
    let pre = tmp.path().join("pre.ckpt");
    let o = mfsr(&["pretrain", "--config", s(&config), "--hr", s(&hr), "--out", s(&pre)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(mfsr::cli::trace_path(&pre)).unwrap();
    assert_eq!(trace.lines().count(), 3, "{trace}");
    assert_eq!(trace.lines().next().unwrap(), mfsr::trainer::TRACE_HEADER.join(","));

    let gan = tmp.path().join("gan.ckpt");
    let o = mfsr(&["train", "--config", s(&config), "--hr", s(&hr), "--init", s(&pre), "--out", s(&gan)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(mfsr::cli::trace_path(&gan)).unwrap();
    assert_eq!(trace.lines().count(), 3, "{trace}");

    let lr_dir = tmp.path().join("lr");
    write_pngs(&lr_dir, &corpus(dead_leaves, 2, 16, 16, 8));
    for run in ["sr1", "sr2"] {
        let o = mfsr(&["sr", "--model", s(&gan), "--in", s(&lr_dir), "--out", s(&tmp.path().join(run))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["im00.png", "im01.png"] {
        let a = tmp.path().join("sr1").join(name);
        let sr = image::load_png(&a).unwrap();
        assert_eq!((sr.height(), sr.width()), (64, 64));
        assert_eq!(fs::read(&a).unwrap(), fs::read(tmp.path().join("sr2").join(name)).unwrap());
    }
    let single = tmp.path().join("one.png");
    let o = mfsr(&["sr", "--model", s(&gan), "--in", s(&lr_dir.join("im00.png")), "--out", s(&single)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&single).unwrap(), fs::read(tmp.path().join("sr1").join("im00.png")).unwrap());
}

#[test]
fn train_without_init_pretrains_first() {
    let (tmp, hr, config) = toy_setup("GAN-IMC");
    let out = tmp.path().join("gan.ckpt");
    let o = mfsr(&["train", "--config", s(&config), "--hr", s(&hr), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pretraining"));
    let t = mfsr::trainer::Trainer::load(&out).unwrap();
    assert_eq!((t.pretrain_done, t.adversarial_done), (2, 2));
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let (tmp, hr, config) = toy_setup("GAN-IMCW");
    let (a, b) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    for out in [&a, &b] {
        assert_eq!(code(&mfsr(&["train", "--config", s(&config), "--hr", s(&hr), "--out", s(out)])), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn sr_rejects_a_checkpoint_that_is_not_one() {
    let tmp = TempDir::new().unwrap();
    let fake = tmp.path().join("fake.ckpt");
    fs::write(&fake, b"NTCK garbage").unwrap();
    let lr = tmp.path().join("lr.png");
    image::save_png(&dead_leaves(16, 16, 1), &lr).unwrap();
    let o = mfsr(&["sr", "--model", s(&fake), "--in", s(&lr), "--out", s(&tmp.path().join("sr.png"))]);
    assert_eq!(code(&o), 2);
}

/// `(height, width, bytes)` of an 8-bit grayscale PNG.
fn gray_png(path: &Path) -> (usize, usize, Vec<u8>) {
    let mut reader = png::Decoder::new(std::io::BufReader::new(fs::File::open(path).unwrap())).read_info().unwrap();
    assert_eq!(reader.info().color_type, png::ColorType::Grayscale);
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let frame = reader.next_frame(&mut buf).unwrap();
    buf.truncate(frame.buffer_size());
    (frame.height as usize, frame.width as usize, buf)
}

fn report_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn niqe_fit_and_eval() {
    let tmp = TempDir::new().unwrap();
    let pristine = tmp.path().join("pristine");
    write_pngs(&pristine, &corpus(dead_leaves, 6, 192, 192, 20));
    let (m1, m2) = (tmp.path().join("m1.niqe"), tmp.path().join("m2.niqe"));
    for m in [&m1, &m2] {
        let o = mfsr(&["niqe-fit", "--pristine", s(&pristine), "--out", s(m)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    let test = tmp.path().join("test");
    write_pngs(&test, &corpus(gradient_shapes, 2, 96, 96, 30));
    let report = tmp.path().join("report.csv");
    let o = mfsr(&["eval", "--sr", s(&test), "--hr", s(&test), "--niqe-model", s(&m1), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = report_rows(&report);
    assert_eq!(rows.len(), 3);
    for r in &rows[..2] {
        assert_eq!(r[1].parse::<f64>().unwrap(), 100.0);
    }
    let niqe: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!((niqe[2] - (niqe[0] + niqe[1]) / 2.0).abs() < 1e-6);
    assert_eq!(&rows[2][0], "AVE");

    let ma = tmp.path().join("ma.csv");
    fs::write(&ma, "name,ma\nim00,8.999\n").unwrap();
    let partial = tmp.path().join("partial.csv");
    let o = mfsr(&["eval", "--sr", s(&test), "--hr", s(&test), "--niqe-model", s(&m1), "--ma", s(&ma), "--report", s(&partial)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("im01.png has no Ma score"));
    let rows = report_rows(&partial);
    let pi: f64 = rows[0][4].parse().unwrap();
    assert!((pi - 0.5 * ((10.0 - 8.999) + niqe[0])).abs() < 2e-6, "report cells carry 6 decimals");
    assert!(rows[1][4].is_empty());
}

#[test]
fn weights_map_geometry_and_constant_fallback() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in.png");
    image::save_png(&dead_leaves(64, 48, 2), &input).unwrap();
    let out = tmp.path().join("map.png");
    assert_eq!(code(&mfsr(&["weights-map", "--in", s(&input), "--out", s(&out)])), 0);
    let (h, w, _) = gray_png(&out);
    assert_eq!((h, w), (32, 24));

    // A black frame has all-zero features, so the map falls back to uniform.
    let flat = tmp.path().join("flat.png");
    image::save_png(&ImageRgb::filled(32, 32, 0.0).unwrap(), &flat).unwrap();
    let out = tmp.path().join("flat_map.png");
    assert_eq!(code(&mfsr(&["weights-map", "--extractor", "seeded:3", "--in", s(&flat), "--out", s(&out)])), 0);
    let (_, _, bytes) = gray_png(&out);
    assert!(bytes.iter().all(|&b| b == 128), "{bytes:?}");

    let odd = tmp.path().join("odd.png");
    image::save_png(&dead_leaves(40, 40, 2), &odd).unwrap();
    assert_ne!(code(&mfsr(&["weights-map", "--in", s(&odd), "--out", s(&tmp.path().join("x.png"))])), 0);
}
