mod common;

use std::fs;
use std::path::Path;

use common::{p, random_checkpoint, run, stderr, stdout, tiny_config, zero_weight_checkpoint};
use srtransgan::data::image::quantize;
use srtransgan::data::synth::{detailed_texture, write_texture_corpus};
use srtransgan::data::{load_checkpoint, load_image, save_image};
use srtransgan::metrics::{ssim, MetricReport};
use srtransgan::{Rng, Tensor};

fn keys(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t < 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Separable Catmull-Rom upsampling of one `h x w` plane by `s`, half-pixel
/// centres, clamped edges, clamped to `[0, 1]`.
fn bicubic_plane(src: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
    let taps = |o: usize, n: usize| -> Vec<(usize, f64)> {
        let x = (o as f64 + 0.5) / s as f64 - 0.5;
        let base = x.floor() as i64;
        (-1..=2)
            .map(|k| ((base + k).clamp(0, n as i64 - 1) as usize, keys(x - (base + k) as f64)))
            .collect()
    };
    let mut out = vec![0.0; s * h * s * w];
    for oy in 0..s * h {
        for ox in 0..s * w {
            let mut v = 0.0;
            for (iy, wy) in taps(oy, h) {
                for (ix, wx) in taps(ox, w) {
                    v += wy * wx * src[iy * w + ix];
                }
            }
            out[oy * s * w + ox] = v.clamp(0.0, 1.0);
        }
    }
    out
}

fn mse_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn quantized(img: &Tensor) -> Vec<u8> {
    img.to_vec().iter().map(|&v| quantize(v)).collect()
}

fn write_config(dir: &Path, dataset: &Path, steps: u64) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, tiny_config(dataset, steps)).unwrap();
    path
}

#[test]
fn train_with_zero_steps_writes_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_texture_corpus(&data, 3, 32, 1).unwrap();
    let cfg = write_config(tmp.path(), &data, 0);
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("checkpoints/step_00000000.ckpt").is_file());
    assert!(out.join("final.ckpt").is_file());
    assert!(out.join("run.toml").is_file());
    let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn invalid_config_key_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n\n[train]\nlearning_rat = 0.1\n").unwrap();
    let o = run(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("learning_rat"), "{err}");
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn infer_output_extents() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 5);
    let mut rng = Rng::new(2);
    for (h, w) in [(64, 64), (30, 30)] {
        let input = tmp.path().join(format!("in_{h}.png"));
        save_image(&detailed_texture(h, w, &mut rng), &input).unwrap();
        let output = tmp.path().join(format!("out_{h}.png"));
        let o = run(&["infer", p(&input), p(&output), "--ckpt", p(&ck), "--scale", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(load_image(&output).unwrap().shape(), &[3, 2 * h, 2 * w]);
        assert!(Path::new(&format!("{}.run.toml", output.display())).is_file());
    }
}

#[test]
fn infer_with_zero_weights_is_bicubic() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = zero_weight_checkpoint(&tmp.path().join("z.ckpt"));
    let input = tmp.path().join("in.png");
    let (h, w) = (12, 20);
    save_image(&detailed_texture(h, w, &mut Rng::new(7)), &input).unwrap();
    let output = tmp.path().join("out.png");
    let o = run(&["infer", p(&input), p(&output), "--ckpt", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lr = load_image(&input).unwrap().to_f64_vec();
    let got = quantized(&load_image(&output).unwrap());
    let plane = h * w;
    for c in 0..3 {
        let want = bicubic_plane(&lr[c * plane..(c + 1) * plane], h, w, 2);
        for (i, v) in want.iter().enumerate() {
            let g = got[c * 4 * plane + i] as f64;
            assert!(
                (g - v * 255.0).abs() <= 1.0,
                "channel {c} pixel {i}: {g} vs {}",
                v * 255.0
            );
        }
    }
}

#[test]
fn infer_rejects_scale_three() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 1);
    let input = tmp.path().join("in.png");
    save_image(&detailed_texture(8, 8, &mut Rng::new(1)), &input).unwrap();
    let o = run(&[
        "infer",
        p(&input),
        p(&tmp.path().join("o.png")),
        "--ckpt",
        p(&ck),
        "--scale",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scale"), "{}", stderr(&o));
}

/// `root/LR` and `root/HR` with two textures.
fn paired_dataset(root: &Path) {
    fs::create_dir_all(root.join("LR")).unwrap();
    fs::create_dir_all(root.join("HR")).unwrap();
    let mut rng = Rng::new(21);
    for i in 0..2 {
        let name = format!("t{i}.png");
        save_image(&detailed_texture(16, 16, &mut rng), root.join("LR").join(&name)).unwrap();
        save_image(&detailed_texture(32, 32, &mut rng), root.join("HR").join(&name)).unwrap();
    }
}

#[test]
fn eval_report_matches_oracles_and_reparses() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    paired_dataset(&data);
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 2);
    let out = tmp.path().join("eval");
    let o = run(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--dataset",
        p(&data),
        "--out",
        p(&out),
        "--channel-mode",
        "rgb",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let printed = stdout(&o);
    let (report, means) = MetricReport::from_tsv(&printed).unwrap();
    assert_eq!(fs::read_to_string(out.join("eval_report.tsv")).unwrap(), printed);
    assert_eq!(report.rows.len(), 2);
    for (m, r) in means.iter().zip(report.means()) {
        assert!((m - r).abs() < 1e-9, "{m} vs {r}");
    }

    for row in &report.rows {
        let lr = load_image(data.join("LR").join(&row.name)).unwrap().to_f64_vec();
        let hr = load_image(data.join("HR").join(&row.name)).unwrap().to_f64_vec();
        let bic: Vec<f64> = (0..3)
            .flat_map(|c| bicubic_plane(&lr[c * 256..(c + 1) * 256], 16, 16, 2))
            .collect();
        let want_psnr = mse_psnr(&bic, &hr);
        assert!(
            (row.bicubic_psnr - want_psnr).abs() < 1e-3,
            "{} vs {want_psnr}",
            row.bicubic_psnr
        );
        let want_ssim = (0..3)
            .map(|c| {
                let a = Tensor::<f32>::from_f64(&bic[c * 1024..(c + 1) * 1024], &[32, 32]).unwrap();
                let b = Tensor::from_f64(&hr[c * 1024..(c + 1) * 1024], &[32, 32]).unwrap();
                ssim(&a, &b).unwrap()
            })
            .sum::<f64>()
            / 3.0;
        assert!(
            (row.bicubic_ssim - want_ssim).abs() < 1e-4,
            "{} vs {want_ssim}",
            row.bicubic_ssim
        );
    }
}

#[test]
fn eval_on_empty_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("empty");
    fs::create_dir_all(&data).unwrap();
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 2);
    let o = run(&[
        "eval",
        "--ckpt",
        p(&ck),
        "--dataset",
        p(&data),
        "--out",
        p(&tmp.path().join("e")),
    ]);
    assert!(!o.status.success());
    assert!(!stderr(&o).is_empty());
}

#[test]
fn saliency_writes_normalized_map() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 4);
    let mut rng = Rng::new(9);
    let lr = tmp.path().join("lr.png");
    let hr = tmp.path().join("hr.png");
    save_image(&detailed_texture(16, 16, &mut rng), &lr).unwrap();
    save_image(&detailed_texture(32, 32, &mut rng), &hr).unwrap();
    let out = tmp.path().join("sal");
    let o = run(&["saliency", p(&lr), p(&hr), "--ckpt", p(&ck), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let raw = load_image(out.join("saliency_raw.pgm")).unwrap();
    assert_eq!(raw.shape(), &[3, 16, 16]);
    let v = quantized(&raw);
    let gray = &v[..256];
    assert_eq!(gray.iter().min(), Some(&0));
    assert_eq!(gray.iter().max(), Some(&255));
    let color = quantized(&load_image(out.join("saliency.png")).unwrap());
    for (i, &g) in gray.iter().enumerate() {
        if g == 0 {
            assert_eq!([color[i], color[256 + i], color[512 + i]], [0, 0, 255], "pixel {i}");
        }
        if g == 255 {
            assert_eq!([color[i], color[256 + i], color[512 + i]], [255, 0, 0], "pixel {i}");
        }
    }
}

#[test]
fn saliency_rejects_mismatched_extents() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = random_checkpoint(&tmp.path().join("g.ckpt"), 4);
    let mut rng = Rng::new(9);
    let lr = tmp.path().join("lr.png");
    let hr = tmp.path().join("hr.png");
    save_image(&detailed_texture(16, 16, &mut rng), &lr).unwrap();
    save_image(&detailed_texture(30, 32, &mut rng), &hr).unwrap();
    let o = run(&[
        "saliency",
        p(&lr),
        p(&hr),
        "--ckpt",
        p(&ck),
        "--out",
        p(&tmp.path().join("s")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("twice"), "{}", stderr(&o));
}

#[test]
fn same_seed_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_texture_corpus(&data, 3, 32, 4).unwrap();
    let cfg = write_config(tmp.path(), &data, 3);
    let mut finals = Vec::new();
    for run_name in ["a", "b"] {
        let out = tmp.path().join(run_name);
        let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        finals.push((
            fs::read(out.join("final.ckpt")).unwrap(),
            fs::read_to_string(out.join("train_log.tsv")).unwrap(),
        ));
    }
    assert_eq!(finals[0], finals[1]);
    assert_eq!(finals[0].1.lines().count(), 4);
    let ck = load_checkpoint(tmp.path().join("a/final.ckpt")).unwrap();
    assert_eq!(ck.meta.step, 3);
}

#[test]
fn resume_continues_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_texture_corpus(&data, 3, 32, 4).unwrap();
    let cfg = write_config(tmp.path(), &data, 4);
    let full = tmp.path().join("full");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&full)]).status.success());

    let part = tmp.path().join("part");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&part), "--steps", "2"])
        .status
        .success());
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&part),
        "--ckpt",
        p(&part.join("final.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(full.join("final.ckpt")).unwrap(),
        fs::read(part.join("final.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(full.join("train_log.tsv")).unwrap(),
        fs::read_to_string(part.join("train_log.tsv")).unwrap()
    );
}

#[test]
fn missing_subcommand_is_usage_error() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["infer", "--ckpt", "/nonexistent.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
}
