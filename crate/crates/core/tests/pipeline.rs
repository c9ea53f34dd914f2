//! End-to-end runs of the data loader, trainer and CLI. Tests that need
//! CIFAR-10 skip themselves when the batches are not found under
//! `COLORLAB_DATA_DIR` (or `data/cifar-10-batches-bin`).

use std::path::{Path, PathBuf};
use std::process::Command;

use colorlab::checkpoint::Checkpoint;
use colorlab::classifier::{ClassifierConfig, Variant};
use colorlab::color::{rgb_to_lab, AbBinGrid, RgbImage};
use colorlab::data::{
    data_root, decode_record, load_cifar10, make_training_pair_classifier, DatasetSpec, Split, RECORD_BYTES,
    TRAIN_FILES,
};
use colorlab::gan::{ab_tensor, l_tensor, Gan};
use colorlab::render::{read_png, write_png};
use colorlab::train::{Arch, ModelKind, TrainConfig, GAN_BETAS};
use colorlab::nn::AdamConfig;

fn dataset() -> Option<PathBuf> {
    let root = data_root(None);
    if root.join(TRAIN_FILES[0]).is_file() {
        Some(root)
    } else {
        eprintln!("CIFAR-10 not found at {}; skipping", root.display());
        None
    }
}

fn colorlab(args: &[&str], data: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_colorlab"))
        .args(args)
        .env("COLORLAB_DATA_DIR", data)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn splits_are_complete_and_balanced() {
    let Some(root) = dataset() else { return };
    for (split, n) in [(Split::Train, 50_000), (Split::Test, 10_000)] {
        let samples = load_cifar10(&DatasetSpec::new(&root, split)).unwrap();
        assert_eq!(samples.len(), n);
        let mut counts = [0usize; 10];
        for s in &samples {
            counts[usize::from(s.label)] += 1;
        }
        assert!(counts.iter().all(|&c| c == n / 10), "{counts:?}");
    }
}

#[test]
fn first_record_matches_hand_decode() {
    let Some(root) = dataset() else { return };
    let bytes = std::fs::read(root.join(TRAIN_FILES[0])).unwrap();
    let record = &bytes[..RECORD_BYTES];
    assert!(record[0] <= 9);
    let img = decode_record(record).unwrap().image();
    // R, G and B planes are 1024 bytes each, row-major.
    for (y, x) in [(0, 0), (5, 17), (31, 31)] {
        let i = 1 + y * 32 + x;
        let want = [record[i], record[i + 1024], record[i + 2048]].map(|b| f32::from(b) / 255.0);
        assert_eq!(img.pixel(y, x), want);
    }
    let first = &load_cifar10(&DatasetSpec::new(&root, Split::Train).with_cap(Some(1))).unwrap()[0];
    assert_eq!(first.image(), img);
}

#[test]
fn training_pairs_have_expected_shape() {
    let gray = RgbImage::filled(32, 32, [0.4, 0.4, 0.4]).unwrap();
    let grid = AbBinGrid::standard();
    let zero = grid.centers().iter().position(|c| c == &[0.0, 0.0]).unwrap();
    let (l, z) = make_training_pair_classifier(&gray, &ClassifierConfig::new(Variant::UpsampleBilinear)).unwrap();
    assert_eq!(l.len(), 32 * 32);
    assert!(l.iter().all(|v| (-1.0..=1.0).contains(v)));
    let dense = z.to_dense(grid.clone());
    for p in 0..dense.num_pixels() {
        let probs = dense.pixel(p);
        let top = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        assert_eq!(top, zero);
    }
    let (_, z) = make_training_pair_classifier(&gray, &ClassifierConfig::new(Variant::DownsampleTarget)).unwrap();
    assert_eq!((z.height, z.width), (8, 8));
}

#[test]
fn gan_on_a_repeated_batch_stays_finite() {
    let Some(root) = dataset() else { return };
    let images: Vec<RgbImage> = load_cifar10(&DatasetSpec::new(&root, Split::Train).with_cap(Some(1)))
        .unwrap()
        .iter()
        .take(8)
        .map(|s| s.image())
        .collect();
    let labs: Vec<_> = images.iter().map(rgb_to_lab).collect();
    let l = l_tensor(32, 32, &labs.iter().map(|x| x.l()).collect::<Vec<_>>()).unwrap();
    let ab = ab_tensor(32, 32, &labs.iter().map(|x| x.ab()).collect::<Vec<_>>()).unwrap();
    let cfg = TrainConfig {
        arch: Arch::Small,
        ..TrainConfig::new(ModelKind::Gan)
    };
    let (g, d) = cfg.gan_configs();
    let opt = AdamConfig::new(cfg.lr_g, GAN_BETAS.0, GAN_BETAS.1);
    let mut gan = Gan::new(g, d, opt, opt, cfg.lambda, 0).unwrap();
    let mut margin = 0.0;
    for step in 0..200 {
        let t = gan.train_step(&l, &ab).unwrap();
        assert!(t.all_finite(), "step {step}: {t:?}");
        margin += t.d_real - t.d_fake;
    }
    assert!(margin / 200.0 > 0.0, "mean real score does not exceed mean fake score");
}

#[test]
fn cli_train_evaluate_colorize_grid() {
    let Some(root) = dataset() else { return };
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let started = std::time::Instant::now();
    let (code, out, err) = colorlab(
        &["train", "--model", "classifier", "--epochs", "1", "--subset", "10", "--out", &p("cls")],
        &root,
    );
    assert_eq!(code, 0, "{out}{err}");
    assert!(started.elapsed().as_secs() < 300);
    let ckpt = p("cls/final.ckpt");
    let log = std::fs::read_to_string(p("cls/run_log.tsv")).unwrap();
    assert!(log.lines().any(|l| l.contains("\tloss\t")));
    let bytes = std::fs::read(&ckpt).unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);

    let (code, out, err) = colorlab(
        &["train", "--model", "gan", "--arch", "small", "--epochs", "1", "--subset", "4", "--out", &p("gan")],
        &root,
    );
    assert_eq!(code, 0, "{out}{err}");
    let gan = p("gan/final.ckpt");

    // Evaluate prints the table columns in order and saved PNGs score the
    // same as the live run.
    let (code, out, err) = colorlab(
        &["evaluate", "--checkpoint", &gan, "--baseline", "--subset", "2", "--save", &p("pred"), "--out", &p("rep")],
        &root,
    );
    assert_eq!(code, 0, "{err}");
    let header = out.lines().next().unwrap();
    let cols: Vec<usize> = ["pixel_acc@2%", "pixel_acc@5%", "psnr_db", "ssim"]
        .iter()
        .map(|c| header.find(c).unwrap_or_else(|| panic!("{c} missing from {header}")))
        .collect();
    assert!(cols.windows(2).all(|w| w[0] < w[1]));
    assert!(out.contains("images: 20"));
    let live = std::fs::read_to_string(p("rep/gan_final.csv")).unwrap();
    let (code, _, err) = colorlab(
        &["evaluate", "--predictions", &p("pred/gan_final"), "--subset", "2", "--out", &p("rep2")],
        &root,
    );
    assert_eq!(code, 0, "{err}");
    let saved = std::fs::read_dir(p("rep2")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(std::fs::read_to_string(saved).unwrap(), live);

    // Colorize keeps the size and the lightness of a color input.
    let input = load_cifar10(&DatasetSpec::new(&root, Split::Test).with_cap(Some(1))).unwrap()[3].image();
    write_png(&input, Path::new(&p("in.png"))).unwrap();
    let (code, _, err) = colorlab(&["colorize", "--checkpoint", &gan, "--input", &p("in.png"), "--output", &p("out.png")], &root);
    assert_eq!(code, 0, "{err}");
    let result = read_png(Path::new(&p("out.png"))).unwrap();
    assert_eq!((result.height(), result.width()), (32, 32));
    let (li, lo) = (rgb_to_lab(&input), rgb_to_lab(&result));
    let mean_diff: f32 = li.l().iter().zip(lo.l()).map(|(a, b)| (a - b).abs()).sum::<f32>() / 1024.0;
    assert!(mean_diff < 5.0, "lightness drifted by {mean_diff}");

    let small = RgbImage::filled(16, 16, [0.5; 3]).unwrap();
    write_png(&small, Path::new(&p("small.png"))).unwrap();
    let (code, _, err) = colorlab(&["colorize", "--checkpoint", &gan, "--input", &p("small.png"), "--output", &p("x.png")], &root);
    assert_ne!(code, 0);
    assert!(err.contains("32x32"), "{err}");

    let (code, _, err) = colorlab(
        &["grid", "--checkpoint", &ckpt, "--checkpoint", &gan, "--ids", "0,1,2,3", "--scale", "1", "--out", &p("grid.png")],
        &root,
    );
    assert_eq!(code, 0, "{err}");
    let grid = read_png(Path::new(&p("grid.png"))).unwrap();
    assert_eq!(grid.width(), 4 * 34 + 2);
    assert_eq!(grid.height(), 11 + 4 * 34 + 2);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = colorlab(&["train", "--model", "vae"], dir.path());
    assert_eq!(code, 1);
    let (code, _, err) = colorlab(&["evaluate", "--baseline"], &dir.path().join("missing"));
    assert_eq!(code, 2, "{err}");
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "model = classifier\nlr_classifier = 1e30\nepochs = 30\n").unwrap();
    if let Some(root) = dataset() {
        let out = dir.path().join("run");
        let (code, _, err) = colorlab(
            &["train", "--config", cfg.to_str().unwrap(), "--arch", "small", "--subset", "1", "--out", out.to_str().unwrap()],
            &root,
        );
        assert_eq!(code, 3, "{err}");
        assert!(out.join("diverged.ckpt").exists());
    }
}
