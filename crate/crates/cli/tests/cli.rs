use std::path::Path;
use std::process::{Command, Output};

use callo::imaging::{generate_corpus, Image, SceneParams};
use callo::nn::{checkpoint, Network, NetworkSpec};
use callo::Tensor;
use tempfile::TempDir;

const BLOB_NET: &str = "input = [1, 40, 1]\n\
    [[layers]]\nkind = \"flatten\"\n\
    [[layers]]\nkind = \"dense\"\nunits = 16\n\
    [[layers]]\nkind = \"relu\"\n\
    [[layers]]\nkind = \"dense\"\nunits = 10\n";

const IMAGE_NET: &str = "input = [16, 16, 1]\n\
    [[layers]]\nkind = \"conv\"\nfilters = 4\nkernel = 3\npadding = \"same\"\n\
    [[layers]]\nkind = \"relu\"\n\
    [[layers]]\nkind = \"maxpool\"\nwindow = 2\n\
    [[layers]]\nkind = \"conv\"\nfilters = 6\nkernel = 3\n\
    [[layers]]\nkind = \"relu\"\n\
    [[layers]]\nkind = \"flatten\"\n\
    [[layers]]\nkind = \"dense\"\nunits = 3\n";

fn callo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_callo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn preprocess_empty_directory() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir(tmp.path().join("in")).unwrap();
    let o = callo(tmp.path(), &["preprocess", "--input", "in", "--out", "out"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("preprocessed 0 images: 0 success, 0 fallback, 0 failure"));
    assert!(tmp.path().join("out/run.json").exists());
}

#[test]
fn preprocess_synthetic_corpus() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir(&input).unwrap();
    for (i, scene) in generate_corpus(7, 20, &SceneParams::default()).iter().enumerate() {
        scene.image.save(&input.join(format!("scene{i:02}.png"))).unwrap();
    }
    let o = callo(tmp.path(), &["preprocess", "--input", "in", "--out", "out", "--out-size", "256"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let line = stdout(&o);
    let success: usize = line
        .split(": ")
        .nth(1)
        .and_then(|s| s.split(' ').next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("summary line {line:?}"));
    assert!(success >= 16, "{line}");
    let mut crops = 0;
    for entry in std::fs::read_dir(tmp.path().join("out")).unwrap() {
        let path = entry.unwrap().path();
        if path.to_string_lossy().ends_with("-passport.png") {
            let img = Image::load(&path).unwrap();
            assert_eq!((img.height(), img.width()), (256, 256));
            crops += 1;
        }
    }
    assert!(crops >= success);
    assert_eq!(read(tmp.path().join("out/summary.csv")).lines().count(), 21);
    let sidecar: serde_json::Value = serde_json::from_str(&read(tmp.path().join("out/scene00.json"))).unwrap();
    for key in ["threshold_bin", "threshold_fallback", "theta_deg", "confidence", "mask_pixels"] {
        assert!(!sidecar[key].is_null(), "{key} missing from {sidecar}");
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&callo(tmp.path(), &["train", "--no-such-flag"])), 1);
    assert_eq!(code(&callo(tmp.path(), &["--threads", "0", "knn", "--blobs", "--out", "o"])), 1);
    assert_eq!(code(&callo(tmp.path(), &["train", "--blobs", "--net", "no-such-net", "--out", "o"])), 1);
    assert_eq!(code(&callo(tmp.path(), &["preprocess", "--input", "missing", "--out", "o"])), 2);
    assert_eq!(code(&callo(tmp.path(), &["train", "--blobs", "--net", "mnist", "--out", "o"])), 2);

    write(tmp.path(), "blob.toml", BLOB_NET);
    write(tmp.path(), "wild.toml", "optimizer = \"sgd\"\nlearning_rate = 1e30\n");
    let o = callo(
        tmp.path(),
        &["train", "--blobs", "--net", "blob.toml", "--config", "wild.toml", "--max-steps", "50", "--out", "o"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn zero_steps_keep_initialization() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "blob.toml", BLOB_NET);
    let o = callo(tmp.path(), &["--seed", "9", "train", "--blobs", "--net", "blob.toml", "--max-steps", "0", "--out", "t"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let spec = NetworkSpec::from_toml(BLOB_NET).unwrap();
    let init = checkpoint::to_bytes(&Network::<f32>::new(spec, 9).unwrap());
    assert_eq!(std::fs::read(tmp.path().join("t/model.ckpt")).unwrap(), init);
}

#[test]
fn training_is_reproducible_and_evaluates() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "blob.toml", BLOB_NET);
    let args = |out: &'static str| {
        vec![
            "--threads", "1", "train", "--blobs", "--net", "blob.toml", "--precision", "f64", "--max-steps", "200",
            "--learning-rate", "0.01", "--batch-size", "32", "--eval-every", "50", "--out", out,
        ]
    };
    for out in ["a", "b"] {
        let o = callo(tmp.path(), &args(out));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let history = read(tmp.path().join("a/history.csv"));
    assert_eq!(history, read(tmp.path().join("b/history.csv")));
    assert_eq!(history.lines().count(), 201);

    let o = callo(tmp.path(), &["eval", "--checkpoint", "a/model.ckpt", "--blobs", "--part", "train", "--out", "e"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let acc: f64 = stdout(&o).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(acc >= 0.99, "{acc}");

    let confusion = read(tmp.path().join("e/confusion.csv"));
    let rows: Vec<usize> = confusion
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()).sum())
        .collect();
    // 60 blobs per class, 80% of them in the training part.
    assert_eq!(rows, vec![48; 10]);

    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path().join("a/run.json"))).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["resolved"]["train_config"]["max_steps"], 200);

    let o = callo(tmp.path(), &["report", "a"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("final step 200"));
}

#[test]
fn knn_report_is_stable() {
    let tmp = TempDir::new().unwrap();
    let o = callo(tmp.path(), &["knn", "--blobs", "--runs", "20", "--out", "k"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report = read(tmp.path().join("k/report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "k,RAW,PCA,PCA+LDA,PCA+LDA-Chebyshev");
    assert!(stdout(&o).contains("20 runs identical"));

    let o = callo(tmp.path(), &["knn", "--blobs", "--raw-only", "--ks", "1,5", "--metric", "minkowski", "--p", "2", "--out", "r"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(read(tmp.path().join("r/report.csv")).lines().count(), 3);
}

fn image_fixture(dir: &Path) {
    let img = Image::from_gray(&Tensor::from_fn([16, 16], |k| (k % 16) as f64 / 15.0)).unwrap();
    img.save(&dir.join("probe.png")).unwrap();
    write(dir, "net.toml", IMAGE_NET);
}

#[test]
fn zero_weight_saliency_is_flat() {
    let tmp = TempDir::new().unwrap();
    image_fixture(tmp.path());
    let net = Network::<f32>::zeroed(NetworkSpec::from_toml(IMAGE_NET).unwrap()).unwrap();
    checkpoint::save(&net, &tmp.path().join("zero.ckpt")).unwrap();
    let o = callo(
        tmp.path(),
        &["saliency", "--checkpoint", "zero.ckpt", "--net", "net.toml", "--image", "probe.png", "--box", "4", "--stride", "4", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let csv = read(tmp.path().join("s/heat.csv"));
    let cells: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(cells.len(), 16usize.div_ceil(4).pow(2));
    assert!(cells.iter().all(|&v| v == 0.0));
    for f in ["heat.png", "heat.pgm", "overlay.png", "run.json"] {
        assert!(tmp.path().join("s").join(f).exists(), "{f}");
    }
}

#[test]
fn activation_dump_matches_netspec() {
    let tmp = TempDir::new().unwrap();
    image_fixture(tmp.path());
    let net = Network::<f32>::new(NetworkSpec::from_toml(IMAGE_NET).unwrap(), 3).unwrap();
    checkpoint::save(&net, &tmp.path().join("model.ckpt")).unwrap();
    std::fs::copy(tmp.path().join("net.toml"), tmp.path().join("network.toml")).unwrap();
    let o = callo(tmp.path(), &["activations", "--checkpoint", "model.ckpt", "--image", "probe.png", "--out", "a"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let depths: Vec<(usize, usize)> = stdout(&o)
        .lines()
        .filter_map(|l| {
            let l = l.strip_prefix("layer ")?;
            let idx = l.split(' ').next()?.parse().ok()?;
            let ch = l.split(": ").nth(1)?.split(' ').next()?.parse().ok()?;
            Some((idx, ch))
        })
        .collect();
    assert_eq!(depths, vec![(0, 4), (1, 4), (2, 4), (3, 6), (4, 6)]);
    assert!(tmp.path().join("a/layer03-conv.pgm").exists());
    assert_eq!(read(tmp.path().join("a/activations.csv")).lines().count(), 1 + 4 + 4 + 4 + 6 + 6);
}
