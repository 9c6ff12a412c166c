use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cavt_core::data::{write_packed_file, PackedVideo};
use cavt_core::model::{count_params, read_checkpoint, CavtConfig};

const TINY: &str = "\
# tiny model
frames=4
height=8
width=8
temporal_patch=2
patch=4
embed_dim=16
heads=2
sa_blocks=2
ca_blocks=1
mlp_ratio=2
";

/// Sixteen 12-frame videos, r = 2, learning rate 1e-3, at most 500 steps.
const OVERFIT: &str = "\
gamma=1
alpha=2
sampling_times=2
learning_rate=0.001
drop_rate=0
epochs=1000
max_steps=500
seed=9
synth_frames=12
";

fn cavt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavt"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("tiny.cfg"), format!("{TINY}{OVERFIT}")).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> String {
        s(&self.path("tiny.cfg")).to_string()
    }

    fn synth(&self) -> PathBuf {
        let out = self.path("data");
        let o = cavt(&["synth", "--config", &self.config(), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        out.join("labels.csv")
    }

    fn video(&self, frames: usize) -> PathBuf {
        let path = self.path(&format!("v{frames}.cavf"));
        let v = PackedVideo::new("clip", frames, 2, 2, vec![7; frames * 12]).unwrap();
        write_packed_file(&path, &v).unwrap();
        path
    }
}

fn last_fields(out: &str) -> Vec<String> {
    out.lines()
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect()
}

#[test]
fn sample_bfs_and_halving() {
    let ws = Workspace::new();
    let video = ws.video(7);
    let base = [
        "sample",
        s(&video),
        "--set",
        "gamma=1",
        "--set",
        "frames=1",
        "--set",
        "alpha=1",
        "--set",
        "sampling_times=3",
    ];

    let o = cavt(&base);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "v7,1,4\nv7,2,2\nv7,3,6\n");

    let mut halving = base.to_vec();
    halving.extend(["--order-mode", "halving"]);
    let o = cavt(&halving);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(last_fields(&stdout(&o)), ["4", "2", "1"]);
}

#[test]
fn sample_rejects_short_videos_with_the_bound() {
    let ws = Workspace::new();
    let video = ws.video(5);
    let o = cavt(&[
        "sample",
        s(&video),
        "--set",
        "gamma=2",
        "--set",
        "frames=3",
        "--set",
        "alpha=2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("n >= γ(T+α−1) = 2·(3+2−1) = 8"), "{err}");
    assert!(err.contains("n = 5"), "{err}");
}

#[test]
fn random_sampling_follows_the_seed() {
    let ws = Workspace::new();
    let video = ws.video(40);
    let run = |seed: &str| {
        let o = cavt(&[
            "sample",
            s(&video),
            "--order-mode",
            "random",
            "--seed",
            seed,
            "--set",
            "gamma=1",
            "--set",
            "frames=4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
    assert_eq!(run("3").lines().count(), 4);
}

#[test]
fn train_overfits_and_is_deterministic() {
    let ws = Workspace::new();
    let manifest = ws.synth();
    let train = |out: &str| {
        let o = cavt(&[
            "train",
            s(&manifest),
            "--config",
            &ws.config(),
            "--out",
            s(&ws.path(out)),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(ws.path(&format!("{out}.log"))).unwrap()
    };
    let a = train("a.cavp");
    let b = train("b.cavp");
    assert_eq!(a, b);
    assert_eq!(
        fs::read(ws.path("a.cavp")).unwrap(),
        fs::read(ws.path("b.cavp")).unwrap()
    );

    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "epoch,step,loss");
    assert_eq!(lines.len(), 501);
    let final_loss: f64 = lines[500].rsplit(',').next().unwrap().parse().unwrap();
    assert!(final_loss < 1e-2, "{final_loss}");

    let o = cavt(&[
        "predict",
        s(&manifest),
        "--checkpoint",
        s(&ws.path("a.cavp")),
        "--config",
        &ws.config(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest_lines = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    assert_eq!(stdout(&o).lines().count(), manifest_lines);
    assert!(stdout(&o).lines().all(|l| l.starts_with("synth")));
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let ws = Workspace::new();
    let manifest = ws.synth();
    let out = ws.path("init.cavp");
    let o = cavt(&[
        "train",
        s(&manifest),
        "--config",
        &ws.config(),
        "--set",
        "epochs=0",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(ws.path("init.cavp.log")).unwrap(),
        "epoch,step,loss\n"
    );

    let data = cavt_core::data::load_dataset(&manifest).unwrap();
    let sampling = cavt_core::bors::SamplingParams {
        gamma: 1,
        windows: 4,
        alpha: 2,
        r: 2,
    };
    let cfg = cavt_core::training::TrainConfig {
        epochs: 0,
        seed: 9,
        ..Default::default()
    };
    let expected = cavt_core::training::train(
        &data,
        &sampling,
        Default::default(),
        &CavtConfig::tiny(),
        &cfg,
    )
    .unwrap();
    let got = read_checkpoint(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(got, expected.params);
}

#[test]
fn train_error_codes() {
    let ws = Workspace::new();
    let out = ws.path("m.cavp");
    let o = cavt(&[
        "train",
        s(&ws.path("missing.csv")),
        "--config",
        &ws.config(),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let manifest = ws.synth();
    let o = cavt(&[
        "train",
        s(&manifest),
        "--config",
        &ws.config(),
        "--set",
        "learning_rat=1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("learning_rat"));

    fs::write(ws.path("bad.cfg"), "epochs=1\ntypo_key=3\n").unwrap();
    let o = cavt(&[
        "train",
        s(&manifest),
        "--config",
        s(&ws.path("bad.cfg")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(64));

    // 12-frame videos cannot hold 4 windows at γ = 5.
    let o = cavt(&[
        "train",
        s(&manifest),
        "--config",
        &ws.config(),
        "--set",
        "gamma=5",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_and_compatibility() {
    let ws = Workspace::new();
    let manifest = ws.synth();
    let ckpt = ws.path("m.cavp");
    let o = cavt(&[
        "train",
        s(&manifest),
        "--config",
        &ws.config(),
        "--set",
        "max_steps=5",
        "--out",
        s(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cavt(&[
        "eval",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--config",
        &ws.config(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("mse="));
    assert!(text.lines().nth(1).unwrap().starts_with("mmse="));
    assert_eq!(text.lines().filter(|l| l.starts_with("level=")).count(), 4);

    // Unset model keys come from the checkpoint.
    let o = cavt(&[
        "predict",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--set",
        "gamma=1",
        "--set",
        "alpha=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cavt(&[
        "eval",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--config",
        &ws.config(),
        "--set",
        "embed_dim=32",
    ]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("embed_dim"), "{}", stderr(&o));
}

#[test]
fn eval_of_prediction_files() {
    let ws = Workspace::new();
    let manifest = ws.path("labels.csv");
    fs::write(
        &manifest,
        "a,a.cavf,0\nb,b.cavf,0.33\nc,c.cavf,0.66\nd,d.cavf,1\n",
    )
    .unwrap();

    let preds = ws.path("preds.csv");
    fs::write(&preds, "a,0.1\nb,0.33\nc,0.66\nd,1\n").unwrap();
    let o = cavt(&["eval", s(&manifest), "--predictions", s(&preds)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("mse=0.0025\nmmse=0.0025\n"), "{text}");
    assert!(text.contains("level=0 count=1 mse=0.01\n"), "{text}");

    fs::write(&preds, "a,0\nb,0.33\nc,0.66\nd,1\n").unwrap();
    let o = cavt(&["eval", s(&manifest), "--predictions", s(&preds)]);
    assert!(stdout(&o).starts_with("mse=0\nmmse=0\n"), "{}", stdout(&o));

    fs::write(&preds, "a,0\nb,0.33\n").unwrap();
    let o = cavt(&["eval", s(&manifest), "--predictions", s(&preds)]);
    assert_eq!(o.status.code(), Some(2));

    let o = cavt(&["eval", s(&manifest)]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn gradcheck_reports_and_controls() {
    let o = cavt(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    let overall: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("overall max_rel_error="))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(overall < 1e-4, "{text}");
    for group in ["embed", "positional", "sa.0", "sa.1", "cls", "ca.0", "head"] {
        let prefix = format!("{group} max_rel_error=");
        assert_eq!(
            text.lines().filter(|l| l.starts_with(&prefix)).count(),
            1,
            "{group} in {text}"
        );
    }

    let o = cavt(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));

    let o = cavt(&["gradcheck", "--set", "embed_dim=128"]);
    assert_eq!(o.status.code(), Some(64));
}

fn summary_total(args: &[&str]) -> (String, usize) {
    let mut full = vec!["summary"];
    full.extend(args);
    let o = cavt(&full);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let total = text
        .lines()
        .find_map(|l| l.strip_prefix("total="))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    (text, total)
}

#[test]
fn summary_counts() {
    let ws = Workspace::new();
    let (text, total) = summary_total(&["--config", &ws.config()]);
    assert_eq!(total, count_params(&CavtConfig::tiny()));
    assert!(text.contains("sa.0.attn.wq [16, 16] 256\n"), "{text}");

    let (text, total) = summary_total(&[]);
    assert_eq!(total, count_params(&CavtConfig::default()));
    assert!(text.contains("reference=119.85M"), "{text}");

    let (wide, _) = summary_total(&["--config", &ws.config(), "--set", "embed_dim=32"]);
    assert!(wide.contains("sa.0.attn.wq [32, 32] 1024\n"), "{wide}");

    let o = cavt(&["summary", "--set", "nope=1"]);
    assert_eq!(o.status.code(), Some(64));
}
