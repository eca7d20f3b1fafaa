use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hta_core::datapipe::{write_jsonl, Transcript, TranscriptSentence};
use hta_core::numerics::{io, Tensor};

fn hta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hta"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Open/closed pattern of the stacked GST mask straight from the predicates.
fn gst_oracle(t: usize, n: usize, u: usize, v: usize, r: usize) -> Vec<Vec<bool>> {
    let s = 1 + u * v + t * n;
    let first_patch = 1 + u * v;
    let mut grid = vec![vec![false; s]; s];
    grid[0] = vec![true; s];
    for (i, row) in grid.iter_mut().enumerate().skip(1) {
        for (j, cell) in row.iter_mut().enumerate().skip(1) {
            *cell = match (i < first_patch, j < first_patch) {
                (true, true) => (i - 1) / v >= (j - 1) / v,
                (true, false) => {
                    ((j - first_patch) / n).is_multiple_of(r.pow(((i - 1) / v) as u32))
                }
                (false, true) => true,
                (false, false) => (i - first_patch) / n == (j - first_patch) / n,
            };
        }
    }
    grid
}

#[test]
fn mask_dump_matches_oracle() {
    let out = hta(&[
        "mask",
        "dump",
        "--layout",
        "4,4,2,1,2",
        "--family",
        "gst",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows: Vec<Vec<bool>> = stdout(&out)
        .lines()
        .map(|l| l.split(',').map(|c| c == "0").collect())
        .collect();
    assert_eq!(rows.len(), 19);
    assert_eq!(rows, gst_oracle(4, 4, 2, 1, 2));
}

#[test]
fn mask_dump_pgm_and_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("slt.pgm");
    let out = hta(&[
        "mask",
        "dump",
        "--layout",
        "4,4,2,1,2",
        "--family",
        "slt",
        "--format",
        "pgm",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("P2\n16 16\n255\n"), "{text}");
    assert!(dir.path().join("slt.pgm.manifest.json").exists());
}

#[test]
fn selftest_passes() {
    let out = hta(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!stdout(&out).contains("FAIL"));
}

#[test]
fn exit_codes() {
    assert_eq!(hta(&["selftest", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        hta(&["mask", "dump", "--layout", "4,4", "--family", "gst"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        hta(&[
            "mask",
            "dump",
            "--layout",
            "4,4,0,1,2",
            "--family",
            "gst-mst"
        ])
        .status
        .code(),
        Some(1)
    );
    let missing = hta(&[
        "eval",
        "--video-emb",
        "/no/such/file",
        "--text-emb",
        "/no/such/file",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/no/such/file"));
    assert_eq!(hta(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_identity_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("e.bin");
    io::save(&emb, &Tensor::identity(5)).unwrap();
    let report = dir.path().join("report.json");
    let e = emb.to_str().unwrap();
    for extra in [
        &[][..],
        &["--dsl", "--alpha", "50", "--direction", "v2t"][..],
    ] {
        let mut args = vec![
            "eval",
            "--video-emb",
            e,
            "--text-emb",
            e,
            "--out",
            report.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        assert_eq!(hta(&args).status.code(), Some(0));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["R@1"], 100.0);
        assert_eq!(json["MdR"], 1.0);
    }
}

#[test]
fn eval_rejects_non_unit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("e.bin");
    io::save(&emb, &Tensor::filled(&[2, 2], 1.0)).unwrap();
    let e = emb.to_str().unwrap();
    assert_eq!(
        hta(&["eval", "--video-emb", e, "--text-emb", e])
            .status
            .code(),
        Some(1)
    );
}

fn train_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "--seed",
        "5",
        "train",
        "--synthetic",
        "8",
        "--steps",
        "4",
        "--base-lr",
        "1e-3",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    hta(&args)
}

#[test]
fn training_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(train_into(&a, &[]).status.code(), Some(0));
    assert_eq!(train_into(&b, &[]).status.code(), Some(0));
    for file in [
        "trace.csv",
        "params.bin",
        "video_emb.bin",
        "subtitle_emb.bin",
        "caption_emb.bin",
    ] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let ma: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["seed"], 5);
    assert_eq!(ma["config_hash"].as_str().unwrap().len(), 64);
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,loss,lr,tau"));
    assert_eq!(trace.lines().count(), 5);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    fs::write(
        &cfg,
        "# toy run\nsteps = 7\nbase_lr=2e-3\nfinal_lr=1e-5\nseed=9\n",
    )
    .unwrap();
    let out = dir.path().join("ck");
    let code = hta(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synthetic",
        "4",
        "--steps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(0));
    assert_eq!(
        fs::read_to_string(out.join("trace.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("base_lr=0.002"));
    assert!(manifest.contains("\"seed\": 9"));
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key=1\n").unwrap();
    let out = dir.path().join("ck");
    let args = [
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(hta(&args).status.code(), Some(1));
    fs::write(&cfg, "final_lr=1\nbase_lr=0.1\n").unwrap();
    assert_eq!(hta(&args).status.code(), Some(1));
}

#[test]
fn trains_from_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let clips: Vec<Tensor> = (0..3)
        .map(|i| Tensor::filled(&[4, 8, 8, 3], 0.1 * i as f64))
        .collect();
    io::save_all(data.join("clips.bin"), &clips).unwrap();
    fs::write(data.join("subtitles.jsonl"), "[1,2,3]\n[4,5]\n[6]\n").unwrap();
    fs::write(data.join("captions.jsonl"), "[7]\n[8,9]\n[10,11,12]\n").unwrap();
    let out = dir.path().join("ck");
    let args = [
        "train",
        "--data",
        data.to_str().unwrap(),
        "--steps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(hta(&args).status.code(), Some(0));
    assert_eq!(
        io::load(out.join("video_emb.bin")).unwrap().shape(),
        &[3, 8]
    );

    fs::write(data.join("captions.jsonl"), "[7]\n").unwrap();
    assert_eq!(hta(&args).status.code(), Some(1));
    fs::remove_file(data.join("clips.bin")).unwrap();
    assert_eq!(hta(&args).status.code(), Some(2));
}

#[test]
fn curate_with_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let sentences: Vec<TranscriptSentence> = (0..30)
        .map(|i| TranscriptSentence {
            text: format!("sentence number {i} has several words in it."),
            t0: 4.0 * i as f64,
            t1: 4.0 * i as f64 + 4.0,
        })
        .collect();
    write_jsonl(
        &input.join("videos.jsonl"),
        &[Transcript::Sentences {
            video_id: "v1".into(),
            sentences,
        }],
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = hta(&[
        "curate",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--scales",
        "13,30,60",
        "--fps",
        "0.1",
        "--summarizer",
        "fallback",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let clips = fs::read_to_string(out.join("clips.jsonl")).unwrap();
    assert!(clips.lines().count() > 3);
    for line in clips.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let words = rec["summarized_subtitle"]
            .as_str()
            .unwrap()
            .split_whitespace()
            .count();
        if rec["scale"] == "short" {
            assert_eq!(rec["summarized_subtitle"], rec["subtitle"]);
        } else {
            assert!(words <= 25);
        }
    }
    assert!(out.join("manifest.json").exists());
    assert!(out.join("stats.json").exists());

    let bad = hta(&[
        "curate",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--scales",
        "30,13",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let missing = hta(&[
        "curate",
        "--in",
        "/no/such/dir",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
