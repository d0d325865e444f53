use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use slcnn::audio::decode_wav;
use slcnn::manifest::DatasetManifest;

fn slcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slcnn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = slcnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST: [&str; 12] = [
    "--set",
    "sample_rate=8000",
    "--set",
    "channels=8",
    "--set",
    "dcnn.max_epochs=2",
    "--set",
    "dcnn.segments_per_clip=16",
    "--set",
    "clf.max_epochs=5",
    "--set",
    "clf.hidden=16",
];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

fn small_corpus(dir: &Path, secs: (&str, &str)) {
    ok(&["make-synthetic", "--out", p(dir), "--clips", "5", "--sample-rate", "8000", "--min-secs", secs.0, "--max-secs", secs.1]);
}

#[test]
fn synthetic_counts_bounds_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["make-synthetic", "--out", p(d), "--classes", "3", "--clips", "40", "--seed", "3", "--sample-rate", "8000"]);
    }
    let m = DatasetManifest::load(&a.join("manifest.tsv")).unwrap();
    assert_eq!(m.rows.len(), 120);
    assert_eq!(fs::read_dir(a.join("wav")).unwrap().count(), 120);
    for row in &m.rows {
        let clip = decode_wav(&m.resolve(row)).unwrap();
        assert!(clip.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
        let secs = clip.duration_secs();
        assert!((3.0..=5.0).contains(&secs), "{secs}");
        let other = fs::read(b.join(&row.path)).unwrap();
        assert_eq!(fs::read(m.resolve(row)).unwrap(), other);
    }
    assert_eq!(fs::read(a.join("manifest.tsv")).unwrap(), fs::read(b.join("manifest.tsv")).unwrap());
}

#[test]
fn bad_scale_is_usage_error() {
    let out = slcnn(&["train-dcnn", "--manifest", "x.tsv", "--scale", "7^2x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("7^2x"));
    assert_eq!(slcnn(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn bad_config_and_manifest_are_validation_errors() {
    let t = tempfile::tempdir().unwrap();
    small_corpus(t.path(), ("1", "1.5"));
    let man = t.path().join("manifest.tsv");
    let out = slcnn(&["train-dcnn", "--manifest", p(&man), "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slcnn(&["train-dcnn", "--manifest", p(&t.path().join("missing.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("corpus");
    small_corpus(&corpus, ("1", "1.5"));
    let man = corpus.join("manifest.tsv");
    let cfg_file = t.path().join("run.cfg");
    fs::write(&cfg_file, "# desk run\nchannels = 4\nruns = 2\n").unwrap();

    let mut checkpoints = Vec::new();
    for run in ["r1", "r2"] {
        let ck = t.path().join(run).join("ck");
        let fe = t.path().join(run).join("fe");
        let rep = t.path().join(run).join("rep");
        let common = with(&FAST, &["--config", p(&cfg_file)]);
        ok(&with(&["train-dcnn", "--manifest", p(&man), "--out", p(&ck), "--seed", "5"], &common));
        ok(&with(&["extract", "--manifest", p(&man), "--checkpoints", p(&ck), "--out", p(&fe)], &common));
        ok(&with(&["train-classifier", "--manifest", p(&man), "--features", p(&fe), "--out", p(&rep)], &common));
        ok(&with(&["evaluate", "--manifest", p(&man), "--features", p(&fe), "--out", p(&rep)], &common));
        checkpoints.push(fs::read(ck.join("dcnn_2_4.ckpt")).unwrap());
        for dir in [&ck, &fe, &rep] {
            let effective = fs::read_to_string(dir.join("effective_config.txt")).unwrap();
            // Flags override the file.
            assert!(effective.contains("channels = 8\n"), "{effective}");
        }
        let header = fs::read_to_string(fe.join("features_test.slfeat")).unwrap();
        assert!(header.starts_with("#SLFEAT1 dim=48 "), "{}", &header[..40]);
        let m = DatasetManifest::load(&man).unwrap();
        for (split, n) in [("train", 9), ("valid", 3), ("test", 3)] {
            let text = fs::read_to_string(fe.join(format!("features_{split}.slfeat"))).unwrap();
            assert_eq!(text.lines().count() - 1, n);
            assert_eq!(m.split(split.parse().unwrap()).count(), n);
        }
        let runs = fs::read_to_string(rep.join("runs.tsv")).unwrap();
        let values: Vec<f64> = runs.lines().map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
        assert_eq!(values.len(), 2);
        let table = fs::read_to_string(rep.join("report.txt")).unwrap();
        let mean = (values[0] + values[1]) / 2.0;
        assert!(table.contains(&format!("mean      {mean:.6}")), "{table}");
        assert!(rep.join("classifier.ckpt").exists());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    for f in ["ck/dcnn_3_3.ckpt", "fe/features_train.slfeat", "rep/report.txt", "rep/runs.tsv", "rep/classifier.ckpt"] {
        assert_eq!(fs::read(t.path().join("r1").join(f)).unwrap(), fs::read(t.path().join("r2").join(f)).unwrap(), "{f}");
    }

    // Ablation export keeps only the requested blocks.
    let sub = t.path().join("sub.slfeat");
    ok(&["export-features", "--features", p(&t.path().join("r1/fe/features_test.slfeat")), "--scale", "3^3", "--levels", "-1,-2", "--out", p(&sub)]);
    let text = fs::read_to_string(&sub).unwrap();
    assert!(text.starts_with("#SLFEAT1 dim=16 blocks=3^3:-2:0:8,3^3:-1:8:8\n"), "{text}");
}

#[test]
fn extract_needs_every_checkpoint_and_keeps_short_songs() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("corpus");
    // 40 samples at 8 kHz: shorter than the 81-sample 3^3 window.
    small_corpus(&corpus, ("0.005", "0.005"));
    let man = corpus.join("manifest.tsv");
    let ck = t.path().join("ck");
    ok(&with(&["train-dcnn", "--manifest", p(&man), "--out", p(&ck), "--scale", "3^3"], &FAST));
    let out = slcnn(&with(&["extract", "--manifest", p(&man), "--checkpoints", p(&ck), "--out", p(&t.path().join("fe"))], &FAST));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2^4"));
    let fe = t.path().join("fe3");
    ok(&with(&["extract", "--manifest", p(&man), "--checkpoints", p(&ck), "--scale", "3^3", "--out", p(&fe)], &FAST));
    let text = fs::read_to_string(fe.join("features_train.slfeat")).unwrap();
    assert_eq!(text.lines().count(), 1 + 9);
}

#[test]
fn evaluate_separable_features_scores_one() {
    let t = tempfile::tempdir().unwrap();
    let mut manifest = String::from("#task=single-label\n#labels=a,b\n");
    let fe = t.path().join("fe");
    fs::create_dir_all(&fe).unwrap();
    for (split, n) in [("train", 20), ("valid", 6), ("test", 10)] {
        let mut text = String::from("#SLFEAT1 dim=2 blocks=2^4:-1:0:2\n");
        for i in 0..n {
            let class = i % 2;
            let id = format!("{split}{i}");
            manifest.push_str(&format!("{id}\tx.wav\t{split}\t{}\n", ["a", "b"][class]));
            let sign = if class == 0 { -1.0 } else { 1.0 };
            text.push_str(&format!("{id}\t{}\t{}\n", sign * (1.0 + i as f64 * 0.1), 0.3 * i as f64));
        }
        fs::write(fe.join(format!("features_{split}.slfeat")), text).unwrap();
    }
    let man = t.path().join("m.tsv");
    fs::write(&man, manifest).unwrap();
    let rep = t.path().join("rep");
    let args = ["evaluate", "--manifest", p(&man), "--features", p(&fe), "--out", p(&rep), "--runs", "1", "--set", "scales=2^4", "--levels", "-1"];
    ok(&args);
    let table = fs::read_to_string(rep.join("report.txt")).unwrap();
    assert!(table.contains("mean      1.000000"), "{table}");
    assert!(table.contains("std       0.000000"), "{table}");

    // A layout that does not match the requested scales is rejected.
    let out = slcnn(&["evaluate", "--manifest", p(&man), "--features", p(&fe), "--out", p(&rep), "--set", "scales=3^9"]);
    assert_eq!(out.status.code(), Some(2));
}
