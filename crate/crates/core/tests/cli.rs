use std::fs;
use std::path::Path;

use dojoba::cli::{run, EXIT_DATA, EXIT_IO, EXIT_NUMERICAL, EXIT_USAGE};
use dojoba::formats::{read_vectors, write_vectors};
use dojoba::ModelFile;

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["dojoba"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(dir.path(), "train.csv");
    let enroll = path(dir.path(), "enroll.csv");
    let test = path(dir.path(), "test.csv");
    let (code, out, err) = call(&[
        "synth",
        "--speakers",
        "12",
        "--phrases",
        "4",
        "--sessions",
        "3",
        "--dim",
        "4",
        "--seed",
        "1",
        "-o",
        &train,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("rows 144"), "{out}");
    assert_eq!(
        read_vectors(fs::File::open(&train).unwrap()).unwrap().len(),
        144
    );
    for (name, seed) in [(&enroll, "2"), (&test, "3")] {
        let (code, _, err) = call(&[
            "synth",
            "--speakers",
            "5",
            "--phrases",
            "4",
            "--sessions",
            "1",
            "--dim",
            "4",
            "--seed",
            seed,
            "-o",
            name,
        ]);
        assert_eq!(code, 0, "{err}");
    }
    // Sessions must not collide between enrollment and test.
    let mut vectors = read_vectors(fs::File::open(&test).unwrap()).unwrap();
    for v in &mut vectors {
        v.session_id = format!("test-{}", v.session_id);
    }
    write_vectors(&vectors, fs::File::create(&test).unwrap()).unwrap();

    let dm = path(dir.path(), "dojoba.json");
    let jm = path(dir.path(), "jb.json");
    assert_eq!(
        call(&["train", "--vectors", &train, "--iters", "3", "-o", &dm]).0,
        0
    );
    let (code, _, err) = call(&[
        "train",
        "--vectors",
        &train,
        "--kind",
        "jb",
        "--iters",
        "3",
        "-o",
        &jm,
    ]);
    assert_eq!(code, 0, "{err}");
    let model = ModelFile::load(fs::File::open(&dm).unwrap()).unwrap();
    assert_eq!(model.input_dim(), 4);

    let csv = path(dir.path(), "report.csv");
    let (code, out, err) = call(&[
        "eval", "--model", &dm, "--model", &jm, "--cosine", "--enroll", &enroll, "--test", &test,
        "--csv", &csv,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("EER(%)") && out.contains("Total"), "{out}");
    let report = fs::read_to_string(&csv).unwrap();
    assert!(report.starts_with("system,condition,eer_percent,threshold\n"));
    assert_eq!(report.lines().count(), 1 + 3 * 4);
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&[
        "train",
        "--vectors",
        &path(dir.path(), "nope.csv"),
        "-o",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(
        call(&[
            "train",
            "--vectors",
            "v.csv",
            "-o",
            "m.json",
            "--cov",
            "banded"
        ])
        .0,
        EXIT_USAGE
    );
    assert_eq!(call(&["eval"]).0, EXIT_USAGE);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "bad.csv");
    fs::write(
        &file,
        "speaker,phrase,session,f0,f1\na,x,0,1.0,2.0\na,y,1,1.0,oops\n",
    )
    .unwrap();
    let (code, _, err) = call(&[
        "train",
        "--vectors",
        &file,
        "-o",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("line 3"), "{err}");

    fs::write(
        &file,
        "speaker,phrase,session,f0,f1\na,x,0,1.0,2.0\na,y,1,1.0\n",
    )
    .unwrap();
    let (code, _, err) = call(&[
        "train",
        "--vectors",
        &file,
        "-o",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn rank_deficient_projection_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "flat.csv");
    let mut text = String::from("speaker,phrase,session,f0,f1,f2\n");
    for k in 0..20 {
        let (a, b) = (k as f64, (k * k % 7) as f64);
        text.push_str(&format!("s{},p{},{k},{a},{b},{}\n", k % 4, k % 3, a + b));
    }
    fs::write(&file, text).unwrap();
    let (code, _, err) = call(&[
        "train",
        "--vectors",
        &file,
        "--pca",
        "3",
        "-o",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(code, EXIT_NUMERICAL, "{err}");
}
