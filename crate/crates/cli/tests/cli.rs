use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use longvid_core::embedding::Format;
use longvid_core::simulate::synthetic_embeddings;
use longvid_core::SamplingPlan;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn longvid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longvid"))
        .current_dir(dir)
        .env_remove("LONGVID_LAMBDA")
        .env_remove("LONGVID_STAGE2_FPS")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 45 min video embedded at 4 frames per minute: 180 rows.
fn write_embeddings(dir: &Path, video_id: &str, format: Format) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seq = synthetic_embeddings(video_id, 2700.0, 4.0, 8, &mut rng).unwrap();
    assert_eq!(seq.len(), 180);
    let ext = match format {
        Format::Binary => "emb",
        Format::Csv => "csv",
    };
    let path = dir.join(format!("{video_id}.{ext}"));
    seq.save(&path, format).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn select_ratio_defaults_and_all() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(tmp.path(), "v1", Format::Binary);
    let out = longvid(tmp.path(), &["select", "v1.emb", "--out", "sel.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sel = read_json(&tmp.path().join("sel.json"));
    let idx = sel["indices"].as_array().unwrap();
    assert_eq!(idx.len(), 45);
    assert_eq!(sel["timestamps"].as_array().unwrap().len(), 45);
    assert!(sel["objective"].is_f64());
    assert!(idx.windows(2).all(|p| p[0].as_u64() < p[1].as_u64()));

    let out = longvid(tmp.path(), &["select", "v1.emb", "--keep-ratio", "1.0"]);
    assert_eq!(code(&out), 0);
    let sel: Value = serde_json::from_slice(&out.stdout).unwrap();
    let idx: Vec<u64> = sel["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(idx, (0..180).collect::<Vec<u64>>());
}

#[test]
fn select_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(tmp.path(), "v1", Format::Csv);
    assert_eq!(
        code(&longvid(tmp.path(), &["select", "v1.csv", "-k", "0"])),
        2
    );
    assert_eq!(
        code(&longvid(tmp.path(), &["select", "v1.csv", "-k", "181"])),
        2
    );
    assert_eq!(
        code(&longvid(
            tmp.path(),
            &["select", "v1.csv", "--keep-ratio", "1.5"]
        )),
        2
    );
    assert_eq!(
        code(&longvid(tmp.path(), &["select", "v1.csv", "--beta", "-1"])),
        2
    );
    let missing = longvid(tmp.path(), &["select", "nope.csv", "-k", "3"]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("nope.csv"));

    std::fs::write(tmp.path().join("bad.csv"), "t,e0,e1\n0.5,1,2\n1.5,1\n").unwrap();
    let bad = longvid(tmp.path(), &["select", "bad.csv", "-k", "1"]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("E_DIM"), "{}", stderr(&bad));
}

#[test]
fn select_uniform_and_weights_dump() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(tmp.path(), "v1", Format::Binary);
    let out = longvid(
        tmp.path(),
        &[
            "select",
            "v1.emb",
            "-k",
            "4",
            "--uniform",
            "--weights-csv",
            "w.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sel: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sel["method"], "uniform");
    assert_eq!(sel["indices"], serde_json::json!([22, 67, 112, 157]));
    let rows = std::fs::read_to_string(tmp.path().join("w.csv")).unwrap();
    assert_eq!(
        rows.lines()
            .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
            .count(),
        180 * 179 / 2
    );
}

#[test]
fn plan_oracle_covers_gt_with_timeline() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(tmp.path(), "v1", Format::Binary);
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--embeddings",
            "v1.emb",
            "--gt",
            "1000:1180",
            "--out",
            "p.json",
            "--timeline",
            "t.svg",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan: SamplingPlan =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("p.json")).unwrap()).unwrap();
    plan.validate().unwrap();
    assert_eq!(plan.video_id, "v1");
    assert_eq!(plan.budget.stage1_frames, 45);
    let covered: f64 = plan
        .selected_segments()
        .iter()
        .map(|s| s.span().overlap(&longvid_core::Span::new(1000.0, 1180.0)))
        .sum();
    assert!((covered - 180.0).abs() < 1e-9);
    let svg = std::fs::read_to_string(tmp.path().join("t.svg")).unwrap();
    assert_eq!(
        svg.matches(r#"class="tick "#).count(),
        plan.budget.total_frames
    );
}

#[test]
fn plan_scripted_three_segments() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(tmp.path(), "v1", Format::Binary);
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--embeddings",
            "v1.emb",
            "--localizer",
            "scripted",
            "--max-selected",
            "3",
            "--reply",
            "Segments: 20, 21, 22",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&tmp.path().join("p.json"));
    assert_eq!(plan["selected"], serde_json::json!([20, 21, 22]));
    let dense: u64 = (20..23)
        .map(|i| {
            let seg = &plan["segments"][i];
            (seg["end_s"].as_f64().unwrap() - seg["start_s"].as_f64().unwrap()).floor() as u64
        })
        .sum();
    assert_eq!(plan["budget"]["stage1_frames"], 45);
    assert_eq!(plan["budget"]["stage2_frames"].as_u64().unwrap(), dense);
    assert_eq!(plan["budget"]["total_frames"].as_u64().unwrap(), 45 + dense);
}

#[test]
fn plan_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = longvid(tmp.path(), &["plan", "--duration", "600", "--gt", "10:20"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("embeddings"));
    // without thinning no embeddings are needed
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--duration",
            "600",
            "--gt",
            "10:20",
            "--keep-ratio",
            "1",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // oracle without ground truth
    let out = longvid(
        tmp.path(),
        &["plan", "--duration", "600", "--keep-ratio", "1"],
    );
    assert_eq!(code(&out), 2);
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--duration",
            "600",
            "--keep-ratio",
            "1",
            "--localizer",
            "scripted",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn plan_remote_failure_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}/v1/localize");
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--duration",
            "600",
            "--keep-ratio",
            "1",
            "--localizer",
            "remote",
            "--localizer-url",
            &url,
            "--retries",
            "1",
            "--timeout-ms",
            "500",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("remote"));
    assert!(!tmp.path().join("p.json").exists());
}

#[test]
fn plan_extract_cmd_runs_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--duration",
            "300",
            "--keep-ratio",
            "1",
            "--gt",
            "0:60",
            "--out",
            "p.json",
            "--video",
            "videos/{video_id}.mp4",
            "--frames-dir",
            "frames",
            "--extract-cmd",
            "touch {out_path}",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&tmp.path().join("p.json"));
    let expected = plan["budget"]["total_frames"].as_u64().unwrap() as usize;
    let frames = std::fs::read_dir(tmp.path().join("frames/video"))
        .unwrap()
        .count();
    assert_eq!(frames, expected);

    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--duration",
            "300",
            "--keep-ratio",
            "1",
            "--gt",
            "0:60",
            "--out",
            "q.json",
            "--video",
            "x.mp4",
            "--extract-cmd",
            "false {out_path}",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("q.json").exists());
}

#[test]
fn plan_batch_from_qa_file() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = longvid(
        tmp.path(),
        &[
            "simulate",
            "--items",
            "3",
            "--out-dir",
            "sim",
            "--duration",
            "2700",
        ],
    );
    assert_eq!(code(&sim), 0, "{}", stderr(&sim));
    std::fs::create_dir(tmp.path().join("emb")).unwrap();
    let qa = std::fs::read_to_string(tmp.path().join("sim/qa.jsonl")).unwrap();
    for line in qa.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        write_embeddings(
            &tmp.path().join("emb"),
            rec["video_id"].as_str().unwrap(),
            Format::Binary,
        );
    }
    let out = longvid(
        tmp.path(),
        &[
            "plan",
            "--qa",
            "sim/qa.jsonl",
            "--embeddings-dir",
            "emb",
            "--plans-dir",
            "plans",
            "--timeline",
            "svg",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for id in ["q00000", "q00001", "q00002"] {
        assert!(tmp.path().join(format!("plans/{id}.plan.json")).is_file());
        assert!(tmp.path().join(format!("svg/{id}.svg")).is_file());
    }
    let eval = longvid(
        tmp.path(),
        &[
            "evaluate",
            "--qa",
            "sim/qa.jsonl",
            "--replies",
            "sim/replies.jsonl",
            "--plans-dir",
            "plans",
            "--out-dir",
            "rep",
        ],
    );
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert_eq!(
        read_json(&tmp.path().join("rep/report.json"))["mean_coverage"],
        1.0
    );
}

fn qa_line(id: &str, answer: &str) -> String {
    format!(
        r#"{{"id":"{id}","video_id":"v","question":"q","options":{{"A":"a","B":"b","C":"c","D":"d"}},"answer":"{answer}","target":{{"start_s":10.0,"end_s":190.0}},"duration_s":600.0}}"#
    )
}

#[test]
fn evaluate_hand_counted_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let qa: Vec<String> = [("1", "A"), ("2", "B"), ("3", "C"), ("4", "D"), ("5", "A")]
        .iter()
        .map(|(i, a)| qa_line(i, a))
        .collect();
    std::fs::write(tmp.path().join("qa.jsonl"), qa.join("\n")).unwrap();
    let replies = [
        r#"{"id":"1","reply_text":"The answer is (A)."}"#,
        r#"{"id":"2","reply_text":"Answer: C"}"#,
        r#"{"id":"3","reply_text":"C. because"}"#,
        r#"{"id":"4","reply_text":"no idea"}"#,
        r#"{"id":"5","reply_text":"A"}"#,
    ];
    std::fs::write(tmp.path().join("replies.jsonl"), replies.join("\n")).unwrap();
    let out = longvid(
        tmp.path(),
        &[
            "evaluate",
            "--qa",
            "qa.jsonl",
            "--replies",
            "replies.jsonl",
            "--out-dir",
            "rep",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&tmp.path().join("rep/report.json"));
    assert_eq!(report["n_correct"], 3);
    assert_eq!(report["n_unparsable"], 1);
    assert_eq!(report["accuracy"], 0.6);
    assert!(std::fs::read_to_string(tmp.path().join("rep/report.txt"))
        .unwrap()
        .contains("60.0%"));
}

#[test]
fn evaluate_rejects_mismatch_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("qa.jsonl"),
        [qa_line("1", "A"), qa_line("2", "B")].join("\n"),
    )
    .unwrap();
    std::fs::write(
        tmp.path().join("replies.jsonl"),
        "{\"id\":\"1\",\"reply_text\":\"A\"}\n{\"id\":\"9\",\"reply_text\":\"B\"}\n",
    )
    .unwrap();
    let out = longvid(
        tmp.path(),
        &["evaluate", "--qa", "qa.jsonl", "--replies", "replies.jsonl"],
    );
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("no reply for: 2") && err.contains("reply without record: 9"),
        "{err}"
    );
    assert!(!tmp.path().join("reports").exists());

    std::fs::write(tmp.path().join("empty.jsonl"), "\n").unwrap();
    let out = longvid(
        tmp.path(),
        &["evaluate", "--qa", "qa.jsonl", "--replies", "empty.jsonl"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no replies"));
}

#[test]
fn config_precedence_flags_env_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "stage2_fps = 0.5\nstage1_fpm = 2.0\nkeep_ratio = 1.0\n",
    )
    .unwrap();
    let plan = |extra_env: Option<(&str, &str)>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_longvid"));
        cmd.current_dir(tmp.path()).env_remove("LONGVID_STAGE2_FPS");
        if let Some((k, v)) = extra_env {
            cmd.env(k, v);
        }
        let mut args = vec![
            "--config",
            "run.toml",
            "plan",
            "--duration",
            "600",
            "--gt",
            "0:60",
            "--out",
            "p.json",
        ];
        args.extend_from_slice(extra);
        let out = cmd.args(&args).output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        read_json(&tmp.path().join("p.json"))
    };
    let p = plan(None, &[]);
    assert_eq!(p["stage2"]["rate_fps"], 0.5);
    assert_eq!(p["stage1"]["rate_fpm"], 2.0);
    let p = plan(Some(("LONGVID_STAGE2_FPS", "0.25")), &[]);
    assert_eq!(p["stage2"]["rate_fps"], 0.25);
    let p = plan(Some(("LONGVID_STAGE2_FPS", "0.25")), &["--stage2-fps", "2"]);
    assert_eq!(p["stage2"]["rate_fps"], 2.0);

    std::fs::write(tmp.path().join("bad.toml"), "lamda = 3\n").unwrap();
    let out = longvid(
        tmp.path(),
        &["--config", "bad.toml", "nsd", "--window", "0:1"],
    );
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_longvid"))
        .current_dir(tmp.path())
        .env("LONGVID_JOBS", "0")
        .args(["nsd", "--window", "0:1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn partition_nsd_timeline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = longvid(
        tmp.path(),
        &[
            "partition",
            "--keyframes",
            "60,180,300",
            "--duration",
            "360",
        ],
    );
    assert_eq!(code(&out), 0);
    let segs: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        segs[1],
        serde_json::json!({"index": 1, "start_s": 120.0, "end_s": 240.0})
    );
    assert_eq!(
        code(&longvid(
            tmp.path(),
            &["partition", "--keyframes", "60,30", "--duration", "360"]
        )),
        2
    );

    std::fs::write(
        tmp.path().join("w.json"),
        r#"[{"start_s": 5.0, "end_s": 9.0}]"#,
    )
    .unwrap();
    let out = longvid(
        tmp.path(),
        &["nsd", "--window", "0:2", "--windows-file", "w.json"],
    );
    assert_eq!(code(&out), 0);
    let nsd: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(nsd["nsd_fps"], 0.5);
    assert_eq!(nsd["windows"], 2);
    assert_eq!(code(&longvid(tmp.path(), &["nsd"])), 2);
    assert_eq!(code(&longvid(tmp.path(), &["nsd", "--window", "5:5"])), 2);

    let plan = SamplingPlan::oracle("v", 600.0, longvid_core::Span::new(60.0, 120.0), 1.0).unwrap();
    std::fs::write(tmp.path().join("p.json"), plan.to_json()).unwrap();
    let out = longvid(
        tmp.path(),
        &[
            "timeline", "--plan", "p.json", "--gt", "60:120", "--out", "t.svg",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(tmp.path().join("t.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="tick stage2""#).count(), 60);
    std::fs::write(tmp.path().join("junk.json"), "{").unwrap();
    assert_eq!(
        code(&longvid(
            tmp.path(),
            &["timeline", "--plan", "junk.json", "--out", "x.svg"]
        )),
        2
    );
}

#[test]
fn simulate_random_localizer_and_rerun_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--items",
        "6",
        "--seed",
        "3",
        "--localizer",
        "random",
        "--answerer",
        "random",
        "--timelines",
        "--out-dir",
        "s",
    ];
    assert_eq!(code(&longvid(tmp.path(), &args)), 0);
    let first = std::fs::read(tmp.path().join("s/report.json")).unwrap();
    let report: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["n_items"], 6);
    for item in report["items"].as_array().unwrap() {
        assert!(item["total_frames"].as_u64().unwrap() > 0);
    }
    assert_eq!(
        std::fs::read_dir(tmp.path().join("s/timelines"))
            .unwrap()
            .count(),
        6
    );
    assert_eq!(code(&longvid(tmp.path(), &args)), 0);
    assert_eq!(
        std::fs::read(tmp.path().join("s/report.json")).unwrap(),
        first
    );
    assert_eq!(
        code(&longvid(
            tmp.path(),
            &["simulate", "--items", "0", "--out-dir", "z"]
        )),
        2
    );
}
