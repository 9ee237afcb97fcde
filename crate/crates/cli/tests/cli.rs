//! CLI contract tests: subcommand behavior and the stable exit codes
//! (0 success, 2 input error, 3 missing dependency, 4 internal).

use std::path::Path;
use std::process::{Command, Output};

use tvd_core::synth::{self, table1};
use tvd_core::violations::ViolationKind;

fn tvd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn write_scene(id: &str, seed: u64, dir: &Path) -> synth::ScenarioSpec {
    let spec = table1::build_table1_corpus(seed)
        .into_iter()
        .find(|s| s.scene_id == id)
        .unwrap();
    let scene = synth::generate_scene(&spec).unwrap();
    synth::write_scene(&scene, &dir.join(id)).unwrap();
    spec
}

#[test]
fn track_happy_path_writes_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let text = (0..6)
        .map(|f| format!("{f}\t{}\tcar\t10\t10\t30\t20\t0.9\n", f * 100))
        .collect::<String>();
    std::fs::write(dir.path().join("dets.tsv"), text).unwrap();
    let out = tvd(
        &[
            "track",
            "--detections", "dets.tsv",
            "--fps", "10",
            "--width", "640",
            "--height", "360",
            "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tracks = std::fs::read_to_string(dir.path().join("run/tracks.tsv")).unwrap();
    assert!(!tracks.is_empty());
    assert!(dir.path().join("run/run_manifest.toml").exists());
}

#[test]
fn track_missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tvd(
        &["track", "--detections", "nope.tsv", "--width", "640", "--height", "360"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn track_empty_stream_is_success_with_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dets.tsv"), "# empty\n").unwrap();
    let out = tvd(
        &[
            "track",
            "--detections", "dets.tsv",
            "--fps", "10",
            "--width", "640",
            "--height", "360",
            "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let tracks = std::fs::read_to_string(dir.path().join("run/tracks.tsv")).unwrap();
    assert!(tracks.is_empty());
}

#[test]
fn track_malformed_stream_exits_2_with_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dets.tsv"), "0\t0\tbicycle\t1\t1\t5\t5\t0.9\n").unwrap();
    let out = tvd(
        &["track", "--detections", "dets.tsv", "--width", "640", "--height", "360"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn analyze_rule_filter_yields_zero_events_on_other_scene() {
    let dir = tempfile::tempdir().unwrap();
    write_scene("red_light_1", 7, dir.path());
    let out = tvd(
        &[
            "analyze",
            "--scene", "red_light_1",
            "--rules", "breakdown",
            "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("breakdown_lane=0"), "stdout: {stdout}");
    let events = std::fs::read_to_string(dir.path().join("run/red_light_1/events.tsv")).unwrap();
    assert!(events.is_empty());
}

#[test]
fn analyze_red_light_without_frames_exits_3_naming_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    write_scene("red_light_1", 7, dir.path());
    std::fs::remove_dir_all(dir.path().join("red_light_1/frames")).unwrap();
    let out = tvd(
        &["analyze", "--scene", "red_light_1", "--rules", "red-light", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("red_light"), "stderr: {stderr}");
}

#[test]
fn analyze_unknown_rule_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_scene("following_1", 7, dir.path());
    let out = tvd(
        &["analyze", "--scene", "following_1", "--rules", "jaywalking", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn analyze_detects_planted_red_light_pass() {
    let dir = tempfile::tempdir().unwrap();
    write_scene("red_light_1", 7, dir.path());
    let out = tvd(
        &["analyze", "--scene", "red_light_1", "--rules", "all", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let events = std::fs::read_to_string(dir.path().join("run/red_light_1/events.tsv")).unwrap();
    let red_lines = events.lines().filter(|l| l.starts_with("red_light\t")).count();
    assert_eq!(red_lines, 1, "events: {events}");
}

#[test]
fn synth_table1_writes_28_scene_dirs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let r = tvd(&["synth", "--table1", "--seed", "7", "--out", out], dir.path());
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let count = |p: &str| {
        std::fs::read_dir(dir.path().join(p))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .count()
    };
    assert_eq!(count("a"), 28);
    assert_eq!(count("b"), 28);

    // identical directory trees byte for byte
    for entry in walk(&dir.path().join("a")) {
        let rel = entry.strip_prefix(dir.path().join("a")).unwrap().to_path_buf();
        if rel.file_name().map_or(false, |n| n == "run_manifest.toml") {
            continue; // records argv, which differs by --out
        }
        let other = dir.path().join("b").join(&rel);
        let a = std::fs::read(&entry).unwrap();
        let b = std::fs::read(&other).unwrap_or_else(|_| panic!("missing {rel:?}"));
        assert_eq!(a, b, "file {rel:?} differs between identical seeds");
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_malformed_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "scene_id = 3\n").unwrap();
    let out = tvd(&["synth", "--spec", "bad.toml", "--out", "run"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_spec_file_generates_scene() {
    let dir = tempfile::tempdir().unwrap();
    let spec = table1::build_table1_corpus(7)
        .into_iter()
        .find(|s| s.scene_id == "following_1")
        .unwrap();
    std::fs::write(dir.path().join("spec.toml"), toml::to_string(&spec).unwrap()).unwrap();
    let out = tvd(&["synth", "--spec", "spec.toml", "--out", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/following_1/detections.tsv").exists());
}

#[test]
fn plate_reads_clean_synthetic_plate() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = synth::render_plate("ABC123", 8);
    img.save(dir.path().join("plate.png")).unwrap();
    let quad = format!("0,0,{w},0,{w},{h},0,{h}", w = img.width(), h = img.height());
    let out = tvd(
        &["plate", "--image", "plate.png", "--quad", &quad],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("text: ABC123"), "stdout: {stdout}");
}

#[test]
fn plate_blank_image_prints_empty_readout() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_pixel(200, 70, image::Rgb([230, 230, 230]));
    img.save(dir.path().join("blank.png")).unwrap();
    let out = tvd(
        &["plate", "--image", "blank.png", "--quad", "0,0,200,0,200,70,0,70"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("text: \n") || stdout.trim_end().ends_with("text:"), "stdout: {stdout}");
}

#[test]
fn plate_degenerate_quad_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = synth::render_plate("AB", 8);
    img.save(dir.path().join("plate.png")).unwrap();
    // bow-tie corners
    let out = tvd(
        &["plate", "--image", "plate.png", "--quad", "0,0,100,0,0,50,100,50"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn report_on_empty_outbox_is_success() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("outbox")).unwrap();
    let out = tvd(&["report", "--outbox", "outbox"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("nothing to retry"));
}

#[test]
fn report_retries_queued_notice_and_delivers() {
    use std::io::Write as _;
    use tvd_core::report::{build_notice, Outbox, ReportConfig};
    use tvd_core::violations::ViolationEvent;

    let dir = tempfile::tempdir().unwrap();
    let outbox = Outbox::create(dir.path().join("outbox")).unwrap();
    let event = ViolationEvent {
        kind: ViolationKind::IllegalParking,
        track_id: 5,
        frame_range: (1, 40),
        evidence: vec![1, 20, 40],
        score: 0.9,
    };
    let notice = build_notice(
        &event, None, None, "s1", None, None,
        outbox.dir(), "2026-01-01T00:00:00Z".to_string(),
    )
    .unwrap();
    // queue it against a dead endpoint
    let dead = ReportConfig {
        endpoint: Some("http://127.0.0.1:1/x".to_string()),
        timeout_ms: 200,
        backoff_base_ms: 0,
        ..ReportConfig::default()
    };
    outbox.emit(&notice, &dead).unwrap();

    // one-shot 200 server for the CLI retry
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/notices", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        if let Ok((mut stream, _)) = listener.accept() {
            let mut buf = [0u8; 4096];
            let _ = std::io::Read::read(&mut stream, &mut buf);
            let _ = stream.write_all(b"HTTP/1.1 200 OK\r\ncontent-length: 0\r\n\r\n");
        }
    });

    // zero backoff so the retry is immediately eligible
    std::fs::write(dir.path().join("cfg.toml"), "[report]\nbackoff_base_ms = 0\n").unwrap();
    let out = tvd(
        &["report", "--outbox", "outbox", "--endpoint", &endpoint, "--config", "cfg.toml"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Delivered"), "stdout: {stdout}");
}

#[test]
fn config_file_and_flag_overrides_are_honored() {
    let dir = tempfile::tempdir().unwrap();
    write_scene("following_1", 7, dir.path());
    // absurd threshold: the planted 2.1 s merge stops counting as a violation
    std::fs::write(
        dir.path().join("cfg.toml"),
        "[violations]\nfollow_threshold_secs = 0.5\n",
    )
    .unwrap();
    let out = tvd(
        &[
            "analyze",
            "--scene", "following_1",
            "--rules", "following-distance",
            "--config", "cfg.toml",
            "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let events = std::fs::read_to_string(dir.path().join("run/following_1/events.tsv")).unwrap();
    assert!(events.is_empty(), "events: {events}");
    // manifest echoes the effective value
    let manifest = std::fs::read_to_string(dir.path().join("run/run_manifest.toml")).unwrap();
    assert!(manifest.contains("follow_threshold_secs = 0.5"), "manifest missing override");
}
