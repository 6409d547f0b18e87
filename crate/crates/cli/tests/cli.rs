use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evdepth::raster::Pgm;
use evdepth::{read_events, write_events, DepthMap, Event, EventFormat, EventStream, Layout, Polarity};
use serde_json::Value;

fn evdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdepth"))
        .args(args)
        .env_remove("EVDEPTH_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = evdepth(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.push("--json");
    serde_json::from_str(&ok(&a)).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn frames(dir: &Path, levels: &[(u64, u8)]) {
    fs::create_dir_all(dir).unwrap();
    for &(t, v) in levels {
        let pgm = Pgm { width: 3, height: 2, maxval: 255, data: vec![v as u16; 6] };
        pgm.write(dir.join(format!("{t:09}.pgm"))).unwrap();
    }
}

fn stream_file(dir: &Path) -> PathBuf {
    let events = (0..200u64)
        .map(|i| {
            let pol = if i % 3 == 0 { Polarity::Negative } else { Polarity::Positive };
            Event::new((i % 8) as u16, (i / 8 % 6) as u16, pol, 1000 + i * 250)
        })
        .collect();
    let s = EventStream::new(8, 6, events).unwrap();
    let p = dir.join("events.evb");
    write_events(&s, &p, EventFormat::Evb).unwrap();
    p
}

#[test]
fn constant_frames_give_header_only_file() {
    let d = tempfile::tempdir().unwrap();
    frames(&d.path().join("f"), &[(0, 90), (10_000, 90), (20_000, 90)]);
    let out = d.path().join("e.evb");
    let v = json(&["simulate", s(&d.path().join("f")), "-C", "0.2", "-o", s(&out)]);
    assert_eq!(v["events"], 0);
    assert_eq!(fs::metadata(&out).unwrap().len(), 16);
}

#[test]
fn ramp_count_matches_threshold() {
    let d = tempfile::tempdir().unwrap();
    frames(&d.path().join("f"), &[(0, 20), (40_000, 180)]);
    let out = d.path().join("e.csv");
    ok(&["simulate", s(&d.path().join("f")), "--contrast", "0.3", "-o", s(&out)]);
    let stream = read_events(&out, EventFormat::Csv).unwrap();
    let per_pixel = ((181.0f64 / 21.0).ln() / 0.3).floor() as usize;
    assert_eq!(stream.len(), 6 * per_pixel);
    assert!(stream.events().iter().all(|e| e.polarity == Polarity::Positive));
}

#[test]
fn missing_input_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope");
    let out = evdepth(&["simulate", s(&missing), "-o", s(&d.path().join("e.evb"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&evdepth(&[])), 1);
    assert_eq!(code(&evdepth(&["encode"])), 1);
    assert_eq!(code(&evdepth(&["--help"])), 0);
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let clash = evdepth(&["encode", s(&ev), "--window-us", "5", "--count", "5", "-o", "x.pfm"]);
    assert_eq!(code(&clash), 1);
    let zero = evdepth(&["encode", s(&ev), "--window-us", "0", "-o", s(&d.path().join("x.pfm"))]);
    assert_eq!(code(&zero), 2);
    let bad = d.path().join("bad.csv");
    fs::write(&bad, "# evcsv v1 width=8 height=6\n0,0,1,5\n0,0,1,3\n").unwrap();
    assert_eq!(code(&evdepth(&["encode", s(&bad), "-o", s(&d.path().join("y.pfm"))])), 2);
}

#[test]
fn thread_variable_is_validated_and_harmless() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let run = |threads: &str, name: &str| {
        Command::new(env!("CARGO_BIN_EXE_evdepth"))
            .args(["encode", s(&ev), "--layout", "tencode", "-o", s(&d.path().join(name))])
            .env("EVDEPTH_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("1", "a.pfm").status.success());
    assert!(run("4", "b.pfm").status.success());
    assert_eq!(fs::read(d.path().join("a.pfm")).unwrap(), fs::read(d.path().join("b.pfm")).unwrap());
    assert_eq!(code(&run("zero", "c.pfm")), 1);
}

#[test]
fn encode_matches_library_output() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let out = d.path().join("cli.pfm");
    let ppm = d.path().join("cli.ppm");
    let v = json(&[
        "encode", s(&ev), "--t-d", "40000", "--window-us", "20000", "--layout", "tencode", "-o", s(&out),
        "--ppm", s(&ppm),
    ]);
    assert_eq!(v["interval"], serde_json::json!([20000, 40000]));
    let stream = read_events(&ev, EventFormat::Evb).unwrap();
    let stack = Layout::Tencode.encode(&stream.slice_sbt(40_000, 20_000).unwrap()).unwrap();
    let golden = d.path().join("lib.pfm");
    stack.write_pfm(&golden).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&golden).unwrap());
    let golden_ppm = d.path().join("lib.ppm");
    stack.write_ppm(&golden_ppm).unwrap();
    assert_eq!(fs::read(&ppm).unwrap(), fs::read(&golden_ppm).unwrap());
}

#[test]
fn encode_defaults_to_five_bin_voxel_grid() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let v = json(&["encode", s(&ev), "-o", s(&d.path().join("v.pfm"))]);
    assert_eq!(v["outputs"].as_array().unwrap().len(), 5);
    assert!(d.path().join("v_c4.pfm").exists());
    // the default reference time is the last event
    assert_eq!(v["interval"][1], 1000 + 199 * 250);
}

#[test]
fn empty_slice_warns_but_succeeds() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let out = evdepth(&["encode", s(&ev), "--t-d", "500", "--window-us", "100", "--layout", "imagelike", "-o", s(&d.path().join("e.pfm"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no events"));
}

#[test]
fn slice_writes_the_selected_events() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let out = d.path().join("s.csv");
    let v = json(&["slice", s(&ev), "--t-d", "30000", "--count", "10", "-o", s(&out)]);
    assert_eq!(v["events"], 10);
    let sub = read_events(&out, EventFormat::Csv).unwrap();
    let full = read_events(&ev, EventFormat::Evb).unwrap();
    assert_eq!(sub.events(), full.slice_sbn(30_000, 10).unwrap().events());
}

fn depth_dir(dir: &Path, maps: &[(&str, DepthMap)]) {
    fs::create_dir_all(dir).unwrap();
    for (name, m) in maps {
        m.write_pfm(dir.join(format!("{name}.pfm"))).unwrap();
    }
}

fn ramp(offset: f64) -> DepthMap {
    DepthMap::from_fn(6, 4, |x, y| 1.0 + offset + x as f64 * 0.5 + y as f64 * 0.25)
}

#[test]
fn evaluate_identical_sets() {
    let d = tempfile::tempdir().unwrap();
    let maps = [("a", ramp(0.0)), ("b", ramp(1.0))];
    depth_dir(&d.path().join("p"), &maps);
    depth_dir(&d.path().join("g"), &maps);
    let csv = d.path().join("m.csv");
    let v = json(&["evaluate", s(&d.path().join("p")), s(&d.path().join("g")), "--csv-out", s(&csv)]);
    let a = &v["aggregate"];
    assert!(a["abs_rel"].as_f64().unwrap() < 1e-9);
    assert!(a["rmse"].as_f64().unwrap() < 1e-9);
    for k in ["delta1", "delta2", "delta3"] {
        assert_eq!(a[k].as_f64().unwrap(), 1.0);
    }
    assert_eq!(v["frames"].as_array().unwrap().len(), 2);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn evaluate_alignment_toggle() {
    let d = tempfile::tempdir().unwrap();
    let gt = ramp(0.0);
    depth_dir(&d.path().join("g"), &[("a", gt.clone())]);
    depth_dir(&d.path().join("p"), &[("a", gt.affine(0.5, 0.1))]);
    let (p, g) = (d.path().join("p"), d.path().join("g"));
    let aligned = json(&["evaluate", s(&p), s(&g)]);
    assert!(aligned["aggregate"]["abs_rel"].as_f64().unwrap() < 1e-6);
    let raw = json(&["evaluate", s(&p), s(&g), "--no-align"]);
    assert!(raw["aggregate"]["abs_rel"].as_f64().unwrap() > 0.1);
    assert_eq!(raw["aggregate"]["aligned"], false);
}

#[test]
fn evaluate_rejects_mismatched_sets() {
    let d = tempfile::tempdir().unwrap();
    depth_dir(&d.path().join("p"), &[("a", ramp(0.0)), ("b", ramp(0.0))]);
    depth_dir(&d.path().join("g"), &[("a", ramp(0.0)), ("c", ramp(0.0))]);
    let out = evdepth(&["evaluate", s(&d.path().join("p")), s(&d.path().join("g"))]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[b]") && err.contains("[c]"), "{err}");
}

#[test]
fn align_recovers_scale_and_shift() {
    let d = tempfile::tempdir().unwrap();
    let target = ramp(0.0);
    let pred = DepthMap::from_fn(6, 4, |x, y| (target.get(x, y) - 0.5) / 2.0);
    let (pp, tp, op) = (d.path().join("p.pfm"), d.path().join("t.pfm"), d.path().join("o.pfm"));
    pred.write_pfm(&pp).unwrap();
    target.write_pfm(&tp).unwrap();
    let v = json(&["align", s(&pp), s(&tp), "-o", s(&op)]);
    assert!((v["s"].as_f64().unwrap() - 2.0).abs() < 1e-5);
    assert!((v["t"].as_f64().unwrap() - 0.5).abs() < 1e-5);
    let aligned = DepthMap::read_pfm(&op).unwrap();
    for (a, b) in aligned.values().iter().zip(target.values()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn dataset_build_and_export() {
    let d = tempfile::tempdir().unwrap();
    let ev = stream_file(d.path());
    let (f, p) = (d.path().join("frames"), d.path().join("proxy"));
    fs::create_dir_all(&f).unwrap();
    for t in [10_000u64, 30_000, 90_000] {
        fs::write(f.join(format!("{t:09}.pgm")), b"").unwrap();
        depth_dir(&p, &[(&format!("{t:09}"), DepthMap::filled(8, 6, 2.0))]);
    }
    let m = d.path().join("manifest.json");
    let v = json(&[
        "dataset", "build", "--events", s(&ev), "--frames", s(&f), "--proxy", s(&p), "--window-us", "10000",
        "--layout", "tencode", "-o", s(&m),
    ]);
    assert_eq!(v["records"], 3);
    assert_eq!(v["empty"], 1);
    let dropped = json(&[
        "dataset", "build", "--events", s(&ev), "--frames", s(&f), "--proxy", s(&p), "--window-us", "10000",
        "--drop-empty", "-o", s(&d.path().join("m2.json")),
    ]);
    assert_eq!(dropped["records"], 2);
    let out = d.path().join("stacks");
    let e = json(&["dataset", "export", s(&m), "-o", s(&out)]);
    assert_eq!(e["layout"], "tencode");
    assert_eq!(e["files"].as_array().unwrap().len(), 6);
    let e = json(&["dataset", "export", s(&m), "-o", s(&out), "--layout", "voxel", "--bins", "2"]);
    assert_eq!(e["files"].as_array().unwrap().len(), 6);
    fs::remove_file(p.join("000030000.pfm")).unwrap();
    let missing = evdepth(&[
        "dataset", "build", "--events", s(&ev), "--frames", s(&f), "--proxy", s(&p), "-o", s(&m),
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn fusion_run_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let events = evdepth::bench::random_stream(32, 16, 20_000, 100_000, 3);
    let ev = d.path().join("e.evb");
    write_events(&events, &ev, EventFormat::Evb).unwrap();
    let w = d.path().join("weights");
    let run = |out: &str, extra: &[&str]| {
        let mut a = vec!["fusion", "run", s(&ev), "--steps", "4", "--window-us", "20000", "--layout", "tencode"];
        let o = d.path().join(out);
        a.extend_from_slice(&["-o", s(&o)]);
        a.extend_from_slice(extra);
        let mut a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
        a.push("--json".into());
        let out = Command::new(env!("CARGO_BIN_EXE_evdepth")).args(&a).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (serde_json::from_slice::<Value>(&out.stdout).unwrap(), o)
    };
    let (v, a) = run("a", &["--save-weights", s(&w)]);
    assert_eq!(v["frames"].as_array().unwrap().len(), 4);
    assert!(v["max_abs_hidden"].as_f64().unwrap() < 1.0);
    let (_, b) = run("b", &["--weights", s(&w), "--unroll", "1"]);
    for t in [20_000u64, 40_000, 60_000, 80_000] {
        let name = format!("{t:012}.pfm");
        let x = DepthMap::read_pfm(a.join(&name)).unwrap();
        assert_eq!((x.width(), x.height()), (32, 16));
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn bench_reports_each_repetition() {
    let v = json(&["bench", "--generate", "20000", "--width", "64", "--height", "48", "--repetitions", "3"]);
    let layouts = v["layouts"].as_array().unwrap();
    assert_eq!(layouts.len(), 3);
    for l in layouts {
        assert_eq!(l["samples_s"].as_array().unwrap().len(), 3);
        let digests = l["digests"].as_array().unwrap();
        assert_eq!(digests.len(), 3);
        assert!(digests.iter().all(|h| h == &digests[0]));
        assert_eq!(l["deterministic"], true);
    }
    assert_eq!(code(&evdepth(&["bench"])), 1);
}
