use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tod_prime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tod-prime"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_intent_corpus(dir: &Path) {
    let intents = ["playmusic", "ratebook", "getweather"];
    let mut train = String::new();
    let mut test = String::new();
    for i in 0..24 {
        let intent = intents[i % 3];
        let line = format!("{{\"id\":\"{i}\",\"text\":\"{intent} request number {i}\",\"intent\":\"{intent}\"}}\n");
        if i < 18 {
            train.push_str(&line);
        } else {
            test.push_str(&line);
        }
    }
    fs::write(dir.join("train.jsonl"), train).unwrap();
    fs::write(dir.join("test.jsonl"), test).unwrap();
    fs::write(
        dir.join("config.json"),
        r#"{"task":"intent","datasets":{"snips":{"train":"train.jsonl","test":"test.jsonl"}},
            "shots":[1,2],"seeds":[7,8],"backend":{"scripted":"gold.jsonl"},"out":"out"}"#,
    )
    .unwrap();
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gold_script_then_run_is_perfect_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    write_intent_corpus(tmp.path());
    let config = tmp.path().join("config.json");
    let config = config.to_str().unwrap();
    let script = tmp.path().join("gold.jsonl");

    let out = tod_prime(&["gold-script", "--config", config, "--script", script.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = tod_prime(&["run", "--config", config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("| Model | Shots | Micro | Macro | Acc |"));
    assert!(stdout.contains("| gpt2 | 1 | 1.0000 | 1.0000 | 100.0000 |"));
    let results = tmp.path().join("out");
    let reports = fs::read_dir(&results)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("report_"))
        .count();
    assert_eq!(reports, 4);
    let first = dir_snapshot(&results);

    let second_dir = tmp.path().join("again");
    let out = tod_prime(&["run", "--config", config, "--out", second_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(first, dir_snapshot(&second_dir));
}

#[test]
fn unreachable_backend_exits_2_without_tables() {
    let tmp = tempfile::tempdir().unwrap();
    write_intent_corpus(tmp.path());
    let config = tmp.path().join("config.json");
    let out = tod_prime(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--backend-url",
        "http://127.0.0.1:9",
        "--shots",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn config_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    write_intent_corpus(tmp.path());
    let config = tmp.path().join("config.json");
    let config = config.to_str().unwrap();
    // shot count above the intent cap of 10
    let out = tod_prime(&["run", "--config", config, "--shots", "11", "--backend", "scripted:x"]);
    assert_eq!(out.status.code(), Some(1));
    let out = tod_prime(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(tmp.path().join("test.jsonl"), "{broken\n").unwrap();
    fs::write(tmp.path().join("gold.jsonl"), "").unwrap();
    let out = tod_prime(&["run", "--config", config]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn score_command() {
    let tmp = tempfile::tempdir().unwrap();
    let gold = tmp.path().join("gold.jsonl");
    let pred = tmp.path().join("pred.jsonl");
    fs::write(
        &gold,
        "{\"id\":\"1\",\"text\":\"a\",\"intent\":\"x\"}\n{\"id\":\"2\",\"text\":\"b\",\"intent\":\"y\"}\n",
    )
    .unwrap();
    fs::write(&pred, "{\"id\":\"1\",\"predicted\":\"x\"}\n{\"id\":\"2\",\"predicted\":\"x\"}\n").unwrap();
    let out = tod_prime(&[
        "score",
        "--task",
        "intent",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"]["acc"], 50.0);

    fs::write(&pred, "{\"id\":\"1\",\"predicted\":\"x\"}\n").unwrap();
    let out = tod_prime(&[
        "score",
        "--task",
        "intent",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn convert_snips_and_fewshotwoz() {
    let tmp = tempfile::tempdir().unwrap();
    let tsv = tmp.path().join("snips.tsv");
    fs::write(&tsv, "add to playlist kojak\tO O B-playlist I-playlist\tAddToPlaylist\n").unwrap();
    let out_path = tmp.path().join("snips.jsonl");
    let out = tod_prime(&[
        "convert",
        "--from",
        "snips",
        "--in",
        tsv.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(fs::read_to_string(&out_path).unwrap().contains("\"playlist\":\"playlist kojak\""));

    let woz = tmp.path().join("train.txt");
    fs::write(&woz, "inform ( name = hilton ; area = chinatown ) & the hilton is near chinatown .\n").unwrap();
    let out = tod_prime(&[
        "convert",
        "--from",
        "fewshotwoz",
        "--in",
        woz.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(fs::read_to_string(&out_path)
        .unwrap()
        .contains("\"act\":\"inform(name=hilton;area=chinatown)\""));

    let out = tod_prime(&[
        "convert",
        "--from",
        "fewshotwoz",
        "--in",
        woz.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--task",
        "dst",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
