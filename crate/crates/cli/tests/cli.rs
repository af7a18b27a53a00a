use std::path::Path;
use std::process::{Command, Output};

fn bartr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bartr"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert_eq!(code(o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = bartr(dir.path(), &["simulate", "--out", "logs"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bartr.toml",
        "[simulate]\nseed = 4\nout = \"logs\"\nparticipant = \"from-file\"\n\n[simulate.behavior]\nnonuse_severity = 2.0\n",
    );
    let o = bartr(
        dir.path(),
        &["--config", "bartr.toml", "simulate", "--participant", "p07"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("logs/p07_s1_spontaneous.jsonl")).unwrap();
    assert!(text.starts_with(r#"{"participant":"p07","session":1,"phase":"spontaneous","seed":"#));

    write(dir.path(), "bad.toml", "[simulate]\nsed = 4\n");
    assert_eq!(
        code(&bartr(dir.path(), &["--config", "bad.toml", "simulate"])),
        2
    );
    assert_eq!(
        code(&bartr(
            dir.path(),
            &["simulate", "--seed", "1", "--out", "x", "--speed", "-3"]
        )),
        2
    );
    assert_eq!(
        code(&bartr(
            dir.path(),
            &["--r-min", "40", "simulate", "--seed", "1", "--out", "x"]
        )),
        2
    );
}

#[test]
fn stats_verb_reports_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "m.csv",
        "participant,s1,s2\na,1,2\nb,3,4\nc,5,6\nd,7,\n",
    );
    write(
        dir.path(),
        "c.csv",
        "participant,x,y\na,1,1\nb,2,3\nc,3,2\nd,4,4\n",
    );
    write(dir.path(), "v.csv", "value\n80\n81\n82\n83\n84\n");
    let v = json(&bartr(
        dir.path(),
        &[
            "stats",
            "--matrix",
            "m.csv",
            "--correlate",
            "c.csv",
            "--values",
            "v.csv",
            "--permutation",
        ],
    ));
    assert_eq!(v["icc"]["icc"], 0.9375);
    assert_eq!(v["icc"]["dropped"], 1);
    assert_eq!(v["session_correlations"][0]["pearson"]["value"]["r"], 1.0);
    assert!((v["correlation"]["spearman"]["r"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!(v["correlation"]["permutation_p"].as_f64().is_some());
    assert_eq!(v["wilcoxon"]["w"], 15.0);
    assert_eq!(v["wilcoxon"]["p"], 0.03125);
    assert_eq!(v["wilcoxon"]["threshold"], 72.6);

    write(dir.path(), "flat.csv", "participant,s1,s2\na,1,2\nb,2,1\n");
    assert_eq!(
        code(&bartr(dir.path(), &["stats", "--matrix", "flat.csv"])),
        3
    );
    write(dir.path(), "broken.csv", "participant,s1,s2\na,1,x\n");
    let o = bartr(dir.path(), &["stats", "--matrix", "broken.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(code(&bartr(dir.path(), &["stats"])), 2);
}

#[test]
fn sus_and_aaut_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let header = "item1,item2,item3,item4,item5,item6,item7,item8,item9,item10\n";
    write(
        dir.path(),
        "sus.csv",
        &format!("{header}3,3,3,3,3,3,3,3,3,3\n5,1,5,1,5,1,5,1,5,1\n4,2,4,2,4,2,4,2,4,2\n"),
    );
    let v = json(&bartr(dir.path(), &["sus", "--input", "sus.csv"]));
    assert_eq!(v["scores"], serde_json::json!([50.0, 100.0, 75.0]));
    assert_eq!(v["wilcoxon"]["value"]["n"], 3);

    let mut aaut = String::from("spontaneous,constrained\n");
    aaut.push_str(&"0,1\n".repeat(14));
    write(dir.path(), "a1.csv", &aaut);
    let v = json(&bartr(dir.path(), &["aaut", "--input", "a1.csv"]));
    assert_eq!(v["records"][0]["nonuse"], 1.0);
    assert!(v["spontaneous_alpha"]["error"].is_string());

    write(dir.path(), "a2.csv", &aaut.replacen("0,1\n", "", 1));
    let o = bartr(dir.path(), &["aaut", "--input", "a2.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("14"));
}

#[test]
fn score_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&bartr(
            d,
            &[
                "simulate",
                "--seed",
                "1",
                "--out",
                "logs",
                "--participant",
                "nt"
            ]
        )),
        0
    );
    assert_eq!(
        code(&bartr(
            d,
            &[
                "simulate",
                "--seed",
                "2",
                "--out",
                "logs",
                "--participant",
                "p1"
            ]
        )),
        0
    );
    let base = [
        "score",
        "--out",
        "rep",
        "--log",
        "logs/p1_s1_spontaneous.jsonl",
        "logs/p1_s1_constrained.jsonl",
        "--normative",
        "logs/nt_s1_spontaneous.jsonl",
        "--kernel",
        "lin+rbf+N1",
        "--samples",
        "2000",
    ];
    // no seed
    assert_eq!(
        code(&bartr(d, &[&base[..], &["--affected", "p1=left"]].concat())),
        2
    );
    // every participant-session fails: no affected side known
    let o = bartr(
        d,
        &[&base[..], &["--seed", "3", "--affected", "other=left"]].concat(),
    );
    assert_eq!(code(&o), 4);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(report["entries"][0]["status"], "failed");

    let o = bartr(
        d,
        &[&base[..], &["--seed", "3", "--affected", "p1=left"]].concat(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("p1 s1 ok nu_bartr="));
    assert_eq!(
        code(&bartr(
            d,
            &[&base[..], &["--seed", "3", "--affected", "p1=middle"]].concat()
        )),
        2
    );
}

#[test]
fn heatmap_verb_writes_one_grid_per_height() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&bartr(d, &["simulate", "--seed", "9", "--out", "logs"])),
        0
    );
    let logs = [
        "--log",
        "logs/p01_s1_spontaneous.jsonl",
        "logs/p01_s1_constrained.jsonl",
    ];
    let o = bartr(
        d,
        &[
            &[
                "heatmap",
                "--out",
                "maps",
                "--affected",
                "left",
                "--field",
                "time",
                "--resolution",
                "5",
                "--heights",
                "2",
            ][..],
            &logs[..],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let grid = std::fs::read_to_string(d.join("maps/time_z40.00.csv")).unwrap();
    assert_eq!(grid.lines().count(), 6);
    assert!(grid.starts_with("radius_cm\\azimuth_deg,0,45,90,135,180\n"));
    assert!(d.join("maps/time_z0.00.csv").is_file());

    let o = bartr(
        d,
        &[
            &[
                "heatmap",
                "--out",
                "maps",
                "--affected",
                "left",
                "--resolution",
                "1",
            ][..],
            &logs[..],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 2);
}
