//! End-to-end checks of the command-line surface, driven in-process
//! through `cli::run`.

use std::fs;
use std::path::{Path, PathBuf};

use fairshare::cli::{run, EXIT_AUDIT, EXIT_BUDGET, EXIT_OK, EXIT_USAGE};

fn args(parts: &[&str]) -> Vec<String> {
    std::iter::once("fairshare")
        .chain(parts.iter().copied())
        .map(String::from)
        .collect()
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_units_writes_expected_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inst.json");
    let code = run(args(&[
        "gen",
        "--family",
        "units",
        "--n",
        "2",
        "--output",
        &path_str(&out),
    ]));
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["agents"], 2);
    assert_eq!(v["items"], 3);
    assert_eq!(v["values"][0], serde_json::json!(["1", "1", "1"]));
}

fn write_instance(dir: &Path, name: &str, family: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut a = vec!["gen"];
    a.extend_from_slice(family);
    a.extend_from_slice(&["--output", out.to_str().unwrap()]);
    assert_eq!(run(args(&a)), EXIT_OK);
    out
}

#[test]
fn gen_bobw_check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for family in [
        vec!["--family", "notmms", "--n", "3", "--eps", "1/100"],
        vec!["--family", "units", "--n", "3"],
        vec![
            "--family",
            "random",
            "--n",
            "3",
            "--m",
            "7",
            "--max-value",
            "15",
            "--seed",
            "11",
        ],
    ] {
        let inst = write_instance(dir.path(), "inst.json", &family);
        let lottery = dir.path().join("lottery.json");
        let code = run(args(&[
            "bobw",
            "--input",
            &path_str(&inst),
            "--output",
            &path_str(&lottery),
        ]));
        assert_eq!(code, EXIT_OK, "bobw failed for {family:?}");

        // the emitted lottery must pass a fresh audit
        let payload: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&lottery).unwrap()).unwrap();
        let lottery_only = dir.path().join("lottery-only.json");
        fs::write(
            &lottery_only,
            serde_json::to_string(&payload["lottery"]).unwrap(),
        )
        .unwrap();
        let code = run(args(&[
            "check",
            "--input",
            &path_str(&lottery_only),
            "--inst",
            &path_str(&inst),
        ]));
        assert_eq!(code, EXIT_OK, "check failed for {family:?}");
    }
}

#[test]
fn bobw_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_instance(
        dir.path(),
        "inst.json",
        &[
            "--family",
            "random",
            "--n",
            "3",
            "--m",
            "6",
            "--max-value",
            "9",
            "--seed",
            "4",
        ],
    );
    let out1 = dir.path().join("a.json");
    let out2 = dir.path().join("b.json");
    for out in [&out1, &out2] {
        assert_eq!(
            run(args(&[
                "bobw",
                "--input",
                &path_str(&inst),
                "--output",
                &path_str(out)
            ])),
            EXIT_OK
        );
    }
    assert_eq!(
        fs::read_to_string(&out1).unwrap(),
        fs::read_to_string(&out2).unwrap()
    );
}

#[test]
fn shares_prints_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("tps.json");
    fs::write(
        &inst,
        r#"{"agents": 4, "items": 5, "values": [[2,3,4,5,6],[2,3,4,5,6],[2,3,4,5,6],[2,3,4,5,6]]}"#,
    )
    .unwrap();
    assert_eq!(
        run(args(&["shares", "--input", &path_str(&inst), "--mms"])),
        EXIT_OK
    );
    assert_eq!(run(args(&["mms", "--input", &path_str(&inst)])), EXIT_OK);
    // exact stdout line, via the real binary
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_fairshare"))
        .args(["shares", "--input", &path_str(&inst)])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(
        stdout
            .lines()
            .next()
            .unwrap()
            .contains("agent 0: PS=5 TPS=9/2"),
        "unexpected shares output: {stdout}"
    );
}

#[test]
fn faithful_subcommand_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    fs::write(
        &inst,
        r#"{"agents": 2, "items": 2, "values": [[4, 2], [1, 3]]}"#,
    )
    .unwrap();
    let frac = dir.path().join("frac.json");
    fs::write(
        &frac,
        r#"{"agents": 2, "items": 2, "x": [["1/2", "1/2"], ["1/2", "1/2"]]}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let code = run(args(&[
        "faithful",
        "--input",
        &path_str(&frac),
        "--inst",
        &path_str(&inst),
        "--output",
        &path_str(&out),
    ]));
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["lottery"]["support"].as_array().unwrap().len() <= 5);
    assert!(v["spread"].as_array().unwrap().len() == 2);
}

#[test]
fn baseline_subcommands_run_clean() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_instance(
        dir.path(),
        "inst.json",
        &[
            "--family",
            "random",
            "--n",
            "3",
            "--m",
            "5",
            "--max-value",
            "12",
            "--seed",
            "9",
        ],
    );
    let out = dir.path().join("baseline.json");
    for mech in ["uniform", "envycycle"] {
        let code = run(args(&[
            "baseline",
            "--input",
            &path_str(&inst),
            "--mech",
            mech,
            "--output",
            &path_str(&out),
        ]));
        assert_eq!(code, EXIT_OK, "mechanism {mech}");
    }
}

#[test]
fn suite_subcommand_passes() {
    assert_eq!(run(args(&["suite", "--seeds", "12"])), EXIT_OK);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // usage: unknown flag / missing file / malformed JSON
    assert_eq!(run(args(&["shares", "--nope"])), EXIT_USAGE);
    assert_eq!(
        run(args(&["shares", "--input", "/definitely/not/there.json"])),
        EXIT_USAGE
    );
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(
        run(args(&["shares", "--input", &path_str(&bad)])),
        EXIT_USAGE
    );
    let negative = dir.path().join("neg.json");
    fs::write(&negative, r#"{"values": [[-1]]}"#).unwrap();
    assert_eq!(
        run(args(&["shares", "--input", &path_str(&negative)])),
        EXIT_USAGE
    );
    // lottery and instance disagreeing on the agent count
    let two_agents = write_instance(dir.path(), "two.json", &["--family", "units", "--n", "2"]);
    let three_bundles = dir.path().join("three.json");
    fs::write(
        &three_bundles,
        r#"{"support": [{"prob": "1", "bundles": [[0], [1], [2]]}]}"#,
    )
    .unwrap();
    assert_eq!(
        run(args(&[
            "check",
            "--input",
            &path_str(&three_bundles),
            "--inst",
            &path_str(&two_agents)
        ])),
        EXIT_USAGE
    );

    // audit failure: a lottery that is not ex-ante proportional
    let inst = write_instance(dir.path(), "inst.json", &["--family", "units", "--n", "2"]);
    let unfair = dir.path().join("unfair.json");
    fs::write(
        &unfair,
        r#"{"support": [{"prob": "1", "bundles": [[0, 1, 2], []]}]}"#,
    )
    .unwrap();
    assert_eq!(
        run(args(&[
            "check",
            "--input",
            &path_str(&unfair),
            "--inst",
            &path_str(&inst)
        ])),
        EXIT_AUDIT
    );

    // budget exceeded
    let big = write_instance(dir.path(), "big.json", &["--family", "units", "--n", "6"]);
    assert_eq!(
        run(args(&["mms", "--input", &path_str(&big), "--budget", "10"])),
        EXIT_BUDGET
    );
}

#[test]
fn budget_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let big = write_instance(dir.path(), "big.json", &["--family", "units", "--n", "6"]);
    // spawn the real binary so the environment change stays contained
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_fairshare"))
        .args(["mms", "--input", &path_str(&big)])
        .env("FAIRSHARE_BUDGET", "10")
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert_eq!(status.code(), Some(EXIT_BUDGET));
    // an explicit flag overrides the environment
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_fairshare"))
        .args(["mms", "--input", &path_str(&big), "--budget", "10000000"])
        .env("FAIRSHARE_BUDGET", "10")
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert_eq!(status.code(), Some(EXIT_OK));
}
