//! The binary against the library: each command's output is compared with
//! the result of the call it wraps.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use talescale::lrm::JobState;
use talescale::planner::{plan_placement, Objective, PlacementPlan, ResourceDescriptor, WorkloadRequirements};
use talescale::sim::{emit_report, load_config, measure_models, run_scenario, MeasureOptions, Report, ReportFormat, Session, SessionJournal};
use talescale::tale::{export_tale, tale_from_record};
use talescale::SimDuration;

fn talescale(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_talescale"))
        .args(args)
        .current_dir(dir)
        .env_remove("TALESCALE_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(&p, text).unwrap();
    p
}

fn workspace(dir: &Path) {
    write(dir, "w/src/main.py", "print('hi')\n");
    write(dir, "w/src/empty.txt", "");
    write(dir, "w/données/模型.R", "x <- 1\n");
}

const CONFIG: &str = r#"{
    "resources": [
        {"name": "wt", "kind": "wt_cluster"},
        {"name": "comet", "kind": "hpc_cluster", "node_count": 16,
         "queue_model": {"distribution": {"kind": "exponential", "mean": 300}}}
    ],
    "scenario": [
        {"action": "launch_frontend", "at": 0, "tale": "t1", "requirements": {"needs_hpc": true}},
        {"action": "submit", "at": 10, "resource": "comet", "command": "sleep 30", "count": 3, "every": 5}
    ]
}"#;

#[test]
fn export_is_repeatable_and_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    workspace(d.path());
    let o = talescale(d.path(), &["tale", "create", "--workspace", "w", "--title", "Demo", "--id", "demo", "--format", "json"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(json_out(&o)["code_refs"].as_array().unwrap().len(), 3);
    for out in ["a.zip", "b.zip"] {
        assert!(talescale(d.path(), &["tale", "export", "--workspace", "w", "--out", out]).status.success());
    }
    let a = std::fs::read(d.path().join("a.zip")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b.zip")).unwrap());

    let tale = tale_from_record(&std::fs::read(d.path().join("w/.talescale/tale.json")).unwrap()).unwrap();
    assert_eq!(export_tale(&tale, &d.path().join("w")).unwrap(), a);
}

#[test]
fn import_then_export_round_trips() {
    let d = tempfile::tempdir().unwrap();
    workspace(d.path());
    talescale(d.path(), &["tale", "create", "--workspace", "w", "--title", "Demo", "--id", "demo", "--out", "a.zip"]);
    let o = talescale(d.path(), &["tale", "import", "--in", "a.zip", "--out", "copy"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read(d.path().join("copy/données/模型.R")).unwrap(), b"x <- 1\n");
    assert!(talescale(d.path(), &["tale", "export", "--workspace", "copy", "--out", "b.zip"]).status.success());
    assert_eq!(std::fs::read(d.path().join("a.zip")).unwrap(), std::fs::read(d.path().join("b.zip")).unwrap());
    assert!(talescale(d.path(), &["tale", "validate", "--workspace", "copy"]).status.success());
}

#[test]
fn binary_only_tale_fails_validation() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "w/solver.exe", "\u{7f}ELF");
    assert!(talescale(d.path(), &["tale", "create", "--workspace", "w", "--title", "Bin", "--id", "bin"]).status.success());
    let o = talescale(d.path(), &["tale", "validate", "--workspace", "w"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("missing source"), "{}", stdout(&o));

    let o = talescale(d.path(), &["tale", "validate", "--workspace", "w", "--format", "json"]);
    let v = json_out(&o);
    assert_eq!(v["exit_code"], 1);
    assert_eq!(v["detail"]["valid"], false);
}

#[test]
fn corrupted_archive_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    workspace(d.path());
    talescale(d.path(), &["tale", "create", "--workspace", "w", "--title", "Demo", "--id", "demo", "--out", "a.zip"]);
    // same entries, one file's bytes swapped after its checksum was taken
    let mut src = zip::ZipArchive::new(std::fs::File::open(d.path().join("a.zip")).unwrap()).unwrap();
    let mut dst = zip::ZipWriter::new(std::fs::File::create(d.path().join("bad.zip")).unwrap());
    for i in 0..src.len() {
        let mut f = src.by_index(i).unwrap();
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).unwrap();
        if f.name() == "workspace/src/main.py" {
            bytes = b"print('tampered')\n".to_vec();
        }
        dst.start_file(f.name(), zip::write::SimpleFileOptions::default()).unwrap();
        dst.write_all(&bytes).unwrap();
    }
    dst.finish().unwrap();
    let o = talescale(d.path(), &["tale", "import", "--in", "bad.zip", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"), "{o:?}");
}

#[test]
fn infeasible_plan_lists_every_model() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "inv.json", r#"[{"name": "wt", "kind": "wt_cluster"}]"#);
    write(d.path(), "req.json", r#"{"needs_hpc": true, "needs_mpi": true, "min_nodes": 2}"#);
    let o = talescale(d.path(), &["plan", "--inventory", "inv.json", "--requirements", "req.json", "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let rows = json_out(&o)["detail"]["infeasible"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r["feasible"] == false && !r["reason"].as_str().unwrap().is_empty()));

    let text = stdout(&talescale(d.path(), &["plan", "--inventory", "inv.json", "--requirements", "req.json"]));
    for m in ["M1", "M2", "M3", "M4", "M5", "M6"] {
        assert!(text.contains(&format!("{m}: ")), "{text}");
    }
}

#[test]
fn mpi_plan_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let inv = r#"[{"name": "wt", "kind": "wt_cluster"},
                  {"name": "summit", "kind": "hpc_cluster", "lrm": "batch", "node_count": 64, "mpi_capable": true}]"#;
    write(d.path(), "inv.json", inv);
    write(d.path(), "req.json", r#"{"needs_hpc": true, "needs_mpi": true, "min_nodes": 8}"#);
    let o = talescale(d.path(), &["plan", "--inventory", "inv.json", "--requirements", "req.json", "--format", "json"]);
    assert!(o.status.success(), "{o:?}");
    let got: PlacementPlan = serde_json::from_slice(&o.stdout).unwrap();
    let resources: Vec<ResourceDescriptor> = serde_json::from_str(inv).unwrap();
    let want = plan_placement(&WorkloadRequirements::mpi(8), &resources, Objective::MinTimeToFrontend).unwrap();
    assert_eq!(got, want);
    assert_eq!(got.model.code(), "M4");
    assert!(stdout(&talescale(d.path(), &["plan", "--inventory", "inv.json", "--requirements", "req.json"])).contains("M4"));
}

#[test]
fn sim_run_is_deterministic_and_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "cfg.json", CONFIG);
    for trace in ["a.ndjson", "b.ndjson"] {
        let o = talescale(d.path(), &["sim", "run", "--config", "cfg.json", "--seed", "9", "--trace", trace]);
        assert!(o.status.success(), "{o:?}");
    }
    let a = std::fs::read_to_string(d.path().join("a.ndjson")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.path().join("b.ndjson")).unwrap());
    assert_eq!(a, run_scenario(load_config(&cfg).unwrap(), 9).unwrap().trace.to_ndjson());

    let o = talescale(d.path(), &["sim", "run", "--config", "cfg.json", "--seed", "9", "--report", "csv"]);
    let csv = stdout(&o);
    assert_eq!(csv.lines().next(), Some("model,seed,time_to_frontend_s,queries,handshakes,transfers"));
    assert_eq!(csv.lines().count(), 2, "{csv}");
}

#[test]
fn sim_run_config_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(talescale(d.path(), &["sim", "run", "--config", "missing.json"]).status.code(), Some(1));
    assert_eq!(talescale(d.path(), &["sim", "run"]).status.code(), Some(1));
    write(d.path(), "bad.json", r#"{"resources": [{"name": "wt", "kind": "wt_cluster"}], "pools": [{"resource": "nowhere", "min_warm": 1, "max_size": 2, "pilot_walltime": 60}]}"#);
    let o = talescale(d.path(), &["sim", "run", "--config", "bad.json", "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(json_out(&o)["error"].as_str().unwrap().contains("nowhere"));
}

#[test]
fn config_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "cfg.json", CONFIG);
    let o = Command::new(env!("CARGO_BIN_EXE_talescale"))
        .args(["sim", "run", "--seed", "1", "--format", "json"])
        .current_dir(d.path())
        .env("TALESCALE_CONFIG", "cfg.json")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert_eq!(json_out(&o)["metrics"]["jobs_submitted"], 3);
}

#[test]
fn measure_report_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "cfg.json", CONFIG);
    let o = talescale(d.path(), &["sim", "measure", "--config", "cfg.json", "--seeds", "4", "--format", "json"]);
    assert!(o.status.success(), "{o:?}");
    let got: Report = serde_json::from_slice(&o.stdout).unwrap();
    let want = measure_models(&load_config(&cfg).unwrap(), &WorkloadRequirements::default(), &[0, 1, 2, 3], MeasureOptions::default()).unwrap();
    assert_eq!(got, want);

    let o = talescale(d.path(), &["sim", "measure", "--config", "cfg.json", "--seeds", "4", "--report", "csv"]);
    assert_eq!(stdout(&o), emit_report(&want, ReportFormat::Csv));
    let o = talescale(d.path(), &["sim", "measure", "--config", "cfg.json", "--report", "xml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn job_session_follows_the_lifecycle() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "cfg.json", CONFIG);
    let o = talescale(d.path(), &["job", "submit", "--config", "cfg.json", "--seed", "2", "--resource", "comet", "--command", "sleep 30", "--format", "json"]);
    assert!(o.status.success(), "{o:?}");
    let id = json_out(&o)["job"]["id"].as_str().unwrap().to_string();

    let o = talescale(d.path(), &["job", "status", "--id", &id, "--format", "json"]);
    let state = json_out(&o)["job"]["state"].as_str().unwrap().to_string();
    assert!(state == "Submitted" || state == "Queued", "{state}");

    let o = talescale(d.path(), &["job", "status", "--id", &id, "--advance", "5000", "--format", "json"]);
    let job = json_out(&o)["job"].clone();
    assert_eq!(job["state"], "Completed");

    // the same session through the library
    let mut s = Session::open(load_config(&cfg).unwrap(), SessionJournal::new(2)).unwrap();
    let lib_id = s.submit("comet", &["sleep".into(), "30".into()], None).unwrap();
    s.advance(SimDuration::from_secs(5000));
    let lib = s.job(lib_id).unwrap();
    assert_eq!(lib.status.state, JobState::Completed);
    let history: Vec<Value> = lib.status.history.iter().map(|(st, t)| json!({"state": st.name(), "at": t})).collect();
    assert_eq!(job["history"], json!(history));

    let o = talescale(d.path(), &["job", "cancel", "--id", &id, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_out(&o)["ack"], "already_terminal");

    assert_eq!(talescale(d.path(), &["job", "status", "--id", "j-999999"]).status.code(), Some(1));
    assert_eq!(talescale(d.path(), &["job", "status", "--id", "nonsense"]).status.code(), Some(1));
}

#[test]
fn cancel_of_a_queued_job_takes_effect() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "cfg.json",
        r#"{"resources": [{"name": "slow", "kind": "hpc_cluster", "node_count": 2,
             "queue_model": {"distribution": {"kind": "fixed", "value": 10000}}}]}"#,
    );
    let o = talescale(d.path(), &["job", "submit", "--config", "cfg.json", "--resource", "slow", "--command", "sleep 1"]);
    assert!(o.status.success(), "{o:?}");
    let o = talescale(d.path(), &["job", "cancel", "--id", "j-000001", "--advance", "100", "--format", "json"]);
    assert_eq!(json_out(&o)["ack"], "requested");
    let o = talescale(d.path(), &["job", "status", "--advance", "60", "--format", "json"]);
    assert_eq!(json_out(&o)["jobs"][0]["state"], "Canceled");
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(talescale(d.path(), &["tale", "frobnicate"]).status.code(), Some(1));
    assert_eq!(talescale(d.path(), &["plan"]).status.code(), Some(1));
    assert_eq!(talescale(d.path(), &["--help"]).status.code(), Some(0));
}
