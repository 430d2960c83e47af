use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const NINE_OF_SIXTEEN: &str = "cs int <3\ncs int <3\np cnf 4 1\na 1 2 0\ne 3 4 0\n1 2 3 0\n";

fn intsplit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intsplit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn key(out: &str, k: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{k}=")))
        .unwrap_or_else(|| panic!("no `{k}` in\n{out}"))
        .to_string()
}

fn setup(text: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("f.qdimacs");
    fs::write(&path, text).unwrap();
    (tmp, path)
}

fn subproblem_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with("-f.qdimacs"))
        .collect();
    names.sort();
    names
}

#[test]
fn split_writes_files_and_manifest() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    let o = intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(key(&out, "subproblems_with"), "9");
    assert_eq!(key(&out, "subproblems_without"), "16");
    assert!(out.contains("annotation 0\tforall\t1 2\t2\t3\t1\t1/3"));
    let dir = tmp.path().join("s");
    assert_eq!(subproblem_files(&dir).len(), 9);
    let manifest = fs::read_to_string(dir.join("plan.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    assert_eq!(manifest.lines().nth(1).unwrap(), "0,1=0;2=0;3=0;4=0");

    let o = intsplit(
        &[
            "split",
            "--depth",
            "4",
            "--no-intsplits",
            "f.qdimacs",
            "--out",
            "p",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    assert_eq!(subproblem_files(&tmp.path().join("p")).len(), 16);
    assert_eq!(subproblem_files(&tmp.path().join("p"))[0], "00-f.qdimacs");
}

#[test]
fn split_refuses_to_overwrite() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    assert!(
        intsplit(&["split", "--depth", "4", "f.qdimacs"], tmp.path())
            .status
            .success()
    );
    assert!(tmp.path().join("f.qdimacs.split/plan.csv").is_file());
    let o = intsplit(&["split", "--depth", "4", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"));
    let o = intsplit(
        &["split", "--depth", "4", "--force", "f.qdimacs"],
        tmp.path(),
    );
    assert!(o.status.success());
}

#[test]
fn parse_errors_name_the_line() {
    let (tmp, _) = setup("cs int [1 2] ={101}\np cnf 2 1\ne 1 2 0\n1 0\n");
    let o = intsplit(&["split", "--depth", "2", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let (tmp, _) = setup("p cnf 2 1\ne 1 2 0\n1 0\nc late\n");
    assert!(intsplit(&["eval", "f.qdimacs"], tmp.path())
        .status
        .success());
    let o = intsplit(&["eval", "--strict", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn zero_depth_is_a_usage_error() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    let o = intsplit(&["split", "--depth", "0", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_reproduces_eval() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    assert!(intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path()
    )
    .status
    .success());
    let o = intsplit(&["run", "s", "--jobs", "3"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(key(&stdout(&o), "tasks_run"), "9");
    let results = fs::read_to_string(tmp.path().join("s/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 10);

    let o = intsplit(&["merge", "f.qdimacs", "s"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = stdout(&o);
    let eval = intsplit(&["eval", "f.qdimacs"], tmp.path());
    assert_eq!(stdout(&eval).trim(), "TRUE");
    assert_eq!(key(&merged, "final_result"), "TRUE");
    assert!(tmp.path().join("s/certificate.txt").is_file());
    assert_eq!(
        fs::read_to_string(tmp.path().join("s/report.txt")).unwrap(),
        merged
    );

    let o = intsplit(
        &["merge", "f.qdimacs", "s", "--time-model", "refined"],
        tmp.path(),
    );
    assert_eq!(key(&stdout(&o), "final_result"), "TRUE");
    assert_eq!(key(&stdout(&o), "time_model"), "refined");
}

#[test]
fn run_resumes_and_merge_reports_missing_indices() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path(),
    );
    let rows = "index,result,time_seconds\n0,FALSE,1\n1,FALSE,1\n2,TRUE,1\n3,TRUE,1\n4,TRUE,1\n6,TRUE,1\n7,TRUE,1\n8,TRUE,1\n";
    fs::write(tmp.path().join("s/results.csv"), rows).unwrap();

    let o = intsplit(&["merge", "f.qdimacs", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(
        stderr(&o).contains("missing results for indices 5"),
        "{}",
        stderr(&o)
    );

    let o = intsplit(&["run", "s"], tmp.path());
    assert!(o.status.success());
    assert_eq!(key(&stdout(&o), "tasks_run"), "1");
    assert_eq!(key(&stdout(&o), "tasks_skipped"), "8");
    let results = fs::read_to_string(tmp.path().join("s/results.csv")).unwrap();
    assert!(results.lines().last().unwrap().starts_with("5,TRUE,"));
    assert!(intsplit(&["merge", "f.qdimacs", "s"], tmp.path())
        .status
        .success());
}

#[test]
fn merge_reads_log_directories_and_reports_speedup() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path(),
    );
    let logs = tmp.path().join("logs");
    fs::create_dir(&logs).unwrap();
    for i in 0..9 {
        fs::write(
            logs.join(format!("{i}-f.log")),
            format!("solver chatter\nRESULT TRUE TIME {}\n", i + 1),
        )
        .unwrap();
    }
    let o = intsplit(
        &[
            "merge",
            "f.qdimacs",
            "s",
            "--results",
            "logs",
            "--sequential-time",
            "90",
            "--out",
            "r",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    // forall over exists groups: each group min time, then the max of those
    assert_eq!(key(&out, "parallel_time_s"), "7");
    assert_eq!(key(&out, "total_cpu_time_s"), "45");
    assert_eq!(key(&out, "speedup").parse::<f64>().unwrap(), 90.0 / 7.0);
    assert!(tmp.path().join("r/certificate.txt").is_file());
}

/// Solver template running a shell script through `sh`.
fn script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("{body}\n")).unwrap();
    format!("sh {} {{file}}", path.display())
}

#[cfg(unix)]
#[test]
fn external_solver_exit_codes_and_timeouts() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path(),
    );
    // TRUE for sub-problems 0..=4, FALSE for 5, UNKNOWN otherwise
    let solver = script(
        tmp.path(),
        "solver.sh",
        "case \"$(basename \"$1\")\" in\n  [0-4]-*) exit 10 ;;\n  5-*) exit 20 ;;\n  *) exit 3 ;;\nesac",
    );
    let o = intsplit(&["run", "s", "--solver", &solver], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(tmp.path().join("s/results.csv")).unwrap();
    let code = |i: u64| {
        results
            .lines()
            .find(|l| l.starts_with(&format!("{i},")))
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_eq!(code(0), "TRUE");
    assert_eq!(code(5), "FALSE");
    assert_eq!(code(8), "UNKNOWN");

    let slow = script(tmp.path(), "slow.sh", "sleep 5\nexit 10");
    fs::remove_file(tmp.path().join("s/results.csv")).unwrap();
    let o = intsplit(
        &[
            "run",
            "s",
            "--solver",
            &slow,
            "--timeout",
            "0.2",
            "--jobs",
            "9",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let results = fs::read_to_string(tmp.path().join("s/results.csv")).unwrap();
    for line in results.lines().skip(1) {
        assert!(line.ends_with(",UNKNOWN,0.2"), "{line}");
    }
}

#[test]
fn missing_solver_is_recorded_as_unknown() {
    let (tmp, _) = setup(NINE_OF_SIXTEEN);
    intsplit(
        &["split", "--depth", "4", "f.qdimacs", "--out", "s"],
        tmp.path(),
    );
    let o = intsplit(
        &["run", "s", "--solver", "/nonexistent/solver {file}"],
        tmp.path(),
    );
    assert!(o.status.success());
    let results = fs::read_to_string(tmp.path().join("s/results.csv")).unwrap();
    assert_eq!(results.matches("UNKNOWN").count(), 9);
    let o = intsplit(&["merge", "f.qdimacs", "s"], tmp.path());
    assert_eq!(key(&stdout(&o), "final_result"), "UNKNOWN");
}

#[test]
fn stats_eval_and_check() {
    let (tmp, _) =
        setup("cs int [1 2 3 4 5] <19\ncs int [6 7] T\np cnf 7 0\ne 1 2 3 4 5 0\na 6 7 0\n");
    let o = intsplit(&["stats", "f.qdimacs", "--depth", "7"], tmp.path());
    let out = stdout(&o);
    assert!(
        out.contains("annotation 0\texists\t1 2 3 4 5\t5\t19\t13\t13/19"),
        "{out}"
    );
    assert!(
        out.contains("annotation 1\tforall\t6 7\t2\t4\t0\t0"),
        "{out}"
    );
    assert_eq!(key(&out, "subproblems_with"), "76");

    // forall x exists y. (x or y) and (not x or not y)
    let (tmp, _) = setup("p cnf 2 2\na 1 0\ne 2 0\n1 2 0\n-1 -2 0\n");
    assert_eq!(
        stdout(&intsplit(&["eval", "f.qdimacs"], tmp.path())).trim(),
        "TRUE"
    );

    let (tmp, _) = setup("cs int [1 2] <2\np cnf 2 1\ne 1 2 0\n1 0\n");
    let out = stdout(&intsplit(&["check", "f.qdimacs"], tmp.path()));
    assert!(out.starts_with("INCORRECT\n"));
    assert_eq!(key(&out, "restricted"), "FALSE");
    assert_eq!(key(&out, "unrestricted"), "TRUE");
    assert_eq!(key(&out, "witness"), "annotation 0 exists (1 2) <2");
    assert_eq!(
        stdout(&intsplit(
            &["eval", "--with-intsplits", "f.qdimacs"],
            tmp.path()
        ))
        .trim(),
        "FALSE"
    );
}

#[test]
fn budget_errors_are_distinct() {
    let (tmp, _) = setup("p cnf 3 1\ne 1 2 3 0\n1 0\n");
    let o = intsplit(&["eval", "--max-variables", "2", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("budget"));
    let o = intsplit(&["check", "--max-variables", "2", "f.qdimacs"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}
