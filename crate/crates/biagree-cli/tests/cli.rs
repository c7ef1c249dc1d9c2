use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

struct Run {
    out: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.out.status.code().expect("exit code")
    }

    fn stdout(&self) -> String {
        String::from_utf8_lossy(&self.out.stdout).into_owned()
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.out.stderr).into_owned()
    }

    fn ok(self) -> Self {
        assert_eq!(self.code(), 0, "stdout:\n{}\nstderr:\n{}", self.stdout(), self.stderr());
        self
    }

    fn run_dir(&self) -> PathBuf {
        let line = self.stdout().lines().find_map(|l| l.strip_prefix("run_dir=").map(str::to_string));
        PathBuf::from(line.expect("run_dir line"))
    }
}

fn biagree(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_biagree"))
        .args(args)
        .stdin(Stdio::null())
        .output()
        .expect("spawn biagree");
    Run { out }
}

/// A few seconds of training end to end.
const TINY: &str = "\
[task]
kind = noisy-lexicon
vocab_size = 4
min_len = 2
max_len = 4
[data]
train = 40
dev = 8
test = 8
[model]
embed = 4
hidden = 6
attention = 4
[train]
pretrain_steps = 30
checkpoint_every = 10
log_every = 5
batch_size = 4
[joint]
max_iterations = 2
steps_per_phase = 6
[decode]
beam_size = 2
";

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, format!("{TINY}[paths]\nruns = {}\n", dir.join("runs").display())).unwrap();
    p.display().to_string()
}

#[test]
fn misspelled_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = biagree(&["gen-data", "--set", "reg.lamda=0.5"]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("reg.lamda"), "{}", r.stderr());

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lamda = 1\n").unwrap();
    let r = biagree(&["train-rt", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("lamda"), "{}", r.stderr());

    let r = biagree(&["gen-data", "--set", "reg.lambda=abc"]);
    assert_eq!(r.code(), 2);
    assert_eq!(biagree(&["no-such-command"]).code(), 2);
}

#[test]
fn zero_lambda_matches_mle_continuation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cont = biagree(&["train-mle", "--continue", "--config", &cfg]).ok().run_dir();
    let rt = biagree(&["train-rt", "--config", &cfg, "--set", "reg.lambda=0"]).ok().run_dir();
    assert_ne!(cont, rt);
    for d in ["l2r", "r2l"] {
        let a = fs::read(cont.join(format!("checkpoints/{d}.cont.ckpt"))).unwrap();
        let b = fs::read(rt.join(format!("checkpoints/{d}.rt.ckpt"))).unwrap();
        assert!(a == b, "{d} checkpoints differ");
    }
    assert_eq!(
        fs::read(cont.join("logs/cont.log")).unwrap(),
        fs::read(rt.join("logs/rt.log")).unwrap()
    );
    for run in [&cont, &rt] {
        assert!(run.join("config.txt").exists());
        assert!(!run.join(".lock").exists());
    }
    assert!(fs::read_to_string(rt.join("logs/rt.inputs")).unwrap().contains("data/train.src\tsha256:"));
    assert!(fs::read_to_string(rt.join("config.txt")).unwrap().contains("reg.lambda = 0\n"));

    let report = biagree(&["report", "--config", &cfg, "--set", "reg.lambda=0"]).ok();
    assert!(report.stdout().contains("iteration"), "{}", report.stdout());
}

#[test]
fn interrupted_pretraining_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let short = biagree(&["train-mle", "--config", &cfg, "--set", "train.pretrain_steps=20"]).ok().run_dir();

    let other_root = dir.path().join("resumed");
    let runs = format!("paths.runs={}", other_root.display());
    let full = biagree(&["gen-data", "--config", &cfg, "--set", &runs]).ok().run_dir();
    for d in ["l2r", "r2l"] {
        fs::copy(
            short.join(format!("checkpoints/{d}.mle.ckpt")),
            full.join(format!("checkpoints/{d}.mle.partial.ckpt")),
        )
        .unwrap();
        fs::copy(
            short.join(format!("logs/mle.{d}.log")),
            full.join(format!("logs/mle.{d}.partial.log")),
        )
        .unwrap();
    }
    let resumed = biagree(&["train-mle", "--config", &cfg, "--set", &runs]).ok();
    assert!(resumed.stderr().contains("resuming l2r pretraining at step 20"), "{}", resumed.stderr());

    let straight = biagree(&["train-mle", "--config", &cfg]).ok().run_dir();
    for d in ["l2r", "r2l"] {
        let ck = |root: &Path| fs::read(root.join(format!("checkpoints/{d}.mle.ckpt"))).unwrap();
        let log = |root: &Path| fs::read(root.join(format!("logs/mle.{d}.log"))).unwrap();
        assert!(ck(&full) == ck(&straight), "{d} checkpoint differs after resume");
        assert_eq!(log(&full), log(&straight));
        assert!(!full.join(format!("checkpoints/{d}.mle.partial.ckpt")).exists());
    }
}

#[test]
fn existing_outputs_and_locks_are_respected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = biagree(&["gen-data", "--config", &cfg]).ok().run_dir();
    let again = biagree(&["gen-data", "--config", &cfg]);
    assert_eq!(again.code(), 1);
    assert!(again.stderr().contains("--force"), "{}", again.stderr());
    biagree(&["gen-data", "--config", &cfg, "--force"]).ok();

    fs::write(run.join(".lock"), "12345\n").unwrap();
    let locked = biagree(&["gen-data", "--config", &cfg, "--force"]);
    assert_eq!(locked.code(), 1);
    assert!(locked.stderr().contains("locked"), "{}", locked.stderr());
    assert!(run.join(".lock").exists());

    fs::remove_file(run.join(".lock")).unwrap();
    let missing = biagree(&["translate", "--config", &cfg, "--stage", "rt"]);
    assert_eq!(missing.code(), 1);
    assert!(missing.stderr().contains("train-rt"), "{}", missing.stderr());
}

#[test]
fn bleu_and_bucket_report_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    fs::write(p("ref"), "a b c d\ne f g h i j\n").unwrap();
    fs::write(p("same"), "a b c d\ne f g h i j\n").unwrap();
    fs::write(p("other"), "x y z w\nq r s t u v\n").unwrap();
    fs::write(p("src"), "a b\nc d e f g h i\n").unwrap();
    let s = |n: &str| p(n).display().to_string();

    let r = biagree(&["bleu", "--hyp", &s("same"), "--ref", &s("ref")]).ok();
    assert!(r.stdout().starts_with("BLEU = 100.00"), "{}", r.stdout());
    let r = biagree(&["bleu", "--hyp", &s("other"), "--ref", &s("ref")]).ok();
    assert!(r.stdout().starts_with("BLEU = 0.00"), "{}", r.stdout());
    let r = biagree(&["bleu", "--hyp", &s("same"), "--ref", &s("ref"), "--sentence"]).ok();
    assert_eq!(r.stdout(), "line\tbleu\n1\t1.000000\n2\t1.000000\n");
    fs::write(p("short"), "a b c d\n").unwrap();
    assert_eq!(biagree(&["bleu", "--hyp", &s("short"), "--ref", &s("ref")]).code(), 1);

    let base = format!("base={}", s("other"));
    let sys = format!("sys={}", s("same"));
    let r = biagree(&[
        "bucket-report", "--source", &s("src"), "--ref", &s("ref"), "--system", &base, "--system", &sys, "--edges", "0,5",
    ])
    .ok();
    let out = r.stdout();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines[0].contains("delta:sys"));
    assert!(lines[1].starts_with("[0,5)\t") && lines[1].ends_with("+100.00"), "{}", lines[1]);
}

#[test]
fn oracle_check_passes_on_a_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let r = biagree(&["oracle-check", "--config", &cfg, "--set", "oracle.resamples=400", "--set", "oracle.max_len=2"]).ok();
    assert!(r.stdout().contains("ancestral\thelper"), "{}", r.stdout());
    assert!(r.run_dir().join("reports/oracle.txt").exists());
}

/// gen-data, train-mle, translate and bleu on the copy task.
#[test]
fn copy_task_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let runs = format!("paths.runs={}", dir.path().join("runs").display());
    let cfg = dir.path().join("copy.cfg");
    fs::write(
        &cfg,
        "[task]\nkind = copy\nvocab_size = 8\nmin_len = 3\nmax_len = 8\nnoise = 0\n\
         [data]\ntrain = 1000\ndev = 50\ntest = 20\n\
         [train]\npretrain_steps = 2000\n[optim]\nlr = 0.003\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let run = biagree(&["gen-data", "--config", c, "--set", &runs]).ok().run_dir();
    biagree(&["train-mle", "--config", c, "--set", &runs]).ok();
    biagree(&["translate", "--config", c, "--set", &runs, "--split", "dev"]).ok();
    let hyp = run.join("translations/mle.l2r.dev.hyp");
    let r = biagree(&["bleu", "--hyp", hyp.to_str().unwrap(), "--ref", run.join("data/dev.tgt").to_str().unwrap()]).ok();
    let score: f64 = r.stdout()["BLEU = ".len()..].split('\t').next().unwrap().trim().parse().unwrap();
    assert!(score > 95.0, "copy-task dev BLEU {score}");
}
