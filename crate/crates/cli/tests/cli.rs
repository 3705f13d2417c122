use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CARD: &str = r#"
uid = "2a698d43"
key_a = "a0a1a2a3a4a5"
key_b = "b0b1b2b3b4b5"
access = "7f0788"
[seeds]
reader = 3
[[block]]
index = 4
value = 100
[[block]]
index = 5
data = "11111111111111111111111111111111"
"#;

const KNOWN: &str = "5:11111111111111111111111111111111";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfreplay")).current_dir(dir).args(args).output().expect("binary runs")
}

fn setup(card: &str, scripts: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("card.toml"), card).unwrap();
    for (name, text) in scripts {
        fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn record(dir: &Path, script: &str, out: &str) {
    let o = run(dir, &["simulate", "--card", "card.toml", "--script", script, "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn anticollision_only_gives_six_messages() {
    let dir = setup(CARD, &[("s.txt", "anticollision\n")]);
    let o = run(dir.path(), &["simulate", "--card", "card.toml", "--script", "s.txt", "--out", "sim"]);
    assert!(o.status.success());
    let trace = fs::read_to_string(dir.path().join("sim/trace.txt")).unwrap();
    assert_eq!(trace.lines().count(), 6);
    assert!(trace.lines().nth(3).unwrap().ends_with("TAG 2a 69 8d 43 8d"), "{trace}");
    assert_eq!(stdout(&o), trace);
}

#[test]
fn refused_authentication_is_reported() {
    // transport trailer: key B is readable and cannot authenticate
    let dir = setup("uid = \"2a698d43\"\n", &[("s.txt", "anticollision\nauth 1 B\nread 4\n")]);
    let o = run(dir.path(), &["simulate", "--card", "card.toml", "--script", "s.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 2"));
}

#[test]
fn sector_zero_dump_is_complete() {
    let dir = setup(CARD, &[("s.txt", "anticollision\nauth 0 A\nread 1\n")]);
    record(dir.path(), "s.txt", "sim");
    let o =
        run(dir.path(), &["attack", "--card", "card.toml", "--trace", "sim/trace.txt", "--attack", "read-sector0", "--out", "a"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let dump = fs::read_to_string(dir.path().join("a/dump.txt")).unwrap();
    assert!(!dump.lines().skip(1).any(|l| l.contains("??")), "{dump}");
    assert!(dump.contains("000: 2a 69 8d 43 8d 08 04 00 62 63 64 65 66 67 68 69"), "{dump}");
    let log = fs::read_to_string(dir.path().join("a/log.txt")).unwrap();
    assert!(log.contains("bytes recovered: 64 of 64"), "{log}");
}

#[test]
fn sector_dump_without_known_block_leaves_the_middle() {
    let dir = setup(CARD, &[("s.txt", "anticollision\nauth 1 A\nread 5\n")]);
    record(dir.path(), "s.txt", "sim");
    let o =
        run(dir.path(), &["attack", "--card", "card.toml", "--trace", "sim/trace.txt", "--attack", "read-sector", "--out", "a"]);
    assert!(o.status.success());
    let dump = fs::read_to_string(dir.path().join("a/dump.txt")).unwrap();
    assert!(dump.contains("005: 11 11 11 11 11 11 ?? ?? ?? ?? 11 11 11 11 11 11"), "{dump}");
    let o = run(
        dir.path(),
        &["attack", "--card", "card.toml", "--trace", "sim/trace.txt", "--attack", "read-sector", "--known-block", KNOWN],
    );
    assert!(o.status.success());
    assert!(!stdout(&o).lines().skip(1).any(|l| l.contains("??")));
}

#[test]
fn write_succeeds_and_block_zero_is_refused() {
    let dir = setup(CARD, &[("s.txt", "anticollision\nauth 1 A\nread 5\n")]);
    record(dir.path(), "s.txt", "sim");
    let base = ["attack", "--card", "card.toml", "--trace", "sim/trace.txt", "--attack", "write", "--known-block", KNOWN];
    let data = "42424242424242424242424242424242";
    let mut ok = base.to_vec();
    ok.extend(["--value-block", "4", "--block", "6", "--data", data, "--out", "w"]);
    let o = run(dir.path(), &ok);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut bad = base.to_vec();
    bad.extend(["--value-block", "4", "--block", "0", "--data", data, "--out", "w0"]);
    let o = run(dir.path(), &bad);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0x4"));
    assert!(fs::read_to_string(dir.path().join("w0/log.txt")).unwrap().contains("goal reached: false"));
}

#[test]
fn discovers_a_custom_table() {
    // sector 2 keeps the transport trailer, whose readable key B cannot
    // authenticate
    let card = format!("{CARD}\n[commands]\nread = 0x13\nincrement = 0x5e\n[[sector]]\nindex = 2\naccess = \"ff0780\"\n");
    let dir = setup(&card, &[("s.txt", "anticollision\nauth 1 A\nread 4\n")]);
    record(dir.path(), "s.txt", "sim");
    // value 100 at address 4
    let known = "4:640000009bffffff6400000004fb04fb";
    let o = run(
        dir.path(),
        &[
            "attack",
            "--card",
            "card.toml",
            "--trace",
            "sim/trace.txt",
            "--attack",
            "discover-commands",
            "--known-block",
            known,
            "--scratch",
            "6",
            "--out",
            "d",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("d/commands.txt")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.contains("read = 0x13") && table.contains("increment = 0x5e") && table.contains("transfer = 0xb0"), "{table}");
}

#[test]
fn extension_and_decryption() {
    let dir = setup(CARD, &[("s.txt", "anticollision\nauth 1 A\nread 5\n")]);
    record(dir.path(), "s.txt", "sim");
    let o = run(
        dir.path(),
        &[
            "attack",
            "--card",
            "card.toml",
            "--trace",
            "sim/trace.txt",
            "--attack",
            "extend",
            "--known-block",
            KNOWN,
            "--value-block",
            "4",
            "--iterations",
            "2",
            "--out",
            "e",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir.path(), &["decrypt", "--trace", "sim/trace.txt", "--keystream", "e/keystream.txt"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("11 : PCD 30 05"), "{text}");
    assert!(text.contains("10 : TAG ?? ?? ?? ??"), "{text}");
}

#[test]
fn nonce_stats_report() {
    let dir = setup(CARD, &[]);
    let o = run(dir.path(), &["nonce-stats", "--card", "card.toml", "--draws", "65536", "--jitter", "4"]);
    assert!(o.status.success());
    let r = stdout(&o);
    assert!(r.contains("first repeat at draw: 65536"), "{r}");
    assert!(r.contains("reappearance interval: 0.6187 s"), "{r}");
    let distinct: usize = r.lines().find(|l| l.starts_with("fixed-delay")).unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(distinct <= 9, "{r}");
    let o = run(dir.path(), &["nonce-stats", "--card", "card.toml", "--draws", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_inputs_give_identical_files() {
    let dir = setup(CARD, &[("s.txt", "anticollision\nauth 0 A\nread 1\n")]);
    for out in ["x", "y"] {
        record(dir.path(), "s.txt", &format!("sim-{out}"));
        let o = run(
            dir.path(),
            &[
                "attack",
                "--card",
                "card.toml",
                "--trace",
                &format!("sim-{out}/trace.txt"),
                "--attack",
                "read-sector0",
                "--out",
                out,
            ],
        );
        assert!(o.status.success());
    }
    for f in ["sim-x/trace.txt", "x/dump.txt", "x/log.txt", "x/keystream.txt"] {
        let other = f.replacen('x', "y", 1);
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir.path().join(&other)).unwrap(), "{f}");
    }
}
