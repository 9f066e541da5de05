//! The line protocol against real child processes.

use std::io::Write;

use rarebound::blackbox::{external_eval_adapter, toy_distribution, toy_domain, toy_f, BoxDomain, ProtocolConfig};
use rarebound::error::Error;
use rarebound::sampling::rng;

const BIN: &str = env!("CARGO_BIN_EXE_rarebound");

fn script(dir: &tempfile::TempDir, body: &str) -> String {
    let path = dir.path().join("f.sh");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{body}").unwrap();
    format!("sh {}", path.display())
}

#[test]
fn toy_server_matches_in_process() {
    let obj = external_eval_adapter(&format!("{BIN} toy-server"), toy_domain(), 1000, ProtocolConfig::default()).unwrap();
    let xs = toy_distribution().sample_many(&mut rng(5), 1000);
    for x in &xs {
        let remote = obj.eval(x).unwrap();
        let local = toy_f(x[0], x[1]);
        assert!((remote - local).abs() <= 1e-12 * (1.0 + local.abs()), "{x:?}: {remote} vs {local}");
    }
    assert_eq!(obj.used(), 1000);
    assert!(matches!(obj.eval(&xs[0]), Err(Error::BudgetExhausted { .. })));
}

#[test]
fn shell_script_sum() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(&dir, r#"while read a b; do awk -v a="$a" -v b="$b" 'BEGIN { printf "%.17g\n", a + b }'; done"#);
    let dom = BoxDomain::cube(2, 0.0, 1.0).unwrap();
    let obj = external_eval_adapter(&cmd, dom, 10, ProtocolConfig::default()).unwrap();
    let v = obj.eval(&[0.25, 0.5]).unwrap();
    assert!((v - 0.75).abs() < 1e-12);
}

#[test]
fn nonzero_exit_is_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(&dir, "read line; exit 3");
    let dom = BoxDomain::cube(1, 0.0, 1.0).unwrap();
    let obj = external_eval_adapter(&cmd, dom, 10, ProtocolConfig::default()).unwrap();
    let err = obj.eval(&[0.5]).unwrap_err();
    assert!(matches!(err, Error::ProcessFailure(_)), "{err}");
    assert!(obj.eval(&[0.5]).is_err());
}

#[test]
fn timeout_kills_the_process() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(&dir, "read line; sleep 30");
    let dom = BoxDomain::cube(1, 0.0, 1.0).unwrap();
    let config = ProtocolConfig { timeout: Some(std::time::Duration::from_millis(200)) };
    let obj = external_eval_adapter(&cmd, dom, 10, config).unwrap();
    assert!(matches!(obj.eval(&[0.5]), Err(Error::Timeout(_))));
}
