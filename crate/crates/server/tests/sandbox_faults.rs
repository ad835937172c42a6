mod common;

use std::time::{Duration, Instant};

use tutee_server::config::TestCase;
use tutee_server::sandbox::{Sandbox, SandboxConfig, Termination, Verdict};

fn limited(ms: u64) -> Sandbox {
    Sandbox::new(SandboxConfig {
        time_limit: Duration::from_millis(ms),
        ..SandboxConfig::default()
    })
}

#[test]
fn reference_solution_passes_every_shipped_case() {
    let cfg = common::config("teachyou");
    let program = cfg.problem.assemble(cfg.problem.reference.as_deref().unwrap());
    let results = Sandbox::new(cfg.sandbox.clone()).run_cases(&program, &cfg.problem.tests).unwrap();
    assert_eq!(results.len(), cfg.problem.tests.len());
    for r in &results {
        assert_eq!(r.verdict, Verdict::Pass, "case {}: {:?}", r.case, r);
    }
}

#[test]
fn infinite_loop_times_out_within_limit_plus_one_second() {
    let sb = limited(1000);
    let started = Instant::now();
    let r = sb
        .run_case("while True:\n    pass\n", 0, &TestCase { input: String::new(), expected: "1".into() })
        .unwrap();
    assert_eq!(r.verdict, Verdict::Timeout);
    assert!(started.elapsed() < Duration::from_millis(2000), "{:?}", started.elapsed());
}

#[test]
fn forked_children_do_not_outlive_the_timeout() {
    let sb = limited(500);
    let program = "import os, time\nif os.fork() == 0:\n    time.sleep(30)\nelse:\n    time.sleep(30)\n";
    let started = Instant::now();
    let out = sb.run(program, "").unwrap();
    assert_eq!(out.termination, Termination::TimedOut);
    assert!(started.elapsed() < Duration::from_millis(1500));
}

#[test]
fn network_access_fails_without_hanging() {
    let sb = limited(3000);
    let program = "import socket\ns = socket.create_connection(('1.1.1.1', 80), timeout=2)\nprint('connected')\n";
    let started = Instant::now();
    let r = sb
        .run_case(program, 0, &TestCase { input: String::new(), expected: "connected".into() })
        .unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.actual.is_empty());
    assert!(started.elapsed() < Duration::from_millis(4000));
}

#[test]
fn socket_prelude_blocks_socket_creation() {
    let program = format!(
        "{}import socket\ntry:\n    socket.socket()\n    print('open')\nexcept OSError:\n    print('blocked')\n",
        tutee_server::sandbox::SOCKET_BLOCK_PRELUDE
    );
    assert_eq!(limited(3000).run(&program, "").unwrap().stdout.trim(), "blocked");
}

#[test]
fn isolation_off_leaves_sockets_untouched() {
    let sb = Sandbox::new(SandboxConfig {
        isolate_network: false,
        ..SandboxConfig::default()
    });
    assert!(!sb.uses_namespace());
    let out = sb.run("import socket\nprint(socket.socket.__name__)\n", "").unwrap();
    assert_eq!(out.stdout.trim(), "socket");
}

#[test]
fn silent_program_fails_with_empty_output() {
    let r = limited(2000)
        .run_case("pass\n", 0, &TestCase { input: "1\n".into(), expected: "1\n".into() })
        .unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.actual, "");
}

#[test]
fn memory_hog_is_stopped() {
    let sb = Sandbox::new(SandboxConfig {
        memory_limit_mb: 128,
        time_limit: Duration::from_millis(5000),
        ..SandboxConfig::default()
    });
    let out = sb.run("x = bytearray(1024 * 1024 * 1024)\nprint('allocated')\n", "").unwrap();
    assert_ne!(out.stdout.trim(), "allocated");
    assert_ne!(out.exit_code, Some(0));
}

#[test]
fn crashing_program_fails() {
    let r = limited(2000)
        .run_case("print(1)\nraise SystemExit(3)\n", 0, &TestCase { input: String::new(), expected: "1".into() })
        .unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
}
