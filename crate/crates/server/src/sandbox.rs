//! Runs untrusted programs in a child process with a wall-clock limit, a
//! memory cap and no network, on a bounded number of concurrent workers.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Condvar, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TestCase;

/// Prepended to Python programs when no network namespace is available.
pub const SOCKET_BLOCK_PRELUDE: &str = "\
import socket as _sandbox_socket
def _sandbox_blocked(*_a, **_k):
    raise OSError(\"network access is disabled in the sandbox\")
_sandbox_socket.socket = _sandbox_blocked
_sandbox_socket.create_connection = _sandbox_blocked
_sandbox_socket.getaddrinfo = _sandbox_blocked
del _sandbox_socket, _sandbox_blocked
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Interpreter command; the program path is appended.
    pub interpreter: Vec<String>,
    pub isolate_network: bool,
    pub workers: usize,
    #[serde(rename = "time_limit_ms", with = "millis")]
    pub time_limit: Duration,
    pub memory_limit_mb: u64,
    pub output_limit_bytes: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into(), "-I".into()],
            isolate_network: true,
            workers: 2,
            time_limit: Duration::from_secs(5),
            memory_limit_mb: 256,
            output_limit_bytes: 64 * 1024,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox has no interpreter configured")]
    NoInterpreter,
    #[error("could not start the program: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("sandbox i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Exited,
    Signaled,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub termination: Termination,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub elapsed_ms: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: usize,
    pub verdict: Verdict,
    pub input: String,
    pub expected: String,
    pub actual: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stderr: String,
    pub elapsed_ms: u64,
}

/// Trailing whitespace on each line and trailing blank lines are ignored.
pub fn normalize_output(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    lines.join("\n").trim_end_matches('\n').to_string()
}

pub fn outputs_match(expected: &str, actual: &str) -> bool {
    normalize_output(expected) == normalize_output(actual)
}

fn unshare_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        Command::new("unshare")
            .args(["-rn", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success())
    })
}

struct Slots {
    free: Mutex<usize>,
    freed: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

pub struct Sandbox {
    config: SandboxConfig,
    slots: Slots,
    namespace: bool,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let namespace = config.isolate_network && unshare_available();
        if config.isolate_network && !namespace {
            tracing::warn!("network namespaces unavailable; falling back to the socket-blocking prelude");
        }
        Self {
            slots: Slots {
                free: Mutex::new(config.workers.max(1)),
                freed: Condvar::new(),
            },
            config,
            namespace,
        }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Whether network isolation uses a kernel namespace rather than the prelude.
    pub fn uses_namespace(&self) -> bool {
        self.namespace
    }

    /// Runs `program` with `input` on stdin. Blocks while all workers are busy.
    pub fn run(&self, program: &str, input: &str) -> Result<RunOutput, SandboxError> {
        let (interpreter, args) = self
            .config
            .interpreter
            .split_first()
            .ok_or(SandboxError::NoInterpreter)?;
        let _slot = self.slots.acquire();

        let dir = tempfile::tempdir()?;
        let path: PathBuf = dir.path().join("main.py");
        let source = if self.config.isolate_network && !self.namespace {
            format!("{SOCKET_BLOCK_PRELUDE}{program}")
        } else {
            program.to_string()
        };
        std::fs::write(&path, source)?;

        let mut cmd = if self.namespace {
            let mut c = Command::new("unshare");
            c.arg("-rn").arg(interpreter);
            c
        } else {
            Command::new(interpreter)
        };
        cmd.args(args)
            .arg(&path)
            .current_dir(dir.path())
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let memory = self.config.memory_limit_mb.saturating_mul(1024 * 1024);
        let cpu_secs = self.config.time_limit.as_secs() + 1;
        // SAFETY: only async-signal-safe libc calls run between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                libc::setpgid(0, 0);
                let mem = libc::rlimit {
                    rlim_cur: memory as libc::rlim_t,
                    rlim_max: memory as libc::rlim_t,
                };
                libc::setrlimit(libc::RLIMIT_AS, &mem);
                let cpu = libc::rlimit {
                    rlim_cur: cpu_secs as libc::rlim_t,
                    rlim_max: cpu_secs as libc::rlim_t,
                };
                libc::setrlimit(libc::RLIMIT_CPU, &cpu);
                Ok(())
            });
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(SandboxError::Spawn)?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let input = input.to_string();
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
        });
        let limit = self.config.output_limit_bytes;
        let out = capture(child.stdout.take().expect("stdout is piped"), limit);
        let err = capture(child.stderr.take().expect("stderr is piped"), limit);

        let (status, timed_out) = wait_with_deadline(&mut child, started + self.config.time_limit)?;
        let _ = writer.join();
        let (stdout, out_cut) = out.join().unwrap_or_default();
        let (stderr, err_cut) = err.join().unwrap_or_default();
        let termination = if timed_out {
            Termination::TimedOut
        } else if status.code().is_none() {
            Termination::Signaled
        } else {
            Termination::Exited
        };
        Ok(RunOutput {
            termination,
            exit_code: status.code(),
            stdout,
            stderr,
            elapsed_ms: started.elapsed().as_millis() as u64,
            truncated: out_cut || err_cut,
        })
    }

    pub fn run_case(&self, program: &str, index: usize, case: &TestCase) -> Result<CaseResult, SandboxError> {
        let out = self.run(program, &case.input)?;
        let verdict = match out.termination {
            Termination::TimedOut => Verdict::Timeout,
            Termination::Exited if out.exit_code == Some(0) && outputs_match(&case.expected, &out.stdout) => {
                Verdict::Pass
            }
            _ => Verdict::Fail,
        };
        Ok(CaseResult {
            case: index,
            verdict,
            input: case.input.clone(),
            expected: case.expected.clone(),
            actual: out.stdout,
            stderr: out.stderr,
            elapsed_ms: out.elapsed_ms,
        })
    }

    pub fn run_cases(&self, program: &str, cases: &[TestCase]) -> Result<Vec<CaseResult>, SandboxError> {
        cases
            .iter()
            .enumerate()
            .map(|(i, c)| self.run_case(program, i, c))
            .collect()
    }
}

fn capture<R: Read + Send + 'static>(mut pipe: R, limit: usize) -> thread::JoinHandle<(String, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut truncated = false;
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (String::from_utf8_lossy(&kept).into_owned(), truncated)
    })
}

fn wait_with_deadline(child: &mut Child, deadline: Instant) -> std::io::Result<(ExitStatus, bool)> {
    loop {
        if let Some(status) = child.try_wait()? {
            kill_group(child);
            return Ok((status, false));
        }
        if Instant::now() >= deadline {
            kill_group(child);
            return Ok((child.wait()?, true));
        }
        thread::sleep(Duration::from_millis(5));
    }
}

/// Kills the child's whole process group so no grandchild keeps the pipes open.
fn kill_group(child: &Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: plain syscall on a process group this sandbox created.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_ignores_trailing_whitespace_only() {
        assert!(outputs_match("1\n2\n", "1  \n2"));
        assert!(outputs_match("", "\n\n"));
        assert!(!outputs_match("1 2", "1  2"));
        assert!(!outputs_match("1\n\n2", "1\n2"));
    }

    #[test]
    fn echo_program_round_trips_stdin() {
        let sb = Sandbox::new(SandboxConfig::default());
        let out = sb.run("import sys\nprint(sys.stdin.read().strip())", "hello\n").unwrap();
        assert_eq!(out.termination, Termination::Exited);
        assert_eq!(out.stdout, "hello\n");
    }

    #[test]
    fn output_is_capped() {
        let cfg = SandboxConfig {
            output_limit_bytes: 100,
            ..SandboxConfig::default()
        };
        let out = Sandbox::new(cfg).run("print('x' * 10000)", "").unwrap();
        assert_eq!(out.stdout.len(), 100);
        assert!(out.truncated);
    }

    #[test]
    fn missing_interpreter_is_a_spawn_error() {
        let cfg = SandboxConfig {
            interpreter: vec!["/nonexistent/interpreter".into()],
            isolate_network: false,
            ..SandboxConfig::default()
        };
        assert!(matches!(Sandbox::new(cfg).run("", ""), Err(SandboxError::Spawn(_))));
    }
}
