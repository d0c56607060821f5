//! Subprocess sandbox for code nodes and pass@1 program checks.
//!
//! Every execution is a fresh interpreter process with a cleared
//! environment, an address-space rlimit, a wall-clock kill deadline, and a
//! capped output pipe. `PYTHONHASHSEED=0` is pinned so hash-order effects
//! cannot leak nondeterminism into otherwise pure scripts. Stronger
//! isolation (network namespaces) is a deployment concern, not something a
//! portable process can grant itself.

use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resource caps enforced on every sandboxed process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxLimits {
    /// Seconds before the process is killed.
    pub wall_time_cap: f64,
    /// Address-space cap in bytes (rlimit).
    pub memory_cap: u64,
    /// Maximum bytes of stdout accepted.
    pub output_cap: u64,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            wall_time_cap: 10.0,
            memory_cap: 256 * 1024 * 1024,
            output_cap: 256 * 1024,
        }
    }
}

impl SandboxLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.wall_time_cap <= 0.0 || self.wall_time_cap.is_nan() {
            return Err("wall_time_cap must be positive".into());
        }
        if self.memory_cap == 0 || self.output_cap == 0 {
            return Err("memory_cap and output_cap must be positive".into());
        }
        Ok(())
    }
}

/// The configured script runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandbox {
    /// Interpreter command, e.g. `python3`.
    #[serde(default = "default_interpreter")]
    pub interpreter: String,
    /// Interpreter flags placed before the script path.
    #[serde(default = "default_args")]
    pub args: Vec<String>,
    #[serde(default)]
    pub limits: SandboxLimits,
}

fn default_interpreter() -> String {
    "python3".to_string()
}

fn default_args() -> Vec<String> {
    // -S skips site-packages (stdlib only), -B suppresses bytecode caches.
    vec!["-S".to_string(), "-B".to_string()]
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox {
            interpreter: default_interpreter(),
            args: default_args(),
            limits: SandboxLimits::default(),
        }
    }
}

/// The sandbox itself could not run anything, as distinct from a program
/// failing inside it.
#[derive(Debug, Error)]
#[error("sandbox unavailable: {0}")]
pub struct SandboxUnavailable(pub String);

/// How one sandboxed execution ended.
#[derive(Clone, Debug, PartialEq)]
pub enum SandboxOutcome {
    /// Process exited on its own.
    Exited {
        status: i32,
        stdout: Vec<u8>,
        stderr: String,
    },
    /// Killed at the wall-clock cap.
    TimedOut { stderr: String },
    /// Killed after writing more than `output_cap` bytes.
    OutputOverflow { stderr: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SandboxRun {
    pub outcome: SandboxOutcome,
    /// Measured wall time in seconds.
    pub duration: f64,
}

const STDERR_EXCERPT_CAP: usize = 8 * 1024;
const POLL_INTERVAL: Duration = Duration::from_millis(2);

impl Sandbox {
    /// Run `source` as a script with `stdin` piped in. The child sees a
    /// cleared environment (plus PATH and a pinned PYTHONHASHSEED) and an
    /// address-space rlimit; it is killed at the wall-time cap or when its
    /// stdout exceeds the output cap.
    pub fn execute(&self, source: &str, stdin: &[u8]) -> Result<SandboxRun, SandboxUnavailable> {
        let script = write_script(source)?;

        let mut cmd = Command::new(&self.interpreter);
        cmd.args(&self.args)
            .arg(script.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .env(
                "PATH",
                std::env::var("PATH").unwrap_or_else(|_| "/usr/bin:/bin".into()),
            )
            .env("PYTHONHASHSEED", "0");

        #[cfg(unix)]
        apply_memory_limit(&mut cmd, self.limits.memory_cap);

        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| SandboxUnavailable(format!("cannot spawn '{}': {e}", self.interpreter)))?;

        // Feed stdin from a thread so a child that never reads cannot
        // deadlock us against a full pipe.
        let mut child_stdin = child.stdin.take().expect("stdin piped");
        let stdin_owned = stdin.to_vec();
        let stdin_thread = std::thread::spawn(move || {
            let _ = child_stdin.write_all(&stdin_owned);
            drop(child_stdin);
        });

        let overflow = Arc::new(AtomicBool::new(false));
        let stdout_thread = {
            let mut pipe = child.stdout.take().expect("stdout piped");
            let cap = self.limits.output_cap;
            let overflow = Arc::clone(&overflow);
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                let mut chunk = [0u8; 8192];
                loop {
                    match pipe.read(&mut chunk) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            buf.extend_from_slice(&chunk[..n]);
                            if buf.len() as u64 > cap {
                                overflow.store(true, Ordering::SeqCst);
                                break;
                            }
                        }
                    }
                }
                buf
            })
        };
        let stderr_thread = {
            let mut pipe = child.stderr.take().expect("stderr piped");
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = pipe
                    .by_ref()
                    .take(STDERR_EXCERPT_CAP as u64)
                    .read_to_end(&mut buf);
                // Drain the rest so the child never blocks on stderr.
                let mut sink = [0u8; 8192];
                while matches!(pipe.read(&mut sink), Ok(n) if n > 0) {}
                buf
            })
        };

        let deadline = started + Duration::from_secs_f64(self.limits.wall_time_cap);
        let (status, timed_out) = wait_with_deadline(&mut child, deadline, &overflow);

        let _ = stdin_thread.join();
        let stdout = stdout_thread.join().unwrap_or_default();
        let stderr_bytes = stderr_thread.join().unwrap_or_default();
        let stderr = String::from_utf8_lossy(&stderr_bytes).into_owned();
        let duration = started.elapsed().as_secs_f64();

        let outcome = if overflow.load(Ordering::SeqCst) {
            SandboxOutcome::OutputOverflow { stderr }
        } else if timed_out {
            SandboxOutcome::TimedOut { stderr }
        } else {
            SandboxOutcome::Exited {
                status,
                stdout,
                stderr,
            }
        };
        Ok(SandboxRun { outcome, duration })
    }

    /// Check that the interpreter can be spawned at all.
    pub fn probe(&self) -> Result<(), SandboxUnavailable> {
        Command::new(&self.interpreter)
            .arg("--version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| SandboxUnavailable(format!("cannot spawn '{}': {e}", self.interpreter)))?;
        Ok(())
    }
}

fn write_script(source: &str) -> Result<tempfile::NamedTempFile, SandboxUnavailable> {
    let mut file = tempfile::Builder::new()
        .prefix("dagevo_node_")
        .suffix(".py")
        .tempfile()
        .map_err(|e| SandboxUnavailable(format!("cannot create script file: {e}")))?;
    file.write_all(source.as_bytes())
        .map_err(|e| SandboxUnavailable(format!("cannot write script file: {e}")))?;
    file.flush()
        .map_err(|e| SandboxUnavailable(format!("cannot write script file: {e}")))?;
    Ok(file)
}

#[cfg(unix)]
fn apply_memory_limit(cmd: &mut Command, bytes: u64) {
    use std::os::unix::process::CommandExt;
    unsafe {
        cmd.pre_exec(move || {
            let limit = libc::rlimit {
                rlim_cur: bytes as libc::rlim_t,
                rlim_max: bytes as libc::rlim_t,
            };
            if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(())
        });
    }
}

/// Poll until exit, the deadline, or an output overflow; kill on the latter
/// two. Returns (exit status, timed_out).
fn wait_with_deadline(child: &mut Child, deadline: Instant, overflow: &AtomicBool) -> (i32, bool) {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return (status.code().unwrap_or(-1), false),
            Ok(None) => {
                if overflow.load(Ordering::SeqCst) {
                    let _ = child.kill();
                    let _ = child.wait();
                    return (-1, false);
                }
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return (-1, true);
                }
                std::thread::sleep(POLL_INTERVAL);
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return (-1, false);
            }
        }
    }
}
