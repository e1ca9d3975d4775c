//! Drop-in external environment: value computation is delegated to a
//! user-supplied program over a line-oriented protocol.
//!
//! Per evaluation, the command is spawned once, receives a single request
//! line `{"beam_ids":[7,8,9,10]}` on stdin, and must answer with a single
//! response line `{"value":0.6499}` on stdout and exit 0. Values are cached
//! by configuration key in memory and in an append-only JSON-lines file
//! keyed by the command hash, so interrupted searches resume without
//! re-paying evaluations.

use beamopt::hash::ContentHasher;
use beamopt::search::{EnvError, Environment};
use beamopt::space::BeamConfig;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime};

#[derive(Debug, Clone)]
pub struct BridgeSpec {
    /// Executable and arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub cache_path: Option<PathBuf>,
    pub retries: u32,
    /// Concurrent spawns allowed for distinct configurations.
    pub max_parallel: usize,
}

/// Typed failure carrying the offending configuration and the raw output.
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeError {
    Spawn { key: String, message: String },
    Timeout { key: String, seconds: u64 },
    NonZeroExit { key: String, code: Option<i32>, stderr: String },
    MalformedResponse { key: String, raw: String },
    OutOfRange { key: String, value: f64 },
    MissingResponse { key: String },
    Io { key: String, message: String },
}

impl std::fmt::Display for BridgeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BridgeError::Spawn { key, message } => {
                write!(f, "config {key}: failed to spawn environment command: {message}")
            }
            BridgeError::Timeout { key, seconds } => {
                write!(f, "config {key}: environment timed out after {seconds}s")
            }
            BridgeError::NonZeroExit { key, code, stderr } => write!(
                f,
                "config {key}: environment exited with {code:?}; stderr: {stderr}"
            ),
            BridgeError::MalformedResponse { key, raw } => {
                write!(f, "config {key}: malformed response line: {raw:?}")
            }
            BridgeError::OutOfRange { key, value } => {
                write!(f, "config {key}: value {value} outside [0, 1]")
            }
            BridgeError::MissingResponse { key } => {
                write!(f, "config {key}: environment produced no response line")
            }
            BridgeError::Io { key, message } => write!(f, "config {key}: io failure: {message}"),
        }
    }
}

impl std::error::Error for BridgeError {}

#[derive(Serialize, Deserialize)]
struct RequestLine {
    beam_ids: Vec<u32>,
}

#[derive(Deserialize)]
struct ResponseLine {
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    command_hash: String,
    key: String,
    value: f64,
    timestamp: u64,
}

/// Counting semaphore bounding concurrent spawns.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

/// [`Environment`] forwarding evaluations to the external command.
pub struct BridgeEnvironment {
    spec: BridgeSpec,
    command_hash: String,
    cache: Mutex<HashMap<String, f64>>,
    spawns: AtomicU64,
    semaphore: Semaphore,
}

impl BridgeEnvironment {
    pub fn new(spec: BridgeSpec) -> Result<Self, BridgeError> {
        let mut h = ContentHasher::new();
        for part in &spec.command {
            h.write_str(part);
        }
        let command_hash = h.finish_hex();
        let mut cache = HashMap::new();
        if let Some(path) = &spec.cache_path {
            if path.exists() {
                let text = std::fs::read_to_string(path).map_err(|e| BridgeError::Io {
                    key: String::new(),
                    message: format!("reading cache {}: {e}", path.display()),
                })?;
                for line in text.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    // later entries win; stale or foreign-command lines skip
                    if let Ok(entry) = serde_json::from_str::<CacheEntry>(line) {
                        if entry.command_hash == command_hash {
                            cache.insert(entry.key, entry.value);
                        }
                    }
                }
            }
        }
        let max_parallel = spec.max_parallel;
        Ok(BridgeEnvironment {
            spec,
            command_hash,
            cache: Mutex::new(cache),
            spawns: AtomicU64::new(0),
            semaphore: Semaphore::new(max_parallel),
        })
    }

    /// Number of processes actually spawned (cache hits spawn nothing).
    pub fn spawn_count(&self) -> u64 {
        self.spawns.load(Ordering::SeqCst)
    }

    pub fn command_hash(&self) -> &str {
        &self.command_hash
    }

    /// One evaluation: cache lookup, then spawn/request/response with
    /// validation, retrying failures up to the configured count.
    pub fn external_value(&self, config: &BeamConfig) -> Result<f64, BridgeError> {
        let key = config.canonical_key();
        if let Some(&value) = self.cache.lock().unwrap().get(&key) {
            return Ok(value);
        }
        let mut last_error = None;
        for _ in 0..=self.spec.retries {
            match self.spawn_once(config, &key) {
                Ok(value) => {
                    self.cache.lock().unwrap().insert(key.clone(), value);
                    self.append_cache_entry(&key, value);
                    return Ok(value);
                }
                Err(e) => last_error = Some(e),
            }
        }
        Err(last_error.expect("at least one attempt runs"))
    }

    fn spawn_once(&self, config: &BeamConfig, key: &str) -> Result<f64, BridgeError> {
        let _permit = self.semaphore.acquire();
        self.spawns.fetch_add(1, Ordering::SeqCst);
        let mut child = Command::new(&self.spec.command[0])
            .args(&self.spec.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| BridgeError::Spawn {
                key: key.to_string(),
                message: e.to_string(),
            })?;

        let request = serde_json::to_string(&RequestLine {
            beam_ids: config.ids().to_vec(),
        })
        .expect("request serializes");
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            let write_result = stdin
                .write_all(request.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .and_then(|_| stdin.flush());
            if let Err(e) = write_result {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BridgeError::Io {
                    key: key.to_string(),
                    message: format!("writing request: {e}"),
                });
            }
            // stdin drops here: EOF tells line-at-a-time environments to stop
        }

        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");
        let (sender, receiver) = std::sync::mpsc::channel();
        // detached on purpose: a grandchild holding the pipe open must not
        // block us after the direct child is gone
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            let result = reader.read_line(&mut line);
            let _ = sender.send(result.map(|n| (n, line)));
            // drain trailing output: long-running environments log freely,
            // and a full pipe would block their exit
            let _ = std::io::copy(&mut reader, &mut std::io::sink());
        });
        let (stderr_sender, stderr_receiver) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut buf = String::new();
            let mut reader = BufReader::new(stderr);
            use std::io::Read;
            let _ = reader.read_to_string(&mut buf);
            let _ = stderr_sender.send(buf);
        });

        let response = match receiver.recv_timeout(self.spec.timeout) {
            Ok(Ok((0, _))) => {
                // EOF without a response: a failing exit status is the more
                // informative classification
                let status = child.wait().map_err(|e| BridgeError::Io {
                    key: key.to_string(),
                    message: format!("waiting for exit: {e}"),
                })?;
                if !status.success() {
                    return Err(exit_error(status, &stderr_receiver, key));
                }
                return Err(BridgeError::MissingResponse {
                    key: key.to_string(),
                });
            }
            Ok(Ok((_, line))) => line,
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BridgeError::Io {
                    key: key.to_string(),
                    message: format!("reading response: {e}"),
                });
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BridgeError::Timeout {
                    key: key.to_string(),
                    seconds: self.spec.timeout.as_secs(),
                });
            }
        };

        let status = child.wait().map_err(|e| BridgeError::Io {
            key: key.to_string(),
            message: format!("waiting for exit: {e}"),
        })?;
        if !status.success() {
            return Err(exit_error(status, &stderr_receiver, key));
        }

        let parsed: ResponseLine =
            serde_json::from_str(response.trim()).map_err(|_| BridgeError::MalformedResponse {
                key: key.to_string(),
                raw: response.trim().to_string(),
            })?;
        if !(0.0..=1.0).contains(&parsed.value) {
            return Err(BridgeError::OutOfRange {
                key: key.to_string(),
                value: parsed.value,
            });
        }
        Ok(parsed.value)
    }

    /// Appends one cache line via write-to-temp + atomic rename, so
    /// concurrent writers never leave a torn file behind.
    fn append_cache_entry(&self, key: &str, value: f64) {
        let Some(path) = &self.spec.cache_path else {
            return;
        };
        let entry = CacheEntry {
            command_hash: self.command_hash.clone(),
            key: key.to_string(),
            value,
            timestamp: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        let existing = std::fs::read_to_string(path).unwrap_or_default();
        let mut content = existing;
        content.push_str(&line);
        content.push('\n');
        let tmp = temp_sibling(path);
        if std::fs::write(&tmp, &content).is_ok() {
            let _ = std::fs::rename(&tmp, path);
        }
    }
}

fn exit_error(
    status: std::process::ExitStatus,
    stderr: &std::sync::mpsc::Receiver<String>,
    key: &str,
) -> BridgeError {
    // the child has exited, so the drain thread finishes promptly
    let captured = stderr
        .recv_timeout(Duration::from_secs(5))
        .unwrap_or_default();
    BridgeError::NonZeroExit {
        key: key.to_string(),
        code: status.code(),
        stderr: captured.trim().to_string(),
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cache".into());
    name.push_str(&format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

impl Environment for BridgeEnvironment {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError> {
        self.external_value(config).map_err(|e| EnvError::new(e.to_string()))
    }

    fn descriptor(&self) -> String {
        format!("bridge:{}", self.command_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use beamopt::space::SolutionSpace;
    use std::os::unix::fs::PermissionsExt;

    fn write_stub(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    }

    fn spec(command: Vec<String>, cache: Option<PathBuf>) -> BridgeSpec {
        BridgeSpec {
            command,
            timeout: Duration::from_secs(5),
            cache_path: cache,
            retries: 0,
            max_parallel: 2,
        }
    }

    fn test_config() -> BeamConfig {
        let space = SolutionSpace::new(40, 4, 2).unwrap();
        BeamConfig::new(vec![7, 8, 9, 10], &space).unwrap()
    }

    #[test]
    fn round_trip_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(
            dir.path(),
            "ok.sh",
            r#"read line; echo "{\"value\":0.5}""#,
        );
        let cache = dir.path().join("cache.jsonl");
        let env = BridgeEnvironment::new(spec(
            vec![stub.to_string_lossy().into_owned()],
            Some(cache.clone()),
        ))
        .unwrap();
        let config = test_config();
        assert_eq!(env.external_value(&config).unwrap(), 0.5);
        assert_eq!(env.spawn_count(), 1);
        // second call served from cache: zero new spawns
        assert_eq!(env.external_value(&config).unwrap(), 0.5);
        assert_eq!(env.spawn_count(), 1);

        // a fresh environment resumes from the on-disk cache
        let env2 = BridgeEnvironment::new(spec(
            vec![stub.to_string_lossy().into_owned()],
            Some(cache.clone()),
        ))
        .unwrap();
        assert_eq!(env2.external_value(&config).unwrap(), 0.5);
        assert_eq!(env2.spawn_count(), 0);

        // a different command hash ignores the cached value
        let stub2 = write_stub(
            dir.path(),
            "ok2.sh",
            r#"read line; echo "{\"value\":0.25}""#,
        );
        let env3 = BridgeEnvironment::new(spec(
            vec![stub2.to_string_lossy().into_owned()],
            Some(cache),
        ))
        .unwrap();
        assert_eq!(env3.external_value(&config).unwrap(), 0.25);
        assert_eq!(env3.spawn_count(), 1);
    }

    #[test]
    fn request_line_reaches_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let echo_path = dir.path().join("seen.txt");
        let stub = write_stub(
            dir.path(),
            "echo.sh",
            &format!(
                r#"read line; printf '%s' "$line" > {}; echo "{{\"value\":1.0}}""#,
                echo_path.display()
            ),
        );
        let env =
            BridgeEnvironment::new(spec(vec![stub.to_string_lossy().into_owned()], None)).unwrap();
        assert_eq!(env.external_value(&test_config()).unwrap(), 1.0);
        let seen = std::fs::read_to_string(&echo_path).unwrap();
        assert_eq!(seen, r#"{"beam_ids":[7,8,9,10]}"#);
    }

    #[test]
    fn timeout_kills_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(dir.path(), "slow.sh", "sleep 30");
        let mut s = spec(vec![stub.to_string_lossy().into_owned()], None);
        s.timeout = Duration::from_millis(300);
        let env = BridgeEnvironment::new(s).unwrap();
        match env.external_value(&test_config()) {
            Err(BridgeError::Timeout { key, .. }) => assert_eq!(key, "7-8-9-10"),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(
            dir.path(),
            "range.sh",
            r#"read line; echo "{\"value\":1.7}""#,
        );
        let env =
            BridgeEnvironment::new(spec(vec![stub.to_string_lossy().into_owned()], None)).unwrap();
        match env.external_value(&test_config()) {
            Err(BridgeError::OutOfRange { value, key }) => {
                assert_eq!(value, 1.7);
                assert_eq!(key, "7-8-9-10");
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn nonzero_exit_carries_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(
            dir.path(),
            "fail.sh",
            r#"read line; echo "exploded" >&2; exit 3"#,
        );
        let env =
            BridgeEnvironment::new(spec(vec![stub.to_string_lossy().into_owned()], None)).unwrap();
        match env.external_value(&test_config()) {
            Err(BridgeError::NonZeroExit { code, stderr, .. }) => {
                assert_eq!(code, Some(3));
                assert!(stderr.contains("exploded"));
            }
            other => panic!("expected exit error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_response_carries_raw_output() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(dir.path(), "bad.sh", r#"read line; echo "not json""#);
        let env =
            BridgeEnvironment::new(spec(vec![stub.to_string_lossy().into_owned()], None)).unwrap();
        match env.external_value(&test_config()) {
            Err(BridgeError::MalformedResponse { raw, .. }) => assert_eq!(raw, "not json"),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn retries_recover_from_flaky_commands() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("marker");
        // fails on the first run, succeeds once the marker exists
        let stub = write_stub(
            dir.path(),
            "flaky.sh",
            &format!(
                r#"read line
if [ -f {marker} ]; then echo "{{\"value\":0.75}}"; else touch {marker}; exit 1; fi"#,
                marker = marker.display()
            ),
        );
        let mut s = spec(vec![stub.to_string_lossy().into_owned()], None);
        s.retries = 1;
        let env = BridgeEnvironment::new(s).unwrap();
        assert_eq!(env.external_value(&test_config()).unwrap(), 0.75);
        assert_eq!(env.spawn_count(), 2);
    }

    #[test]
    fn environment_trait_integrates_with_search_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(dir.path(), "bad.sh", r#"read line; echo "nope""#);
        let env =
            BridgeEnvironment::new(spec(vec![stub.to_string_lossy().into_owned()], None)).unwrap();
        let err = Environment::value(&env, &test_config()).unwrap_err();
        assert!(err.message.contains("malformed"));
        assert!(env.descriptor().starts_with("bridge:"));
    }
}

#[cfg(test)]
mod verbose_tests {
    use super::*;
    use beamopt::space::{BeamConfig, SolutionSpace};
    use std::os::unix::fs::PermissionsExt;

    /// A conforming-but-chatty environment: the response line is followed
    /// by a flood of log output on both pipes. Neither side may deadlock
    /// or corrupt the result.
    #[test]
    fn verbose_environment_neither_deadlocks_nor_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verbose.sh");
        std::fs::write(
            &path,
            "#!/bin/sh\nread line\necho \"{\\\"value\\\":0.25}\"\ni=0\nwhile [ $i -lt 3000 ]; do\n  echo \"log line $i padding padding padding padding padding\"\n  echo \"stderr line $i padding padding padding padding\" >&2\n  i=$((i+1))\ndone\n",
        )
        .unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        let env = BridgeEnvironment::new(BridgeSpec {
            command: vec![path.to_string_lossy().into_owned()],
            timeout: Duration::from_secs(20),
            cache_path: None,
            retries: 0,
            max_parallel: 1,
        })
        .unwrap();
        let space = SolutionSpace::new(40, 4, 2).unwrap();
        let config = BeamConfig::new(vec![7, 8, 9, 10], &space).unwrap();
        assert_eq!(env.external_value(&config).unwrap(), 0.25);
    }
}
