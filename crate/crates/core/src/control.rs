//! Local control channel for a running instance.
//!
//! One request per connection: a single line of whitespace-separated words,
//! answered with one line of JSON. `{"ok": true, ..}` on success,
//! `{"ok": false, "error": ".."}` on rejection.
//!
//! ```text
//! get-status
//! update-boundary <metric> <min|-> <max|->
//! ```

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

const IO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub enum ControlCommand {
    GetStatus,
    UpdateBoundary { metric: String, min: Option<f64>, max: Option<f64> },
}

impl ControlCommand {
    pub fn parse<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let words: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
        match words.as_slice() {
            ["get-status"] => Ok(ControlCommand::GetStatus),
            ["update-boundary", metric, min, max] => Ok(ControlCommand::UpdateBoundary {
                metric: metric.to_string(),
                min: parse_bound(min)?,
                max: parse_bound(max)?,
            }),
            ["update-boundary", ..] => {
                Err(Error::InvalidInput("usage: update-boundary <metric> <min|-> <max|->".into()))
            }
            _ => Err(Error::InvalidInput(format!("unknown command `{}`", words.join(" ")))),
        }
    }

    pub fn to_line(&self) -> String {
        let fmt = |b: Option<f64>| b.map_or_else(|| "-".to_string(), |v| v.to_string());
        match self {
            ControlCommand::GetStatus => "get-status".into(),
            ControlCommand::UpdateBoundary { metric, min, max } => {
                format!("update-boundary {metric} {} {}", fmt(*min), fmt(*max))
            }
        }
    }
}

fn parse_bound(s: &str) -> Result<Option<f64>> {
    if s == "-" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::InvalidInput(format!("`{s}` is not a number or `-`"))),
    }
}

pub fn ok(mut body: Value) -> Value {
    if let Value::Object(map) = &mut body {
        map.insert("ok".into(), Value::Bool(true));
    }
    body
}

pub fn rejected(reason: impl std::fmt::Display) -> Value {
    json!({ "ok": false, "error": reason.to_string() })
}

/// Non-blocking listener, drained by the control loop between ticks.
pub struct ControlServer {
    listener: UnixListener,
    path: PathBuf,
}

impl ControlServer {
    /// Binds `path`, replacing a stale socket file.
    pub fn bind(path: &Path) -> Result<Self> {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        let listener = UnixListener::bind(path)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Serves every pending connection with `handler` and returns how many
    /// were handled. Malformed requests are answered with a rejection.
    pub fn poll(&self, mut handler: impl FnMut(ControlCommand) -> Value) -> Result<usize> {
        let mut handled = 0;
        loop {
            let stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => return Ok(handled),
                Err(e) => return Err(e.into()),
            };
            handled += 1;
            // A client that misbehaves must not stop the loop.
            let _ = serve_one(stream, &mut handler);
        }
    }
}

fn serve_one(stream: UnixStream, handler: &mut impl FnMut(ControlCommand) -> Value) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    let words: Vec<&str> = line.split_whitespace().collect();
    let reply = match ControlCommand::parse(&words) {
        Ok(cmd) => handler(cmd),
        Err(e) => rejected(e),
    };
    let mut out = serde_json::to_vec(&reply)?;
    out.push(b'\n');
    (&stream).write_all(&out)?;
    Ok(())
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Sends one command and returns the decoded reply.
pub fn send(path: &Path, command: &ControlCommand) -> Result<Value> {
    let stream = UnixStream::connect(path)
        .map_err(|e| Error::Control(format!("cannot reach instance at {}: {e}", path.display())))?;
    stream.set_read_timeout(Some(IO_TIMEOUT * 2))?;
    (&stream).write_all(format!("{}\n", command.to_line()).as_bytes())?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    if line.trim().is_empty() {
        return Err(Error::Control("instance closed the connection without replying".into()));
    }
    Ok(serde_json::from_str(&line)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_commands() {
        assert_eq!(ControlCommand::parse(&["get-status"]).unwrap(), ControlCommand::GetStatus);
        assert_eq!(
            ControlCommand::parse(&["update-boundary", "energy_avg_10s", "-", "8"]).unwrap(),
            ControlCommand::UpdateBoundary { metric: "energy_avg_10s".into(), min: None, max: Some(8.0) }
        );
        assert!(ControlCommand::parse(&["update-boundary", "x", "a", "1"]).is_err());
        assert!(ControlCommand::parse(&["update-boundary", "x"]).is_err());
        assert!(ControlCommand::parse(&["reboot"]).is_err());
    }

    #[test]
    fn line_round_trip() {
        let cmd = ControlCommand::UpdateBoundary { metric: "cost_per_hour".into(), min: Some(0.5), max: None };
        let words: Vec<String> = cmd.to_line().split(' ').map(String::from).collect();
        assert_eq!(ControlCommand::parse(&words).unwrap(), cmd);
    }

    #[test]
    fn request_reply_over_socket() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctl.sock");
        let server = ControlServer::bind(&path).unwrap();
        let client = std::thread::spawn({
            let path = path.clone();
            move || send(&path, &ControlCommand::GetStatus).unwrap()
        });
        let mut served = 0;
        while served == 0 {
            served = server.poll(|cmd| ok(json!({ "echo": cmd.to_line() }))).unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        let reply = client.join().unwrap();
        assert_eq!(reply["ok"], true);
        assert_eq!(reply["echo"], "get-status");
    }

    #[test]
    fn unreachable_instance() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(send(&dir.path().join("none.sock"), &ControlCommand::GetStatus), Err(Error::Control(_))));
    }
}
