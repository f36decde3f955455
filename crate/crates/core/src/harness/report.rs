use std::fmt::Write as _;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    /// `None` when the check passed, otherwise what went wrong.
    pub failure: Option<String>,
    pub elapsed: Duration,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub outcomes: Vec<CheckOutcome>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed())
    }

    /// One `PASS`/`FAIL` line per check plus a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let ms = o.elapsed.as_millis();
            match &o.failure {
                None => {
                    let _ = writeln!(out, "PASS  {} ({ms} ms)", o.name);
                }
                Some(why) => {
                    let _ = writeln!(out, "FAIL  {} ({ms} ms): {why}", o.name);
                }
            }
        }
        let failed = self.failures().count();
        let _ = writeln!(
            out,
            "{} checks, {} passed, {failed} failed",
            self.outcomes.len(),
            self.outcomes.len() - failed
        );
        out
    }

    pub(crate) fn run(&mut self, name: &str, check: impl FnOnce() -> Result<(), String>) {
        let t0 = Instant::now();
        let failure = check().err();
        self.outcomes.push(CheckOutcome {
            name: name.to_owned(),
            failure,
            elapsed: t0.elapsed(),
        });
    }

    /// Like [`run`](Self::run) but on its own thread; a check that does not
    /// finish within `limit` fails and is abandoned.
    pub(crate) fn run_bounded(
        &mut self,
        name: &str,
        limit: Duration,
        check: impl FnOnce() -> Result<(), String> + Send + 'static,
    ) {
        let t0 = Instant::now();
        let (tx, rx) = mpsc::channel();
        let spawned = thread::Builder::new()
            .name(format!("check-{name}"))
            .spawn(move || {
                let _ = tx.send(check());
            });
        let failure = match spawned {
            Err(e) => Some(format!("cannot start check: {e}")),
            Ok(_) => match rx.recv_timeout(limit) {
                Ok(result) => result.err(),
                Err(mpsc::RecvTimeoutError::Timeout) => Some(format!("timed out after {limit:?}")),
                Err(mpsc::RecvTimeoutError::Disconnected) => Some("check panicked".into()),
            },
        };
        self.outcomes.push(CheckOutcome {
            name: name.to_owned(),
            failure,
            elapsed: t0.elapsed(),
        });
    }
}

/// `ensure!(cond, "fmt", args..)` returns `Err(String)` from a check.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;
