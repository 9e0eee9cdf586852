//! Pass/fail bookkeeping for the acceptance run in `tests/acceptance.rs`.

use std::process::ExitCode;

/// Collects one verdict per criterion and prints each as it lands.
#[derive(Debug, Default)]
pub struct Verdicts {
    failed: Vec<String>,
    total: usize,
}

impl Verdicts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        self.total += 1;
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {}", detail.as_ref());
        if !pass {
            self.failed.push(name.to_string());
        }
    }

    pub fn finish(self) -> ExitCode {
        println!("\n{} of {} criteria passed", self.total - self.failed.len(), self.total);
        if self.failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            println!("failed: {}", self.failed.join(", "));
            ExitCode::FAILURE
        }
    }
}
