//! Pass/fail bookkeeping for invariant checks.

use std::fmt;

use serde::Serialize;

/// One checked inequality. `worst_margin` is the smallest observed slack
/// (`rhs − lhs` after tolerances); the entry passes iff it is `≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantEntry {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub samples: usize,
    pub detail: String,
}

impl InvariantEntry {
    pub fn new(name: impl Into<String>) -> Self {
        InvariantEntry {
            name: name.into(),
            passed: true,
            worst_margin: f64::INFINITY,
            samples: 0,
            detail: String::new(),
        }
    }

    /// Records one slack value; NaN counts as a failure.
    pub fn observe(&mut self, margin: f64) {
        self.samples += 1;
        if margin.is_nan() {
            self.worst_margin = f64::NAN;
            self.passed = false;
            return;
        }
        if !self.worst_margin.is_nan() && margin < self.worst_margin {
            self.worst_margin = margin;
        }
        if margin < 0.0 {
            self.passed = false;
        }
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.passed = false;
        self.detail = why.into();
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for InvariantEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:<48} worst margin {:>12.4e} over {} samples", self.name, self.worst_margin, self.samples)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    pub entries: Vec<InvariantEntry>,
}

impl InvariantReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: InvariantEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: InvariantReport) {
        self.entries.extend(other.entries);
    }

    /// Folds `other` in by name: margins take the minimum, sample counts add,
    /// and an entry fails if either side failed.
    pub fn merge(&mut self, other: InvariantReport) {
        for e in other.entries {
            match self.entries.iter_mut().find(|m| m.name == e.name) {
                Some(m) => {
                    m.samples += e.samples;
                    m.passed &= e.passed;
                    if e.worst_margin.is_nan() || e.worst_margin < m.worst_margin {
                        m.worst_margin = e.worst_margin;
                    }
                    if m.detail.is_empty() || (!e.passed && !e.detail.is_empty()) {
                        m.detail = e.detail;
                    }
                }
                None => self.entries.push(e),
            }
        }
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_folds_by_name() {
        let mut a = InvariantReport::new();
        let mut e = InvariantEntry::new("x");
        e.observe(0.5);
        a.push(e);
        let mut b = InvariantReport::new();
        let mut e = InvariantEntry::new("x");
        e.observe(-1.0);
        b.push(e);
        b.push(InvariantEntry::new("y"));
        a.merge(b);
        assert_eq!(a.entries.len(), 2);
        let x = a.get("x").unwrap();
        assert_eq!((x.samples, x.passed, x.worst_margin), (2, false, -1.0));
    }

    #[test]
    fn entry_tracks_worst_margin() {
        let mut e = InvariantEntry::new("x");
        e.observe(3.0);
        e.observe(0.5);
        e.observe(1.0);
        assert!(e.passed);
        assert_eq!(e.worst_margin, 0.5);
        assert_eq!(e.samples, 3);
        e.observe(-1e-3);
        assert!(!e.passed);
    }

    #[test]
    fn nan_fails() {
        let mut e = InvariantEntry::new("x");
        e.observe(f64::NAN);
        e.observe(1.0);
        assert!(!e.passed);
        assert!(e.worst_margin.is_nan());
    }

    #[test]
    fn report_aggregates() {
        let mut r = InvariantReport::new();
        r.push(InvariantEntry::new("a"));
        let mut b = InvariantEntry::new("b");
        b.fail("broken");
        r.push(b);
        assert!(!r.all_passed());
        assert_eq!(r.failures().count(), 1);
        assert!(r.to_string().contains("[FAIL] b"));
    }
}
