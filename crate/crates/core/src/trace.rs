//! Append-only, totally ordered event trace plus the query predicates
//! scenario expectations are written against.

/// One simulation event. `details` are rendered as `k=v` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub domain: String,
    pub event: String,
    pub details: Vec<(String, String)>,
}

impl TraceEvent {
    pub fn render(&self) -> String {
        let mut line = format!("step={} domain={} event={}", self.step, self.domain, self.event);
        for (k, v) in &self.details {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }

    pub fn detail(&self, key: &str) -> Option<&str> {
        self.details
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Default)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.render());
            out.push('\n');
        }
        out
    }

    /// Events matching a name, optionally restricted to a domain.
    pub fn matching<'a>(
        &'a self,
        event: &'a str,
        domain: Option<&'a str>,
    ) -> impl Iterator<Item = &'a TraceEvent> {
        self.events
            .iter()
            .filter(move |e| e.event == event && domain.map_or(true, |d| e.domain == d))
    }

    pub fn count(&self, event: &str, domain: Option<&str>) -> usize {
        self.matching(event, domain).count()
    }

    /// True iff the named events occur in the given order (not
    /// necessarily adjacent). Each name is matched at its earliest
    /// position after the previous match.
    pub fn ordered(&self, names: &[&str]) -> bool {
        let mut idx = 0usize;
        for name in names {
            match self.events[idx..].iter().position(|e| &e.event == name) {
                Some(p) => idx += p + 1,
                None => return false,
            }
        }
        true
    }
}

/// Substring-absence check over a byte buffer: no window of `needle` of
/// length `window` occurs in `haystack`.
pub fn windows_absent(haystack: &[u8], needle: &[u8], window: usize) -> bool {
    if needle.len() < window || window == 0 {
        return true;
    }
    for w in needle.windows(window) {
        if haystack.windows(window).any(|h| h == w) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(step: u64, domain: &str, event: &str) -> TraceEvent {
        TraceEvent {
            step,
            domain: domain.into(),
            event: event.into(),
            details: vec![("k".into(), "v".into())],
        }
    }

    #[test]
    fn render_format() {
        let e = ev(3, "vm-os", "dma-denied");
        assert_eq!(e.render(), "step=3 domain=vm-os event=dma-denied k=v");
    }

    #[test]
    fn ordering_predicate() {
        let mut t = Trace::new();
        for (i, name) in ["boot", "attest", "approve", "session"].iter().enumerate() {
            t.push(ev(i as u64, "hypervisor", name));
        }
        assert!(t.ordered(&["boot", "attest", "session"]));
        assert!(!t.ordered(&["attest", "boot"]));
        assert!(!t.ordered(&["boot", "missing"]));
    }

    #[test]
    fn counting_and_domains() {
        let mut t = Trace::new();
        t.push(ev(0, "vm-os", "msg"));
        t.push(ev(1, "driver-0", "msg"));
        assert_eq!(t.count("msg", None), 2);
        assert_eq!(t.count("msg", Some("vm-os")), 1);
    }

    #[test]
    fn window_scan() {
        let hay = b"abcdefgh".to_vec();
        assert!(!windows_absent(&hay, b"xxcdexx", 3)); // "cde" present
        assert!(windows_absent(&hay, b"wxyz", 4));
        assert!(windows_absent(&hay, b"ab", 4)); // needle shorter than window
    }
}
