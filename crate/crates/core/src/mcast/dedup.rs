/// Outcome of offering a message id to a [`DedupBuffer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DedupOutcome {
    /// First copy; deliver it.
    Accept,
    /// Same id seen before; discard.
    Duplicate,
    /// The slot holds a newer id, so this copy is older than the buffer span.
    Error,
}

/// Fixed-size ring keyed by `msg_id mod Nbuf`.
///
/// Correct while fewer than `Nbuf` newer ids arrive before a copy of an
/// older one, which holds when `Nbuf` covers one second of messages.
#[derive(Clone, Debug)]
pub struct DedupBuffer {
    slots: Vec<i64>,
    mask: u64,
    violations: u64,
}

impl DedupBuffer {
    /// Sizes the buffer to the smallest power of two `>= rate_per_s`.
    pub fn new(rate_per_s: u64) -> Self {
        let n = rate_per_s.max(1).next_power_of_two();
        DedupBuffer {
            slots: vec![-1; n as usize],
            mask: n - 1,
            violations: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn accept(&mut self, msg_id: u64) -> DedupOutcome {
        let slot = &mut self.slots[(msg_id & self.mask) as usize];
        let id = msg_id as i64;
        if *slot == id {
            DedupOutcome::Duplicate
        } else if *slot > id {
            self.violations += 1;
            DedupOutcome::Error
        } else {
            *slot = id;
            DedupOutcome::Accept
        }
    }

    /// Copies that arrived after their slot had been reused.
    pub fn violations(&self) -> u64 {
        self.violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sized_to_power_of_two() {
        assert_eq!(DedupBuffer::new(1000).capacity(), 1024);
        assert_eq!(DedupBuffer::new(1024).capacity(), 1024);
        assert_eq!(DedupBuffer::new(0).capacity(), 1);
    }

    #[test]
    fn accept_then_duplicate() {
        let mut b = DedupBuffer::new(1024);
        assert_eq!(b.accept(5), DedupOutcome::Accept);
        assert_eq!(b.accept(5), DedupOutcome::Duplicate);
    }

    #[test]
    fn slot_reuse_detected() {
        let mut b = DedupBuffer::new(1024);
        assert_eq!(b.accept(1029), DedupOutcome::Accept);
        assert_eq!(b.accept(5), DedupOutcome::Error);
        assert_eq!(b.violations(), 1);
    }

    #[test]
    fn zero_id_is_valid() {
        let mut b = DedupBuffer::new(4);
        assert_eq!(b.accept(0), DedupOutcome::Accept);
        assert_eq!(b.accept(0), DedupOutcome::Duplicate);
    }
}
