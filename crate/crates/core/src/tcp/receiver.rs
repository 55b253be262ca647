use std::collections::BTreeSet;

use crate::engine::{AckInfo, MAX_SACK_BLOCKS};

/// Per-flow receiver: acknowledges every data segment immediately.
#[derive(Clone, Debug, Default)]
pub struct Receiver {
    next_expected: u64,
    out_of_order: BTreeSet<u64>,
    sack: bool,
}

impl Receiver {
    pub fn new(sack: bool) -> Self {
        Receiver {
            sack,
            ..Default::default()
        }
    }

    pub fn next_expected(&self) -> u64 {
        self.next_expected
    }

    /// Accepts segment `seq` and returns the acknowledgement together with
    /// the number of segments that became deliverable in order.
    pub fn on_data(&mut self, seq: u64) -> (AckInfo, u64) {
        let before = self.next_expected;
        if seq == self.next_expected {
            self.next_expected += 1;
            while self.out_of_order.remove(&self.next_expected) {
                self.next_expected += 1;
            }
        } else if seq > self.next_expected {
            self.out_of_order.insert(seq);
        }
        let ack = AckInfo {
            cumulative: self.next_expected,
            sack_blocks: if self.sack { self.sack_blocks(seq) } else { Vec::new() },
        };
        (ack, self.next_expected - before)
    }

    /// Out-of-order ranges, the one holding the most recent arrival first,
    /// then the rest from the highest down.
    fn sack_blocks(&self, latest: u64) -> Vec<(u64, u64)> {
        let mut blocks: Vec<(u64, u64)> = Vec::new();
        for &s in &self.out_of_order {
            match blocks.last_mut() {
                Some((_, end)) if *end == s => *end += 1,
                _ => blocks.push((s, s + 1)),
            }
        }
        let first = blocks.iter().position(|&(a, b)| a <= latest && latest < b);
        let mut out = Vec::with_capacity(MAX_SACK_BLOCKS);
        if let Some(i) = first {
            out.push(blocks[i]);
        }
        for (i, b) in blocks.iter().enumerate().rev() {
            if out.len() == MAX_SACK_BLOCKS {
                break;
            }
            if Some(i) != first {
                out.push(*b);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_order_data_advances_cumulative_ack() {
        let mut r = Receiver::new(false);
        assert_eq!(r.on_data(0).0.cumulative, 1);
        assert_eq!(r.on_data(1).0.cumulative, 2);
        // duplicate
        assert_eq!(r.on_data(0), (AckInfo { cumulative: 2, sack_blocks: vec![] }, 0));
    }

    #[test]
    fn hole_fill_releases_buffered_segments() {
        let mut r = Receiver::new(true);
        r.on_data(0);
        let (ack, _) = r.on_data(2);
        assert_eq!(ack.cumulative, 1);
        assert_eq!(ack.sack_blocks, vec![(2, 3)]);
        r.on_data(3);
        let (ack, newly) = r.on_data(1);
        assert_eq!(ack.cumulative, 4);
        assert_eq!(newly, 3);
        assert!(ack.sack_blocks.is_empty());
    }

    #[test]
    fn sack_blocks_limited_and_most_recent_first() {
        let mut r = Receiver::new(true);
        for s in [2, 4, 6, 8] {
            r.on_data(s);
        }
        let (ack, _) = r.on_data(4);
        assert_eq!(ack.cumulative, 0);
        assert_eq!(ack.sack_blocks, vec![(4, 5), (8, 9), (6, 7)]);
    }
}
