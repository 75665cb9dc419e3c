//! Duration-bounded, recency-ordered cache of utterance segments.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::segmenter::UtteranceSegment;

pub const DEFAULT_T_MAX_S: f64 = 30.0;

/// Keeps the most recent segments whose total speech duration fits `t_max_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceCache {
    entries: VecDeque<UtteranceSegment>,
    t_max_s: f64,
    oversize: bool,
}

/// What a single push did, for eviction traces.
#[derive(Debug, Clone, PartialEq)]
pub struct PushOutcome {
    pub evicted: Vec<UtteranceSegment>,
    pub oversize: bool,
}

impl Default for UtteranceCache {
    fn default() -> Self {
        Self::new(DEFAULT_T_MAX_S)
    }
}

impl UtteranceCache {
    pub fn new(t_max_s: f64) -> Self {
        Self {
            entries: VecDeque::new(),
            t_max_s,
            oversize: false,
        }
    }

    pub fn t_max_s(&self) -> f64 {
        self.t_max_s
    }

    /// Set when the newest segment alone exceeds `t_max_s`.
    pub fn is_oversize(&self) -> bool {
        self.oversize
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.entries.iter().map(UtteranceSegment::duration).sum()
    }

    /// Appends `s`, first evicting the oldest entries until the bound holds.
    ///
    /// A segment longer than `t_max_s` evicts everything and is kept alone
    /// with the oversize flag set.
    pub fn push(&mut self, s: UtteranceSegment) -> Result<PushOutcome> {
        if let Some(last) = self.entries.back() {
            if s.t_start < last.t_start {
                return Err(Error::OutOfOrder {
                    t_start: s.t_start,
                    last: last.t_start,
                });
            }
            if s.seq_no == last.seq_no && s.session_id == last.session_id {
                return Err(Error::InvalidParameter(format!("duplicate seq_no {}", s.seq_no)));
            }
        }
        let mut evicted = Vec::new();
        while !self.entries.is_empty() && self.total_duration() + s.duration() > self.t_max_s {
            evicted.extend(self.entries.pop_front());
        }
        self.oversize = s.duration() > self.t_max_s;
        self.entries.push_back(s);
        Ok(PushOutcome {
            evicted,
            oversize: self.oversize,
        })
    }

    /// Immutable copy of the entries, oldest first.
    pub fn snapshot(&self) -> Vec<UtteranceSegment> {
        self.entries.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UtteranceSegment> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.oversize = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(seq: u32, start: f64, dur: f64) -> UtteranceSegment {
        UtteranceSegment::new("s", seq, start, start + dur)
    }

    #[test]
    fn first_push_fits() {
        let mut c = UtteranceCache::default();
        c.push(seg(0, 0.0, 5.0)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.total_duration(), 5.0);
    }

    #[test]
    fn evicts_oldest_first() {
        let mut c = UtteranceCache::default();
        c.push(seg(0, 0.0, 10.0)).unwrap();
        c.push(seg(1, 11.0, 10.0)).unwrap();
        c.push(seg(2, 22.0, 9.0)).unwrap();
        let out = c.push(seg(3, 32.0, 5.0)).unwrap();
        assert_eq!(out.evicted.len(), 1);
        let durs: Vec<f64> = c.iter().map(|s| s.duration()).collect();
        assert_eq!(durs, vec![10.0, 9.0, 5.0]);
        assert_eq!(c.total_duration(), 24.0);
    }

    #[test]
    fn oversize_segment_stands_alone() {
        let mut c = UtteranceCache::default();
        c.push(seg(0, 0.0, 3.0)).unwrap();
        c.push(seg(1, 4.0, 31.0)).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.is_oversize());
        c.push(seg(2, 40.0, 1.0)).unwrap();
        assert!(!c.is_oversize());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut c = UtteranceCache::default();
        c.push(seg(0, 10.0, 1.0)).unwrap();
        assert!(matches!(c.push(seg(1, 5.0, 1.0)), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn total_duration_simple() {
        let mut c = UtteranceCache::default();
        assert_eq!(c.total_duration(), 0.0);
        c.push(seg(0, 0.0, 2.0)).unwrap();
        c.push(seg(1, 3.0, 3.5)).unwrap();
        assert_eq!(c.total_duration(), 5.5);
    }
}
