use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scenario::{ms, DelayModel, Scenario};
use crate::{NodeId, SimTime};

/// Delay and partition model shared by every hop.
#[derive(Clone, Debug)]
pub struct Network {
    lambda: SimTime,
    min: SimTime,
    max: SimTime,
    random: bool,
    reorder: bool,
    windows: Vec<Window>,
}

#[derive(Clone, Debug)]
struct Window {
    start: SimTime,
    end: SimTime,
    /// Group index per node id.
    group_of: Vec<usize>,
}

impl Network {
    pub fn new(sc: &Scenario) -> Network {
        let lambda = sc.lambda();
        let random = sc.delay.model == DelayModel::Uniform;
        let (min, max) = if random {
            (ms(sc.delay.min_ms.unwrap_or(0.0)).max(1), ms(sc.delay.max_ms.unwrap_or(sc.lambda_ms)))
        } else {
            (lambda, lambda)
        };
        let windows = sc
            .partitions
            .iter()
            .map(|p| {
                let rest = p.groups.len();
                let mut group_of = vec![rest; sc.nodes];
                for (g, members) in p.groups.iter().enumerate() {
                    for n in members {
                        group_of[*n as usize] = g;
                    }
                }
                Window { start: ms(p.start_ms), end: ms(p.end_ms), group_of }
            })
            .collect();
        Network { lambda, min, max, random, reorder: sc.delay.reorder, windows }
    }

    pub fn reorders(&self) -> bool {
        self.reorder
    }

    /// End of the last partition window, if any.
    pub fn heal_times(&self) -> Vec<SimTime> {
        self.windows.iter().map(|w| w.end).collect()
    }

    pub fn sample_delay(&self, rng: &mut ChaCha8Rng) -> SimTime {
        if self.random {
            rng.random_range(self.min..=self.max)
        } else {
            self.lambda
        }
    }

    /// When a message sent at `now` from `from` reaches `to`.
    pub fn arrival(&self, from: NodeId, to: NodeId, now: SimTime, rng: &mut ChaCha8Rng) -> SimTime {
        let delay = self.sample_delay(rng);
        let mut at = now;
        for w in &self.windows {
            let cut = w.group_of[from.0 as usize] != w.group_of[to.0 as usize];
            if cut && at >= w.start && at < w.end {
                at = w.end;
            }
        }
        at + delay
    }
}

/// Ordering class among events at the same instant: deliveries first, so
/// a Step that runs at time `t` sees every message that arrived at `t`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Class {
    Deliver = 0,
    Control = 1,
    Tick = 2,
}

#[derive(Debug)]
pub struct Scheduled<E> {
    pub time: SimTime,
    pub class: Class,
    /// FIFO sequence, or a random key when reordering.
    pub key: u64,
    pub seq: u64,
    pub event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        (other.time, other.class, other.key, other.seq).cmp(&(self.time, self.class, self.key, self.seq))
    }
}

/// Deterministic event queue ordered by `(time, class, key, seq)`.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, time: SimTime, class: Class, key: Option<u64>, event: E) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Scheduled { time, class, key: key.unwrap_or(seq), seq, event });
    }

    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        self.heap.pop()
    }
}
