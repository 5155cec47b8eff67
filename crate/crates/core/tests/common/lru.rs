//! Brute-force model of the cache: a recency list and a pin table.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Open(usize),
    Pin(usize),
    Unpin(usize),
    Evict(u64),
}

#[derive(Debug, Default)]
pub struct Oracle {
    pub capacity: u64,
    pub sizes: Vec<u64>,
    /// Resident files, least recently used first.
    pub order: Vec<usize>,
    pub pins: BTreeMap<usize, u32>,
    pub transfers: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Err,
}

impl Oracle {
    pub fn new(capacity: u64, sizes: Vec<u64>) -> Self {
        Oracle { capacity, sizes, ..Default::default() }
    }

    fn used(&self) -> u64 {
        self.order.iter().map(|&i| self.sizes[i]).sum()
    }

    fn make_room(&mut self, needed: u64) -> Outcome {
        let free = self.capacity - self.used();
        if free >= needed {
            return Outcome::Ok;
        }
        let evictable: u64 = self.order.iter().filter(|i| self.pins.get(i).copied().unwrap_or(0) == 0).map(|&i| self.sizes[i]).sum();
        if free + evictable < needed {
            return Outcome::Err;
        }
        let mut free = free;
        let mut keep = Vec::new();
        for &i in &self.order {
            if free < needed && self.pins.get(&i).copied().unwrap_or(0) == 0 {
                free += self.sizes[i];
            } else {
                keep.push(i);
            }
        }
        self.order = keep;
        Outcome::Ok
    }

    pub fn apply(&mut self, op: Op) -> Outcome {
        match op {
            Op::Open(i) => {
                if let Some(pos) = self.order.iter().position(|&x| x == i) {
                    self.order.remove(pos);
                    self.order.push(i);
                    return Outcome::Ok;
                }
                if self.make_room(self.sizes[i]) == Outcome::Err {
                    return Outcome::Err;
                }
                self.order.push(i);
                self.transfers += 1;
                Outcome::Ok
            }
            Op::Pin(i) => {
                if !self.order.contains(&i) {
                    return Outcome::Err;
                }
                *self.pins.entry(i).or_default() += 1;
                Outcome::Ok
            }
            Op::Unpin(i) => match self.pins.get_mut(&i) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    Outcome::Ok
                }
                _ => Outcome::Err,
            },
            Op::Evict(bytes) => self.make_room(bytes),
        }
    }

    pub fn resident(&self) -> Vec<usize> {
        let mut v = self.order.clone();
        v.sort();
        v
    }
}
