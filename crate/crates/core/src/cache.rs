//! LRU cache models.
//!
//! [`LruCache`] is fully associative with a byte budget and variable-size
//! entries; it models whole-tile caching and the shared LLC.
//! [`SetAssocCache`] is a classic line-granular set-associative LRU cache.
//! Both are write-allocate, write-back: dirty entries are reported to the
//! caller when evicted or flushed.

use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Hit,
    Miss,
}

impl Probe {
    pub fn is_hit(self) -> bool {
        self == Probe::Hit
    }
}

/// One cache request. `tag` is opaque caller metadata (the tensor id) handed
/// back with the entry on eviction.
#[derive(Clone, Copy, Debug)]
pub struct Request {
    pub unit: u64,
    pub bytes: u64,
    pub write: bool,
    pub tag: u8,
}

impl Request {
    pub fn read(unit: u64, bytes: u64) -> Self {
        Self {
            unit,
            bytes,
            write: false,
            tag: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Victim {
    pub unit: u64,
    pub bytes: u64,
    pub dirty: bool,
    pub tag: u8,
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct Node {
    unit: u64,
    bytes: u64,
    dirty: bool,
    tag: u8,
    prev: u32,
    next: u32,
}

/// Fully associative LRU over variable-size units.
#[derive(Clone, Debug)]
pub struct LruCache {
    capacity: u64,
    used: u64,
    map: HashMap<u64, u32>,
    nodes: Vec<Node>,
    free: Vec<u32>,
    // most recently used
    head: u32,
    // least recently used
    tail: u32,
}

impl LruCache {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            used: 0,
            map: HashMap::new(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, unit: u64) -> bool {
        self.map.contains_key(&unit)
    }

    fn unlink(&mut self, i: u32) {
        let (prev, next) = {
            let n = &self.nodes[i as usize];
            (n.prev, n.next)
        };
        if prev != NIL {
            self.nodes[prev as usize].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next as usize].prev = prev;
        } else {
            self.tail = prev;
        }
    }

    fn push_front(&mut self, i: u32) {
        self.nodes[i as usize].prev = NIL;
        self.nodes[i as usize].next = self.head;
        if self.head != NIL {
            self.nodes[self.head as usize].prev = i;
        } else {
            self.tail = i;
        }
        self.head = i;
    }

    fn pop_lru(&mut self) -> Option<Victim> {
        if self.tail == NIL {
            return None;
        }
        let i = self.tail;
        self.unlink(i);
        self.free.push(i);
        let n = &self.nodes[i as usize];
        self.map.remove(&n.unit);
        self.used -= n.bytes;
        Some(Victim {
            unit: n.unit,
            bytes: n.bytes,
            dirty: n.dirty,
            tag: n.tag,
        })
    }

    /// Looks `req.unit` up, refreshing it on a hit and inserting it on a miss.
    /// Units larger than the whole cache are never inserted.
    pub fn access(&mut self, req: Request, evict: &mut impl FnMut(Victim)) -> Probe {
        if let Some(&i) = self.map.get(&req.unit) {
            self.nodes[i as usize].dirty |= req.write;
            if self.head != i {
                self.unlink(i);
                self.push_front(i);
            }
            return Probe::Hit;
        }
        if req.bytes > self.capacity {
            if req.write {
                evict(Victim {
                    unit: req.unit,
                    bytes: req.bytes,
                    dirty: true,
                    tag: req.tag,
                });
            }
            return Probe::Miss;
        }
        while self.used + req.bytes > self.capacity {
            let v = self.pop_lru().expect("occupancy accounting out of sync");
            evict(v);
        }
        let node = Node {
            unit: req.unit,
            bytes: req.bytes,
            dirty: req.write,
            tag: req.tag,
            prev: NIL,
            next: NIL,
        };
        let i = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.push_front(i);
        self.map.insert(req.unit, i);
        self.used += req.bytes;
        Probe::Miss
    }

    /// Evicts everything, reporting each entry from LRU to MRU.
    pub fn flush(&mut self, evict: &mut impl FnMut(Victim)) {
        while let Some(v) = self.pop_lru() {
            evict(v);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Way {
    line: u64,
    dirty: bool,
    tag: u8,
}

/// Set-associative LRU over fixed-size lines; set = line id mod num_sets.
#[derive(Clone, Debug)]
pub struct SetAssocCache {
    assoc: usize,
    line_bytes: u64,
    // each set ordered MRU first
    sets: Vec<Vec<Way>>,
}

impl SetAssocCache {
    pub fn new(num_sets: usize, assoc: usize, line_bytes: u64) -> Self {
        Self {
            assoc,
            line_bytes,
            sets: vec![Vec::with_capacity(assoc); num_sets],
        }
    }

    pub fn capacity(&self) -> u64 {
        (self.sets.len() * self.assoc) as u64 * self.line_bytes
    }

    pub fn occupancy(&self) -> u64 {
        self.sets.iter().map(Vec::len).sum::<usize>() as u64 * self.line_bytes
    }

    pub fn access(&mut self, req: Request, evict: &mut impl FnMut(Victim)) -> Probe {
        let line_bytes = self.line_bytes;
        let idx = (req.unit % self.sets.len() as u64) as usize;
        let set = &mut self.sets[idx];
        if let Some(pos) = set.iter().position(|w| w.line == req.unit) {
            let mut way = set.remove(pos);
            way.dirty |= req.write;
            set.insert(0, way);
            return Probe::Hit;
        }
        if set.len() == self.assoc {
            let v = set.pop().expect("full set");
            evict(Victim {
                unit: v.line,
                bytes: line_bytes,
                dirty: v.dirty,
                tag: v.tag,
            });
        }
        set.insert(
            0,
            Way {
                line: req.unit,
                dirty: req.write,
                tag: req.tag,
            },
        );
        Probe::Miss
    }

    pub fn flush(&mut self, evict: &mut impl FnMut(Victim)) {
        let line_bytes = self.line_bytes;
        for set in &mut self.sets {
            for w in set.drain(..).rev() {
                evict(Victim {
                    unit: w.line,
                    bytes: line_bytes,
                    dirty: w.dirty,
                    tag: w.tag,
                });
            }
        }
    }
}

/// One XCD's L2.
#[derive(Clone, Debug)]
pub enum CacheState {
    Tile(LruCache),
    Line(SetAssocCache),
}

impl CacheState {
    pub fn access(&mut self, req: Request, evict: &mut impl FnMut(Victim)) -> Probe {
        match self {
            CacheState::Tile(c) => c.access(req, evict),
            CacheState::Line(c) => c.access(req, evict),
        }
    }

    pub fn flush(&mut self, evict: &mut impl FnMut(Victim)) {
        match self {
            CacheState::Tile(c) => c.flush(evict),
            CacheState::Line(c) => c.flush(evict),
        }
    }

    pub fn capacity(&self) -> u64 {
        match self {
            CacheState::Tile(c) => c.capacity(),
            CacheState::Line(c) => c.capacity(),
        }
    }

    pub fn occupancy(&self) -> u64 {
        match self {
            CacheState::Tile(c) => c.occupancy(),
            CacheState::Line(c) => c.occupancy(),
        }
    }
}

/// Read probe of `unit`, discarding eviction notices.
pub fn cache_access(state: &mut CacheState, unit: u64, bytes: u64) -> Probe {
    state.access(Request::read(unit, bytes), &mut |_| {})
}
