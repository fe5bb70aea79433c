//! Obstacle-free lattice cost-to-go tables, built once per configuration.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use super::lattice::PrimitiveSet;

/// Micro-units per meter of lattice cost.
pub const COST_SCALE: f64 = 1e6;

/// Cost of a primitive of `length` meters at unit weight.
pub fn unit_cost(length: f64) -> u64 {
    (COST_SCALE * length).ceil() as u64
}

/// Cost-to-go for one goal heading within the first quadrant of headings, indexed by the
/// state's offset from the goal (forward, left) and heading.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicTable {
    pub goal_heading: usize,
    pub radius: i32,
    pub heading_bins: usize,
    values: Vec<u64>,
}

impl HeuristicTable {
    fn index(&self, di: i32, dj: i32, h: usize) -> Option<usize> {
        let r = self.radius;
        if di.abs() > r || dj.abs() > r {
            return None;
        }
        let side = (2 * r + 1) as usize;
        Some((((di + r) as usize) * side + (dj + r) as usize) * self.heading_bins + h)
    }

    /// Value for a state at offset `(di, dj)` from the goal with heading `h`, if inside the table.
    pub fn get(&self, di: i32, dj: i32, h: usize) -> Option<u64> {
        self.index(di, dj, h).map(|i| self.values[i])
    }
}

/// Lazily built tables for every goal heading, sharing one primitive set.
#[derive(Debug)]
pub struct HeuristicTables {
    prims: Arc<PrimitiveSet>,
    inner: i32,
    outer: i32,
    cap: u64,
    classes: Vec<OnceLock<HeuristicTable>>,
}

impl HeuristicTables {
    /// Tables are exact within Chebyshev radius `outer` of the goal and stored for `inner`.
    pub fn new(prims: Arc<PrimitiveSet>, inner: i32, outer: i32) -> Self {
        assert!(outer > inner && inner >= 1);
        let quarter = prims.heading_bins / 4;
        let cap = (COST_SCALE * (2 * outer - inner - 1) as f64 * prims.resolution).floor() as u64;
        Self {
            prims,
            inner,
            outer,
            cap,
            classes: (0..quarter).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn inner_radius(&self) -> i32 {
        self.inner
    }

    pub fn table(&self, goal_heading: usize) -> &HeuristicTable {
        self.classes[goal_heading].get_or_init(|| build_table(&self.prims, goal_heading, self.inner, self.outer, self.cap))
    }

    /// Lower bound for a state `(di, dj)` lattice cells from the goal (forward, left) with
    /// heading `h`, for goal heading `g`. Zero outside the table.
    pub fn lookup(&self, di: i32, dj: i32, h: usize, g: usize) -> u64 {
        let n = self.prims.heading_bins;
        let quarter = n / 4;
        let q = g / quarter;
        let (mut x, mut y) = (di, dj);
        for _ in 0..q {
            (x, y) = (y, -x);
        }
        let hr = (h + n - q * quarter) % n;
        if x.abs() > self.inner || y.abs() > self.inner {
            return 0;
        }
        self.table(g % quarter).get(x, y, hr).unwrap_or(0)
    }
}

fn build_table(prims: &PrimitiveSet, g0: usize, inner: i32, outer: i32, cap: u64) -> HeuristicTable {
    let n = prims.heading_bins;
    let mut reverse: Vec<Vec<(i32, i32, usize, u64)>> = vec![Vec::new(); n];
    for h in 0..n {
        for p in prims.for_heading(h) {
            let h2 = (h as i32 + p.dh).rem_euclid(n as i32) as usize;
            reverse[h2].push((-p.di, -p.dj, h, unit_cost(p.length)));
        }
    }
    let side = (2 * outer + 1) as usize;
    let idx = |i: i32, j: i32, h: usize| (((i + outer) as usize) * side + (j + outer) as usize) * n + h;
    let mut dist = vec![u64::MAX; side * side * n];
    let mut heap = BinaryHeap::new();
    for i in -1..=1 {
        for j in -1..=1 {
            for dh in -1i32..=1 {
                let h = (g0 as i32 + dh).rem_euclid(n as i32) as usize;
                dist[idx(i, j, h)] = 0;
                heap.push(Reverse((0u64, i, j, h)));
            }
        }
    }
    while let Some(Reverse((d, i, j, h))) = heap.pop() {
        if d > dist[idx(i, j, h)] {
            continue;
        }
        for &(di, dj, hp, c) in &reverse[h] {
            let (pi, pj) = (i + di, j + dj);
            if pi.abs() > outer || pj.abs() > outer {
                continue;
            }
            let nd = d + c;
            let k = idx(pi, pj, hp);
            if nd < dist[k] {
                dist[k] = nd;
                heap.push(Reverse((nd, pi, pj, hp)));
            }
        }
    }
    let s_in = (2 * inner + 1) as usize;
    let mut values = Vec::with_capacity(s_in * s_in * n);
    for i in -inner..=inner {
        for j in -inner..=inner {
            for h in 0..n {
                values.push(dist[idx(i, j, h)].min(cap));
            }
        }
    }
    HeuristicTable {
        goal_heading: g0,
        radius: inner,
        heading_bins: n,
        values,
    }
}

type CacheKey = (usize, u64, u64, u64, i32, i32);

/// Process-wide table cache keyed by lattice configuration.
pub fn shared_tables(prims: &Arc<PrimitiveSet>, inner: i32, outer: i32) -> Arc<HeuristicTables> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<HeuristicTables>>>> = OnceLock::new();
    let key = (
        prims.heading_bins,
        prims.resolution.to_bits(),
        prims.kappa_max.to_bits(),
        prims.spacing.to_bits(),
        inner,
        outer,
    );
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry(key)
        .or_insert_with(|| Arc::new(HeuristicTables::new(prims.clone(), inner, outer)))
        .clone()
}
