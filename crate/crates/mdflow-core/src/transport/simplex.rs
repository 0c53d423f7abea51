//! Primal network simplex for the dense transportation problem.
//!
//! Supplies and demands hang off an artificial root through big-M arcs; the
//! entering arc is found by block pricing and the leaving arc by Cunningham's
//! rule, which keeps the spanning tree strongly feasible and rules out cycling.
//! The tree is re-threaded from the root after every pivot.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Sub};

use crate::linalg::sqrt;
use crate::{Error, Result};

/// Arithmetic used for arc flows. Costs and potentials are always `f64`.
pub trait FlowValue: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    fn zero() -> Self;
    fn to_f64(self) -> f64;
}

impl FlowValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl FlowValue for i128 {
    fn zero() -> Self {
        0
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

pub(crate) struct SimplexSolution<F> {
    /// `(i, j, flow)` for every positive flow.
    pub flows: Vec<(usize, usize, F)>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[allow(dead_code)]
    pub pivots: usize,
}

/// Solves `min Σ c_ij γ_ij` subject to row sums `supply` and column sums `demand`.
/// `cost` is row-major `n × m`. Supplies and demands must be positive with equal totals.
pub(crate) fn solve<F: FlowValue>(
    cost: &[f64],
    supply: &[F],
    demand: &[F],
    max_pivots: usize,
) -> Result<SimplexSolution<F>> {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(cost.len(), n * m);
    let nodes = n + m + 1;
    let root = n + m;
    let real = n * m;
    let max_cost = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let art = (max_cost + 1.0) * (nodes as f64);
    let eps = 1e-13 * (max_cost + 1.0);

    let src = |a: usize| -> usize {
        if a < real {
            a / m
        } else if a < real + n {
            a - real
        } else {
            root
        }
    };
    let dst = |a: usize| -> usize {
        if a < real {
            n + a % m
        } else if a < real + n {
            root
        } else {
            n + (a - real - n)
        }
    };
    let arc_cost = |a: usize| -> f64 {
        if a < real {
            cost[a]
        } else {
            art
        }
    };

    let mut flow: BTreeMap<usize, F> = BTreeMap::new();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    for i in 0..n {
        let a = real + i;
        flow.insert(a, supply[i]);
        adj[i].push((root, a));
        adj[root].push((i, a));
    }
    for j in 0..m {
        let a = real + n + j;
        flow.insert(a, demand[j]);
        adj[root].push((n + j, a));
        adj[n + j].push((root, a));
    }

    let mut parent = vec![usize::MAX; nodes];
    let mut pred_arc = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pot = vec![0.0f64; nodes];
    let mut stack: Vec<usize> = Vec::with_capacity(nodes);

    let mut rethread = |adj: &Vec<Vec<(usize, usize)>>,
                        parent: &mut Vec<usize>,
                        pred_arc: &mut Vec<usize>,
                        depth: &mut Vec<usize>,
                        pot: &mut Vec<f64>| {
        parent[root] = root;
        pred_arc[root] = usize::MAX;
        depth[root] = 0;
        pot[root] = 0.0;
        stack.clear();
        stack.push(root);
        while let Some(u) = stack.pop() {
            for &(v, a) in &adj[u] {
                if v == parent[u] && a == pred_arc[u] {
                    continue;
                }
                parent[v] = u;
                pred_arc[v] = a;
                depth[v] = depth[u] + 1;
                // reduced cost c + p_src - p_dst vanishes on tree arcs
                pot[v] = if src(a) == u {
                    pot[u] + arc_cost(a)
                } else {
                    pot[u] - arc_cost(a)
                };
                stack.push(v);
            }
        }
    };
    rethread(&adj, &mut parent, &mut pred_arc, &mut depth, &mut pot);

    let block = (sqrt(real as f64) as usize).max(10).min(real.max(1));
    let mut next = 0usize;
    let mut pivots = 0usize;
    let mut in_tree = vec![false; real];

    loop {
        // block pricing over real arcs; artificial arcs never re-enter
        let mut best = usize::MAX;
        let mut best_rc = -eps;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < real {
            let a = next;
            next += 1;
            if next == real {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            if !in_tree[a] {
                let rc = cost[a] + pot[a / m] - pot[n + a % m];
                if rc < best_rc {
                    best_rc = rc;
                    best = a;
                }
            }
            if in_block >= block && best != usize::MAX {
                break;
            }
            if in_block >= block {
                in_block = 0;
            }
        }
        if best == usize::MAX {
            break;
        }
        if pivots >= max_pivots {
            return Err(Error::NotConverged {
                iterations: pivots,
                residual: -best_rc,
            });
        }
        pivots += 1;

        let u = best / m;
        let v = n + best % m;
        // apex of the cycle
        let (mut a, mut b) = (u, v);
        while a != b {
            if depth[a] >= depth[b] {
                a = parent[a];
            } else {
                b = parent[b];
            }
        }
        let join = a;

        // flow is pushed along u -> v, then v up to join, then join down to u
        let mut delta: Option<F> = None;
        let consider =
            |arc: usize, decreasing: bool, flow: &BTreeMap<usize, F>, delta: &mut Option<F>| {
                if decreasing {
                    let f = flow[&arc];
                    if delta.is_none_or(|d| f < d) {
                        *delta = Some(f);
                    }
                }
            };
        let mut x = v;
        while x != join {
            let arc = pred_arc[x];
            consider(arc, dst(arc) == x, &flow, &mut delta);
            x = parent[x];
        }
        let mut x = u;
        while x != join {
            let arc = pred_arc[x];
            consider(arc, src(arc) == x, &flow, &mut delta);
            x = parent[x];
        }
        let Some(delta) = delta else {
            return Err(Error::InvalidInput(alloc::string::String::from(
                "unbounded transportation cycle",
            )));
        };

        // Cunningham: last blocking arc in cycle order starting at the apex
        let mut leaving = usize::MAX;
        let mut x = v;
        while x != join {
            let arc = pred_arc[x];
            if dst(arc) == x && !(flow[&arc] > delta) {
                leaving = arc;
            }
            x = parent[x];
        }
        if leaving == usize::MAX {
            let mut x = u;
            while x != join {
                let arc = pred_arc[x];
                if src(arc) == x && !(flow[&arc] > delta) {
                    leaving = arc;
                    break;
                }
                x = parent[x];
            }
        }
        debug_assert!(leaving != usize::MAX);

        let mut x = v;
        while x != join {
            let arc = pred_arc[x];
            let f = flow[&arc];
            flow.insert(arc, if dst(arc) == x { f - delta } else { f + delta });
            x = parent[x];
        }
        let mut x = u;
        while x != join {
            let arc = pred_arc[x];
            let f = flow[&arc];
            flow.insert(arc, if src(arc) == x { f - delta } else { f + delta });
            x = parent[x];
        }
        flow.insert(best, delta);
        flow.remove(&leaving);

        let (ls, ld) = (src(leaving), dst(leaving));
        adj[ls].retain(|&(w, arc)| !(w == ld && arc == leaving));
        adj[ld].retain(|&(w, arc)| !(w == ls && arc == leaving));
        adj[u].push((v, best));
        adj[v].push((u, best));
        if leaving < real {
            in_tree[leaving] = false;
        }
        in_tree[best] = true;
        rethread(&adj, &mut parent, &mut pred_arc, &mut depth, &mut pot);
    }

    let mut flows = Vec::new();
    for (&a, &f) in &flow {
        if a < real && f > F::zero() {
            flows.push((a / m, a % m, f));
        }
    }
    let alpha = (0..n).map(|i| -pot[i]).collect();
    let beta = (0..m).map(|j| pot[n + j]).collect();
    Ok(SimplexSolution {
        flows,
        alpha,
        beta,
        pivots,
    })
}
