//! Branch and bound over the simplex LP relaxation.
//!
//! Branching picks the most-fractional binary; node selection is
//! best-bound once an incumbent exists (depth-first diving until the first
//! incumbent is found, so budgeted solves still return a usable plan).
//! A rounding pass on the relaxation supplies early incumbents.

use std::collections::BinaryHeap;
use std::time::Instant;

use crate::error::MilpError;
use crate::milp::model::{relative_gap, MilpModel, SolveOptions, SolveResult, SolveStatus, Sense, VarType};
use crate::milp::simplex::{solve_lp, LpStatus};

const INT_TOL: f64 = 1e-6;

struct Node {
    /// Parent LP bound, in maximization terms.
    bound: f64,
    depth: usize,
    id: usize,
    bounds: Vec<(f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap on bound; deterministic tie-break on newest id
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.id.cmp(&other.id))
    }
}

pub fn solve(model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, MilpError> {
    model.validate()?;
    let start = Instant::now();
    let flip = if model.sense == Sense::Minimize { -1.0 } else { 1.0 };

    let binaries: Vec<usize> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarType::Binary)
        .map(|(i, _)| i)
        .collect();

    let root_bounds: Vec<(f64, f64)> = model.vars.iter().map(|v| (v.lower, v.upper)).collect();

    let mut incumbent: Option<(Vec<f64>, f64)> = None; // (values, max-sense objective)
    let mut nodes_explored = 0usize;
    let mut next_id = 0usize;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    // dive stack used until the first incumbent appears
    let mut stack: Vec<Node> = Vec::new();

    heap.push(Node { bound: f64::INFINITY, depth: 0, id: next_id, bounds: root_bounds });
    next_id += 1;

    let mut budget_hit = false;
    let mut root_unbounded = false;
    let mut root_infeasible = false;
    let mut pruned_bound = f64::NEG_INFINITY;

    loop {
        if let Some(limit) = options.time_limit {
            if start.elapsed() >= limit {
                budget_hit = true;
                break;
            }
        }
        if let Some(limit) = options.node_limit {
            if nodes_explored >= limit {
                budget_hit = true;
                break;
            }
        }
        // best-bound pruning against the incumbent
        if let Some((_, inc)) = &incumbent {
            let cutoff = *inc + 1e-9 * (1.0 + inc.abs());
            stack.retain(|n| n.bound > cutoff);
            while let Some(top) = heap.peek() {
                if top.bound <= cutoff {
                    pruned_bound = pruned_bound.max(top.bound.min(*inc));
                    heap.pop();
                } else {
                    break;
                }
            }
        }
        let node = if incumbent.is_none() {
            stack.pop().or_else(|| heap.pop())
        } else {
            // flush the dive stack into the heap once an incumbent exists
            while let Some(n) = stack.pop() {
                heap.push(n);
            }
            heap.pop()
        };
        let Some(node) = node else { break };
        nodes_explored += 1;

        let lp = solve_lp(model, Some(&node.bounds))?;
        match lp.status {
            LpStatus::Infeasible => {
                if node.depth == 0 {
                    root_infeasible = true;
                }
                continue;
            }
            LpStatus::Unbounded => {
                if node.depth == 0 && binaries.is_empty() {
                    root_unbounded = true;
                    break;
                }
                if node.depth == 0 {
                    // relaxation unbounded: no useful bound; report as unbounded
                    root_unbounded = true;
                    break;
                }
                continue;
            }
            LpStatus::Optimal => {}
        }
        let node_bound = flip * lp.objective;
        if let Some((_, inc)) = &incumbent {
            if node_bound <= *inc + 1e-9 * (1.0 + inc.abs()) {
                pruned_bound = pruned_bound.max(node_bound.min(*inc));
                continue;
            }
        }

        // most-fractional binary
        let mut branch_var = None;
        let mut best_frac = INT_TOL;
        for &b in &binaries {
            let v = lp.values[b];
            let frac = (v - v.round()).abs();
            if frac > best_frac {
                best_frac = frac;
                branch_var = Some(b);
            }
        }

        match branch_var {
            None => {
                // integral: candidate incumbent
                let obj = node_bound;
                let better = incumbent.as_ref().map_or(true, |(_, inc)| obj > *inc);
                if better {
                    incumbent = Some((snap_integrals(&lp.values, &binaries), obj));
                }
            }
            Some(b) => {
                // rounding probe: fix every binary to its rounded relaxation
                // value and re-solve; any integral feasible point becomes an
                // incumbent candidate
                if incumbent.is_none() && node.depth % 8 == 0 {
                    let mut probe = node.bounds.clone();
                    for &bb in &binaries {
                        let r = lp.values[bb].round().clamp(0.0, 1.0);
                        probe[bb] = (r, r);
                    }
                    if let Ok(p) = solve_lp(model, Some(&probe)) {
                        if p.status == LpStatus::Optimal {
                            let obj = flip * p.objective;
                            let better = incumbent.as_ref().map_or(true, |(_, inc)| obj > *inc);
                            if better {
                                incumbent = Some((snap_integrals(&p.values, &binaries), obj));
                            }
                        }
                    }
                }
                let frac = lp.values[b] - lp.values[b].floor();
                // explore the nearer side first when diving
                let (first, second) = if frac >= 0.5 { (1.0, 0.0) } else { (0.0, 1.0) };
                for &fix in &[second, first] {
                    let mut bounds = node.bounds.clone();
                    bounds[b] = (fix, fix);
                    let child = Node { bound: node_bound, depth: node.depth + 1, id: next_id, bounds };
                    next_id += 1;
                    if incumbent.is_none() {
                        stack.push(child);
                    } else {
                        heap.push(child);
                    }
                }
            }
        }

        // gap-based early termination
        if let Some((_, inc)) = &incumbent {
            let open = open_bound(&heap, &stack);
            let bound = open.max(*inc);
            if relative_gap(bound, *inc) <= options.rel_gap_target {
                // drain remaining nodes: the bound is already proven
                heap.clear();
                stack.clear();
                break;
            }
        }
    }

    let wall_time = start.elapsed();
    if root_unbounded {
        return Ok(SolveResult {
            status: SolveStatus::Unbounded,
            solution: None,
            objective: None,
            bound: flip * f64::INFINITY,
            gap: None,
            nodes: nodes_explored,
            wall_time,
        });
    }

    let open = open_bound(&heap, &stack);
    match incumbent {
        Some((values, obj)) => {
            let bound = if budget_hit || !heap.is_empty() || !stack.is_empty() {
                open.max(obj).max(pruned_bound)
            } else {
                obj.max(pruned_bound.min(obj)) // proven optimal: bound equals incumbent
            };
            let bound = if heap.is_empty() && stack.is_empty() && !budget_hit { obj } else { bound };
            let gap = relative_gap(bound, obj);
            let status = if gap <= 1e-6 {
                SolveStatus::Optimal
            } else if gap <= options.rel_gap_target {
                SolveStatus::GapReached
            } else {
                SolveStatus::TimeLimit
            };
            Ok(SolveResult {
                status,
                solution: Some(values),
                objective: Some(flip * obj),
                bound: flip * bound,
                gap: Some(gap),
                nodes: nodes_explored,
                wall_time,
            })
        }
        None => {
            if budget_hit {
                Ok(SolveResult {
                    status: SolveStatus::TimeLimit,
                    solution: None,
                    objective: None,
                    bound: flip * open,
                    gap: None,
                    nodes: nodes_explored,
                    wall_time,
                })
            } else {
                debug_assert!(root_infeasible || nodes_explored > 0);
                Ok(SolveResult {
                    status: SolveStatus::Infeasible,
                    solution: None,
                    objective: None,
                    bound: flip * f64::NEG_INFINITY,
                    gap: None,
                    nodes: nodes_explored,
                    wall_time,
                })
            }
        }
    }
}

fn open_bound(heap: &BinaryHeap<Node>, stack: &[Node]) -> f64 {
    let h = heap.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
    let s = stack.iter().fold(f64::NEG_INFINITY, |acc, n| acc.max(n.bound));
    h.max(s)
}

fn snap_integrals(values: &[f64], binaries: &[usize]) -> Vec<f64> {
    let mut v = values.to_vec();
    for &b in binaries {
        v[b] = v[b].round();
    }
    v
}
