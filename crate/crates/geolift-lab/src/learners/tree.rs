//! Depth-bounded regression trees with exact greedy split search, used as
//! the stage learner inside gradient boosting.
//!
//! Split search runs level-wise over presorted per-feature row orders, so
//! one pass per feature scores every active node at once. Binary 0/1
//! features (e.g. one-hot dummies) use a sparse path that visits only their
//! nonzero rows. Leaf values are Newton steps `-G / (max(H, 1) + l2)`; the
//! hessian floor keeps logistic-loss leaves bounded when predicted
//! probabilities saturate.

use nalgebra::DMatrix;

/// Row sentinel: excluded from the current tree (or already in a final leaf).
const INACTIVE: u32 = u32::MAX;
/// Minimum gain for a split to beat a leaf.
const EPS_GAIN: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Node {
    /// Split feature, or -1 for a leaf.
    feature: i32,
    /// Rows with `x <= threshold` go left.
    threshold: f64,
    left: u32,
    right: u32,
    /// Leaf value (already shrunk by the learning rate).
    value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub(crate) fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        // Column-major layout: entry (row, col) lives at col * nrows + row.
        let xs = x.as_slice();
        let n_rows = x.nrows();
        let mut id = 0usize;
        loop {
            let node = &self.nodes[id];
            if node.feature < 0 {
                return node.value;
            }
            id = if xs[node.feature as usize * n_rows + row] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }
}

/// Per-feature iteration order, fixed once per training matrix.
pub(crate) enum FeatureOrder {
    /// Row ids sorted by feature value (stable in row id on ties).
    Sorted(Vec<u32>),
    /// A 0/1 feature: only its nonzero row ids.
    Binary(Vec<u32>),
}

pub(crate) fn index_features(x: &DMatrix<f64>) -> Vec<FeatureOrder> {
    let n = x.nrows();
    (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            if col.iter().all(|&v| v == 0.0 || v == 1.0) {
                FeatureOrder::Binary(
                    (0..n).filter(|&r| col[r] == 1.0).map(|r| r as u32).collect(),
                )
            } else {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| {
                    col[a as usize]
                        .partial_cmp(&col[b as usize])
                        .expect("non-finite feature")
                        .then(a.cmp(&b))
                });
                FeatureOrder::Sorted(order)
            }
        })
        .collect()
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub l2_leaf: f64,
    pub learning_rate: f64,
}

/// Newton objective reduction of a node, with the saturation floor.
fn score(g: f64, h: f64, l2: f64) -> f64 {
    g * g / (h.max(1.0) + l2)
}

fn leaf_value(g: f64, h: f64, params: &TreeParams) -> f64 {
    params.learning_rate * (-g / (h.max(1.0) + params.l2_leaf))
}

struct Candidate {
    gain: f64,
    feature: u32,
    threshold: f64,
}

/// Grows one tree on the rows whose `node_of_row` entry is 0 (all other
/// entries must be `INACTIVE`). `node_of_row` is consumed as scratch.
/// Each routed row's leaf value is recorded in `train_pred` as it
/// finalizes, so training predictions need no second traversal; rows that
/// start `INACTIVE` are left untouched there.
pub(crate) fn build_tree(
    x: &DMatrix<f64>,
    orders: &[FeatureOrder],
    grad: &[f64],
    hess: &[f64],
    node_of_row: &mut [u32],
    train_pred: &mut [f64],
    params: &TreeParams,
) -> Tree {
    let n_rows = x.nrows();
    let mut nodes = vec![Node { feature: -1, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
    let mut active: Vec<u32> = vec![0];

    for _level in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let n_active = active.len();
        let mut slot_of_node = vec![INACTIVE; nodes.len()];
        for (slot, &id) in active.iter().enumerate() {
            slot_of_node[id as usize] = slot as u32;
        }

        // Node totals.
        let mut tot_g = vec![0.0; n_active];
        let mut tot_h = vec![0.0; n_active];
        let mut tot_c = vec![0usize; n_active];
        for r in 0..n_rows {
            let id = node_of_row[r];
            if id == INACTIVE {
                continue;
            }
            let slot = slot_of_node[id as usize] as usize;
            tot_g[slot] += grad[r];
            tot_h[slot] += hess[r];
            tot_c[slot] += 1;
        }

        let mut best: Vec<Option<Candidate>> = (0..n_active).map(|_| None).collect();
        fn consider(best: &mut [Option<Candidate>], slot: usize, gain: f64, feature: u32, threshold: f64) {
            if gain > EPS_GAIN && best[slot].as_ref().map_or(true, |b| gain > b.gain) {
                best[slot] = Some(Candidate { gain, feature, threshold });
            }
        }

        for (j, order) in orders.iter().enumerate() {
            match order {
                FeatureOrder::Binary(nonzero) => {
                    let mut one_g = vec![0.0; n_active];
                    let mut one_h = vec![0.0; n_active];
                    let mut one_c = vec![0usize; n_active];
                    for &r in nonzero {
                        let id = node_of_row[r as usize];
                        if id == INACTIVE {
                            continue;
                        }
                        let slot = slot_of_node[id as usize] as usize;
                        one_g[slot] += grad[r as usize];
                        one_h[slot] += hess[r as usize];
                        one_c[slot] += 1;
                    }
                    for slot in 0..n_active {
                        let c1 = one_c[slot];
                        let c0 = tot_c[slot] - c1;
                        if c0 < params.min_leaf || c1 < params.min_leaf {
                            continue;
                        }
                        let gain = score(tot_g[slot] - one_g[slot], tot_h[slot] - one_h[slot], params.l2_leaf)
                            + score(one_g[slot], one_h[slot], params.l2_leaf)
                            - score(tot_g[slot], tot_h[slot], params.l2_leaf);
                        consider(&mut best, slot, gain, j as u32, 0.5);
                    }
                }
                FeatureOrder::Sorted(order) => {
                    let col = &x.as_slice()[j * n_rows..(j + 1) * n_rows];
                    let mut run_g = vec![0.0; n_active];
                    let mut run_h = vec![0.0; n_active];
                    let mut run_c = vec![0usize; n_active];
                    let mut last = vec![f64::NAN; n_active];
                    for &r in order {
                        let id = node_of_row[r as usize];
                        if id == INACTIVE {
                            continue;
                        }
                        let slot = slot_of_node[id as usize] as usize;
                        let v = col[r as usize];
                        if run_c[slot] > 0 && v > last[slot] {
                            let c_left = run_c[slot];
                            let c_right = tot_c[slot] - c_left;
                            if c_left >= params.min_leaf && c_right >= params.min_leaf {
                                let gain = score(run_g[slot], run_h[slot], params.l2_leaf)
                                    + score(
                                        tot_g[slot] - run_g[slot],
                                        tot_h[slot] - run_h[slot],
                                        params.l2_leaf,
                                    )
                                    - score(tot_g[slot], tot_h[slot], params.l2_leaf);
                                let mut threshold = 0.5 * (last[slot] + v);
                                if threshold >= v {
                                    threshold = last[slot];
                                }
                                consider(&mut best, slot, gain, j as u32, threshold);
                            }
                        }
                        run_g[slot] += grad[r as usize];
                        run_h[slot] += hess[r as usize];
                        run_c[slot] += 1;
                        last[slot] = v;
                    }
                }
            }
        }

        // Apply the winning split of each node, or finalize it as a leaf.
        let mut next_active = Vec::with_capacity(2 * n_active);
        let mut split_info: Vec<Option<(u32, f64, u32, u32)>> = (0..n_active).map(|_| None).collect();
        for (slot, &id) in active.iter().enumerate() {
            match best[slot].take() {
                Some(c) => {
                    let left = nodes.len() as u32;
                    let right = left + 1;
                    nodes.push(Node { feature: -1, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                    nodes.push(Node { feature: -1, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                    let node = &mut nodes[id as usize];
                    node.feature = c.feature as i32;
                    node.threshold = c.threshold;
                    node.left = left;
                    node.right = right;
                    split_info[slot] = Some((c.feature, c.threshold, left, right));
                    next_active.push(left);
                    next_active.push(right);
                }
                None => {
                    nodes[id as usize].value = leaf_value(tot_g[slot], tot_h[slot], params);
                }
            }
        }

        // Route rows into children; rows of finalized leaves retire.
        let xs = x.as_slice();
        for r in 0..n_rows {
            let id = node_of_row[r];
            if id == INACTIVE {
                continue;
            }
            let slot = slot_of_node[id as usize] as usize;
            node_of_row[r] = match split_info[slot] {
                Some((feature, threshold, left, right)) => {
                    if xs[feature as usize * n_rows + r] <= threshold {
                        left
                    } else {
                        right
                    }
                }
                None => {
                    train_pred[r] = nodes[id as usize].value;
                    INACTIVE
                }
            };
        }
        active = next_active;
    }

    // Depth cap: finalize whatever is still open.
    if !active.is_empty() {
        let mut slot_of_node = vec![INACTIVE; nodes.len()];
        for (slot, &id) in active.iter().enumerate() {
            slot_of_node[id as usize] = slot as u32;
        }
        let mut tot_g = vec![0.0; active.len()];
        let mut tot_h = vec![0.0; active.len()];
        for r in 0..n_rows {
            let id = node_of_row[r];
            if id == INACTIVE {
                continue;
            }
            let slot = slot_of_node[id as usize] as usize;
            tot_g[slot] += grad[r];
            tot_h[slot] += hess[r];
        }
        for (slot, &id) in active.iter().enumerate() {
            nodes[id as usize].value = leaf_value(tot_g[slot], tot_h[slot], params);
        }
        for r in 0..n_rows {
            let id = node_of_row[r];
            if id != INACTIVE {
                train_pred[r] = nodes[id as usize].value;
                node_of_row[r] = INACTIVE;
            }
        }
    }

    Tree { nodes }
}
