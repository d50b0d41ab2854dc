//! Classification trees with Gini splits and a probability random forest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngState;

const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::domain("n_trees must be at least 1"));
        }
        if self.min_leaf < 1 {
            return Err(Error::domain("min_leaf must be at least 1"));
        }
        if let Some(m) = self.mtry {
            if m < 1 || m > p {
                return Err(Error::domain(format!("mtry {m} outside 1..={p}")));
            }
        }
        Ok(())
    }
}

/// Nodes live in an arena; children are indices into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Leaf { value, n } => Some((value, n)),
            TreeNode::Split { .. } => None,
        })
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<TreeNode>,
    features: Vec<usize>,
    scratch: Vec<(f64, f64)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut RngState) -> usize {
        let m = rows.len();
        let pos: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: pos / m as f64,
            n: m,
        });
        let pure = pos == 0.0 || pos == m as f64;
        let depth_done = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || m < 2 * self.params.min_leaf || depth_done {
            return id;
        }
        let Some(best) = self.best_split(&rows, pos, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x.get(i, best.feature) <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], pos: f64, rng: &mut RngState) -> Option<BestSplit> {
        let p = self.x.cols();
        // Partial Fisher-Yates for an mtry-sized sample, then scan in
        // ascending feature order so ties go to the lowest index.
        for (k, f) in self.features.iter_mut().enumerate() {
            *f = k;
        }
        for k in 0..self.mtry {
            let j = k + rng.uniform_index(p - k);
            self.features.swap(k, j);
        }
        let mut cand = self.features[..self.mtry].to_vec();
        cand.sort_unstable();

        let m = rows.len() as f64;
        let min_leaf = self.params.min_leaf;
        let parent = gini_sum(pos, m);
        let mut best: Option<BestSplit> = None;
        for &f in &cand {
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let s = &self.scratch;
            let mut left_pos = 0.0;
            for k in 0..s.len() - 1 {
                left_pos += s[k].1;
                if s[k].0 == s[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = s.len() - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let gain = (parent - gini_sum(left_pos, nl as f64) - gini_sum(pos - left_pos, nr as f64)) / m;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: 0.5 * (s[k].0 + s[k + 1].0),
                    });
                }
            }
        }
        best
    }
}

/// Node size times Gini impurity.
fn gini_sum(pos: f64, n: f64) -> f64 {
    let p = pos / n;
    2.0 * n * p * (1.0 - p)
}

/// Grows one tree on all rows of `x` (no resampling).
pub fn build_tree(x: &Matrix, y: &[f64], params: &ForestParams, rng: &mut RngState) -> Result<Tree> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    build_tree_on(x, y, rows, params, rng)
}

fn build_tree_on(x: &Matrix, y: &[f64], rows: Vec<usize>, params: &ForestParams, rng: &mut RngState) -> Result<Tree> {
    if x.rows() < 1 {
        return Err(Error::domain("tree needs at least 1 row"));
    }
    crate::learners::check_response(y, x.rows())?;
    params.validate(x.cols())?;
    let mut b = Builder {
        x,
        y,
        params,
        mtry: params.resolved_mtry(x.cols()),
        nodes: Vec::new(),
        features: vec![0; x.cols()],
        scratch: Vec::with_capacity(rows.len()),
    };
    b.grow(rows, 0, rng);
    Ok(Tree { nodes: b.nodes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

/// Tree `t` uses substream `t` of a stream split off `rng`.
pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &ForestParams, rng: &mut RngState) -> Result<RandomForest> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::domain("random forest needs at least 2 rows"));
    }
    let base = rng.split();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut tr = base.substream(t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| tr.uniform_index(n)).collect()
            } else {
                (0..n).collect()
            };
            build_tree_on(x, y, rows, params, &mut tr)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest {
        trees,
        n_features: x.cols(),
    })
}

pub fn predict_forest(forest: &RandomForest, x_new: &Matrix) -> Result<Vec<f64>> {
    if x_new.cols() != forest.n_features {
        return Err(Error::Dimension {
            expected: forest.n_features,
            got: x_new.cols(),
            context: "forest features",
        });
    }
    let k = forest.trees.len() as f64;
    Ok((0..x_new.rows())
        .map(|i| {
            let row = x_new.row(i);
            forest.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        })
        .collect())
}
