use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::loss::split_gain;
use super::Hyperparams;

/// A regression tree node. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// One boosted tree; leaf values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub root: Node,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            root: Node::Leaf { value },
        }
    }

    #[inline]
    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    /// Number of nodes touched while scoring `row`.
    pub fn path_length(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut node = &self.root;
        let mut visits = 1;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = node
        {
            node = if row[*feature] < *threshold { left } else { right };
            visits += 1;
        }
        visits
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn n_nodes(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => 1 + go(left) + go(right),
            }
        }
        go(&self.root)
    }

    pub fn leaves(&self) -> Vec<f64> {
        fn go(n: &Node, out: &mut Vec<f64>) {
            match n {
                Node::Leaf { value } => out.push(*value),
                Node::Split { left, right, .. } => {
                    go(left, out);
                    go(right, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }

    /// Gains of every split node, in pre-order.
    pub fn split_gains(&self) -> Vec<f64> {
        fn go(n: &Node, out: &mut Vec<f64>) {
            if let Node::Split { gain, left, right, .. } = n {
                out.push(*gain);
                go(left, out);
                go(right, out);
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }
}

/// A threshold strictly above `a` and at most `b`, for `a < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    /// Position in the learner's candidate ordering (sorted row or bin).
    pub cut: usize,
}

impl SplitChoice {
    /// Higher gain wins; ties go to the lower feature, then the lower cut.
    pub fn better_than(&self, other: &SplitChoice) -> bool {
        self.gain > other.gain || (self.gain == other.gain && (self.feature, self.cut) < (other.feature, other.cut))
    }
}

pub(crate) fn pick_best(candidates: impl IntoIterator<Item = Option<SplitChoice>>) -> Option<SplitChoice> {
    candidates
        .into_iter()
        .flatten()
        .fold(None, |best: Option<SplitChoice>, c| match best {
            Some(b) if !c.better_than(&b) => Some(b),
            _ => Some(c),
        })
}

/// Scores one candidate; `None` unless the gain is positive and both children carry
/// enough hessian.
#[inline]
pub(crate) fn admissible_gain(gl: f64, hl: f64, g: f64, h: f64, hp: &Hyperparams) -> Option<f64> {
    let (gr, hr) = (g - gl, h - hl);
    if hl < hp.min_child_hessian || hr < hp.min_child_hessian {
        return None;
    }
    let gain = split_gain(gl, hl, gr, hr, hp.lambda_l2, hp.gamma);
    (gain > 0.0).then_some(gain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stump(threshold: f64) -> Tree {
        Tree {
            root: Node::Split {
                feature: 1,
                threshold,
                gain: 1.0,
                left: Box::new(Node::Leaf { value: -1.0 }),
                right: Box::new(Node::Leaf { value: 2.0 }),
            },
        }
    }

    #[test]
    fn routing_is_strictly_less_than() {
        let t = stump(0.5);
        assert_eq!(t.predict(array![9.0, 0.4].view()), -1.0);
        assert_eq!(t.predict(array![9.0, 0.5].view()), 2.0);
        assert_eq!(t.path_length(array![0.0, 0.0].view()), 2);
        assert_eq!((t.depth(), t.n_nodes()), (1, 3));
    }

    #[test]
    fn midpoint_separates_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a < m && m <= b);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    #[test]
    fn serializes_as_nested_nodes() {
        let json = serde_json::to_string(&stump(0.25)).unwrap();
        assert!(json.starts_with(r#"{"type":"split","feature":1"#));
        let back: Tree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stump(0.25));
    }
}
