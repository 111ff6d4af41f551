//! Exhaustive split search over presorted feature columns.

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::loss::leaf_weight;
use super::tree::{admissible_gain, midpoint, pick_best, Node, SplitChoice, Tree};
use super::Hyperparams;

/// Row ids of every feature sorted by value (ties by row id), followed by one list in
/// plain row order.
pub(crate) fn presort(x: ArrayView2<'_, f64>) -> Vec<Vec<u32>> {
    let mut lists: Vec<Vec<u32>> = (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let col = x.column(f);
            let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    lists.push((0..x.nrows() as u32).collect());
    lists
}

pub(crate) struct ExactGrower<'a> {
    pub x: ArrayView2<'a, f64>,
    pub g: &'a [f64],
    pub h: &'a [f64],
    pub hp: &'a Hyperparams,
    pub scale: f64,
}

impl ExactGrower<'_> {
    pub fn grow(&self, sorted: Vec<Vec<u32>>) -> Tree {
        let mut goes_left = vec![false; self.x.nrows()];
        Tree {
            root: self.node(sorted, 0, &mut goes_left),
        }
    }

    fn node(&self, sorted: Vec<Vec<u32>>, depth: usize, goes_left: &mut [bool]) -> Node {
        // Sums run in row order, per value group, so that they match the histogram learner
        // bit for bit when its bins are exact.
        let rows = sorted.last().expect("row-order list");
        let (g_sum, h_sum) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.g[r as usize], h + self.h[r as usize])
        });
        let leaf = || Node::Leaf {
            value: self.scale * leaf_weight(g_sum, h_sum, self.hp.lambda_l2),
        };
        if depth >= self.hp.max_depth || rows.len() < 2 {
            return leaf();
        }
        let best = pick_best(
            sorted[..sorted.len() - 1]
                .par_iter()
                .enumerate()
                .map(|(f, list)| self.scan(f, list, g_sum, h_sum))
                .collect::<Vec<_>>(),
        );
        let Some(split) = best else {
            return leaf();
        };

        let col = self.x.column(split.feature);
        for &r in rows {
            goes_left[r as usize] = col[r as usize] < split.threshold;
        }
        let (left, right): (Vec<Vec<u32>>, Vec<Vec<u32>>) = sorted
            .into_iter()
            .map(|list| list.into_iter().partition(|&r| goes_left[r as usize]))
            .unzip();
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left: Box::new(self.node(left, depth + 1, goes_left)),
            right: Box::new(self.node(right, depth + 1, goes_left)),
        }
    }

    fn scan(&self, feature: usize, list: &[u32], g_sum: f64, h_sum: f64) -> Option<SplitChoice> {
        let col = self.x.column(feature);
        let (mut gl, mut hl) = (0.0, 0.0);
        let (mut group_g, mut group_h) = (0.0, 0.0);
        let mut best: Option<SplitChoice> = None;
        for i in 0..list.len() - 1 {
            let r = list[i] as usize;
            group_g += self.g[r];
            group_h += self.h[r];
            let (a, b) = (col[r], col[list[i + 1] as usize]);
            if a == b {
                continue;
            }
            gl += group_g;
            hl += group_h;
            (group_g, group_h) = (0.0, 0.0);
            if let Some(gain) = admissible_gain(gl, hl, g_sum, h_sum, self.hp) {
                if best.is_none_or(|s| gain > s.gain) {
                    best = Some(SplitChoice {
                        feature,
                        threshold: midpoint(a, b),
                        gain,
                        cut: i,
                    });
                }
            }
        }
        best
    }
}
