//! Histogram split search over binned, bundled columns.

use rayon::prelude::*;

use super::bins::BinMapper;
use super::efb::BundleMap;
use super::loss::leaf_weight;
use super::tree::{admissible_gain, pick_best, Node, SplitChoice, Tree};
use super::Hyperparams;

#[derive(Clone, Copy, Default)]
struct Cell {
    g: f64,
    h: f64,
    n: u32,
}

pub(crate) struct HistogramGrower<'a> {
    pub mappers: &'a [BinMapper],
    pub bundles: &'a BundleMap,
    /// `encoded[bundle][row]`.
    pub encoded: &'a [Vec<u32>],
    pub g: &'a [f64],
    pub h: &'a [f64],
    pub hp: &'a Hyperparams,
    pub scale: f64,
}

impl HistogramGrower<'_> {
    /// Grows a tree over `rows` (ascending row ids).
    pub fn grow(&self, rows: Vec<u32>) -> Tree {
        Tree {
            root: self.node(rows, 0),
        }
    }

    fn node(&self, rows: Vec<u32>, depth: usize) -> Node {
        let (g_sum, h_sum) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.g[r as usize], h + self.h[r as usize])
        });
        let leaf = || Node::Leaf {
            value: self.scale * leaf_weight(g_sum, h_sum, self.hp.lambda_l2),
        };
        if depth >= self.hp.max_depth || rows.len() < 2 {
            return leaf();
        }
        let candidates: Vec<Option<SplitChoice>> = self
            .bundles
            .bundles
            .par_iter()
            .enumerate()
            .flat_map_iter(|(bi, bundle)| {
                let hist = self.bundle_histogram(bi, bundle.n_bins as usize, &rows);
                (0..bundle.features.len())
                    .map(|k| self.scan_member(bi, k, &hist, g_sum, h_sum))
                    .collect::<Vec<_>>()
            })
            .collect();
        let Some(split) = pick_best(candidates) else {
            return leaf();
        };

        let (bi, k, last_left) = self.locate(&split);
        let bundle = &self.bundles.bundles[bi];
        let col = &self.encoded[bi];
        let (left, right): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| self.bundles.decode(bundle, k, col[r as usize]) as usize <= last_left);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left: Box::new(self.node(left, depth + 1)),
            right: Box::new(self.node(right, depth + 1)),
        }
    }

    fn bundle_histogram(&self, bi: usize, n_bins: usize, rows: &[u32]) -> Vec<Cell> {
        let col = &self.encoded[bi];
        let mut hist = vec![Cell::default(); n_bins];
        for &r in rows {
            let c = &mut hist[col[r as usize] as usize];
            c.g += self.g[r as usize];
            c.h += self.h[r as usize];
            c.n += 1;
        }
        hist
    }

    /// Per-bin sums of member `k`, rebuilding its default bin by subtraction.
    fn member_histogram(&self, bi: usize, k: usize, hist: &[Cell]) -> Vec<Cell> {
        let bundle = &self.bundles.bundles[bi];
        if bundle.features.len() == 1 {
            return hist.to_vec();
        }
        let f = bundle.features[k];
        let nb = self.bundles.feature_bins[f] as usize;
        let default = self.bundles.default_bins[f] as usize;
        let off = bundle.offsets[k] as usize;
        let total = hist.iter().fold(Cell::default(), |a, c| Cell {
            g: a.g + c.g,
            h: a.h + c.h,
            n: a.n + c.n,
        });
        let mut out = vec![Cell::default(); nb];
        let mut rest = total;
        for (b, cell) in out.iter_mut().enumerate() {
            if b != default {
                *cell = hist[off + b];
                rest.g -= cell.g;
                rest.h -= cell.h;
                rest.n -= cell.n;
            }
        }
        out[default] = rest;
        out
    }

    fn scan_member(&self, bi: usize, k: usize, hist: &[Cell], g_sum: f64, h_sum: f64) -> Option<SplitChoice> {
        let feature = self.bundles.bundles[bi].features[k];
        let cells = self.member_histogram(bi, k, hist);
        let mapper = &self.mappers[feature];
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut last_nonempty: Option<usize> = None;
        let mut best: Option<SplitChoice> = None;
        for (b, cell) in cells.iter().enumerate() {
            if cell.n == 0 {
                continue;
            }
            if let Some(left) = last_nonempty {
                if let Some(gain) = admissible_gain(gl, hl, g_sum, h_sum, self.hp) {
                    if best.is_none_or(|s| gain > s.gain) {
                        best = Some(SplitChoice {
                            feature,
                            threshold: mapper.threshold_between(left, b),
                            gain,
                            cut: left,
                        });
                    }
                }
            }
            gl += cell.g;
            hl += cell.h;
            last_nonempty = Some(b);
        }
        best
    }

    fn locate(&self, split: &SplitChoice) -> (usize, usize, usize) {
        for (bi, b) in self.bundles.bundles.iter().enumerate() {
            if let Some(k) = b.features.iter().position(|&f| f == split.feature) {
                return (bi, k, split.cut);
            }
        }
        unreachable!("split feature belongs to a bundle")
    }
}
