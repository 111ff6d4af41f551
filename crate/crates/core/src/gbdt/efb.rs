use serde::{Deserialize, Serialize};

use super::bins::BinMapper;

/// Features sharing one synthetic binned column.
///
/// A single-feature bundle stores the feature's bins unchanged. Otherwise bin 0 means
/// every member sits in its default (zero) bin and member `k` owns the range
/// `offsets[k] .. offsets[k] + n_bins_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub features: Vec<usize>,
    pub offsets: Vec<u32>,
    pub n_bins: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMap {
    pub bundles: Vec<Bundle>,
    pub conflict_max: usize,
    /// Default bin of every original feature.
    pub default_bins: Vec<u32>,
    /// Bin count of every original feature.
    pub feature_bins: Vec<u32>,
}

/// Greedy bundling over binned columns (`bins[f][row]`). Features are visited by
/// descending non-default count; each joins the first bundle whose conflict total
/// stays within `conflict_max`.
pub fn efb_bundle(bins: &[Vec<u32>], mappers: &[BinMapper], conflict_max: usize) -> BundleMap {
    let d = bins.len();
    let n = bins.first().map_or(0, Vec::len);
    let default_bins: Vec<u32> = mappers.iter().map(BinMapper::default_bin).collect();
    let feature_bins: Vec<u32> = mappers.iter().map(|m| m.n_bins() as u32).collect();
    let active: Vec<Vec<bool>> = (0..d)
        .map(|f| bins[f].iter().map(|&b| b != default_bins[f]).collect())
        .collect();
    let nonzero: Vec<usize> = active.iter().map(|a| a.iter().filter(|&&x| x).count()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| nonzero[b].cmp(&nonzero[a]).then(a.cmp(&b)));

    struct Open {
        features: Vec<usize>,
        used: Vec<bool>,
        conflicts: usize,
    }
    let mut open: Vec<Open> = Vec::new();
    for f in order {
        let mut placed = false;
        for b in open.iter_mut() {
            let added = (0..n).filter(|&r| active[f][r] && b.used[r]).count();
            if b.conflicts + added <= conflict_max {
                b.conflicts += added;
                b.features.push(f);
                for r in 0..n {
                    b.used[r] |= active[f][r];
                }
                placed = true;
                break;
            }
        }
        if !placed {
            open.push(Open {
                features: vec![f],
                used: active[f].clone(),
                conflicts: 0,
            });
        }
    }

    let bundles = open
        .into_iter()
        .map(|o| {
            if o.features.len() == 1 {
                return Bundle {
                    n_bins: feature_bins[o.features[0]],
                    offsets: vec![0],
                    features: o.features,
                };
            }
            let mut offsets = Vec::with_capacity(o.features.len());
            let mut next = 1u32;
            for &f in &o.features {
                offsets.push(next);
                next += feature_bins[f];
            }
            Bundle {
                features: o.features,
                offsets,
                n_bins: next,
            }
        })
        .collect();
    BundleMap {
        bundles,
        conflict_max,
        default_bins,
        feature_bins,
    }
}

impl BundleMap {
    /// Binned bundle columns (`out[bundle][row]`). On conflicting rows the member
    /// listed last wins.
    pub fn encode(&self, bins: &[Vec<u32>]) -> Vec<Vec<u32>> {
        let n = bins.first().map_or(0, Vec::len);
        self.bundles
            .iter()
            .map(|b| {
                if b.features.len() == 1 {
                    return bins[b.features[0]].clone();
                }
                let mut col = vec![0u32; n];
                for (&f, &off) in b.features.iter().zip(&b.offsets) {
                    let d = self.default_bins[f];
                    for (c, &v) in col.iter_mut().zip(&bins[f]) {
                        if v != d {
                            *c = off + v;
                        }
                    }
                }
                col
            })
            .collect()
    }

    /// Bin of member `k` of `bundle` given the bundle's value.
    #[inline]
    pub fn decode(&self, bundle: &Bundle, k: usize, value: u32) -> u32 {
        if bundle.features.len() == 1 {
            return value;
        }
        let f = bundle.features[k];
        let off = bundle.offsets[k];
        if value >= off && value < off + self.feature_bins[f] {
            value - off
        } else {
            self.default_bins[f]
        }
    }

    /// Per-feature binned columns recovered from `encode`'s output.
    pub fn decode_all(&self, encoded: &[Vec<u32>]) -> Vec<Vec<u32>> {
        let d = self.default_bins.len();
        let mut out = vec![Vec::new(); d];
        for (b, col) in self.bundles.iter().zip(encoded) {
            for (k, &f) in b.features.iter().enumerate() {
                out[f] = col.iter().map(|&v| self.decode(b, k, v)).collect();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn binned(x: &Array2<f64>, max_bins: usize) -> (Vec<Vec<u32>>, Vec<BinMapper>) {
        let mappers: Vec<BinMapper> = (0..x.ncols()).map(|j| BinMapper::fit(x.column(j), max_bins)).collect();
        let bins = (0..x.ncols())
            .map(|j| x.column(j).iter().map(|&v| mappers[j].bin(v)).collect())
            .collect();
        (bins, mappers)
    }

    #[test]
    fn exclusive_features_share_a_bundle() {
        let x = Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let (bins, mappers) = binned(&x, 16);
        let map = efb_bundle(&bins, &mappers, 0);
        assert_eq!(map.bundles.len(), 1);
        assert_eq!(map.bundles[0].features.len(), 2);
    }

    #[test]
    fn dense_features_stay_apart() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i + j + 1) as f64);
        let (bins, mappers) = binned(&x, 16);
        let map = efb_bundle(&bins, &mappers, 0);
        assert_eq!(map.bundles.len(), 2);
        let relaxed = efb_bundle(&bins, &mappers, 100);
        assert_eq!(relaxed.bundles.len(), 1);
    }

    #[test]
    fn bundling_round_trips_exactly() {
        // Block-sparse columns: feature j is non-zero only on rows with i % 4 == j.
        let x = Array2::from_shape_fn(
            (40, 4),
            |(i, j)| if i % 4 == j { (i / 4 + 1) as f64 * 0.5 } else { 0.0 },
        );
        let (bins, mappers) = binned(&x, 64);
        let map = efb_bundle(&bins, &mappers, 0);
        assert_eq!(map.bundles.len(), 1);
        let encoded = map.encode(&bins);
        let decoded = map.decode_all(&encoded);
        assert_eq!(decoded, bins);
        // Exact binning also recovers the raw values.
        for j in 0..4 {
            let rep = mappers[j].representatives.as_ref().unwrap();
            let back = Array1::from_iter(decoded[j].iter().map(|&b| rep[b as usize]));
            assert_eq!(back, x.column(j));
        }
    }
}
