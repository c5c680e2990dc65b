//! Runs declustering, per-site thresholds and block maxima with a missingness rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::DailyPanel;

/// Minimum number of observed days for an empirical threshold.
pub const MIN_THRESHOLD_SAMPLE: usize = 20;

/// Default tolerated fraction of missing days in a block.
pub const DEFAULT_MAX_MISSING_FRAC: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromSimulation,
    #[default]
    FromPanel,
}

/// Block maxima `M[s][t]`; missing blocks are stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMaxima {
    site_ids: Vec<String>,
    block_labels: Vec<i64>,
    values: Vec<f64>,
    pub provenance: Provenance,
}

impl BlockMaxima {
    pub fn empty(site_ids: Vec<String>, block_labels: Vec<i64>) -> Self {
        let len = site_ids.len() * block_labels.len();
        Self {
            site_ids,
            block_labels,
            values: vec![f64::NAN; len],
            provenance: Provenance::FromPanel,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_labels.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn block_labels(&self) -> &[i64] {
        &self.block_labels
    }

    pub fn get(&self, s: usize, t: usize) -> Option<f64> {
        let v = self.values[s * self.block_labels.len() + t];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, s: usize, t: usize, value: Option<f64>) {
        let n = self.block_labels.len();
        self.values[s * n + t] = value.unwrap_or(f64::NAN);
    }

    /// All observed maxima, site-major.
    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !v.is_nan())
    }

    /// Same maxima with blocks reordered (`perm[t]` is the old block index of new block `t`).
    pub fn with_block_order(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(
            self.site_ids.clone(),
            perm.iter().map(|&t| self.block_labels[t]).collect(),
        );
        out.provenance = self.provenance;
        for s in 0..self.n_sites() {
            for (t, &old) in perm.iter().enumerate() {
                out.set(s, t, self.get(s, old));
            }
        }
        out
    }

    /// Same maxima with sites reordered (`perm[i]` is the old index of new site `i`).
    pub fn with_site_order(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(
            perm.iter().map(|&s| self.site_ids[s].clone()).collect(),
            self.block_labels.clone(),
        );
        out.provenance = self.provenance;
        for (i, &old) in perm.iter().enumerate() {
            for t in 0..self.n_blocks() {
                out.set(i, t, self.get(old, t));
            }
        }
        out
    }
}

/// A maximal run of consecutive exceedances; `end` is exclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cluster {
    pub start: usize,
    pub end: usize,
    pub max: f64,
    /// Index of the cluster maximum within the series.
    pub argmax: usize,
}

/// Runs declustering: consecutive values above `u` form one cluster, which ends at the first
/// value not above `u`. Missing days (NaN) also end a cluster.
pub fn runs_decluster(series: &[f64], u: f64) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut current: Option<Cluster> = None;
    for (k, &y) in series.iter().enumerate() {
        if y > u {
            match current.as_mut() {
                Some(c) => {
                    c.end = k + 1;
                    if y > c.max {
                        c.max = y;
                        c.argmax = k;
                    }
                }
                None => {
                    current = Some(Cluster {
                        start: k,
                        end: k + 1,
                        max: y,
                        argmax: k,
                    })
                }
            }
        } else if let Some(c) = current.take() {
            clusters.push(c);
        }
    }
    clusters.extend(current);
    clusters
}

/// Type-1 empirical quantile: the order statistic at rank `ceil(q·N)` of the observed values.
pub fn site_threshold(series: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Probability(q));
    }
    let mut obs: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    if obs.len() < MIN_THRESHOLD_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "threshold needs at least {MIN_THRESHOLD_SAMPLE} observed values, got {}",
            obs.len()
        )));
    }
    obs.sort_by(f64::total_cmp);
    // Guard against q·N landing a rounding error above an integer.
    let rank = ((q * obs.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(obs[rank.min(obs.len()) - 1])
}

/// Componentwise block maxima. A block is MISSING when more than `max_missing_frac` of its days
/// are missing (and always when it has no observed day).
pub fn block_maxima(panel: &DailyPanel, max_missing_frac: f64) -> Result<BlockMaxima> {
    if !(0.0..1.0).contains(&max_missing_frac) {
        return Err(Error::InvalidArgument(format!(
            "missing fraction must lie in [0, 1), got {max_missing_frac}"
        )));
    }
    let mut out = BlockMaxima::empty(panel.site_ids().to_vec(), panel.block_labels().to_vec());
    for s in 0..panel.n_sites() {
        for t in 0..panel.n_blocks() {
            let block = panel.block(s, t);
            let missing = block.iter().filter(|v| v.is_nan()).count();
            if missing == block.len() || missing as f64 > max_missing_frac * block.len() as f64 {
                continue;
            }
            let mx = block
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .fold(f64::NEG_INFINITY, f64::max);
            out.set(s, t, Some(mx));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decluster_examples() {
        let c = runs_decluster(&[0.0, 5.0, 6.0, 0.0, 7.0, 0.0], 4.0);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].start, c[0].end, c[0].max), (1, 3, 6.0));
        assert_eq!((c[1].start, c[1].end, c[1].max), (4, 5, 7.0));
        assert!(runs_decluster(&[1.0, 2.0, 3.0], 4.0).is_empty());
        let all = runs_decluster(&[5.0, 9.0, 6.0], 4.0);
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].max, 9.0);
        assert_eq!(all[0].argmax, 1);
        let gap = runs_decluster(&[5.0, f64::NAN, 6.0], 4.0);
        assert_eq!(gap.len(), 2);
    }

    #[test]
    fn threshold_examples() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(site_threshold(&xs, 0.95).unwrap(), 95.0);
        assert_eq!(site_threshold(&[3.5; 30], 0.95).unwrap(), 3.5);
        let mut rev = xs.clone();
        rev.reverse();
        assert_eq!(site_threshold(&rev, 0.95).unwrap(), 95.0);
        assert!(site_threshold(&xs[..10], 0.95).is_err());
        assert!(site_threshold(&xs, 1.0).is_err());
    }

    fn panel_with(block: &[Option<f64>]) -> DailyPanel {
        let mut p = DailyPanel::empty(vec!["a".into()], vec![1], block.len());
        for (k, v) in block.iter().enumerate() {
            p.set(0, 0, k, *v);
        }
        p
    }

    #[test]
    fn block_maxima_examples() {
        let full: Vec<Option<f64>> = (0..100).map(|k| Some(k as f64)).collect();
        assert_eq!(
            block_maxima(&panel_with(&full), 0.05).unwrap().get(0, 0),
            Some(99.0)
        );
        let mut six = full.clone();
        for v in six.iter_mut().take(6) {
            *v = None;
        }
        assert_eq!(
            block_maxima(&panel_with(&six), 0.05).unwrap().get(0, 0),
            None
        );
        let mut five = full.clone();
        for v in five.iter_mut().take(5) {
            *v = None;
        }
        assert_eq!(
            block_maxima(&panel_with(&five), 0.05).unwrap().get(0, 0),
            Some(99.0)
        );
        let empty = vec![None; 10];
        assert_eq!(
            block_maxima(&panel_with(&empty), 0.5).unwrap().get(0, 0),
            None
        );
    }

    proptest! {
        #[test]
        fn declustering_properties(xs in proptest::collection::vec(0.0..10.0f64, 0..60), u in 0.0..10.0f64) {
            let clusters = runs_decluster(&xs, u);
            let raw = xs.iter().filter(|&&x| x > u).count();
            prop_assert!(clusters.len() <= raw);
            let adjacent = xs.windows(2).any(|w| w[0] > u && w[1] > u);
            prop_assert_eq!(clusters.len() == raw, !adjacent);
            prop_assert!(clusters.iter().all(|c| c.max > u));
        }

        #[test]
        fn threshold_permutation_invariant(mut xs in proptest::collection::vec(-5.0..5.0f64, 20..80), q in 0.05..0.99f64) {
            let u = site_threshold(&xs, q).unwrap();
            xs.reverse();
            prop_assert_eq!(u, site_threshold(&xs, q).unwrap());
        }

        #[test]
        fn adding_a_day_never_lowers_the_maximum(xs in proptest::collection::vec(0.0..10.0f64, 20..40), extra in 0.0..20.0f64) {
            let mut block: Vec<Option<f64>> = xs.iter().map(|&x| Some(x)).collect();
            block.push(None);
            let before = block_maxima(&panel_with(&block), 0.2).unwrap().get(0, 0).unwrap();
            *block.last_mut().unwrap() = Some(extra);
            let after = block_maxima(&panel_with(&block), 0.2).unwrap().get(0, 0).unwrap();
            prop_assert!(after >= before);
        }
    }
}
