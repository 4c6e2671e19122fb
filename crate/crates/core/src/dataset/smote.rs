//! SMOTE-NC oversampling of labeled windows.
//!
//! Continuous features are interpolated between a sample and one of its k
//! nearest same-class neighbors; the nominal road class of each row takes the
//! mode over those neighbors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FeatureWindow, Provenance, FEATURE_WIDTH, ROAD_COLUMN};
use crate::error::{Error, Result};

pub const DEFAULT_SMOTE_K: usize = 5;

/// Relative jitter used when a class has a single sample.
const SINGLETON_JITTER: f64 = 0.01;

fn is_nominal(flat_index: usize) -> bool {
    flat_index % FEATURE_WIDTH == ROAD_COLUMN
}

fn continuous_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| !is_nominal(*i))
        .map(|(_, (x, y))| (x - y) * (x - y))
        .sum()
}

fn nearest_neighbors(members: &[&FeatureWindow], base: usize, k: usize) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != base)
        .map(|(j, w)| (continuous_distance_sq(&members[base].rows, &w.rows), j))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.into_iter().take(k).map(|(_, j)| j).collect()
}

fn mode(values: impl Iterator<Item = f64>) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.round() as i64).or_default() += 1;
    }
    // BTreeMap iterates ascending, so ties go to the smallest code
    let mut best = (0i64, 0usize);
    for (code, n) in counts {
        if n > best.1 {
            best = (code, n);
        }
    }
    best.0 as f64
}

/// Raises every listed class to the count of the largest one.
///
/// Returns the input windows followed by the synthetic ones. Classes with a
/// single sample are duplicated with a small multiplicative jitter.
pub fn smote_nc(samples: &[FeatureWindow], classes: &[u8], k: usize, seed: u64) -> Result<Vec<FeatureWindow>> {
    if k == 0 {
        return Err(Error::InvalidArgument("SMOTE-NC needs k >= 1".into()));
    }
    let members: Vec<(u8, Vec<&FeatureWindow>)> = classes
        .iter()
        .map(|&c| (c, samples.iter().filter(|w| w.label == Some(c)).collect()))
        .collect();
    if let Some((c, _)) = members.iter().find(|(_, m)| m.is_empty()) {
        return Err(Error::EmptyClass(*c));
    }
    let target = members.iter().map(|(_, m)| m.len()).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = samples.to_vec();
    for (class, group) in &members {
        let needed = target - group.len();
        if needed == 0 {
            continue;
        }
        let kk = k.min(group.len() - 1);
        let mut neighbor_cache: Vec<Option<Vec<usize>>> = vec![None; group.len()];
        for i in 0..needed {
            let base_idx = i % group.len();
            let base = group[base_idx];
            let mut synth = FeatureWindow {
                label: Some(*class),
                provenance: Some(Provenance::Synthetic),
                raw_label: Some(*class),
                ..base.clone()
            };
            if kk == 0 {
                for (j, v) in synth.rows.iter_mut().enumerate() {
                    if !is_nominal(j) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v *= 1.0 + SINGLETON_JITTER * z;
                    }
                }
                out.push(synth);
                continue;
            }
            let neighbors = neighbor_cache[base_idx]
                .get_or_insert_with(|| nearest_neighbors(group, base_idx, kk))
                .clone();
            let pick = group[neighbors[rng.random_range(0..neighbors.len())]];
            let lambda: f64 = rng.random();
            for (j, v) in synth.rows.iter_mut().enumerate() {
                if is_nominal(j) {
                    *v = mode(neighbors.iter().map(|&n| group[n].rows[j]));
                } else {
                    *v += lambda * (pick.rows[j] - *v);
                }
            }
            out.push(synth);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{class_counts, WindowSource};
    use super::*;

    fn window(label: u8, fill: f64, road: f64) -> FeatureWindow {
        let mut rows = vec![fill; FEATURE_WIDTH];
        rows[ROAD_COLUMN] = road;
        FeatureWindow {
            rows,
            steps: 1,
            label: Some(label),
            provenance: Some(Provenance::True),
            raw_label: Some(label),
            source: WindowSource {
                scenario_id: "s".into(),
                end_frame: 0,
                end_timestamp: 0.0,
            },
        }
    }

    #[test]
    fn balances_to_majority() {
        let mut samples = Vec::new();
        for (label, n) in [(1u8, 477usize), (2, 35), (3, 36), (4, 9)] {
            for i in 0..n {
                samples.push(window(label, i as f64, 1.0 + (i % 3) as f64));
            }
        }
        let out = smote_nc(&samples, &[1, 2, 3, 4], 5, 11).unwrap();
        assert_eq!(class_counts(&out), [477; 4]);
    }

    #[test]
    fn two_samples_interpolate_toward_neighbor() {
        let samples = vec![window(1, 0.0, 1.0), window(1, 0.0, 1.0), window(2, 0.0, 2.0), window(2, 10.0, 5.0)];
        let mut more = samples.clone();
        more.push(window(1, 0.0, 1.0));
        let out = smote_nc(&more, &[1, 2], 1, 5).unwrap();
        let synth = &out[more.len()];
        assert_eq!(synth.label, Some(2));
        // base is the first class-2 window; its only neighbor has road 5
        assert_eq!(synth.rows[ROAD_COLUMN], 5.0);
        let lambda = synth.rows[0] / 10.0;
        assert!((0.0..=1.0).contains(&lambda));
        assert!(synth.rows.iter().enumerate().all(|(j, v)| j == ROAD_COLUMN || *v == synth.rows[0]));
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let samples = vec![window(1, 0.0, 1.0), window(2, 1.0, 1.0)];
        assert_eq!(smote_nc(&samples, &[1, 2], 5, 0).unwrap(), samples);
    }

    #[test]
    fn empty_class_is_an_error() {
        let samples = vec![window(1, 0.0, 1.0)];
        assert!(matches!(smote_nc(&samples, &[1, 2], 5, 0), Err(Error::EmptyClass(2))));
    }

    #[test]
    fn singleton_class_is_jittered() {
        let samples = vec![window(1, 1.0, 1.0), window(1, 2.0, 1.0), window(1, 3.0, 1.0), window(2, 4.0, 3.0)];
        let out = smote_nc(&samples, &[1, 2], 5, 0).unwrap();
        assert_eq!(class_counts(&out), [3, 3, 0, 0]);
        for w in &out[4..] {
            assert_eq!(w.rows[ROAD_COLUMN], 3.0);
            assert!((w.rows[0] - 4.0).abs() < 0.5);
        }
    }
}
