//! Pareto machinery. Every objective is minimized.

mod archive;
mod hypervolume;

pub use archive::{ArchiveEntry, Insertion, ParetoArchive};
pub use hypervolume::{hypervolume, hypervolume_clipped};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NSGA-II fitness: front index first, crowding distance as tiebreak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub rank: usize,
    pub crowding: f64,
}

impl Fitness {
    pub const UNRANKED: Fitness = Fitness {
        rank: usize::MAX,
        crowding: 0.0,
    };

    /// `Less` means `self` is fitter.
    pub fn compare(&self, other: &Fitness) -> Ordering {
        self.rank
            .cmp(&other.rank)
            .then_with(|| other.crowding.total_cmp(&self.crowding))
    }
}

impl Default for Fitness {
    fn default() -> Self {
        Fitness::UNRANKED
    }
}

/// True iff `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Arity {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Deb's fast non-dominated sort. Returns fronts of indices, front 0 first;
/// indices inside a front are ascending.
pub fn fast_nondominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            let (a, b) = (points[p].as_ref(), points[q].as_ref());
            if dominates_unchecked(a, b) {
                dominated_by_me[p].push(q);
                domination_count[q] += 1;
            } else if dominates_unchecked(b, a) {
                dominated_by_me[q].push(p);
                domination_count[p] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each point of one front, normalized per objective by
/// the front's own range.
///
/// Points holding an objective's minimum or maximum get `+inf`. An interior
/// point adds `(next - prev) / (max - min)`, where `next` and `prev` are the
/// nearest distinct values above and below its own; identical values are
/// treated alike, which keeps the result independent of input order. A
/// constant objective adds nothing. Fronts of at most two points are all
/// boundary.
pub fn crowding_distance<P: AsRef<[f64]>>(front: &[P]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let arity = front[0].as_ref().len();
    let mut distance = vec![0.0; n];
    let mut values: Vec<f64> = Vec::with_capacity(n);
    for m in 0..arity {
        values.clear();
        values.extend(front.iter().map(|p| p.as_ref()[m]));
        values.sort_by(f64::total_cmp);
        values.dedup();
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if hi == lo {
            continue;
        }
        let range = hi - lo;
        let last = values.len() - 1;
        for (i, p) in front.iter().enumerate() {
            let v = p.as_ref()[m];
            let j = values.partition_point(|&u| u < v);
            distance[i] += if j == 0 || j == last {
                f64::INFINITY
            } else {
                (values[j + 1] - values[j - 1]) / range
            };
        }
    }
    distance
}

/// Ranks and crowding for every point.
pub fn assign_fitness<P: AsRef<[f64]>>(points: &[P]) -> Vec<Fitness> {
    let mut out = vec![Fitness::UNRANKED; points.len()];
    for (rank, front) in fast_nondominated_sort(points).into_iter().enumerate() {
        let members: Vec<&[f64]> = front.iter().map(|&i| points[i].as_ref()).collect();
        for (&i, crowding) in front.iter().zip(crowding_distance(&members)) {
            out[i] = Fitness { rank, crowding };
        }
    }
    out
}

/// Indices of the non-dominated points, ascending.
pub fn pareto_front<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .any(|q| dominates_unchecked(q.as_ref(), points[i].as_ref()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.1, 5.0, 100.0], &[0.2, 5.0, 100.0]).unwrap());
        assert!(!dominates(&[0.1, 5.0], &[0.2, 3.0]).unwrap());
        assert!(!dominates(&[0.2, 3.0], &[0.1, 5.0]).unwrap());
        assert!(!dominates(&[0.1, 5.0], &[0.1, 5.0]).unwrap());
        assert!(matches!(dominates(&[0.1], &[0.1, 2.0]), Err(Error::Arity { .. })));
    }

    #[test]
    fn sort_example() {
        let pts = [[0.1, 5.0], [0.2, 3.0], [0.2, 6.0], [0.3, 7.0]];
        assert_eq!(fast_nondominated_sort(&pts), vec![vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn sort_identical_and_chain() {
        let same = vec![[1.0, 1.0]; 5];
        assert_eq!(fast_nondominated_sort(&same), vec![vec![0, 1, 2, 3, 4]]);
        let chain: Vec<[f64; 2]> = (0..4).map(|i| [i as f64, i as f64]).collect();
        assert_eq!(
            fast_nondominated_sort(&chain),
            vec![vec![0], vec![1], vec![2], vec![3]]
        );
    }

    #[test]
    fn crowding_example() {
        let front = [[0.1, 30.0], [0.2, 20.0], [0.3, 10.0]];
        let d = crowding_distance(&front);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12, "{}", d[1]);
    }

    #[test]
    fn crowding_small_and_constant() {
        assert!(crowding_distance(&[[1.0, 2.0], [2.0, 1.0]]).iter().all(|d| d.is_infinite()));
        assert_eq!(crowding_distance::<[f64; 2]>(&[]), Vec::<f64>::new());
        let front = [[0.1, 3.0, 7.0], [0.2, 2.0, 7.0], [0.4, 1.0, 7.0]];
        let d = crowding_distance(&front);
        // only the first two objectives contribute: 0.3/0.3 + 2/2
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fitness_order() {
        let a = Fitness { rank: 0, crowding: 0.1 };
        let b = Fitness { rank: 1, crowding: f64::INFINITY };
        let c = Fitness { rank: 0, crowding: f64::INFINITY };
        assert_eq!(a.compare(&b), Ordering::Less);
        assert_eq!(c.compare(&a), Ordering::Less);
    }
}
