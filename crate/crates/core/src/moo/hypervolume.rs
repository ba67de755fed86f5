use crate::error::{Error, Result};

use super::pareto_front;

/// Exact Lebesgue measure of the union of boxes `[p, reference]`.
///
/// Every point must weakly dominate the reference. Two objectives use a
/// sweep, three a slice-by-slice sweep over the first objective, and higher
/// arities a recursive slicing.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> Result<f64> {
    for (index, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != reference.len() {
            return Err(Error::Arity {
                left: p.len(),
                right: reference.len(),
            });
        }
        if p.iter().zip(reference).any(|(x, r)| x > r) {
            return Err(Error::Reference { index });
        }
    }
    let front: Vec<&[f64]> = pareto_front(points)
        .into_iter()
        .map(|i| points[i].as_ref())
        .collect();
    Ok(volume(front, reference))
}

/// Hypervolume of the points that weakly dominate `reference`; the rest
/// contribute nothing and are skipped.
pub fn hypervolume_clipped<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> f64 {
    let inside: Vec<&[f64]> = points
        .iter()
        .map(AsRef::as_ref)
        .filter(|p| p.len() == reference.len() && p.iter().zip(reference).all(|(x, r)| x <= r))
        .collect();
    hypervolume(&inside, reference).expect("filtered points dominate the reference")
}

fn volume(mut points: Vec<&[f64]>, reference: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    match reference.len() {
        0 => 0.0,
        1 => {
            let best = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            reference[0] - best
        }
        2 => {
            let mut pairs: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
            area(&mut pairs, reference[0], reference[1])
        }
        3 => volume3(points, reference),
        _ => {
            points.sort_by(|a, b| a[0].total_cmp(&b[0]));
            let mut total = 0.0;
            for i in 0..points.len() {
                let next = points.get(i + 1).map_or(reference[0], |p| p[0]);
                let width = next - points[i][0];
                if width > 0.0 {
                    let slice: Vec<&[f64]> = points[..=i].iter().map(|p| &p[1..]).collect();
                    let slice = nondominated(slice);
                    total += width * volume(slice, &reference[1..]);
                }
            }
            total
        }
    }
}

fn nondominated(points: Vec<&[f64]>) -> Vec<&[f64]> {
    pareto_front(&points).into_iter().map(|i| points[i]).collect()
}

/// Area dominated by `(x, y)` pairs up to `(rx, ry)`.
fn area(pairs: &mut [(f64, f64)], rx: f64, ry: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut total = 0.0;
    let mut ceiling = ry;
    for &(x, y) in pairs.iter() {
        if y < ceiling {
            total += (rx - x) * (ceiling - y);
            ceiling = y;
        }
    }
    total
}

/// Sweeps the first objective, maintaining the 2-D non-dominated staircase of
/// the remaining two objectives (sorted by the second objective, so the third
/// is strictly decreasing).
fn volume3(mut points: Vec<&[f64]>, reference: &[f64]) -> f64 {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let (ry, rz) = (reference[1], reference[2]);
    let mut stairs: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for i in 0..points.len() {
        let (y, z) = (points[i][1], points[i][2]);
        let covered = stairs.iter().any(|&(sy, sz)| sy <= y && sz <= z);
        if !covered {
            stairs.retain(|&(sy, sz)| !(y <= sy && z <= sz));
            let at = stairs.partition_point(|&(sy, _)| sy < y);
            stairs.insert(at, (y, z));
        }
        let next = points.get(i + 1).map_or(reference[0], |p| p[0]);
        let width = next - points[i][0];
        if width > 0.0 {
            let mut slice = 0.0;
            for (j, &(sy, sz)) in stairs.iter().enumerate() {
                let right = stairs.get(j + 1).map_or(ry, |s| s.0);
                slice += (right - sy) * (rz - sz);
            }
            total += width * slice;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box() {
        assert_eq!(hypervolume(&[[0.0, 0.0]], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn two_overlapping_boxes() {
        let hv = hypervolume(&[[0.5, 0.2], [0.2, 0.5]], &[1.0, 1.0]).unwrap();
        assert!((hv - 0.55).abs() < 1e-12, "{hv}");
    }

    #[test]
    fn dominated_point_adds_nothing() {
        let base = hypervolume(&[[0.5, 0.2], [0.2, 0.5]], &[1.0, 1.0]).unwrap();
        let more = hypervolume(&[[0.5, 0.2], [0.2, 0.5], [0.6, 0.6]], &[1.0, 1.0]).unwrap();
        assert_eq!(base, more);
    }

    #[test]
    fn three_dimensional_boxes() {
        // 0.5 + 0.5 - 0.25 overlap
        let hv = hypervolume(&[[0.0, 0.5, 0.0], [0.5, 0.0, 0.0]], &[1.0, 1.0, 1.0]).unwrap();
        assert!((hv - 0.75).abs() < 1e-12, "{hv}");
        let one = hypervolume(&[[0.0, 0.0, 0.0]], &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(one, 6.0);
    }

    #[test]
    fn four_dimensions_and_one() {
        let hv = hypervolume(&[[0.5, 0.5, 0.5, 0.5]], &[1.0; 4]).unwrap();
        assert!((hv - 0.0625).abs() < 1e-12);
        assert_eq!(hypervolume(&[[0.25], [0.5]], &[1.0]).unwrap(), 0.75);
    }

    #[test]
    fn reference_violation() {
        assert!(matches!(
            hypervolume(&[[0.5, 0.5], [1.5, 0.1]], &[1.0, 1.0]),
            Err(Error::Reference { index: 1 })
        ));
        assert_eq!(hypervolume_clipped(&[[0.5, 0.5], [1.5, 0.1]], &[1.0, 1.0]), 0.25);
    }
}
