//! Assignment fractions `a^p`: the share of interval-`h` departures of each
//! O-D pair counted on each sensor during interval `h + p`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simulator::Series;
use crate::topology::DirectedNetwork;

/// Entrance delay of every (pair, sensor) on the pair's route, in intervals.
fn entrance_delays(net: &DirectedNetwork, speed_mph: f64, interval_minutes: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    if !(speed_mph > 0.0 && interval_minutes > 0.0) {
        return Err(Error::InvalidArgument("speed and interval length must be positive".into()));
    }
    let routes = net.routes()?;
    Ok(routes
        .iter()
        .map(|route| {
            route
                .links
                .iter()
                .zip(&route.entrance_miles)
                .filter_map(|(&l, &d)| net.sensor_position(l).map(|s| (s, d / speed_mph * 60.0 / interval_minutes)))
                .collect()
        })
        .collect())
}

/// Largest lag at which any departure can be counted, `p'`.
pub fn max_lag(net: &DirectedNetwork, speed_mph: f64, interval_minutes: f64) -> Result<usize> {
    Ok(ground_truth_assignment(net, speed_mph, interval_minutes)?.len() - 1)
}

/// Exact fractions under constant speed and uniform departures: a vehicle
/// reaching a link `tau` intervals after departure is counted at lag
/// `floor(tau)` with probability `1 - frac(tau)` and at the next lag
/// otherwise.
pub fn ground_truth_assignment(net: &DirectedNetwork, speed_mph: f64, interval_minutes: f64) -> Result<Vec<DMatrix<f64>>> {
    let delays = entrance_delays(net, speed_mph, interval_minutes)?;
    let (n_l, n_od) = (net.sensor_count(), delays.len());
    let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n_l, n_od)];
    let put = |blocks: &mut Vec<DMatrix<f64>>, lag: usize, s: usize, r: usize, v: f64| {
        while blocks.len() <= lag {
            blocks.push(DMatrix::zeros(n_l, n_od));
        }
        blocks[lag][(s, r)] += v;
    };
    for (r, stops) in delays.iter().enumerate() {
        for &(s, tau) in stops {
            let whole = tau.floor();
            let frac = tau - whole;
            put(&mut blocks, whole as usize, s, r, 1.0 - frac);
            if frac > 0.0 {
                put(&mut blocks, whole as usize + 1, s, r, frac);
            }
        }
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentEstimate {
    pub blocks: Vec<DMatrix<f64>>,
    /// Sensors whose regression was degenerate and were filled from the
    /// ground-truth fractions instead.
    pub fallback_sensors: Vec<usize>,
}

/// Per-sensor non-negative least squares of link counts on lagged O-D
/// flows of the pairs routed over that sensor, pooled over `days`.
/// Departures before the first interval of a day count as zero.
#[allow(clippy::too_many_arguments)]
pub fn estimate_assignment(
    net: &DirectedNetwork,
    od: &Series,
    link: &Series,
    days: &[usize],
    p_prime: usize,
    speed_mph: f64,
    interval_minutes: f64,
) -> Result<AssignmentEstimate> {
    let delays = entrance_delays(net, speed_mph, interval_minutes)?;
    let (n_l, n_od, t) = (net.sensor_count(), delays.len(), od.intervals());
    let mut blocks = vec![DMatrix::zeros(n_l, n_od); p_prime + 1];
    let mut fallback_sensors = Vec::new();
    let mut truth: Option<Vec<DMatrix<f64>>> = None;

    for s in 0..n_l {
        let pairs: Vec<usize> = (0..n_od).filter(|&r| delays[r].iter().any(|&(x, _)| x == s)).collect();
        if pairs.is_empty() {
            continue;
        }
        let cols = pairs.len() * (p_prime + 1);
        let rows = days.len() * t;
        let mut design = DMatrix::zeros(rows, cols);
        let mut target = DVector::zeros(rows);
        for (di, &day) in days.iter().enumerate() {
            for h in 0..t {
                let row = di * t + h;
                target[row] = link.at(day, h)[s];
                for lag in 0..=p_prime.min(h) {
                    let x = od.at(day, h - lag);
                    for (pi, &r) in pairs.iter().enumerate() {
                        design[(row, lag * pairs.len() + pi)] = x[r];
                    }
                }
            }
        }
        let coef = if well_conditioned(&design) { Some(nnls(&design, &target)) } else { None };
        match coef {
            Some(coef) => {
                for lag in 0..=p_prime {
                    for (pi, &r) in pairs.iter().enumerate() {
                        blocks[lag][(s, r)] = coef[lag * pairs.len() + pi].clamp(0.0, 1.0);
                    }
                }
            }
            None => {
                let truth = match &truth {
                    Some(t) => t,
                    None => truth.insert(ground_truth_assignment(net, speed_mph, interval_minutes)?),
                };
                for (lag, block) in blocks.iter_mut().enumerate() {
                    for &r in &pairs {
                        block[(s, r)] = truth.get(lag).map_or(0.0, |b| b[(s, r)]);
                    }
                }
                fallback_sensors.push(s);
            }
        }
    }
    Ok(AssignmentEstimate { blocks, fallback_sensors })
}

fn well_conditioned(design: &DMatrix<f64>) -> bool {
    if design.nrows() < design.ncols() {
        return false;
    }
    let sv = design.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() / max > 1e-9
}

/// Lawson-Hanson active-set solver for `min |Ax - b|` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.abs().column_sum().max() * a.nrows().max(n) as f64;
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let z_sub = sub.svd(true, true).solve(b, 1e-14).expect("svd computed with u and v");
        let mut z = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            z[j] = z_sub[k];
        }
        z
    };

    for _ in 0..3 * n.max(1) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else { break };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|&k| passive[k]).all(|k| z[k] > tol) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&k| passive[k] && z[k] <= tol)
                .map(|k| x[k] / (x[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Link;

    #[test]
    fn first_link_has_zero_lag() {
        let net = DirectedNetwork::turnpike(4, 5.0).unwrap();
        let blocks = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
        let pairs = net.od_pairs();
        let r = pairs.index(0, 3);
        assert_eq!(blocks[0][(0, r)], 1.0);
        for b in &blocks[1..] {
            assert_eq!(b[(0, r)], 0.0);
        }
    }

    #[test]
    fn half_interval_split() {
        // Second link entered 22.5 miles in: 22.5 min at 60 mph = 1.5 intervals.
        let links = vec![
            Link { id: 0, from_node: 0, to_node: 1, length: 22.5, has_sensor: true },
            Link { id: 1, from_node: 1, to_node: 2, length: 1.0, has_sensor: true },
            Link { id: 2, from_node: 1, to_node: 0, length: 22.5, has_sensor: false },
            Link { id: 3, from_node: 2, to_node: 1, length: 1.0, has_sensor: false },
        ];
        let net = DirectedNetwork::new(3, links).unwrap();
        let blocks = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
        let r = net.od_pairs().index(0, 2);
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0][(1, r)], 0.0);
        assert_eq!(blocks[1][(1, r)], 0.5);
        assert_eq!(blocks[2][(1, r)], 0.5);
    }

    #[test]
    fn fractions_close_on_six_node_corridor() {
        let net = DirectedNetwork::turnpike(6, 5.0).unwrap();
        let blocks = ground_truth_assignment(&net, 60.0, 15.0).unwrap();
        assert_eq!(blocks.len() - 1, 2);
        let routes = net.routes().unwrap();
        for (r, route) in routes.iter().enumerate() {
            for s in 0..net.sensor_count() {
                let total: f64 = blocks.iter().map(|b| b[(s, r)]).sum();
                let expected = if route.links.contains(&net.sensor_links()[s]) { 1.0 } else { 0.0 };
                assert!((total - expected).abs() < 1e-12, "pair {r} sensor {s}: {total}");
            }
        }
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
        let x_true = DVector::from_vec(vec![0.3, 0.7]);
        let b = &a * &x_true;
        let x = nnls(&a, &b);
        assert!((x - x_true).norm() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_direction() {
        // Unconstrained optimum is (-1, 2); constrained one puts x0 at 0.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0, 1.0]);
        let x = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        // With x0 = 0 the best x1 minimises (x1-2)^2 + (x1-1)^2.
        assert!((x[1] - 1.5).abs() < 1e-12);
    }
}
