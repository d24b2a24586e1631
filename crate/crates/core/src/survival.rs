//! Survival curves on a discrete time grid: weighted Kaplan–Meier for the
//! event and censoring processes, log-rank survival forests for conditional
//! curves, and restricted mean survival time.
//!
//! Curves are right-continuous step functions. Grid bin `k` covers
//! `(t_{k-1}, t_k]`; a unit is at risk in bin `k` when its time exceeds
//! `t_{k-1}`, so with a grid holding every distinct time the estimator is the
//! textbook product-limit estimator (events processed before censorings at
//! tied times).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CsfError, Result};
use crate::forest::{Forest, ForestParams, LabelKind, SplitCriterion, SplitScan};
use crate::matrix::Matrix;

pub const DEFAULT_MAX_GRID_POINTS: usize = 50;

/// Default leaf size for survival and censoring forests.
pub const SURVIVAL_MIN_NODE_SIZE: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(CsfError::param("time grid is empty"));
        }
        if points.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(CsfError::param("time grid points must be positive and finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CsfError::param("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    /// Grid of at most `max_points` points at equally spaced quantiles of
    /// the event times truncated at `horizon`, always ending at `horizon`.
    pub fn from_event_times(times: &[f64], events: &[bool], horizon: f64, max_points: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CsfError::param("horizon must be positive"));
        }
        if max_points == 0 {
            return Err(CsfError::param("max_points must be positive"));
        }
        let mut ev: Vec<f64> = times
            .iter()
            .zip(events)
            .filter(|(t, &e)| e && **t > 0.0)
            .map(|(t, _)| t.min(horizon))
            .collect();
        ev.sort_by(f64::total_cmp);
        let mut unique = ev.clone();
        unique.dedup();
        let k = unique.len().min(max_points);
        let mut points: Vec<f64> = if k == unique.len() {
            unique
        } else {
            // Type-1 quantiles at k/K, k = 1..K.
            (1..=k)
                .map(|j| {
                    let q = j as f64 / k as f64;
                    let idx = ((q * ev.len() as f64).ceil() as usize).clamp(1, ev.len()) - 1;
                    ev[idx]
                })
                .collect()
        };
        points.push(horizon);
        points.sort_by(f64::total_cmp);
        points.dedup();
        if points.len() > max_points {
            // Keep the horizon; drop the largest interior quantile.
            let h = points.pop().unwrap_or(horizon);
            points.truncate(max_points - 1);
            points.push(h);
        }
        TimeGrid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of the bin `(t_{k-1}, t_k]` containing `t`; `len()` for times
    /// past the last point.
    pub fn bin_of(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p < t)
    }

    /// Number of grid points at which a unit observed at `t` is at risk,
    /// and whether its event counts at the last of them. Event times are
    /// rounded up to the next grid point; a censored unit stays at risk
    /// only at points up to its time.
    pub fn position(&self, t: f64, event: bool) -> (usize, bool) {
        let k = self.points.len();
        if event {
            let b = self.bin_of(t);
            if b < k {
                (b + 1, true)
            } else {
                (k, false)
            }
        } else {
            (self.points.partition_point(|&p| p <= t), false)
        }
    }
}

/// Right-continuous, nonincreasing step function on a grid; equal to 1
/// before the first grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CsfError::param("step function needs one value per grid point"));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=1.0).contains(&v) || v > prev {
                return Err(CsfError::param("step function values must be nonincreasing in [0, 1]"));
            }
            prev = v;
        }
        Ok(StepFunction { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t` (right-continuous).
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.grid.points.partition_point(|&p| p <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn value_before(&self, t: f64) -> f64 {
        let k = self.grid.points.partition_point(|&p| p < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Writes `t,value` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.grid.points.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Weighted event totals per grid point, and weight totals by the number
/// of grid points at risk (`counts[r]`, `r` in `0..=k`).
struct BinTotals {
    events: Vec<f64>,
    counts: Vec<f64>,
}

impl BinTotals {
    /// Product-limit curve. At-risk totals are suffix sums, which stay exact
    /// for integer weights.
    fn curve(&self, grid: &TimeGrid) -> Vec<f64> {
        let k = grid.len();
        let mut at_risk = vec![0.0; k];
        let mut acc = 0.0;
        for j in (0..k).rev() {
            acc += self.counts[j + 1];
            at_risk[j] = acc;
        }
        let mut s: f64 = 1.0;
        let mut out = Vec::with_capacity(k);
        for (&d, &r) in self.events.iter().zip(&at_risk) {
            if r > 0.0 {
                s *= 1.0 - d / r;
            }
            s = s.clamp(0.0, 1.0);
            out.push(s);
        }
        out
    }
}

/// Weighted product-limit estimator on `grid`.
pub fn kaplan_meier(times: &[f64], events: &[bool], weights: &[f64], grid: &TimeGrid) -> Result<StepFunction> {
    if times.len() != events.len() || times.len() != weights.len() {
        return Err(CsfError::param("times, events and weights must have equal length"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(CsfError::param("weights must be finite and nonnegative"));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(CsfError::param("total weight is zero"));
    }
    let k = grid.len();
    let mut totals = BinTotals {
        events: vec![0.0; k],
        counts: vec![0.0; k + 1],
    };
    for ((&t, &e), &w) in times.iter().zip(events).zip(weights) {
        let (r, counted) = grid.position(t, e);
        totals.counts[r] += w;
        if counted {
            totals.events[r - 1] += w;
        }
    }
    let values = totals.curve(grid);
    StepFunction::new(grid.clone(), values)
}

/// Kaplan–Meier curve of the censoring process: censorings are the events.
pub fn censoring_km(times: &[f64], events: &[bool], weights: &[f64], grid: &TimeGrid) -> Result<StepFunction> {
    let censored: Vec<bool> = events.iter().map(|&e| !e).collect();
    kaplan_meier(times, &censored, weights, grid)
}

/// Area under the step function on `[0, horizon]`; the curve is extended
/// flat past its last grid point.
pub fn rmst(curve: &StepFunction, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CsfError::param(format!("horizon must be positive, got {horizon}")));
    }
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut level = 1.0;
    for (&t, &v) in curve.grid.points.iter().zip(&curve.values) {
        if t >= horizon {
            break;
        }
        area += level * (t - prev_t);
        prev_t = t;
        level = v;
    }
    area += level * (horizon - prev_t);
    Ok(area)
}

/// Standardized two-sample log-rank statistic on the grid.
pub(crate) struct LogRankScan {
    bins: Vec<usize>,
    events: Vec<bool>,
    k: usize,
    min_node_size: usize,
    total_events: Vec<f64>,
    total_counts: Vec<f64>,
    left_events: Vec<f64>,
    left_counts: Vec<f64>,
    left_event_total: f64,
    event_total: f64,
}

impl SplitScan for LogRankScan {
    fn reset(&mut self) -> bool {
        self.left_events.iter_mut().for_each(|v| *v = 0.0);
        self.left_counts.iter_mut().for_each(|v| *v = 0.0);
        self.left_event_total = 0.0;
        self.event_total > 0.0
    }

    fn push_left(&mut self, pos: usize) {
        let b = self.bins[pos];
        self.left_counts[b] += 1.0;
        if self.events[pos] {
            self.left_events[b - 1] += 1.0;
            self.left_event_total += 1.0;
        }
    }

    fn gain(&self, n_left: usize, n_right: usize) -> Option<f64> {
        if n_left < self.min_node_size || n_right < self.min_node_size {
            return None;
        }
        if self.left_event_total < 1.0 || self.event_total - self.left_event_total < 1.0 {
            return None;
        }
        let mut r: f64 = self.total_counts[1..].iter().sum();
        let mut r_left: f64 = self.left_counts[1..].iter().sum();
        let mut o_minus_e = 0.0;
        let mut var = 0.0;
        for j in 0..self.k {
            let d = self.total_events[j];
            if d > 0.0 && r > 0.0 {
                let frac = r_left / r;
                o_minus_e += self.left_events[j] - d * frac;
                if r > 1.0 {
                    var += d * frac * (1.0 - frac) * (r - d) / (r - 1.0);
                }
            }
            r -= self.total_counts[j + 1];
            r_left -= self.left_counts[j + 1];
        }
        if var <= 0.0 {
            return None;
        }
        Some(o_minus_e * o_minus_e / var)
    }

    fn min_gain(&self) -> f64 {
        1e-10
    }
}

/// `bins` and `events` are per-unit [`TimeGrid::position`] values.
pub(crate) struct LogRankCriterion<'a> {
    pub bins: &'a [usize],
    pub events: &'a [bool],
    pub k: usize,
    pub min_node_size: usize,
}

impl SplitCriterion for LogRankCriterion<'_> {
    type Scan = LogRankScan;

    fn scan(&self, split_ids: &[u32]) -> Option<LogRankScan> {
        let bins: Vec<usize> = split_ids.iter().map(|&i| self.bins[i as usize]).collect();
        let events: Vec<bool> = split_ids.iter().map(|&i| self.events[i as usize]).collect();
        let mut total_events = vec![0.0; self.k];
        let mut total_counts = vec![0.0; self.k + 1];
        let mut event_total = 0.0;
        for (&b, &e) in bins.iter().zip(&events) {
            total_counts[b] += 1.0;
            if e {
                total_events[b - 1] += 1.0;
                event_total += 1.0;
            }
        }
        Some(LogRankScan {
            bins,
            events,
            k: self.k,
            min_node_size: self.min_node_size,
            total_events,
            total_counts,
            left_events: vec![0.0; self.k],
            left_counts: vec![0.0; self.k + 1],
            left_event_total: 0.0,
            event_total,
        })
    }
}

/// Random survival forest with log-rank splitting; predicted curves are
/// Kaplan–Meier estimates under the forest kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalForest {
    forest: Forest,
    grid: TimeGrid,
    /// Per-unit [`TimeGrid::position`].
    bins: Vec<usize>,
    events: Vec<bool>,
}

impl SurvivalForest {
    pub fn fit(x: &Matrix, times: &[f64], events: &[bool], grid: TimeGrid, params: &ForestParams) -> Result<Self> {
        if times.len() != x.nrows() || events.len() != x.nrows() {
            return Err(CsfError::param("times and events must match the row count"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(CsfError::param("times must be finite and nonnegative"));
        }
        let (bins, counted): (Vec<usize>, Vec<bool>) =
            times.iter().zip(events).map(|(&t, &e)| grid.position(t, e)).unzip();
        let criterion = LogRankCriterion {
            bins: &bins,
            events: &counted,
            k: grid.len(),
            min_node_size: params.min_node_size,
        };
        let weights = vec![1.0; x.nrows()];
        let forest = Forest::grow(x, &weights, &criterion, params, LabelKind::Survival)?;
        Ok(SurvivalForest {
            forest,
            grid,
            bins,
            events: counted,
        })
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn curve(&self, x: &[f64], exclude: Option<usize>) -> Option<StepFunction> {
        let k = self.grid.len();
        let acc = self.forest.kernel_average(x, exclude, 2 * k + 1, |i, acc, a| {
            let b = self.bins[i];
            acc[k + b] += a;
            if self.events[i] {
                acc[b - 1] += a;
            }
        })?;
        let totals = BinTotals {
            events: acc[..k].to_vec(),
            counts: acc[k..].to_vec(),
        };
        let values = totals.curve(&self.grid);
        Some(StepFunction {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn predict_survival(&self, x: &[f64]) -> Result<StepFunction> {
        self.forest.check_point(x)?;
        self.curve(x, None)
            .ok_or_else(|| CsfError::Model("survival forest has no usable tree".into()))
    }

    /// OOB curves for the training rows; the second value counts units that
    /// fell back to the full forest.
    pub fn oob_predict_survival(&self, x: &Matrix) -> Result<(Vec<StepFunction>, usize)> {
        if x.nrows() != self.forest.num_rows() || x.ncols() != self.forest.num_features() {
            return Err(CsfError::param("OOB prediction requires the training matrix"));
        }
        let out: Vec<(StepFunction, bool)> = (0..x.nrows())
            .into_par_iter()
            .map(|i| match self.curve(x.row(i), Some(i)) {
                Some(c) => Ok((c, false)),
                None => self.predict_survival(x.row(i)).map(|c| (c, true)),
            })
            .collect::<Result<_>>()?;
        let fallback = out.iter().filter(|o| o.1).count();
        if fallback > 0 {
            log::warn!("{fallback} units were in-bag for every survival tree");
        }
        Ok((out.into_iter().map(|o| o.0).collect(), fallback))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{best_split, Columns};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(points: &[f64]) -> TimeGrid {
        TimeGrid::new(points.to_vec()).unwrap()
    }

    /// Textbook product-limit estimator evaluated at `t`.
    fn brute_force_km(times: &[f64], events: &[bool], t: f64) -> f64 {
        let mut event_times: Vec<f64> = times
            .iter()
            .zip(events)
            .filter(|(s, &e)| e && **s <= t)
            .map(|(s, _)| *s)
            .collect();
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();
        let mut s = 1.0;
        for &u in &event_times {
            let d = times.iter().zip(events).filter(|(v, &e)| e && **v == u).count() as f64;
            let r = times.iter().filter(|&&v| v >= u).count() as f64;
            s *= 1.0 - d / r;
        }
        s
    }

    #[test]
    fn hand_product_limit() {
        let s = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true], &[1.0; 3], &grid(&[1.0, 2.0, 3.0])).unwrap();
        assert!((s.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.values()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.values()[2], 0.0);
    }

    #[test]
    fn censoring_between_grid_points_leaves_risk_set() {
        let s = kaplan_meier(&[1.0, 1.5, 2.0], &[true, false, true], &[1.0; 3], &grid(&[1.0, 2.0, 5.0])).unwrap();
        let third = 1.0 - 1.0 / 3.0;
        assert_eq!(s.values(), &[third, 0.0, 0.0]);
        // Events between points count at the next point.
        let s = kaplan_meier(&[0.5, 1.5, 3.0], &[true, true, false], &[1.0; 3], &grid(&[1.0, 2.0, 5.0])).unwrap();
        assert_eq!(s.values(), &[third, third * 0.5, third * 0.5]);
    }

    #[test]
    fn no_events_means_flat_curve() {
        let s = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3], &[1.0; 3], &grid(&[1.0, 2.0, 3.0])).unwrap();
        assert!(s.values().iter().all(|&v| v == 1.0));
        let g = censoring_km(&[1.0, 2.0, 3.0], &[true; 3], &[1.0; 3], &grid(&[1.0, 2.0, 3.0])).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn censoring_curve_hand_values() {
        let g = censoring_km(&[1.0, 2.0], &[false, true], &[1.0; 2], &grid(&[1.0, 2.0])).unwrap();
        assert_eq!(g.values(), &[0.5, 0.5]);
    }

    #[test]
    fn censoring_km_mirrors_km() {
        let times = [0.5, 1.5, 2.5, 3.5, 4.5];
        let d = [true, false, false, true, false];
        let flipped: Vec<bool> = d.iter().map(|e| !e).collect();
        let g = grid(&times);
        assert_eq!(
            censoring_km(&times, &d, &[1.0; 5], &g).unwrap(),
            kaplan_meier(&times, &flipped, &[1.0; 5], &g).unwrap()
        );
    }

    #[test]
    fn zero_weight_is_an_error() {
        assert!(kaplan_meier(&[1.0], &[true], &[0.0], &grid(&[1.0])).is_err());
        assert!(kaplan_meier(&[1.0, 2.0], &[true], &[1.0], &grid(&[1.0])).is_err());
    }

    #[test]
    fn step_function_lookup() {
        let f = StepFunction::new(grid(&[1.0, 3.0]), vec![0.5, 0.25]).unwrap();
        assert_eq!(f.value_at(0.5), 1.0);
        assert_eq!(f.value_at(1.0), 0.5);
        assert_eq!(f.value_before(1.0), 1.0);
        assert_eq!(f.value_before(1.5), 0.5);
        assert_eq!(f.value_at(10.0), 0.25);
        assert!(StepFunction::new(grid(&[1.0, 3.0]), vec![0.5, 0.75]).is_err());
    }

    #[test]
    fn rmst_cases() {
        let flat = StepFunction::new(grid(&[5.0, 10.0]), vec![1.0, 1.0]).unwrap();
        assert_eq!(rmst(&flat, 10.0).unwrap(), 10.0);
        let f = StepFunction::new(grid(&[1.0, 3.0]), vec![0.5, 0.0]).unwrap();
        assert!((rmst(&f, 3.0).unwrap() - 2.0).abs() < 1e-15);
        // Horizon inside the grid and past it.
        assert!((rmst(&f, 2.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((rmst(&f, 5.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(rmst(&f, 0.0).is_err());
    }

    #[test]
    fn grid_from_quantiles() {
        let times: Vec<f64> = (1..=200).map(f64::from).collect();
        let events = vec![true; 200];
        let g = TimeGrid::from_event_times(&times, &events, 150.0, 50).unwrap();
        assert!(g.len() <= 50);
        assert_eq!(g.last(), 150.0);
        assert!(g.points().iter().all(|&t| t <= 150.0));

        let few = TimeGrid::from_event_times(&[1.0, 2.0, 2.0, 9.0], &[true, true, false, true], 5.0, 50).unwrap();
        assert_eq!(few.points(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn bins() {
        let g = grid(&[1.0, 2.0, 4.0]);
        assert_eq!(g.bin_of(0.5), 0);
        assert_eq!(g.bin_of(1.0), 0);
        assert_eq!(g.bin_of(1.5), 1);
        assert_eq!(g.bin_of(4.0), 2);
        assert_eq!(g.bin_of(4.5), 3);
    }

    #[test]
    fn km_matches_brute_force_on_small_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..=20);
            let times: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..=16u32)) / 2.0).collect();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            // Grid of the distinct event times, so censored times fall between points.
            let mut pts: Vec<f64> = times.iter().zip(&events).filter(|(_, &e)| e).map(|(t, _)| *t).collect();
            pts.push(9.0);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let g = grid(&pts);
            let s = kaplan_meier(&times, &events, &vec![1.0; n], &g).unwrap();
            for (k, &t) in pts.iter().enumerate() {
                assert_eq!(s.values()[k], brute_force_km(&times, &events, t));
            }
        }
    }

    proptest! {
        #[test]
        fn weights_scale_invariance(
            rows in prop::collection::vec((1u32..30, any::<bool>(), 0.1f64..3.0), 1..40),
            c in 0.01f64..100.0,
        ) {
            let times: Vec<f64> = rows.iter().map(|r| f64::from(r.0)).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let wc: Vec<f64> = w.iter().map(|v| v * c).collect();
            let g = grid(&[3.0, 7.0, 12.0, 20.0, 29.0]);
            let a = kaplan_meier(&times, &events, &w, &g).unwrap();
            let b = kaplan_meier(&times, &events, &wc, &g).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
            let area = rmst(&a, 25.0).unwrap();
            prop_assert!((0.0..=25.0).contains(&area));
            prop_assert!(a.values().windows(2).all(|p| p[0] >= p[1]));
        }
    }

    fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
        -(1.0 - rng.random::<f64>()).ln() / rate
    }

    fn params(trees: usize) -> ForestParams {
        ForestParams {
            num_trees: trees,
            ..ForestParams::default()
        }
    }

    #[test]
    fn single_leaf_forest_equals_marginal_km() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_row_major(n, 1, vec![0.0; n]).unwrap();
        let times: Vec<f64> = (0..n).map(|_| exp_draw(&mut rng, 1.0)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let g = TimeGrid::from_event_times(&times, &events, 2.0, 50).unwrap();
        let sf = SurvivalForest::fit(&x, &times, &events, g.clone(), &params(50)).unwrap();
        assert!(sf.forest().trees().iter().all(|t| t.num_leaves() == 1));
        // Kernel weights are per-tree uniform over the estimation half; the
        // curve must equal KM run with those weights.
        let kernel = sf.forest().kernel_weights(&[0.0]).unwrap();
        let mut w = vec![0.0; n];
        for (i, a) in kernel {
            w[i] = a;
        }
        let manual = kaplan_meier(&times, &events, &w, &g).unwrap();
        let pred = sf.predict_survival(&[0.0]).unwrap();
        for (a, b) in manual.values().iter().zip(pred.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_single_leaf_trees_equal_marginal_km() {
        // Full subsample, one leaf: every tree's estimation half is the same
        // only when trees are copies, so duplicate one tree.
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_row_major(n, 1, vec![1.0; n]).unwrap();
        let times: Vec<f64> = (0..n).map(|_| exp_draw(&mut rng, 0.5)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let g = TimeGrid::from_event_times(&times, &events, 3.0, 50).unwrap();
        let sf = SurvivalForest::fit(&x, &times, &events, g.clone(), &params(2)).unwrap();
        let est = sf.forest().trees()[0].estimation_sample().to_vec();
        let mut dup = sf.clone();
        let first = dup.forest.trees()[0].clone();
        dup.forest = dup.forest.with_trees(vec![first.clone(), first.clone(), first]);
        let sub_t: Vec<f64> = est.iter().map(|&i| times[i as usize]).collect();
        let sub_e: Vec<bool> = est.iter().map(|&i| events[i as usize]).collect();
        let marginal = kaplan_meier(&sub_t, &sub_e, &vec![1.0; est.len()], &g).unwrap();
        let pred = dup.predict_survival(&[1.0]).unwrap();
        for (a, b) in marginal.values().iter().zip(pred.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn covariate_free_data_recovers_marginal_km() {
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_row_major(n, 2, data).unwrap();
        let times: Vec<f64> = (0..n).map(|_| exp_draw(&mut rng, 1.0)).collect();
        let events = vec![true; n];
        let g = TimeGrid::from_event_times(&times, &events, 2.5, 50).unwrap();
        let marginal = kaplan_meier(&times, &events, &vec![1.0; n], &g).unwrap();
        let p = ForestParams {
            min_node_size: SURVIVAL_MIN_NODE_SIZE,
            ..params(200)
        };
        let sf = SurvivalForest::fit(&x, &times, &events, g, &p).unwrap();
        let mut sups: Vec<f64> = (0..100)
            .map(|r| {
                let pred = sf.predict_survival(x.row(r)).unwrap();
                assert!(pred.values().windows(2).all(|p| p[0] >= p[1]));
                pred.values()
                    .iter()
                    .zip(marginal.values())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        sups.sort_by(f64::total_cmp);
        assert!(sups[50] < 0.05, "median sup distance {}", sups[50]);
        assert!(sups[99] < 0.15, "largest sup distance {}", sups[99]);
    }

    #[test]
    fn exponential_rates_give_median_ratio_two() {
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let times: Vec<f64> = xs.iter().map(|&v| exp_draw(&mut rng, if v > 0.5 { 2.0 } else { 1.0 })).collect();
        let events = vec![true; n];
        let x = Matrix::from_row_major(n, 1, xs).unwrap();
        let g = TimeGrid::from_event_times(&times, &events, 3.0, 50).unwrap();
        let sf = SurvivalForest::fit(&x, &times, &events, g, &params(200)).unwrap();
        let median = |c: &StepFunction| {
            let k = c.values().iter().position(|&v| v <= 0.5).unwrap();
            c.grid().points()[k]
        };
        let m0 = median(&sf.predict_survival(&[0.0]).unwrap());
        let m1 = median(&sf.predict_survival(&[1.0]).unwrap());
        let ratio = m0 / m1;
        assert!((ratio - 2.0).abs() < 0.3, "median ratio {ratio}");
    }

    #[test]
    fn equal_hazard_children_do_not_split() {
        // Two covariate groups with identical event histories.
        let base = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let ev = [true, true, false, true, true, false, true, true];
        let mut times = Vec::new();
        let mut events = Vec::new();
        let mut xs = Vec::new();
        for g in 0..2 {
            for (t, e) in base.iter().zip(ev) {
                times.push(*t);
                events.push(e);
                xs.push(f64::from(g));
            }
        }
        let x = Matrix::from_row_major(xs.len(), 1, xs).unwrap();
        let grid = grid(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let (bins, counted): (Vec<usize>, Vec<bool>) =
            times.iter().zip(&events).map(|(&t, &e)| grid.position(t, e)).unzip();
        let criterion = LogRankCriterion {
            bins: &bins,
            events: &counted,
            k: grid.len(),
            min_node_size: 2,
        };
        let ids: Vec<u32> = (0..16).collect();
        let cols = Columns::new(&x);
        let mut scan = criterion.scan(&ids).unwrap();
        assert_eq!(best_split(&cols, &ids, &ids, &[0], 2, &mut scan), None);

        // Shifting one group's times makes the same split attractive.
        let shifted: Vec<usize> = bins.iter().enumerate().map(|(i, &b)| if i >= 8 { (b + 3).min(7) } else { b }).collect();
        let criterion = LogRankCriterion {
            bins: &shifted,
            events: &counted,
            k: grid.len(),
            min_node_size: 2,
        };
        let mut scan = criterion.scan(&ids).unwrap();
        let choice = best_split(&cols, &ids, &ids, &[0], 2, &mut scan).unwrap();
        assert_eq!(choice.feature, 0);
        assert_eq!(choice.threshold, 0.5);
    }
}
