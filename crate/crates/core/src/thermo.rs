//! Efficiency-fatigue utility model.
//!
//! Accuracy after `t` rounds is modelled as
//!
//! ```text
//! U(t) = 1 - (1 - p_g) * exp(-efficiency * (p_v - p_g) * (t - 1)) - fatigue * (t - 1)^2
//! ```
//!
//! so `U(1) = p_g`. The exponential term is the gain from peer
//! verification outpacing generation; the quadratic term is the cost of
//! a growing context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bounds of the coarse fitting grid.
pub const EFFICIENCY_RANGE: (f64, f64) = (0.1, 20.0);
pub const FATIGUE_RANGE: (f64, f64) = (0.0, 0.05);
/// Efficiency held fixed when the verification rate is fitted instead.
pub const DEFAULT_FIXED_EFFICIENCY: f64 = 1.0;

const GRID_EFFICIENCY: usize = 200;
const GRID_FATIGUE: usize = 101;
const GRID_GAP: usize = 200;
const REFINE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThermoError {
    #[error("round {0} is invalid; rounds start at 1")]
    InvalidRound(u32),
    #[error("need at least 4 points to fit, got {0}")]
    InsufficientData(usize),
    #[error("all observed accuracies are equal; R^2 is undefined")]
    DegenerateVariance,
    #[error("verification rate {p_v} does not exceed generation rate {p_g}")]
    NoSignalGap { p_g: f64, p_v: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoParams {
    pub p_g: f64,
    pub p_v: f64,
    pub efficiency: f64,
    pub fatigue: f64,
}

impl ThermoParams {
    pub fn new(p_g: f64, p_v: f64, efficiency: f64, fatigue: f64) -> Self {
        Self {
            p_g,
            p_v,
            efficiency,
            fatigue,
        }
    }

    pub fn gap(&self) -> f64 {
        self.p_v - self.p_g
    }

    /// Same as [`utility`] without the round check.
    fn eval(&self, t: f64) -> f64 {
        let s = t - 1.0;
        1.0 - (1.0 - self.p_g) * (-self.efficiency * self.gap() * s).exp() - self.fatigue * s * s
    }
}

/// Predicted accuracy after round `t`.
pub fn utility(t: u32, p: &ThermoParams) -> Result<f64, ThermoError> {
    if t < 1 {
        return Err(ThermoError::InvalidRound(t));
    }
    if t == 1 {
        return Ok(p.p_g);
    }
    Ok(p.eval(f64::from(t)))
}

/// Observed per-round accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<(u32, f64)>,
}

impl Trajectory {
    pub fn new(points: Vec<(u32, f64)>) -> Result<Self, ThermoError> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(ThermoError::InvalidTrajectory(format!(
                    "rounds not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        for &(t, y) in &points {
            if t < 1 {
                return Err(ThermoError::InvalidRound(t));
            }
            if !(0.0..=1.0).contains(&y) {
                return Err(ThermoError::InvalidTrajectory(format!(
                    "accuracy {y} at round {t} outside [0, 1]"
                )));
            }
        }
        Ok(Self { points })
    }

    /// Points at rounds `1..=n`.
    pub fn from_accuracies(acc: &[f64]) -> Result<Self, ThermoError> {
        Self::new(
            acc.iter()
                .enumerate()
                .map(|(i, &y)| (i as u32 + 1, y))
                .collect(),
        )
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_round(&self) -> u32 {
        self.points.last().map_or(0, |p| p.0)
    }
}

/// Which parameters the least-squares fit is free to move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FitMode {
    /// Verification rate known; fit efficiency and fatigue.
    KnownVerifier { p_v: f64 },
    /// Efficiency held fixed; fit the verification rate and fatigue.
    /// Only the product `efficiency * gap` is identifiable, so one factor
    /// has to be pinned.
    FitVerifier { efficiency: f64 },
}

/// Result of [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ThermoParams,
    /// Over all points.
    pub r_squared: f64,
    /// Excluding round 1, which the model pins to `p_g`.
    pub r_squared_tail: Option<f64>,
    pub sse: f64,
    pub t_opt: u32,
}

/// Fits efficiency and fatigue with `p_g` and `p_v` held fixed.
pub fn fit(traj: &Trajectory, p_g: f64, p_v: f64) -> Result<FitReport, ThermoError> {
    fit_with(traj, p_g, FitMode::KnownVerifier { p_v })
}

pub fn fit_with(traj: &Trajectory, p_g: f64, mode: FitMode) -> Result<FitReport, ThermoError> {
    if traj.len() < 4 {
        return Err(ThermoError::InsufficientData(traj.len()));
    }
    if !(0.0..=1.0).contains(&p_g) {
        return Err(ThermoError::InvalidParameter(format!("p_g = {p_g}")));
    }
    let ys: Vec<f64> = traj.points().iter().map(|p| p.1).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(ThermoError::DegenerateVariance);
    }

    let sse_of = |p: &ThermoParams| -> f64 {
        traj.points()
            .iter()
            .map(|&(t, y)| (y - p.eval(f64::from(t))).powi(2))
            .sum()
    };

    let params = match mode {
        FitMode::KnownVerifier { p_v } => {
            if !(p_v > p_g) || p_v > 1.0 {
                return Err(ThermoError::NoSignalGap { p_g, p_v });
            }
            let make = |x: [f64; 2]| ThermoParams::new(p_g, p_v, x[0], x[1]);
            let best = minimize_box(
                |x| sse_of(&make(x)),
                [EFFICIENCY_RANGE, FATIGUE_RANGE],
                [GRID_EFFICIENCY, GRID_FATIGUE],
            );
            make(best)
        }
        FitMode::FitVerifier { efficiency } => {
            if !(efficiency > 0.0) || !efficiency.is_finite() {
                return Err(ThermoError::InvalidParameter(format!(
                    "efficiency = {efficiency}"
                )));
            }
            let headroom = 1.0 - p_g;
            if !(headroom > 0.0) {
                return Err(ThermoError::NoSignalGap { p_g, p_v: 1.0 });
            }
            let make = |x: [f64; 2]| ThermoParams::new(p_g, p_g + x[0], efficiency, x[1]);
            let best = minimize_box(
                |x| sse_of(&make(x)),
                [(headroom * 1e-3, headroom), FATIGUE_RANGE],
                [GRID_GAP, GRID_FATIGUE],
            );
            make(best)
        }
    };

    let sse = sse_of(&params);
    let r_squared = 1.0 - sse / ss_tot;
    let tail: Vec<(u32, f64)> = traj.points().iter().copied().filter(|p| p.0 > 1).collect();
    let r_squared_tail = if tail.len() >= 2 {
        let m = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
        let tot: f64 = tail.iter().map(|p| (p.1 - m).powi(2)).sum();
        let res: f64 = tail
            .iter()
            .map(|&(t, y)| (y - params.eval(f64::from(t))).powi(2))
            .sum();
        (tot > 0.0).then(|| 1.0 - res / tot)
    } else {
        None
    };
    Ok(FitReport {
        params,
        r_squared,
        r_squared_tail,
        sse,
        t_opt: optimal_stop(&params, traj.last_round().max(1)),
    })
}

/// Grid search followed by pattern refinement inside a box.
fn minimize_box(
    f: impl Fn([f64; 2]) -> f64,
    bounds: [(f64, f64); 2],
    grid: [usize; 2],
) -> [f64; 2] {
    let axis = |k: usize, i: usize| {
        let (lo, hi) = bounds[k];
        lo + (hi - lo) * i as f64 / (grid[k] - 1) as f64
    };
    let mut best = [axis(0, 0), axis(1, 0)];
    let mut best_val = f(best);
    for i in 0..grid[0] {
        for j in 0..grid[1] {
            let x = [axis(0, i), axis(1, j)];
            let v = f(x);
            if v < best_val {
                best = x;
                best_val = v;
            }
        }
    }

    let width = [bounds[0].1 - bounds[0].0, bounds[1].1 - bounds[1].0];
    let mut step = [
        width[0] / (grid[0] - 1) as f64,
        width[1] / (grid[1] - 1) as f64,
    ];
    let clamp = |x: [f64; 2]| {
        [
            x[0].clamp(bounds[0].0, bounds[0].1),
            x[1].clamp(bounds[1].0, bounds[1].1),
        ]
    };
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    while step[0] > REFINE_TOL * width[0] || step[1] > REFINE_TOL * width[1] {
        let mut improved = false;
        for (dx, dy) in DIRS {
            let x = clamp([best[0] + dx * step[0], best[1] + dy * step[1]]);
            let v = f(x);
            if v < best_val {
                best = x;
                best_val = v;
                improved = true;
            }
        }
        if !improved {
            step[0] *= 0.5;
            step[1] *= 0.5;
        }
    }
    best
}

/// Round in `1..=t_max` with the highest predicted utility. Ties go to
/// the earlier round.
pub fn optimal_stop(p: &ThermoParams, t_max: u32) -> u32 {
    let mut best_t = 1;
    let mut best_u = p.p_g;
    for t in 2..=t_max.max(1) {
        let u = p.eval(f64::from(t));
        if u > best_u {
            best_t = t;
            best_u = u;
        }
    }
    best_t
}

/// Retention factor for round `t`: `gamma_base` before the optimal stop,
/// zero from then on.
pub fn decay_policy(t: u32, t_opt: u32, gamma_base: f64) -> f64 {
    if t < t_opt {
        gamma_base
    } else {
        0.0
    }
}

/// An ensemble can only improve by voting if its mean verifier beats a
/// coin flip.
pub fn condorcet_gate(p_v_mean: f64) -> bool {
    p_v_mean > 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mediocre() -> ThermoParams {
        ThermoParams::new(0.675, 0.675 + 0.0578, 4.31, 0.0029)
    }

    fn high_perf() -> ThermoParams {
        ThermoParams::new(0.787, 0.787 + 0.068, 3.90, 0.0020)
    }

    #[test]
    fn round_one_is_generation_rate() {
        assert_eq!(utility(1, &mediocre()).unwrap(), 0.675);
        assert_eq!(utility(0, &mediocre()), Err(ThermoError::InvalidRound(0)));
    }

    #[test]
    fn mediocre_curve_at_six() {
        let u = utility(6, &mediocre()).unwrap();
        assert!((u - 0.834).abs() < 0.002, "{u}");
    }

    #[test]
    fn fatigue_free_limit_is_one() {
        let p = ThermoParams::new(0.5, 0.9, 2.0, 0.0);
        assert!((utility(200, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_stop_examples() {
        assert_eq!(optimal_stop(&mediocre(), 7), 6);
        assert_eq!(optimal_stop(&high_perf(), 7), 5);
        let p = ThermoParams::new(0.6, 0.8, 2.0, 0.0);
        assert_eq!(optimal_stop(&p, 9), 9);
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay_policy(3, 6, 0.8), 0.8);
        assert_eq!(decay_policy(6, 6, 0.8), 0.0);
        for t in 1..10 {
            assert_eq!(decay_policy(t, 6, 0.0), 0.0);
        }
    }

    #[test]
    fn gate_examples() {
        assert!(condorcet_gate(0.75));
        assert!(!condorcet_gate(0.5));
        assert!(!condorcet_gate(0.49));
    }

    #[test]
    fn noise_free_round_trip() {
        let gen = ThermoParams::new(0.675, 0.7328, 4.0, 0.003);
        let acc: Vec<f64> = (1..=7).map(|t| utility(t, &gen).unwrap()).collect();
        let traj = Trajectory::from_accuracies(&acc).unwrap();
        let r = fit(&traj, gen.p_g, gen.p_v).unwrap();
        assert!((r.params.efficiency - 4.0).abs() / 4.0 < 0.01, "{r:?}");
        assert!((r.params.fatigue - 0.003).abs() / 0.003 < 0.05, "{r:?}");
        assert!(r.r_squared > 0.999);
    }

    #[test]
    fn fit_verifier_round_trip() {
        let gen = ThermoParams::new(0.6, 0.7, 1.0, 0.002);
        let acc: Vec<f64> = (1..=7).map(|t| utility(t, &gen).unwrap()).collect();
        let traj = Trajectory::from_accuracies(&acc).unwrap();
        let r = fit_with(&traj, 0.6, FitMode::FitVerifier { efficiency: 1.0 }).unwrap();
        assert!((r.params.p_v - 0.7).abs() < 1e-3, "{r:?}");
        assert!(r.r_squared > 0.999);
    }

    #[test]
    fn fit_errors() {
        let short = Trajectory::from_accuracies(&[0.5, 0.6, 0.7]).unwrap();
        assert_eq!(fit(&short, 0.5, 0.7), Err(ThermoError::InsufficientData(3)));
        let flat = Trajectory::from_accuracies(&[0.5; 5]).unwrap();
        assert_eq!(fit(&flat, 0.5, 0.7), Err(ThermoError::DegenerateVariance));
        let ok = Trajectory::from_accuracies(&[0.5, 0.6, 0.7, 0.72]).unwrap();
        assert!(matches!(
            fit(&ok, 0.5, 0.5),
            Err(ThermoError::NoSignalGap { .. })
        ));
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![(1, 0.5), (1, 0.6)]).is_err());
        assert!(Trajectory::new(vec![(1, 1.5)]).is_err());
        assert!(Trajectory::new(vec![(0, 0.5)]).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let traj =
            Trajectory::from_accuracies(&[0.68, 0.74, 0.79, 0.82, 0.83, 0.84, 0.81]).unwrap();
        let a = fit(&traj, 0.675, 0.7328).unwrap();
        let b = fit(&traj, 0.675, 0.7328).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn larger_fatigue_never_delays_stop() {
        for pg in [0.3, 0.5, 0.675, 0.8] {
            for gap in [0.02, 0.06, 0.15] {
                for eff in [0.5, 2.0, 4.31, 10.0] {
                    let mut prev = u32::MAX;
                    for k in 0..60 {
                        let beta = k as f64 * 0.001;
                        let t = optimal_stop(&ThermoParams::new(pg, pg + gap, eff, beta), 12);
                        assert!(t <= prev, "pg={pg} gap={gap} eff={eff} beta={beta}");
                        prev = t;
                    }
                }
            }
        }
    }

    fn valid_params() -> impl Strategy<Value = ThermoParams> {
        (0.0f64..0.99, 0.001f64..0.5, 0.1f64..20.0, 0.0f64..0.05)
            .prop_map(|(pg, gap, eff, beta)| ThermoParams::new(pg, (pg + gap).min(1.0), eff, beta))
    }

    proptest! {
        #[test]
        fn utility_at_one_is_exact(p in valid_params()) {
            prop_assert_eq!(utility(1, &p).unwrap(), p.p_g);
        }

        #[test]
        fn efficiency_derivative_nonnegative(p in valid_params(), t in 1u32..15) {
            let h = 1e-6;
            let up = ThermoParams { efficiency: p.efficiency + h, ..p };
            let d = (utility(t, &up).unwrap() - utility(t, &p).unwrap()) / h;
            prop_assert!(d >= -1e-6);
        }

        #[test]
        fn stop_within_budget(p in valid_params(), t_max in 1u32..20) {
            let t = optimal_stop(&p, t_max);
            prop_assert!((1..=t_max).contains(&t));
        }

        #[test]
        fn decay_zero_from_stop(t_opt in 1u32..20, extra in 0u32..20, g in 0.0f64..=1.0) {
            prop_assert_eq!(decay_policy(t_opt + extra, t_opt, g), 0.0);
        }
    }
}
