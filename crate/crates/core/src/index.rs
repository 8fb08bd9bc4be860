//! Decoupled single-arm problems and Whittle indices.
//!
//! For a multiplier `lambda` the max-direction problem rewards `r - lambda*c`
//! and the min-direction problem rewards `lambda*r - c`. The two are related by
//! `V_max(s,a,lambda) = lambda * V_min(s,a,1/lambda)`, so the max index
//! `lambda_plus` and the min index `lambda_minus` are reciprocals whenever
//! both are positive.
//!
//! Both index definitions use the strict comparison `V(s,0) > V(s,1)`, so a
//! state where the two actions tie is not counted as passive-optimal when
//! locating the crossing.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{check_beta, sample_next, ArmSpec, ACTIVE, PASSIVE};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 256;

/// Upper limit on bracket growth before an index is declared infinite.
const BRACKET_LIMIT: f64 = 1e12;
const MAX_SWEEPS: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Max,
    Min,
}

/// State-action values of a decoupled problem at one multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    q: Vec<[f64; 2]>,
    pub lambda: f64,
    pub direction: Direction,
}

impl ValueFunction {
    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q[state][action]
    }

    pub fn value(&self, state: usize) -> f64 {
        self.q[state][0].max(self.q[state][1])
    }

    /// True when passive is strictly better than active in `state`.
    pub fn passive_preferred(&self, state: usize) -> bool {
        self.q[state][PASSIVE] > self.q[state][ACTIVE]
    }

    pub fn num_states(&self) -> usize {
        self.q.len()
    }
}

/// Value iteration on one arm. Keeps its last state-value vector so that
/// repeated solves at nearby multipliers start close to the fixed point.
struct Solver<'a> {
    arm: &'a ArmSpec,
    beta: f64,
    tol: f64,
    mean_reward: Vec<[f64; 2]>,
    v: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(arm: &'a ArmSpec, beta: f64, tol: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(tol > 0.0) {
            return Err(Error::arg(format!("tolerance must be positive, got {tol}")));
        }
        let n = arm.num_states();
        let mean_reward = (0..n)
            .map(|s| [arm.reward(s, PASSIVE).mean(), arm.reward(s, ACTIVE).mean()])
            .collect();
        Ok(Solver {
            arm,
            beta,
            tol,
            mean_reward,
            v: vec![0.0; n],
        })
    }

    fn immediate(&self, s: usize, a: usize, lambda: f64, dir: Direction) -> f64 {
        let r = self.mean_reward[s][a];
        let c = self.arm.cost(a == ACTIVE);
        match dir {
            Direction::Max => r - lambda * c,
            Direction::Min => lambda * r - c,
        }
    }

    fn backup(&self, v: &[f64], s: usize, a: usize, lambda: f64, dir: Direction) -> f64 {
        let cont: f64 = self
            .arm
            .transitions(s, a)
            .iter()
            .map(|&(next, p)| p * v[next])
            .sum();
        self.immediate(s, a, lambda, dir) + self.beta * cont
    }

    /// Iterates until successive sweeps differ by less than
    /// `tol(1-beta)/(2 beta)`, which bounds the returned Q error by `tol`.
    fn solve(&mut self, lambda: f64, dir: Direction) -> Result<Vec<[f64; 2]>> {
        let n = self.arm.num_states();
        let stop = self.tol * (1.0 - self.beta) / (2.0 * self.beta);
        let mut next = vec![0.0; n];
        let mut sweeps = 0;
        loop {
            let mut diff: f64 = 0.0;
            for (s, slot) in next.iter_mut().enumerate() {
                let best = self
                    .backup(&self.v, s, PASSIVE, lambda, dir)
                    .max(self.backup(&self.v, s, ACTIVE, lambda, dir));
                diff = diff.max((best - self.v[s]).abs());
                *slot = best;
            }
            std::mem::swap(&mut self.v, &mut next);
            sweeps += 1;
            if diff < stop {
                break;
            }
            if !diff.is_finite() || sweeps > MAX_SWEEPS {
                return Err(Error::arg(format!(
                    "value iteration did not converge for arm {} at lambda {lambda}",
                    self.arm.id()
                )));
            }
        }
        Ok((0..n)
            .map(|s| {
                [
                    self.backup(&self.v, s, PASSIVE, lambda, dir),
                    self.backup(&self.v, s, ACTIVE, lambda, dir),
                ]
            })
            .collect())
    }

    fn passive_preferred(&mut self, state: usize, lambda: f64, dir: Direction) -> Result<bool> {
        let q = self.solve(lambda, dir)?;
        Ok(q[state][PASSIVE] > q[state][ACTIVE])
    }
}

/// Solves the decoupled problem for one arm at multiplier `lambda`.
pub fn solve_decoupled(
    arm: &ArmSpec,
    lambda: f64,
    beta: f64,
    direction: Direction,
    tol: f64,
) -> Result<ValueFunction> {
    if !lambda.is_finite() {
        return Err(Error::arg(format!("lambda must be finite, got {lambda}")));
    }
    if direction == Direction::Min && lambda < 0.0 {
        return Err(Error::arg(
            "the min-direction multiplier must be nonnegative",
        ));
    }
    let mut solver = Solver::new(arm, beta, tol)?;
    let q = solver.solve(lambda, direction)?;
    Ok(ValueFunction {
        q,
        lambda,
        direction,
    })
}

/// Initial bracket for the max-direction bisection.
fn max_bracket(arm: &ArmSpec) -> f64 {
    arm.max_abs_reward() / arm.cost1().min(1.0) + 1.0
}

/// Max-direction Whittle index: the smallest multiplier at which passive is
/// strictly optimal in `state`. Found by bisection to interval width `tol`.
///
/// Returns `+inf` when passive never becomes strictly optimal (zero-cost arms
/// whose active action is at least as good) and `0` when passive is already
/// strictly optimal at zero or the crossing lies within the first `tol` of zero.
pub fn whittle_max(arm: &ArmSpec, state: usize, beta: f64, tol: f64) -> Result<f64> {
    arm.check_state(state)?;
    let mut solver = Solver::new(arm, beta, tol)?;
    let dir = Direction::Max;
    if solver.passive_preferred(state, 0.0, dir)? {
        return Ok(0.0);
    }
    if arm.cost1() == 0.0 {
        // the multiplier only scales a zero cost
        return Ok(f64::INFINITY);
    }
    let mut hi = max_bracket(arm);
    while !solver.passive_preferred(state, hi, dir)? {
        // multi-state arms can need more than the one-step ratio
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if solver.passive_preferred(state, mid, dir)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if lo == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 * (lo + hi))
}

/// Min-direction Whittle index computed directly: the largest multiplier at
/// which passive is strictly optimal in the min-direction problem.
pub fn whittle_min(arm: &ArmSpec, state: usize, beta: f64, tol: f64) -> Result<f64> {
    arm.check_state(state)?;
    let mut solver = Solver::new(arm, beta, tol)?;
    let dir = Direction::Min;
    if !solver.passive_preferred(state, 0.0, dir)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while solver.passive_preferred(state, hi, dir)? {
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if solver.passive_preferred(state, mid, dir)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `lambda_minus = 1 / lambda_plus`, with `1/0 = +inf` and `1/inf = 0`.
pub fn whittle_min_from_max(lambda_plus: f64) -> Result<f64> {
    if lambda_plus.is_nan() || lambda_plus < 0.0 {
        return Err(Error::arg(format!(
            "max index must be nonnegative, got {lambda_plus}"
        )));
    }
    if lambda_plus == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / lambda_plus)
}

/// One row of an [`IndexTable`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexEntry {
    pub arm_id: usize,
    pub state: usize,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// Max and min indices for a set of `(arm, state)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexTable {
    pub entries: Vec<IndexEntry>,
}

impl IndexTable {
    /// Indices for every state of every arm.
    pub fn compute(arms: &[ArmSpec], beta: f64, tol: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for arm in arms {
            for state in 0..arm.num_states() {
                let lambda_plus = whittle_max(arm, state, beta, tol)?;
                entries.push(IndexEntry {
                    arm_id: arm.id(),
                    state,
                    lambda_plus,
                    lambda_minus: whittle_min_from_max(lambda_plus)?,
                });
            }
        }
        Ok(IndexTable { entries })
    }

    pub fn get(&self, arm_id: usize, state: usize) -> Option<&IndexEntry> {
        self.entries
            .iter()
            .find(|e| e.arm_id == arm_id && e.state == state)
    }

    pub const CSV_HEADER: &'static str = "arm_id,state,lambda_plus,lambda_minus";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{}",
                e.arm_id, e.state, e.lambda_plus, e.lambda_minus
            )?;
        }
        Ok(())
    }
}

/// A pair of adjacent grid points where the passive-optimality predicate
/// flips the wrong way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexabilityViolation {
    pub state: usize,
    pub lambda: f64,
    pub lambda_next: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexabilityReport {
    pub direction: Direction,
    pub indexable_on_grid: bool,
    pub violations: Vec<IndexabilityViolation>,
}

/// `n` evenly spaced multipliers on `[0, hi]`, with `hi` the max-direction
/// bisection bracket of the arm.
pub fn default_grid(arm: &ArmSpec, n: usize) -> Vec<f64> {
    let hi = max_bracket(arm);
    let n = n.max(2);
    (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect()
}

/// Grid check of max-direction indexability: in every state the predicate
/// "passive strictly optimal" must switch from false to true at most once as
/// `lambda` increases along the grid.
pub fn check_indexability(
    arm: &ArmSpec,
    beta: f64,
    lambda_grid: &[f64],
) -> Result<IndexabilityReport> {
    check_grid(lambda_grid)?;
    grid_report(arm, beta, lambda_grid, Direction::Max)
}

/// The same check on the min-direction problem, where passive optimality must
/// switch from true to false at most once. The grid is `lambda_grid` mapped
/// through `1/lambda` (zero entries are dropped), so that both directions
/// inspect corresponding multipliers.
pub fn check_indexability_min(
    arm: &ArmSpec,
    beta: f64,
    lambda_grid: &[f64],
) -> Result<IndexabilityReport> {
    check_grid(lambda_grid)?;
    let mut grid: Vec<f64> = lambda_grid
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| 1.0 / l)
        .collect();
    grid.reverse();
    if grid.is_empty() {
        return Err(Error::arg("grid has no positive multipliers"));
    }
    grid_report(arm, beta, &grid, Direction::Min)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::arg("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::arg("lambda grid must be finite and nonnegative"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("lambda grid must be ascending"));
    }
    Ok(())
}

fn grid_report(
    arm: &ArmSpec,
    beta: f64,
    grid: &[f64],
    direction: Direction,
) -> Result<IndexabilityReport> {
    let n = arm.num_states();
    let mut solver = Solver::new(arm, beta, 1e-9)?;
    let mut preds: Vec<Vec<bool>> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let q = solver.solve(lambda, direction)?;
        preds.push((0..n).map(|s| q[s][PASSIVE] > q[s][ACTIVE]).collect());
    }
    let mut violations = Vec::new();
    for state in 0..n {
        for w in 0..grid.len().saturating_sub(1) {
            let (now, next) = (preds[w][state], preds[w + 1][state]);
            let bad = match direction {
                Direction::Max => now && !next,
                Direction::Min => !now && next,
            };
            if bad {
                violations.push(IndexabilityViolation {
                    state,
                    lambda: grid[w],
                    lambda_next: grid[w + 1],
                });
            }
        }
    }
    Ok(IndexabilityReport {
        direction,
        indexable_on_grid: violations.is_empty(),
        violations,
    })
}

/// Step sizes for the two-timescale learner: `fast(k) = 1/ceil(k/fast_block)`
/// for the Q update and `slow(k) = 1/(1 + k ln k / slow_scale)` for the
/// multiplier update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizeSchedule {
    pub fast_block: f64,
    pub slow_scale: f64,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        StepSizeSchedule {
            fast_block: 100.0,
            slow_scale: 500.0,
        }
    }
}

impl StepSizeSchedule {
    pub fn fast(&self, k: u64) -> f64 {
        1.0 / (k as f64 / self.fast_block).ceil().max(1.0)
    }

    pub fn slow(&self, k: u64) -> f64 {
        let k = k as f64;
        1.0 / (1.0 + k * k.max(1.0).ln() / self.slow_scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QwiConfig {
    pub schedule: StepSizeSchedule,
    pub initial_lambda: f64,
    /// Multipliers that climb past this value are reported as `+inf`.
    pub lambda_cap: f64,
}

impl Default for QwiConfig {
    fn default() -> Self {
        QwiConfig {
            schedule: StepSizeSchedule::default(),
            initial_lambda: 1.0,
            lambda_cap: 100.0,
        }
    }
}

/// Learned min-direction index estimates, one per state.
#[derive(Clone, Debug, PartialEq)]
pub struct QwiEstimate {
    pub lambda_minus: Vec<f64>,
    pub updates: usize,
}

/// Tabular two-timescale Q-learning of min-direction indices.
///
/// For every reference state `s` the learner keeps a Q table of the
/// min-direction problem at its own multiplier `lambda_s`. A single trajectory
/// with uniformly random actions feeds all tables; whenever the trajectory
/// visits `s`, `lambda_s` moves by `slow(k) * (Q_s(s,0) - Q_s(s,1))`, which
/// pushes it toward the point where both actions are equally good.
pub fn qwi_tabular<R: Rng + ?Sized>(
    arm: &ArmSpec,
    beta: f64,
    updates: usize,
    config: &QwiConfig,
    rng: &mut R,
) -> Result<QwiEstimate> {
    check_beta(beta)?;
    if updates == 0 {
        return Err(Error::arg("at least one update is required"));
    }
    let n = arm.num_states();
    let mut q = vec![vec![[0.0f64; 2]; n]; n];
    let mut lambda = vec![config.initial_lambda; n];
    let mut capped = vec![false; n];
    let mut pair_visits = vec![[0u64; 2]; n];
    let mut state_visits = vec![0u64; n];
    let mut x = 0;
    for _ in 0..updates {
        let a = usize::from(rng.gen_bool(0.5));
        let r = arm.reward(x, a).sample(rng);
        let next = sample_next(arm, x, a, rng);
        let c = arm.cost(a == ACTIVE);
        pair_visits[x][a] += 1;
        let alpha = config.schedule.fast(pair_visits[x][a]);
        for s in 0..n {
            if capped[s] {
                continue;
            }
            let table = &mut q[s];
            let best_next = table[next][0].max(table[next][1]);
            let target = lambda[s] * r - c + beta * best_next;
            table[x][a] += alpha * (target - table[x][a]);
        }
        if !capped[x] {
            state_visits[x] += 1;
            let b = config.schedule.slow(state_visits[x]);
            let gap = q[x][x][PASSIVE] - q[x][x][ACTIVE];
            lambda[x] = (lambda[x] + b * gap).max(0.0);
            if lambda[x] > config.lambda_cap {
                capped[x] = true;
                lambda[x] = f64::INFINITY;
            }
        }
        x = next;
    }
    Ok(QwiEstimate {
        lambda_minus: lambda,
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RewardDist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bern(p: f64, r: f64) -> ArmSpec {
        ArmSpec::single_state_bernoulli(0, p, r, 1.0).unwrap()
    }

    fn zero_reward_two_state() -> ArmSpec {
        ArmSpec::new(
            0,
            vec![
                [vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
                [vec![(0, 1.0)], vec![(0, 0.3), (1, 0.7)]],
            ],
            vec![
                [RewardDist::point(0.0), RewardDist::point(0.0)],
                [RewardDist::point(0.0), RewardDist::point(0.0)],
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_state_max_value_closed_form() {
        let arm = bern(0.5, 2.0);
        let vf = solve_decoupled(&arm, 0.5, 0.9, Direction::Max, 1e-6).unwrap();
        // max(0, p r - lambda) / (1 - beta)
        assert!((vf.q(0, ACTIVE) - 5.0).abs() < 1e-6);
        let vf = solve_decoupled(&arm, 1.0, 0.9, Direction::Max, 1e-6).unwrap();
        assert!(vf.q(0, ACTIVE).abs() < 1e-6);
        assert!(vf.q(0, PASSIVE).abs() < 1e-6);
    }

    #[test]
    fn zero_reward_min_direction() {
        let arm = zero_reward_two_state();
        for lambda in [0.0, 0.7, 5.0] {
            let vf = solve_decoupled(&arm, lambda, 0.9, Direction::Min, 1e-8).unwrap();
            for s in 0..2 {
                assert!(vf.q(s, ACTIVE) <= vf.q(s, PASSIVE));
                assert!(vf.value(s).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn solve_rejects_bad_tolerance() {
        let arm = bern(0.5, 2.0);
        assert!(solve_decoupled(&arm, 1.0, 0.9, Direction::Max, 0.0).is_err());
        assert!(solve_decoupled(&arm, -1.0, 0.9, Direction::Min, 1e-6).is_err());
    }

    #[test]
    fn whittle_max_examples() {
        let tol = 1e-6;
        assert!((whittle_max(&bern(0.5, 2.0), 0, 0.9, tol).unwrap() - 1.0).abs() < tol);
        assert!((whittle_max(&bern(1.0, 7.0), 0, 0.9, tol).unwrap() - 7.0).abs() < tol);
        assert_eq!(
            whittle_max(&zero_reward_two_state(), 0, 0.9, tol).unwrap(),
            0.0
        );
    }

    #[test]
    fn whittle_max_zero_cost_is_infinite() {
        let arm = ArmSpec::single_state_bernoulli(0, 0.5, 2.0, 0.0).unwrap();
        assert_eq!(whittle_max(&arm, 0, 0.9, 1e-6).unwrap(), f64::INFINITY);
    }

    #[test]
    fn min_from_max_examples() {
        assert_eq!(whittle_min_from_max(1.0).unwrap(), 1.0);
        let r = 3.0;
        assert!((whittle_min_from_max(10.0 * r).unwrap() - 1.0 / (10.0 * r)).abs() < 1e-15);
        assert_eq!(whittle_min_from_max(0.0).unwrap(), f64::INFINITY);
        assert!(whittle_min_from_max(-1.0).is_err());
    }

    #[test]
    fn direct_min_index_matches_reciprocal() {
        let arm = bern(0.4, 3.0);
        let lm = whittle_min(&arm, 0, 0.9, 1e-7).unwrap();
        assert!((lm - 1.0 / 1.2).abs() < 2e-7);
        assert_eq!(
            whittle_min(&zero_reward_two_state(), 0, 0.9, 1e-6).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn indexability_examples() {
        let arm = bern(0.5, 2.0);
        let grid: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 / 49.0).collect();
        assert!(
            check_indexability(&arm, 0.9, &grid)
                .unwrap()
                .indexable_on_grid
        );
        assert!(
            check_indexability_min(&arm, 0.9, &grid)
                .unwrap()
                .indexable_on_grid
        );

        let flat = ArmSpec::new(
            0,
            vec![[vec![(0, 1.0)], vec![(0, 1.0)]]],
            vec![[RewardDist::point(1.0), RewardDist::point(1.0)]],
            0.0,
        )
        .unwrap();
        let report = check_indexability(&flat, 0.9, &grid).unwrap();
        assert!(report.indexable_on_grid);
        assert!(check_indexability(&flat, 0.9, &[]).is_err());
        assert!(check_indexability(&flat, 0.9, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn step_sizes() {
        let s = StepSizeSchedule::default();
        assert_eq!(s.fast(1), 1.0);
        assert_eq!(s.fast(100), 1.0);
        assert_eq!(s.fast(101), 0.5);
        assert_eq!(s.slow(1), 1.0);
        assert!(s.slow(1000) < s.slow(10));
    }

    #[test]
    fn qwi_zero_reward_flags_infinite() {
        let arm = ArmSpec::single_state_bernoulli(0, 0.5, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let est = qwi_tabular(&arm, 0.9, 50_000, &QwiConfig::default(), &mut rng).unwrap();
        assert_eq!(est.lambda_minus[0], f64::INFINITY);
    }

    #[test]
    fn index_table_csv() {
        let arms = vec![bern(0.5, 2.0), bern(1.0, 0.0).with_id(1)];
        let table = IndexTable::compute(&arms, 0.9, 1e-6).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], IndexTable::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with(",0,inf"));
        let e = table.get(0, 0).unwrap();
        assert!((e.lambda_plus * e.lambda_minus - 1.0).abs() < 1e-12);
    }
}
