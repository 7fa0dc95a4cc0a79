//! Event-driven simulation of the Moran model with strong selection over
//! mutation types and a weak-selection killing mechanism between two
//! allele groups.
//!
//! The population is stored as counts per (type, group, early-flag) cell,
//! never as individuals: every rule of the model depends only on counts and
//! exchangeability within a cell, which is what makes N = 10^6 runs cheap.
//! Events are drawn by an exact Gillespie scheme with the single aggregate
//! rate `N (1 + mu)`; there is no tau-leaping and no time discretization.

mod registry;

pub use registry::{DuplicateTau, TauRecord, TauRegistry};

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{default_early_window_constant, DerivedScalings, ModelParams};
use crate::seed::rng_from_seed;

/// Cell index within a type: group X/Y crossed with the early flag.
pub const CELL_X_NONEARLY: u8 = 0;
pub const CELL_X_EARLY: u8 = 1;
pub const CELL_Y_NONEARLY: u8 = 2;
pub const CELL_Y_EARLY: u8 = 3;

pub fn cell_is_y(cell: u8) -> bool {
    cell >= 2
}

pub fn cell_is_early(cell: u8) -> bool {
    cell & 1 == 1
}

#[derive(Debug, Error)]
pub enum MoranError {
    #[error("all fitness factors clipped to zero; model degenerate at mean type {mean_type}")]
    TotalFitnessZero { mean_type: f64 },
    #[error("no new threshold crossing for {elapsed:.1} time units (limit {limit:.1}); parameters degenerate")]
    TauStalled { elapsed: f64, limit: f64 },
    #[error("type index {0} exceeded the configured cap {1}")]
    TypeCapExceeded(u32, u32),
    #[error("group marking expects the fittest-type count to equal the threshold {expected}, found {found}")]
    MarkCountMismatch { expected: u64, found: u64 },
    #[error("group labels already assigned")]
    AlreadyLabeled,
    #[error(transparent)]
    DuplicateTau(#[from] DuplicateTau),
}

/// Per-type counts split by group and early flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBlock {
    pub x_nonearly: u64,
    pub x_early: u64,
    pub y_nonearly: u64,
    pub y_early: u64,
}

impl CellBlock {
    pub fn total(&self) -> u64 {
        self.x_nonearly + self.x_early + self.y_nonearly + self.y_early
    }

    pub fn x(&self) -> u64 {
        self.x_nonearly + self.x_early
    }

    pub fn y(&self) -> u64 {
        self.y_nonearly + self.y_early
    }

    pub fn early(&self) -> u64 {
        self.x_early + self.y_early
    }

    fn get_mut(&mut self, cell: u8) -> &mut u64 {
        match cell {
            CELL_X_NONEARLY => &mut self.x_nonearly,
            CELL_X_EARLY => &mut self.x_early,
            CELL_Y_NONEARLY => &mut self.y_nonearly,
            _ => &mut self.y_early,
        }
    }

    fn cell_from_offset(&self, mut offset: u64) -> u8 {
        if offset < self.x_nonearly {
            return CELL_X_NONEARLY;
        }
        offset -= self.x_nonearly;
        if offset < self.x_early {
            return CELL_X_EARLY;
        }
        offset -= self.x_early;
        if offset < self.y_nonearly {
            return CELL_Y_NONEARLY;
        }
        CELL_Y_EARLY
    }
}

/// Population state over the active window of types.
///
/// The window is the contiguous type range `[lo, lo + cells.len())`; both
/// edges are trimmed as soon as their counts hit zero. `sum_jw` caches
/// `sum_j j W_j` in exact integer arithmetic, so the mean type carries no
/// float drift; the integral of the mean type is accumulated with Kahan
/// compensation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationState {
    n: u64,
    lo: u32,
    cells: Vec<CellBlock>,
    w: Vec<u64>,
    /// Running total maintained by every count update; asserted equal to
    /// `n` after every event.
    total: u64,
    clock: f64,
    sum_jw: u64,
    int_mean: f64,
    int_mean_comp: f64,
    labeled: bool,
}

impl PopulationState {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn labeled(&self) -> bool {
        self.labeled
    }

    /// Lowest active type.
    pub fn lo_type(&self) -> u32 {
        self.lo
    }

    /// Highest active type.
    pub fn hi_type(&self) -> u32 {
        self.lo + self.cells.len() as u32 - 1
    }

    pub fn mean_type(&self) -> f64 {
        self.sum_jw as f64 / self.n as f64
    }

    /// Integral of the mean type from time 0 to the current clock.
    pub fn int_mean_type(&self) -> f64 {
        self.int_mean
    }

    pub fn w_of(&self, t: u32) -> u64 {
        if t < self.lo {
            return 0;
        }
        self.w.get((t - self.lo) as usize).copied().unwrap_or(0)
    }

    pub fn cells_of(&self, t: u32) -> CellBlock {
        if t < self.lo {
            return CellBlock::default();
        }
        self.cells
            .get((t - self.lo) as usize)
            .copied()
            .unwrap_or_default()
    }

    /// (type, count) pairs over the active window.
    pub fn w_row(&self) -> Vec<(u32, u64)> {
        self.w
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0)
            .map(|(i, w)| (self.lo + i as u32, *w))
            .collect()
    }

    pub fn total_count(&self) -> u64 {
        self.w.iter().sum()
    }

    fn advance_clock(&mut self, dt: f64) {
        // Kahan-compensated accumulation of the mean-type integral.
        let term = self.mean_type() * dt - self.int_mean_comp;
        let next = self.int_mean + term;
        self.int_mean_comp = (next - self.int_mean) - term;
        self.int_mean = next;
        self.clock += dt;
    }

    /// Uniform draw over the N individuals, resolved to (type, cell).
    fn pick_uniform_individual<R: Rng>(&self, rng: &mut R) -> (u32, u8) {
        let mut target = rng.gen_range(0..self.n);
        for (i, &w) in self.w.iter().enumerate() {
            if target < w {
                let t = self.lo + i as u32;
                return (t, self.cells[i].cell_from_offset(target));
            }
            target -= w;
        }
        unreachable!("cell counts sum to N");
    }

    fn idx(&self, t: u32) -> usize {
        debug_assert!(t >= self.lo);
        (t - self.lo) as usize
    }

    /// Ensure type `t` has storage (must be at most one past the window).
    fn ensure_type(&mut self, t: u32) {
        debug_assert!(t >= self.lo);
        if (t - self.lo) as usize == self.cells.len() {
            self.cells.push(CellBlock::default());
            self.w.push(0);
        }
        debug_assert!(((t - self.lo) as usize) < self.cells.len());
    }

    fn bump(&mut self, t: u32, cell: u8, delta: i64) {
        debug_assert!(delta == 1 || delta == -1);
        let i = self.idx(t);
        let slot = self.cells[i].get_mut(cell);
        if delta > 0 {
            *slot += 1;
            self.w[i] += 1;
            self.total += 1;
            self.sum_jw += t as u64;
        } else {
            debug_assert!(*slot >= 1);
            *slot -= 1;
            self.w[i] -= 1;
            self.total -= 1;
            self.sum_jw -= t as u64;
        }
    }

    fn trim(&mut self) {
        while self.w.first() == Some(&0) {
            self.w.remove(0);
            self.cells.remove(0);
            self.lo += 1;
        }
        while self.w.len() > 1 && self.w.last() == Some(&0) {
            self.w.pop();
            self.cells.pop();
        }
    }

    /// Exact recount of the cached aggregates; used by the periodic audit.
    pub fn audit(&self) -> bool {
        let total: u64 = self.cells.iter().map(|c| c.total()).sum();
        let sum_jw: u64 = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| (self.lo as u64 + i as u64) * c.total())
            .sum();
        let w_ok = self
            .w
            .iter()
            .zip(&self.cells)
            .all(|(w, c)| *w == c.total());
        total == self.n && total == self.total && sum_jw == self.sum_jw && w_ok
    }
}

/// Engine knobs that are not model parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunOptions {
    /// Coefficient of the `ln(1/(s q))` term in the early-window length.
    pub early_c1: f64,
    /// Additive constant in the early-window length.
    pub early_c2: f64,
    /// Abort when any type index exceeds this cap.
    pub type_cap: u32,
    /// Time between grid checkpoints; threshold crossings always emit a
    /// checkpoint as well.
    pub checkpoint_stride: f64,
}

impl RunOptions {
    pub fn for_model(params: &ModelParams, scalings: &DerivedScalings) -> Self {
        RunOptions {
            early_c1: 1.0,
            early_c2: default_early_window_constant(params.t_end),
            type_cap: (4.0 * params.t_end * scalings.k_n).ceil() as u32 + 64,
            checkpoint_stride: scalings.a_n / (12.0 * scalings.k_n),
        }
    }
}

/// Totals of the event categories over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub deaths: u64,
    pub mutations: u64,
    pub killings: u64,
    /// Killing probabilities that exceeded 1 and were clamped.
    pub kill_prob_clamped: u64,
    /// Parent-sampling passes that saw a clipped (zero) fitness factor.
    pub fitness_clip_events: u64,
    pub total: u64,
}

/// One simulation event, with its timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Death {
        victim_type: u32,
        victim_cell: u8,
        parent_type: u32,
        parent_cell: u8,
    },
    Mutation {
        from_type: u32,
        cell: u8,
    },
    Killing {
        from_type: u32,
    },
}

/// Outcome of one event step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub event: Event,
    /// Row index recorded by this event's threshold crossing, if any.
    pub new_tau: Option<u32>,
}

/// All individuals start as type 0, group X, non-early, at time 0.
pub fn init_population(params: &ModelParams, _scalings: &DerivedScalings) -> PopulationState {
    PopulationState {
        n: params.n,
        lo: 0,
        cells: vec![CellBlock {
            x_nonearly: params.n,
            ..CellBlock::default()
        }],
        w: vec![params.n],
        total: params.n,
        clock: 0.0,
        sum_jw: 0,
        int_mean: 0.0,
        int_mean_comp: 0.0,
        labeled: false,
    }
}

/// Total selection weight `sum_j W_j max(1 + s(j - M), 0)`.
///
/// Equals N exactly whenever every active type has a positive factor; the
/// engine uses that identity as its fast path and this function as the
/// cross-check and the slow path.
pub fn total_fitness(state: &PopulationState, s: f64) -> f64 {
    let m = state.mean_type();
    state
        .w
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let fit = 1.0 + s * ((state.lo + i as u32) as f64 - m);
            w as f64 * fit.max(0.0)
        })
        .sum()
}

/// Fitness-proportional parent draw. The victim of the current death is
/// still counted: callers sample the parent before removing anyone.
pub fn sample_parent<R: Rng>(
    state: &PopulationState,
    s: f64,
    rng: &mut R,
) -> Result<(u32, u8), MoranError> {
    let m = state.mean_type();
    let lo_fit = 1.0 + s * (state.lo as f64 - m);
    let (total, clipped) = if lo_fit > 0.0 {
        (state.n as f64, false)
    } else {
        let t = total_fitness(state, s);
        if t <= 0.0 {
            return Err(MoranError::TotalFitnessZero { mean_type: m });
        }
        (t, true)
    };
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0f64;
    let mut chosen: Option<usize> = None;
    let mut last_nonzero = 0usize;
    for (i, &w) in state.w.iter().enumerate() {
        if w == 0 {
            continue;
        }
        let fit = 1.0 + s * ((state.lo + i as u32) as f64 - m);
        let weight = if clipped { fit.max(0.0) } else { fit };
        if weight <= 0.0 {
            continue;
        }
        last_nonzero = i;
        acc += w as f64 * weight;
        if target < acc {
            chosen = Some(i);
            break;
        }
    }
    // Float slack at the top of the walk falls to the last positive weight.
    let i = chosen.unwrap_or(last_nonzero);
    let t = state.lo + i as u32;
    let offset = rng.gen_range(0..state.w[i]);
    Ok((t, state.cells[i].cell_from_offset(offset)))
}

/// Record `tau_{grown+1}` if the count of type `grown` has reached the
/// threshold and the row does not exist yet. Finalizes the early-family
/// proportion of type `grown` and, when labels are active, the Y-observable.
pub fn record_tau(
    state: &PopulationState,
    registry: &mut TauRegistry,
    params: &ModelParams,
    scalings: &DerivedScalings,
    opts: &RunOptions,
    grown: u32,
) -> Result<Option<u32>, MoranError> {
    let j = grown + 1;
    if state.w_of(grown) < scalings.ceil_s_over_mu || registry.has(j) {
        return Ok(None);
    }
    let cells = state.cells_of(grown);
    let w = state.w_of(grown);
    registry.finalize_family(grown, cells.early() as f64 / w as f64);

    let m = state.mean_type();
    let q = (j as f64 - m).max(1.0);
    let sq = params.s * q;
    let window = (opts.early_c1 * (1.0 / sq).ln() + opts.early_c2) / sq;
    let y_obs = state
        .labeled
        .then(|| cells.y() as f64 / scalings.ceil_s_over_mu as f64);
    // No arrival into type j can have been early before this row existed.
    debug_assert_eq!(state.cells_of(j).early(), 0);
    registry.insert(TauRecord {
        j,
        tau: state.clock,
        m_at_tau: m,
        q,
        xi: state.clock + window.max(0.0),
        s_family: None,
        y_obs,
    })?;
    Ok(Some(j))
}

/// Advance the simulation by one event.
///
/// The clock moves by Exp(N(1+mu)); the event is a death/replacement with
/// probability `1/(1+mu)` and a mutation attempt otherwise. A mutation of
/// a labelled (Y, j) individual is converted into a killing with probability
/// `min(1, alpha/q_{j+1} * X_j/W_j)`: the mutant dies and a uniformly chosen
/// (X, j) individual begets an (X, j+1) child instead, leaving the type
/// dynamics unchanged. Mutants (and killing-compensation children) landing
/// in type j+1 inside `[tau_{j+1}, xi_{j+1}]` are flagged early.
pub fn step_event<R: Rng>(
    state: &mut PopulationState,
    registry: &mut TauRegistry,
    params: &ModelParams,
    scalings: &DerivedScalings,
    opts: &RunOptions,
    counts: &mut EventCounts,
    rng: &mut R,
) -> Result<StepOutcome, MoranError> {
    let rate = state.n as f64 * (1.0 + params.mu);
    let exp: f64 = rand_distr::Exp1.sample(rng);
    let dt = exp / rate;
    state.advance_clock(dt);
    counts.total += 1;

    let is_death = rng.gen::<f64>() < 1.0 / (1.0 + params.mu);
    let outcome = if is_death {
        let (victim_type, victim_cell) = state.pick_uniform_individual(rng);
        let (parent_type, parent_cell) = sample_parent(state, params.s, rng)?;
        state.bump(victim_type, victim_cell, -1);
        state.bump(parent_type, parent_cell, 1);
        state.trim();
        counts.deaths += 1;
        // First crossings hit the threshold exactly (counts move by one).
        let new_tau = if state.w_of(parent_type) == scalings.ceil_s_over_mu {
            record_tau(state, registry, params, scalings, opts, parent_type)?
        } else {
            None
        };
        StepOutcome {
            event: Event {
                t: state.clock,
                kind: EventKind::Death {
                    victim_type,
                    victim_cell,
                    parent_type,
                    parent_cell,
                },
            },
            new_tau,
        }
    } else {
        let (from_type, cell) = state.pick_uniform_individual(rng);
        let target = from_type + 1;
        if target > opts.type_cap {
            return Err(MoranError::TypeCapExceeded(target, opts.type_cap));
        }
        let mut killed = false;
        if state.labeled && params.alpha > 0.0 && cell_is_y(cell) {
            let block = state.cells_of(from_type);
            let x = block.x();
            if x > 0 {
                let q = registry.q_or_provisional(target, state.mean_type());
                let p = params.alpha / q * (x as f64 / block.total() as f64);
                if p > 1.0 {
                    counts.kill_prob_clamped += 1;
                }
                killed = rng.gen::<f64>() < p.min(1.0);
            }
        }
        let early = registry.arrival_is_early(target, state.clock);
        let early_cell_bit = u8::from(early);
        state.ensure_type(target);
        let kind = if killed {
            state.bump(from_type, cell, -1);
            state.bump(target, CELL_X_NONEARLY | early_cell_bit, 1);
            counts.killings += 1;
            EventKind::Killing { from_type }
        } else {
            state.bump(from_type, cell, -1);
            let group_bits = cell & 2;
            state.bump(target, group_bits | early_cell_bit, 1);
            counts.mutations += 1;
            EventKind::Mutation { from_type, cell }
        };
        state.trim();
        let new_tau = if state.w_of(target) == scalings.ceil_s_over_mu {
            record_tau(state, registry, params, scalings, opts, target)?
        } else {
            None
        };
        StepOutcome {
            event: Event {
                t: state.clock,
                kind,
            },
            new_tau,
        }
    };
    // Conservation after every event, exact and O(1).
    assert_eq!(state.total, state.n, "population count drifted from N");
    Ok(outcome)
}

/// Assign group labels at the crossing time of row `j2`: exactly
/// `y_N * ceil(s/mu)` uniformly chosen individuals of type `j2 - 1` become
/// Y, every individual of a strictly lower type becomes Y independently
/// with probability `y_N`, and everything else (including types >= j2)
/// stays X.
pub fn mark_groups<R: Rng>(
    state: &mut PopulationState,
    scalings: &DerivedScalings,
    j2: u32,
    rng: &mut R,
) -> Result<(), MoranError> {
    if state.labeled {
        return Err(MoranError::AlreadyLabeled);
    }
    let fittest = j2 - 1;
    let w = state.w_of(fittest);
    if w != scalings.ceil_s_over_mu {
        return Err(MoranError::MarkCountMismatch {
            expected: scalings.ceil_s_over_mu,
            found: w,
        });
    }
    // Exact marking on the fittest labelled type: a without-replacement
    // split of the mark count between the early and non-early cells.
    let marks = scalings.y_marks();
    let i = state.idx(fittest);
    let block = &mut state.cells[i];
    let mut rem_early = block.x_early;
    let mut rem_total = block.total();
    let mut early_marks = 0u64;
    for _ in 0..marks {
        if rng.gen_range(0..rem_total) < rem_early {
            early_marks += 1;
            rem_early -= 1;
        }
        rem_total -= 1;
    }
    let nonearly_marks = marks - early_marks;
    block.x_early -= early_marks;
    block.y_early += early_marks;
    block.x_nonearly -= nonearly_marks;
    block.y_nonearly += nonearly_marks;

    // Independent Bernoulli(y_N) marking strictly below.
    for t in state.lo..fittest {
        let i = state.idx(t);
        let block = &mut state.cells[i];
        for (from, to) in [(CELL_X_NONEARLY, CELL_Y_NONEARLY), (CELL_X_EARLY, CELL_Y_EARLY)] {
            let count = *block.get_mut(from);
            if count == 0 {
                continue;
            }
            let moved = rand_distr::Binomial::new(count, scalings.y_n)
                .expect("valid binomial")
                .sample(rng);
            *block.get_mut(from) -= moved;
            *block.get_mut(to) += moved;
        }
    }
    state.labeled = true;
    Ok(())
}

/// State snapshot at a mean-type checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub mean_type: f64,
    pub int_mean_type: f64,
    /// (type, count) pairs over the active window.
    pub w_row: Vec<(u32, u64)>,
}

impl Checkpoint {
    pub fn w_of(&self, t: u32) -> u64 {
        self.w_row
            .iter()
            .find(|(ty, _)| *ty == t)
            .map(|(_, w)| *w)
            .unwrap_or(0)
    }

    fn from_state(state: &PopulationState) -> Self {
        Checkpoint {
            t: state.clock,
            mean_type: state.mean_type(),
            int_mean_type: state.int_mean_type(),
            w_row: state.w_row(),
        }
    }
}

/// One full simulated trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoranTrajectory {
    pub seed: u64,
    /// Row index at which group labels were assigned.
    pub j2: u32,
    pub registry: TauRegistry,
    /// (rescaled time tau_j / a_N, Y-observable) for labelled rows.
    pub y_path: Vec<(f64, f64)>,
    pub checkpoints: Vec<Checkpoint>,
    pub event_counts: EventCounts,
}

impl MoranTrajectory {
    /// Observable at rescaled time `t`: the value at the last crossing with
    /// `tau_j <= a_N t`.
    pub fn y_at(&self, t_rescaled: f64) -> Option<f64> {
        let mut value = None;
        for &(t, y) in &self.y_path {
            if t > t_rescaled {
                break;
            }
            value = Some(y);
        }
        value
    }
}

const AUDIT_EVERY: u64 = 1 << 20;

struct RunPhaseState {
    next_grid_cp: f64,
    events_until_audit: u64,
    last_tau_clock: f64,
}

/// Simulate one trajectory end to end.
///
/// Phase 1 runs unlabelled until the clock passes `2 a_N` (labels absent
/// means no killings, and group labels do not alter type dynamics),
/// snapshotting at every threshold crossing. Phase 2 rolls back to the last
/// crossing at or before `2 a_N`, assigns group labels there, and replays
/// with the killing mechanism active until `a_N T`. Replaying the rolled
/// back stretch with fresh randomness is distributionally exact.
pub fn run_trajectory(
    params: &ModelParams,
    scalings: &DerivedScalings,
    opts: &RunOptions,
    seed: u64,
) -> Result<MoranTrajectory, MoranError> {
    let mut rng = rng_from_seed(seed);
    let mut state = init_population(params, scalings);
    let mut registry = TauRegistry::new();
    let mut counts = EventCounts::default();
    let mut checkpoints = Vec::new();

    // W_0(0) = N is already past the threshold: row 1 exists from time 0.
    record_tau(&state, &mut registry, params, scalings, opts, 0)?;
    checkpoints.push(Checkpoint::from_state(&state));

    let a_n = scalings.a_n;
    let stall_limit = 10.0 * a_n / scalings.k_n;
    let mut phase = RunPhaseState {
        next_grid_cp: opts.checkpoint_stride,
        events_until_audit: AUDIT_EVERY,
        last_tau_clock: 0.0,
    };

    // Phase 1: unlabelled until 2 a_N.
    let mark_time = 2.0 * a_n;
    let mut snapshot = (
        state.clone(),
        registry.clone(),
        counts,
        checkpoints.len(),
        phase.next_grid_cp,
    );
    while state.clock <= mark_time {
        let out = step_event(
            &mut state,
            &mut registry,
            params,
            scalings,
            opts,
            &mut counts,
            &mut rng,
        )?;
        after_event(
            &state,
            &out,
            &mut checkpoints,
            &mut phase,
            opts,
            stall_limit,
        )?;
        // Snapshot only front-advancing crossings: a slower type catching
        // up later (possible at small scale) must not move the mark point,
        // because the marking contract needs the fittest labelled type to
        // sit exactly at the threshold count.
        if let Some(j) = out.new_tau {
            if state.clock <= mark_time && registry.max_j() == Some(j) {
                snapshot = (
                    state.clone(),
                    registry.clone(),
                    counts,
                    checkpoints.len(),
                    phase.next_grid_cp,
                );
            }
        }
    }

    // Phase 2: roll back to the last crossing before the mark time, label,
    // and resume with killings active.
    let (st, reg, cnt, cp_len, next_cp) = snapshot;
    state = st;
    registry = reg;
    counts = cnt;
    checkpoints.truncate(cp_len);
    phase.next_grid_cp = next_cp;
    phase.last_tau_clock = state.clock;
    let j2 = registry.max_j().expect("row 1 exists");
    mark_groups(&mut state, scalings, j2, &mut rng)?;
    registry.set_y_obs(j2, scalings.y_n);

    let horizon = params.t_end * a_n;
    while state.clock <= horizon {
        let out = step_event(
            &mut state,
            &mut registry,
            params,
            scalings,
            opts,
            &mut counts,
            &mut rng,
        )?;
        after_event(
            &state,
            &out,
            &mut checkpoints,
            &mut phase,
            opts,
            stall_limit,
        )?;
    }

    let mut y_path: Vec<(f64, f64)> = registry
        .records()
        .iter()
        .filter(|r| r.j >= j2 && r.tau <= horizon)
        .filter_map(|r| r.y_obs.map(|y| (r.tau / a_n, y)))
        .collect();
    // Crossings can be recorded out of index order at small scale; the
    // observable path is a function of time.
    y_path.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(MoranTrajectory {
        seed,
        j2,
        registry,
        y_path,
        checkpoints,
        event_counts: counts,
    })
}

fn after_event(
    state: &PopulationState,
    out: &StepOutcome,
    checkpoints: &mut Vec<Checkpoint>,
    phase: &mut RunPhaseState,
    opts: &RunOptions,
    stall_limit: f64,
) -> Result<(), MoranError> {
    if out.new_tau.is_some() {
        phase.last_tau_clock = state.clock;
        checkpoints.push(Checkpoint::from_state(state));
    } else if state.clock >= phase.next_grid_cp {
        checkpoints.push(Checkpoint::from_state(state));
        while phase.next_grid_cp <= state.clock {
            phase.next_grid_cp += opts.checkpoint_stride;
        }
    }
    let elapsed = state.clock - phase.last_tau_clock;
    if elapsed > stall_limit {
        return Err(MoranError::TauStalled {
            elapsed,
            limit: stall_limit,
        });
    }
    phase.events_until_audit -= 1;
    if phase.events_until_audit == 0 {
        phase.events_until_audit = AUDIT_EVERY;
        assert!(state.audit(), "cached aggregates diverged from cell counts");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_scalings;

    fn smoke_params() -> ModelParams {
        ModelParams {
            n: 10_000,
            mu: 5e-4,
            s: 0.05,
            alpha: 1.0,
            y: 0.3,
            t_end: 3.0,
        }
    }

    fn build(params: &ModelParams) -> (DerivedScalings, RunOptions) {
        let sc = derive_scalings(params).unwrap();
        let opts = RunOptions::for_model(params, &sc);
        (sc, opts)
    }

    /// Hand-built state for unit tests, bypassing parameter validation.
    fn state_with(n: u64, entries: &[(u32, CellBlock)]) -> PopulationState {
        let lo = entries.iter().map(|(t, _)| *t).min().unwrap();
        let hi = entries.iter().map(|(t, _)| *t).max().unwrap();
        let mut cells = vec![CellBlock::default(); (hi - lo + 1) as usize];
        for (t, c) in entries {
            cells[(t - lo) as usize] = *c;
        }
        let w: Vec<u64> = cells.iter().map(|c| c.total()).collect();
        let total = w.iter().sum();
        let sum_jw = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (lo as u64 + i as u64) * c.total())
            .sum();
        PopulationState {
            n,
            lo,
            cells,
            w,
            total,
            clock: 0.0,
            sum_jw,
            int_mean: 0.0,
            int_mean_comp: 0.0,
            labeled: false,
        }
    }

    fn x_only(count: u64) -> CellBlock {
        CellBlock {
            x_nonearly: count,
            ..CellBlock::default()
        }
    }

    #[test]
    fn init_is_all_type_zero() {
        let p = smoke_params();
        let (sc, _) = build(&p);
        let state = init_population(&p, &sc);
        assert_eq!(state.cells_of(0), x_only(10_000));
        assert_eq!(state.mean_type(), 0.0);
        assert_eq!(state.int_mean_type(), 0.0);
        assert_eq!(state.total_count(), 10_000);
        assert!(!state.labeled());
    }

    #[test]
    fn total_fitness_single_type_is_n() {
        let state = state_with(500, &[(3, x_only(500))]);
        assert!((total_fitness(&state, 0.2) - 500.0).abs() < 1e-9);
    }

    #[test]
    fn total_fitness_two_types_hand_computed() {
        // M = 5; weights 50*0.95 + 50*1.05 = 100 = N
        let state = state_with(100, &[(0, x_only(50)), (10, x_only(50))]);
        assert!((total_fitness(&state, 0.01) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn total_fitness_without_clipping_stays_n() {
        // M = 0.2; 999*0.998 + 1*2.998 = 1000 exactly; nothing clips.
        let state = state_with(1000, &[(0, x_only(999)), (200, x_only(1))]);
        assert!((total_fitness(&state, 0.01) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn total_fitness_clipped_deviates_from_n() {
        // s=0.9, M=1.998: type-0 factor clips to 0.
        let state = state_with(1000, &[(0, x_only(1)), (2, x_only(999))]);
        let total = total_fitness(&state, 0.9);
        let expected = 999.0 * (1.0 + 0.9 * (2.0 - 1.998));
        assert!((total - expected).abs() < 1e-9);
        assert!((total - 1000.0).abs() > 0.5);
    }

    #[test]
    fn sample_parent_single_type_is_certain() {
        let state = state_with(100, &[(4, x_only(100))]);
        let mut rng = rng_from_seed(1);
        for _ in 0..32 {
            let (t, _) = sample_parent(&state, 0.1, &mut rng).unwrap();
            assert_eq!(t, 4);
        }
    }

    #[test]
    fn sample_parent_frequency_matches_fitness() {
        // Types 4 and 6 at 50 each, s = 0.1, M = 5 => P(type 6) = 0.55.
        let state = state_with(100, &[(4, x_only(50)), (6, x_only(50))]);
        let mut rng = rng_from_seed(2);
        let draws = 200_000;
        let mut sixes = 0u64;
        for _ in 0..draws {
            let (t, _) = sample_parent(&state, 0.1, &mut rng).unwrap();
            if t == 6 {
                sixes += 1;
            }
        }
        let freq = sixes as f64 / draws as f64;
        let se = (0.55f64 * 0.45 / draws as f64).sqrt();
        assert!((freq - 0.55).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn sample_parent_cell_split_is_proportional() {
        let state = state_with(
            100,
            &[(
                2,
                CellBlock {
                    x_nonearly: 60,
                    y_nonearly: 40,
                    ..CellBlock::default()
                },
            )],
        );
        let mut rng = rng_from_seed(3);
        let draws = 100_000;
        let mut y_draws = 0u64;
        for _ in 0..draws {
            let (_, cell) = sample_parent(&state, 0.05, &mut rng).unwrap();
            if cell_is_y(cell) {
                y_draws += 1;
            }
        }
        let freq = y_draws as f64 / draws as f64;
        let se = (0.4f64 * 0.6 / draws as f64).sqrt();
        assert!((freq - 0.4).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn sample_parent_never_returns_clipped_type() {
        let state = state_with(1000, &[(0, x_only(1)), (2, x_only(999))]);
        let mut rng = rng_from_seed(4);
        for _ in 0..10_000 {
            let (t, _) = sample_parent(&state, 0.9, &mut rng).unwrap();
            assert_eq!(t, 2);
        }
    }

    #[test]
    fn sample_parent_degenerate_when_everything_clips() {
        // Single type can never clip (M equals the type), so build two with
        // s large enough to clip both... impossible by construction: the top
        // type always has positive factor. The degenerate path needs every
        // ACTIVE weight zero, which requires w > 0 types all clipped; the
        // fitness of the max type is 1 + s(hi - M) > 0 always. Assert that.
        let state = state_with(10, &[(0, x_only(5)), (1, x_only(5))]);
        assert!(sample_parent(&state, 100.0, &mut rng_from_seed(5)).is_ok());
    }

    #[test]
    fn killing_probability_formula() {
        // alpha=1, q=10, X=60, W=100 -> p = 0.06; checked through the
        // registry helper the engine uses.
        let mut reg = TauRegistry::new();
        reg.insert(TauRecord {
            j: 7,
            tau: 1.0,
            m_at_tau: 0.0,
            q: 10.0,
            xi: 2.0,
            s_family: None,
            y_obs: None,
        })
        .unwrap();
        let q = reg.q_or_provisional(7, 0.0);
        let p = 1.0 / q * (60.0 / 100.0);
        assert!((p - 0.06).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_means_no_killings() {
        let mut p = smoke_params();
        p.alpha = 0.0;
        p.t_end = 2.5;
        let (sc, opts) = build(&p);
        let traj = run_trajectory(&p, &sc, &opts, 11).unwrap();
        assert_eq!(traj.event_counts.killings, 0);
        assert_eq!(traj.event_counts.kill_prob_clamped, 0);
    }

    #[test]
    fn zero_mu_yields_only_deaths() {
        // mu = 0 is outside ModelParams invariants; drive step_event
        // directly to check the degenerate composition.
        let p = ModelParams {
            n: 200,
            mu: 0.0,
            s: 0.05,
            alpha: 0.0,
            y: 0.3,
            t_end: 3.0,
        };
        let sc = DerivedScalings {
            k_n: 1.0,
            a_n: 1.0,
            ceil_s_over_mu: u64::MAX, // no crossings
            y_n: 0.3,
        };
        let opts = RunOptions {
            early_c1: 1.0,
            early_c2: 0.0,
            type_cap: 10,
            checkpoint_stride: f64::INFINITY,
        };
        let mut state = init_population(&p, &sc);
        let mut registry = TauRegistry::new();
        let mut counts = EventCounts::default();
        let mut rng = rng_from_seed(6);
        for _ in 0..5000 {
            step_event(&mut state, &mut registry, &p, &sc, &opts, &mut counts, &mut rng).unwrap();
        }
        assert_eq!(counts.mutations, 0);
        assert_eq!(counts.killings, 0);
        assert_eq!(counts.deaths, 5000);
        assert_eq!(state.hi_type(), 0);
        assert_eq!(state.total_count(), 200);
    }

    #[test]
    fn threshold_crossing_records_tau() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        // Type 1 count one below the threshold; a birth into type 1 crosses.
        let mut state = state_with(
            10_000,
            &[(0, x_only(10_000 - (sc.ceil_s_over_mu - 1))), (1, x_only(sc.ceil_s_over_mu - 1))],
        );
        state.clock = 3.5;
        let mut registry = TauRegistry::new();
        state.bump(1, CELL_X_NONEARLY, 1);
        state.bump(0, CELL_X_NONEARLY, -1);
        let recorded = record_tau(&state, &mut registry, &p, &sc, &opts, 1)
            .unwrap()
            .unwrap();
        assert_eq!(recorded, 2);
        let rec = registry.record(2).unwrap();
        assert_eq!(rec.tau, 3.5);
        assert!((rec.m_at_tau - state.mean_type()).abs() < 1e-15);
        // Duplicate crossing is refused via the has-guard.
        assert!(record_tau(&state, &mut registry, &p, &sc, &opts, 1)
            .unwrap()
            .is_none());
    }

    #[test]
    fn q_clamps_at_one() {
        // j - M < 1 when the mean has overtaken the nominal lead.
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let thr = sc.ceil_s_over_mu;
        // Mean type ~ 9.99 with the crossing type at 3: q = max(1, 4 - 9.99) = 1.
        let mut state = state_with(
            10_000,
            &[(3, x_only(thr - 1)), (10, x_only(10_000 - (thr - 1)))],
        );
        let mut registry = TauRegistry::new();
        state.bump(3, CELL_X_NONEARLY, 1);
        state.bump(10, CELL_X_NONEARLY, -1);
        record_tau(&state, &mut registry, &p, &sc, &opts, 3).unwrap();
        assert_eq!(registry.record(4).unwrap().q, 1.0);
    }

    #[test]
    fn empty_early_window_gives_zero_family_proportion() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let thr = sc.ceil_s_over_mu;
        let mut state = state_with(
            10_000,
            &[(1, x_only(thr - 1)), (0, x_only(10_000 - (thr - 1)))],
        );
        let mut registry = TauRegistry::new();
        registry
            .insert(TauRecord {
                j: 1,
                tau: 0.0,
                m_at_tau: 0.0,
                q: 1.0,
                xi: 0.0,
                s_family: None,
                y_obs: None,
            })
            .unwrap();
        state.bump(1, CELL_X_NONEARLY, 1);
        state.bump(0, CELL_X_NONEARLY, -1);
        record_tau(&state, &mut registry, &p, &sc, &opts, 1).unwrap();
        assert_eq!(registry.record(1).unwrap().s_family, Some(0.0));
    }

    #[test]
    fn mark_groups_counts_are_exact() {
        let p = smoke_params();
        let (sc, _) = build(&p);
        let thr = sc.ceil_s_over_mu;
        let mut state = state_with(
            10_000,
            &[
                (3, x_only(6_000)),
                (4, x_only(10_000 - 6_000 - thr - 5)),
                (5, x_only(thr)),
                (6, x_only(5)),
            ],
        );
        mark_groups(&mut state, &sc, 6, &mut rng_from_seed(8)).unwrap();
        assert!(state.labeled());
        // Exactly y_N * threshold marks on type 5.
        assert_eq!(state.cells_of(5).y(), sc.y_marks());
        // Types >= j2 stay X.
        assert_eq!(state.cells_of(6).y(), 0);
        // Conservation untouched.
        assert_eq!(state.total_count(), 10_000);
        // Lower types carry some Y with overwhelming probability.
        assert!(state.cells_of(3).y() > 0);
    }

    #[test]
    fn mark_groups_rejects_wrong_count() {
        let p = smoke_params();
        let (sc, _) = build(&p);
        let mut state = state_with(
            10_000,
            &[(4, x_only(10_000 - 7)), (5, x_only(7))],
        );
        assert!(matches!(
            mark_groups(&mut state, &sc, 6, &mut rng_from_seed(8)),
            Err(MoranError::MarkCountMismatch { .. })
        ));
    }

    #[test]
    fn mark_groups_preserves_early_split() {
        let p = smoke_params();
        let (sc, _) = build(&p);
        let thr = sc.ceil_s_over_mu;
        let mut state = state_with(
            10_000,
            &[
                (0, x_only(10_000 - thr)),
                (
                    5,
                    CellBlock {
                        x_nonearly: thr - 30,
                        x_early: 30,
                        ..CellBlock::default()
                    },
                ),
            ],
        );
        mark_groups(&mut state, &sc, 6, &mut rng_from_seed(9)).unwrap();
        let block = state.cells_of(5);
        assert_eq!(block.total(), thr);
        assert_eq!(block.early(), 30);
        assert_eq!(block.y(), sc.y_marks());
    }

    #[test]
    fn trajectory_starts_at_quantized_y() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let traj = run_trajectory(&p, &sc, &opts, 21).unwrap();
        assert_eq!(traj.y_path.first().map(|&(_, y)| y), Some(sc.y_n));
        assert_eq!(traj.y_at(2.0), Some(sc.y_n));
    }

    #[test]
    fn trajectory_is_deterministic() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let a = run_trajectory(&p, &sc, &opts, 77).unwrap();
        let b = run_trajectory(&p, &sc, &opts, 77).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = run_trajectory(&p, &sc, &opts, 78).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn y_path_values_stay_in_unit_interval() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        for seed in [1, 2, 3] {
            let traj = run_trajectory(&p, &sc, &opts, seed).unwrap();
            assert!(traj
                .y_path
                .iter()
                .all(|&(_, y)| (0.0..=1.0).contains(&y)));
            assert!(traj.registry.records().windows(2).all(|w| w[1].tau > w[0].tau));
        }
    }

    #[test]
    fn label_neutrality_of_type_dynamics() {
        // With alpha = 0 the labelled run consumes the same random stream
        // and must produce the identical per-type trajectory as an
        // unlabelled run.
        let mut p = smoke_params();
        p.alpha = 0.0;
        let (sc, opts) = build(&p);
        let mut labelled = init_population(&p, &sc);
        let mut plain = init_population(&p, &sc);
        // Give the labelled copy a half Y population directly.
        labelled.cells[0].x_nonearly -= 4000;
        labelled.cells[0].y_nonearly += 4000;
        labelled.labeled = true;

        let mut reg_a = TauRegistry::new();
        let mut reg_b = TauRegistry::new();
        let mut counts = EventCounts::default();
        let mut rng_a = rng_from_seed(99);
        let mut rng_b = rng_from_seed(99);
        for _ in 0..200_000 {
            step_event(&mut labelled, &mut reg_a, &p, &sc, &opts, &mut counts, &mut rng_a)
                .unwrap();
            step_event(&mut plain, &mut reg_b, &p, &sc, &opts, &mut counts, &mut rng_b)
                .unwrap();
            assert_eq!(labelled.w_row(), plain.w_row());
        }
    }

    #[test]
    fn conservation_across_full_smoke_run() {
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let traj = run_trajectory(&p, &sc, &opts, 5).unwrap();
        // The run's internal audits passed; replay a prefix manually to
        // assert conservation after every single event.
        let mut state = init_population(&p, &sc);
        let mut registry = TauRegistry::new();
        let mut counts = EventCounts::default();
        let mut rng = rng_from_seed(5);
        record_tau(&state, &mut registry, &p, &sc, &opts, 0).unwrap();
        for _ in 0..50_000 {
            step_event(&mut state, &mut registry, &p, &sc, &opts, &mut counts, &mut rng)
                .unwrap();
            assert_eq!(state.total_count(), p.n);
        }
        assert!(traj.event_counts.total > 0);
    }

    #[test]
    fn early_flags_follow_the_window() {
        // Drive mutations by hand through the same cell arithmetic the
        // engine uses and check the early bookkeeping: arrivals inside
        // [tau, xi] land early, later arrivals do not, and births copy the
        // parent's flag.
        let mut state = state_with(1000, &[(2, x_only(1000))]);
        let mut registry = TauRegistry::new();
        registry
            .insert(TauRecord {
                j: 3,
                tau: 5.0,
                m_at_tau: 2.0,
                q: 1.0,
                xi: 8.0,
                s_family: None,
                y_obs: None,
            })
            .unwrap();

        // Mutation arriving inside the window: early cell.
        state.clock = 6.0;
        let early = registry.arrival_is_early(3, state.clock);
        assert!(early);
        state.ensure_type(3);
        state.bump(2, CELL_X_NONEARLY, -1);
        state.bump(3, CELL_X_EARLY, 1);

        // Birth from the early parent keeps the flag.
        state.bump(3, CELL_X_EARLY, 1);
        state.bump(2, CELL_X_NONEARLY, -1);

        // Mutation after xi: non-early.
        state.clock = 9.0;
        assert!(!registry.arrival_is_early(3, state.clock));
        state.bump(2, CELL_X_NONEARLY, -1);
        state.bump(3, CELL_X_NONEARLY, 1);

        let block = state.cells_of(3);
        assert_eq!(block.early(), 2);
        assert_eq!(block.total(), 3);
        // Family proportion finalized at the next crossing would be 2/3.
        assert!((block.early() as f64 / block.total() as f64 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn early_cells_empty_when_row_is_created() {
        // Structural property: the debug assert inside record_tau watches
        // it on every crossing of every test run; here we just force a run
        // long enough to cross several thresholds.
        let p = smoke_params();
        let (sc, opts) = build(&p);
        let traj = run_trajectory(&p, &sc, &opts, 31).unwrap();
        assert!(traj.registry.len() >= 4);
    }

    #[test]
    fn stalled_run_aborts() {
        // Threshold impossible to reach => no crossing after row 1; the
        // stall guard must fire rather than loop forever.
        let p = ModelParams {
            n: 500,
            mu: 1e-9,
            s: 0.05,
            alpha: 0.0,
            y: 0.3,
            t_end: 5.0,
        };
        // Stall limit 10 a_N / k_N = 1 time unit, well inside the phase-1
        // horizon of 2 a_N = 4.
        let sc = DerivedScalings {
            k_n: 20.0,
            a_n: 2.0,
            ceil_s_over_mu: 400,
            y_n: 0.3,
        };
        let opts = RunOptions {
            early_c1: 1.0,
            early_c2: 0.0,
            type_cap: 50,
            checkpoint_stride: f64::INFINITY,
        };
        match run_trajectory(&p, &sc, &opts, 1) {
            Err(MoranError::TauStalled { .. }) => {}
            other => panic!("expected stall, got {other:?}"),
        }
    }
}
