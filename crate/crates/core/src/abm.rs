//! Continuous-time N-agent exchange process.
//!
//! A global exponential clock of rate `N` triggers events, so each agent
//! initiates at unit rate and simulation time matches mean-field time.
//!
//! Every event consumes the single [`ChaCha8Rng`] stream in this order:
//! holding time, giver, receiver, and (solvent cheaters only) the cheat coin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pmf::WealthPmf;

/// Number of events between two full conservation checks.
pub const CONSERVATION_CHECK_EVERY: u64 = 1_000_000;

/// Agent subset over which an empirical law is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    Honest,
    Cheater,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::All, Group::Honest, Group::Cheater];

    pub fn label(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Honest => "honest",
            Group::Cheater => "cheater",
        }
    }
}

/// Per-agent wealth. Agents `0..honest_count` are honest, the rest cheat.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationState {
    wealth: Vec<u64>,
    honest_count: usize,
    time: f64,
    total_money: u64,
}

impl PopulationState {
    pub fn new(wealth: Vec<u64>, honest_count: usize) -> Result<Self> {
        if wealth.len() < 2 {
            return Err(Error::param("n_agents", "need at least two agents"));
        }
        if honest_count > wealth.len() {
            return Err(Error::param("honest_count", "exceeds the number of agents"));
        }
        let total_money = wealth.iter().sum();
        Ok(Self { wealth, honest_count, time: 0.0, total_money })
    }

    /// Every agent starts with `mu` dollars; `mu` must be an integer.
    pub fn uniform(params: &ModelParams<f64>) -> Result<Self> {
        let mu = params.mu();
        if mu.fract() != 0.0 {
            return Err(Error::param("mu", "uniform initial wealth needs an integer mean"));
        }
        Self::new(vec![mu as u64; params.n_agents()], params.honest_count()?)
    }

    pub fn n_agents(&self) -> usize {
        self.wealth.len()
    }

    pub fn honest_count(&self) -> usize {
        self.honest_count
    }

    pub fn cheater_count(&self) -> usize {
        self.wealth.len() - self.honest_count
    }

    pub fn wealth(&self) -> &[u64] {
        &self.wealth
    }

    pub fn is_honest(&self, i: usize) -> bool {
        i < self.honest_count
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_money(&self) -> u64 {
        self.total_money
    }

    /// Wealth of the agents in `group`.
    pub fn group_wealth(&self, group: Group) -> &[u64] {
        match group {
            Group::All => &self.wealth,
            Group::Honest => &self.wealth[..self.honest_count],
            Group::Cheater => &self.wealth[self.honest_count..],
        }
    }

    /// Recomputes the total and compares it with the cached invariant.
    pub fn check_conservation(&self, events: u64) -> Result<()> {
        let found: u64 = self.wealth.iter().sum();
        if found != self.total_money {
            return Err(Error::ConservationViolated { expected: self.total_money, found, events });
        }
        Ok(())
    }
}

/// What a single event did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    BrokeGiver,
    Transferred { giver: usize, receiver: usize },
    Withheld,
}

/// Applies one event and advances the clock.
pub fn step<R: Rng + ?Sized>(state: &mut PopulationState, rng: &mut R, params: &ModelParams<f64>) -> StepOutcome {
    let n = state.n_agents();
    let hold: f64 = Exp1.sample(rng);
    state.time += hold / n as f64;
    apply_event(state, rng, params.give_prob())
}

fn apply_event<R: Rng + ?Sized>(state: &mut PopulationState, rng: &mut R, give_prob: f64) -> StepOutcome {
    let n = state.n_agents();
    let giver = rng.random_range(0..n);
    let k = rng.random_range(0..n - 1);
    let receiver = if k < giver { k } else { k + 1 };
    if state.wealth[giver] == 0 {
        return StepOutcome::BrokeGiver;
    }
    if !state.is_honest(giver) && rng.random::<f64>() >= give_prob {
        return StepOutcome::Withheld;
    }
    state.wealth[giver] -= 1;
    state.wealth[receiver] += 1;
    StepOutcome::Transferred { giver, receiver }
}

/// Run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub t_end: f64,
    /// Sorted snapshot times within `[0, t_end]`.
    #[serde(default)]
    pub record_times: Vec<f64>,
    /// When set, also accumulate the occupation-time average of each group
    /// law over `[average_from, t_end]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_from: Option<f64>,
}

impl SimConfig {
    pub fn new(seed: u64, t_end: f64, record_times: Vec<f64>) -> Self {
        Self { seed, t_end, record_times, average_from: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::param("t_end", "must be finite and nonnegative"));
        }
        if self.record_times.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(Error::param("record_times", "must lie in [0, t_end]"));
        }
        if self.record_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::param("record_times", "must be sorted"));
        }
        if let Some(a) = self.average_from {
            if !(0.0..self.t_end).contains(&a) {
                return Err(Error::param("average_from", "must lie in [0, t_end)"));
            }
        }
        Ok(())
    }
}

/// Empirical laws at one time. Absent groups are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub all: WealthPmf<f64>,
    pub honest: Option<WealthPmf<f64>>,
    pub cheater: Option<WealthPmf<f64>>,
}

impl Snapshot {
    fn of(state: &PopulationState, time: f64) -> Self {
        Self {
            time,
            all: empirical_pmf(state, Group::All).expect("population is nonempty"),
            honest: empirical_pmf(state, Group::Honest).ok(),
            cheater: empirical_pmf(state, Group::Cheater).ok(),
        }
    }

    pub fn group(&self, group: Group) -> Option<&WealthPmf<f64>> {
        match group {
            Group::All => Some(&self.all),
            Group::Honest => self.honest.as_ref(),
            Group::Cheater => self.cheater.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub snapshots: Vec<Snapshot>,
    pub event_count: u64,
    /// Occupation-time averages, when requested.
    pub time_average: Option<Snapshot>,
    #[serde(skip)]
    pub final_state: PopulationState,
}

/// Occupation-time integral of a group histogram, updated lazily per bin.
#[derive(Debug, Clone)]
struct OccupationAverage {
    counts: Vec<u64>,
    last: Vec<f64>,
    integral: Vec<f64>,
}

impl OccupationAverage {
    fn new(wealth: &[u64], total: u64, start: f64) -> Self {
        let len = total as usize + 1;
        let mut counts = vec![0; len];
        for &w in wealth {
            counts[w as usize] += 1;
        }
        Self { counts, last: vec![start; len], integral: vec![0.0; len] }
    }

    fn shift(&mut self, from: u64, to: u64, time: f64) {
        for (bin, delta) in [(from as usize, -1i64), (to as usize, 1)] {
            self.integral[bin] += self.counts[bin] as f64 * (time - self.last[bin]);
            self.last[bin] = time;
            self.counts[bin] = (self.counts[bin] as i64 + delta) as u64;
        }
    }

    fn finish(mut self, time: f64) -> Option<WealthPmf<f64>> {
        for bin in 0..self.counts.len() {
            self.integral[bin] += self.counts[bin] as f64 * (time - self.last[bin]);
        }
        let top = self.integral.iter().rposition(|&v| v > 0.0)?;
        self.integral.truncate(top + 1);
        WealthPmf::from_weights(self.integral).ok()
    }
}

/// Runs the process from `initial` until `config.t_end`.
pub fn run(params: &ModelParams<f64>, config: &SimConfig, initial: &PopulationState) -> Result<SimResult> {
    config.validate()?;
    if initial.n_agents() != params.n_agents() {
        return Err(Error::param("n_agents", "initial state size differs from the parameters"));
    }
    if initial.honest_count() != params.honest_count()? {
        return Err(Error::param("n_h", "initial honest partition differs from the parameters"));
    }
    initial.check_conservation(0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = initial.clone();
    let start = state.time();
    let n = state.n_agents() as f64;
    let give_prob = params.give_prob();
    let mut snapshots = Vec::with_capacity(config.record_times.len());
    let mut pending = config.record_times.iter().map(|&t| start + t).peekable();
    let t_end = start + config.t_end;
    let mut averages: Option<[OccupationAverage; 2]> = None;
    let average_from = config.average_from.map(|a| start + a);
    let mut events = 0u64;

    loop {
        let hold: f64 = Exp1.sample(&mut rng);
        let next = state.time() + hold / n;
        if averages.is_none() {
            if let Some(a) = average_from.filter(|&a| next > a) {
                averages = Some([
                    OccupationAverage::new(state.group_wealth(Group::Honest), state.total_money, a),
                    OccupationAverage::new(state.group_wealth(Group::Cheater), state.total_money, a),
                ]);
            }
        }
        while let Some(&t) = pending.peek() {
            if t < next && t <= t_end {
                state.check_conservation(events)?;
                snapshots.push(Snapshot::of(&state, t - start));
                pending.next();
            } else {
                break;
            }
        }
        if next > t_end {
            break;
        }
        state.time = next;
        match apply_event(&mut state, &mut rng, give_prob) {
            StepOutcome::Transferred { giver, receiver } => {
                if let Some(avg) = averages.as_mut() {
                    let (wg, wr) = (state.wealth[giver], state.wealth[receiver]);
                    avg[usize::from(!state.is_honest(giver))].shift(wg + 1, wg, next);
                    avg[usize::from(!state.is_honest(receiver))].shift(wr - 1, wr, next);
                }
            }
            StepOutcome::BrokeGiver | StepOutcome::Withheld => {}
        }
        events += 1;
        if events.is_multiple_of(CONSERVATION_CHECK_EVERY) {
            state.check_conservation(events)?;
        }
    }
    state.check_conservation(events)?;

    let time_average = averages.map(|[h, c]| {
        let honest = h.finish(t_end);
        let cheater = c.finish(t_end);
        let all = mix_counts(honest.as_ref(), cheater.as_ref(), &state);
        Snapshot { time: config.t_end, all, honest, cheater }
    });
    state.time = t_end;
    Ok(SimResult { snapshots, event_count: events, time_average, final_state: state })
}

fn mix_counts(honest: Option<&WealthPmf<f64>>, cheater: Option<&WealthPmf<f64>>, state: &PopulationState) -> WealthPmf<f64> {
    let n = state.n_agents() as f64;
    let parts = [(honest, state.honest_count() as f64 / n), (cheater, state.cheater_count() as f64 / n)];
    let len = parts.iter().filter_map(|(p, _)| p.map(|p| p.len())).max().unwrap_or(1);
    let mut probs = vec![0.0; len];
    for (p, w) in parts {
        if let Some(p) = p {
            for (k, v) in p.probs().iter().enumerate() {
                probs[k] += w * v;
            }
        }
    }
    WealthPmf::from_raw(probs)
}

/// Independent replicas with seeds `base_seed, base_seed + 1, ...`, run in
/// parallel and returned in seed order.
pub fn run_replicas(
    params: &ModelParams<f64>,
    config: &SimConfig,
    initial: &PopulationState,
    replicas: usize,
) -> Result<Vec<SimResult>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig { seed: config.seed.wrapping_add(i), ..config.clone() };
            run(params, &cfg, initial)
        })
        .collect()
}

/// Histogram of the group's wealth divided by the group size, on
/// `0..=max observed wealth`.
pub fn empirical_pmf(state: &PopulationState, group: Group) -> Result<WealthPmf<f64>> {
    let w = state.group_wealth(group);
    if w.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let top = *w.iter().max().expect("nonempty") as usize;
    let mut counts = vec![0u64; top + 1];
    for &x in w {
        counts[x as usize] += 1;
    }
    let size = w.len() as f64;
    Ok(WealthPmf::from_raw(counts.into_iter().map(|c| c as f64 / size).collect()))
}

/// Gini index of the wealth vector, `sum (2i - N - 1) x_(i) / (N sum x)` over
/// the sorted values.
pub fn empirical_gini(state: &PopulationState) -> Result<f64> {
    gini_of_values(state.wealth())
}

pub fn gini_of_values(values: &[u64]) -> Result<f64> {
    let total: u64 = values.iter().sum();
    if total == 0 {
        return Err(Error::ZeroMean);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let acc: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n - 1.0) * x as f64)
        .sum();
    Ok(acc / (n * total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_agents: usize) -> ModelParams<f64> {
        ModelParams::new(5.0, 0.5, 0.5, n_agents).unwrap()
    }

    /// Fixed-draw stream for deterministic single-event checks.
    struct Scripted(Vec<u64>);

    impl rand::RngCore for Scripted {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0.remove(0)
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            rand::rand_core::impls::fill_bytes_via_next(self, dst)
        }
    }

    #[test]
    fn broke_giver_changes_nothing() {
        let mut s = PopulationState::new(vec![0, 4], 2).unwrap();
        // giver 0 (low word draws), receiver 1
        let mut rng = Scripted(vec![0, 0]);
        assert_eq!(apply_event(&mut s, &mut rng, 1.0), StepOutcome::BrokeGiver);
        assert_eq!(s.wealth(), &[0, 4]);
    }

    #[test]
    fn honest_giver_transfers() {
        let mut s = PopulationState::new(vec![3, 1], 2).unwrap();
        let mut rng = Scripted(vec![0, 0]);
        assert_eq!(apply_event(&mut s, &mut rng, 0.5), StepOutcome::Transferred { giver: 0, receiver: 1 });
        assert_eq!(s.wealth(), &[2, 2]);
    }

    #[test]
    fn empirical_laws() {
        let s = PopulationState::new(vec![5, 5, 5, 5], 2).unwrap();
        assert_eq!(empirical_pmf(&s, Group::All).unwrap(), WealthPmf::dirac(5, 5).unwrap());
        let s = PopulationState::new(vec![0, 1], 2).unwrap();
        assert_eq!(empirical_pmf(&s, Group::All).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(empirical_pmf(&s, Group::Cheater), Err(Error::EmptyGroup));
    }

    #[test]
    fn gini_of_small_vectors() {
        assert_eq!(gini_of_values(&[3, 3, 3]).unwrap(), 0.0);
        assert_eq!(gini_of_values(&[0, 2]).unwrap(), 0.5);
        assert_eq!(gini_of_values(&[0, 0]), Err(Error::ZeroMean));
    }

    #[test]
    fn zero_horizon_snapshot_is_initial() {
        let p = params(100);
        let init = PopulationState::uniform(&p).unwrap();
        let res = run(&p, &SimConfig::new(1, 0.0, vec![0.0]), &init).unwrap();
        assert_eq!(res.event_count, 0);
        assert_eq!(res.snapshots.len(), 1);
        assert_eq!(res.snapshots[0].all, WealthPmf::dirac(5, 5).unwrap());
    }

    #[test]
    fn runs_are_reproducible_and_conservative() {
        let p = params(200);
        let init = PopulationState::uniform(&p).unwrap();
        let cfg = SimConfig::new(7, 20.0, vec![5.0, 10.0, 20.0]);
        let a = run(&p, &cfg, &init).unwrap();
        let b = run(&p, &cfg, &init).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.final_state.total_money(), 1000);
        assert_eq!(a.final_state.wealth().iter().sum::<u64>(), 1000);
        assert_eq!(a.snapshots.len(), 3);
        for s in &a.snapshots {
            assert!((s.all.mean() - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_is_validated() {
        let p = params(10);
        let init = PopulationState::uniform(&p).unwrap();
        assert!(run(&p, &SimConfig::new(1, 1.0, vec![2.0]), &init).is_err());
        assert!(run(&p, &SimConfig::new(1, 1.0, vec![0.5, 0.2]), &init).is_err());
        let wrong = PopulationState::new(vec![5; 10], 3).unwrap();
        assert!(run(&p, &SimConfig::new(1, 1.0, vec![]), &wrong).is_err());
    }

    #[test]
    fn occupation_average_is_a_law_with_the_right_mean() {
        let p = params(200);
        let init = PopulationState::uniform(&p).unwrap();
        let cfg = SimConfig { average_from: Some(5.0), ..SimConfig::new(3, 30.0, vec![]) };
        let res = run(&p, &cfg, &init).unwrap();
        let avg = res.time_average.unwrap();
        for g in Group::ALL {
            assert!((avg.group(g).unwrap().mass() - 1.0).abs() < 1e-12);
        }
        let joint = 0.5 * avg.honest.as_ref().unwrap().mean() + 0.5 * avg.cheater.as_ref().unwrap().mean();
        assert!((joint - 5.0).abs() < 1e-9);
        assert!((avg.all.mean() - 5.0).abs() < 1e-9);
    }
}
