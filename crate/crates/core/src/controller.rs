//! Closed-loop reserve controller and the simulation harness around it.
//!
//! Every `epoch_length` steps the controller branches the live market into a
//! batch of short adversarial stress simulations, scores agent behavior from
//! the logs those produce, aggregates a trust-weighted systemic risk index,
//! blends the calm covariance with the stress covariance in proportion to
//! squared risk, and re-solves the constrained allocation problem. Baseline
//! variants (stress-agnostic, trust-agnostic, static, unconstrained) reuse
//! the same loop with individual stages overridden, so observed differences
//! are attributable to the stage that changed and nothing else.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    spawn_population, ActionType, AgentRecord, Archetype, AttackConfig, BehaviorParams,
    Observation, Population, PopulationCounts,
};
use crate::market::{
    generate_news, step_market, MarketError, MarketParams, MarketState, ShockKind, ShockSpec,
    StepFlows, StepNoise,
};
use crate::metrics::{
    bad_debt_steps, censored_steps, liquidity_retention, peak_deviation, recovery_time,
    MetricsError, Recovery, StepRecord,
};
use crate::optimizer::{OptimizerError, PortfolioProblem};
use crate::risk::{
    adversarial_influence, agent_risk_state, aggregate_risk, blend_alpha, blend_covariance,
    estimate_stress_covariance, RiskError, RiskParams,
};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::trust::{
    build_reports, compute_features, detection_metrics, AgentWindow, DetectionRates, TrustError,
    TrustFeatures, TrustParams, TrustReport,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("market: {0}")]
    Market(#[from] MarketError),
    #[error("risk: {0}")]
    Risk(#[from] RiskError),
    #[error("trust: {0}")]
    Trust(#[from] TrustError),
    #[error("optimizer: {0}")]
    Optimizer(#[from] OptimizerError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("stress simulation failed: {0}")]
    StressSim(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Allocation policies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full pipeline: stress simulations, trust weighting, blended
    /// covariance, constrained solve.
    Composer,
    /// Calm covariance only (blend coefficient pinned to zero); no stress
    /// simulations are run.
    StressAgnostic,
    /// Stress simulations without trust weighting: every agent's report
    /// counts equally in the risk index.
    NoTrust,
    /// Fixed 60/40-style allocation (60% anchor, remainder spread evenly),
    /// projected into the box; never re-optimized.
    StaticSixtyForty,
    /// Full pipeline without the turnover constraint.
    Unconstrained,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Composer => "composer",
            Method::StressAgnostic => "stress_agnostic",
            Method::NoTrust => "no_trust",
            Method::StaticSixtyForty => "static_60_40",
            Method::Unconstrained => "unconstrained",
        }
    }

    pub const ALL: [Method; 5] = [
        Method::Composer,
        Method::StressAgnostic,
        Method::NoTrust,
        Method::StaticSixtyForty,
        Method::Unconstrained,
    ];
}

/// Stage-level overrides that turn the full pipeline into a baseline.
/// All off reproduces the full controller.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Overrides {
    /// Pin the covariance blend coefficient instead of deriving it from
    /// the risk index.
    pub force_alpha: Option<f64>,
    /// Score every agent with equal trust instead of behavioral scores.
    pub uniform_trust: bool,
    /// Skip stress simulations entirely (only sound combined with a forced
    /// blend coefficient).
    pub skip_stress_sims: bool,
    /// Hold a fixed allocation instead of solving each epoch.
    pub static_weights: bool,
    /// Drop the turnover constraint.
    pub unconstrained_turnover: bool,
}

impl Method {
    pub fn overrides(&self) -> Overrides {
        match self {
            Method::Composer => Overrides::default(),
            Method::StressAgnostic => Overrides {
                force_alpha: Some(0.0),
                uniform_trust: true,
                skip_stress_sims: true,
                ..Overrides::default()
            },
            Method::NoTrust => Overrides {
                uniform_trust: true,
                ..Overrides::default()
            },
            Method::StaticSixtyForty => Overrides {
                force_alpha: Some(0.0),
                uniform_trust: true,
                skip_stress_sims: true,
                static_weights: true,
                ..Overrides::default()
            },
            Method::Unconstrained => Overrides {
                unconstrained_turnover: true,
                ..Overrides::default()
            },
        }
    }
}

/// Controller cadence, stress-harness shape, and allocation constraints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Steps in one full run.
    pub horizon: u32,
    /// Steps between consecutive re-optimizations.
    pub epoch_length: u32,
    /// Step at which the scenario's disturbance lands in live runs.
    pub shock_injection_step: u32,
    /// Magnitude multiplier applied to the live scenario (1.0 = nominal).
    pub shock_magnitude: f64,
    /// Stress simulations branched per epoch.
    pub n_stress_sims: usize,
    /// Steps per stress simulation.
    pub stress_horizon: u32,
    /// Injection step of the disturbance inside each stress simulation.
    pub stress_injection_step: u32,
    /// Shock magnitude multiplier range across stress simulations.
    pub stress_magnitude_low: f64,
    pub stress_magnitude_high: f64,
    /// Constant pairwise correlation of the calm covariance estimate.
    pub calm_correlation: f64,
    /// Execution slippage applied to agent fills in the profit ledger.
    pub exec_slippage: f64,
    /// Per-step fee carry accrued by liquidity providers on their stake.
    pub lp_fee_rate: f64,
    /// Impairment of provider stake per unit of realized mean |return|.
    pub lp_impairment_coeff: f64,
    /// Fraction of a pool withdrawal that hits the market as sell flow.
    pub withdraw_sell_fraction: f64,
    /// Return preference in the allocation objective.
    pub return_weight: f64,
    /// Per-asset allocation bounds.
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Per-epoch L1 turnover budget; `None` disables the constraint.
    pub turnover_limit: Option<f64>,
    /// Anchor-asset share of the static baseline allocation.
    pub static_anchor_weight: f64,
    /// Peg band used for recovery measurement.
    pub recovery_epsilon: f64,
    /// Test hook: make every stress simulation batch fail, exercising the
    /// controller's degraded mode.
    pub fail_stress_sims: bool,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            horizon: 100,
            epoch_length: 10,
            shock_injection_step: 30,
            shock_magnitude: 1.0,
            n_stress_sims: 8,
            stress_horizon: 16,
            stress_injection_step: 6,
            stress_magnitude_low: 0.8,
            stress_magnitude_high: 1.2,
            calm_correlation: 0.2,
            exec_slippage: 0.05,
            lp_fee_rate: 1.5e-4,
            lp_impairment_coeff: 0.05,
            withdraw_sell_fraction: 0.3,
            return_weight: 2.5,
            lower_bound: 0.05,
            upper_bound: 0.60,
            turnover_limit: Some(0.15),
            static_anchor_weight: 0.60,
            recovery_epsilon: 0.01,
            fail_stress_sims: false,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.horizon == 0 || self.epoch_length == 0 {
            return Err(ControllerError::InvalidParameter(
                "horizon and epoch_length must be positive".into(),
            ));
        }
        if self.n_stress_sims == 0 || self.stress_horizon == 0 {
            return Err(ControllerError::InvalidParameter(
                "stress harness must run at least one simulation of at least one step".into(),
            ));
        }
        if self.stress_injection_step >= self.stress_horizon {
            return Err(ControllerError::InvalidParameter(format!(
                "stress injection step {} must precede stress horizon {}",
                self.stress_injection_step, self.stress_horizon
            )));
        }
        if !(self.stress_magnitude_low > 0.0
            && self.stress_magnitude_low <= self.stress_magnitude_high)
        {
            return Err(ControllerError::InvalidParameter(
                "stress magnitude range must be positive and ordered".into(),
            ));
        }
        if !(self.shock_magnitude.is_finite() && self.shock_magnitude > 0.0) {
            return Err(ControllerError::InvalidParameter(
                "shock_magnitude must be finite and positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.calm_correlation) {
            return Err(ControllerError::InvalidParameter(
                "calm_correlation must lie in [0, 1)".into(),
            ));
        }
        if !(0.0 < self.lower_bound && self.lower_bound <= self.upper_bound) {
            return Err(ControllerError::InvalidParameter(
                "allocation bounds must satisfy 0 < lower <= upper".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.static_anchor_weight) {
            return Err(ControllerError::InvalidParameter(
                "static_anchor_weight must lie in [0, 1]".into(),
            ));
        }
        if !(self.recovery_epsilon.is_finite() && self.recovery_epsilon > 0.0) {
            return Err(ControllerError::InvalidParameter(
                "recovery_epsilon must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to execute one run.
pub struct RunSpec<'a> {
    pub run_id: u64,
    pub seed: u64,
    pub method: Method,
    pub shock: ShockKind,
    /// When set, replaces the method's standard stage overrides; used for
    /// ablations such as forcing the blend coefficient on the full pipeline.
    pub forced_overrides: Option<Overrides>,
    pub market: &'a MarketParams,
    pub behavior: &'a BehaviorParams,
    pub attack: &'a AttackConfig,
    pub counts: &'a PopulationCounts,
    pub trust: &'a TrustParams,
    pub risk: &'a RiskParams,
    pub controller: &'a ControllerParams,
}

impl RunSpec<'_> {
    fn overrides(&self) -> Overrides {
        self.forced_overrides
            .unwrap_or_else(|| self.method.overrides())
    }
}

/// Controller state published once per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub step: u32,
    /// Trust-weighted systemic risk index.
    pub risk_index: f64,
    /// Covariance blend coefficient actually used.
    pub alpha: f64,
    /// True when the stress batch failed and the controller fell back to
    /// the calm covariance.
    pub fallback: bool,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Adversary detection outcome, where behavioral scores were computed.
    pub detection: Option<DetectionRates>,
    /// Adversarial share of trust mass, where scores were computed.
    pub influence: Option<f64>,
}

/// Complete result of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: u64,
    pub seed: u64,
    pub method: Method,
    pub shock: ShockKind,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    pub trust_reports: Vec<TrustReport>,
    pub peak_deviation: f64,
    pub recovery: Recovery,
    /// Recovery steps with unrecovered runs censored at the horizon.
    pub recovery_censored: u32,
    pub bad_debt_steps: u32,
    pub liquidity_retention: f64,
    /// Epoch-mean detection rates, for runs that scored trust.
    pub detection: Option<DetectionRates>,
    /// Epoch-mean adversarial influence, for runs that scored trust.
    pub mean_influence: Option<f64>,
}

/// Calm-regime covariance implied by the market's per-step volatilities
/// and a constant pairwise correlation.
pub fn calm_covariance(market: &MarketParams, correlation: f64) -> DMatrix<f64> {
    let n = market.n_assets();
    DMatrix::from_fn(n, n, |i, j| {
        let c = if i == j { 1.0 } else { correlation };
        c * market.calm_vol[i] * market.calm_vol[j]
    })
}

/// The static baseline allocation: `anchor_weight` on asset 0, the rest
/// spread evenly, projected into the box.
pub fn static_allocation(
    n: usize,
    anchor_weight: f64,
    lower: f64,
    upper: f64,
) -> Result<Vec<f64>, OptimizerError> {
    let mut target = vec![0.0; n];
    target[0] = anchor_weight;
    if n > 1 {
        let rest = (1.0 - anchor_weight) / (n - 1) as f64;
        for w in target.iter_mut().skip(1) {
            *w = rest;
        }
    } else {
        target[0] = 1.0;
    }
    let projector = PortfolioProblem {
        covariance: DMatrix::identity(n, n),
        expected_returns: vec![0.0; n],
        return_weight: 0.0,
        lower: vec![lower; n],
        upper: vec![upper; n],
        previous_weights: target,
        turnover_limit: None,
    };
    projector.feasible_start()
}

/// Per-agent record windows, their aligned profit series, and the peg
/// magnitude series covering the same span (one entry longer).
type TrailingWindows = (Vec<Vec<AgentRecord>>, Vec<Vec<f64>>, Vec<f64>);

/// One live or branched market simulation with its agent population and
/// bookkeeping (decision logs, per-agent profit ledger, peg magnitude
/// series).
pub struct Simulator {
    pub state: MarketState,
    population: Population,
    archetypes: Vec<Archetype>,
    labels: Vec<bool>,
    shock: ShockSpec,
    market: MarketParams,
    behavior: BehaviorParams,
    controller: ControllerParams,
    noise_rng: ChaCha8Rng,
    news_seed: u64,
    /// Per-step agent decisions, indexed [step][agent].
    records: Vec<Vec<AgentRecord>>,
    /// Per-step realized profit per agent, aligned with `records`.
    pnl: Vec<Vec<f64>>,
    /// |peg deviation| at every visited state (one longer than `records`).
    peg_abs: Vec<f64>,
    /// Realized per-asset returns at each step.
    returns: Vec<Vec<f64>>,
}

impl Simulator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: u64,
        initial_state: MarketState,
        shock: ShockSpec,
        market: &MarketParams,
        behavior: &BehaviorParams,
        attack: &AttackConfig,
        counts: &PopulationCounts,
        controller: &ControllerParams,
    ) -> Self {
        let population = spawn_population(counts, attack, behavior, market.n_assets(), seed);
        let archetypes = population.ids().iter().map(|id| id.archetype).collect();
        let labels = population.adversarial_labels();
        let peg_abs = vec![initial_state.peg_deviation.abs()];
        Simulator {
            state: initial_state,
            population,
            archetypes,
            labels,
            shock,
            market: market.clone(),
            behavior: behavior.clone(),
            controller: controller.clone(),
            noise_rng: derive_rng(seed, &[stream::MARKET]),
            news_seed: seed,
            records: Vec::new(),
            pnl: Vec::new(),
            peg_abs,
            returns: Vec::new(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.population.len()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Advances one step under the given reserve weights. `rebalance_trades`
    /// is the signed per-asset execution flow (sell-positive, in capital
    /// units) of any reserve reallocation happening this step.
    pub fn step(
        &mut self,
        weights: &[f64],
        rebalance_trades: Option<&[f64]>,
    ) -> Result<(), ControllerError> {
        let n = self.market.n_assets();
        let news = generate_news(self.news_seed, self.state.step, Some(&self.shock), n);
        let upcoming = if self.shock.kind == ShockKind::Normal {
            None
        } else {
            Some(self.shock.injection_step)
        };
        let obs = Observation {
            state: &self.state,
            news: &news,
            upcoming_shock_step: upcoming,
        };
        let records = self.population.act_step(&obs);
        let flows = assemble_flows(
            &records,
            weights,
            rebalance_trades,
            n,
            &self.behavior,
            &self.controller,
        );
        let noise = StepNoise::sample(&mut self.noise_rng, n);
        let next = step_market(
            &self.state,
            &flows,
            &news,
            Some(&self.shock),
            &self.market,
            &noise,
        )?;
        let pnl = step_pnl(
            &records,
            &self.archetypes,
            &self.state,
            &next,
            &self.behavior,
            &self.controller,
        );
        let step_returns: Vec<f64> = (0..n)
            .map(|i| next.prices[i] / self.state.prices[i] - 1.0)
            .collect();
        self.records.push(records);
        self.pnl.push(pnl);
        self.peg_abs.push(next.peg_deviation.abs());
        self.returns.push(step_returns);
        self.state = next;
        Ok(())
    }

    /// Trailing per-agent windows of the last `window` steps, with the
    /// aligned profit series and the peg magnitude series (one entry
    /// longer). Returns None until enough steps have accumulated.
    fn trailing_windows(&self, window: usize) -> Option<TrailingWindows> {
        if self.records.len() < window || window < 2 {
            return None;
        }
        let start = self.records.len() - window;
        let n_agents = self.population.len();
        let mut rec_windows = vec![Vec::with_capacity(window); n_agents];
        let mut pnl_windows = vec![Vec::with_capacity(window); n_agents];
        for t in start..self.records.len() {
            for a in 0..n_agents {
                rec_windows[a].push(self.records[t][a].clone());
                pnl_windows[a].push(self.pnl[t][a]);
            }
        }
        let peg_abs = self.peg_abs[start..].to_vec();
        Some((rec_windows, pnl_windows, peg_abs))
    }

    /// Return matrix (steps x assets) observed so far.
    fn return_matrix(&self) -> DMatrix<f64> {
        let t = self.returns.len();
        let n = self.market.n_assets();
        DMatrix::from_fn(t, n, |i, j| self.returns[i][j])
    }

    /// Pool liquidity at the start of the trailing window.
    fn window_liquidity(&self, window: usize) -> f64 {
        // peg_abs has one entry per visited state; liquidity is only kept
        // for the current state, so approximate with the current value.
        // Risk impact terms change slowly in it; the current level is the
        // conservative (smaller) choice during stress.
        let _ = window;
        self.state.pool_liquidity
    }
}

/// Aggregates agent decisions into market flows.
fn assemble_flows(
    records: &[AgentRecord],
    weights: &[f64],
    rebalance_trades: Option<&[f64]>,
    n_assets: usize,
    behavior: &BehaviorParams,
    controller: &ControllerParams,
) -> StepFlows {
    let mut flows = StepFlows::idle(weights);
    debug_assert_eq!(flows.asset_flow.len(), n_assets);
    if let Some(trades) = rebalance_trades {
        // Reserve reallocations execute in the asset markets: selling an
        // asset depresses its price before the collateral marks, so churn
        // costs the reserve through execution drag rather than hitting the
        // stablecoin peg directly.
        for (flow, trade) in flows.asset_flow.iter_mut().zip(trades.iter()) {
            *flow += trade;
        }
    }
    for r in records {
        match r.action_type {
            ActionType::Buy | ActionType::Sell => {
                flows.asset_flow[r.asset] += r.quantity;
            }
            ActionType::Mint => {
                // Mint/redeem trades the stablecoin against the reserve, so
                // its impact lands on the peg, not on one asset's price.
                flows.peg_flow += r.quantity;
                flows.supply_delta += behavior.arb_supply_ratio * r.quantity.abs();
            }
            ActionType::Redeem => {
                flows.peg_flow += r.quantity;
                flows.supply_delta -= behavior.arb_supply_ratio * r.quantity.abs();
            }
            ActionType::Withdraw => {
                flows.liquidity_withdrawal += r.quantity.max(0.0);
                flows.asset_flow[r.asset] += controller.withdraw_sell_fraction * r.quantity;
            }
            ActionType::Hold => {}
        }
    }
    flows
}

/// Marks each agent's step decision to market: trades settle at a
/// slippage-adjusted fill against the next step's price, mint/redeem
/// positions capture (or give back) peg convergence, and liquidity
/// providers accrue fee carry net of volatility impairment.
fn step_pnl(
    records: &[AgentRecord],
    archetypes: &[Archetype],
    prev: &MarketState,
    next: &MarketState,
    behavior: &BehaviorParams,
    controller: &ControllerParams,
) -> Vec<f64> {
    let n = prev.prices.len();
    let mean_abs_return: f64 = (0..n)
        .map(|i| (next.prices[i] / prev.prices[i] - 1.0).abs())
        .sum::<f64>()
        / n as f64;
    let liquidity = prev.pool_liquidity.max(1.0);
    records
        .iter()
        .zip(archetypes.iter())
        .map(|(r, arch)| {
            let mut pnl = 0.0;
            match r.action_type {
                ActionType::Buy | ActionType::Sell => {
                    let p = prev.prices[r.asset];
                    let fill = p * (1.0 - controller.exec_slippage * r.quantity / liquidity);
                    pnl += r.quantity * (fill - next.prices[r.asset]) / p;
                }
                ActionType::Mint | ActionType::Redeem => {
                    let captured = prev.peg_deviation.abs() - next.peg_deviation.abs();
                    pnl += r.quantity.abs() * captured
                        - controller.exec_slippage * r.quantity * r.quantity / liquidity;
                }
                ActionType::Withdraw => {
                    pnl -= controller.exec_slippage * r.quantity * r.quantity / liquidity;
                }
                ActionType::Hold => {}
            }
            if *arch == Archetype::LiquidityProvider {
                pnl += behavior.lp_stake
                    * (controller.lp_fee_rate - controller.lp_impairment_coeff * mean_abs_return);
            }
            pnl
        })
        .collect()
}

/// Output of one epoch's stress batch.
struct StressBatch {
    features: Vec<TrustFeatures>,
    risk_states: Vec<f64>,
    stress_cov: DMatrix<f64>,
}

/// Branches `n_stress_sims` independent stress simulations off the live
/// state, each with a fresh population and a magnitude-jittered copy of
/// the run's scenario, and aggregates behavioral features, risk states,
/// and the stress covariance across them.
fn run_stress_batch(
    spec: &RunSpec<'_>,
    live_state: &MarketState,
    epoch: u32,
    weights: &[f64],
) -> Result<StressBatch, ControllerError> {
    let cp = spec.controller;
    if cp.fail_stress_sims {
        return Err(ControllerError::StressSim(
            "stress batch disabled by failure-injection hook".into(),
        ));
    }
    let n_agents = spec.counts.total();
    let window = spec.trust.window;
    let mut feature_sums = vec![[0.0f64; 4]; n_agents];
    let mut risk_sums = vec![0.0f64; n_agents];
    let mut return_runs: Vec<DMatrix<f64>> = Vec::with_capacity(cp.n_stress_sims);

    for s in 0..cp.n_stress_sims {
        let sub_seed = derive_seed(spec.seed, &[stream::SCENARIO, epoch as u64, s as u64]);
        let magnitude = derive_rng(spec.seed, &[stream::EPOCH, epoch as u64, s as u64])
            .gen_range(cp.stress_magnitude_low..=cp.stress_magnitude_high);
        let scenario = ShockSpec::preset(spec.shock, cp.stress_injection_step)
            .scaled(cp.shock_magnitude * magnitude);
        let mut branch_state = live_state.clone();
        branch_state.step = 0;
        let mut sim = Simulator::new(
            sub_seed,
            branch_state,
            scenario,
            spec.market,
            spec.behavior,
            spec.attack,
            spec.counts,
            cp,
        );
        for _ in 0..cp.stress_horizon {
            sim.step(weights, None)?;
        }
        let (rec_windows, pnl_windows, peg_abs) =
            sim.trailing_windows(window).ok_or_else(|| {
                ControllerError::StressSim(format!(
                    "stress horizon {} shorter than the scoring window {}",
                    cp.stress_horizon, window
                ))
            })?;
        let agent_windows: Vec<AgentWindow<'_>> = (0..n_agents)
            .map(|a| AgentWindow {
                records: &rec_windows[a],
                pnl: &pnl_windows[a],
            })
            .collect();
        let features = compute_features(&agent_windows, &peg_abs, spec.trust)?;
        let liquidity = sim.window_liquidity(window);
        for a in 0..n_agents {
            let fs = features[a].as_array();
            for k in 0..4 {
                feature_sums[a][k] += fs[k];
            }
            risk_sums[a] += agent_risk_state(&rec_windows[a], liquidity, spec.risk)?;
        }
        return_runs.push(sim.return_matrix());
    }

    let n_sims = cp.n_stress_sims as f64;
    let features: Vec<TrustFeatures> = feature_sums
        .iter()
        .map(|f| TrustFeatures {
            consistency: f[0] / n_sims,
            profitability: f[1] / n_sims,
            similarity: f[2] / n_sims,
            destabilization: f[3] / n_sims,
        })
        .collect();
    let risk_states: Vec<f64> = risk_sums.iter().map(|r| r / n_sims).collect();
    let stress_cov = estimate_stress_covariance(&return_runs)?;
    Ok(StressBatch {
        features,
        risk_states,
        stress_cov,
    })
}

struct EpochOutcome {
    summary: EpochSummary,
    reports: Vec<TrustReport>,
    weights: Vec<f64>,
}

/// Executes one controller epoch: stress batch, trust scoring, risk
/// aggregation, covariance blending, and the allocation solve, honoring
/// the method's stage overrides. A failed stress batch degrades to the
/// calm covariance instead of aborting the run.
fn run_epoch(
    spec: &RunSpec<'_>,
    live_state: &MarketState,
    epoch: u32,
    prev_weights: &[f64],
    calm_cov: &DMatrix<f64>,
    labels: &[bool],
) -> Result<EpochOutcome, ControllerError> {
    let cp = spec.controller;
    let ov = spec.overrides();
    let n = spec.market.n_assets();
    let n_agents = spec.counts.total();

    let batch = if ov.skip_stress_sims {
        None
    } else {
        match run_stress_batch(spec, live_state, epoch, prev_weights) {
            Ok(b) => Some(b),
            Err(ControllerError::StressSim(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let fallback = !ov.skip_stress_sims && batch.is_none();

    let (risk_index, alpha, stress_cov, scores, reports) = match &batch {
        Some(b) => {
            let scored: Vec<f64> = b
                .features
                .iter()
                .map(|f| crate::trust::trust_score(f, spec.trust))
                .collect();
            let weights_for_risk: Vec<f64> = if ov.uniform_trust {
                vec![1.0; n_agents]
            } else {
                scored.clone()
            };
            let risk_index = aggregate_risk(&weights_for_risk, &b.risk_states)?;
            let alpha = ov.force_alpha.unwrap_or_else(|| blend_alpha(risk_index));
            let reports = build_reports(
                spec.run_id,
                live_state.step,
                &b.features,
                labels,
                spec.trust,
            )?;
            (
                risk_index,
                alpha,
                Some(&b.stress_cov),
                Some(scored),
                reports,
            )
        }
        None => {
            let alpha = ov.force_alpha.unwrap_or(0.0);
            (0.0, alpha, None, None, Vec::new())
        }
    };

    let blended = match stress_cov {
        Some(s) if alpha > 0.0 => blend_covariance(calm_cov, s, alpha)?,
        _ => calm_cov.clone(),
    };

    let (weights, objective, kkt_residual) = if ov.static_weights {
        let w = static_allocation(n, cp.static_anchor_weight, cp.lower_bound, cp.upper_bound)?;
        (w, 0.0, 0.0)
    } else {
        let problem = PortfolioProblem {
            covariance: blended,
            expected_returns: spec.market.expected_return.clone(),
            return_weight: cp.return_weight,
            lower: vec![cp.lower_bound; n],
            upper: vec![cp.upper_bound; n],
            previous_weights: prev_weights.to_vec(),
            turnover_limit: if ov.unconstrained_turnover {
                None
            } else {
                cp.turnover_limit
            },
        };
        let sol = problem.solve()?;
        (sol.weights, sol.objective, sol.kkt_residual)
    };

    // Detection and influence only make sense when behavioral scores were
    // actually used to discriminate agents.
    let (detection, influence) = match (&scores, ov.uniform_trust) {
        (Some(s), false) => {
            let det = detection_metrics(s, labels, spec.trust.threshold).ok();
            let infl = adversarial_influence(s, labels).ok();
            (det, infl)
        }
        _ => (None, None),
    };

    Ok(EpochOutcome {
        summary: EpochSummary {
            epoch,
            step: live_state.step,
            risk_index,
            alpha,
            fallback,
            weights: weights.clone(),
            objective,
            kkt_residual,
            detection,
            influence,
        },
        reports,
        weights,
    })
}

/// Executes one full run.
pub fn run_trajectory(spec: &RunSpec<'_>) -> Result<RunResult, ControllerError> {
    spec.controller.validate()?;
    spec.market
        .validate()
        .map_err(ControllerError::InvalidParameter)?;
    spec.attack
        .validate()
        .map_err(ControllerError::InvalidParameter)?;
    spec.trust.validate()?;
    spec.risk.validate()?;
    let cp = spec.controller;
    let n = spec.market.n_assets();
    if cp.lower_bound * n as f64 > 1.0 {
        return Err(ControllerError::InvalidParameter(format!(
            "lower bound {} infeasible for {} assets",
            cp.lower_bound, n
        )));
    }

    let shock = ShockSpec::preset(spec.shock, cp.shock_injection_step).scaled(cp.shock_magnitude);
    let calm_cov = calm_covariance(spec.market, cp.calm_correlation);
    let mut sim = Simulator::new(
        spec.seed,
        spec.market.initial_state(),
        shock,
        spec.market,
        spec.behavior,
        spec.attack,
        spec.counts,
        cp,
    );
    let labels = sim.labels().to_vec();

    let mut weights = vec![1.0 / n as f64; n];
    let mut steps: Vec<StepRecord> = Vec::with_capacity(cp.horizon as usize + 1);
    let mut epochs: Vec<EpochSummary> = Vec::new();
    let mut trust_reports: Vec<TrustReport> = Vec::new();
    let mut current_risk = 0.0;
    let mut current_alpha = 0.0;

    for t in 0..cp.horizon {
        let mut rebalance_trades: Option<Vec<f64>> = None;
        if t % cp.epoch_length == 0 {
            let epoch_idx = t / cp.epoch_length;
            let outcome = run_epoch(spec, &sim.state, epoch_idx, &weights, &calm_cov, &labels)?;
            // Reallocating means selling down the reduced assets and buying
            // the increased ones; the signed executed notionals tilt those
            // asset prices this step (sell-positive).
            let collateral = sim.state.collateral_value;
            let trades: Vec<f64> = weights
                .iter()
                .zip(outcome.weights.iter())
                .map(|(old, new)| collateral * (old - new))
                .collect();
            if trades.iter().any(|t| t.abs() > 0.0) {
                rebalance_trades = Some(trades);
            }
            current_risk = outcome.summary.risk_index;
            current_alpha = outcome.summary.alpha;
            weights = outcome.weights.clone();
            trust_reports.extend(outcome.reports);
            epochs.push(outcome.summary);
        }
        steps.push(step_record(
            &sim.state,
            &weights,
            current_risk,
            current_alpha,
        ));
        sim.step(&weights, rebalance_trades.as_deref())?;
    }
    steps.push(step_record(
        &sim.state,
        &weights,
        current_risk,
        current_alpha,
    ));

    let peg: Vec<f64> = steps.iter().map(|s| s.peg_deviation).collect();
    let collateral: Vec<f64> = steps.iter().map(|s| s.collateral).collect();
    let supply: Vec<f64> = steps.iter().map(|s| s.supply).collect();
    let liquidity: Vec<f64> = steps.iter().map(|s| s.liquidity).collect();
    let shock_step = cp.shock_injection_step as usize;

    let peak = peak_deviation(&peg)?;
    let recovery = recovery_time(&peg, shock_step, cp.recovery_epsilon)?;
    let recovery_censored = censored_steps(recovery, shock_step, cp.horizon as usize);
    let bad_debt = bad_debt_steps(&collateral, &supply)?;
    let retention = liquidity_retention(&liquidity, shock_step)?;

    let epoch_detections: Vec<DetectionRates> = epochs.iter().filter_map(|e| e.detection).collect();
    let detection = if epoch_detections.is_empty() {
        None
    } else {
        let m = epoch_detections.len() as f64;
        Some(DetectionRates {
            tpr: epoch_detections.iter().map(|d| d.tpr).sum::<f64>() / m,
            fpr: epoch_detections.iter().map(|d| d.fpr).sum::<f64>() / m,
        })
    };
    let influences: Vec<f64> = epochs.iter().filter_map(|e| e.influence).collect();
    let mean_influence = if influences.is_empty() {
        None
    } else {
        Some(influences.iter().sum::<f64>() / influences.len() as f64)
    };

    Ok(RunResult {
        run_id: spec.run_id,
        seed: spec.seed,
        method: spec.method,
        shock: spec.shock,
        steps,
        epochs,
        trust_reports,
        peak_deviation: peak,
        recovery,
        recovery_censored,
        bad_debt_steps: bad_debt,
        liquidity_retention: retention,
        detection,
        mean_influence,
    })
}

fn step_record(state: &MarketState, weights: &[f64], risk_index: f64, alpha: f64) -> StepRecord {
    StepRecord {
        step: state.step,
        peg_deviation: state.peg_deviation,
        collateral: state.collateral_value,
        supply: state.stablecoin_supply,
        liquidity: state.pool_liquidity,
        volatility: state.volatility,
        risk_index,
        alpha,
        weights: weights.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quick_controller() -> ControllerParams {
        ControllerParams {
            horizon: 40,
            epoch_length: 10,
            shock_injection_step: 15,
            n_stress_sims: 2,
            stress_horizon: 14,
            stress_injection_step: 4,
            ..ControllerParams::default()
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn spec_with<'a>(
        method: Method,
        shock: ShockKind,
        seed: u64,
        market: &'a MarketParams,
        behavior: &'a BehaviorParams,
        attack: &'a AttackConfig,
        counts: &'a PopulationCounts,
        trust: &'a TrustParams,
        risk: &'a RiskParams,
        controller: &'a ControllerParams,
    ) -> RunSpec<'a> {
        RunSpec {
            run_id: 0,
            seed,
            method,
            shock,
            forced_overrides: None,
            market,
            behavior,
            attack,
            counts,
            trust,
            risk,
            controller,
        }
    }

    #[test]
    fn flow_assembly_routes_each_action() {
        let behavior = BehaviorParams::default();
        let cp = ControllerParams::default();
        let weights = vec![0.25; 4];
        let mut records = vec![AgentRecord::hold(0, 0); 5];
        records[0].action_type = ActionType::Sell;
        records[0].asset = 1;
        records[0].quantity = 1000.0;
        records[1].action_type = ActionType::Buy;
        records[1].asset = 1;
        records[1].quantity = -400.0;
        records[2].action_type = ActionType::Mint;
        records[2].asset = 0;
        records[2].quantity = -600.0;
        records[3].action_type = ActionType::Withdraw;
        records[3].asset = 2;
        records[3].quantity = 2000.0;
        let rebalance = vec![50.0, -50.0, 0.0, 0.0];
        let flows = assemble_flows(&records, &weights, Some(&rebalance), 4, &behavior, &cp);
        assert_relative_eq!(flows.asset_flow[1], 600.0 - 50.0, epsilon = 1e-12);
        // Mint/redeem flow lands on the peg, not on the asset's price, so
        // asset 0 only carries the rebalancing sale.
        assert_relative_eq!(flows.asset_flow[0], 50.0, epsilon = 1e-12);
        assert_relative_eq!(flows.peg_flow, -600.0, epsilon = 1e-12);
        assert_relative_eq!(flows.asset_flow[2], 0.3 * 2000.0, epsilon = 1e-12);
        assert_relative_eq!(flows.liquidity_withdrawal, 2000.0, epsilon = 1e-12);
        assert_relative_eq!(
            flows.supply_delta,
            behavior.arb_supply_ratio * 600.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pnl_rewards_selling_before_drawdowns() {
        let behavior = BehaviorParams::default();
        let cp = ControllerParams::default();
        let market = MarketParams::default();
        let prev = market.initial_state();
        let mut next = prev.clone();
        next.prices = vec![0.95; 4];
        let mut sell = AgentRecord::hold(0, 0);
        sell.action_type = ActionType::Sell;
        sell.asset = 1;
        sell.quantity = 10_000.0;
        let mut buy = sell.clone();
        buy.action_type = ActionType::Buy;
        buy.quantity = -10_000.0;
        let pnl = step_pnl(
            &[sell, buy],
            &[Archetype::Trader, Archetype::Trader],
            &prev,
            &next,
            &behavior,
            &cp,
        );
        assert!(
            pnl[0] > 0.0,
            "selling into a crash should profit: {}",
            pnl[0]
        );
        assert!(pnl[1] < 0.0, "buying into a crash should lose: {}", pnl[1]);
    }

    #[test]
    fn lp_carry_is_positive_in_calm_and_negative_in_turbulence() {
        let behavior = BehaviorParams::default();
        let cp = ControllerParams::default();
        let market = MarketParams::default();
        let prev = market.initial_state();
        let mut calm_next = prev.clone();
        calm_next.prices = vec![1.0001; 4];
        let mut rough_next = prev.clone();
        rough_next.prices = vec![0.985; 4];
        let hold = AgentRecord::hold(0, 0);
        let calm = step_pnl(
            std::slice::from_ref(&hold),
            &[Archetype::LiquidityProvider],
            &prev,
            &calm_next,
            &behavior,
            &cp,
        );
        let rough = step_pnl(
            &[hold],
            &[Archetype::LiquidityProvider],
            &prev,
            &rough_next,
            &behavior,
            &cp,
        );
        assert!(calm[0] > 0.0);
        assert!(rough[0] < 0.0);
    }

    #[test]
    fn static_allocation_projects_into_box() {
        let w = static_allocation(4, 0.60, 0.05, 0.60).unwrap();
        assert_relative_eq!(w[0], 0.60, epsilon = 1e-12);
        for wi in &w[1..] {
            assert_relative_eq!(*wi, 0.4 / 3.0, epsilon = 1e-12);
        }
        // A 90% anchor target must be clipped to the cap.
        let w = static_allocation(4, 0.90, 0.05, 0.60).unwrap();
        assert_relative_eq!(w[0], 0.60, epsilon = 1e-12);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn failed_stress_batch_degrades_to_calm_covariance() {
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = ControllerParams {
            fail_stress_sims: true,
            ..quick_controller()
        };
        let spec = spec_with(
            Method::Composer,
            ShockKind::BlackThursday,
            11,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        let result = run_trajectory(&spec).unwrap();
        assert!(result.epochs.iter().all(|e| e.fallback));
        assert!(result.epochs.iter().all(|e| e.alpha == 0.0));
        assert!(result.trust_reports.is_empty());
        assert!(result.detection.is_none());
    }

    #[test]
    fn static_method_never_moves_after_first_epoch() {
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = quick_controller();
        let spec = spec_with(
            Method::StaticSixtyForty,
            ShockKind::BlackThursday,
            5,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        let result = run_trajectory(&spec).unwrap();
        let expected = static_allocation(4, 0.60, 0.05, 0.60).unwrap();
        for e in &result.epochs {
            assert_eq!(e.weights, expected);
        }
        // After the first epoch the live weights equal the target too.
        for s in result.steps.iter().skip(1) {
            assert_eq!(s.weights, expected);
        }
    }

    #[test]
    fn stress_agnostic_equals_composer_with_neutralized_signals() {
        // Pinning the blend to zero and trust to uniform must reproduce the
        // stress-agnostic baseline exactly, epoch by epoch.
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = quick_controller();
        let sas = spec_with(
            Method::StressAgnostic,
            ShockKind::BlackThursday,
            9,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        let sas_result = run_trajectory(&sas).unwrap();

        // The composer with every signal neutralized: same calm covariance
        // solve, even though it still pays for the stress batch.
        let mut composer = spec_with(
            Method::Composer,
            ShockKind::BlackThursday,
            9,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        composer.forced_overrides = Some(Overrides {
            force_alpha: Some(0.0),
            uniform_trust: true,
            ..Overrides::default()
        });
        let composer_result = run_trajectory(&composer).unwrap();
        for (a, b) in sas_result.epochs.iter().zip(composer_result.epochs.iter()) {
            for (wa, wb) in a.weights.iter().zip(b.weights.iter()) {
                assert_relative_eq!(wa, wb, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn run_is_deterministic_for_a_seed() {
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = quick_controller();
        let run = |seed: u64| {
            let spec = spec_with(
                Method::Composer,
                ShockKind::BlackThursday,
                seed,
                &market,
                &behavior,
                &attack,
                &counts,
                &trust,
                &risk,
                &controller,
            );
            serde_json::to_string(&run_trajectory(&spec).unwrap()).unwrap()
        };
        assert_eq!(run(21), run(21));
        assert_ne!(run(21), run(22));
    }

    #[test]
    fn shock_run_records_full_trajectory_and_metrics() {
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = quick_controller();
        let spec = spec_with(
            Method::Composer,
            ShockKind::BlackThursday,
            3,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        let result = run_trajectory(&spec).unwrap();
        assert_eq!(result.steps.len(), controller.horizon as usize + 1);
        assert_eq!(result.epochs.len(), 4);
        assert!(
            result.peak_deviation > 0.01,
            "shock left no mark: {}",
            result.peak_deviation
        );
        assert!(result.liquidity_retention > 0.0);
        assert!(result.detection.is_some());
        assert!(result.mean_influence.is_some());
        // Stress batches ran under a crisis scenario: risk must register.
        let stressed_alpha = result.epochs.iter().map(|e| e.alpha).fold(0.0f64, f64::max);
        assert!(stressed_alpha > 0.01, "alpha never rose: {stressed_alpha}");
    }

    #[test]
    fn trust_scores_separate_attackers_in_stress_runs() {
        let market = MarketParams::default();
        let behavior = BehaviorParams::default();
        let attack = AttackConfig::default();
        let counts = PopulationCounts::default();
        let trust = TrustParams::default();
        let risk = RiskParams::default();
        let controller = quick_controller();
        let spec = spec_with(
            Method::Composer,
            ShockKind::BlackThursday,
            17,
            &market,
            &behavior,
            &attack,
            &counts,
            &trust,
            &risk,
            &controller,
        );
        let result = run_trajectory(&spec).unwrap();
        let labels = &result.trust_reports;
        assert!(!labels.is_empty());
        let adv_mean = labels
            .iter()
            .filter(|r| r.label)
            .map(|r| r.score)
            .sum::<f64>()
            / labels.iter().filter(|r| r.label).count() as f64;
        let ben_mean = labels
            .iter()
            .filter(|r| !r.label)
            .map(|r| r.score)
            .sum::<f64>()
            / labels.iter().filter(|r| !r.label).count() as f64;
        assert!(
            adv_mean + 0.1 < ben_mean,
            "no separation: adversarial {adv_mean:.3} vs benign {ben_mean:.3}"
        );
    }
}
