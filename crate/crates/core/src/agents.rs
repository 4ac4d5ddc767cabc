//! Agent population: archetype behaviors, adversarial coordination, and the
//! record schema shared by the simulator, trust scorer, and risk aggregator.
//!
//! Behaviors are deliberately simple stochastic rules whose emergent
//! statistics (sentiment consistency, profitability, cross-agent similarity,
//! destabilization timing) land inside published per-archetype envelopes;
//! the envelopes, not the rules, are the contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{MarketState, NewsEvent};
use crate::rng::{derive_rng, derive_seed, stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Behavioral archetypes present in the simulated population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Trader,
    LiquidityProvider,
    Arbitrageur,
    Attacker,
}

impl Archetype {
    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Trader => "trader",
            Archetype::LiquidityProvider => "liquidity_provider",
            Archetype::Arbitrageur => "arbitrageur",
            Archetype::Attacker => "attacker",
        }
    }
}

/// Identity and ground-truth label of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentId {
    pub index: usize,
    pub archetype: Archetype,
    pub adversarial: bool,
}

/// Action vocabulary agents may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Buy,
    Sell,
    Hold,
    Withdraw,
    Mint,
    Redeem,
}

impl ActionType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionType::Buy => "buy",
            ActionType::Sell => "sell",
            ActionType::Hold => "hold",
            ActionType::Withdraw => "withdraw",
            ActionType::Mint => "mint",
            ActionType::Redeem => "redeem",
        }
    }
}

/// One logged agent decision.
///
/// `quantity` is in signed capital units with positive values exerting sell
/// pressure on the peg. Psychological fields (`stated_sentiment`,
/// `panic_level`, `peg_confidence`, `risk_appetite`) are self-reported and
/// may be dishonest; the executed action is ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent: usize,
    pub step: u32,
    pub action_type: ActionType,
    pub asset: usize,
    pub quantity: f64,
    pub stated_sentiment: f64,
    pub panic_level: f64,
    pub peg_confidence: f64,
    pub risk_appetite: f64,
    pub rationale: String,
}

impl AgentRecord {
    pub fn hold(agent: usize, step: u32) -> Self {
        AgentRecord {
            agent,
            step,
            action_type: ActionType::Hold,
            asset: 0,
            quantity: 0.0,
            stated_sentiment: 0.0,
            panic_level: 0.0,
            peg_confidence: 0.5,
            risk_appetite: 0.5,
            rationale: "no action".to_string(),
        }
    }

    /// Serializes the record to the compact decision schema used at the
    /// agent boundary: exactly the keys `action_type`, `asset`, `quantity`,
    /// `rationale`, `panic_level`, `peg_confidence`.
    pub fn to_wire_json(&self, asset_names: &[String]) -> serde_json::Value {
        let asset = asset_names
            .get(self.asset)
            .cloned()
            .unwrap_or_else(|| self.asset.to_string());
        serde_json::json!({
            "action_type": self.action_type.as_str(),
            "asset": asset,
            "quantity": self.quantity,
            "rationale": self.rationale,
            "panic_level": self.panic_level,
            "peg_confidence": self.peg_confidence,
        })
    }
}

/// Validation failures for records coming back across the agent boundary.
#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("{field} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("quantity is not finite")]
    NonFiniteQuantity,
    #[error("asset index {asset} out of bounds for {n_assets} assets")]
    UnknownAsset { asset: usize, n_assets: usize },
    #[error("hold action carries non-zero quantity {quantity}")]
    HoldWithQuantity { quantity: f64 },
}

/// Checks range and consistency invariants on a record.
pub fn validate_record(record: &AgentRecord, n_assets: usize) -> Result<(), RecordError> {
    if !record.quantity.is_finite() {
        return Err(RecordError::NonFiniteQuantity);
    }
    for (field, value, lo, hi) in [
        ("stated_sentiment", record.stated_sentiment, -1.0, 1.0),
        ("panic_level", record.panic_level, 0.0, 1.0),
        ("peg_confidence", record.peg_confidence, 0.0, 1.0),
        ("risk_appetite", record.risk_appetite, 0.0, 1.0),
    ] {
        if !value.is_finite() || value < lo || value > hi {
            return Err(RecordError::OutOfRange {
                field,
                value,
                lo,
                hi,
            });
        }
    }
    if record.asset >= n_assets {
        return Err(RecordError::UnknownAsset {
            asset: record.asset,
            n_assets,
        });
    }
    if record.action_type == ActionType::Hold && record.quantity != 0.0 {
        return Err(RecordError::HoldWithQuantity {
            quantity: record.quantity,
        });
    }
    Ok(())
}

/// When adversaries act relative to market stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Attack pressure at every step.
    Always,
    /// Attack only while peg stress is visible (rising |deviation| or
    /// elevated volatility).
    OnStress,
    /// Attack in the window just before a known disturbance.
    PreShock,
}

/// Shared configuration of the adversarial coalition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Probability that an attacker copies the coalition's shared action
    /// template at a given step (1.0 = perfectly synchronized Sybils).
    pub coordination: f64,
    /// Blend factor for dishonest self-reports: 0 = honest psychology,
    /// 1 = fully fabricated calm.
    pub injection_strength: f64,
    pub timing: TimingMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            coordination: 0.8,
            injection_strength: 0.8,
            timing: TimingMode::OnStress,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.coordination) {
            return Err(format!("coordination {} outside [0, 1]", self.coordination));
        }
        if !(0.0..=1.0).contains(&self.injection_strength) {
            return Err(format!(
                "injection_strength {} outside [0, 1]",
                self.injection_strength
            ));
        }
        Ok(())
    }
}

/// Population composition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationCounts {
    pub traders: usize,
    pub liquidity_providers: usize,
    pub arbitrageurs: usize,
    pub attackers: usize,
}

impl Default for PopulationCounts {
    fn default() -> Self {
        PopulationCounts {
            traders: 5,
            liquidity_providers: 3,
            arbitrageurs: 2,
            attackers: 2,
        }
    }
}

impl PopulationCounts {
    pub fn total(&self) -> usize {
        self.traders + self.liquidity_providers + self.arbitrageurs + self.attackers
    }

    /// Fraction of the population that is adversarial.
    pub fn adversarial_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.attackers as f64 / self.total() as f64
        }
    }

    /// Re-balances the population to hit adversarial fraction `rho`,
    /// converting traders to attackers while keeping the total fixed.
    pub fn with_adversarial_fraction(&self, rho: f64) -> Self {
        let total = self.total();
        let attackers = ((rho * total as f64).round() as usize).min(total);
        let benign = total - attackers;
        let lps = self.liquidity_providers.min(benign);
        let arbs = self.arbitrageurs.min(benign.saturating_sub(lps));
        let traders = benign - lps - arbs;
        PopulationCounts {
            traders,
            liquidity_providers: lps,
            arbitrageurs: arbs,
            attackers,
        }
    }
}

/// Calibration constants for the scripted behaviors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    /// Panic response: logistic in |peg deviation|, negative sentiment, and
    /// the volatility state.
    pub panic_bias: f64,
    pub panic_peg_weight: f64,
    pub panic_sentiment_weight: f64,
    pub panic_vol_weight: f64,
    /// Trading budget per step, in capital units, by archetype.
    pub trader_budget: f64,
    pub lp_stake: f64,
    pub arb_budget: f64,
    pub attacker_budget: f64,
    /// Weight of market sentiment vs news polarity in trader beliefs.
    pub trader_sentiment_weight: f64,
    pub trader_news_weight: f64,
    /// Standard deviation of idiosyncratic trader belief noise.
    pub trader_belief_noise: f64,
    /// Log-scale noise on trade sizes.
    pub size_noise: f64,
    /// Baseline probability that a trader sits out a calm step.
    pub trader_hold_base: f64,
    /// Panic level above which liquidity providers start withdrawing.
    pub lp_withdraw_threshold: f64,
    /// Fraction of stake a fully panicked provider pulls per step.
    pub lp_withdraw_rate: f64,
    /// Peg deviation magnitude below which arbitrageurs stand down.
    pub arb_threshold: f64,
    /// Arbitrage response size per unit of peg deviation.
    pub arb_gain: f64,
    /// Supply change per unit of arbitrage quantity (mint/redeem ratio).
    pub arb_supply_ratio: f64,
    /// Attack burst cadence: sell hard for `burst_len` of every
    /// `burst_period` steps while active.
    pub attacker_burst_period: u32,
    pub attacker_burst_len: u32,
    /// Scale of coordinated probe trades outside attack windows.
    pub attacker_probe_scale: f64,
    /// |peg deviation| level that reads as visible stress to attackers.
    pub attacker_stress_peg: f64,
    /// Volatility level that reads as visible stress to attackers.
    pub attacker_stress_vol: f64,
    /// Steps before a known shock in which pre-positioned attackers act.
    pub preshock_window: u32,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            panic_bias: -5.3,
            panic_peg_weight: 18.0,
            panic_sentiment_weight: 2.2,
            panic_vol_weight: 7.0,
            trader_budget: 1.0e4,
            lp_stake: 2.0e5,
            arb_budget: 4.5e4,
            attacker_budget: 2.5e4,
            trader_sentiment_weight: 0.65,
            trader_news_weight: 0.35,
            trader_belief_noise: 0.18,
            size_noise: 0.25,
            trader_hold_base: 0.45,
            lp_withdraw_threshold: 0.40,
            lp_withdraw_rate: 0.25,
            arb_threshold: 4.0e-3,
            arb_gain: 2.0e5,
            arb_supply_ratio: 0.05,
            attacker_burst_period: 5,
            attacker_burst_len: 2,
            attacker_probe_scale: 0.08,
            attacker_stress_peg: 0.015,
            attacker_stress_vol: 0.25,
            preshock_window: 5,
        }
    }
}

/// Shared panic response used by every scripted behavior.
pub fn panic_level(state: &MarketState, params: &BehaviorParams) -> f64 {
    let z = params.panic_bias
        + params.panic_peg_weight * state.peg_deviation.abs()
        + params.panic_sentiment_weight * (-state.sentiment).max(0.0)
        + params.panic_vol_weight * state.volatility;
    sigmoid(z)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Everything an agent observes when deciding.
pub struct Observation<'a> {
    pub state: &'a MarketState,
    pub news: &'a NewsEvent,
    /// Injection step of the scenario's disturbance, where one is scheduled.
    /// Only pre-positioned adversaries exploit this.
    pub upcoming_shock_step: Option<u32>,
}

/// Decision interface. Scripted behaviors implement this; external decision
/// engines can be plugged in behind the same boundary, with invalid
/// responses degraded to Hold by [`Population::act_step`].
pub trait AgentBackend: Send {
    fn respond(&mut self, obs: &Observation<'_>) -> AgentRecord;
}

/// Expected per-archetype intervals for the behavioral features
/// (consistency, profitability, max similarity, destabilization timing)
/// measured over a trailing window.
pub fn expected_feature_envelope(archetype: Archetype) -> [(f64, f64); 4] {
    match archetype {
        Archetype::Trader => [(0.5, 0.9), (0.6, 0.9), (0.1, 0.3), (-0.1, 0.2)],
        Archetype::LiquidityProvider => [(0.4, 0.8), (0.7, 0.95), (0.15, 0.35), (-0.2, 0.15)],
        Archetype::Arbitrageur => [(0.6, 0.95), (0.8, 0.98), (0.2, 0.4), (-0.3, 0.1)],
        Archetype::Attacker => [(-0.3, 0.3), (0.2, 0.5), (0.5, 0.9), (0.4, 0.85)],
    }
}

fn lognormal_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (sigma * z).exp()
}

fn normal_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct TraderPolicy {
    agent: usize,
    rng: ChaCha8Rng,
    params: BehaviorParams,
    risk_profile: f64,
    favorite_asset: usize,
    n_assets: usize,
}

impl AgentBackend for TraderPolicy {
    fn respond(&mut self, obs: &Observation<'_>) -> AgentRecord {
        let p = &self.params;
        let state = obs.state;
        let panic = panic_level(state, p);
        let belief = (p.trader_sentiment_weight * state.sentiment
            + p.trader_news_weight * obs.news.polarity
            + normal_noise(&mut self.rng, p.trader_belief_noise))
        .clamp(-1.0, 1.0);
        // One signal drives the statement, the direction, and the size: the
        // belief tempered by fear. Saying what you trade on is what makes an
        // honest agent legible to the consistency feature.
        let drive = ((1.0 - 0.6 * panic) * belief - 0.55 * panic * panic).clamp(-1.0, 1.0);

        let hold_prob = (p.trader_hold_base - 0.35 * (drive.abs() + panic).min(1.0)).max(0.05);
        let u: f64 = self.rng.gen();
        let peg_confidence =
            (1.0 - 8.0 * state.peg_deviation.abs() - 2.0 * state.shortfall()).clamp(0.0, 1.0);
        let risk_appetite = (self.risk_profile * (1.0 - 0.8 * panic)).clamp(0.0, 1.0);
        if u < hold_prob {
            return AgentRecord {
                agent: self.agent,
                step: state.step,
                action_type: ActionType::Hold,
                asset: self.favorite_asset,
                quantity: 0.0,
                // Conviction too weak to act on is reported as neutral.
                stated_sentiment: 0.0,
                panic_level: panic,
                peg_confidence,
                risk_appetite,
                rationale: format!("no conviction at sentiment {belief:+.2}"),
            };
        }

        let selling = drive < 0.0;
        let magnitude = p.trader_budget
            * (0.15 + 0.85 * drive.abs())
            * self.risk_profile
            * lognormal_noise(&mut self.rng, p.size_noise);
        let quantity = if selling { magnitude } else { -magnitude };
        let asset = if self.rng.gen::<f64>() < 0.8 {
            self.favorite_asset
        } else {
            self.rng.gen_range(0..self.n_assets)
        };
        AgentRecord {
            agent: self.agent,
            step: state.step,
            action_type: if selling {
                ActionType::Sell
            } else {
                ActionType::Buy
            },
            asset,
            quantity,
            stated_sentiment: drive,
            panic_level: panic,
            peg_confidence,
            risk_appetite,
            rationale: format!(
                "{} on sentiment {belief:+.2}, panic {panic:.2}",
                if selling { "selling" } else { "buying" }
            ),
        }
    }
}

struct LpPolicy {
    agent: usize,
    rng: ChaCha8Rng,
    params: BehaviorParams,
    stake: f64,
    /// Undrawn remainder of the stake; withdrawals deplete it.
    remaining: f64,
    favorite_asset: usize,
}

impl AgentBackend for LpPolicy {
    fn respond(&mut self, obs: &Observation<'_>) -> AgentRecord {
        let p = &self.params;
        let state = obs.state;
        let panic = panic_level(state, p);
        let peg_confidence =
            (1.0 - 6.0 * state.peg_deviation.abs() - 2.5 * state.shortfall()).clamp(0.0, 1.0);
        if panic > p.lp_withdraw_threshold && self.remaining > 0.02 * self.stake {
            // The same urgency draw sets how much is pulled and how bad the
            // provider says things look, so the statement tracks the action.
            // Withdrawals deplete the provider's stake: a panicked exit runs
            // at full clip for a few steps and then the position is gone.
            let urgency = (panic * lognormal_noise(&mut self.rng, p.size_noise * 0.6)).min(1.25);
            let quantity = (self.stake * p.lp_withdraw_rate * urgency).min(self.remaining);
            self.remaining -= quantity;
            let stated = (-0.72 * urgency + normal_noise(&mut self.rng, 0.10)).clamp(-1.0, 0.0);
            return AgentRecord {
                agent: self.agent,
                step: state.step,
                action_type: ActionType::Withdraw,
                asset: self.favorite_asset,
                quantity,
                stated_sentiment: stated,
                panic_level: panic,
                peg_confidence,
                risk_appetite: (0.4 * (1.0 - panic)).clamp(0.0, 1.0),
                rationale: format!("derisking pool position, panic {panic:.2}"),
            };
        }

        let inclination =
            (0.5 * state.sentiment + 0.2 * obs.news.polarity + normal_noise(&mut self.rng, 0.12))
                .clamp(-1.0, 1.0);
        if self.rng.gen::<f64>() < 0.5 || self.remaining <= 0.02 * self.stake {
            let rationale = if self.remaining <= 0.02 * self.stake {
                "position fully redeemed"
            } else {
                "maintaining pool position"
            };
            return AgentRecord {
                agent: self.agent,
                step: state.step,
                action_type: ActionType::Hold,
                asset: self.favorite_asset,
                quantity: 0.0,
                // A maintained position is reported as a neutral stance.
                stated_sentiment: 0.0,
                panic_level: panic,
                peg_confidence,
                risk_appetite: 0.5,
                rationale: rationale.to_string(),
            };
        }
        let magnitude = self.remaining
            * 0.012
            * inclination.abs()
            * lognormal_noise(&mut self.rng, p.size_noise);
        let selling = inclination < 0.0;
        AgentRecord {
            agent: self.agent,
            step: state.step,
            action_type: if selling {
                ActionType::Sell
            } else {
                ActionType::Buy
            },
            asset: self.favorite_asset,
            quantity: if selling { magnitude } else { -magnitude },
            stated_sentiment: inclination,
            panic_level: panic,
            peg_confidence,
            risk_appetite: 0.5,
            rationale: format!("inventory trim at lean {inclination:+.2}"),
        }
    }
}

struct ArbPolicy {
    agent: usize,
    rng: ChaCha8Rng,
    params: BehaviorParams,
    skill: f64,
}

impl AgentBackend for ArbPolicy {
    fn respond(&mut self, obs: &Observation<'_>) -> AgentRecord {
        let p = &self.params;
        let state = obs.state;
        let panic = panic_level(state, p);
        let delta = state.peg_deviation;
        let peg_confidence = (1.0 - 5.0 * delta.abs()).clamp(0.0, 1.0);
        // Each desk pauses on its own schedule (funding checks, risk
        // sign-offs), and stands aside entirely when the market is too
        // dislocated to execute against. Two desks running the same strategy
        // therefore still differ step to step.
        let paused = self.rng.gen::<f64>() < 0.22;
        let dislocated = delta.abs() >= 0.30;
        if delta.abs() <= p.arb_threshold || paused || dislocated {
            let rationale = if dislocated {
                "standing aside in dislocated market"
            } else {
                "spread below actionable threshold"
            };
            return AgentRecord {
                agent: self.agent,
                step: state.step,
                action_type: ActionType::Hold,
                asset: 0,
                quantity: 0.0,
                stated_sentiment: 0.0,
                panic_level: panic,
                peg_confidence,
                risk_appetite: 0.7,
                rationale: rationale.to_string(),
            };
        }
        // Quantity opposes the deviation: counter-flow restores the peg.
        // Sizing is execution-aware: in a thin pool an order large relative
        // to liquidity would push the peg past par instead of onto it, so
        // the desk caps each clip at a fraction of the visible gap times
        // depth, besides its own inventory limit.
        let raw = -p.arb_gain * delta * self.skill * lognormal_noise(&mut self.rng, 0.10);
        let depth_cap = 0.3 * delta.abs() * state.pool_liquidity;
        let cap = p.arb_budget.min(depth_cap);
        let quantity = raw.clamp(-cap, cap);
        let stated = (5.0 * delta + normal_noise(&mut self.rng, 0.04)).clamp(-1.0, 1.0);
        AgentRecord {
            agent: self.agent,
            step: state.step,
            action_type: if delta > 0.0 {
                ActionType::Mint
            } else {
                ActionType::Redeem
            },
            asset: 0,
            quantity,
            stated_sentiment: stated,
            panic_level: panic,
            peg_confidence,
            risk_appetite: 0.7,
            rationale: format!("closing peg gap {delta:+.4}"),
        }
    }
}

struct AttackerPolicy {
    agent: usize,
    rng: ChaCha8Rng,
    params: BehaviorParams,
    config: AttackConfig,
    /// Seed shared by the whole coalition; drives the per-step template.
    coalition_seed: u64,
    n_assets: usize,
    prev_abs_peg: f64,
}

/// Shared per-step action template for coordinated attackers.
struct AttackTemplate {
    asset: usize,
    size_mult: f64,
    rationale: &'static str,
}

fn attack_template(coalition_seed: u64, step: u32, n_assets: usize) -> AttackTemplate {
    let mut rng = derive_rng(coalition_seed, &[stream::ATTACK, step as u64]);
    let asset = if n_assets > 1 {
        1 + rng.gen_range(0..n_assets - 1)
    } else {
        0
    };
    let size_mult = [0.8, 1.0, 1.25][rng.gen_range(0..3)];
    let rationale = [
        "routine inventory management",
        "rebalancing into quieter venues",
        "rolling positions forward",
    ][rng.gen_range(0..3)];
    AttackTemplate {
        asset,
        size_mult,
        rationale,
    }
}

impl AttackerPolicy {
    fn stress_visible(&self, state: &MarketState) -> bool {
        let rising = state.peg_deviation.abs() > self.prev_abs_peg + 1.0e-4;
        rising
            || state.peg_deviation.abs() > self.params.attacker_stress_peg
            || state.volatility > self.params.attacker_stress_vol
    }

    fn active(&self, obs: &Observation<'_>) -> bool {
        match self.config.timing {
            TimingMode::Always => true,
            TimingMode::OnStress => self.stress_visible(obs.state),
            TimingMode::PreShock => match obs.upcoming_shock_step {
                Some(t_s) => {
                    let step = obs.state.step;
                    step < t_s && t_s <= step + self.params.preshock_window
                }
                None => false,
            },
        }
    }
}

impl AgentBackend for AttackerPolicy {
    fn respond(&mut self, obs: &Observation<'_>) -> AgentRecord {
        let p = self.params.clone();
        let state = obs.state;
        let inj = self.config.injection_strength;
        let true_panic = panic_level(state, &p);
        let active = self.active(obs);
        self.prev_abs_peg = state.peg_deviation.abs();

        let template = attack_template(self.coalition_seed, state.step, self.n_assets);
        let coordinated = self.rng.gen::<f64>() < self.config.coordination;

        // Dishonest self-reports: project calm while the attack runs.
        let honest_sentiment =
            (0.5 * state.sentiment + normal_noise(&mut self.rng, 0.05)).clamp(-1.0, 1.0);
        let cover_sentiment = 0.55 + 0.25 * template.size_mult - 0.25;
        let stated = (inj * cover_sentiment + (1.0 - inj) * honest_sentiment).clamp(-1.0, 1.0);
        let reported_panic = ((1.0 - inj) * true_panic).clamp(0.0, 1.0);
        let reported_confidence = (inj * 0.9 + (1.0 - inj) * (1.0 - true_panic)).clamp(0.0, 1.0);

        let burst = state.step % p.attacker_burst_period < p.attacker_burst_len;
        let (action, asset, quantity, rationale) = if active && burst {
            if coordinated {
                (
                    ActionType::Sell,
                    template.asset,
                    p.attacker_budget * template.size_mult,
                    template.rationale.to_string(),
                )
            } else {
                let asset = if self.n_assets > 1 {
                    1 + self.rng.gen_range(0..self.n_assets - 1)
                } else {
                    0
                };
                (
                    ActionType::Sell,
                    asset,
                    p.attacker_budget * self.rng.gen_range(0.7..1.3),
                    "reducing exposure".to_string(),
                )
            }
        } else if active && self.rng.gen::<f64>() < 0.45 {
            // Between bursts each member improvises small long trades to keep
            // the bullish cover story coherent; these are deliberately
            // unsynchronized so the coalition's footprint looks organic.
            let asset = if self.n_assets > 1 {
                1 + self.rng.gen_range(0..self.n_assets - 1)
            } else {
                0
            };
            (
                ActionType::Buy,
                asset,
                -p.attacker_budget * 0.12 * self.rng.gen_range(0.6..1.4),
                "adding on weakness".to_string(),
            )
        } else if !active && coordinated && self.rng.gen::<f64>() < 0.6 {
            // Coordinated probe trades keep the coalition synchronized while
            // staying small enough to avoid moving the market.
            (
                ActionType::Sell,
                template.asset,
                p.attacker_budget * template.size_mult * p.attacker_probe_scale,
                template.rationale.to_string(),
            )
        } else {
            (
                ActionType::Hold,
                template.asset,
                0.0,
                template.rationale.to_string(),
            )
        };

        AgentRecord {
            agent: self.agent,
            step: state.step,
            action_type: action,
            asset,
            quantity,
            stated_sentiment: stated,
            panic_level: reported_panic,
            peg_confidence: reported_confidence,
            risk_appetite: 0.9,
            rationale,
        }
    }
}

/// A spawned agent: identity plus decision backend.
pub struct Agent {
    pub id: AgentId,
    backend: Box<dyn AgentBackend>,
}

/// The full simulated population for one run.
pub struct Population {
    agents: Vec<Agent>,
    n_assets: usize,
}

impl Population {
    pub fn ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.id).collect()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn adversarial_labels(&self) -> Vec<bool> {
        self.agents.iter().map(|a| a.id.adversarial).collect()
    }

    /// Replaces an agent's backend; the hook used to plug external decision
    /// engines (or malfunctioning ones, in tests) into the simulation.
    pub fn set_backend(&mut self, index: usize, backend: Box<dyn AgentBackend>) {
        self.agents[index].backend = backend;
    }

    /// Collects one decision per agent, in index order. Records that fail
    /// validation are replaced by a Hold record rather than crashing or
    /// propagating malformed data downstream.
    pub fn act_step(&mut self, obs: &Observation<'_>) -> Vec<AgentRecord> {
        let n_assets = self.n_assets;
        self.agents
            .iter_mut()
            .map(|agent| {
                let record = agent.backend.respond(obs);
                match validate_record(&record, n_assets) {
                    Ok(()) => {
                        let mut r = record;
                        r.agent = agent.id.index;
                        r.step = obs.state.step;
                        r
                    }
                    Err(_) => AgentRecord::hold(agent.id.index, obs.state.step),
                }
            })
            .collect()
    }
}

/// Builds the population for one run. Agents are indexed traders first,
/// then liquidity providers, arbitrageurs, and attackers; per-agent
/// parameters derive deterministically from `seed`.
pub fn spawn_population(
    counts: &PopulationCounts,
    attack: &AttackConfig,
    behavior: &BehaviorParams,
    n_assets: usize,
    seed: u64,
) -> Population {
    let mut agents = Vec::with_capacity(counts.total());
    let coalition_seed = derive_seed(seed, &[stream::ATTACK]);
    let mut index = 0;

    for _ in 0..counts.traders {
        let mut rng = derive_rng(seed, &[stream::AGENT, index as u64]);
        let risk_profile = rng.gen_range(0.35..1.0);
        let favorite_asset = rng.gen_range(0..n_assets);
        agents.push(Agent {
            id: AgentId {
                index,
                archetype: Archetype::Trader,
                adversarial: false,
            },
            backend: Box::new(TraderPolicy {
                agent: index,
                rng,
                params: behavior.clone(),
                risk_profile,
                favorite_asset,
                n_assets,
            }),
        });
        index += 1;
    }
    for _ in 0..counts.liquidity_providers {
        let mut rng = derive_rng(seed, &[stream::AGENT, index as u64]);
        let stake = behavior.lp_stake * rng.gen_range(0.7..1.3);
        let favorite_asset = rng.gen_range(0..n_assets);
        agents.push(Agent {
            id: AgentId {
                index,
                archetype: Archetype::LiquidityProvider,
                adversarial: false,
            },
            backend: Box::new(LpPolicy {
                agent: index,
                rng,
                params: behavior.clone(),
                stake,
                remaining: stake,
                favorite_asset,
            }),
        });
        index += 1;
    }
    for _ in 0..counts.arbitrageurs {
        let mut rng = derive_rng(seed, &[stream::AGENT, index as u64]);
        let skill = rng.gen_range(0.8..1.2);
        agents.push(Agent {
            id: AgentId {
                index,
                archetype: Archetype::Arbitrageur,
                adversarial: false,
            },
            backend: Box::new(ArbPolicy {
                agent: index,
                rng,
                params: behavior.clone(),
                skill,
            }),
        });
        index += 1;
    }
    for _ in 0..counts.attackers {
        let rng = derive_rng(seed, &[stream::AGENT, index as u64]);
        agents.push(Agent {
            id: AgentId {
                index,
                archetype: Archetype::Attacker,
                adversarial: true,
            },
            backend: Box::new(AttackerPolicy {
                agent: index,
                rng,
                params: behavior.clone(),
                config: *attack,
                coalition_seed,
                n_assets,
                prev_abs_peg: 0.0,
            }),
        });
        index += 1;
    }

    Population { agents, n_assets }
}
