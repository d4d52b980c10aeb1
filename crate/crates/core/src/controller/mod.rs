//! Stochastic scenario controller trained with REINFORCE.

mod checkpoint;
mod policy;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use policy::{
    accumulate_log_prob_grad, add_log_prob_logit_grad, backprop_logits, forward, forward_pass, log_prob_logit_grad,
    log_probs, AdamState, ForwardPass, Layout, PolicyParams,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::space::ScenarioAction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embed: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Half-width of the uniform initialisation of the recurrent weights.
    pub init_scale: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Whether ε-random episodes contribute to the gradient.
    pub include_explored: bool,
    /// Subtract a moving average of past returns.
    pub baseline: bool,
    pub baseline_decay: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 64,
            embed: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_scale: 0.08,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            include_explored: true,
            baseline: false,
            baseline_decay: 0.9,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("controller.hidden", "must be >= 1"));
        }
        if self.embed == 0 {
            return Err(Error::config("controller.embed", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("controller.learning_rate", "must be finite and > 0"));
        }
        for (key, v) in [
            ("controller.beta1", self.beta1),
            ("controller.beta2", self.beta2),
            ("controller.baseline_decay", self.baseline_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("controller.adam_eps", "must be > 0"));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::config("controller.init_scale", "must be finite and >= 0"));
        }
        for (key, v) in [
            ("controller.epsilon_start", self.epsilon_start),
            ("controller.epsilon_decay", self.epsilon_decay),
            ("controller.epsilon_min", self.epsilon_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// ε-greedy-style exploration rate, multiplied by `decay` after every draw and
/// floored at `epsilon_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub epsilon: f64,
    pub decay: f64,
    pub epsilon_min: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule {
            epsilon: 1.0,
            decay: 0.995,
            epsilon_min: 0.01,
        }
    }
}

impl ExplorationSchedule {
    pub fn from_config(cfg: &ControllerConfig) -> Self {
        ExplorationSchedule {
            epsilon: cfg.epsilon_start,
            decay: cfg.epsilon_decay,
            epsilon_min: cfg.epsilon_min,
        }
    }

    pub fn step(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.epsilon_min);
    }
}

/// The three random streams consumed while choosing actions.
#[derive(Debug, Clone)]
pub struct SamplerRngs {
    /// Decides explore vs. exploit.
    pub gate: StreamRng,
    /// Uniform picks when exploring; shared layout with the random baseline.
    pub pick: StreamRng,
    /// Categorical draws from the policy.
    pub policy: StreamRng,
}

impl SamplerRngs {
    pub fn from_seed(seed: u64) -> Self {
        SamplerRngs {
            gate: rng::stream(seed, rng::EXPLORE_GATE),
            pick: rng::stream(seed, rng::EXPLORE_PICK),
            policy: rng::stream(seed, rng::POLICY_SAMPLE),
        }
    }
}

/// One episode's contribution to a policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Previous action, `None` for the start token.
    pub state: Option<ScenarioAction>,
    pub action: ScenarioAction,
    pub log_prob_per_param: Vec<f64>,
    pub ret: f64,
    pub explored: bool,
}

/// Uniform draw of one index per parameter.
pub fn uniform_action<R: Rng + ?Sized>(cardinalities: &[usize], rng: &mut R) -> ScenarioAction {
    ScenarioAction::new(cardinalities.iter().map(|&k| rng.random_range(0..k)).collect())
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum: take the last index with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Choose the next action given the previous one. With probability ε the
/// indices are uniform; otherwise they are drawn from the policy. The
/// recorded log-probabilities always come from the policy. ε decays after
/// the draw.
pub fn sample_action(
    params: &PolicyParams,
    state: Option<&ScenarioAction>,
    schedule: &mut ExplorationSchedule,
    rngs: &mut SamplerRngs,
) -> Result<(ScenarioAction, EpisodeRecord)> {
    let pass = forward_pass(params, state)?;
    sample_from_pass(params, &pass, state, schedule, rngs)
}

fn sample_from_pass(
    params: &PolicyParams,
    pass: &ForwardPass,
    state: Option<&ScenarioAction>,
    schedule: &mut ExplorationSchedule,
    rngs: &mut SamplerRngs,
) -> Result<(ScenarioAction, EpisodeRecord)> {
    let explored = rngs.gate.random::<f64>() < schedule.epsilon;
    let action = if explored {
        uniform_action(&params.layout.cardinalities, &mut rngs.pick)
    } else {
        ScenarioAction::new(
            pass.probs
                .iter()
                .map(|p| sample_categorical(p, &mut rngs.policy))
                .collect(),
        )
    };
    schedule.step();
    let record = EpisodeRecord {
        state: state.cloned(),
        log_prob_per_param: log_probs(pass, &action),
        action: action.clone(),
        ret: 0.0,
        explored,
    };
    Ok((action, record))
}

/// ĝ = (1/N) Σ_τ Σ_i ∇ log π(a_i | s) · (R(τ) − b) over the batch.
pub fn policy_gradient(
    params: &PolicyParams,
    batch: &[EpisodeRecord],
    baseline: f64,
    include_explored: bool,
) -> Result<Vec<f64>> {
    gradient_inner(params, batch, &mut PassCache::default(), baseline, include_explored)
}

/// Forward passes keyed by state, valid for one set of policy weights.
#[derive(Debug, Clone, Default)]
struct PassCache {
    entries: Vec<(Option<ScenarioAction>, ForwardPass)>,
}

impl PassCache {
    fn position(&self, state: Option<&ScenarioAction>) -> Option<usize> {
        self.entries.iter().position(|(s, _)| s.as_ref() == state)
    }

    fn get_or_insert(&mut self, params: &PolicyParams, state: Option<&ScenarioAction>) -> Result<usize> {
        if let Some(i) = self.position(state) {
            return Ok(i);
        }
        self.entries.push((state.cloned(), forward_pass(params, state)?));
        Ok(self.entries.len() - 1)
    }

    fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Episodes sharing a state share one forward pass; their logit gradients are
/// summed before a single backward pass.
fn gradient_inner(
    params: &PolicyParams,
    batch: &[EpisodeRecord],
    cache: &mut PassCache,
    baseline: f64,
    include_explored: bool,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = vec![0.0; params.layout.total];
    let n = batch.len() as f64;
    let mut groups: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for rec in batch {
        if rec.explored && !include_explored {
            continue;
        }
        params.layout.check_action(&rec.action)?;
        let weight = (rec.ret - baseline) / n;
        if weight == 0.0 {
            continue;
        }
        let slot = cache.get_or_insert(params, rec.state.as_ref())?;
        let pass = &cache.entries[slot].1;
        match groups.iter_mut().find(|(g, _)| *g == slot) {
            Some((_, d)) => add_log_prob_logit_grad(d, pass, &rec.action, weight),
            None => groups.push((slot, log_prob_logit_grad(pass, &rec.action, weight))),
        }
    }
    for (slot, dlogits) in &groups {
        backprop_logits(params, &cache.entries[*slot].1, dlogits, &mut grad);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(cfg: &ControllerConfig) -> Self {
        AdamHyper {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// Bias-corrected adaptive-moment step in the direction of `grad` (ascent).
pub fn adam_ascent(params: &mut PolicyParams, grad: &[f64], hyper: &AdamHyper) {
    let st = &mut params.adam;
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (((w, m), v), &g) in params.theta.iter_mut().zip(&mut st.m).zip(&mut st.v).zip(grad) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w += hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

/// One REINFORCE step on `batch`.
pub fn reinforce_update(
    params: &mut PolicyParams,
    batch: &[EpisodeRecord],
    hyper: &AdamHyper,
    baseline: f64,
    include_explored: bool,
) -> Result<()> {
    let grad = policy_gradient(params, batch, baseline, include_explored)?;
    apply_gradient(params, &grad, hyper)
}

fn apply_gradient(params: &mut PolicyParams, grad: &[f64], hyper: &AdamHyper) -> Result<()> {
    adam_ascent(params, grad, hyper);
    if !params.is_finite() {
        return Err(Error::Domain("policy weights became non-finite".into()));
    }
    Ok(())
}

/// Policy, exploration schedule and return baseline bundled for a search run.
#[derive(Debug, Clone)]
pub struct Controller {
    pub params: PolicyParams,
    pub schedule: ExplorationSchedule,
    pub cfg: ControllerConfig,
    pub baseline: f64,
    baseline_ready: bool,
    passes: PassCache,
}

impl Controller {
    pub fn new(cardinalities: &[usize], cfg: &ControllerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cardinalities, cfg.hidden, cfg.embed)?;
        let mut init_rng = rng::stream(seed, rng::POLICY_INIT);
        Ok(Controller {
            params: PolicyParams::init(layout, cfg.init_scale, &mut init_rng),
            schedule: ExplorationSchedule::from_config(cfg),
            cfg: *cfg,
            baseline: 0.0,
            baseline_ready: false,
            passes: PassCache::default(),
        })
    }

    pub fn sample(
        &mut self,
        state: Option<&ScenarioAction>,
        rngs: &mut SamplerRngs,
    ) -> Result<(ScenarioAction, EpisodeRecord)> {
        let slot = self.passes.get_or_insert(&self.params, state)?;
        sample_from_pass(
            &self.params,
            &self.passes.entries[slot].1,
            state,
            &mut self.schedule,
            rngs,
        )
    }

    /// REINFORCE step on `batch`.
    pub fn update(&mut self, batch: &[EpisodeRecord]) -> Result<()> {
        let b = if self.cfg.baseline { self.baseline } else { 0.0 };
        let grad = gradient_inner(&self.params, batch, &mut self.passes, b, self.cfg.include_explored);
        self.passes.clear();
        let grad = grad?;
        apply_gradient(&mut self.params, &grad, &AdamHyper::from_config(&self.cfg))?;
        if self.cfg.baseline {
            let mean = batch.iter().map(|r| r.ret).sum::<f64>() / batch.len() as f64;
            self.baseline = if self.baseline_ready {
                self.cfg.baseline_decay * self.baseline + (1.0 - self.cfg.baseline_decay) * mean
            } else {
                mean
            };
            self.baseline_ready = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn layout(ks: &[usize]) -> Layout {
        Layout::new(ks, 8, 4).unwrap()
    }

    #[test]
    fn zero_heads_give_uniform_probabilities() {
        let mut rng = StreamRng::seed_from_u64(1);
        let p = PolicyParams::init(layout(&[10, 10, 25, 4, 10]), 0.08, &mut rng);
        let probs = forward(&p, None).unwrap();
        for (v, k) in probs.iter().zip([10, 10, 25, 4, 10]) {
            assert_eq!(v.len(), k);
            for &x in v {
                assert!((x - 1.0 / k as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_are_deterministic() {
        let mut rng = StreamRng::seed_from_u64(2);
        let p = PolicyParams::random(layout(&[3, 7, 2]), 2.0, &mut rng);
        let s = ScenarioAction::new(vec![2, 6, 0]);
        let a = forward(&p, Some(&s)).unwrap();
        let b = forward(&p, Some(&s)).unwrap();
        assert_eq!(a, b);
        for v in &a {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(forward(&p, Some(&ScenarioAction::new(vec![3, 0, 0]))).is_err());
        assert!(forward(&p, Some(&ScenarioAction::new(vec![0, 0]))).is_err());
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let mut s = ExplorationSchedule::default();
        for _ in 0..918 {
            s.step();
        }
        assert!(s.epsilon > 0.01);
        s.step();
        // 0.995^919 < 0.01
        assert!(0.995f64.powi(919) < 0.01);
        assert_eq!(s.epsilon, 0.01);
        s.step();
        assert_eq!(s.epsilon, 0.01);
    }

    #[test]
    fn degenerate_head_always_picks_its_index() {
        let mut rng = StreamRng::seed_from_u64(3);
        let mut p = PolicyParams::init(layout(&[4]), 0.08, &mut rng);
        let (_, b_off) = p.layout.heads[0];
        p.theta[b_off + 2] = 800.0;
        let mut sched = ExplorationSchedule {
            epsilon: 0.0,
            decay: 1.0,
            epsilon_min: 0.0,
        };
        let mut rngs = SamplerRngs::from_seed(9);
        for _ in 0..200 {
            let (a, rec) = sample_action(&p, None, &mut sched, &mut rngs).unwrap();
            assert_eq!(a.indices, vec![2]);
            assert!(!rec.explored);
            assert!(rec.log_prob_per_param[0] <= 0.0);
        }
    }

    #[test]
    fn forced_exploration_is_uniform() {
        let mut rng = StreamRng::seed_from_u64(4);
        let mut p = PolicyParams::init(layout(&[4]), 0.08, &mut rng);
        let (_, b_off) = p.layout.heads[0];
        p.theta[b_off] = 50.0;
        let mut sched = ExplorationSchedule {
            epsilon: 1.0,
            decay: 1.0,
            epsilon_min: 1.0,
        };
        let mut rngs = SamplerRngs::from_seed(5);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let (a, rec) = sample_action(&p, None, &mut sched, &mut rngs).unwrap();
            assert!(rec.explored);
            counts[a.indices[0]] += 1;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square, 3 dof, p = 0.01
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn zero_returns_leave_weights_unchanged() {
        let mut rng = StreamRng::seed_from_u64(6);
        let mut p = PolicyParams::random(layout(&[3, 3]), 0.5, &mut rng);
        let before = p.theta.clone();
        let rec = EpisodeRecord {
            state: None,
            action: ScenarioAction::new(vec![1, 2]),
            log_prob_per_param: vec![0.0, 0.0],
            ret: 0.0,
            explored: false,
        };
        reinforce_update(
            &mut p,
            &[rec.clone(), rec],
            &AdamHyper::from_config(&ControllerConfig::default()),
            0.0,
            true,
        )
        .unwrap();
        assert_eq!(p.theta, before);
        assert_eq!(p.adam.step, 1);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = StreamRng::seed_from_u64(7);
        let mut p = PolicyParams::random(layout(&[2]), 0.5, &mut rng);
        let h = AdamHyper::from_config(&ControllerConfig::default());
        assert_eq!(reinforce_update(&mut p, &[], &h, 0.0, true), Err(Error::EmptyBatch));
    }

    #[test]
    fn softmax_head_gradient_identity() {
        // one parameter, K = 2: d log p_a / d logit_a = 1 - p_a, d / d logit_other = -p_other
        let mut rng = StreamRng::seed_from_u64(8);
        let mut p = PolicyParams::init(layout(&[2]), 0.08, &mut rng);
        let (_, b_off) = p.layout.heads[0];
        p.theta[b_off] = 0.3;
        p.theta[b_off + 1] = -0.4;
        let probs = forward(&p, None).unwrap();
        let rec = EpisodeRecord {
            state: None,
            action: ScenarioAction::new(vec![0]),
            log_prob_per_param: vec![probs[0][0].ln()],
            ret: 1.0,
            explored: false,
        };
        let g = policy_gradient(&p, &[rec], 0.0, true).unwrap();
        assert!((g[b_off] - (1.0 - probs[0][0])).abs() < 1e-15);
        assert!((g[b_off + 1] + probs[0][1]).abs() < 1e-15);
    }

    #[test]
    fn explored_episodes_can_be_excluded() {
        let mut rng = StreamRng::seed_from_u64(9);
        let p = PolicyParams::random(layout(&[3]), 0.5, &mut rng);
        let rec = EpisodeRecord {
            state: None,
            action: ScenarioAction::new(vec![1]),
            log_prob_per_param: vec![0.0],
            ret: 1.0,
            explored: true,
        };
        let g = policy_gradient(&p, std::slice::from_ref(&rec), 0.0, false).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let g = policy_gradient(&p, &[rec], 0.0, true).unwrap();
        assert!(g.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn baseline_tracks_mean_return() {
        let cfg = ControllerConfig {
            baseline: true,
            hidden: 4,
            embed: 2,
            ..Default::default()
        };
        let mut c = Controller::new(&[2], &cfg, 0).unwrap();
        let rec = |ret| EpisodeRecord {
            state: None,
            action: ScenarioAction::new(vec![0]),
            log_prob_per_param: vec![0.0],
            ret,
            explored: false,
        };
        c.update(&[rec(1.0), rec(3.0)]).unwrap();
        assert_eq!(c.baseline, 2.0);
        c.update(&[rec(4.0)]).unwrap();
        assert!((c.baseline - (0.9 * 2.0 + 0.1 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation_names_key() {
        let bad = ControllerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let e = bad.validate().unwrap_err();
        assert!(e.to_string().contains("controller.learning_rate"));
    }

    #[test]
    fn grouped_gradient_matches_per_episode_sum() {
        let mut rng = StreamRng::seed_from_u64(44);
        let p = PolicyParams::random(layout(&[3, 4, 2]), 0.7, &mut rng);
        let states = [
            None,
            Some(ScenarioAction::new(vec![1, 2, 0])),
            Some(ScenarioAction::new(vec![2, 3, 1])),
        ];
        let batch: Vec<EpisodeRecord> = (0..12)
            .map(|i| EpisodeRecord {
                state: states[i % 3].clone(),
                action: ScenarioAction::new(vec![i % 3, (i * 7) % 4, i % 2]),
                log_prob_per_param: Vec::new(),
                ret: 0.1 * i as f64 - 0.3,
                explored: false,
            })
            .collect();
        let grouped = policy_gradient(&p, &batch, 0.05, true).unwrap();
        let mut naive = vec![0.0; p.layout.total];
        for r in &batch {
            let pass = forward_pass(&p, r.state.as_ref()).unwrap();
            accumulate_log_prob_grad(&p, &pass, &r.action, (r.ret - 0.05) / 12.0, &mut naive);
        }
        for (a, b) in grouped.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
