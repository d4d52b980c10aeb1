use falsify_core::controller::{
    policy_gradient, Controller, ControllerConfig, EpisodeRecord, Layout, PolicyParams, SamplerRngs,
};
use falsify_core::rng::StreamRng;
use falsify_core::space::{ScenarioAction, SearchSpace};
use rand::{Rng, SeedableRng};

/// Plain re-derivation of the unrolled cell, written against the layout only.
fn oracle_log_prob(theta: &[f64], l: &Layout, state: Option<&ScenarioAction>, action: &ScenarioAction) -> f64 {
    let (hn, en) = (l.hidden, l.embed);
    let mut h = vec![0.0; hn];
    let mut base = 1;
    let mut total = 0.0;
    for (i, &k) in l.cardinalities.iter().enumerate() {
        let tok = state.map_or(0, |s| base + s.indices[i]);
        base += k;
        let x = &theta[l.emb + tok * en..l.emb + (tok + 1) * en];
        let mut next = vec![0.0; hn];
        for r in 0..hn {
            let mut z = theta[l.b_h + r];
            for c in 0..en {
                z += theta[l.w_ih + r * en + c] * x[c];
            }
            for c in 0..hn {
                z += theta[l.w_hh + r * hn + c] * h[c];
            }
            next[r] = z.tanh();
        }
        h = next;
        let (w, b) = l.heads[i];
        let logits: Vec<f64> = (0..k)
            .map(|j| theta[b + j] + (0..hn).map(|c| theta[w + j * hn + c] * h[c]).sum::<f64>())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += logits[action.indices[i]] - lse;
    }
    total
}

fn objective(theta: &[f64], l: &Layout, batch: &[EpisodeRecord]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|r| r.ret / n * oracle_log_prob(theta, l, r.state.as_ref(), &r.action))
        .sum()
}

fn random_action(cards: &[usize], rng: &mut StreamRng) -> ScenarioAction {
    ScenarioAction::new(cards.iter().map(|&k| rng.random_range(0..k)).collect())
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for preset in ["paper5", "paper7"] {
        let cards = SearchSpace::preset(preset).unwrap().cardinalities();
        for seed in 0..5u64 {
            let mut rng = StreamRng::seed_from_u64(1000 + seed);
            let cfg = ControllerConfig::default();
            let layout = Layout::new(&cards, cfg.hidden, cfg.embed).unwrap();
            let params = PolicyParams::random(layout.clone(), 0.3, &mut rng);
            let mut state = None;
            let batch: Vec<EpisodeRecord> = (0..2)
                .map(|_| {
                    let action = random_action(&cards, &mut rng);
                    let rec = EpisodeRecord {
                        state: state.clone(),
                        action: action.clone(),
                        log_prob_per_param: Vec::new(),
                        ret: rng.random_range(-0.02..0.27),
                        explored: false,
                    };
                    state = Some(action);
                    rec
                })
                .collect();
            let g = policy_gradient(&params, &batch, 0.0, true).unwrap();
            let h = 1e-5;
            let mut theta = params.theta.clone();
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..theta.len() {
                let w = theta[j];
                theta[j] = w + h;
                let up = objective(&theta, &layout, &batch);
                theta[j] = w - h;
                let down = objective(&theta, &layout, &batch);
                theta[j] = w;
                let fd = (up - down) / (2.0 * h);
                num += (g[j] - fd).powi(2);
                den += fd.powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel <= 1e-4, "{preset} seed {seed}: relative error {rel:e}");
        }
    }
}

#[test]
fn bandit_concentrates_on_rewarded_action() {
    let cards = [3, 3];
    let target = ScenarioAction::new(vec![2, 1]);
    let mut hits = 0;
    for seed in 0..10 {
        let mut ctrl = Controller::new(&cards, &ControllerConfig::default(), seed).unwrap();
        let mut rngs = SamplerRngs::from_seed(seed);
        let mut state: Option<ScenarioAction> = None;
        let mut reached = false;
        for _ in 0..2000 {
            let mut batch = Vec::with_capacity(25);
            for _ in 0..25 {
                let (a, mut rec) = ctrl.sample(state.as_ref(), &mut rngs).unwrap();
                rec.ret = if a == target { 1.0 } else { 0.0 };
                batch.push(rec);
                state = Some(a);
            }
            ctrl.update(&batch).unwrap();
            let probs = falsify_core::controller::forward(&ctrl.params, state.as_ref()).unwrap();
            if probs[0][2] * probs[1][1] > 0.9 {
                reached = true;
                break;
            }
        }
        hits += reached as usize;
    }
    assert!(hits >= 8, "{hits}/10 seeds reached p > 0.9");
}
