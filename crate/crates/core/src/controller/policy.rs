//! Recurrent categorical policy over a discrete search space.
//!
//! All weights live in one flat vector; [`Layout`] records where each block
//! starts. The cell is unrolled once per parameter. Step `i` reads the
//! embedding of the previous action's value index for parameter `i` (or the
//! start token when there is no previous action) and head `i` turns the
//! hidden state into a softmax over that parameter's values.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::space::ScenarioAction;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub cardinalities: Vec<usize>,
    pub hidden: usize,
    pub embed: usize,
    /// First token id of each parameter; token 0 is the start token.
    token_base: Vec<usize>,
    pub tokens: usize,
    pub emb: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_h: usize,
    /// (weight offset, bias offset) per head.
    pub heads: Vec<(usize, usize)>,
    pub total: usize,
}

impl Layout {
    pub fn new(cardinalities: &[usize], hidden: usize, embed: usize) -> Result<Self> {
        if cardinalities.is_empty() || cardinalities.contains(&0) {
            return Err(Error::Dimension("every parameter needs at least one value".into()));
        }
        if hidden == 0 || embed == 0 {
            return Err(Error::config(
                "controller.hidden",
                "hidden and embed sizes must be >= 1",
            ));
        }
        let mut token_base = Vec::with_capacity(cardinalities.len());
        let mut next = 1;
        for &k in cardinalities {
            token_base.push(next);
            next += k;
        }
        let tokens = next;
        let emb = 0;
        let w_ih = emb + tokens * embed;
        let w_hh = w_ih + hidden * embed;
        let b_h = w_hh + hidden * hidden;
        let mut off = b_h + hidden;
        let mut heads = Vec::with_capacity(cardinalities.len());
        for &k in cardinalities {
            let w = off;
            let b = w + k * hidden;
            heads.push((w, b));
            off = b + k;
        }
        Ok(Layout {
            cardinalities: cardinalities.to_vec(),
            hidden,
            embed,
            token_base,
            tokens,
            emb,
            w_ih,
            w_hh,
            b_h,
            heads,
            total: off,
        })
    }

    pub fn params(&self) -> usize {
        self.cardinalities.len()
    }

    /// Input token for step `i` given the previous action.
    pub fn token(&self, state: Option<&ScenarioAction>, i: usize) -> usize {
        match state {
            None => 0,
            Some(a) => self.token_base[i] + a.indices[i],
        }
    }

    pub fn check_state(&self, state: Option<&ScenarioAction>) -> Result<()> {
        if let Some(a) = state {
            self.check_action(a)?;
        }
        Ok(())
    }

    pub fn check_action(&self, a: &ScenarioAction) -> Result<()> {
        if a.len() != self.params() {
            return Err(Error::Dimension(format!(
                "action has {} indices, policy has {} heads",
                a.len(),
                self.params()
            )));
        }
        for (i, (&idx, &k)) in a.indices.iter().zip(&self.cardinalities).enumerate() {
            if idx >= k {
                return Err(Error::Dimension(format!(
                    "index {idx} out of range for head {i} ({k} outputs)"
                )));
            }
        }
        Ok(())
    }

    /// Named blocks (name, offset, rows, cols) covering the whole vector in order.
    pub fn blocks(&self) -> Vec<(String, usize, usize, usize)> {
        let mut out = vec![
            ("embedding".to_string(), self.emb, self.tokens, self.embed),
            ("w_ih".to_string(), self.w_ih, self.hidden, self.embed),
            ("w_hh".to_string(), self.w_hh, self.hidden, self.hidden),
            ("b_h".to_string(), self.b_h, 1, self.hidden),
        ];
        for (i, (&(w, b), &k)) in self.heads.iter().zip(&self.cardinalities).enumerate() {
            out.push((format!("head{i}.w"), w, k, self.hidden));
            out.push((format!("head{i}.b"), b, 1, k));
        }
        out
    }
}

/// First/second moment accumulators of the adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layout: Layout,
    pub theta: Vec<f64>,
    pub adam: AdamState,
}

impl PolicyParams {
    /// Recurrent weights uniform in [-scale, scale]; heads start at zero so the
    /// initial policy is exactly uniform.
    pub fn init<R: Rng + ?Sized>(layout: Layout, scale: f64, rng: &mut R) -> Self {
        let mut theta = vec![0.0; layout.total];
        if scale > 0.0 {
            let dist = Uniform::new_inclusive(-scale, scale).expect("scale is positive");
            for w in &mut theta[layout.emb..layout.b_h] {
                *w = dist.sample(rng);
            }
        }
        let n = layout.total;
        PolicyParams {
            layout,
            theta,
            adam: AdamState::zeros(n),
        }
    }

    /// Every weight, heads included, uniform in [-scale, scale].
    pub fn random<R: Rng + ?Sized>(layout: Layout, scale: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-scale, scale).expect("scale is positive");
        let theta = (0..layout.total).map(|_| dist.sample(rng)).collect();
        let n = layout.total;
        PolicyParams {
            layout,
            theta,
            adam: AdamState::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|w| w.is_finite())
    }
}

/// Activations of one unrolled pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tokens: Vec<usize>,
    /// Hidden states h_0 (zeros) .. h_P, each `hidden` long.
    pub hidden: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums so the loop vectorises
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += dot(row, x);
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn forward_pass(params: &PolicyParams, state: Option<&ScenarioAction>) -> Result<ForwardPass> {
    let l = &params.layout;
    l.check_state(state)?;
    let th = &params.theta;
    let (h_n, e_n) = (l.hidden, l.embed);
    let p = l.params();
    let mut hidden = vec![0.0; (p + 1) * h_n];
    let mut tokens = Vec::with_capacity(p);
    let mut probs = Vec::with_capacity(p);
    let w_ih = &th[l.w_ih..l.w_hh];
    let w_hh = &th[l.w_hh..l.b_h];
    let b_h = &th[l.b_h..l.b_h + h_n];
    for i in 0..p {
        let tok = l.token(state, i);
        tokens.push(tok);
        let x = &th[l.emb + tok * e_n..l.emb + (tok + 1) * e_n];
        let (prev, rest) = hidden.split_at_mut((i + 1) * h_n);
        let h_prev = &prev[i * h_n..];
        let h = &mut rest[..h_n];
        h.copy_from_slice(b_h);
        matvec_acc(h, w_ih, x);
        matvec_acc(h, w_hh, h_prev);
        for v in h.iter_mut() {
            *v = v.tanh();
        }
        let k = l.cardinalities[i];
        let (w_off, b_off) = l.heads[i];
        let mut z = th[b_off..b_off + k].to_vec();
        matvec_acc(&mut z, &th[w_off..w_off + k * h_n], h);
        softmax_in_place(&mut z);
        probs.push(z);
    }
    Ok(ForwardPass { tokens, hidden, probs })
}

/// One probability vector per parameter.
pub fn forward(params: &PolicyParams, state: Option<&ScenarioAction>) -> Result<Vec<Vec<f64>>> {
    Ok(forward_pass(params, state)?.probs)
}

/// Per-parameter log-probabilities of `action` under `pass`.
pub fn log_probs(pass: &ForwardPass, action: &ScenarioAction) -> Vec<f64> {
    pass.probs
        .iter()
        .zip(&action.indices)
        .map(|(p, &a)| p[a].ln())
        .collect()
}

/// Gradient of `weight * Σ_i log π(action_i | state)` with respect to each
/// head's logits: `weight * (onehot(a_i) - p_i)`.
pub fn log_prob_logit_grad(pass: &ForwardPass, action: &ScenarioAction, weight: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = pass.probs.iter().map(|p| vec![0.0; p.len()]).collect();
    add_log_prob_logit_grad(&mut out, pass, action, weight);
    out
}

/// Accumulate `weight * (onehot(a_i) - p_i)` into `dlogits`.
pub fn add_log_prob_logit_grad(dlogits: &mut [Vec<f64>], pass: &ForwardPass, action: &ScenarioAction, weight: f64) {
    for ((d, probs), &a) in dlogits.iter_mut().zip(&pass.probs).zip(&action.indices) {
        for (dj, &pj) in d.iter_mut().zip(probs) {
            *dj -= weight * pj;
        }
        d[a] += weight;
    }
}

/// Add `weight * d/dθ Σ_i log π(action_i | state)` into `grad`.
pub fn accumulate_log_prob_grad(
    params: &PolicyParams,
    pass: &ForwardPass,
    action: &ScenarioAction,
    weight: f64,
    grad: &mut [f64],
) {
    let dlogits = log_prob_logit_grad(pass, action, weight);
    backprop_logits(params, pass, &dlogits, grad);
}

/// Backpropagate per-head logit gradients through the unrolled cell into `grad`.
pub fn backprop_logits(params: &PolicyParams, pass: &ForwardPass, dlogits: &[Vec<f64>], grad: &mut [f64]) {
    let l = &params.layout;
    let th = &params.theta;
    let (h_n, e_n) = (l.hidden, l.embed);
    let p = l.params();
    let mut dh_next = vec![0.0; h_n];
    let mut dh = vec![0.0; h_n];
    let mut dz = vec![0.0; h_n];
    let mut dx = vec![0.0; e_n];
    for i in (0..p).rev() {
        let h = &pass.hidden[(i + 1) * h_n..(i + 2) * h_n];
        let h_prev = &pass.hidden[i * h_n..(i + 1) * h_n];
        let (w_off, b_off) = l.heads[i];
        dh.copy_from_slice(&dh_next);
        for (j, &dl) in dlogits[i].iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            grad[b_off + j] += dl;
            let row = w_off + j * h_n..w_off + (j + 1) * h_n;
            axpy(&mut grad[row.clone()], dl, h);
            axpy(&mut dh, dl, &th[row]);
        }
        for ((d, g), hv) in dz.iter_mut().zip(&dh).zip(h) {
            *d = g * (1.0 - hv * hv);
        }
        axpy(&mut grad[l.b_h..l.b_h + h_n], 1.0, &dz);
        let tok = pass.tokens[i];
        let x = &th[l.emb + tok * e_n..l.emb + (tok + 1) * e_n];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let ih = l.w_ih + r * e_n..l.w_ih + (r + 1) * e_n;
            axpy(&mut grad[ih.clone()], d, x);
            axpy(&mut dx, d, &th[ih]);
            let hh = l.w_hh + r * h_n..l.w_hh + (r + 1) * h_n;
            axpy(&mut grad[hh.clone()], d, h_prev);
            axpy(&mut dh_next, d, &th[hh]);
        }
        axpy(&mut grad[l.emb + tok * e_n..l.emb + (tok + 1) * e_n], 1.0, &dx);
    }
}
