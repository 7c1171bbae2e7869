//! Enumerable synthetic conditional models.
//!
//! A [`SyntheticModel`] generates a response token by token from a
//! categorical next-token distribution keyed by the prompt and the last `H`
//! tokens. Every step stops with probability at least `p_stop_min`, and a
//! response is at most `L` tokens long including the stop token. The mass of
//! never stopping within `L` draws is collected in a single overflow event,
//! so the response space is finite and every KL divergence, mutual
//! information and marginal can be computed exactly by enumeration.
//!
//! Response text is the space-separated token sequence ending in the stop
//! token (`"a b </s>"`), or [`OVERFLOW_RESPONSE`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::divergence::SampledLogLiks;
use crate::error::{Error, Result};
use crate::matrix::{ModelVector, PairSet, TextPair};
use crate::rng;

pub const STOP_TOKEN: &str = "</s>";
pub const OVERFLOW_RESPONSE: &str = "<overflow>";
pub const DEFAULT_HISTORY: usize = 2;
pub const DEFAULT_MAX_LEN: usize = 4;
pub const DEFAULT_P_STOP_MIN: f64 = 0.05;
const SUM_TOLERANCE: f64 = 1e-12;

/// Recipe for drawing a random base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub n_prompts: usize,
    pub n_tokens: usize,
    pub history: usize,
    pub max_len: usize,
    pub p_stop_min: f64,
    /// Weight of prompt-specific next-token distributions versus a shared
    /// one; 0 makes responses independent of the prompt.
    pub prompt_dependence: f64,
    /// Exponent applied to random simplex draws before renormalising;
    /// larger values give peakier distributions.
    pub sharpness: f64,
    /// Prompt distribution; uniform when absent.
    #[serde(default)]
    pub prompt_probs: Option<Vec<f64>>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_prompts: 4,
            n_tokens: 3,
            history: DEFAULT_HISTORY,
            max_len: DEFAULT_MAX_LEN,
            p_stop_min: DEFAULT_P_STOP_MIN,
            prompt_dependence: 0.5,
            sharpness: 1.0,
            prompt_probs: None,
        }
    }
}

/// One response of a synthetic model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Response {
    /// Content token indices; the stop token follows implicitly.
    Tokens(Vec<usize>),
    /// No stop within the length limit.
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `log p(y | x)`.
    Conditional,
    /// `log sum_x p0(x) p(y | x)`, the exact marginal.
    Unconditional,
    /// `log p(y | empty prompt)`, where the empty prompt's next-token
    /// distribution is the prompt-weighted average at each history. This
    /// mimics scoring a response with no user input and differs from the
    /// exact marginal.
    EmptyPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub prompts: Vec<String>,
    pub prompt_probs: Vec<f64>,
    /// Content tokens; the stop token is implicit and always last in each
    /// next-token distribution.
    pub tokens: Vec<String>,
    pub history: usize,
    pub max_len: usize,
    pub p_stop_min: f64,
    /// `dists[prompt][state]`, each of length `tokens.len() + 1`.
    pub dists: Vec<Vec<Vec<f64>>>,
}

fn token_name(i: usize) -> String {
    if i < 26 {
        String::from(char::from(b'a' + i as u8))
    } else {
        format!("t{i}")
    }
}

fn floored(p_stop_min: f64, w: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = w.iter().map(|v| (1.0 - p_stop_min) * v).collect();
    *d.last_mut().expect("non-empty") += p_stop_min;
    d
}

fn sharpened<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, sharpness: f64) -> Vec<f64> {
    let mut w = rng::simplex(rng, dim);
    if sharpness != 1.0 {
        w.iter_mut().for_each(|v| *v = libm::pow(*v, sharpness));
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
    }
    w
}

impl SyntheticModel {
    /// Number of history states: all token sequences of length `0..=H`.
    pub fn n_states(&self) -> usize {
        n_states(self.tokens.len(), self.history)
    }

    /// Draws a random model from `config`.
    pub fn random(config: &OracleConfig, seed: u64) -> Result<Self> {
        if config.n_prompts == 0 || config.n_tokens == 0 || config.max_len == 0 {
            return Err(Error::InvalidModel("need at least one prompt, token and length".into()));
        }
        if !(config.p_stop_min > 0.0 && config.p_stop_min < 1.0) {
            return Err(Error::InvalidModel(format!("p_stop_min {} outside (0, 1)", config.p_stop_min)));
        }
        if !(0.0..=1.0).contains(&config.prompt_dependence) || !(config.sharpness > 0.0) {
            return Err(Error::InvalidModel("prompt_dependence must be in [0, 1], sharpness > 0".into()));
        }
        let prompt_probs = match &config.prompt_probs {
            Some(p) => p.clone(),
            None => vec![1.0 / config.n_prompts as f64; config.n_prompts],
        };
        let mut g = rng::seeded(seed);
        let v = config.n_tokens;
        let states = n_states(v, config.history);
        let shared: Vec<Vec<f64>> = (0..states)
            .map(|_| floored(config.p_stop_min, &sharpened(&mut g, v + 1, config.sharpness)))
            .collect();
        let lam = config.prompt_dependence;
        let dists = (0..config.n_prompts)
            .map(|_| {
                shared
                    .iter()
                    .map(|sh| {
                        let sp = floored(config.p_stop_min, &sharpened(&mut g, v + 1, config.sharpness));
                        sh.iter().zip(&sp).map(|(a, b)| (1.0 - lam) * a + lam * b).collect()
                    })
                    .collect()
            })
            .collect();
        let m = Self {
            prompts: (0..config.n_prompts).map(|i| format!("x{i}")).collect(),
            prompt_probs,
            tokens: (0..v).map(token_name).collect(),
            history: config.history,
            max_len: config.max_len,
            p_stop_min: config.p_stop_min,
            dists,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks every structural and probabilistic invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.prompts.is_empty() || self.prompts.len() != self.prompt_probs.len() {
            return bad("prompt alphabet and probabilities differ in length".into());
        }
        if (self.prompt_probs.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE
            || self.prompt_probs.iter().any(|&p| !(p > 0.0))
        {
            return bad("prompt probabilities must be positive and sum to 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        let mut names: Vec<&str> = self.tokens.iter().map(String::as_str).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1])
            || self.tokens.iter().any(|t| {
                t.is_empty() || t.contains(char::is_whitespace) || t == STOP_TOKEN || t == OVERFLOW_RESPONSE
            })
        {
            return bad("tokens must be unique, non-empty, without whitespace or reserved names".into());
        }
        if self.dists.len() != self.prompts.len() {
            return bad("one distribution table per prompt required".into());
        }
        let width = self.tokens.len() + 1;
        for (x, table) in self.dists.iter().enumerate() {
            if table.len() != self.n_states() {
                return bad(format!("prompt {x}: expected {} states", self.n_states()));
            }
            for (s, d) in table.iter().enumerate() {
                if d.len() != width {
                    return bad(format!("prompt {x} state {s}: expected {width} probabilities"));
                }
                if d.iter().any(|&p| !(p > 0.0)) {
                    return bad(format!("prompt {x} state {s}: probabilities must be positive"));
                }
                if (d.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
                    return bad(format!("prompt {x} state {s}: probabilities do not sum to 1"));
                }
                if d[width - 1] < self.p_stop_min - SUM_TOLERANCE {
                    return bad(format!("prompt {x} state {s}: stop probability below minimum"));
                }
            }
        }
        Ok(())
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.prompts != other.prompts
            || self.prompt_probs != other.prompt_probs
            || self.tokens != other.tokens
            || self.history != other.history
            || self.max_len != other.max_len
        {
            return Err(Error::AlphabetMismatch);
        }
        Ok(())
    }

    fn state(&self, hist: &[usize]) -> usize {
        let v = self.tokens.len();
        let tail = &hist[hist.len().saturating_sub(self.history)..];
        let mut offset = 0;
        let mut width = 1;
        for _ in 0..tail.len() {
            offset += width;
            width *= v;
        }
        offset + tail.iter().fold(0, |acc, &t| acc * v + t)
    }

    /// Next-token distribution (stop last) after content tokens `hist`.
    pub fn next_dist(&self, prompt: usize, hist: &[usize]) -> &[f64] {
        &self.dists[prompt][self.state(hist)]
    }

    fn stop(&self) -> usize {
        self.tokens.len()
    }

    /// Probability of `resp` under `next`, a next-token distribution lookup.
    fn prob_with<'a>(&'a self, resp: &Response, next: impl Fn(&[usize]) -> &'a [f64]) -> f64 {
        match resp {
            Response::Tokens(seq) => {
                let mut p = 1.0;
                for t in 0..seq.len() {
                    p *= next(&seq[..t])[seq[t]];
                }
                p * next(seq)[self.stop()]
            }
            Response::Overflow => self.overflow_with(&mut Vec::new(), &next),
        }
    }

    fn overflow_with<'a>(&'a self, hist: &mut Vec<usize>, next: &impl Fn(&[usize]) -> &'a [f64]) -> f64 {
        if hist.len() == self.max_len {
            return 1.0;
        }
        let d = next(hist);
        let mut total = 0.0;
        for z in 0..self.tokens.len() {
            hist.push(z);
            total += d[z] * self.overflow_with(hist, next);
            hist.pop();
        }
        total
    }

    /// `p(y | x)` for prompt index `prompt`.
    pub fn response_prob(&self, prompt: usize, resp: &Response) -> f64 {
        self.prob_with(resp, |h| self.next_dist(prompt, h))
    }

    /// Mass of the overflow event for one prompt, computed by summing over
    /// all length-`L` content sequences.
    pub fn overflow_mass(&self, prompt: usize) -> f64 {
        self.response_prob(prompt, &Response::Overflow)
    }

    /// Exact marginal `sum_x p0(x) p(y | x)`.
    pub fn marginal_prob(&self, resp: &Response) -> f64 {
        self.prompt_probs.iter().enumerate().map(|(x, p0)| p0 * self.response_prob(x, resp)).sum()
    }

    fn empty_prompt_dists(&self) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| {
                let mut d = vec![0.0; self.tokens.len() + 1];
                for (x, p0) in self.prompt_probs.iter().enumerate() {
                    d.iter_mut().zip(&self.dists[x][s]).for_each(|(a, b)| *a += p0 * b);
                }
                d
            })
            .collect()
    }

    /// Every response: content sequences of length `0..L` then overflow.
    pub fn enumerate_responses(&self) -> Vec<Response> {
        let v = self.tokens.len();
        let mut out = Vec::new();
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..self.max_len {
            let mut next = Vec::with_capacity(layer.len() * v);
            for seq in &layer {
                out.push(Response::Tokens(seq.clone()));
                for z in 0..v {
                    let mut s = seq.clone();
                    s.push(z);
                    next.push(s);
                }
            }
            layer = next;
        }
        out.push(Response::Overflow);
        out
    }

    pub fn render(&self, resp: &Response) -> String {
        match resp {
            Response::Overflow => OVERFLOW_RESPONSE.into(),
            Response::Tokens(seq) => {
                let mut s = String::new();
                for &t in seq {
                    s.push_str(&self.tokens[t]);
                    s.push(' ');
                }
                s.push_str(STOP_TOKEN);
                s
            }
        }
    }

    pub fn parse_response(&self, text: &str) -> Result<Response> {
        if text == OVERFLOW_RESPONSE {
            return Ok(Response::Overflow);
        }
        let parts: Vec<&str> = text.split(' ').collect();
        let (last, body) = parts.split_last().expect("split yields at least one part");
        if *last != STOP_TOKEN {
            return Err(Error::InvalidParameter {
                name: "response",
                reason: format!("{text:?} does not end with {STOP_TOKEN}"),
            });
        }
        if parts.len() > self.max_len {
            return Err(Error::ResponseTooLong(text.into()));
        }
        body.iter()
            .map(|t| {
                self.tokens.iter().position(|k| k == t).ok_or_else(|| Error::UnknownToken((*t).into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Response::Tokens)
    }

    pub fn prompt_index(&self, prompt: &str) -> Result<usize> {
        self.prompts.iter().position(|p| p == prompt).ok_or_else(|| Error::UnknownPrompt(prompt.into()))
    }

    /// Log-likelihood of each pair under `mode`.
    pub fn score_pairs(&self, pairs: &[TextPair], mode: ScoreMode) -> Result<Vec<f64>> {
        let empty = matches!(mode, ScoreMode::EmptyPrompt).then(|| self.empty_prompt_dists());
        pairs
            .iter()
            .map(|p| {
                let resp = self.parse_response(&p.response)?;
                let prob = match mode {
                    ScoreMode::Conditional => self.response_prob(self.prompt_index(&p.prompt)?, &resp),
                    ScoreMode::Unconditional => self.marginal_prob(&resp),
                    ScoreMode::EmptyPrompt => {
                        let table = empty.as_ref().expect("built above");
                        self.prob_with(&resp, |h| &table[self.state(h)])
                    }
                };
                Ok(libm::log(prob))
            })
            .collect()
    }

    /// Draws one prompt index per pair from `p0`.
    pub fn sample_prompts(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut g = rng::seeded(seed);
        (0..n).map(|_| rng::categorical(&mut g, &self.prompt_probs)).collect()
    }

    /// Draws one response for each prompt index.
    pub fn sample_responses(&self, prompts: &[usize], seed: u64) -> Vec<Response> {
        let mut g = rng::seeded(seed);
        prompts
            .iter()
            .map(|&x| {
                let mut seq = Vec::new();
                loop {
                    if seq.len() == self.max_len {
                        return Response::Overflow;
                    }
                    let z = rng::categorical(&mut g, self.next_dist(x, &seq));
                    if z == self.stop() {
                        return Response::Tokens(seq);
                    }
                    seq.push(z);
                }
            })
            .collect()
    }

    /// Pairs with the given prompts and responses, ids `{prefix}{index:06}`.
    pub fn to_pairs(&self, prefix: &str, prompts: &[usize], responses: &[Response]) -> Vec<TextPair> {
        prompts
            .iter()
            .zip(responses)
            .enumerate()
            .map(|(s, (&x, r))| TextPair {
                id: format!("{prefix}{s:06}"),
                prompt: self.prompts[x].clone(),
                response: self.render(r),
            })
            .collect()
    }

    /// Prompt entropy in nats.
    pub fn prompt_entropy(&self) -> f64 {
        entropy(self.prompt_probs.iter().copied())
    }

    /// Entropy of the response marginal in nats.
    pub fn response_entropy(&self) -> f64 {
        entropy(self.enumerate_responses().iter().map(|r| self.marginal_prob(r)))
    }
}

fn n_states(v: usize, history: usize) -> usize {
    let mut total = 0;
    let mut width = 1;
    for _ in 0..=history {
        total += width;
        width *= v;
    }
    total
}

fn entropy(probs: impl Iterator<Item = f64>) -> f64 {
    probs.filter(|&p| p > 0.0).map(|p| -p * libm::log(p)).sum()
}

/// Mixes every next-token distribution with a random one:
/// `(1 - epsilon) * d + epsilon * r`, where `r` also respects the stop floor.
/// Total-variation displacement per state is at most `epsilon`.
pub fn perturb(base: &SyntheticModel, epsilon: f64, seed: u64) -> Result<SyntheticModel> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::InvalidParameter { name: "epsilon", reason: format!("{epsilon} outside [0, 0.5)") });
    }
    if epsilon == 0.0 {
        return Ok(base.clone());
    }
    let mut g = rng::seeded(seed);
    let width = base.tokens.len() + 1;
    let dists = base
        .dists
        .iter()
        .map(|table| {
            table
                .iter()
                .map(|d| {
                    let r = floored(base.p_stop_min, &rng::simplex(&mut g, width));
                    d.iter().zip(&r).map(|(a, b)| (1.0 - epsilon) * a + epsilon * b).collect()
                })
                .collect()
        })
        .collect();
    let out = SyntheticModel { dists, ..base.clone() };
    out.validate()?;
    Ok(out)
}

/// Exact `sum_x p0(x) sum_y p(y|x) log[p(y|x) / q(y|x)]`.
pub fn enumerate_kl(p: &SyntheticModel, q: &SyntheticModel) -> Result<f64> {
    p.compatible(q)?;
    let responses = p.enumerate_responses();
    let mut total = 0.0;
    for (x, p0) in p.prompt_probs.iter().enumerate() {
        let mut inner = 0.0;
        for r in &responses {
            let a = p.response_prob(x, r);
            let b = q.response_prob(x, r);
            inner += a * (libm::log(a) - libm::log(b));
        }
        total += p0 * inner;
    }
    Ok(total)
}

/// Exact mutual information between prompt and response.
pub fn enumerate_mi(m: &SyntheticModel) -> f64 {
    let responses = m.enumerate_responses();
    let marginals: Vec<f64> = responses.iter().map(|r| m.marginal_prob(r)).collect();
    let mut total = 0.0;
    for (x, p0) in m.prompt_probs.iter().enumerate() {
        for (r, mr) in responses.iter().zip(&marginals) {
            let a = m.response_prob(x, r);
            total += p0 * a * (libm::log(a) - libm::log(*mr));
        }
    }
    total
}

/// `n` i.i.d. pairs from `p0(x) m(y|x)`, ids `s000000`, `s000001`, ...
pub fn sample_pairs(m: &SyntheticModel, n: usize, seed: u64) -> Result<PairSet> {
    let prompts = m.sample_prompts(n, rng::fnv1a(b"prompts") ^ seed);
    let responses = m.sample_responses(&prompts, rng::fnv1a(b"responses") ^ seed);
    PairSet::new(m.to_pairs("s", &prompts, &responses))
}

/// Scores every pair with `m` and wraps the result as a raw vector.
pub fn score_pairs(m: &SyntheticModel, model_id: &str, pairs: &PairSet, mode: ScoreMode) -> Result<ModelVector> {
    Ok(ModelVector::raw(model_id, m.score_pairs(pairs.pairs(), mode)?))
}

/// Monte Carlo inputs for `generator`: one response per prompt drawn from
/// the generator, scored by the generator and by every model in `scorers`.
pub fn sampled_logliks(
    generator: (&str, &SyntheticModel),
    scorers: &[(&str, &SyntheticModel)],
    prompts: &[usize],
    seed: u64,
) -> Result<SampledLogLiks> {
    let (gen_id, gen) = generator;
    let responses = gen.sample_responses(prompts, seed);
    let pairs = gen.to_pairs("g", prompts, &responses);
    let mut scores = alloc::collections::BTreeMap::new();
    scores.insert(String::from(gen_id), gen.score_pairs(&pairs, ScoreMode::Conditional)?);
    for (id, m) in scorers {
        gen.compatible(m)?;
        scores.insert(String::from(*id), m.score_pairs(&pairs, ScoreMode::Conditional)?);
    }
    Ok(SampledLogLiks { generator_model: gen_id.into(), scores })
}
