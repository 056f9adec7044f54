//! Classical comparison models: homogeneous Poisson and multivariate Hawkes
//! with a shared exponential decay.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventSequence};
use crate::tpp::{predict_next, IntensitySurface, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonModel {
    pub rates: Vec<f64>,
}

pub fn fit_poisson(train: &EventSequence) -> Result<PoissonModel> {
    if !(train.horizon() > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let t = train.horizon();
    Ok(PoissonModel { rates: train.counts().iter().map(|&c| c as f64 / t).collect() })
}

impl PoissonModel {
    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        let t = seq.horizon();
        seq.counts()
            .iter()
            .zip(&self.rates)
            .map(|(&n, &r)| if n == 0 { -r * t } else { n as f64 * r.ln() - r * t })
            .sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HawkesFitConfig {
    pub beta_grid: Vec<f64>,
    pub max_iter: usize,
    /// Stop when an accepted step raises the likelihood by less than this
    /// (relative to its magnitude).
    pub tol: f64,
    /// With `false` the excitation is fixed at zero.
    pub fit_alpha: bool,
}

impl Default for HawkesFitConfig {
    fn default() -> Self {
        Self { beta_grid: vec![0.5, 1.0, 2.0, 5.0, 10.0], max_iter: 2000, tol: 1e-10, fit_alpha: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    pub mu: Vec<f64>,
    /// `alpha[i * n + j]`: jump in the intensity of `i` caused by an event of `j`.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    /// Spectral radius of `α/β` is below one.
    pub stationary: bool,
}

impl HawkesModel {
    pub fn num_types(&self) -> usize {
        self.mu.len()
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * self.mu.len() + j]
    }
}

/// Per-event excitation traces `A_j(t_k) = Σ_{s ∈ j, s < t_k} exp(-β(t_k - s))`
/// and the compensator integrals `G_j = Σ_{s ∈ j} (1 - exp(-β(T - s)))/β`.
struct Traces {
    a: Vec<f64>,
    g: Vec<f64>,
    counts: Vec<usize>,
}

fn traces(seq: &EventSequence, beta: f64) -> Traces {
    let n = seq.num_types();
    let ev = seq.events();
    let mut a = vec![0.0; ev.len() * n];
    let mut state = vec![0.0; n];
    let mut stamp = 0.0;
    let mut k = 0;
    while k < ev.len() {
        let t = ev[k].t;
        let decay = (-beta * (t - stamp)).exp();
        state.iter_mut().for_each(|x| *x *= decay);
        stamp = t;
        let mut end = k;
        while end < ev.len() && ev[end].t == t {
            a[end * n..(end + 1) * n].copy_from_slice(&state);
            end += 1;
        }
        for e in &ev[k..end] {
            state[e.e] += 1.0;
        }
        k = end;
    }
    let mut g = vec![0.0; n];
    for e in ev {
        g[e.e] += -(-beta * (seq.horizon() - e.t)).exp_m1() / beta;
    }
    Traces { a, g, counts: seq.counts() }
}

fn rate_at(mu: &[f64], alpha: &[f64], tr: &Traces, k: usize, i: usize) -> f64 {
    let n = mu.len();
    mu[i] + (0..n).map(|j| alpha[i * n + j] * tr.a[k * n + j]).sum::<f64>()
}

fn ll_recursive(seq: &EventSequence, mu: &[f64], alpha: &[f64], tr: &Traces) -> f64 {
    let n = mu.len();
    let mut ll = 0.0;
    for (k, e) in seq.events().iter().enumerate() {
        let r = rate_at(mu, alpha, tr, k, e.e);
        if !(r > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll += r.ln();
    }
    for i in 0..n {
        ll -= mu[i] * seq.horizon();
        ll -= (0..n).map(|j| alpha[i * n + j] * tr.g[j]).sum::<f64>();
    }
    ll
}

/// Exact log-likelihood by the recursive excitation traces.
pub fn hawkes_log_likelihood(seq: &EventSequence, mu: &[f64], alpha: &[f64], beta: f64) -> f64 {
    ll_recursive(seq, mu, alpha, &traces(seq, beta))
}

/// Direct double-sum log-likelihood, quadratic in the number of events.
pub fn hawkes_log_likelihood_naive(seq: &EventSequence, mu: &[f64], alpha: &[f64], beta: f64) -> f64 {
    let n = mu.len();
    let ev = seq.events();
    let mut ll = 0.0;
    for e in ev {
        let mut r = mu[e.e];
        for s in ev.iter().take_while(|s| s.t < e.t) {
            r += alpha[e.e * n + s.e] * (-beta * (e.t - s.t)).exp();
        }
        ll += r.ln();
    }
    let t = seq.horizon();
    for i in 0..n {
        ll -= mu[i] * t;
        for s in ev {
            ll -= alpha[i * n + s.e] / beta * (1.0 - (-beta * (t - s.t)).exp());
        }
    }
    ll
}

/// Gradient and a diagonal curvature estimate (Fisher scoring) of the
/// log-likelihood in `(μ, α)`.
fn gradient(seq: &EventSequence, mu: &[f64], alpha: &[f64], tr: &Traces) -> (Vec<f64>, Vec<f64>) {
    let n = mu.len();
    let mut g = vec![0.0; n + n * n];
    let mut h = vec![0.0; n + n * n];
    for (k, e) in seq.events().iter().enumerate() {
        let i = e.e;
        let r = rate_at(mu, alpha, tr, k, i);
        let inv = 1.0 / r;
        g[i] += inv;
        h[i] += inv * inv;
        for j in 0..n {
            let x = tr.a[k * n + j];
            g[n + i * n + j] += x * inv;
            h[n + i * n + j] += x * x * inv * inv;
        }
    }
    for i in 0..n {
        g[i] -= seq.horizon();
        for j in 0..n {
            g[n + i * n + j] -= tr.g[j];
        }
    }
    (g, h)
}

fn spectral_radius(alpha: &[f64], n: usize, beta: f64) -> f64 {
    let m = DMatrix::from_fn(n, n, |i, j| alpha[i * n + j] / beta);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

const MU_FLOOR: f64 = 1e-10;

fn fit_one(seq: &EventSequence, beta: f64, cfg: &HawkesFitConfig) -> HawkesModel {
    let n = seq.num_types();
    let t = seq.horizon();
    let tr = traces(seq, beta);
    let mut mu: Vec<f64> = tr.counts.iter().map(|&c| (c as f64 / t).max(MU_FLOOR)).collect();
    let mut alpha = vec![0.0; n * n];
    if !cfg.fit_alpha {
        let ll = ll_recursive(seq, &mu, &alpha, &tr);
        return HawkesModel { mu, alpha, beta, log_likelihood: ll, converged: true, stationary: true };
    }
    for (i, m) in mu.iter_mut().enumerate() {
        *m = (0.7 * tr.counts[i] as f64 / t).max(MU_FLOOR);
    }
    alpha.fill(0.05 * beta / n as f64);
    let mut ll = ll_recursive(seq, &mu, &alpha, &tr);
    let mut converged = false;
    let mut step = 1.0;
    for _ in 0..cfg.max_iter {
        let (g, h) = gradient(seq, &mu, &alpha, &tr);
        let mut accepted = false;
        for _ in 0..60 {
            let mut new_mu = mu.clone();
            let mut new_alpha = alpha.clone();
            let mut decrease = 0.0;
            for k in 0..n + n * n {
                let scale = if h[k] > 0.0 { 1.0 / h[k] } else { 1.0 };
                let (cur, floor) = if k < n { (mu[k], MU_FLOOR) } else { (alpha[k - n], 0.0) };
                let next = (cur + step * scale * g[k]).max(floor);
                decrease += g[k] * (next - cur);
                if k < n {
                    new_mu[k] = next;
                } else {
                    new_alpha[k - n] = next;
                }
            }
            let new_ll = ll_recursive(seq, &new_mu, &new_alpha, &tr);
            if new_ll.is_finite() && new_ll >= ll + 1e-4 * decrease {
                let gain = new_ll - ll;
                mu = new_mu;
                alpha = new_alpha;
                ll = new_ll;
                accepted = true;
                step = (step * 2.0).min(1.0);
                if gain <= cfg.tol * ll.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            step /= 2.0;
        }
        if !accepted || converged {
            converged = converged || !accepted;
            break;
        }
    }
    let stationary = spectral_radius(&alpha, n, beta) < 1.0;
    HawkesModel { mu, alpha, beta, log_likelihood: ll, converged, stationary }
}

/// Maximum-likelihood fit over `(μ, α)` for each `β` in the grid; the best
/// likelihood wins.
pub fn fit_hawkes(train: &EventSequence, cfg: &HawkesFitConfig) -> Result<HawkesModel> {
    if train.is_empty() {
        return Err(Error::InsufficientData("cannot fit a Hawkes process to no events".into()));
    }
    if cfg.beta_grid.is_empty() || cfg.beta_grid.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Validation("beta grid must be non-empty and positive".into()));
    }
    let mut best: Option<HawkesModel> = None;
    for &beta in &cfg.beta_grid {
        let m = fit_one(train, beta, cfg);
        if best.as_ref().is_none_or(|b| m.log_likelihood > b.log_likelihood) {
            best = Some(m);
        }
    }
    Ok(best.expect("grid non-empty"))
}

/// Hawkes intensities after an origin, given the excitation traces there.
pub struct HawkesSurface<'a> {
    model: &'a HawkesModel,
    origin: f64,
    /// `Σ_j α_ij A_j(origin⁺)` per type.
    excitation: Vec<f64>,
}

impl IntensitySurface for HawkesSurface<'_> {
    fn num_types(&self) -> usize {
        self.model.num_types()
    }

    fn rates(&self, t: f64, out: &mut [f64]) {
        let d = (-self.model.beta * (t - self.origin)).exp();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.model.mu[i] + self.excitation[i] * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Poisson(PoissonModel),
    Hawkes(HawkesModel),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Poisson(_) => "poisson",
            Baseline::Hawkes(_) => "hawkes",
        }
    }

    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        match self {
            Baseline::Poisson(m) => m.log_likelihood(seq),
            Baseline::Hawkes(m) => hawkes_log_likelihood(seq, &m.mu, &m.alpha, m.beta),
        }
    }
}

/// Next-event prediction from the history ending at its last event.
pub fn predict_next_baseline(model: &Baseline, history: &[Event], cap: f64) -> Result<Prediction> {
    let t_n = history.last().map_or(0.0, |e| e.t);
    match model {
        Baseline::Poisson(m) => {
            let total = m.total_rate();
            if !(total > 0.0) {
                return Err(Error::Undefined("all Poisson rates are zero".into()));
            }
            if !(cap > t_n) {
                return Err(Error::Domain(format!("cap {cap} must exceed last event {t_n}")));
            }
            let event_type = (0..m.rates.len()).max_by(|&a, &b| m.rates[a].total_cmp(&m.rates[b]).then(b.cmp(&a))).unwrap_or(0);
            let tail = (-total * (cap - t_n)).exp();
            Ok(Prediction { time: t_n + 1.0 / total, event_type, tail_mass: tail, truncated: tail > 0.01 })
        }
        Baseline::Hawkes(m) => {
            let n = m.num_types();
            let mut a = vec![0.0; n];
            for e in history {
                let d = (-m.beta * (t_n - e.t)).exp();
                a[e.e] += d;
            }
            hawkes_prediction(m, &a, t_n, cap)
        }
    }
}

fn hawkes_prediction(m: &HawkesModel, a: &[f64], t_n: f64, cap: f64) -> Result<Prediction> {
    let n = m.num_types();
    if m.mu.iter().all(|&x| x <= 0.0) && a.iter().all(|&x| x <= 0.0) {
        return Err(Error::Undefined("all Hawkes rates are zero".into()));
    }
    let excitation = (0..n).map(|i| (0..n).map(|j| m.alpha(i, j) * a[j]).sum()).collect();
    predict_next(&HawkesSurface { model: m, origin: t_n, excitation }, t_n, cap)
}

/// Predictions for every event after the first: the origin is event `k`,
/// the target is event `k + 1`. Returns `(predicted, actual)` time pairs.
pub fn predict_sequence(model: &Baseline, seq: &EventSequence, cap_span: f64) -> Result<Vec<(Prediction, f64)>> {
    let ev = seq.events();
    let mut out = Vec::with_capacity(ev.len().saturating_sub(1));
    match model {
        Baseline::Poisson(_) => {
            for k in 0..ev.len().saturating_sub(1) {
                let p = predict_next_baseline(model, &ev[k..=k], ev[k].t + cap_span)?;
                out.push((p, ev[k + 1].t));
            }
        }
        Baseline::Hawkes(m) => {
            let n = m.num_types();
            let mut a = vec![0.0; n];
            let mut stamp = 0.0;
            for k in 0..ev.len().saturating_sub(1) {
                let d = (-m.beta * (ev[k].t - stamp)).exp();
                a.iter_mut().for_each(|x| *x *= d);
                a[ev[k].e] += 1.0;
                stamp = ev[k].t;
                let p = hawkes_prediction(m, &a, ev[k].t, ev[k].t + cap_span)?;
                out.push((p, ev[k + 1].t));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_with, GraphTimeline, HawkesParams, KernelMode, Snapshot};

    fn seq(events: &[(f64, usize)], n: usize, horizon: f64) -> EventSequence {
        EventSequence::new(events.iter().map(|&(t, e)| Event { t, e }).collect(), n, horizon).unwrap()
    }

    #[test]
    fn poisson_examples() {
        let s = seq(&(0..10).map(|k| (0.4 * k as f64 + 0.1, 0)).collect::<Vec<_>>(), 2, 5.0);
        let m = fit_poisson(&s).unwrap();
        assert_eq!(m.rates, vec![2.0, 0.0]);
        let best = m.log_likelihood(&s);
        for f in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
            let other = PoissonModel { rates: vec![2.0 * f, 0.0] };
            assert!(other.log_likelihood(&s) < best);
        }
        let p = predict_next_baseline(&Baseline::Poisson(m), &s.events()[..3], 100.0).unwrap();
        assert!((p.time - s.events()[2].t - 0.5).abs() < 1e-15);
        assert_eq!(p.event_type, 0);
        let zero = Baseline::Poisson(PoissonModel { rates: vec![0.0] });
        assert!(matches!(predict_next_baseline(&zero, &[], 1.0), Err(Error::Undefined(_))));
    }

    fn random_seq(seed: u64, n_types: usize, len: usize) -> EventSequence {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 0);
        let mut t = 0.0;
        let ev: Vec<(f64, usize)> = (0..len)
            .map(|_| {
                t += rng.random::<f64>() * 0.5;
                (t, rng.random_range(0..n_types))
            })
            .collect();
        seq(&ev, n_types, t + 1.0)
    }

    #[test]
    fn recursive_matches_naive() {
        for seed in 0..5 {
            let s = random_seq(seed, 3, 200);
            let mu = [0.5, 0.2, 0.9];
            let alpha = [0.1, 0.3, 0.0, 0.2, 0.05, 0.4, 0.0, 0.1, 0.6];
            let a = hawkes_log_likelihood(&s, &mu, &alpha, 1.7);
            let b = hawkes_log_likelihood_naive(&s, &mu, &alpha, 1.7);
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_alpha_is_the_poisson_fit() {
        let s = random_seq(3, 2, 100);
        let cfg = HawkesFitConfig { fit_alpha: false, ..Default::default() };
        let h = fit_hawkes(&s, &cfg).unwrap();
        let p = fit_poisson(&s).unwrap();
        assert_eq!(h.mu, p.rates);
        assert!((h.log_likelihood - p.log_likelihood(&s)).abs() < 1e-9);
    }

    fn coupled(seed: u64) -> (EventSequence, HawkesParams) {
        let timeline = GraphTimeline { num_nodes: 2, duration: 1000.0, snapshots: vec![Snapshot { epoch_start: 0.0, edges: vec![(0, 1)] }] };
        let params = HawkesParams::uniform(2, 1.0, 0.8, 2.0, KernelMode::FullHistory);
        (simulate_with(&timeline, &params, seed, 1e4).unwrap(), params)
    }

    #[test]
    fn generator_round_trip() {
        for seed in 0..5 {
            let (s, truth) = coupled(seed);
            let m = fit_hawkes(&s, &HawkesFitConfig::default()).unwrap();
            assert_eq!(m.beta, 2.0);
            for i in 0..2 {
                assert!((m.mu[i] - 1.0).abs() < 0.15, "seed {seed}: mu {:?}", m.mu);
            }
            assert!((m.alpha(0, 1) - truth.alpha(0, 1)).abs() < 0.25 * 0.8, "seed {seed}: alpha {:?}", m.alpha);
            assert!((m.alpha(1, 0) - truth.alpha(1, 0)).abs() < 0.25 * 0.8, "seed {seed}: alpha {:?}", m.alpha);
            let true_ll = hawkes_log_likelihood(&s, &[1.0, 1.0], &[0.0, 0.8, 0.8, 0.0], 2.0);
            assert!(m.log_likelihood >= true_ll);
            assert!(m.stationary);
        }
    }

    #[test]
    fn hawkes_waits_less_right_after_an_event() {
        let m = HawkesModel { mu: vec![0.5], alpha: vec![1.5], beta: 2.0, log_likelihood: 0.0, converged: true, stationary: true };
        let fresh = hawkes_prediction(&m, &[1.0], 0.0, 200.0).unwrap();
        let stale = hawkes_prediction(&m, &[(-2.0f64 * 5.0).exp()], 0.0, 200.0).unwrap();
        assert!(fresh.time < stale.time);
        assert!((stale.time - 2.0).abs() < 0.01);
        let b = Baseline::Hawkes(m);
        let p = predict_next_baseline(&b, &[Event { t: 1.0, e: 0 }], 200.0).unwrap();
        assert!((p.time - 1.0 - fresh.time).abs() < 1e-9);
    }

    #[test]
    fn sequence_predictions_match_single_calls() {
        let s = random_seq(7, 2, 40);
        let m = fit_hawkes(&s, &HawkesFitConfig { max_iter: 50, ..Default::default() }).unwrap();
        let b = Baseline::Hawkes(m);
        let all = predict_sequence(&b, &s, 50.0).unwrap();
        for (k, (p, truth)) in all.iter().enumerate() {
            let single = predict_next_baseline(&b, &s.events()[..=k], s.events()[k].t + 50.0).unwrap();
            assert!((single.time - p.time).abs() < 1e-9);
            assert_eq!(*truth, s.events()[k + 1].t);
        }
    }

    #[test]
    fn poisson_argmax_is_most_frequent() {
        let s = seq(&[(0.1, 1), (0.2, 1), (0.3, 0), (0.4, 1)], 3, 1.0);
        let b = Baseline::Poisson(fit_poisson(&s).unwrap());
        assert_eq!(predict_next_baseline(&b, s.events(), 10.0).unwrap().event_type, 1);
    }
}
