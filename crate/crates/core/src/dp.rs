//! Privacy parameters, budget accounting, seeded noise and the sparse vector
//! technique.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `(ε, δ)` privacy budget plus the utility failure probability `β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
}

impl PrivacyParams {
    pub fn new(eps: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("ε must be positive and finite, got {eps}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid(format!("δ must lie in [0, 1), got {delta}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("β must lie in (0, 1), got {beta}")));
        }
        Ok(PrivacyParams { eps, delta, beta })
    }
}

/// Per-unit budget under `λ`-fold group privacy: `(ε/λ, δ/λ, β)`.
pub fn group_privacy_scale(p: PrivacyParams, lambda: u64) -> Result<PrivacyParams> {
    if lambda == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let l = lambda as f64;
    Ok(PrivacyParams {
        eps: p.eps / l,
        delta: p.delta / l,
        beta: p.beta,
    })
}

/// Fractions of `(ε, δ, β)` given to the three pipeline stages: the SVT
/// scan, the release of τ*, and the downstream edge-DP mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub eps: [f64; 3],
    pub delta: [f64; 3],
    pub beta: [f64; 3],
}

impl BudgetSplit {
    pub const THEORY: BudgetSplit = BudgetSplit {
        eps: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        delta: [0.0, 0.5, 0.5],
        beta: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    };

    pub const EMPIRICAL: BudgetSplit = BudgetSplit {
        eps: [0.2, 0.2, 0.6],
        delta: [0.0, 1.0, 0.0],
        beta: [0.2, 0.0001, 0.7999],
    };

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("ε", &self.eps), ("δ", &self.delta), ("β", &self.beta)] {
            if f.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(invalid(format!("{name} fractions must be non-negative: {f:?}")));
            }
            let s: f64 = f.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("{name} fractions sum to {s}, expected 1")));
            }
        }
        if self.eps[0] + self.eps[1] <= 0.0 || self.eps[2] <= 0.0 {
            return Err(invalid("every stage needs a positive ε share"));
        }
        if self.beta[0] + self.beta[1] <= 0.0 || self.beta[2] <= 0.0 {
            return Err(invalid("every stage needs a positive β share"));
        }
        Ok(())
    }

    /// Budget handed to the degree approximator (stages one and two).
    pub fn approximator(&self, p: PrivacyParams) -> PrivacyParams {
        PrivacyParams {
            eps: (self.eps[0] + self.eps[1]) * p.eps,
            delta: (self.delta[0] + self.delta[1]) * p.delta,
            beta: (self.beta[0] + self.beta[1]) * p.beta,
        }
    }

    /// Budget left for the downstream mechanism, before any group-privacy division.
    pub fn mechanism(&self, p: PrivacyParams) -> PrivacyParams {
        PrivacyParams {
            eps: self.eps[2] * p.eps,
            delta: self.delta[2] * p.delta,
            beta: self.beta[2] * p.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub label: String,
    pub eps: f64,
    pub delta: f64,
}

/// Sequential-composition accounting against a fixed total.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total: PrivacyParams,
    pub charges: Vec<Charge>,
}

// Relative slack for float rounding when fractions should add up exactly.
const LEDGER_REL_TOL: f64 = 1e-12;

impl BudgetLedger {
    pub fn new(total: PrivacyParams) -> Self {
        BudgetLedger {
            total,
            charges: Vec::new(),
        }
    }

    pub fn spent(&self) -> (f64, f64) {
        self.charges
            .iter()
            .fold((0.0, 0.0), |(e, d), c| (e + c.eps, d + c.delta))
    }

    pub fn remaining(&self) -> (f64, f64) {
        let (e, d) = self.spent();
        ((self.total.eps - e).max(0.0), (self.total.delta - d).max(0.0))
    }

    pub fn charge(&mut self, label: &str, eps: f64, delta: f64) -> Result<()> {
        if !(eps >= 0.0 && delta >= 0.0) {
            return Err(invalid(format!("negative charge for `{label}`")));
        }
        let (e, d) = self.spent();
        let over_eps = e + eps > self.total.eps * (1.0 + LEDGER_REL_TOL);
        let over_delta = d + delta > self.total.delta * (1.0 + LEDGER_REL_TOL);
        if over_eps || over_delta {
            let (eps_left, delta_left) = self.remaining();
            return Err(Error::BudgetExceeded {
                label: label.to_string(),
                eps,
                delta,
                eps_left,
                delta_left,
            });
        }
        self.charges.push(Charge {
            label: label.to_string(),
            eps,
            delta,
        });
        Ok(())
    }

    /// True when the charged ε equals the total up to float rounding.
    pub fn eps_exhausted(&self) -> bool {
        (self.spent().0 - self.total.eps).abs() <= self.total.eps * LEDGER_REL_TOL
    }
}

/// `−b·sgn(u−½)·ln(1−2|u−½|)`, the Laplace(0, b) inverse CDF at `u ∈ (0, 1)`.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

enum Stream {
    Seeded(Box<ChaCha20Rng>),
    Zero,
    Uniforms(std::vec::IntoIter<f64>),
}

/// Deterministic noise stream.
///
/// Every draw goes through a single uniform, so two sources with the same seed
/// produce the same sequence of Laplace values whatever the scales are.
pub struct NoiseSource {
    stream: Stream,
    draws: u64,
}

impl NoiseSource {
    pub fn seeded(seed: u64) -> Self {
        NoiseSource {
            stream: Stream::Seeded(Box::new(ChaCha20Rng::seed_from_u64(seed))),
            draws: 0,
        }
    }

    /// A source whose every Laplace draw is exactly 0.
    pub fn zero() -> Self {
        NoiseSource {
            stream: Stream::Zero,
            draws: 0,
        }
    }

    /// Replays the given uniforms in order; further draws return the median.
    pub fn from_uniforms(us: Vec<f64>) -> Self {
        NoiseSource {
            stream: Stream::Uniforms(us.into_iter()),
            draws: 0,
        }
    }

    /// Independent stream for repetition `round` of an experiment seeded with `seed`.
    pub fn derived(seed: u64, round: u64) -> Self {
        Self::seeded(derive_seed(seed, round))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.stream, Stream::Zero)
    }

    /// Number of draws taken so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        match &mut self.stream {
            Stream::Seeded(rng) => rng.sample(Open01),
            Stream::Zero => 0.5,
            Stream::Uniforms(it) => it.next().unwrap_or(0.5),
        }
    }

    pub fn laplace(&mut self, scale: f64) -> Result<f64> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(laplace_from_uniform(self.uniform(), scale))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, round: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ round)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SvtOutcome {
    Fired { index: usize, evaluated: usize },
    Exhausted { evaluated: usize },
}

/// Sparse vector technique over a lazily evaluated query sequence.
///
/// Draws `T + Lap(2/ε)` first, then `Lap(2c/ε)` for each query just before
/// comparing it, and stops at the first noisy value above the noisy
/// threshold. `c = 1` is only sound for sensitivity-monotonic sequences.
pub fn svt<I, F>(t: f64, queries: I, eps: f64, c: u8, src: &mut NoiseSource) -> Result<SvtOutcome>
where
    I: IntoIterator<Item = (usize, F)>,
    F: FnOnce() -> Result<f64>,
{
    if c != 1 && c != 2 {
        return Err(invalid(format!("SVT constant must be 1 or 2, got {c}")));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("ε must be positive, got {eps}")));
    }
    let t_noisy = t + src.laplace(2.0 / eps)?;
    let q_scale = 2.0 * c as f64 / eps;
    let mut evaluated = 0;
    for (index, query) in queries {
        let nu = src.laplace(q_scale)?;
        evaluated += 1;
        if query()? + nu > t_noisy {
            return Ok(SvtOutcome::Fired { index, evaluated });
        }
    }
    Ok(SvtOutcome::Exhausted { evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_points() {
        assert_eq!(laplace_from_uniform(0.5, 3.0), 0.0);
        assert!((laplace_from_uniform(0.75, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((laplace_from_uniform(0.25, 1.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((laplace_from_uniform(0.75, 2.5) - 2.5 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_scale() {
        let mut s = NoiseSource::seeded(1);
        assert!(s.laplace(0.0).is_err());
        assert!(s.laplace(-1.0).is_err());
        assert!(s.laplace(f64::NAN).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::new(0.8, 0.0, 0.1).is_ok());
        assert!(PrivacyParams::new(0.0, 0.0, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn group_scale() {
        let p = PrivacyParams::new(1.0, 1e-9, 0.1).unwrap();
        assert_eq!(group_privacy_scale(p, 1).unwrap(), p);
        let p = PrivacyParams::new(0.8, 2f64.powi(-30), 0.1).unwrap();
        let q = group_privacy_scale(p, 4).unwrap();
        assert_eq!((q.eps, q.delta, q.beta), (0.2, 2f64.powi(-32), 0.1));
        assert!(group_privacy_scale(p, 0).is_err());
    }

    #[test]
    fn ledger_accepts_exact_spend_and_rejects_overspend() {
        let mut l = BudgetLedger::new(PrivacyParams::new(0.8, 2f64.powi(-30), 0.1).unwrap());
        l.charge("a", 0.8 * 0.2, 0.0).unwrap();
        l.charge("b", 0.8 * 0.2, 2f64.powi(-30)).unwrap();
        l.charge("c", 0.8 * 0.6, 0.0).unwrap();
        assert!(l.eps_exhausted());
        assert!(matches!(l.charge("d", 0.01, 0.0), Err(Error::BudgetExceeded { .. })));
        assert!(l.charge("e", 0.0, 1e-15).is_err());
        assert_eq!(l.charges.len(), 3);
    }

    #[test]
    fn preset_splits_are_valid() {
        BudgetSplit::THEORY.validate().unwrap();
        BudgetSplit::EMPIRICAL.validate().unwrap();
        let bad = BudgetSplit {
            eps: [0.5, 0.5, 0.5],
            ..BudgetSplit::THEORY
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn svt_zero_noise_trace() {
        let mut z = NoiseSource::zero();
        let qs = [-5.0, -3.0, -1.0, 0.0];
        let out = svt(-2.0, qs.iter().enumerate().map(|(i, &q)| (i + 1, move || Ok(q))), 1.0, 2, &mut z)
            .unwrap();
        assert_eq!(out, SvtOutcome::Fired { index: 3, evaluated: 3 });
        assert_eq!(z.draws(), 4);

        let mut z = NoiseSource::zero();
        let out = svt(-2.0, [(1, || Ok(5.0))], 1.0, 1, &mut z).unwrap();
        assert_eq!(out, SvtOutcome::Fired { index: 1, evaluated: 1 });
    }

    #[test]
    fn svt_exhaustion_and_draw_count() {
        for c in [1, 2] {
            let mut s = NoiseSource::seeded(7);
            let out = svt(1e9, (1..=6).map(|i| (i, || Ok(0.0))), 1.0, c, &mut s).unwrap();
            assert_eq!(out, SvtOutcome::Exhausted { evaluated: 6 });
            assert_eq!(s.draws(), 7);
        }
        let mut s = NoiseSource::zero();
        assert!(svt(0.0, [(1, || Ok(0.0))], 1.0, 3, &mut s).is_err());
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = NoiseSource::seeded(42);
        let mut b = NoiseSource::seeded(42);
        for _ in 0..100 {
            let (x, y) = (a.laplace(1.0).unwrap(), b.laplace(3.0).unwrap());
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        let u: Vec<f64> = (0..4).map(|r| NoiseSource::derived(42, r).uniform()).collect();
        assert!(u.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(NoiseSource::derived(42, 3).uniform(), u[3]);
    }

    #[test]
    fn scripted_uniforms() {
        let mut s = NoiseSource::from_uniforms(vec![0.75]);
        assert!((s.laplace(1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.laplace(1.0).unwrap(), 0.0);
    }
}
