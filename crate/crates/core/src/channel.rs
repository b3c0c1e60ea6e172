//! Fading channel coefficients, received power and SINR.
//!
//! Every gNB→UE link carries an `M`-component channel vector whose entries
//! are complex Gaussian with mean `mu` and standard deviation `sigma` on
//! both the real and imaginary parts. The parameters are derived from the
//! linear Rician K-factor so that each component has unit mean power:
//!
//! ```text
//! mu    = sqrt(K / (2 (K + 1)))
//! sigma = sqrt(1 / (2 (K + 1)))
//! ```
//!
//! `K = 0` gives Rayleigh fading. Received power follows
//! `P_r = |h^H sqrt(d^-alpha)|^2 P_t = ||h||^2 d^-alpha P_t`.
//!
//! All arithmetic is done in watts; dBm/dB conversions live at the edges.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }
}

/// Channel coefficient vector of one gNB→UE link.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector {
    components: Vec<ComplexSample>,
}

impl ChannelVector {
    pub fn new(components: Vec<ComplexSample>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("channel.antennas", "antenna count must be >= 1"));
        }
        if components.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Domain("channel component is not finite".into()));
        }
        Ok(Self { components })
    }

    /// Unit channel `1 + 0i` on every antenna.
    pub fn unit(m: usize) -> Result<Self> {
        Self::new(vec![ComplexSample::new(1.0, 0.0); m])
    }

    pub fn components(&self) -> &[ComplexSample] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Squared Euclidean norm `||h||^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.components.iter().map(ComplexSample::norm_sqr).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RicianParams {
    pub k_factor_db: f64,
    pub k_linear: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl RicianParams {
    pub fn from_linear(k_linear: f64) -> Self {
        debug_assert!(k_linear >= 0.0);
        let denom = 2.0 * (k_linear + 1.0);
        Self {
            k_factor_db: linear_to_db(k_linear),
            k_linear,
            mu: (k_linear / denom).sqrt(),
            sigma: (1.0 / denom).sqrt(),
        }
    }

    pub fn rayleigh() -> Self {
        Self::from_linear(0.0)
    }
}

/// Converts a K-factor in dB to Gaussian parameters. `-inf` dB is Rayleigh.
pub fn rician_params(k_factor_db: f64) -> RicianParams {
    if k_factor_db == f64::NEG_INFINITY {
        return RicianParams::rayleigh();
    }
    let mut p = RicianParams::from_linear(db_to_linear(k_factor_db));
    p.k_factor_db = k_factor_db;
    p
}

/// Draws one channel vector with i.i.d. components. Real and imaginary
/// parts are drawn in that order per component.
pub fn draw_channel<R: Rng + ?Sized>(params: &RicianParams, m: usize, rng: &mut R) -> Result<ChannelVector> {
    if m == 0 {
        return Err(Error::config("channel.antennas", "antenna count must be >= 1"));
    }
    let components = (0..m)
        .map(|_| {
            let re = params.mu + params.sigma * rng.sample::<f64, _>(StandardNormal);
            let im = params.mu + params.sigma * rng.sample::<f64, _>(StandardNormal);
            ComplexSample::new(re, im)
        })
        .collect();
    ChannelVector::new(components)
}

/// Fading model of every link in a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    /// Deterministic unit channel.
    None,
    Rayleigh,
    Rician,
}

impl std::fmt::Display for FadingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FadingKind::None => "none",
            FadingKind::Rayleigh => "rayleigh",
            FadingKind::Rician => "rician",
        })
    }
}

impl std::str::FromStr for FadingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FadingKind::None),
            "rayleigh" => Ok(FadingKind::Rayleigh),
            "rician" => Ok(FadingKind::Rician),
            other => Err(Error::config(
                "channel.fading",
                format!("unknown fading `{other}` (expected none, rayleigh or rician)"),
            )),
        }
    }
}

/// Resolved fading process used by the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fading {
    Unit,
    Gaussian(RicianParams),
}

impl Fading {
    pub fn new(kind: FadingKind, k_factor_db: f64) -> Self {
        match kind {
            FadingKind::None => Fading::Unit,
            FadingKind::Rayleigh => Fading::Gaussian(RicianParams::rayleigh()),
            FadingKind::Rician => Fading::Gaussian(rician_params(k_factor_db)),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<ChannelVector> {
        match self {
            Fading::Unit => ChannelVector::unit(m),
            Fading::Gaussian(p) => draw_channel(p, m, rng),
        }
    }

    /// `||h||^2` of a fresh draw. Consumes the stream exactly like [`Fading::draw`]
    /// without allocating.
    pub fn draw_gain<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> f64 {
        match self {
            Fading::Unit => m as f64,
            Fading::Gaussian(p) => (0..m)
                .map(|_| {
                    let re = p.mu + p.sigma * rng.sample::<f64, _>(StandardNormal);
                    let im = p.mu + p.sigma * rng.sample::<f64, _>(StandardNormal);
                    re * re + im * im
                })
                .sum(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    pub tx_power_watts: f64,
    pub pathloss_exponent: f64,
    pub noise_power_watts: f64,
}

impl LinkBudget {
    pub fn new(tx_power_watts: f64, pathloss_exponent: f64, noise_power_watts: f64) -> Result<Self> {
        for (field, v) in [
            ("tx_power", tx_power_watts),
            ("channel.pathloss_exponent", pathloss_exponent),
            ("channel.noise_dbm", noise_power_watts),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(Self {
            tx_power_watts,
            pathloss_exponent,
            noise_power_watts,
        })
    }
}

/// Received power in watts, `||h||^2 * d^-alpha * P_t`.
pub fn received_power(h: &ChannelVector, distance_m: f64, budget: &LinkBudget) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be > 0 m, got {distance_m}")));
    }
    Ok(path_gain_power(h.norm_sqr(), distance_m, budget))
}

#[inline]
pub(crate) fn path_gain_power(gain: f64, distance_m: f64, budget: &LinkBudget) -> f64 {
    gain * distance_m.powf(-budget.pathloss_exponent) * budget.tx_power_watts
}

pub fn sinr(serving_rx_watts: f64, interferer_rx_watts: &[f64], noise_watts: f64) -> f64 {
    let interference: f64 = interferer_rx_watts.iter().sum();
    serving_rx_watts / (interference + noise_watts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rician_closed_forms() {
        let p = RicianParams::from_linear(0.0);
        assert_eq!(p.mu, 0.0);
        assert_relative_eq!(p.sigma, 0.5f64.sqrt(), epsilon = 1e-15);

        let p = RicianParams::from_linear(1.0);
        assert_relative_eq!(p.mu, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.sigma, 0.5, epsilon = 1e-15);

        // frozen from a 30-digit mpmath evaluation of the closed forms
        let p = rician_params(3.0);
        assert_relative_eq!(p.k_linear, 1.995_262_314_968_879_6, epsilon = 1e-12);
        assert_relative_eq!(p.mu, 0.577_121_921_513_609_7, epsilon = 1e-12);
        assert_relative_eq!(p.sigma, 0.408_571_031_411_233_3, epsilon = 1e-12);
        assert_relative_eq!(2.0 * (p.mu * p.mu + p.sigma * p.sigma), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn neg_infinite_db_is_rayleigh() {
        let p = rician_params(f64::NEG_INFINITY);
        assert_eq!(p.k_linear, 0.0);
        assert_eq!(p.mu, 0.0);
    }

    #[test]
    fn degenerate_draw() {
        let params = RicianParams {
            k_factor_db: f64::INFINITY,
            k_linear: f64::INFINITY,
            mu: 0.5,
            sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = draw_channel(&params, 4, &mut rng).unwrap();
        for c in h.components() {
            assert_eq!(*c, ComplexSample::new(0.5, 0.5));
        }
    }

    #[test]
    fn zero_antennas_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = draw_channel(&RicianParams::rayleigh(), 0, &mut rng).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn same_seed_same_draws() {
        let p = rician_params(3.0);
        let a = draw_channel(&p, 3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = draw_channel(&p, 3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_gain_matches_draw() {
        let f = Fading::new(FadingKind::Rician, 3.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let h = f.draw(2, &mut r1).unwrap();
            assert_eq!(h.norm_sqr(), f.draw_gain(2, &mut r2));
        }
    }

    #[test]
    fn rayleigh_mean_power() {
        let p = RicianParams::rayleigh();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| draw_channel(&p, 1, &mut rng).unwrap().norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn received_power_examples() {
        let budget = LinkBudget::new(10.0, 2.0, 1e-15).unwrap();
        let h = ChannelVector::unit(1).unwrap();
        assert_relative_eq!(received_power(&h, 100.0, &budget).unwrap(), 1.0e-3, epsilon = 1e-18);

        let zero = ChannelVector::new(vec![ComplexSample::new(0.0, 0.0)]).unwrap();
        assert_eq!(received_power(&zero, 100.0, &budget).unwrap(), 0.0);

        let budget = LinkBudget::new(1.0, 2.0, 1e-15).unwrap();
        let h = ChannelVector::unit(2).unwrap();
        assert_relative_eq!(received_power(&h, 2.0, &budget).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn received_power_rejects_nonpositive_distance() {
        let budget = LinkBudget::new(10.0, 2.0, 1e-15).unwrap();
        let h = ChannelVector::unit(1).unwrap();
        assert!(matches!(received_power(&h, 0.0, &budget), Err(Error::Domain(_))));
        assert!(matches!(received_power(&h, -3.0, &budget), Err(Error::Domain(_))));
    }

    #[test]
    fn sinr_examples() {
        assert_relative_eq!(sinr(1e-3, &[], 1e-6), 1000.0, epsilon = 1e-9);
        assert_relative_eq!(linear_to_db(sinr(1e-3, &[], 1e-6)), 30.0, epsilon = 1e-9);
        assert_relative_eq!(sinr(1e-3, &[1e-3], 1e-30), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sinr(2e-6, &[1e-6, 5e-7], 5e-7), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_conversions() {
        assert_relative_eq!(dbm_to_watts(40.0), 10.0, epsilon = 1e-12);
        assert_relative_eq!(dbm_to_watts(-114.0), 3.981_071_705_534_97e-15, max_relative = 1e-12);
        assert_relative_eq!(watts_to_dbm(10.0), 40.0, epsilon = 1e-12);
    }

    #[test]
    fn link_budget_rejects_nonpositive() {
        assert!(LinkBudget::new(0.0, 2.0, 1e-15).is_err());
        assert!(LinkBudget::new(1.0, -2.0, 1e-15).is_err());
        assert!(LinkBudget::new(1.0, 2.0, 0.0).is_err());
    }
}
