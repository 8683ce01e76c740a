//! Truncated probability mass functions over dollar counts `0..=n_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::real::{sum_compensated, Real};

/// Probability mass function on `{0, 1, ..., n_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WealthPmf<T> {
    probs: Vec<T>,
}

impl<T: Real> WealthPmf<T> {
    /// Validated constructor: entries finite and nonnegative, total mass
    /// within [`Real::MASS_TOL`] of one.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        let pmf = Self::from_raw(probs);
        pmf.validate()?;
        Ok(pmf)
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        let mut pmf = Self::from_raw(weights);
        pmf.check_entries()?;
        let mass = pmf.mass();
        if mass <= T::zero() {
            return Err(Error::NotNormalized { mass: mass.as_f64() });
        }
        pmf.scale(T::one() / mass);
        Ok(pmf)
    }

    /// Wraps a sequence without any checks. Used for dynamic states and
    /// deliberately unnormalized truncations.
    pub fn from_raw(probs: Vec<T>) -> Self {
        assert!(!probs.is_empty(), "a pmf needs at least one bin");
        Self { probs }
    }

    pub fn dirac(at: usize, n_max: usize) -> Result<Self> {
        if at > n_max {
            return Err(Error::param("n_max", format!("Dirac location {at} exceeds n_max {n_max}")));
        }
        let mut probs = vec![T::zero(); n_max + 1];
        probs[at] = T::one();
        Ok(Self { probs })
    }

    /// Two-point law on `floor(mean)` and `floor(mean) + 1` with the given
    /// mean; a Dirac mass when `mean` is an integer.
    pub fn two_point(mean: T, n_max: usize) -> Result<Self> {
        if !(mean >= T::zero()) {
            return Err(Error::param("mu", "mean must be nonnegative"));
        }
        let lo = mean.floor();
        let lo_idx = lo.to_usize().expect("nonnegative");
        let frac = mean - lo;
        if frac == T::zero() {
            return Self::dirac(lo_idx, n_max);
        }
        if lo_idx + 1 > n_max {
            return Err(Error::param("n_max", format!("mean {mean} too close to n_max {n_max}")));
        }
        let mut probs = vec![T::zero(); n_max + 1];
        probs[lo_idx] = T::one() - frac;
        probs[lo_idx + 1] = frac;
        Ok(Self { probs })
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn probs_mut(&mut self) -> &mut [T] {
        &mut self.probs
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }

    pub fn get(&self, n: usize) -> T {
        self.probs.get(n).copied().unwrap_or_else(T::zero)
    }

    pub fn mass(&self) -> T {
        sum_compensated(self.probs.iter().copied())
    }

    /// First moment `sum n p_n`.
    pub fn mean(&self) -> T {
        sum_compensated(
            self.probs.iter().enumerate().map(|(n, &p)| T::from_usize_lossy(n) * p),
        )
    }

    /// Mass on `{n >= 1}` computed as `1 - p_0`.
    pub fn solvent_fraction(&self) -> T {
        T::one() - self.probs[0]
    }

    /// Cumulative distribution `F_n = sum_{k <= n} p_k`.
    pub fn cdf(&self) -> Vec<T> {
        let mut acc = T::zero();
        self.probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Survival function `1 - F_n = sum_{k > n} p_k`, accumulated from the top.
    pub fn survival(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.probs.len()];
        let mut acc = T::zero();
        for n in (0..self.probs.len()).rev() {
            out[n] = acc;
            acc += self.probs[n];
        }
        out
    }

    /// Zero-padded (or truncated) copy with the given bound.
    pub fn resized(&self, n_max: usize) -> Self {
        let mut probs = self.probs.clone();
        probs.resize(n_max + 1, T::zero());
        Self { probs }
    }

    pub fn scale(&mut self, factor: T) {
        for p in &mut self.probs {
            *p *= factor;
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        Self::from_weights(self.probs.clone())
    }

    pub fn cast<U: Real>(&self) -> WealthPmf<U> {
        WealthPmf { probs: self.probs.iter().map(|p| U::lit(p.as_f64())).collect() }
    }

    fn check_entries(&self) -> Result<()> {
        for (index, &p) in self.probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFiniteState { index, time: f64::NAN });
            }
            if p < T::zero() {
                return Err(Error::NegativeProbability { index, value: p.as_f64() });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_entries()?;
        let mass = self.mass();
        if (mass - T::one()).abs() > T::lit(T::MASS_TOL) {
            return Err(Error::NotNormalized { mass: mass.as_f64() });
        }
        Ok(())
    }
}

/// Geometric law truncated to `0..=n_max`, with the mass it leaves out.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGeometric<T> {
    pub pmf: WealthPmf<T>,
    /// `ratio^(n_max + 1)`, the mass of `{n > n_max}`.
    pub tail_mass: T,
}

/// `p_n = (1 - ratio) ratio^n` for `n <= n_max`, not renormalized.
pub fn geometric_pmf<T: Real>(ratio: T, n_max: usize) -> Result<TruncatedGeometric<T>> {
    if !(ratio >= T::zero() && ratio < T::one()) {
        return Err(Error::param("ratio", format!("geometric ratio must lie in [0, 1), got {ratio}")));
    }
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = T::one() - ratio;
    for _ in 0..=n_max {
        probs.push(p);
        p *= ratio;
    }
    let tail_mass = ratio.powi((n_max + 1).min(i32::MAX as usize) as i32);
    Ok(TruncatedGeometric { pmf: WealthPmf::from_raw(probs), tail_mass })
}

/// Convex combination `n_c * pc + n_h * ph`.
pub fn mix<T: Real>(pc: &WealthPmf<T>, ph: &WealthPmf<T>, params: &ModelParams<T>) -> Result<WealthPmf<T>> {
    if pc.len() != ph.len() {
        return Err(Error::LengthMismatch { left: pc.len(), right: ph.len() });
    }
    let (n_c, n_h) = (params.n_c(), params.n_h());
    let probs = pc.probs().iter().zip(ph.probs()).map(|(&c, &h)| n_c * c + n_h * h).collect();
    Ok(WealthPmf::from_raw(probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(n_h: f64) -> ModelParams<f64> {
        ModelParams::mean_field(5.0, n_h, 0.3).unwrap()
    }

    #[test]
    fn zero_ratio_is_dirac_at_zero() {
        let g = geometric_pmf(0.0, 10).unwrap();
        assert_eq!(g.pmf, WealthPmf::dirac(0, 10).unwrap());
        assert_eq!(g.tail_mass, 0.0);
    }

    #[test]
    fn half_ratio_small_support() {
        let g = geometric_pmf(0.5, 3).unwrap();
        assert_eq!(g.pmf.probs(), &[0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(g.tail_mass, 0.0625);
        assert_relative_eq!(g.pmf.mass() + g.tail_mass, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn geometric_mean_matches_closed_form() {
        let ratio: f64 = 5.0 / 6.0;
        let g = geometric_pmf(ratio, 500).unwrap();
        assert!((g.pmf.mean() - ratio / (1.0 - ratio)).abs() < 1e-8);
    }

    #[test]
    fn geometric_rejects_ratio_one() {
        assert!(geometric_pmf(1.0, 5).is_err());
        assert!(geometric_pmf(-0.1, 5).is_err());
    }

    #[test]
    fn degenerate_weights_recover_components() {
        let pc = WealthPmf::dirac(0, 2).unwrap();
        let ph = WealthPmf::dirac(2, 2).unwrap();
        assert_eq!(mix(&pc, &ph, &params(1.0)).unwrap(), ph);
        assert_eq!(mix(&pc, &ph, &params(0.0)).unwrap(), pc);
    }

    #[test]
    fn even_mixture_of_diracs() {
        let pc = WealthPmf::dirac(0, 2).unwrap();
        let ph = WealthPmf::dirac(2, 2).unwrap();
        let m = mix(&pc, &ph, &params(0.5)).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.0, 0.5]);
        assert_eq!(m.mean(), 1.0);
    }

    #[test]
    fn mix_length_mismatch() {
        let pc = WealthPmf::<f64>::dirac(0, 2).unwrap();
        let ph = WealthPmf::dirac(0, 3).unwrap();
        assert_eq!(
            mix(&pc, &ph, &params(0.5)).unwrap_err(),
            Error::LengthMismatch { left: 3, right: 4 }
        );
    }

    #[test]
    fn validation_catches_bad_entries() {
        assert!(WealthPmf::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(WealthPmf::new(vec![0.5, 0.6]), Err(Error::NotNormalized { .. })));
        assert!(matches!(
            WealthPmf::new(vec![1.5, -0.5]),
            Err(Error::NegativeProbability { index: 1, .. })
        ));
    }

    #[test]
    fn two_point_hits_fractional_mean() {
        let p = WealthPmf::<f64>::two_point(2.25, 10).unwrap();
        assert_relative_eq!(p.mean(), 2.25, epsilon = 1e-15);
        assert_eq!(WealthPmf::<f64>::two_point(5.0, 10).unwrap(), WealthPmf::dirac(5, 10).unwrap());
    }

    #[test]
    fn survival_complements_cdf() {
        let p = WealthPmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let f = p.cdf();
        let s = p.survival();
        for (a, b) in f.iter().zip(&s) {
            assert_relative_eq!(a + b, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn f32_geometric_is_normalized_up_to_tail() {
        let g = geometric_pmf(0.5f32, 40).unwrap();
        assert!((g.pmf.mass() - 1.0).abs() < 1e-6);
    }
}
