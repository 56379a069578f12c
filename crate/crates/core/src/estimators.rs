//! Effect estimators.
//!
//! The naive inverse-probability contrast ([`horvitz_thompson`]) conditions on
//! the realized neighbor set, which is itself an outcome of treatment, so it
//! is biased whenever edges respond to assignment. The instrumented
//! estimator ([`ValidatedEstimator::mu_hat`]) splits the effect into a
//! per-unit slope, identified through an instrument supported on an
//! always-present anchor subgraph, and a full-treatment exposure total
//! reconstructed by inverse-probability weighting of non-anchor edges. Its
//! guarantees hold only under explicit assumptions, so construction validates
//! all of them and refuses to estimate otherwise.

use serde::Serialize;

use crate::design::{check_probability, KahanSum, TreatmentVector};
use crate::error::{AssumptionViolation, Error, Result};
use crate::graph::{AnchorSubgraph, EndogenousGraph, RealizedGraph};
use crate::outcomes::{DeclaredBounds, ExposureWeights};

/// Instrument weights over anchor pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum InstrumentSpec {
    /// Equal weight on each of a unit's anchor neighbors.
    UniformOnAnchor,
    /// Explicit (a, r, weight) triples; support must lie inside the anchor.
    Explicit(Vec<(usize, usize, f64)>),
}

/// Estimation configuration: the anchor subgraph, the instrument over it,
/// and the design probability.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub anchor: AnchorSubgraph,
    pub instrument: InstrumentSpec,
    pub p: f64,
    /// Require u >= 0 (needed by the variance envelope, not by unbiasedness).
    pub require_nonnegative_instrument: bool,
}

impl EstimatorConfig {
    pub fn new(anchor: AnchorSubgraph, instrument: InstrumentSpec, p: f64) -> Self {
        Self { anchor, instrument, p, require_nonnegative_instrument: false }
    }

    pub fn with_nonnegative_instrument(mut self) -> Self {
        self.require_nonnegative_instrument = true;
        self
    }
}

/// Per-unit pieces of the instrumented estimate.
#[derive(Clone, Debug, Serialize)]
pub struct UnitEstimate {
    pub beta_hat: f64,
    pub w_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    /// beta_hat * w_hat, plus gamma_hat when present.
    pub contribution: f64,
    /// Declared cap on |beta_hat * w_hat| when envelope constants were given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub product_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateResult {
    pub mu_hat: f64,
    pub per_unit: Vec<UnitEstimate>,
    /// Largest full-treatment neighborhood over analysis units.
    pub d_analysis: usize,
    /// Largest full-treatment degree over randomization units.
    pub d_randomization: usize,
}

/// A configuration that passed every identification check against a concrete
/// graph and weight scheme. All estimator entry points live here, so there is
/// no way to run the instrumented estimator on an unvalidated setup.
#[derive(Clone, Debug)]
pub struct ValidatedEstimator {
    p: f64,
    n_a: usize,
    n_r: usize,
    unipartite: bool,
    weights: ExposureWeights,
    anchor: AnchorSubgraph,
    /// Normalized instrument per unit: (r, u_ar) with sum_r u_ar = 1.
    instrument: Vec<Vec<(usize, f64)>>,
    /// p(1-p) * sum_r w_ar u_ar per unit.
    covariance: Vec<f64>,
    /// sum over a unit's anchor pairs of w_ar.
    anchor_weight_sum: Vec<f64>,
    degrees_full: Vec<usize>,
    d_analysis: usize,
    d_randomization: usize,
    /// Sorted union of instrument supports; the only coordinates the
    /// slope statistics can see.
    instrument_coords: Vec<usize>,
    bounds: Option<DeclaredBounds>,
}

impl ValidatedEstimator {
    pub fn new(
        graph: &EndogenousGraph,
        weights: &ExposureWeights,
        config: &EstimatorConfig,
    ) -> Result<Self> {
        check_probability(config.p)?;
        let (n_a, n_r) = (graph.n_a(), graph.n_r());
        if config.anchor.n_a() != n_a || config.anchor.n_r() != n_r {
            return Err(Error::Dimension(format!(
                "anchor is {} x {}, graph is {} x {}",
                config.anchor.n_a(),
                config.anchor.n_r(),
                n_a,
                n_r
            )));
        }
        let unipartite = graph.is_unipartite();

        // Every edge must respond only to its own randomization unit. The
        // check reads minimal dependency sets, so loosely declared rules pass
        // when their tables are genuinely own-unit.
        for rule in graph.rule().iter() {
            let minimal = rule.minimal_dependencies();
            if minimal.iter().any(|&d| d != rule.r()) {
                return Err(AssumptionViolation::NotRDriven { a: rule.a(), r: rule.r() }.into());
            }
        }

        // Anchor pairs must be present under every assignment, and must carry
        // usable exposure weight except on the self diagonal.
        for (a, r) in config.anchor.pairs() {
            match graph.rule().rule(a, r) {
                None => return Err(AssumptionViolation::AnchorNotInGraph { a, r }.into()),
                Some(rule) if !rule.is_always_on() => {
                    return Err(AssumptionViolation::AnchorNotInvariant { a, r }.into());
                }
                Some(_) => {}
            }
            if unipartite && a == r {
                if weights.get(a, r) != 0.0 {
                    return Err(AssumptionViolation::NonzeroDiagonal { unit: a }.into());
                }
            } else if weights.get(a, r) == 0.0 {
                return Err(AssumptionViolation::ZeroAnchorWeight { a, r }.into());
            }
        }
        if unipartite {
            for a in 0..n_a {
                if weights.get(a, a) != 0.0 {
                    return Err(AssumptionViolation::NonzeroDiagonal { unit: a }.into());
                }
            }
        }

        // Build the normalized instrument.
        let mut instrument: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_a];
        match &config.instrument {
            InstrumentSpec::UniformOnAnchor => {
                for (a, loadings) in instrument.iter_mut().enumerate() {
                    let support: Vec<usize> = config
                        .anchor
                        .unit(a)
                        .iter()
                        .copied()
                        .filter(|&r| !(unipartite && r == a))
                        .collect();
                    if support.is_empty() {
                        return Err(AssumptionViolation::EmptyInstrument { unit: a }.into());
                    }
                    let u = 1.0 / support.len() as f64;
                    *loadings = support.into_iter().map(|r| (r, u)).collect();
                }
            }
            InstrumentSpec::Explicit(entries) => {
                for &(a, r, value) in entries {
                    if a >= n_a || r >= n_r {
                        return Err(Error::Dimension(format!(
                            "instrument entry ({a}, {r}) outside {n_a} x {n_r}"
                        )));
                    }
                    if !value.is_finite() {
                        return Err(Error::Parameter(format!(
                            "instrument weight on ({a}, {r}) is not finite"
                        )));
                    }
                    if value == 0.0 {
                        continue;
                    }
                    if unipartite && a == r {
                        return Err(AssumptionViolation::NonzeroDiagonal { unit: a }.into());
                    }
                    if !config.anchor.contains(a, r) {
                        return Err(AssumptionViolation::InstrumentOffAnchor { a, r }.into());
                    }
                    if config.require_nonnegative_instrument && value < 0.0 {
                        return Err(AssumptionViolation::NegativeInstrument { a, r }.into());
                    }
                    instrument[a].push((r, value));
                }
                for (a, entries) in instrument.iter_mut().enumerate() {
                    if entries.is_empty() {
                        return Err(AssumptionViolation::EmptyInstrument { unit: a }.into());
                    }
                    entries.sort_by_key(|&(r, _)| r);
                    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                        return Err(Error::Parameter(format!(
                            "duplicate instrument entry for analysis unit {a}"
                        )));
                    }
                    let total: f64 = entries.iter().map(|&(_, u)| u).sum();
                    if total == 0.0 {
                        return Err(Error::Parameter(format!(
                            "instrument weights for analysis unit {a} sum to zero and cannot be normalized"
                        )));
                    }
                    for entry in entries.iter_mut() {
                        entry.1 /= total;
                    }
                }
            }
        }

        // Instrument relevance: the slope denominator per unit.
        let pq = config.p * (1.0 - config.p);
        let mut covariance = Vec::with_capacity(n_a);
        for (a, entries) in instrument.iter().enumerate() {
            let mut acc = KahanSum::new();
            for &(r, u) in entries {
                acc.add(weights.get(a, r) * u);
            }
            let cov = pq * acc.value();
            if cov == 0.0 {
                return Err(Error::ZeroCovariance { unit: a });
            }
            if !cov.is_finite() {
                return Err(Error::Parameter(format!(
                    "instrument covariance for unit {a} is not finite"
                )));
            }
            covariance.push(cov);
        }

        let anchor_weight_sum = (0..n_a)
            .map(|a| {
                let mut acc = KahanSum::new();
                for &r in config.anchor.unit(a) {
                    acc.add(weights.get(a, r));
                }
                acc.value()
            })
            .collect();

        let full = graph.realize_full();
        let degrees_full: Vec<usize> = (0..n_a).map(|a| full.degree(a)).collect();
        let d_analysis = full.max_analysis_degree();
        let d_randomization = full.max_randomization_degree();

        let mut instrument_coords: Vec<usize> = instrument
            .iter()
            .flat_map(|entries| entries.iter().map(|&(r, _)| r))
            .collect();
        instrument_coords.sort_unstable();
        instrument_coords.dedup();

        Ok(Self {
            p: config.p,
            n_a,
            n_r,
            unipartite,
            weights: weights.clone(),
            anchor: config.anchor.clone(),
            instrument,
            covariance,
            anchor_weight_sum,
            degrees_full,
            d_analysis,
            d_randomization,
            instrument_coords,
            bounds: None,
        })
    }

    /// Attach declared envelope constants; per-unit product caps are then
    /// reported alongside estimates.
    pub fn with_bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn is_unipartite(&self) -> bool {
        self.unipartite
    }

    pub fn anchor(&self) -> &AnchorSubgraph {
        &self.anchor
    }

    pub fn instrument_covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// sum of w_ar over each unit's anchor pairs.
    pub fn anchor_weight_sums(&self) -> &[f64] {
        &self.anchor_weight_sum
    }

    pub fn d_analysis(&self) -> usize {
        self.d_analysis
    }

    pub fn d_randomization(&self) -> usize {
        self.d_randomization
    }

    /// The randomization units the instrument can see.
    pub fn instrument_coords(&self) -> &[usize] {
        &self.instrument_coords
    }

    fn check_t(&self, t: &TreatmentVector) -> Result<()> {
        if t.len() != self.n_r {
            return Err(Error::Dimension(format!(
                "assignment has {} entries, estimator expects {}",
                t.len(),
                self.n_r
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n_a {
            return Err(Error::Dimension(format!(
                "outcome vector has {} entries, estimator expects {}",
                y.len(),
                self.n_a
            )));
        }
        Ok(())
    }

    /// Instrumented exposure z_a = sum_r u_ar t_r.
    pub fn instrument_exposure(&self, t: &TreatmentVector) -> Result<Vec<f64>> {
        self.check_t(t)?;
        Ok(self
            .instrument
            .iter()
            .map(|entries| entries.iter().map(|&(r, u)| u * t.value(r)).sum())
            .collect())
    }

    /// E[z_a] under the design; equal to p for every unit because the
    /// instrument is normalized to total weight one.
    pub fn expected_instrument_exposure(&self) -> Vec<f64> {
        vec![self.p; self.n_a]
    }

    /// Per-unit slope estimate y_a (z_a - E z_a) / Cov(x_a, z_a).
    pub fn beta_hat(&self, y: &[f64], t: &TreatmentVector) -> Result<Vec<f64>> {
        self.check_y(y)?;
        let z = self.instrument_exposure(t)?;
        Ok((0..self.n_a)
            .map(|a| y[a] * (z[a] - self.p) / self.covariance[a])
            .collect())
    }

    /// Full-treatment exposure total, reconstructed as the anchor weight sum
    /// plus inverse-probability-weighted treated non-anchor edges.
    pub fn w_hat(&self, realized: &RealizedGraph, t: &TreatmentVector) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if realized.n_a() != self.n_a || realized.n_r() != self.n_r {
            return Err(Error::Dimension(format!(
                "realized graph is {} x {}, estimator expects {} x {}",
                realized.n_a(),
                realized.n_r(),
                self.n_a,
                self.n_r
            )));
        }
        Ok((0..self.n_a)
            .map(|a| {
                let mut acc = KahanSum::new();
                acc.add(self.anchor_weight_sum[a]);
                for &r in realized.neighbors(a) {
                    if !self.anchor.contains(a, r) {
                        acc.add(t.value(r) * self.weights.get(a, r) / self.p);
                    }
                }
                acc.value()
            })
            .collect())
    }

    /// Same quantity summed literally over every pair:
    /// sum_r [t_r w_ar (e_ar - c_ar)/p + w_ar c_ar]. Kept as an independent
    /// code path; tests require it to agree with [`Self::w_hat`].
    pub fn w_hat_direct(&self, graph: &EndogenousGraph, t: &TreatmentVector) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if graph.n_a() != self.n_a || graph.n_r() != self.n_r {
            return Err(Error::Dimension("graph does not match estimator".into()));
        }
        Ok((0..self.n_a)
            .map(|a| {
                let mut acc = KahanSum::new();
                for r in 0..self.n_r {
                    let e = graph
                        .rule()
                        .rule(a, r)
                        .map(|rule| f64::from(rule.eval(t)))
                        .unwrap_or(0.0);
                    let c = f64::from(self.anchor.contains(a, r));
                    let w = self.weights.get(a, r);
                    acc.add(t.value(r) * w * (e - c) / self.p + w * c);
                }
                acc.value()
            })
            .collect())
    }

    /// Inverse-probability contrast of the unit's own treatment; only defined
    /// when analysis and randomization units coincide.
    pub fn gamma_hat(&self, y: &[f64], t: &TreatmentVector) -> Result<Vec<f64>> {
        if !self.unipartite {
            return Err(Error::Parameter(
                "own-treatment contrast requires analysis and randomization units to coincide"
                    .into(),
            ));
        }
        self.check_y(y)?;
        self.check_t(t)?;
        Ok((0..self.n_a)
            .map(|a| {
                t.value(a) * y[a] / self.p - (1.0 - t.value(a)) * y[a] / (1.0 - self.p)
            })
            .collect())
    }

    /// The instrumented effect estimate: mean over units of
    /// beta_hat * w_hat, plus the own-treatment contrast in unipartite mode.
    pub fn mu_hat(
        &self,
        realized: &RealizedGraph,
        y: &[f64],
        t: &TreatmentVector,
    ) -> Result<EstimateResult> {
        let beta = self.beta_hat(y, t)?;
        let w = self.w_hat(realized, t)?;
        let gamma = if self.unipartite { Some(self.gamma_hat(y, t)?) } else { None };

        let bound_factor = self.bounds.map(|b| {
            b.outcome_bound * b.weight_high
                / (self.p * self.p * (1.0 - self.p) * b.weight_low)
        });

        let mut acc = KahanSum::new();
        let mut per_unit = Vec::with_capacity(self.n_a);
        for a in 0..self.n_a {
            let g = gamma.as_ref().map(|g| g[a]);
            let contribution = beta[a] * w[a] + g.unwrap_or(0.0);
            acc.add(contribution);
            per_unit.push(UnitEstimate {
                beta_hat: beta[a],
                w_hat: w[a],
                gamma_hat: g,
                contribution,
                product_bound: bound_factor.map(|f| f * self.degrees_full[a] as f64),
            });
        }
        Ok(EstimateResult {
            mu_hat: acc.value() / self.n_a as f64,
            per_unit,
            d_analysis: self.d_analysis,
            d_randomization: self.d_randomization,
        })
    }

    /// Sharp-null statistic: mean over units of beta_hat times the unit's
    /// anchor weight sum. Depends on the assignment only through z.
    pub fn mu_tilde(&self, y: &[f64], t: &TreatmentVector) -> Result<f64> {
        let beta = self.beta_hat(y, t)?;
        let mut acc = KahanSum::new();
        for (b, w) in beta.iter().zip(&self.anchor_weight_sum) {
            acc.add(b * w);
        }
        Ok(acc.value() / self.n_a as f64)
    }

    /// Per-unit constants c_a with mu_tilde = mean_a c_a (z_a - p); the
    /// resampling fast path. Tests pin this against the estimator route.
    pub(crate) fn mu_tilde_consts(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        Ok((0..self.n_a)
            .map(|a| y[a] * self.anchor_weight_sum[a] / self.covariance[a])
            .collect())
    }

    /// Evaluate mu_tilde from precomputed constants and an assignment of the
    /// instrument coordinates only.
    pub(crate) fn mu_tilde_from_consts(&self, consts: &[f64], bit_of: impl Fn(usize) -> f64) -> f64 {
        let mut acc = KahanSum::new();
        for (a, entries) in self.instrument.iter().enumerate() {
            let z: f64 = entries.iter().map(|&(r, u)| u * bit_of(r)).sum();
            acc.add(consts[a] * (z - self.p));
        }
        acc.value() / self.n_a as f64
    }
}

/// The naive inverse-probability contrast conditioning on the realized
/// neighbor set: mean_a y_a [ prod_{r in R_a} t_r / p^|R_a| minus
/// prod_{r in R_a} (1 - t_r) / (1-p)^|R_a| ], zero for units with no
/// realized neighbors. Needs no identification assumptions; on graphs whose
/// edges respond to assignment it is biased, which is the point.
pub fn horvitz_thompson(
    realized: &RealizedGraph,
    y: &[f64],
    t: &TreatmentVector,
    p: f64,
) -> Result<f64> {
    check_probability(p)?;
    if y.len() != realized.n_a() {
        return Err(Error::Dimension(format!(
            "outcome vector has {} entries, graph has {} analysis units",
            y.len(),
            realized.n_a()
        )));
    }
    if t.len() != realized.n_r() {
        return Err(Error::Dimension(format!(
            "assignment has {} entries, graph has {} randomization units",
            t.len(),
            realized.n_r()
        )));
    }
    let mut acc = KahanSum::new();
    for (a, &y_a) in y.iter().enumerate() {
        let neighbors = realized.neighbors(a);
        if neighbors.is_empty() {
            continue;
        }
        let all_treated = neighbors.iter().all(|&r| t.treated(r));
        let all_control = neighbors.iter().all(|&r| !t.treated(r));
        let k = neighbors.len() as i32;
        let mut bracket = 0.0;
        if all_treated {
            bracket += p.powi(k).recip();
        }
        if all_control {
            bracket -= (1.0 - p).powi(k).recip();
        }
        acc.add(y_a * bracket);
    }
    Ok(acc.value() / realized.n_a() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{exact_expectation, exact_expectation_checked, enumerate_assignments};
    use crate::graph::{EdgeRule, EdgeRuleKind, PairRule, UnitSets, VerifyMode};
    use crate::outcomes::{evaluate, true_tte, ExposureWeights, OutcomeModel};

    /// Two analysis units, three randomization units. Always-on anchor edges
    /// (0,0) and (1,1); treated-created edges (0,2) and (1,2).
    fn anchored_graph() -> EndogenousGraph {
        let units = UnitSets::bipartite(2, 3).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![
                PairRule::constant(0, 0, true),
                PairRule::own_unit(0, 2, false, true),
                PairRule::constant(1, 1, true),
                PairRule::own_unit(1, 2, false, true),
            ],
        )
        .unwrap();
        EndogenousGraph::new(units, rule, &[(0, 0), (1, 1)]).unwrap()
    }

    fn anchor() -> AnchorSubgraph {
        AnchorSubgraph::new(2, 3, &[(0, 0), (1, 1)]).unwrap()
    }

    fn uniform_config(p: f64) -> EstimatorConfig {
        EstimatorConfig::new(anchor(), InstrumentSpec::UniformOnAnchor, p)
    }

    #[test]
    fn beta_hat_matches_closed_form_under_full_treatment() {
        let g = anchored_graph();
        let w = ExposureWeights::uniform();
        let est = ValidatedEstimator::new(&g, &w, &uniform_config(0.5)).unwrap();
        let y = vec![3.0, -2.0];
        let t = TreatmentVector::ones(3);
        // z = 1 under full treatment, so beta_hat = y (1 - p) / cov.
        let beta = est.beta_hat(&y, &t).unwrap();
        let cov = est.instrument_covariance();
        for a in 0..2 {
            assert!((beta[a] - y[a] * 0.5 / cov[a]).abs() < 1e-15);
        }
    }

    #[test]
    fn instrument_covariance_single_anchor_pair() {
        // One unit, one always-on pair, w = u = 1, p = 1/2: cov = 1/4.
        let units = UnitSets::bipartite(1, 1).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![PairRule::constant(0, 0, true)],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let anchor = AnchorSubgraph::new(1, 1, &[(0, 0)]).unwrap();
        let config = EstimatorConfig::new(anchor, InstrumentSpec::UniformOnAnchor, 0.5);
        let est = ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &config).unwrap();
        assert!((est.instrument_covariance()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn instrument_covariance_matches_enumeration() {
        // Validated closed form p(1-p) sum w u against the exhaustive
        // covariance of (x_a, z_a).
        let g = anchored_graph();
        let w = ExposureWeights::per_unit(vec![2.0, 0.5]).unwrap();
        for &p in &[0.2, 0.5, 0.8] {
            let est = ValidatedEstimator::new(&g, &w, &uniform_config(p)).unwrap();
            for a in 0..2 {
                let cov_direct = crate::design::exact_covariance(
                    3,
                    p,
                    |t| {
                        let realized = g.realize(t).unwrap();
                        crate::outcomes::exposure(&realized, t, &w).unwrap()[a]
                    },
                    |t| est.instrument_exposure(t).unwrap()[a],
                )
                .unwrap();
                assert!(
                    (cov_direct - est.instrument_covariance()[a]).abs() < 1e-12,
                    "p={p} a={a}"
                );
            }
        }
    }

    #[test]
    fn beta_hat_is_invariant_to_instrument_scaling() {
        let g = anchored_graph();
        let w = ExposureWeights::uniform();
        let y = vec![1.5, -0.5];
        let base = EstimatorConfig::new(
            anchor(),
            InstrumentSpec::Explicit(vec![(0, 0, 1.0), (1, 1, 1.0)]),
            0.3,
        );
        let scaled = EstimatorConfig::new(
            anchor(),
            InstrumentSpec::Explicit(vec![(0, 0, 7.0), (1, 1, 0.2)]),
            0.3,
        );
        let est_a = ValidatedEstimator::new(&g, &w, &base).unwrap();
        let est_b = ValidatedEstimator::new(&g, &w, &scaled).unwrap();
        for (t, _) in enumerate_assignments(3, 0.3).unwrap() {
            let ba = est_a.beta_hat(&y, &t).unwrap();
            let bb = est_b.beta_hat(&y, &t).unwrap();
            for a in 0..2 {
                assert!((ba[a] - bb[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn w_hat_decomposition_agrees_with_direct_formula() {
        let g = anchored_graph();
        let w = ExposureWeights::per_unit(vec![1.5, 0.75]).unwrap();
        let est = ValidatedEstimator::new(&g, &w, &uniform_config(0.4)).unwrap();
        for (t, _) in enumerate_assignments(3, 0.4).unwrap() {
            let realized = g.realize(&t).unwrap();
            let fast = est.w_hat(&realized, &t).unwrap();
            let direct = est.w_hat_direct(&g, &t).unwrap();
            for a in 0..2 {
                assert!((fast[a] - direct[a]).abs() < 1e-12, "t={t} a={a}");
            }
        }
    }

    #[test]
    fn w_hat_is_unbiased_for_full_treatment_exposure_total() {
        let g = anchored_graph();
        let w = ExposureWeights::per_unit(vec![1.5, 0.75]).unwrap();
        let est = ValidatedEstimator::new(&g, &w, &uniform_config(0.25)).unwrap();
        let full = g.realize_full();
        for a in 0..2 {
            let expected = exact_expectation_checked(3, 0.25, |t| {
                let realized = g.realize(t)?;
                Ok(est.w_hat(&realized, t)?[a])
            })
            .unwrap();
            let want: f64 = full.neighbors(a).iter().map(|&r| w.get(a, r)).sum();
            assert!((expected - want).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn mu_hat_is_unbiased_on_a_small_instance() {
        let g = anchored_graph();
        let weights = ExposureWeights::per_unit(vec![1.0, 2.0]).unwrap();
        let model = OutcomeModel::new(
            vec![0.4, -1.1],
            vec![1.0, -0.5],
            weights.clone(),
        )
        .unwrap();
        let truth = true_tte(&g, &model).unwrap();
        for &p in &[0.2, 0.5, 0.8] {
            let est = ValidatedEstimator::new(&g, &weights, &uniform_config(p)).unwrap();
            let expected = exact_expectation_checked(3, p, |t| {
                let realized = g.realize(t)?;
                let y = evaluate(&model, &realized, t)?;
                Ok(est.mu_hat(&realized, &y, t)?.mu_hat)
            })
            .unwrap();
            assert!((expected - truth).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn slope_and_exposure_total_are_uncorrelated() {
        let g = anchored_graph();
        let weights = ExposureWeights::uniform();
        let model =
            OutcomeModel::new(vec![0.7, 0.1], vec![0.9, 1.4], weights.clone()).unwrap();
        let est = ValidatedEstimator::new(&g, &weights, &uniform_config(0.35)).unwrap();
        for a in 0..2 {
            let cov = crate::design::exact_covariance(
                3,
                0.35,
                |t| {
                    let realized = g.realize(t).unwrap();
                    let y = evaluate(&model, &realized, t).unwrap();
                    est.beta_hat(&y, t).unwrap()[a]
                },
                |t| {
                    let realized = g.realize(t).unwrap();
                    est.w_hat(&realized, t).unwrap()[a]
                },
            )
            .unwrap();
            assert!(cov.abs() < 1e-12, "a={a} cov={cov}");
        }
    }

    #[test]
    fn estimate_is_local_to_full_treatment_neighborhoods() {
        // Unit 0 sees only r0 and r2; flipping r1 must not move its pieces.
        let g = anchored_graph();
        let weights = ExposureWeights::uniform();
        let model =
            OutcomeModel::new(vec![0.2, 0.3], vec![1.0, 1.0], weights.clone()).unwrap();
        let est = ValidatedEstimator::new(&g, &weights, &uniform_config(0.5)).unwrap();
        for (t, _) in enumerate_assignments(3, 0.5).unwrap() {
            let twin =
                TreatmentVector::from_bits(vec![t.bit(0), 1 - t.bit(1), t.bit(2)]).unwrap();
            let (ra, rb) = (g.realize(&t).unwrap(), g.realize(&twin).unwrap());
            let (ya, yb) = (
                evaluate(&model, &ra, &t).unwrap(),
                evaluate(&model, &rb, &twin).unwrap(),
            );
            let ea = est.mu_hat(&ra, &ya, &t).unwrap();
            let eb = est.mu_hat(&rb, &yb, &twin).unwrap();
            assert_eq!(ea.per_unit[0].contribution, eb.per_unit[0].contribution);
        }
    }

    #[test]
    fn mu_hat_equals_mean_of_unit_contributions() {
        let g = anchored_graph();
        let weights = ExposureWeights::uniform();
        let est = ValidatedEstimator::new(&g, &weights, &uniform_config(0.5)).unwrap();
        let t = TreatmentVector::parse_bits("101").unwrap();
        let realized = g.realize(&t).unwrap();
        let y = vec![2.0, -1.0];
        let result = est.mu_hat(&realized, &y, &t).unwrap();
        let mean: f64 =
            result.per_unit.iter().map(|u| u.contribution).sum::<f64>() / 2.0;
        assert!((result.mu_hat - mean).abs() < 1e-15);
        assert_eq!(result.d_analysis, 2);
        assert_eq!(result.d_randomization, 2);
    }

    #[test]
    fn mu_tilde_routes_agree() {
        let g = anchored_graph();
        let weights = ExposureWeights::per_unit(vec![1.0, 3.0]).unwrap();
        let est = ValidatedEstimator::new(&g, &weights, &uniform_config(0.45)).unwrap();
        let y = vec![0.8, -2.5];
        let consts = est.mu_tilde_consts(&y).unwrap();
        for (t, _) in enumerate_assignments(3, 0.45).unwrap() {
            let via_estimator = est.mu_tilde(&y, &t).unwrap();
            let via_consts = est.mu_tilde_from_consts(&consts, |r| t.value(r));
            assert!((via_estimator - via_consts).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_cross_unit_edges() {
        let units = UnitSets::bipartite(1, 2).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::SetDriven,
            &units,
            vec![
                PairRule::constant(0, 0, true),
                PairRule::new(0, 1, vec![0], vec![0, 1]).unwrap(),
            ],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let anchor = AnchorSubgraph::new(1, 2, &[(0, 0)]).unwrap();
        let config = EstimatorConfig::new(anchor, InstrumentSpec::UniformOnAnchor, 0.5);
        let err = ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &config).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::NotRDriven { a: 0, r: 1 })
        ));
    }

    #[test]
    fn validation_rejects_non_invariant_anchor() {
        let g = anchored_graph();
        let anchor = AnchorSubgraph::new(2, 3, &[(0, 0), (1, 2)]).unwrap();
        let config = EstimatorConfig::new(anchor, InstrumentSpec::UniformOnAnchor, 0.5);
        let err = ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &config).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::AnchorNotInvariant { a: 1, r: 2 })
        ));
    }

    #[test]
    fn validation_rejects_instruments_outside_anchor_and_empty_support() {
        let g = anchored_graph();
        let weights = ExposureWeights::uniform();

        let off = EstimatorConfig::new(
            anchor(),
            InstrumentSpec::Explicit(vec![(0, 0, 1.0), (1, 0, 1.0)]),
            0.5,
        );
        let err = ValidatedEstimator::new(&g, &weights, &off).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::InstrumentOffAnchor { a: 1, r: 0 })
        ));

        let empty = EstimatorConfig::new(
            anchor(),
            InstrumentSpec::Explicit(vec![(0, 0, 1.0)]),
            0.5,
        );
        let err = ValidatedEstimator::new(&g, &weights, &empty).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::EmptyInstrument { unit: 1 })
        ));
    }

    #[test]
    fn validation_rejects_zero_weight_and_zero_covariance() {
        let g = anchored_graph();
        let zero_w = ExposureWeights::per_unit(vec![0.0, 1.0]).unwrap();
        let err = ValidatedEstimator::new(&g, &zero_w, &uniform_config(0.5)).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::ZeroAnchorWeight { a: 0, r: 0 })
        ));

        // Signed weights orthogonal to the instrument on a two-pair anchor.
        let units = UnitSets::bipartite(1, 2).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![
                PairRule::constant(0, 0, true),
                PairRule::constant(0, 1, true),
            ],
        )
        .unwrap();
        let g2 = EndogenousGraph::new(units, rule, &[]).unwrap();
        let anchor2 = AnchorSubgraph::new(1, 2, &[(0, 0), (0, 1)]).unwrap();
        let w2 = ExposureWeights::dense(1, 2, vec![1.0, -1.0]).unwrap();
        let config2 = EstimatorConfig::new(anchor2, InstrumentSpec::UniformOnAnchor, 0.5);
        let err = ValidatedEstimator::new(&g2, &w2, &config2).unwrap_err();
        assert!(matches!(err, Error::ZeroCovariance { unit: 0 }));
    }

    #[test]
    fn nonnegativity_is_enforced_only_on_request() {
        let units = UnitSets::bipartite(1, 2).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![
                PairRule::constant(0, 0, true),
                PairRule::constant(0, 1, true),
            ],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let anchor = AnchorSubgraph::new(1, 2, &[(0, 0), (0, 1)]).unwrap();
        let signed = InstrumentSpec::Explicit(vec![(0, 0, 2.0), (0, 1, -0.5)]);
        let plain = EstimatorConfig::new(anchor.clone(), signed.clone(), 0.5);
        assert!(ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &plain).is_ok());
        let strict = EstimatorConfig::new(anchor, signed, 0.5).with_nonnegative_instrument();
        let err =
            ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &strict).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::NegativeInstrument { a: 0, r: 1 })
        ));
    }

    #[test]
    fn unipartite_diagonal_rules() {
        let units = UnitSets::unipartite(2).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![
                PairRule::constant(0, 1, true),
                PairRule::constant(1, 0, true),
            ],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let anchor = AnchorSubgraph::new(2, 2, &[(0, 1), (1, 0)]).unwrap();

        // Nonzero diagonal weights are rejected.
        let config = EstimatorConfig::new(anchor.clone(), InstrumentSpec::UniformOnAnchor, 0.5);
        let err = ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &config).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption(AssumptionViolation::NonzeroDiagonal { .. })
        ));

        // Zero-diagonal weights pass, and gamma_hat works.
        let w = ExposureWeights::uniform().with_zero_diagonal();
        let est = ValidatedEstimator::new(&g, &w, &config).unwrap();
        let y = vec![4.0, 6.0];
        let t = TreatmentVector::parse_bits("10").unwrap();
        let gh = est.gamma_hat(&y, &t).unwrap();
        assert_eq!(gh, vec![8.0, -12.0]);

        // A diagonal anchor pair is tolerated but carries no instrument.
        let anchor_diag = AnchorSubgraph::new(2, 2, &[(0, 0), (0, 1), (1, 0)]).unwrap();
        let config_diag = EstimatorConfig::new(anchor_diag, InstrumentSpec::UniformOnAnchor, 0.5);
        let est_diag = ValidatedEstimator::new(&g, &w, &config_diag).unwrap();
        assert_eq!(est_diag.instrument_coords(), &[0, 1]);
        assert!((est_diag.instrument_covariance()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gamma_hat_refuses_bipartite_mode() {
        let g = anchored_graph();
        let est =
            ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &uniform_config(0.5))
                .unwrap();
        let err = est
            .gamma_hat(&[1.0, 1.0], &TreatmentVector::zeros(3))
            .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn unipartite_estimator_is_unbiased_with_direct_effects() {
        let units = UnitSets::unipartite(3).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![
                PairRule::constant(0, 1, true),
                PairRule::constant(1, 2, true),
                PairRule::constant(2, 0, true),
                PairRule::own_unit(0, 2, false, true),
            ],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let weights = ExposureWeights::uniform().with_zero_diagonal();
        let model = OutcomeModel::new(
            vec![0.5, -0.3, 0.2],
            vec![1.2, 0.4, -0.9],
            weights.clone(),
        )
        .unwrap()
        .with_gamma(vec![0.7, -1.0, 0.25])
        .unwrap();
        let anchor = AnchorSubgraph::new(3, 3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let config = EstimatorConfig::new(anchor, InstrumentSpec::UniformOnAnchor, 0.4);
        let est = ValidatedEstimator::new(&g, &weights, &config).unwrap();
        let truth = true_tte(&g, &model).unwrap();
        let expected = exact_expectation_checked(3, 0.4, |t| {
            let realized = g.realize(t)?;
            let y = evaluate(&model, &realized, t)?;
            Ok(est.mu_hat(&realized, &y, t)?.mu_hat)
        })
        .unwrap();
        assert!((expected - truth).abs() < 1e-12, "want {truth}, got {expected}");
    }

    #[test]
    fn naive_contrast_on_single_created_edge() {
        // One unit whose only edge appears with treatment: the naive contrast
        // is y/p when treated and 0 otherwise, so its expectation is y even
        // though the true contrast of potential outcomes is 0.
        let units = UnitSets::bipartite(1, 1).unwrap();
        let rule = EdgeRule::new(
            EdgeRuleKind::RDriven,
            &units,
            vec![PairRule::own_unit(0, 0, false, true)],
        )
        .unwrap();
        let g = EndogenousGraph::new(units, rule, &[]).unwrap();
        let y = vec![1.0];
        let treated = TreatmentVector::ones(1);
        let control = TreatmentVector::zeros(1);
        let ht_treated =
            horvitz_thompson(&g.realize(&treated).unwrap(), &y, &treated, 0.5).unwrap();
        let ht_control =
            horvitz_thompson(&g.realize(&control).unwrap(), &y, &control, 0.5).unwrap();
        assert_eq!(ht_treated, 2.0);
        assert_eq!(ht_control, 0.0);
        let mean = exact_expectation(1, 0.5, |t| {
            horvitz_thompson(&g.realize(t).unwrap(), &y, t, 0.5).unwrap()
        })
        .unwrap();
        assert!((mean - 1.0).abs() < 1e-15);
    }

    #[test]
    fn naive_contrast_handles_isolated_units_and_matches_by_hand_values() {
        let g = anchored_graph();
        let y = vec![5.0, 7.0];
        // t = 100: unit 0 sees {r0} treated -> +5/0.5; unit 1 sees {r1}
        // control -> -7/0.5; mean over 2 units.
        let t = TreatmentVector::parse_bits("100").unwrap();
        let ht = horvitz_thompson(&g.realize(&t).unwrap(), &y, &t, 0.5).unwrap();
        assert!((ht - (10.0 - 14.0) / 2.0).abs() < 1e-15);

        // Mixed neighborhood zeroes the bracket.
        let t = TreatmentVector::parse_bits("011").unwrap();
        let realized = g.realize(&t).unwrap();
        assert_eq!(realized.neighbors(0), &[0, 2]);
        let ht = horvitz_thompson(&realized, &y, &t, 0.5).unwrap();
        // Unit 0: r0 control, r2 treated -> 0. Unit 1: r1, r2 both treated -> +7/0.25.
        assert!((ht - (7.0 * 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn anchor_must_be_verified_not_assumed() {
        // The validator's always-on requirement agrees with exhaustive
        // verification on the same anchor.
        let g = anchored_graph();
        let bad = AnchorSubgraph::new(2, 3, &[(0, 2)]).unwrap();
        let report = crate::graph::verify_anchor(&g, &bad, VerifyMode::Exhaustive).unwrap();
        assert!(!report.passed);
        let config = EstimatorConfig::new(bad, InstrumentSpec::UniformOnAnchor, 0.5);
        assert!(ValidatedEstimator::new(&g, &ExposureWeights::uniform(), &config).is_err());
    }
}
