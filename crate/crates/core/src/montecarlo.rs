//! Scenario families and the replication engine behind the simulation
//! studies: seeded instance generation with explicit degree control,
//! repeated estimation over fresh assignments, variance-scaling and
//! normality diagnostics, and the canonical bias table.
//!
//! A [`Scenario`] is a recipe, not a dataset: it can be instantiated at any
//! requested number of analysis units, and every random choice flows from
//! the scenario seed through named substreams. Instantiating the same
//! scenario twice at the same size yields the same instance; replicating it
//! twice yields bit-identical summaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::canonical::{
    anchored_variant, naive_case_table, reference_naive_expectation, reference_naive_value,
    CanonicalExample,
};
use crate::design::{
    check_probability, exact_expectation_checked, subseed, substream_rng, BernoulliDesign,
    KahanSum,
};
use crate::error::{Error, Result};
use crate::estimators::{
    horvitz_thompson, EstimatorConfig, InstrumentSpec, ValidatedEstimator,
};
use crate::graph::{
    AnchorSubgraph, EdgeRule, EdgeRuleKind, EndogenousGraph, PairRule, UnitSets,
};
use crate::outcomes::{evaluate, true_tte, DeclaredBounds, ExposureWeights, OutcomeModel};

/// Substream label for instance construction (graph plus coefficients).
const INSTANCE_DOMAIN: u64 = 1;
/// Substream label for replication assignment draws.
const REPLICATION_DOMAIN: u64 = 2;
/// Substream labels for the Monte Carlo mode of the bias table.
const BIAS_NAIVE_DOMAIN: u64 = 3;
const BIAS_ANCHORED_DOMAIN: u64 = 4;

/// Fewest replications the normality diagnostic accepts; the KS distance is
/// meaningless on small samples.
pub const MIN_NORMALITY_REPS: usize = 1000;

/// How exposure weights are produced for generated instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    /// w_ar = 1 on every pair.
    Uniform,
    /// w_ar = 1 / |R_a| under full treatment, so the weight band is (1, 1).
    DegreeNormalized,
}

/// Parametric graph families. Sizes are requested at instantiation time;
/// the family fixes shape, degree caps, and how edges respond to treatment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphFamily {
    /// Bipartite graph where each analysis unit draws `anchor_degree`
    /// always-present neighbors and `created_degree` neighbors whose edges
    /// exist only while the neighbor is treated. Randomization units accept
    /// at most `max_randomization_degree` edges under full treatment.
    BoundedBipartite {
        /// Randomization units per analysis unit; n_r = max(1, round(n_a * r_ratio)).
        r_ratio: f64,
        anchor_degree: usize,
        created_degree: usize,
        max_randomization_degree: usize,
    },
    /// Same construction on a single shared population. Self edges are
    /// always present, carry zero weight, and occupy one slot of each
    /// unit's randomization-degree budget.
    BoundedUnipartite {
        anchor_degree: usize,
        created_degree: usize,
        max_randomization_degree: usize,
    },
    /// Bipartite graph whose edges ignore treatment entirely; every pair is
    /// part of the anchor. Useful as a no-endogeneity control.
    FullyAnchored {
        r_ratio: f64,
        degree: usize,
    },
}

impl GraphFamily {
    fn is_unipartite(&self) -> bool {
        matches!(self, GraphFamily::BoundedUnipartite { .. })
    }
}

/// Coefficient ranges for generated outcome models. Each unit draws its
/// coefficients independently and uniformly from the closed ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeFamily {
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    /// Direct own-treatment effect range; only valid with a unipartite
    /// graph family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_range: Option<[f64; 2]>,
    pub weights: WeightFamily,
}

/// A seeded, size-polymorphic simulation recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub p: f64,
    pub graph: GraphFamily,
    pub outcomes: OutcomeFamily,
}

/// A concrete generated dataset: graph, outcome model, anchor, and the
/// exact estimand implied by the model.
#[derive(Clone, Debug)]
pub struct Instance {
    pub graph: EndogenousGraph,
    pub model: OutcomeModel,
    /// Always-present pairs available to the instrumented estimator.
    pub anchor_pairs: Vec<(usize, usize)>,
    pub p: f64,
    pub true_effect: f64,
}

impl Instance {
    /// Package a graph and model as an instance, computing the estimand.
    pub fn new(
        graph: EndogenousGraph,
        model: OutcomeModel,
        anchor_pairs: Vec<(usize, usize)>,
        p: f64,
    ) -> Result<Self> {
        check_probability(p)?;
        let true_effect = true_tte(&graph, &model)?;
        Ok(Self { graph, model, anchor_pairs, p, true_effect })
    }

    /// Build and validate the instrumented estimator for this instance,
    /// carrying over any declared bounds.
    pub fn estimator(&self) -> Result<ValidatedEstimator> {
        let anchor =
            AnchorSubgraph::new(self.graph.n_a(), self.graph.n_r(), &self.anchor_pairs)?;
        let config =
            EstimatorConfig::new(anchor, InstrumentSpec::UniformOnAnchor, self.p);
        let estimator = ValidatedEstimator::new(&self.graph, &self.model.weights, &config)?;
        Ok(match self.model.bounds {
            Some(bounds) => estimator.with_bounds(bounds),
            None => estimator,
        })
    }
}

/// Which estimator the replication engine runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// The instrumented estimator built on the anchor subgraph.
    AnchorInstrument,
    /// The naive inverse-probability contrast on realized neighborhoods.
    HorvitzThompson,
}

/// Moments and normality diagnostics across replications.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub n_a: usize,
    pub n_r: usize,
    pub n_reps: usize,
    pub true_effect: f64,
    pub mean: f64,
    /// Sample variance across replications (n - 1 denominator).
    pub variance: f64,
    pub bias_vs_truth: f64,
    /// (estimate - true effect) / empirical sd; empty when the empirical
    /// variance is zero.
    pub standardized_samples: Vec<f64>,
    /// Kolmogorov-Smirnov distance of the standardized samples from the
    /// standard normal; absent when the empirical variance is zero.
    pub ks_distance: Option<f64>,
    /// Per-replication estimates in replication order.
    pub estimates: Vec<f64>,
}

impl Scenario {
    /// Check the recipe itself, independent of any requested size.
    pub fn validate(&self) -> Result<()> {
        check_probability(self.p)?;
        match self.graph {
            GraphFamily::BoundedBipartite {
                r_ratio,
                anchor_degree,
                max_randomization_degree,
                ..
            } => {
                check_ratio(r_ratio)?;
                check_anchor_degree(anchor_degree)?;
                if max_randomization_degree == 0 {
                    return Err(Error::Parameter(
                        "max_randomization_degree must be at least 1".into(),
                    ));
                }
            }
            GraphFamily::BoundedUnipartite {
                anchor_degree,
                max_randomization_degree,
                ..
            } => {
                check_anchor_degree(anchor_degree)?;
                if max_randomization_degree < 2 {
                    return Err(Error::Parameter(
                        "unipartite max_randomization_degree must be at least 2; \
                         the always-present self edge occupies one slot"
                            .into(),
                    ));
                }
            }
            GraphFamily::FullyAnchored { r_ratio, degree } => {
                check_ratio(r_ratio)?;
                if degree == 0 {
                    return Err(Error::Parameter("degree must be at least 1".into()));
                }
            }
        }
        check_range("alpha_range", self.outcomes.alpha_range)?;
        check_range("beta_range", self.outcomes.beta_range)?;
        if let Some(range) = self.outcomes.gamma_range {
            check_range("gamma_range", range)?;
            if !self.graph.is_unipartite() {
                return Err(Error::Parameter(
                    "gamma_range requires a unipartite graph family: direct \
                     own-treatment effects need analysis and randomization \
                     units to coincide"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of randomization units the family produces at `n_a`.
    pub fn randomization_size(&self, n_a: usize) -> usize {
        match self.graph {
            GraphFamily::BoundedBipartite { r_ratio, .. }
            | GraphFamily::FullyAnchored { r_ratio, .. } => ratio_size(n_a, r_ratio),
            GraphFamily::BoundedUnipartite { .. } => n_a,
        }
    }

    /// Largest analysis size whose instance stays within `max_n_r`
    /// randomization units; used to keep enumeration oracles feasible.
    pub fn analysis_size_for(&self, max_n_r: usize) -> Result<usize> {
        if max_n_r == 0 {
            return Err(Error::Parameter(
                "need at least one randomization unit".into(),
            ));
        }
        let ratio = match self.graph {
            GraphFamily::BoundedUnipartite { .. } => return Ok(max_n_r),
            GraphFamily::BoundedBipartite { r_ratio, .. }
            | GraphFamily::FullyAnchored { r_ratio, .. } => r_ratio,
        };
        let guess = max_n_r as f64 / ratio;
        if !guess.is_finite() || guess > 1_000_000.0 {
            return Err(Error::Parameter(format!(
                "r_ratio {ratio} needs more than a million analysis units to \
                 reach {max_n_r} randomization units"
            )));
        }
        let mut n_a = guess.floor() as usize + 2;
        while n_a > 1 && ratio_size(n_a, ratio) > max_n_r {
            n_a -= 1;
        }
        if ratio_size(n_a, ratio) > max_n_r {
            return Err(Error::Parameter(format!(
                "every instance of this family uses more than {max_n_r} \
                 randomization units"
            )));
        }
        Ok(n_a)
    }

    /// Generate the instance at `n_a` analysis units. Deterministic in
    /// (seed, n_a); different sizes use unrelated substreams.
    pub fn instantiate(&self, n_a: usize) -> Result<Instance> {
        self.validate()?;
        if n_a == 0 {
            return Err(Error::Parameter("need at least one analysis unit".into()));
        }
        let mut rng = substream_rng(subseed(self.seed, INSTANCE_DOMAIN), n_a as u64);

        let (graph, anchor_pairs) = match self.graph {
            GraphFamily::BoundedBipartite {
                r_ratio,
                anchor_degree,
                created_degree,
                max_randomization_degree,
            } => {
                let n_r = ratio_size(n_a, r_ratio);
                sample_bounded_graph(
                    &mut rng,
                    n_a,
                    n_r,
                    false,
                    anchor_degree,
                    created_degree,
                    max_randomization_degree,
                )?
            }
            GraphFamily::BoundedUnipartite {
                anchor_degree,
                created_degree,
                max_randomization_degree,
            } => sample_bounded_graph(
                &mut rng,
                n_a,
                n_a,
                true,
                anchor_degree,
                created_degree,
                max_randomization_degree,
            )?,
            GraphFamily::FullyAnchored { r_ratio, degree } => {
                let n_r = ratio_size(n_a, r_ratio);
                sample_anchored_graph(&mut rng, n_a, n_r, degree)?
            }
        };

        let alpha: Vec<f64> =
            (0..n_a).map(|_| sample_range(&mut rng, self.outcomes.alpha_range)).collect();
        let beta: Vec<f64> =
            (0..n_a).map(|_| sample_range(&mut rng, self.outcomes.beta_range)).collect();
        let gamma: Option<Vec<f64>> = self.outcomes.gamma_range.map(|range| {
            (0..n_a).map(|_| sample_range(&mut rng, range)).collect()
        });

        let weights = match self.outcomes.weights {
            WeightFamily::Uniform if graph.is_unipartite() => {
                ExposureWeights::uniform().with_zero_diagonal()
            }
            WeightFamily::Uniform => ExposureWeights::uniform(),
            WeightFamily::DegreeNormalized => ExposureWeights::degree_normalized(&graph),
        };

        let bounds = declared_bounds(&graph, &weights, &alpha, &beta, gamma.as_deref(), self.outcomes.weights);
        let mut model = OutcomeModel::new(alpha, beta, weights)?;
        if let Some(gamma) = gamma {
            model = model.with_gamma(gamma)?;
        }
        model = model.with_bounds(bounds);

        Instance::new(graph, model, anchor_pairs, self.p)
    }
}

fn check_ratio(r_ratio: f64) -> Result<()> {
    if !r_ratio.is_finite() || r_ratio <= 0.0 {
        return Err(Error::Parameter(format!(
            "r_ratio must be a positive real, got {r_ratio}"
        )));
    }
    Ok(())
}

fn check_anchor_degree(anchor_degree: usize) -> Result<()> {
    if anchor_degree == 0 {
        return Err(Error::Parameter(
            "anchor_degree must be at least 1: the instrumented estimator \
             needs an always-present pair per unit"
                .into(),
        ));
    }
    Ok(())
}

fn check_range(name: &str, range: [f64; 2]) -> Result<()> {
    if !range[0].is_finite() || !range[1].is_finite() || range[0] > range[1] {
        return Err(Error::Parameter(format!(
            "{name} must be a finite [low, high] pair, got [{}, {}]",
            range[0], range[1]
        )));
    }
    Ok(())
}

fn ratio_size(n_a: usize, r_ratio: f64) -> usize {
    ((n_a as f64 * r_ratio).round() as usize).max(1)
}

fn sample_range(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Randomization coordinates with remaining degree budget, supporting
/// uniform draws of distinct coordinates that respect the budget.
struct CapacityPool {
    remaining: Vec<usize>,
    pool: Vec<usize>,
    slot: Vec<usize>,
}

impl CapacityPool {
    fn new(remaining: Vec<usize>) -> Self {
        let mut pool = Vec::new();
        let mut slot = vec![usize::MAX; remaining.len()];
        for (r, &budget) in remaining.iter().enumerate() {
            if budget > 0 {
                slot[r] = pool.len();
                pool.push(r);
            }
        }
        Self { remaining, pool, slot }
    }

    fn consume(&mut self, r: usize) {
        self.remaining[r] -= 1;
        if self.remaining[r] == 0 {
            let i = self.slot[r];
            let last = self.pool.len() - 1;
            self.pool.swap(i, last);
            self.slot[self.pool[i]] = i;
            self.pool.pop();
            self.slot[r] = usize::MAX;
        }
    }

    /// Draw `k` distinct coordinates with spare budget, never returning
    /// `exclude`. Rejection sampling with a dense fallback near exhaustion,
    /// so the draw stays uniform and terminates.
    fn draw_distinct(
        &mut self,
        rng: &mut ChaCha8Rng,
        k: usize,
        exclude: Option<usize>,
    ) -> Option<Vec<usize>> {
        let excluded_in_pool =
            exclude.map_or(0, |e| usize::from(e < self.slot.len() && self.slot[e] != usize::MAX));
        if self.pool.len() - excluded_in_pool < k {
            return None;
        }
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while chosen.len() < k {
            attempts += 1;
            if attempts > 64 * (k + 4) {
                let mut eligible: Vec<usize> = self
                    .pool
                    .iter()
                    .copied()
                    .filter(|&r| Some(r) != exclude && !chosen.contains(&r))
                    .collect();
                eligible.sort_unstable();
                while chosen.len() < k {
                    if eligible.is_empty() {
                        return None;
                    }
                    let i = rng.random_range(0..eligible.len());
                    chosen.push(eligible.swap_remove(i));
                }
                break;
            }
            let r = self.pool[rng.random_range(0..self.pool.len())];
            if Some(r) == exclude || chosen.contains(&r) {
                continue;
            }
            chosen.push(r);
        }
        for &r in &chosen {
            self.consume(r);
        }
        Some(chosen)
    }
}

/// Sample the degree-capped family: per unit, `anchor_degree` always-on
/// neighbors followed by `created_degree` treatment-created neighbors, all
/// distinct, under a hard cap on full-treatment randomization degree.
fn sample_bounded_graph(
    rng: &mut ChaCha8Rng,
    n_a: usize,
    n_r: usize,
    unipartite: bool,
    anchor_degree: usize,
    created_degree: usize,
    cap: usize,
) -> Result<(EndogenousGraph, Vec<(usize, usize)>)> {
    let per_unit = anchor_degree + created_degree;
    let usable = if unipartite { n_r - 1 } else { n_r };
    if per_unit > usable {
        return Err(Error::Degenerate(format!(
            "each analysis unit needs {per_unit} distinct neighbors but only \
             {usable} randomization units are available (n_a = {n_a}, n_r = {n_r})"
        )));
    }
    // Self edges are always present in unipartite mode and count toward the
    // randomization-degree cap, so they consume one budget slot up front.
    let budget: Vec<usize> =
        (0..n_r).map(|_| if unipartite { cap - 1 } else { cap }).collect();
    let total_budget: usize = budget.iter().sum();
    if n_a * per_unit > total_budget {
        return Err(Error::Degenerate(format!(
            "family needs {} edge slots but the randomization-degree cap {cap} \
             leaves only {total_budget} (n_a = {n_a}, n_r = {n_r})",
            n_a * per_unit
        )));
    }

    let mut pool = CapacityPool::new(budget);
    let mut rules = Vec::with_capacity(n_a * per_unit);
    let mut anchor_pairs = Vec::with_capacity(n_a * anchor_degree);
    for a in 0..n_a {
        let exclude = if unipartite { Some(a) } else { None };
        let Some(coords) = pool.draw_distinct(rng, per_unit, exclude) else {
            return Err(Error::Degenerate(format!(
                "ran out of randomization units with spare capacity while \
                 wiring analysis unit {a} (n_a = {n_a}, n_r = {n_r}, cap = {cap})"
            )));
        };
        let (anchors, created) = coords.split_at(anchor_degree);
        let mut anchors = anchors.to_vec();
        let mut created = created.to_vec();
        anchors.sort_unstable();
        created.sort_unstable();
        for &r in &anchors {
            rules.push(PairRule::constant(a, r, true));
            anchor_pairs.push((a, r));
        }
        for &r in &created {
            rules.push(PairRule::own_unit(a, r, false, true));
        }
    }

    let units =
        if unipartite { UnitSets::unipartite(n_a)? } else { UnitSets::bipartite(n_a, n_r)? };
    let rule = EdgeRule::new(EdgeRuleKind::RDriven, &units, rules)?;
    let mut pre_edges = anchor_pairs.clone();
    if unipartite {
        pre_edges.extend((0..n_a).map(|a| (a, a)));
    }
    let graph = EndogenousGraph::new(units, rule, &pre_edges)?;
    Ok((graph, anchor_pairs))
}

/// Sample the treatment-invariant family: every edge is always present and
/// belongs to the anchor.
fn sample_anchored_graph(
    rng: &mut ChaCha8Rng,
    n_a: usize,
    n_r: usize,
    degree: usize,
) -> Result<(EndogenousGraph, Vec<(usize, usize)>)> {
    if degree > n_r {
        return Err(Error::Degenerate(format!(
            "each analysis unit needs {degree} distinct neighbors but only \
             {n_r} randomization units exist"
        )));
    }
    let mut rules = Vec::with_capacity(n_a * degree);
    let mut anchor_pairs = Vec::with_capacity(n_a * degree);
    for a in 0..n_a {
        let mut coords: Vec<usize> = Vec::with_capacity(degree);
        while coords.len() < degree {
            let r = rng.random_range(0..n_r);
            if !coords.contains(&r) {
                coords.push(r);
            }
        }
        coords.sort_unstable();
        for &r in &coords {
            rules.push(PairRule::constant(a, r, true));
            anchor_pairs.push((a, r));
        }
    }
    let units = UnitSets::bipartite(n_a, n_r)?;
    let rule = EdgeRule::new(EdgeRuleKind::Exogenous, &units, rules)?;
    let graph = EndogenousGraph::new(units, rule, &anchor_pairs)?;
    Ok((graph, anchor_pairs))
}

/// Envelope constants implied by the generated coefficients: the outcome
/// bound is the largest |y| reachable under the linear model, and the
/// weight band is exact for both weight families.
fn declared_bounds(
    graph: &EndogenousGraph,
    weights: &ExposureWeights,
    alpha: &[f64],
    beta: &[f64],
    gamma: Option<&[f64]>,
    family: WeightFamily,
) -> DeclaredBounds {
    let full = graph.realize_full();
    let mut outcome_bound: f64 = 0.0;
    let mut min_degree = usize::MAX;
    let mut max_degree = 0usize;
    for a in 0..graph.n_a() {
        let mut w_full = KahanSum::new();
        let mut degree = 0usize;
        for &r in full.neighbors(a) {
            if weights.has_zero_diagonal() && r == a {
                continue;
            }
            w_full.add(weights.get(a, r));
            degree += 1;
        }
        if degree > 0 {
            min_degree = min_degree.min(degree);
            max_degree = max_degree.max(degree);
        }
        // Exposure is a subset sum of nonnegative weights, so |y| peaks at
        // one of the two endpoints.
        let mut reach = alpha[a].abs().max((alpha[a] + beta[a] * w_full.value()).abs());
        if let Some(gamma) = gamma {
            reach += gamma[a].abs();
        }
        outcome_bound = outcome_bound.max(reach);
    }
    let (weight_low, weight_high) = match family {
        WeightFamily::DegreeNormalized => (1.0, 1.0),
        WeightFamily::Uniform => {
            if max_degree == 0 {
                (1.0, 1.0)
            } else {
                (min_degree as f64, max_degree as f64)
            }
        }
    };
    DeclaredBounds { outcome_bound, weight_low, weight_high }
}

/// Run the chosen estimator on `n_reps` fresh assignments of an existing
/// instance. Replication `i` always sees the same assignment for a given
/// seed, independent of the other replications.
pub fn replicate_instance(
    instance: &Instance,
    seed: u64,
    n_reps: usize,
    choice: EstimatorChoice,
) -> Result<ReplicationSummary> {
    if n_reps < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 replications to report a variance, got {n_reps}"
        )));
    }
    let estimator = match choice {
        EstimatorChoice::AnchorInstrument => Some(instance.estimator()?),
        EstimatorChoice::HorvitzThompson => None,
    };
    let design = BernoulliDesign::new(instance.graph.n_r(), instance.p, seed)?;
    let mut estimates = Vec::with_capacity(n_reps);
    for rep in 0..n_reps {
        let t = design.draw(rep as u64);
        let realized = instance.graph.realize(&t)?;
        let y = evaluate(&instance.model, &realized, &t)?;
        let value = match &estimator {
            Some(est) => est.mu_hat(&realized, &y, &t)?.mu_hat,
            None => horvitz_thompson(&realized, &y, &t, instance.p)?,
        };
        estimates.push(value);
    }
    summarize(instance, n_reps, estimates)
}

fn summarize(
    instance: &Instance,
    n_reps: usize,
    estimates: Vec<f64>,
) -> Result<ReplicationSummary> {
    let mut total = KahanSum::new();
    for &e in &estimates {
        total.add(e);
    }
    let mean = total.value() / n_reps as f64;
    let mut squares = KahanSum::new();
    for &e in &estimates {
        squares.add((e - mean) * (e - mean));
    }
    let variance = squares.value() / (n_reps - 1) as f64;
    let sd = variance.sqrt();
    let standardized: Vec<f64> = if sd > 0.0 {
        estimates.iter().map(|&e| (e - instance.true_effect) / sd).collect()
    } else {
        Vec::new()
    };
    let ks_distance =
        if standardized.is_empty() { None } else { Some(ks_normal(&standardized)?) };
    Ok(ReplicationSummary {
        n_a: instance.graph.n_a(),
        n_r: instance.graph.n_r(),
        n_reps,
        true_effect: instance.true_effect,
        mean,
        variance,
        bias_vs_truth: mean - instance.true_effect,
        standardized_samples: standardized,
        ks_distance,
        estimates,
    })
}

/// Instantiate the scenario at `n_a` and replicate. The assignment stream
/// is independent of the instance stream, so the same scenario replicated
/// at two sizes shares no randomness.
pub fn replicate(
    scenario: &Scenario,
    n_a: usize,
    n_reps: usize,
    choice: EstimatorChoice,
) -> Result<ReplicationSummary> {
    let instance = scenario.instantiate(n_a)?;
    replicate_instance(&instance, subseed(scenario.seed, REPLICATION_DOMAIN), n_reps, choice)
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
pub fn ks_normal(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("KS distance needs a nonempty sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("KS distance needs finite samples".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal parameters are valid");
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let n = sorted.len() as f64;
    let mut distance: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(x);
        distance = distance.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
    }
    Ok(distance)
}

/// KS distance of standardized replication estimates from the standard
/// normal. Refuses small replication counts and degenerate (zero-variance)
/// sampling distributions.
pub fn normality_diagnostic(scenario: &Scenario, n_a: usize, n_reps: usize) -> Result<f64> {
    if n_reps < MIN_NORMALITY_REPS {
        return Err(Error::Parameter(format!(
            "normality diagnostic needs at least {MIN_NORMALITY_REPS} replications, \
             got {n_reps}"
        )));
    }
    let summary = replicate(scenario, n_a, n_reps, EstimatorChoice::AnchorInstrument)?;
    summary.ks_distance.ok_or_else(|| {
        Error::Degenerate(
            "replication estimates have zero empirical variance; standardized \
             samples are undefined"
                .into(),
        )
    })
}

/// One size in a variance-scaling study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n_a: usize,
    pub n_r: usize,
    pub mean: f64,
    pub bias_vs_truth: f64,
    pub variance: f64,
    /// Non-asymptotic variance bound from the declared envelope constants:
    /// M^2 W_h^2 d_A^3 d_R / (p^4 (1-p)^2 W_l^2 n_a).
    pub envelope: f64,
}

/// Variances across sizes with the fitted log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub n_reps: usize,
    pub rows: Vec<ScalingRow>,
    /// OLS slope of log variance on log n_a; -1 is the expected rate at
    /// fixed degree caps.
    pub slope: f64,
}

/// Empirical Var(mu_hat) across increasing sizes, against the declared
/// envelope, with the fitted log-log slope.
pub fn variance_scaling_study(
    scenario: &Scenario,
    sizes: &[usize],
    n_reps: usize,
    choice: EstimatorChoice,
) -> Result<ScalingReport> {
    if sizes.len() < 3 {
        return Err(Error::Parameter(format!(
            "variance scaling needs at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("sizes must be strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    let mut points = Vec::with_capacity(sizes.len());
    for &n_a in sizes {
        let instance = scenario.instantiate(n_a)?;
        let summary = replicate_instance(
            &instance,
            subseed(scenario.seed, REPLICATION_DOMAIN),
            n_reps,
            choice,
        )?;
        if summary.variance <= 0.0 {
            return Err(Error::Degenerate(format!(
                "zero empirical variance at n_a = {n_a}; the log-log fit is undefined"
            )));
        }
        let envelope = variance_envelope(&instance)?;
        points.push(((n_a as f64).ln(), summary.variance.ln()));
        rows.push(ScalingRow {
            n_a,
            n_r: instance.graph.n_r(),
            mean: summary.mean,
            bias_vs_truth: summary.bias_vs_truth,
            variance: summary.variance,
            envelope,
        });
    }
    Ok(ScalingReport { n_reps, rows, slope: ols_slope(&points) })
}

/// The non-asymptotic envelope implied by an instance's declared bounds and
/// realized full-treatment degrees.
pub fn variance_envelope(instance: &Instance) -> Result<f64> {
    let bounds = instance.model.bounds.ok_or_else(|| {
        Error::Parameter("variance envelope needs declared bounds on the instance".into())
    })?;
    let full = instance.graph.realize_full();
    let d_a = full.max_analysis_degree() as f64;
    let d_r = full.max_randomization_degree() as f64;
    let p = instance.p;
    Ok(bounds.outcome_bound.powi(2) * bounds.weight_high.powi(2) * d_a.powi(3) * d_r
        / (p.powi(4) * (1.0 - p).powi(2) * bounds.weight_low.powi(2) * instance.graph.n_a() as f64))
}

fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for &(x, y) in points {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    sxy / sxx
}

/// How bias-table expectations are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Exact design expectations by enumeration.
    Exact,
    /// Monte Carlo means over fresh assignment draws.
    MonteCarlo { n_reps: usize, seed: u64 },
}

/// One assignment row of the worked naive-value table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseRow {
    /// Assignment bits, first randomization unit leftmost.
    pub assignment: String,
    pub value: f64,
}

/// One canonical example in the bias table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasRow {
    pub example: usize,
    pub label: &'static str,
    /// Expectation of the naive inverse-probability contrast on the raw
    /// example graph.
    pub naive_expectation: f64,
    /// Expectation of the instrumented estimator on the anchored variant of
    /// the same graph.
    pub anchored_expectation: f64,
    /// The anchored variant's estimand. Outcomes there are treatment
    /// invariant, so this is exactly zero; the gap to `naive_expectation`
    /// is the bias the examples exist to display.
    pub anchored_truth: f64,
    /// Worked per-assignment naive values for the directed-pair example.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_table: Option<Vec<CaseRow>>,
}

/// The canonical-example bias table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasReport {
    pub p: f64,
    pub y: [f64; 2],
    pub rows: Vec<BiasRow>,
}

/// Naive versus instrumented expectations on the worked examples, exactly
/// or by simulation. `y` supplies the one or two outcome values each
/// example uses.
pub fn bias_table(
    examples: &[CanonicalExample],
    y: [f64; 2],
    p: f64,
    mode: BiasMode,
) -> Result<BiasReport> {
    check_probability(p)?;
    if !y[0].is_finite() || !y[1].is_finite() {
        return Err(Error::Parameter("outcome values must be finite".into()));
    }
    let mut rows = Vec::with_capacity(examples.len());
    for &example in examples {
        let ys = &y[..example.n_outcomes()];
        let variant = anchored_variant(example, ys)?;
        let anchor_pairs: Vec<(usize, usize)> = variant.anchor.pairs().collect();
        let config = EstimatorConfig::new(
            AnchorSubgraph::new(variant.graph.n_a(), variant.graph.n_r(), &anchor_pairs)?,
            InstrumentSpec::UniformOnAnchor,
            p,
        );
        let estimator = ValidatedEstimator::new(&variant.graph, &variant.weights, &config)?;
        let anchored_value = |t: &crate::design::TreatmentVector| -> Result<f64> {
            let realized = variant.graph.realize(t)?;
            let yv = evaluate(&variant.model, &realized, t)?;
            Ok(estimator.mu_hat(&realized, &yv, t)?.mu_hat)
        };

        let (naive_expectation, anchored_expectation) = match mode {
            BiasMode::Exact => (
                reference_naive_expectation(example, ys, p)?,
                exact_expectation_checked(variant.graph.n_r(), p, anchored_value)?,
            ),
            BiasMode::MonteCarlo { n_reps, seed } => {
                if n_reps == 0 {
                    return Err(Error::Parameter("n_reps must be positive".into()));
                }
                let naive_design = BernoulliDesign::new(
                    example.n_r(),
                    p,
                    subseed(seed, BIAS_NAIVE_DOMAIN),
                )?;
                let mut naive = KahanSum::new();
                for rep in 0..n_reps {
                    let t = naive_design.draw(rep as u64);
                    naive.add(reference_naive_value(example, &t, ys, p)?);
                }
                let anchored_design = BernoulliDesign::new(
                    variant.graph.n_r(),
                    p,
                    subseed(seed, BIAS_ANCHORED_DOMAIN),
                )?;
                let mut anchored = KahanSum::new();
                for rep in 0..n_reps {
                    let t = anchored_design.draw(rep as u64);
                    anchored.add(anchored_value(&t)?);
                }
                (naive.value() / n_reps as f64, anchored.value() / n_reps as f64)
            }
        };

        let case_table = if example == CanonicalExample::DirectedPair {
            Some(
                naive_case_table(example, ys, p)?
                    .into_iter()
                    .map(|(t, value)| CaseRow { assignment: t.to_string(), value })
                    .collect(),
            )
        } else {
            None
        };

        rows.push(BiasRow {
            example: example.index(),
            label: example.label(),
            naive_expectation,
            anchored_expectation,
            anchored_truth: true_tte(&variant.graph, &variant.model)?,
            case_table,
        });
    }
    Ok(BiasReport { p, y, rows })
}
