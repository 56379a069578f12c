//! The three smallest graphs on which naive inverse-probability estimation
//! goes wrong, frozen as executable reference cases.
//!
//! Each example fixes outcomes that ignore treatment entirely, so the true
//! total effect is zero, yet the naive contrast has nonzero expectation
//! because the edge set it conditions on responds to assignment. The module
//! exposes the displayed estimator expression for each example (the form the
//! bias is usually quoted in), exact expectations by enumeration, and an
//! anchored variant of each graph on which the instrumented estimator is
//! applicable and unbiased.

use crate::design::{enumerate_assignments, KahanSum, TreatmentVector};
use crate::error::{Error, Result};
use crate::graph::{AnchorSubgraph, EdgeRule, EdgeRuleKind, EndogenousGraph, PairRule, UnitSets};
use crate::outcomes::{ExposureWeights, OutcomeModel};

/// The reference bias demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanonicalExample {
    /// One analysis unit, one randomization unit; the only edge appears when
    /// the randomization unit is treated.
    CreatedEdge,
    /// Two analysis units sharing one randomization unit; treatment switches
    /// the edge from the second unit to the first.
    SwitchingEdge,
    /// Two units in unipartite mode with self-loops; treating the first unit
    /// creates a directed edge from it to the second.
    DirectedPair,
}

impl CanonicalExample {
    pub const ALL: [CanonicalExample; 3] = [
        CanonicalExample::CreatedEdge,
        CanonicalExample::SwitchingEdge,
        CanonicalExample::DirectedPair,
    ];

    /// One-based index used by the command line.
    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            1 => Ok(CanonicalExample::CreatedEdge),
            2 => Ok(CanonicalExample::SwitchingEdge),
            3 => Ok(CanonicalExample::DirectedPair),
            _ => Err(Error::Parameter(format!(
                "canonical example index must be 1, 2, or 3, got {index}"
            ))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            CanonicalExample::CreatedEdge => 1,
            CanonicalExample::SwitchingEdge => 2,
            CanonicalExample::DirectedPair => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CanonicalExample::CreatedEdge => "created-edge",
            CanonicalExample::SwitchingEdge => "switching-edge",
            CanonicalExample::DirectedPair => "directed-pair",
        }
    }

    /// Number of outcome values the example's y vector carries.
    pub fn n_outcomes(self) -> usize {
        match self {
            CanonicalExample::CreatedEdge => 1,
            CanonicalExample::SwitchingEdge | CanonicalExample::DirectedPair => 2,
        }
    }

    /// Randomization units in the canonical graph.
    pub fn n_r(self) -> usize {
        match self {
            CanonicalExample::CreatedEdge | CanonicalExample::SwitchingEdge => 1,
            CanonicalExample::DirectedPair => 2,
        }
    }
}

/// The example's endogenous graph, exactly as described.
pub fn canonical_graph(example: CanonicalExample) -> EndogenousGraph {
    match example {
        CanonicalExample::CreatedEdge => {
            let units = UnitSets::bipartite(1, 1).expect("static dims");
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![PairRule::own_unit(0, 0, false, true)],
            )
            .expect("static rule");
            EndogenousGraph::new(units, rule, &[]).expect("static graph")
        }
        CanonicalExample::SwitchingEdge => {
            let units = UnitSets::bipartite(2, 1).expect("static dims");
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![
                    PairRule::own_unit(0, 0, false, true),
                    PairRule::own_unit(1, 0, true, false),
                ],
            )
            .expect("static rule");
            EndogenousGraph::new(units, rule, &[(1, 0)]).expect("static graph")
        }
        CanonicalExample::DirectedPair => {
            let units = UnitSets::unipartite(2).expect("static dims");
            // Self-loops are inserted automatically; treating unit 0 creates
            // the directed edge from it to unit 1.
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![PairRule::own_unit(1, 0, false, true)],
            )
            .expect("static rule");
            EndogenousGraph::new(units, rule, &[(0, 0), (1, 1)]).expect("static graph")
        }
    }
}

fn check_example_inputs(example: CanonicalExample, t: &TreatmentVector, y: &[f64]) -> Result<()> {
    if y.len() != example.n_outcomes() {
        return Err(Error::Dimension(format!(
            "example {} takes {} outcome values, got {}",
            example.index(),
            example.n_outcomes(),
            y.len()
        )));
    }
    if t.len() != example.n_r() {
        return Err(Error::Dimension(format!(
            "example {} has {} randomization units, got an assignment of length {}",
            example.index(),
            example.n_r(),
            t.len()
        )));
    }
    Ok(())
}

/// The naive contrast in the exact algebraic form each example is usually
/// displayed in. The first two examples use the plain inverse-probability
/// form (for a single randomization unit it coincides with the general
/// bracket); the directed pair uses the probability-weighted bracket without
/// the leading mean, matching its quoted four-case table.
pub fn reference_naive_value(
    example: CanonicalExample,
    t: &TreatmentVector,
    y: &[f64],
    p: f64,
) -> Result<f64> {
    crate::design::check_probability(p)?;
    check_example_inputs(example, t, y)?;
    match example {
        CanonicalExample::CreatedEdge => Ok(t.value(0) * y[0] / p),
        CanonicalExample::SwitchingEdge => {
            Ok(t.value(0) * y[0] / p - (1.0 - t.value(0)) * y[1] / (1.0 - p))
        }
        CanonicalExample::DirectedPair => {
            let graph = canonical_graph(example);
            let realized = graph.realize(t)?;
            let mut total = 0.0;
            for (a, &y_a) in y.iter().enumerate() {
                let neighbors = realized.neighbors(a);
                let k = neighbors.len() as i32;
                if neighbors.iter().all(|&r| t.treated(r)) {
                    total += y_a * p.powi(k);
                }
                if neighbors.iter().all(|&r| !t.treated(r)) {
                    total -= y_a * (1.0 - p).powi(k);
                }
            }
            Ok(total)
        }
    }
}

/// Exact design expectation of [`reference_naive_value`] by enumeration.
pub fn reference_naive_expectation(
    example: CanonicalExample,
    y: &[f64],
    p: f64,
) -> Result<f64> {
    let mut acc = KahanSum::new();
    for (t, prob) in enumerate_assignments(example.n_r(), p)? {
        acc.add(prob * reference_naive_value(example, &t, y, p)?);
    }
    Ok(acc.value())
}

/// Every assignment with its displayed naive value, ordered so the first
/// coordinate varies slowest (the order case tables are quoted in).
pub fn naive_case_table(
    example: CanonicalExample,
    y: &[f64],
    p: f64,
) -> Result<Vec<(TreatmentVector, f64)>> {
    let n = example.n_r();
    let mut rows = Vec::with_capacity(1 << n);
    for index in 0..(1_u64 << n) {
        let bits: Vec<u8> = (0..n).map(|r| ((index >> (n - 1 - r)) & 1) as u8).collect();
        let t = TreatmentVector::from_bits(bits)?;
        let value = reference_naive_value(example, &t, y, p)?;
        rows.push((t, value));
    }
    Ok(rows)
}

/// A canonical example extended with always-present anchor edges so the
/// instrumented estimator applies. Outcomes stay treatment-invariant, so the
/// true effect is still zero; the contrast with the naive expectation is the
/// point of the exercise.
pub struct AnchoredVariant {
    pub graph: EndogenousGraph,
    pub anchor: AnchorSubgraph,
    pub weights: ExposureWeights,
    pub model: OutcomeModel,
}

pub fn anchored_variant(example: CanonicalExample, y: &[f64]) -> Result<AnchoredVariant> {
    if y.len() != example.n_outcomes() {
        return Err(Error::Dimension(format!(
            "example {} takes {} outcome values, got {}",
            example.index(),
            example.n_outcomes(),
            y.len()
        )));
    }
    match example {
        CanonicalExample::CreatedEdge => {
            // Add a second randomization unit carrying the anchor edge.
            let units = UnitSets::bipartite(1, 2)?;
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![
                    PairRule::own_unit(0, 0, false, true),
                    PairRule::constant(0, 1, true),
                ],
            )?;
            let graph = EndogenousGraph::new(units, rule, &[(0, 1)])?;
            let anchor = AnchorSubgraph::new(1, 2, &[(0, 1)])?;
            let weights = ExposureWeights::uniform();
            let model = OutcomeModel::new(y.to_vec(), vec![0.0], weights.clone())?;
            Ok(AnchoredVariant { graph, anchor, weights, model })
        }
        CanonicalExample::SwitchingEdge => {
            let units = UnitSets::bipartite(2, 2)?;
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![
                    PairRule::own_unit(0, 0, false, true),
                    PairRule::own_unit(1, 0, true, false),
                    PairRule::constant(0, 1, true),
                    PairRule::constant(1, 1, true),
                ],
            )?;
            let graph = EndogenousGraph::new(units, rule, &[(1, 0), (0, 1), (1, 1)])?;
            let anchor = AnchorSubgraph::new(2, 2, &[(0, 1), (1, 1)])?;
            let weights = ExposureWeights::uniform();
            let model = OutcomeModel::new(y.to_vec(), vec![0.0; 2], weights.clone())?;
            Ok(AnchoredVariant { graph, anchor, weights, model })
        }
        CanonicalExample::DirectedPair => {
            // A third unit supplies always-present cross edges; every unit
            // keeps a usable instrument while the created edge stays intact.
            let units = UnitSets::unipartite(3)?;
            let rule = EdgeRule::new(
                EdgeRuleKind::RDriven,
                &units,
                vec![
                    PairRule::own_unit(1, 0, false, true),
                    PairRule::constant(0, 2, true),
                    PairRule::constant(1, 2, true),
                    PairRule::constant(2, 0, true),
                ],
            )?;
            let graph = EndogenousGraph::new(
                units,
                rule,
                &[(0, 0), (1, 1), (2, 2), (0, 2), (1, 2), (2, 0)],
            )?;
            let anchor = AnchorSubgraph::new(3, 3, &[(0, 2), (1, 2), (2, 0)])?;
            let weights = ExposureWeights::uniform().with_zero_diagonal();
            let alpha = vec![y[0], y[1], 0.0];
            let model = OutcomeModel::new(alpha, vec![0.0; 3], weights.clone())?;
            Ok(AnchoredVariant { graph, anchor, weights, model })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{exact_expectation_checked, TreatmentVector};
    use crate::estimators::{
        horvitz_thompson, EstimatorConfig, InstrumentSpec, ValidatedEstimator,
    };
    use crate::outcomes::{evaluate, true_tte};

    #[test]
    fn created_edge_graph_realizes_as_described() {
        let g = canonical_graph(CanonicalExample::CreatedEdge);
        let on = g.realize(&TreatmentVector::ones(1)).unwrap();
        let off = g.realize(&TreatmentVector::zeros(1)).unwrap();
        assert_eq!(on.neighbors(0), &[0]);
        assert!(off.neighbors(0).is_empty());
    }

    #[test]
    fn switching_edge_graph_realizes_as_described() {
        let g = canonical_graph(CanonicalExample::SwitchingEdge);
        let on = g.realize(&TreatmentVector::ones(1)).unwrap();
        assert_eq!(on.neighbors(0), &[0]);
        assert!(on.neighbors(1).is_empty());
        let off = g.realize(&TreatmentVector::zeros(1)).unwrap();
        assert!(off.neighbors(0).is_empty());
        assert_eq!(off.neighbors(1), &[0]);
    }

    #[test]
    fn directed_pair_graph_keeps_self_loops_and_creates_the_cross_edge() {
        let g = canonical_graph(CanonicalExample::DirectedPair);
        let t = TreatmentVector::parse_bits("10").unwrap();
        let realized = g.realize(&t).unwrap();
        assert_eq!(realized.neighbors(0), &[0]);
        assert_eq!(realized.neighbors(1), &[0, 1]);
        let off = g.realize(&TreatmentVector::zeros(2)).unwrap();
        assert_eq!(off.neighbors(1), &[1]);
    }

    #[test]
    fn created_edge_expectation_is_the_outcome_itself() {
        // Truth is zero; the naive contrast recovers y exactly, at any p.
        for &p in &[0.2, 0.5, 0.8] {
            let e = reference_naive_expectation(CanonicalExample::CreatedEdge, &[3.5], p).unwrap();
            assert!((e - 3.5).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn switching_edge_expectation_is_the_outcome_difference() {
        for &p in &[0.2, 0.5, 0.8] {
            let e =
                reference_naive_expectation(CanonicalExample::SwitchingEdge, &[3.0, 1.0], p)
                    .unwrap();
            assert!((e - 2.0).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn directed_pair_case_table_matches_the_quoted_values() {
        let (y1, y2) = (3.0, 5.0);
        let rows = naive_case_table(CanonicalExample::DirectedPair, &[y1, y2], 0.5).unwrap();
        let values: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
        let want = [
            -y1 / 2.0 - y2 / 2.0, // neither treated
            -y1 / 2.0 + y2 / 2.0, // second treated
            y1 / 2.0,             // first treated
            y1 / 2.0 + y2 / 4.0,  // both treated
        ];
        for (got, want) in values.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        let order: Vec<String> = rows.iter().map(|(t, _)| t.to_string()).collect();
        assert_eq!(order, ["00", "01", "10", "11"]);
    }

    #[test]
    fn directed_pair_expectation_is_one_sixteenth_of_the_second_outcome() {
        let e = reference_naive_expectation(CanonicalExample::DirectedPair, &[7.0, 16.0], 0.5)
            .unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        // At p = 1/2 the first outcome cancels entirely.
        let e2 = reference_naive_expectation(CanonicalExample::DirectedPair, &[-40.0, 16.0], 0.5)
            .unwrap();
        assert!((e2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn directed_pair_expectation_matches_closed_form_at_general_p() {
        let (y1, y2) = (1.3, -0.8);
        for &p in &[0.3_f64, 0.5, 0.7] {
            let q = 1.0 - p;
            let closed = y1 * (2.0 * p - 1.0) + y2 * (p.powi(4) + p * p * q - q.powi(3));
            let e = reference_naive_expectation(CanonicalExample::DirectedPair, &[y1, y2], p)
                .unwrap();
            assert!((e - closed).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn single_coordinate_examples_agree_with_the_general_bracket() {
        // With one randomization unit the displayed expression IS the general
        // inverse-probability bracket, up to the mean over units.
        for &p in &[0.25, 0.5, 0.6] {
            let g1 = canonical_graph(CanonicalExample::CreatedEdge);
            let g2 = canonical_graph(CanonicalExample::SwitchingEdge);
            for bit in 0..2u8 {
                let t = TreatmentVector::from_bits(vec![bit]).unwrap();
                let naive1 =
                    reference_naive_value(CanonicalExample::CreatedEdge, &t, &[4.0], p).unwrap();
                let ht1 = horvitz_thompson(&g1.realize(&t).unwrap(), &[4.0], &t, p).unwrap();
                assert!((naive1 - ht1).abs() < 1e-12);
                let naive2 =
                    reference_naive_value(CanonicalExample::SwitchingEdge, &t, &[4.0, 1.5], p)
                        .unwrap();
                let ht2 =
                    horvitz_thompson(&g2.realize(&t).unwrap(), &[4.0, 1.5], &t, p).unwrap();
                assert!((naive2 - 2.0 * ht2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn directed_pair_displayed_form_differs_from_the_general_bracket() {
        // The quoted table multiplies by edge probabilities instead of
        // dividing, and skips the mean; the general bracket gives different
        // per-assignment values and a different expectation.
        let (y1, y2) = (3.0, 5.0);
        let g = canonical_graph(CanonicalExample::DirectedPair);
        let t = TreatmentVector::ones(2);
        let ht = horvitz_thompson(&g.realize(&t).unwrap(), &[y1, y2], &t, 0.5).unwrap();
        assert!((ht - (y1 + 2.0 * y2)).abs() < 1e-12);
        let mean_ht = exact_expectation_checked(2, 0.5, |t| {
            horvitz_thompson(&g.realize(t)?, &[y1, y2], t, 0.5)
        })
        .unwrap();
        assert!((mean_ht - y2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn anchored_variants_are_estimable_and_unbiased_for_zero() {
        let ys: [&[f64]; 3] = [&[2.0], &[3.0, 1.0], &[3.0, 5.0]];
        for (example, y) in CanonicalExample::ALL.into_iter().zip(ys) {
            let variant = anchored_variant(example, y).unwrap();
            variant.model.check_against(&variant.graph).unwrap();
            assert_eq!(true_tte(&variant.graph, &variant.model).unwrap(), 0.0);
            for &p in &[0.3, 0.5] {
                let config = EstimatorConfig::new(
                    variant.anchor.clone(),
                    InstrumentSpec::UniformOnAnchor,
                    p,
                );
                let est =
                    ValidatedEstimator::new(&variant.graph, &variant.weights, &config).unwrap();
                let mean = exact_expectation_checked(variant.graph.n_r(), p, |t| {
                    let realized = variant.graph.realize(t)?;
                    let y = evaluate(&variant.model, &realized, t)?;
                    Ok(est.mu_hat(&realized, &y, t)?.mu_hat)
                })
                .unwrap();
                assert!(
                    mean.abs() < 1e-12,
                    "example {} p {p}: expectation {mean}",
                    example.index()
                );
            }
        }
    }

    #[test]
    fn example_accessors_are_consistent() {
        for example in CanonicalExample::ALL {
            assert_eq!(CanonicalExample::from_index(example.index()).unwrap(), example);
            let g = canonical_graph(example);
            assert_eq!(g.n_r(), example.n_r());
        }
        assert!(CanonicalExample::from_index(0).is_err());
        assert!(CanonicalExample::from_index(4).is_err());
    }
}
