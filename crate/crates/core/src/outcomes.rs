//! Linear outcome models over realized exposures.
//!
//! A unit's response is `y_a = alpha_a + beta_a * x_a`, plus `gamma_a * t_a`
//! when analysis and randomization units coincide, where the exposure
//! `x_a = sum_r t_r e_ar w_ar` runs over the realized edge set.

use crate::design::{KahanSum, TreatmentVector};
use crate::error::{Error, Result};
use crate::graph::{EndogenousGraph, RealizedGraph};

/// Exposure weights as a total function on analysis x randomization pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightScheme {
    /// w_ar = 1 everywhere.
    Uniform,
    /// w_ar = values[a] for every r.
    PerUnit(Vec<f64>),
    /// Fully explicit matrix, row-major. Desk scale only.
    Dense { n_a: usize, n_r: usize, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExposureWeights {
    scheme: WeightScheme,
    zero_diagonal: bool,
}

impl ExposureWeights {
    pub fn uniform() -> Self {
        Self { scheme: WeightScheme::Uniform, zero_diagonal: false }
    }

    pub fn per_unit(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("exposure weights must be finite".into()));
        }
        Ok(Self { scheme: WeightScheme::PerUnit(values), zero_diagonal: false })
    }

    pub fn dense(n_a: usize, n_r: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_a * n_r {
            return Err(Error::Dimension(format!(
                "dense weights need {} values, got {}",
                n_a * n_r,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("exposure weights must be finite".into()));
        }
        Ok(Self { scheme: WeightScheme::Dense { n_a, n_r, values }, zero_diagonal: false })
    }

    /// w_ar = 1 / |R_a| with R_a the neighbor set under full treatment
    /// (excluding the self pair in unipartite mode). Units with no neighbors
    /// get weight zero.
    pub fn degree_normalized(graph: &EndogenousGraph) -> Self {
        let full = graph.realize_full();
        let uni = graph.is_unipartite();
        let values = (0..graph.n_a())
            .map(|a| {
                let mut deg = full.degree(a);
                if uni && full.has_edge(a, a) {
                    deg -= 1;
                }
                if deg == 0 {
                    0.0
                } else {
                    1.0 / deg as f64
                }
            })
            .collect();
        Self { scheme: WeightScheme::PerUnit(values), zero_diagonal: uni }
    }

    /// Force w_aa = 0; required whenever analysis and randomization units coincide.
    pub fn with_zero_diagonal(mut self) -> Self {
        self.zero_diagonal = true;
        self
    }

    pub fn has_zero_diagonal(&self) -> bool {
        self.zero_diagonal
    }

    pub fn get(&self, a: usize, r: usize) -> f64 {
        if self.zero_diagonal && a == r {
            return 0.0;
        }
        match &self.scheme {
            WeightScheme::Uniform => 1.0,
            WeightScheme::PerUnit(values) => values[a],
            WeightScheme::Dense { n_r, values, .. } => values[a * n_r + r],
        }
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }
}

/// Declared envelope constants for variance bounds: sup |y| and the weight
/// band (W_l, W_h) with W_l/|R_a| <= |w_ar| <= W_h/|R_a| on full-treatment
/// neighborhoods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeclaredBounds {
    pub outcome_bound: f64,
    pub weight_low: f64,
    pub weight_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeModel {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Direct own-treatment effect; only meaningful when analysis and
    /// randomization units coincide.
    pub gamma: Option<Vec<f64>>,
    pub weights: ExposureWeights,
    pub bounds: Option<DeclaredBounds>,
}

impl OutcomeModel {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, weights: ExposureWeights) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::Dimension(format!(
                "alpha has {} entries, beta has {}",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("outcome coefficients must be finite".into()));
        }
        Ok(Self { alpha, beta, gamma: None, weights, bounds: None })
    }

    pub fn with_gamma(mut self, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != self.alpha.len() {
            return Err(Error::Dimension(format!(
                "gamma has {} entries, model has {}",
                gamma.len(),
                self.alpha.len()
            )));
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("outcome coefficients must be finite".into()));
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn n_a(&self) -> usize {
        self.alpha.len()
    }

    /// Structural consistency against a graph: sizes, gamma only in
    /// unipartite mode, zero diagonal weights when unipartite.
    pub fn check_against(&self, graph: &EndogenousGraph) -> Result<()> {
        if self.n_a() != graph.n_a() {
            return Err(Error::Dimension(format!(
                "model covers {} analysis units, graph has {}",
                self.n_a(),
                graph.n_a()
            )));
        }
        if let WeightScheme::Dense { n_a, n_r, .. } = self.weights.scheme() {
            if *n_a != graph.n_a() || *n_r != graph.n_r() {
                return Err(Error::Dimension(format!(
                    "dense weights are {} x {}, graph is {} x {}",
                    n_a,
                    n_r,
                    graph.n_a(),
                    graph.n_r()
                )));
            }
        }
        if self.gamma.is_some() && !graph.is_unipartite() {
            return Err(Error::Parameter(
                "direct own-treatment effects require analysis and randomization units to coincide"
                    .into(),
            ));
        }
        if graph.is_unipartite() {
            for a in 0..graph.n_a() {
                if self.weights.get(a, a) != 0.0 {
                    return Err(Error::Parameter(format!(
                        "self weight of unit {a} must be zero in unipartite mode"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Realized exposure x_a = sum over realized edges of t_r * w_ar.
pub fn exposure(
    realized: &RealizedGraph,
    t: &TreatmentVector,
    weights: &ExposureWeights,
) -> Result<Vec<f64>> {
    if t.len() != realized.n_r() {
        return Err(Error::Dimension(format!(
            "assignment has {} entries, graph has {} randomization units",
            t.len(),
            realized.n_r()
        )));
    }
    Ok((0..realized.n_a())
        .map(|a| {
            realized
                .neighbors(a)
                .iter()
                .map(|&r| t.value(r) * weights.get(a, r))
                .sum()
        })
        .collect())
}

/// Realized outcome vector under the model.
pub fn evaluate(
    model: &OutcomeModel,
    realized: &RealizedGraph,
    t: &TreatmentVector,
) -> Result<Vec<f64>> {
    if model.n_a() != realized.n_a() {
        return Err(Error::Dimension(format!(
            "model covers {} analysis units, realized graph has {}",
            model.n_a(),
            realized.n_a()
        )));
    }
    if model.gamma.is_some() && realized.n_a() != realized.n_r() {
        return Err(Error::Parameter(
            "direct own-treatment effects require analysis and randomization units to coincide"
                .into(),
        ));
    }
    let x = exposure(realized, t, &model.weights)?;
    Ok((0..model.n_a())
        .map(|a| {
            let mut y = model.alpha[a] + model.beta[a] * x[a];
            if let Some(gamma) = &model.gamma {
                y += gamma[a] * t.value(a);
            }
            y
        })
        .collect())
}

/// The estimand: average over analysis units of the fully-treated minus
/// fully-controlled response. Under the linear model this is
/// mean_a(beta_a * W_a(1) + gamma_a) with W_a(1) the full-treatment weighted
/// degree; both routes are exercised in tests.
pub fn true_tte(graph: &EndogenousGraph, model: &OutcomeModel) -> Result<f64> {
    model.check_against(graph)?;
    let full = graph.realize_full();
    let mut acc = KahanSum::new();
    for a in 0..graph.n_a() {
        let w_full: f64 = full
            .neighbors(a)
            .iter()
            .map(|&r| model.weights.get(a, r))
            .sum();
        let mut effect = model.beta[a] * w_full;
        if let Some(gamma) = &model.gamma {
            effect += gamma[a];
        }
        acc.add(effect);
    }
    Ok(acc.value() / graph.n_a() as f64)
}

/// Check the declared weight band against full-treatment neighborhoods.
/// Self pairs are skipped when the weights carry a zero diagonal.
pub fn check_weight_band(model: &OutcomeModel, graph: &EndogenousGraph) -> Result<()> {
    let Some(bounds) = model.bounds else {
        return Err(Error::Parameter("no weight band declared".into()));
    };
    let full = graph.realize_full();
    for a in 0..graph.n_a() {
        let mut neighbors: Vec<usize> = full.neighbors(a).to_vec();
        if model.weights.has_zero_diagonal() {
            neighbors.retain(|&r| r != a);
        }
        let deg = neighbors.len();
        if deg == 0 {
            continue;
        }
        let low = bounds.weight_low / deg as f64;
        let high = bounds.weight_high / deg as f64;
        for r in neighbors {
            let w = model.weights.get(a, r).abs();
            if w < low - 1e-12 || w > high + 1e-12 {
                return Err(Error::Parameter(format!(
                    "weight on pair ({a}, {r}) is {w}, outside the declared band \
                     [{low}, {high}] for degree {deg}"
                )));
            }
        }
    }
    Ok(())
}
