//! Treatment-dependent graphs.
//!
//! Every potential edge (a, r) carries a boolean response to the assignment
//! vector, stored as an explicit truth table over a declared dependency set.
//! Realizing the graph under an assignment, checking that a candidate anchor
//! subgraph is assignment-invariant, and recovering the minimal dependency
//! structure all operate on those tables, so they are exact rather than
//! sampled unless a sampled mode is requested explicitly.

use crate::design::{self, TreatmentVector};
use crate::error::{Error, Result};

/// Largest dependency set a single edge rule may declare. Tables are stored
/// densely, so entry counts grow as 2^|S|.
pub const DEPENDENCY_CAP: usize = 16;

const MAX_WITNESSES: usize = 32;

/// Sizes of the analysis and randomization populations.
///
/// `unipartite` means the two populations are the same units; in that mode
/// every self pair (a, a) is forced to an always-on edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitSets {
    n_a: usize,
    n_r: usize,
    unipartite: bool,
}

impl UnitSets {
    pub fn bipartite(n_a: usize, n_r: usize) -> Result<Self> {
        if n_a == 0 || n_r == 0 {
            return Err(Error::Parameter("unit sets must be nonempty".into()));
        }
        Ok(Self { n_a, n_r, unipartite: false })
    }

    pub fn unipartite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("unit sets must be nonempty".into()));
        }
        Ok(Self { n_a: n, n_r: n, unipartite: true })
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
}

/// Declared prior knowledge about how edges may respond to assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeRuleKind {
    /// No edge responds to assignment at all.
    Exogenous,
    /// Each edge (a, r) responds only to unit r's own assignment.
    RDriven,
    /// Each edge responds to some declared proper subset of assignments.
    SetDriven,
    /// No restriction declared.
    Unrestricted,
}

impl EdgeRuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeRuleKind::Exogenous => "exogenous",
            EdgeRuleKind::RDriven => "r_driven",
            EdgeRuleKind::SetDriven => "set_driven",
            EdgeRuleKind::Unrestricted => "unrestricted",
        }
    }
}

/// Truth table for one potential edge.
///
/// `depends_on` lists the randomization units the edge may respond to, in
/// strictly increasing order. Entry `m` of the table is the edge state when
/// bit `i` of `m` equals the assignment of `depends_on[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRule {
    a: usize,
    r: usize,
    depends_on: Vec<u32>,
    table: Box<[u8]>,
}

impl PairRule {
    pub fn new(a: usize, r: usize, depends_on: Vec<usize>, table: Vec<u8>) -> Result<Self> {
        if depends_on.len() > DEPENDENCY_CAP {
            return Err(Error::Parameter(format!(
                "edge rule for ({a}, {r}) depends on {} units, cap is {DEPENDENCY_CAP}",
                depends_on.len()
            )));
        }
        if !depends_on.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parameter(format!(
                "dependency set for ({a}, {r}) must be strictly increasing"
            )));
        }
        if table.len() != 1usize << depends_on.len() {
            return Err(Error::Parameter(format!(
                "edge rule for ({a}, {r}) declares {} dependencies but its table has {} entries",
                depends_on.len(),
                table.len()
            )));
        }
        if table.iter().any(|&v| v > 1) {
            return Err(Error::Parameter(format!(
                "truth table for ({a}, {r}) may contain only 0 and 1"
            )));
        }
        Ok(Self {
            a,
            r,
            depends_on: depends_on.into_iter().map(|d| d as u32).collect(),
            table: table.into_boxed_slice(),
        })
    }

    /// Edge that ignores assignment entirely.
    pub fn constant(a: usize, r: usize, present: bool) -> Self {
        Self { a, r, depends_on: Vec::new(), table: vec![u8::from(present)].into_boxed_slice() }
    }

    /// Edge that responds only to unit r's own assignment.
    pub fn own_unit(a: usize, r: usize, when_control: bool, when_treated: bool) -> Self {
        Self {
            a,
            r,
            depends_on: vec![r as u32],
            table: vec![u8::from(when_control), u8::from(when_treated)].into_boxed_slice(),
        }
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn depends_on(&self) -> impl Iterator<Item = usize> + '_ {
        self.depends_on.iter().map(|&d| d as usize)
    }

    pub fn dependency_count(&self) -> usize {
        self.depends_on.len()
    }

    pub fn table(&self) -> &[u8] {
        &self.table
    }

    /// Evaluate the edge under a full assignment.
    pub fn eval(&self, t: &TreatmentVector) -> bool {
        let mut idx = 0usize;
        for (i, &d) in self.depends_on.iter().enumerate() {
            idx |= (self.table_bit(t, d)) << i;
        }
        self.table[idx] == 1
    }

    fn table_bit(&self, t: &TreatmentVector, d: u32) -> usize {
        t.bit(d as usize) as usize
    }

    /// True when the edge is present under every assignment.
    pub fn is_always_on(&self) -> bool {
        self.table.iter().all(|&v| v == 1)
    }

    /// Edge state under full treatment.
    pub fn on_under_full_treatment(&self) -> bool {
        self.table[self.table.len() - 1] == 1
    }

    /// The coordinates the table actually varies with. For a total boolean
    /// function this is the unique minimal dependency set.
    pub fn minimal_dependencies(&self) -> Vec<usize> {
        let mut minimal = Vec::new();
        for (i, &d) in self.depends_on.iter().enumerate() {
            let bit = 1usize << i;
            let relevant = (0..self.table.len())
                .filter(|m| m & bit == 0)
                .any(|m| self.table[m] != self.table[m | bit]);
            if relevant {
                minimal.push(d as usize);
            }
        }
        minimal
    }
}

/// The full edge response structure: one rule per potential edge that can
/// ever be present. Pairs without a rule are never edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRule {
    kind: EdgeRuleKind,
    n_a: usize,
    n_r: usize,
    per_unit: Vec<Vec<PairRule>>,
}

impl EdgeRule {
    pub fn new(kind: EdgeRuleKind, units: &UnitSets, rules: Vec<PairRule>) -> Result<Self> {
        let (n_a, n_r) = (units.n_a(), units.n_r());
        let mut per_unit: Vec<Vec<PairRule>> = vec![Vec::new(); n_a];
        for rule in rules {
            if rule.a >= n_a || rule.r >= n_r {
                return Err(Error::Dimension(format!(
                    "edge rule pair ({}, {}) outside {n_a} x {n_r}",
                    rule.a, rule.r
                )));
            }
            if rule.depends_on.iter().any(|&d| d as usize >= n_r) {
                return Err(Error::Dimension(format!(
                    "edge rule for ({}, {}) depends on a unit outside the randomization set",
                    rule.a, rule.r
                )));
            }
            match kind {
                EdgeRuleKind::Exogenous if rule.dependency_count() > 0 => {
                    return Err(Error::Parameter(format!(
                        "rule kind is exogenous but pair ({}, {}) declares dependencies",
                        rule.a, rule.r
                    )));
                }
                EdgeRuleKind::RDriven
                    if rule.depends_on().any(|d| d != rule.r) =>
                {
                    return Err(Error::Parameter(format!(
                        "rule kind is r_driven but pair ({}, {}) depends on units other than its own",
                        rule.a, rule.r
                    )));
                }
                _ => {}
            }
            per_unit[rule.a].push(rule);
        }
        for (a, rules) in per_unit.iter_mut().enumerate() {
            rules.sort_by_key(|rule| rule.r);
            if rules.windows(2).any(|w| w[0].r == w[1].r) {
                return Err(Error::Parameter(format!(
                    "duplicate edge rule for analysis unit {a}"
                )));
            }
        }
        Ok(Self { kind, n_a, n_r, per_unit })
    }

    pub fn kind(&self) -> EdgeRuleKind {
        self.kind
    }

    pub fn rules_for(&self, a: usize) -> &[PairRule] {
        &self.per_unit[a]
    }

    pub fn rule(&self, a: usize, r: usize) -> Option<&PairRule> {
        let rules = &self.per_unit[a];
        rules
            .binary_search_by_key(&r, |rule| rule.r)
            .ok()
            .map(|i| &rules[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &PairRule> {
        self.per_unit.iter().flatten()
    }

    pub fn pair_count(&self) -> usize {
        self.per_unit.iter().map(Vec::len).sum()
    }
}

/// A graph whose edges are potential outcomes of the assignment, together
/// with the edge set observed before the experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndogenousGraph {
    units: UnitSets,
    rule: EdgeRule,
    pre_edges: Vec<Vec<usize>>,
}

impl EndogenousGraph {
    /// Build a graph. In unipartite mode missing self pairs are filled in as
    /// always-on edges; an explicit self pair that is not always-on is an
    /// error, because a unit never loses its own treatment.
    pub fn new(
        units: UnitSets,
        mut rule: EdgeRule,
        pre_edges: &[(usize, usize)],
    ) -> Result<Self> {
        if rule.n_a != units.n_a() || rule.n_r != units.n_r() {
            return Err(Error::Dimension(format!(
                "edge rule is {} x {}, unit sets are {} x {}",
                rule.n_a,
                rule.n_r,
                units.n_a(),
                units.n_r()
            )));
        }
        if units.is_unipartite() {
            for a in 0..units.n_a() {
                match rule.rule(a, a) {
                    Some(diag) if !diag.is_always_on() => {
                        return Err(Error::Parameter(format!(
                            "self pair ({a}, {a}) must be always-on in unipartite mode"
                        )));
                    }
                    Some(_) => {}
                    None => {
                        let diag = PairRule::constant(a, a, true);
                        let pos = rule.per_unit[a]
                            .binary_search_by_key(&a, |r| r.r)
                            .unwrap_err();
                        rule.per_unit[a].insert(pos, diag);
                    }
                }
            }
        }
        let mut pre: Vec<Vec<usize>> = vec![Vec::new(); units.n_a()];
        for &(a, r) in pre_edges {
            if a >= units.n_a() || r >= units.n_r() {
                return Err(Error::Dimension(format!(
                    "pre-experiment edge ({a}, {r}) outside {} x {}",
                    units.n_a(),
                    units.n_r()
                )));
            }
            pre[a].push(r);
        }
        for list in &mut pre {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { units, rule, pre_edges: pre })
    }

    pub fn units(&self) -> &UnitSets {
        &self.units
    }

    pub fn n_a(&self) -> usize {
        self.units.n_a()
    }

    pub fn n_r(&self) -> usize {
        self.units.n_r()
    }

    pub fn is_unipartite(&self) -> bool {
        self.units.is_unipartite()
    }

    pub fn rule(&self) -> &EdgeRule {
        &self.rule
    }

    pub fn pre_neighbors(&self, a: usize) -> &[usize] {
        &self.pre_edges[a]
    }

    pub fn pre_edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (a, list) in self.pre_edges.iter().enumerate() {
            for &r in list {
                pairs.push((a, r));
            }
        }
        pairs
    }

    /// Evaluate every edge rule under `t`. Deterministic: the same assignment
    /// always yields the same realized graph.
    pub fn realize(&self, t: &TreatmentVector) -> Result<RealizedGraph> {
        if t.len() != self.n_r() {
            return Err(Error::Dimension(format!(
                "assignment has {} entries, graph has {} randomization units",
                t.len(),
                self.n_r()
            )));
        }
        let neighbors = self
            .rule
            .per_unit
            .iter()
            .map(|rules| {
                rules
                    .iter()
                    .filter(|rule| rule.eval(t))
                    .map(|rule| rule.r)
                    .collect()
            })
            .collect();
        Ok(RealizedGraph { n_a: self.n_a(), n_r: self.n_r(), neighbors })
    }

    /// Neighbor sets under full treatment. These are the largest sets the
    /// instrument-based estimator ever touches when created edges only appear
    /// with treatment.
    pub fn realize_full(&self) -> RealizedGraph {
        let neighbors = self
            .rule
            .per_unit
            .iter()
            .map(|rules| {
                rules
                    .iter()
                    .filter(|rule| rule.on_under_full_treatment())
                    .map(|rule| rule.r)
                    .collect()
            })
            .collect();
        RealizedGraph { n_a: self.n_a(), n_r: self.n_r(), neighbors }
    }
}

/// Edge set realized under one concrete assignment. Stored as per-unit sorted
/// neighbor lists; the matrix view is answered by binary search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RealizedGraph {
    n_a: usize,
    n_r: usize,
    neighbors: Vec<Vec<usize>>,
}

impl RealizedGraph {
    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.neighbors[a]
    }

    pub fn has_edge(&self, a: usize, r: usize) -> bool {
        self.neighbors[a].binary_search(&r).is_ok()
    }

    pub fn degree(&self, a: usize) -> usize {
        self.neighbors[a].len()
    }

    pub fn max_analysis_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of analysis units attached to each randomization unit.
    pub fn randomization_degrees(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_r];
        for list in &self.neighbors {
            for &r in list {
                counts[r] += 1;
            }
        }
        counts
    }

    pub fn max_randomization_degree(&self) -> usize {
        self.randomization_degrees().into_iter().max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// A candidate set of always-present pairs, stored per analysis unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorSubgraph {
    n_a: usize,
    n_r: usize,
    per_unit: Vec<Vec<usize>>,
}

impl AnchorSubgraph {
    pub fn new(n_a: usize, n_r: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut per_unit: Vec<Vec<usize>> = vec![Vec::new(); n_a];
        for &(a, r) in pairs {
            if a >= n_a || r >= n_r {
                return Err(Error::Dimension(format!(
                    "anchor pair ({a}, {r}) outside {n_a} x {n_r}"
                )));
            }
            per_unit[a].push(r);
        }
        for list in &mut per_unit {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { n_a, n_r, per_unit })
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    /// Anchor neighbors of one analysis unit, sorted.
    pub fn unit(&self, a: usize) -> &[usize] {
        &self.per_unit[a]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_unit
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().map(move |&r| (a, r)))
    }

    pub fn pair_count(&self) -> usize {
        self.per_unit.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, a: usize, r: usize) -> bool {
        self.per_unit[a].binary_search(&r).is_ok()
    }
}

/// How to check anchor invariance.
#[derive(Clone, Copy, Debug)]
pub enum VerifyMode {
    /// Prove or refute presence under every assignment.
    Exhaustive,
    /// Spot-check under randomly drawn assignments.
    Sampled { n_samples: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct AnchorViolation {
    pub a: usize,
    pub r: usize,
    /// An assignment under which the pair is absent.
    pub assignment: TreatmentVector,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub passed: bool,
    /// True when the check covered every assignment the anchor pairs can see.
    pub exhaustive: bool,
    /// Edge evaluations performed.
    pub evaluations: u64,
    pub violations: Vec<AnchorViolation>,
    /// True when more violations exist than were recorded.
    pub truncated: bool,
}

/// Check that every anchor pair is present under every assignment (or under
/// sampled assignments). Exhaustive mode walks each pair's truth table when
/// the rule kind confines dependencies to single units, and otherwise
/// enumerates assignments, which is capped.
pub fn verify_anchor(
    graph: &EndogenousGraph,
    anchor: &AnchorSubgraph,
    mode: VerifyMode,
) -> Result<VerificationReport> {
    if anchor.n_a() != graph.n_a() || anchor.n_r() != graph.n_r() {
        return Err(Error::Dimension(format!(
            "anchor is {} x {}, graph is {} x {}",
            anchor.n_a(),
            anchor.n_r(),
            graph.n_a(),
            graph.n_r()
        )));
    }
    let mut violations = Vec::new();
    let mut truncated = false;
    let mut evaluations = 0u64;

    // Pairs with no rule can never be edges; report them regardless of mode.
    let mut checkable: Vec<&PairRule> = Vec::with_capacity(anchor.pair_count());
    for (a, r) in anchor.pairs() {
        match graph.rule().rule(a, r) {
            Some(rule) => checkable.push(rule),
            None => violations.push(AnchorViolation {
                a,
                r,
                assignment: TreatmentVector::zeros(graph.n_r()),
            }),
        }
    }

    let table_scan_is_complete = matches!(
        graph.rule().kind(),
        EdgeRuleKind::Exogenous | EdgeRuleKind::RDriven
    );

    match mode {
        VerifyMode::Exhaustive if table_scan_is_complete => {
            for rule in checkable {
                evaluations += rule.table().len() as u64;
                if let Some(m) = rule.table().iter().position(|&v| v == 0) {
                    let mut bits = vec![0u8; graph.n_r()];
                    for (i, d) in rule.depends_on().enumerate() {
                        bits[d] = ((m >> i) & 1) as u8;
                    }
                    violations.push(AnchorViolation {
                        a: rule.a(),
                        r: rule.r(),
                        assignment: TreatmentVector::from_bits(bits).expect("bits are 0/1"),
                    });
                }
            }
        }
        VerifyMode::Exhaustive => {
            'outer: for (t, _) in design::enumerate_assignments(graph.n_r(), 0.5)? {
                for rule in &checkable {
                    evaluations += 1;
                    if !rule.eval(&t) {
                        violations.push(AnchorViolation {
                            a: rule.a(),
                            r: rule.r(),
                            assignment: t.clone(),
                        });
                        if violations.len() >= MAX_WITNESSES {
                            truncated = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        VerifyMode::Sampled { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::Parameter("sampled verification needs n_samples >= 1".into()));
            }
            'sampling: for i in 0..n_samples {
                let mut rng = design::substream_rng(seed, i as u64);
                let bits = (0..graph.n_r())
                    .map(|_| u8::from(rand::Rng::random_bool(&mut rng, 0.5)))
                    .collect::<Vec<_>>();
                let t = TreatmentVector::from_bits(bits).expect("bits are 0/1");
                for rule in &checkable {
                    evaluations += 1;
                    if !rule.eval(&t) {
                        violations.push(AnchorViolation {
                            a: rule.a(),
                            r: rule.r(),
                            assignment: t.clone(),
                        });
                        if violations.len() >= MAX_WITNESSES {
                            truncated = true;
                            break 'sampling;
                        }
                    }
                }
            }
        }
    }

    // Deduplicate witnesses per pair: one assignment per violating pair is enough.
    violations.sort_by_key(|v| (v.a, v.r));
    violations.dedup_by_key(|v| (v.a, v.r));

    Ok(VerificationReport {
        passed: violations.is_empty(),
        exhaustive: matches!(mode, VerifyMode::Exhaustive),
        evaluations,
        violations,
        truncated,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairDependency {
    pub a: usize,
    pub r: usize,
    /// The units the edge provably responds to (minimal dependency set).
    pub minimal: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyReport {
    pub pairs: Vec<PairDependency>,
    /// Coarsest kind consistent with every pair's minimal set.
    pub kind: EdgeRuleKind,
}

/// Recover the minimal dependency set of every stored pair and the coarsest
/// rule kind that covers them. Declared dependency sets may be loose; the
/// classification looks only at what the truth tables actually vary with.
pub fn classify_dependency(graph: &EndogenousGraph) -> DependencyReport {
    let n_r = graph.n_r();
    let mut pairs = Vec::with_capacity(graph.rule().pair_count());
    let mut kind = EdgeRuleKind::Exogenous;
    for rule in graph.rule().iter() {
        let minimal = rule.minimal_dependencies();
        let pair_kind = if minimal.is_empty() {
            EdgeRuleKind::Exogenous
        } else if minimal == [rule.r()] {
            EdgeRuleKind::RDriven
        } else if minimal.len() < n_r {
            EdgeRuleKind::SetDriven
        } else {
            EdgeRuleKind::Unrestricted
        };
        kind = kind.max(pair_kind);
        pairs.push(PairDependency { a: rule.a(), r: rule.r(), minimal });
    }
    DependencyReport { pairs, kind }
}
