//! Exact minimum-MLU routing by linear programming, with dual extraction and
//! duality checks.
//!
//! The LP has one ratio variable per path plus `m`:
//!
//! ```text
//! minimize    m
//! subject to  Σ_p D_p ξ_pe r_p - c_e m ≤ 0     for each edge e
//!             Σ_{p ∈ P_st} r_p = 1             for each pair (s, t)
//!             r ≥ 0, m ≥ 0
//! ```
//!
//! The per-edge duals `λ_e = -y_e ≥ 0` satisfy `Σ λ_e c_e = 1` whenever the
//! optimum is positive, and `Σ_st D_st min_p Σ_{e∈p} λ_e = m*`.

pub mod simplex;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{mlu_of, DemandMatrix, PathSet, SplitConfig, Topology};
use simplex::{LinearProgram, LpStatus, RowKind};

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const DUALITY_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    UnboundedGuard,
}

/// Optimal MLU, an optimal split and per-edge duals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub status: OracleStatus,
    #[serde(rename = "mlu")]
    pub mlu_opt: f64,
    #[serde(rename = "ratios")]
    pub split_opt: SplitConfig,
    pub duals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infeasible_pair: Option<(usize, usize)>,
}

impl OracleSolution {
    fn failed(status: OracleStatus, pathset: &PathSet, num_edges: usize, pair: Option<(usize, usize)>) -> Self {
        Self {
            status,
            mlu_opt: f64::NAN,
            split_opt: SplitConfig::new(vec![0.0; pathset.num_paths()]),
            duals: vec![0.0; num_edges],
            infeasible_pair: pair,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == OracleStatus::Optimal
    }

    /// Duals rescaled so `Σ λ_e c_e = 1`.
    pub fn normalized_duals(&self, topology: &Topology) -> Vec<f64> {
        let s: f64 = self.duals.iter().zip(topology.capacities()).map(|(l, c)| l * c).sum();
        if s > 0.0 {
            self.duals.iter().map(|l| l / s).collect()
        } else {
            self.duals.clone()
        }
    }
}

/// Solves the min-MLU LP for one demand snapshot.
///
/// A pair with positive demand listed as disconnected (no paths) makes the
/// instance infeasible; the offending pair is named in the result.
pub fn solve_mlu_lp(topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<OracleSolution> {
    if pathset.num_edges() != topology.num_edges() || demands.num_nodes() != topology.num_nodes() {
        return Err(Error::Dimension("oracle inputs disagree on |V| or |E|".into()));
    }
    let ne = topology.num_edges();
    if let Some(&pair) = pathset.disconnected().iter().find(|&&(s, t)| demands.get(s, t) > 0.0) {
        return Ok(OracleSolution::failed(OracleStatus::Infeasible, pathset, ne, Some(pair)));
    }
    let np = pathset.num_paths();
    let path_demand = pathset.path_demands(demands);
    let total: f64 = (0..pathset.num_pairs())
        .map(|i| {
            let (s, t) = pathset.pair(i);
            demands.get(s, t)
        })
        .sum();
    if total == 0.0 {
        return Ok(zero_demand_solution(topology, pathset));
    }

    // Work in units of the largest capacity so coefficients are O(1).
    let scale = topology.max_capacity();
    let m_var = np;
    let mut lp = LinearProgram::new(np + 1);
    lp.objective[m_var] = 1.0;

    let mut edge_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ne];
    for p in 0..np {
        if path_demand[p] > 0.0 {
            for &e in pathset.path(p) {
                edge_terms[e].push((p, path_demand[p] / scale));
            }
        }
    }
    let mut edge_row = vec![None; ne];
    for (e, mut terms) in edge_terms.into_iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        terms.push((m_var, -topology.capacity(e) / scale));
        edge_row[e] = Some(lp.add_row(terms, RowKind::Le, 0.0));
    }
    for i in 0..pathset.num_pairs() {
        let terms = pathset.path_range(i).map(|p| (p, 1.0)).collect();
        lp.add_row(terms, RowKind::Eq, 1.0);
    }

    let sol = lp.solve();
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Ok(OracleSolution::failed(OracleStatus::Infeasible, pathset, ne, None));
        }
        LpStatus::Unbounded => {
            return Ok(OracleSolution::failed(OracleStatus::UnboundedGuard, pathset, ne, None));
        }
        LpStatus::IterationLimit => {
            return Err(Error::Numerical(format!(
                "simplex hit its iteration limit after {} pivots",
                sol.iterations
            )));
        }
    }
    let mut ratios = sol.x[..np].to_vec();
    // tidy round-off so every pair sums to exactly one
    for i in 0..pathset.num_pairs() {
        let range = pathset.path_range(i);
        let s: f64 = ratios[range.clone()].iter().sum();
        ratios[range].iter_mut().for_each(|r| *r /= s);
    }
    let duals = edge_row
        .iter()
        .map(|row| row.map_or(0.0, |r| -sol.duals[r] / scale))
        .collect();
    Ok(OracleSolution {
        status: OracleStatus::Optimal,
        mlu_opt: sol.x[m_var],
        split_opt: SplitConfig::new(ratios),
        duals,
        infeasible_pair: None,
    })
}

/// With no demand every split is optimal at `m* = 0` and every nonnegative
/// `λ` with `Σ λ c = 1` is dual optimal; spread the dual mass evenly.
fn zero_demand_solution(topology: &Topology, pathset: &PathSet) -> OracleSolution {
    let live: Vec<usize> = (0..topology.num_edges()).filter(|&e| !topology.is_failed(e)).collect();
    let mut duals = vec![0.0; topology.num_edges()];
    for &e in &live {
        duals[e] = 1.0 / (live.len() as f64 * topology.capacity(e));
    }
    OracleSolution {
        status: OracleStatus::Optimal,
        mlu_opt: 0.0,
        split_opt: SplitConfig::uniform(pathset),
        duals,
        infeasible_pair: None,
    }
}

/// Residual breakdown of a duality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub primal: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub gap_tolerance: f64,
    /// `|Σ λ_e c_e - 1|`.
    pub normalization_residual: f64,
    pub min_dual: f64,
    /// Largest violation of a capacity or simplex constraint.
    pub primal_residual: f64,
    /// `max_e |λ_e (m* c_e - F_e)|`.
    pub edge_slackness: f64,
    /// `max_p |r_p D_p (Λ_p - min Λ)|`.
    pub path_slackness: f64,
    pub unique_minimizers: bool,
    /// MLU of the hard-min split recovered from the duals.
    pub recovered_mlu: f64,
    pub raw_duals: Vec<f64>,
    pub normalized_duals: Vec<f64>,
    pub passed: bool,
}

impl fmt::Display for DualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "primal {:.9} dual {:.9} gap {:.3e} (tol {:.1e}); Σλc-1 {:.3e}; min λ {:.3e}; \
             primal residual {:.3e}; slackness edge {:.3e} path {:.3e}; recovered MLU {:.9} (unique: {})",
            self.primal,
            self.dual_objective,
            self.gap,
            self.gap_tolerance,
            self.normalization_residual,
            self.min_dual,
            self.primal_residual,
            self.edge_slackness,
            self.path_slackness,
            self.recovered_mlu,
            self.unique_minimizers
        )
    }
}

/// Per-path dual cost `Λ_p = Σ_{e∈p} λ_e`.
pub fn path_costs(pathset: &PathSet, duals: &[f64]) -> Vec<f64> {
    pathset.incidence().mul(duals, 1)
}

/// One-hot split onto each pair's cheapest path (first index on ties).
pub fn hard_min_split(pathset: &PathSet, duals: &[f64]) -> SplitConfig {
    let cost = path_costs(pathset, duals);
    let mut r = vec![0.0; pathset.num_paths()];
    for i in 0..pathset.num_pairs() {
        let range = pathset.path_range(i);
        let best = range.clone().min_by(|&a, &b| cost[a].total_cmp(&cost[b])).unwrap();
        r[best] = 1.0;
    }
    SplitConfig::new(r)
}

/// Computes the duality report without judging it.
pub fn duality_report(
    solution: &OracleSolution,
    topology: &Topology,
    pathset: &PathSet,
    demands: &DemandMatrix,
) -> Result<DualityReport> {
    if !solution.is_optimal() {
        return Err(Error::Infeasible("duality check needs an optimal solution".into()));
    }
    let lam = &solution.duals;
    let m = solution.mlu_opt;
    let cost = path_costs(pathset, lam);
    let pd = pathset.path_demands(demands);
    let mut dual_objective = 0.0;
    let mut unique = true;
    let mut path_slackness: f64 = 0.0;
    let mut simplex_residual: f64 = 0.0;
    for i in 0..pathset.num_pairs() {
        let (s, t) = pathset.pair(i);
        let d = demands.get(s, t);
        let range = pathset.path_range(i);
        let min = range.clone().map(|p| cost[p]).fold(f64::INFINITY, f64::min);
        dual_objective += d * min;
        if d > 0.0 {
            let tie_tol = 1e-9 * min.abs().max(1.0);
            if range.clone().filter(|&p| cost[p] - min <= tie_tol).count() > 1 {
                unique = false;
            }
        }
        for p in range.clone() {
            path_slackness = path_slackness.max((solution.split_opt.ratios[p] * pd[p] * (cost[p] - min)).abs());
        }
        let sum: f64 = solution.split_opt.ratios[range].iter().sum();
        simplex_residual = simplex_residual.max((sum - 1.0).abs());
    }
    let flows = crate::network::edge_flows(topology, pathset, demands, &solution.split_opt)?;
    let mut primal_residual = simplex_residual;
    let mut edge_slackness: f64 = 0.0;
    for e in 0..topology.num_edges() {
        let slack = m * topology.capacity(e) - flows.edge_flows[e];
        primal_residual = primal_residual.max(-slack);
        edge_slackness = edge_slackness.max((lam[e] * slack).abs());
    }
    primal_residual = primal_residual.max(solution.split_opt.ratios.iter().fold(0.0, |a, &r| a.max(-r)));
    let norm: f64 = lam.iter().zip(topology.capacities()).map(|(l, c)| l * c).sum();
    let recovered_mlu = mlu_of(&hard_min_split(pathset, lam), demands, pathset, topology)?;
    let gap = (m - dual_objective).abs();
    let gap_tolerance = DUALITY_GAP_TOL * m.max(1.0);
    let min_dual = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = gap <= gap_tolerance
        && (norm - 1.0).abs() <= 1e-6
        && min_dual >= -1e-9
        && primal_residual <= FEASIBILITY_TOL
        && (!unique || recovered_mlu <= m * (1.0 + 1e-6) + 1e-12);
    Ok(DualityReport {
        primal: m,
        dual_objective,
        gap,
        gap_tolerance,
        normalization_residual: (norm - 1.0).abs(),
        min_dual,
        primal_residual,
        edge_slackness,
        path_slackness,
        unique_minimizers: unique,
        recovered_mlu,
        raw_duals: lam.clone(),
        normalized_duals: solution.normalized_duals(topology),
        passed,
    })
}

/// Checks strong duality, dual normalization, primal feasibility and, when
/// each pair's cheapest path is unique, optimality of the hard-min recovery.
pub fn verify_duality(
    solution: &OracleSolution,
    topology: &Topology,
    pathset: &PathSet,
    demands: &DemandMatrix,
) -> Result<DualityReport> {
    let report = duality_report(solution, topology, pathset, demands)?;
    if report.passed {
        Ok(report)
    } else {
        Err(Error::Numerical(format!("duality verification failed: {report}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::*;
    use crate::network::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_balanced_optimum() {
        let t = triangle();
        let ps = triangle_paths(&t);
        let d = triangle_demand(10.0);
        let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
        assert!((sol.mlu_opt - 0.5).abs() < 1e-9);
        assert!((sol.split_opt.ratios[0] - 0.5).abs() < 1e-9);
        // grid search over r1 ∈ [0, 1] of max(r1, 1 - r1) on unit-capacity-normalized loads
        let grid = (0..=1000)
            .map(|i| {
                let r = i as f64 / 1000.0;
                (10.0 * r / 10.0).max(10.0 * (1.0 - r) / 10.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((sol.mlu_opt - grid).abs() < 1e-9);
        let rep = verify_duality(&sol, &t, &ps, &d).unwrap();
        assert!(rep.gap <= 1e-6);
        let norm: f64 = sol.duals.iter().zip(t.capacities()).map(|(l, c)| l * c).sum();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forced_single_path() {
        let t = Topology::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (1, 2)],
            vec![20.0, 4.0],
        )
        .unwrap();
        let ps = PathSet::new(&t, 4, vec![(0, 2)], vec![vec![vec![0, 1]]]).unwrap();
        let mut d = DemandMatrix::zeros(3);
        d.set(0, 2, 10.0);
        let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
        assert!((sol.mlu_opt - 2.5).abs() < 1e-9);
        assert_eq!(sol.split_opt.ratios, vec![1.0]);
        verify_duality(&sol, &t, &ps, &d).unwrap();
    }

    #[test]
    fn zero_demand() {
        let t = triangle();
        let ps = triangle_paths(&t);
        let d = DemandMatrix::zeros(3);
        let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
        assert_eq!(sol.mlu_opt, 0.0);
        let rep = verify_duality(&sol, &t, &ps, &d).unwrap();
        assert_eq!(rep.gap, 0.0);
    }

    #[test]
    fn disconnected_pair_with_demand_is_infeasible() {
        let t = Topology::new(vec!["a".into(), "b".into(), "c".into()], vec![(0, 1)], vec![1.0]).unwrap();
        let ps = crate::pathgen::compute_pathset(&t, 2).unwrap();
        let mut d = DemandMatrix::zeros(3);
        d.set(0, 2, 1.0);
        let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
        assert_eq!(sol.status, OracleStatus::Infeasible);
        assert_eq!(sol.infeasible_pair, Some((0, 2)));
        assert!(verify_duality(&sol, &t, &ps, &d).is_err());
    }

    #[test]
    fn degenerate_tie_any_combination_is_optimal() {
        // S -> X (cap 1) is a forced bottleneck; X -> T direct or via Y (cap 100)
        let t = Topology::new(
            vec!["S".into(), "X".into(), "Y".into(), "T".into()],
            vec![(0, 1), (1, 3), (1, 2), (2, 3)],
            vec![1.0, 100.0, 100.0, 100.0],
        )
        .unwrap();
        let ps = PathSet::new(&t, 2, vec![(0, 3)], vec![vec![vec![0, 1], vec![0, 2, 3]]]).unwrap();
        let mut d = DemandMatrix::zeros(4);
        d.set(0, 3, 1.0);
        let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
        assert!((sol.mlu_opt - 1.0).abs() < 1e-9);
        let rep = verify_duality(&sol, &t, &ps, &d).unwrap();
        assert!(!rep.unique_minimizers);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a: f64 = rng.random_range(0.0..=1.0);
            let m = mlu_of(&SplitConfig::new(vec![a, 1.0 - a]), &d, &ps, &t).unwrap();
            assert!((m - sol.mlu_opt).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_is_lower_bound_and_strongly_dual() {
        for seed in 0..15 {
            let (t, ps, d) = crate::network::tests::random_instance(seed, 4 + seed as usize % 5, 3);
            let sol = solve_mlu_lp(&t, &ps, &d).unwrap();
            assert!(sol.is_optimal());
            let rep = verify_duality(&sol, &t, &ps, &d).unwrap();
            assert!(rep.gap <= rep.gap_tolerance);
            sol.split_opt.validate(&ps, 1e-9, &[]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let mut r: Vec<f64> = (0..ps.num_paths()).map(|_| rng.random_range(0.0..1.0)).collect();
                for i in 0..ps.num_pairs() {
                    let range = ps.path_range(i);
                    let s: f64 = r[range.clone()].iter().sum();
                    r[range].iter_mut().for_each(|x| *x /= s);
                }
                let m = mlu_of(&SplitConfig::new(r), &d, &ps, &t).unwrap();
                assert!(m >= sol.mlu_opt - 1e-7);
            }
        }
    }

    #[test]
    fn solution_json_shape() {
        let t = triangle();
        let ps = triangle_paths(&t);
        let sol = solve_mlu_lp(&t, &ps, &triangle_demand(10.0)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&sol).unwrap();
        for key in ["mlu", "ratios", "duals", "status"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["status"], "optimal");
    }
}
