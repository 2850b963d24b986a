//! Terminal sets as halfspace intersections, grown from recorded solutions.

mod expand;
mod fit;
mod knn;

pub use expand::{expand, initial_terminal_set, ExpandOutcome, ExpandParams};
pub use fit::{fit_ellipsoid, fit_polytope, sphere_directions, FitOptions};
pub use knn::knn_outlier_filter;

use crate::error::{CoreError, Result};
use crate::opt::solve_diag_qp;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const TERMSET_FORMAT: &str = "psf-terminal-set";
pub const TERMSET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Polytope,
    Ellipsoid,
}

/// One halfspace `normalᵀ x ≤ offset` with a unit normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Facet {
    pub normal: DVector<f64>,
    pub offset: f64,
}

/// Convex terminal region with the sample provenance that built it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalSet {
    pub facets: Vec<Facet>,
    pub method: FitMethod,
    pub generation: u32,
    /// Points every later generation must keep covering.
    pub seeds: Vec<DVector<f64>>,
    /// Squared scaling of the fitted ellipsoid (ellipsoid method only).
    pub ellipsoid_scale_sq: Option<f64>,
}

impl TerminalSet {
    pub fn dim(&self) -> usize {
        self.facets.first().map_or(0, |f| f.normal.len())
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.facets
            .iter()
            .all(|f| f.normal.dot(x) <= f.offset + tol)
    }

    /// Largest facet violation at `x` (0 when inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        self.facets
            .iter()
            .map(|f| f.normal.dot(x) - f.offset)
            .fold(0.0, f64::max)
    }

    /// Chebyshev center and radius by linear programming:
    /// maximize r subject to `aᵀc + r ≤ b` for each (unit-normal) facet.
    pub fn chebyshev(&self) -> Result<(DVector<f64>, f64)> {
        let n = self.dim();
        if self.facets.is_empty() {
            return Err(CoreError::DegenerateGeometry("no facets".into()));
        }
        let m = self.facets.len();
        // Variables [c; r]; one bounding row keeps the LP bounded even for
        // open facet sets.
        let mut a = DMatrix::zeros(m + 1, n + 1);
        let mut b = DVector::zeros(m + 1);
        for (i, f) in self.facets.iter().enumerate() {
            for j in 0..n {
                a[(i, j)] = f.normal[j];
            }
            a[(i, n)] = f.normal.norm();
            b[i] = f.offset;
        }
        a[(m, n)] = 1.0;
        b[m] = 1e9;
        let mut q = DVector::zeros(n + 1);
        q[n] = -1.0;
        let sol = solve_diag_qp(&DVector::zeros(n + 1), &q, &a, &b)?;
        let center = sol.x.rows(0, n).into_owned();
        Ok((center, sol.x[n]))
    }

    pub fn chebyshev_radius(&self) -> Result<f64> {
        self.chebyshev().map(|(_, r)| r)
    }

    /// Push every facet outward by `delta` (same center, radius grows by
    /// `delta` since normals are unit).
    pub fn inflate(&mut self, delta: f64) {
        for f in &mut self.facets {
            f.offset += delta;
        }
    }

    /// Append the state-box facets so the set never leaves the box.
    pub fn intersect_box(&mut self, b: &crate::env::BoxSet) {
        let n = b.dim();
        for d in 0..n {
            let mut up = DVector::zeros(n);
            up[d] = 1.0;
            self.facets.push(Facet {
                normal: up,
                offset: b.hi[d],
            });
            let mut down = DVector::zeros(n);
            down[d] = -1.0;
            self.facets.push(Facet {
                normal: down,
                offset: -b.lo[d],
            });
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let container = serde_json::json!({
            "format": TERMSET_FORMAT,
            "version": TERMSET_VERSION,
            "set": self,
        });
        let bytes = serde_json::to_vec_pretty(&container)
            .map_err(|e| CoreError::Serialization(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| CoreError::Serialization(e.to_string()))?;
        if value["format"] != TERMSET_FORMAT {
            return Err(CoreError::Serialization("unexpected format tag".into()));
        }
        if value["version"] != TERMSET_VERSION {
            return Err(CoreError::Serialization("unsupported version".into()));
        }
        serde_json::from_value(value["set"].clone())
            .map_err(|e| CoreError::Serialization(e.to_string()))
    }
}

/// Candidate record from one feasible filter solution.
#[derive(Debug, Clone)]
pub struct SolutionRecord {
    /// Initial nominal state of the solved problem.
    pub z0: DVector<f64>,
    /// Largest slack over all soft constraint groups.
    pub max_slack: f64,
    /// Step index within the episode.
    pub step: usize,
    /// Episode length.
    pub episode_len: usize,
    /// Nominal tube states z_0..z_N of the stored solution.
    pub tube_centers: Vec<DVector<f64>>,
}

/// Keep the record iff the slack is small and the solution is not close to
/// episode truncation.
pub fn record_solution(
    archive: &mut Vec<SolutionRecord>,
    record: SolutionRecord,
    slack_threshold: f64,
    proximity_threshold: usize,
) -> bool {
    assert!(slack_threshold > 0.0, "slack threshold must be positive");
    assert!(
        proximity_threshold > 0,
        "proximity threshold must be positive"
    );
    let keep = record.max_slack <= slack_threshold
        && record.episode_len.saturating_sub(record.step) >= proximity_threshold;
    if keep {
        archive.push(record);
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn unit_square() -> TerminalSet {
        TerminalSet {
            facets: vec![
                Facet {
                    normal: dvector![1.0, 0.0],
                    offset: 1.0,
                },
                Facet {
                    normal: dvector![-1.0, 0.0],
                    offset: 0.0,
                },
                Facet {
                    normal: dvector![0.0, 1.0],
                    offset: 1.0,
                },
                Facet {
                    normal: dvector![0.0, -1.0],
                    offset: 0.0,
                },
            ],
            method: FitMethod::Polytope,
            generation: 0,
            seeds: vec![],
            ellipsoid_scale_sq: None,
        }
    }

    #[test]
    fn chebyshev_of_unit_square() {
        let set = unit_square();
        let (c, r) = set.chebyshev().unwrap();
        assert!((r - 0.5).abs() < 1e-6);
        assert!((c - dvector![0.5, 0.5]).amax() < 1e-5);
    }

    #[test]
    fn inflate_grows_radius_linearly() {
        let mut set = unit_square();
        set.inflate(0.25);
        assert!((set.chebyshev_radius().unwrap() - 0.75).abs() < 1e-6);
    }

    #[test]
    fn record_solution_thresholds() {
        let mut archive = Vec::new();
        let mk = |slack: f64, step: usize| SolutionRecord {
            z0: dvector![0.0],
            max_slack: slack,
            step,
            episode_len: 200,
            tube_centers: vec![],
        };
        // Zero slack at t=0, T=200: kept.
        assert!(record_solution(&mut archive, mk(0.0, 0), 0.1, 25));
        // t = T−1: rejected by the proximity rule.
        assert!(!record_solution(&mut archive, mk(0.0, 199), 0.1, 25));
        // Slack above threshold: rejected.
        assert!(!record_solution(&mut archive, mk(0.2, 0), 0.1, 25));
        // Boundary: T − t = 25 is kept.
        assert!(record_solution(&mut archive, mk(0.05, 175), 0.1, 25));
        assert_eq!(archive.len(), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("terminal_set.json");
        let mut set = unit_square();
        set.seeds = vec![dvector![0.5, 0.5]];
        set.save(&path).unwrap();
        let loaded = TerminalSet::load(&path).unwrap();
        assert_eq!(loaded.facets.len(), 4);
        assert_eq!(loaded.generation, 0);
        assert_eq!(loaded.seeds.len(), 1);
        assert!(loaded.contains(&dvector![0.5, 0.5], 0.0));
    }
}
