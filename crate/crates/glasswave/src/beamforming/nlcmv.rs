//! Minimum-variance design with point-noise terms and a white-noise-gain
//! inequality, solved per bin by Lagrangian bisection.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{ChannelResponse, CovarianceMatrix};
use crate::linalg;

use super::{BeamformerWeights, Designer, DEFAULT_LOADING};

/// One directional interferer to suppress: its channel response and the
/// nonnegative weight it carries in the objective.
#[derive(Debug, Clone)]
pub struct PointSource {
    pub response: ChannelResponse,
    pub weight: f64,
}

/// Power spectral density of the point noise across bins.
#[derive(Debug, Clone)]
pub enum PointPsd {
    Constant(f64),
    PerBin(Vec<f64>),
}

impl Default for PointPsd {
    fn default() -> Self {
        PointPsd::Constant(1.0)
    }
}

impl PointPsd {
    fn at(&self, bin: usize) -> f64 {
        match self {
            PointPsd::Constant(v) => *v,
            PointPsd::PerBin(values) => values[bin],
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlcmvProblem {
    pub target: ChannelResponse,
    pub diffuse_cov: CovarianceMatrix,
    pub point_sources: Vec<PointSource>,
    pub point_psd: PointPsd,
}

impl NlcmvProblem {
    pub fn validate(&self) -> Result<()> {
        let m = self.target.mic_count();
        let bins = self.target.bin_count();
        if self.diffuse_cov.mic_count() != m || self.diffuse_cov.data.dim().0 != bins {
            return Err(Error::ShapeMismatch {
                expected: format!("covariance of {bins} bins x {m} mics"),
                got: format!(
                    "{} bins x {} mics",
                    self.diffuse_cov.data.dim().0,
                    self.diffuse_cov.mic_count()
                ),
            });
        }
        for (n, source) in self.point_sources.iter().enumerate() {
            if source.weight < 0.0 || !source.weight.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "point-source weight {n} must be nonnegative, got {}",
                    source.weight
                )));
            }
            if source.response.mic_count() != m || source.response.bin_count() != bins {
                return Err(Error::ShapeMismatch {
                    expected: format!("point response of {bins} bins x {m} mics"),
                    got: format!(
                        "{} bins x {} mics",
                        source.response.bin_count(),
                        source.response.mic_count()
                    ),
                });
            }
        }
        match &self.point_psd {
            PointPsd::Constant(v) => {
                if *v < 0.0 || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "point PSD must be nonnegative, got {v}"
                    )));
                }
            }
            PointPsd::PerBin(values) => {
                if values.len() != bins {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{bins} PSD values"),
                        got: format!("{}", values.len()),
                    });
                }
                if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidArgument("point PSD must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NlcmvSolverConfig {
    pub max_bisection_steps: usize,
    /// Constraint slack: the returned weights satisfy `c(w) <= tol`.
    pub tol: f64,
    pub loading: f64,
}

impl Default for NlcmvSolverConfig {
    fn default() -> Self {
        NlcmvSolverConfig {
            max_bisection_steps: 60,
            tol: 1e-6,
            loading: DEFAULT_LOADING,
        }
    }
}

/// Per-bin solve report.
#[derive(Debug, Clone)]
pub struct NlcmvDiagnostics {
    /// Achieved objective `h^H A h` per bin.
    pub objective: Vec<f64>,
    /// Achieved constraint value `c = h^H Psi h` per bin.
    pub constraint: Vec<f64>,
    /// Multiplier the bisection settled on per bin (0 when inactive).
    pub lambda: Vec<f64>,
}

const LAMBDA_MAX: f64 = 1e12;

/// Designs the constrained minimum-variance beamformer.
///
/// Per bin, minimizes `h^H A h` with `A = Phi_dd + phi_pp * sum alpha_n g_n g_n^H`
/// subject to `h^H g = 1` and `h^H Psi h <= tol`, where
/// `Psi = I - g g^H M / sum_m |G_m|^2`. The inequality is handled by growing a
/// single multiplier on `Psi` and bisecting until the constraint is met.
pub fn design_nlcmv(
    problem: &NlcmvProblem,
    solver: &NlcmvSolverConfig,
) -> Result<(BeamformerWeights, NlcmvDiagnostics)> {
    problem.validate()?;
    let bins = problem.target.bin_count();
    let m = problem.target.mic_count();
    let mut weights = Array2::zeros((bins, m));
    let mut diagnostics = NlcmvDiagnostics {
        objective: Vec::with_capacity(bins),
        constraint: Vec::with_capacity(bins),
        lambda: Vec::with_capacity(bins),
    };

    for bin in 0..bins {
        let g = problem.target.entries.row(bin).to_owned();
        let a = assemble_objective(problem, bin);
        let psi = constraint_matrix(&g);
        let (h, lambda) = solve_bin(&a, &psi, &g, solver)
            .map_err(|e| annotate_bin(e, bin))?;
        diagnostics.objective.push(linalg::quad_form(a.view(), h.view()));
        diagnostics.constraint.push(linalg::quad_form(psi.view(), h.view()));
        diagnostics.lambda.push(lambda);
        weights.row_mut(bin).assign(&h);
    }

    Ok((
        BeamformerWeights {
            weights,
            steer: problem.target.source,
            steer_model: problem.target.model,
            designer: Designer::Nlcmv,
            grid: problem.target.grid.clone(),
        },
        diagnostics,
    ))
}

fn annotate_bin(e: Error, bin: usize) -> Error {
    match e {
        Error::NumericalFailure(msg) => Error::NumericalFailure(format!("bin {bin}: {msg}")),
        Error::InfeasibleBin { lambda, .. } => Error::InfeasibleBin { bin, lambda },
        other => other,
    }
}

/// `A = Phi_dd + phi_pp(w) * sum_n alpha_n g_n g_n^H` at one bin.
fn assemble_objective(problem: &NlcmvProblem, bin: usize) -> Array2<Complex64> {
    let m = problem.target.mic_count();
    let mut a = problem
        .diffuse_cov
        .data
        .index_axis(ndarray::Axis(0), bin)
        .to_owned();
    let psd = problem.point_psd.at(bin);
    for source in &problem.point_sources {
        let gn = source.response.entries.row(bin);
        let scale = psd * source.weight;
        if scale == 0.0 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] += scale * gn[i] * gn[j].conj();
            }
        }
    }
    a
}

/// `Psi = I - g g^H * M / sum |G_m|^2`.
fn constraint_matrix(g: &Array1<Complex64>) -> Array2<Complex64> {
    let m = g.len();
    let energy: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    let scale = m as f64 / energy;
    let mut psi = Array2::zeros((m, m));
    for i in 0..m {
        psi[(i, i)] = Complex64::new(1.0, 0.0);
        for j in 0..m {
            psi[(i, j)] -= scale * g[i] * g[j].conj();
        }
    }
    psi
}

fn solve_bin(
    a: &Array2<Complex64>,
    psi: &Array2<Complex64>,
    g: &Array1<Complex64>,
    solver: &NlcmvSolverConfig,
) -> Result<(Array1<Complex64>, f64)> {
    let eval = |lambda: f64| -> Result<(Array1<Complex64>, f64)> {
        let m = a.nrows();
        let mut b = a.clone();
        if lambda != 0.0 {
            for i in 0..m {
                for j in 0..m {
                    b[(i, j)] += lambda * psi[(i, j)];
                }
            }
        }
        linalg::diagonal_load(&mut b, solver.loading);
        let x = linalg::solve(b.view(), g.view())?;
        let denom = linalg::cdot(g.view(), x.view());
        if denom.norm() < 1e-300 {
            return Err(Error::NumericalFailure("distortionless normalization collapsed".into()));
        }
        let h = x.mapv(|v| v / denom);
        let c = linalg::quad_form(psi.view(), h.view());
        if !c.is_finite() {
            return Err(Error::NumericalFailure("non-finite constraint value".into()));
        }
        Ok((h, c))
    };

    let (h0, c0) = eval(0.0)?;
    if c0 <= solver.tol {
        return Ok((h0, 0.0));
    }

    // Grow lambda until the constraint is satisfied, then bisect down.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let (mut h_hi, mut c_hi) = eval(hi)?;
    while c_hi > solver.tol {
        lo = hi;
        hi *= 8.0;
        if hi > LAMBDA_MAX {
            return Err(Error::InfeasibleBin { bin: 0, lambda: hi });
        }
        let (h, c) = eval(hi)?;
        h_hi = h;
        c_hi = c;
    }

    for _ in 0..solver.max_bisection_steps {
        if hi - lo <= 1e-9 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (h, c) = eval(mid)?;
        if c <= solver.tol {
            hi = mid;
            h_hi = h;
        } else {
            lo = mid;
        }
    }

    Ok((h_hi, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        diffuse_covariance, steering_vector, ArrayGeometry, FrequencyGrid, PropagationModel,
        SourceDescriptor,
    };

    fn small_setup() -> (ArrayGeometry, FrequencyGrid) {
        let geometry = ArrayGeometry::new(
            "tri",
            vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.05, 0.0]],
            0,
        )
        .unwrap();
        let grid = FrequencyGrid::new(16_000.0, 64, 8).unwrap();
        (geometry, grid)
    }

    #[test]
    fn no_point_sources_with_slack_constraint_matches_mvdr() {
        let (geometry, grid) = small_setup();
        let target = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(0.0),
            &grid,
            PropagationModel::FarField,
        )
        .unwrap();
        let cov = diffuse_covariance(&geometry, &grid).unwrap();
        // A wide-open tolerance keeps lambda at zero on every bin, which is
        // exactly the MVDR solve on the loaded diffuse covariance.
        let solver = NlcmvSolverConfig {
            tol: 1e9,
            ..NlcmvSolverConfig::default()
        };
        let problem = NlcmvProblem {
            target: target.clone(),
            diffuse_cov: cov.clone(),
            point_sources: vec![],
            point_psd: PointPsd::default(),
        };
        let (nlcmv, diagnostics) = design_nlcmv(&problem, &solver).unwrap();
        let mvdr = super::super::design_mvdr(&target, &cov, DEFAULT_LOADING).unwrap();
        assert!(diagnostics.lambda.iter().all(|l| *l == 0.0));
        let worst = nlcmv
            .weights
            .iter()
            .zip(mvdr.weights.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "worst deviation {worst}");
    }

    #[test]
    fn solution_meets_contract_at_every_bin() {
        let (geometry, grid) = small_setup();
        let target = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(0.0),
            &grid,
            PropagationModel::FarField,
        )
        .unwrap();
        let null = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(120.0),
            &grid,
            PropagationModel::FarField,
        )
        .unwrap();
        let cov = diffuse_covariance(&geometry, &grid).unwrap();
        let problem = NlcmvProblem {
            target: target.clone(),
            diffuse_cov: cov,
            point_sources: vec![PointSource {
                response: null,
                weight: 10.0,
            }],
            point_psd: PointPsd::default(),
        };
        let (weights, diagnostics) = design_nlcmv(&problem, &NlcmvSolverConfig::default()).unwrap();
        for bin in 0..8 {
            let g = target.entries.row(bin);
            let resp = linalg::cdot(weights.weights.row(bin), g);
            assert!((resp - Complex64::new(1.0, 0.0)).norm() <= 1e-8);
            assert!(diagnostics.constraint[bin] <= 1e-6 + 1e-12);
        }
    }

    #[test]
    fn deterministic_given_problem_and_config() {
        let (geometry, grid) = small_setup();
        let target = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(45.0),
            &grid,
            PropagationModel::FarField,
        )
        .unwrap();
        let cov = diffuse_covariance(&geometry, &grid).unwrap();
        let problem = NlcmvProblem {
            target,
            diffuse_cov: cov,
            point_sources: vec![],
            point_psd: PointPsd::default(),
        };
        let (first, _) = design_nlcmv(&problem, &NlcmvSolverConfig::default()).unwrap();
        let (second, _) = design_nlcmv(&problem, &NlcmvSolverConfig::default()).unwrap();
        assert_eq!(first.weights, second.weights);
    }

    #[test]
    fn rejects_negative_point_weight() {
        let (geometry, grid) = small_setup();
        let target = steering_vector(
            &geometry,
            &SourceDescriptor::azimuth(0.0),
            &grid,
            PropagationModel::FarField,
        )
        .unwrap();
        let cov = diffuse_covariance(&geometry, &grid).unwrap();
        let problem = NlcmvProblem {
            target: target.clone(),
            diffuse_cov: cov,
            point_sources: vec![PointSource {
                response: target,
                weight: -1.0,
            }],
            point_psd: PointPsd::default(),
        };
        assert!(design_nlcmv(&problem, &NlcmvSolverConfig::default()).is_err());
    }
}
