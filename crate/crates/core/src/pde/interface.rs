use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::mesh::InterfaceMesh;
use super::{check_len, Dynamics};
use crate::error::{Error, Result};
use crate::sparse::{csr_mul_vec, SpdFactor};
use crate::weighted::WeightOperator;

/// Right-hand side used when assembling a problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForcingSpec {
    Zero,
    /// `f⁺ = t·y + √x + 5` on `x < 1`, `f⁻ = t·x + √(xy) + 6` on `x > 1`.
    Interface,
    /// Forcing matched to `u = e^{−t} sin(πx/2) sin(πy)`. Needs equal betas.
    ManufacturedSine,
}

impl ForcingSpec {
    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Interface => "interface",
            Self::ManufacturedSine => "manufactured-sine",
        }
    }
}

/// Exact solution paired with [`ForcingSpec::ManufacturedSine`].
pub fn manufactured_solution(x: f64, y: f64, t: f64) -> f64 {
    (-t).exp() * (0.5 * PI * x).sin() * (PI * y).sin()
}

/// Initial state of the reference experiment, `√(x y (2−x)(1−y))`.
pub fn truth_initial_condition(x: f64, y: f64) -> f64 {
    (x * y * (2.0 - x) * (1.0 - y)).max(0.0).sqrt()
}

// Interior quadrature points (barycentric) and equal weights; exact for quadratics.
const QUAD: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

fn element_gradients(mesh: &InterfaceMesh, e: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.elements[e].map(|n| mesh.nodes[n]);
    let area = mesh.signed_area(e);
    let twice = 2.0 * area;
    let grads = [
        [(b[1] - c[1]) / twice, (c[0] - b[0]) / twice],
        [(c[1] - a[1]) / twice, (a[0] - c[0]) / twice],
        [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice],
    ];
    (grads, area)
}

/// Sums element matrices from `local`, keeping only rows and columns
/// selected by `map`.
fn assemble(
    mesh: &InterfaceMesh,
    size: usize,
    map: impl Fn(usize) -> Option<usize>,
    local: impl Fn(usize) -> [[f64; 3]; 3],
) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(size, size);
    for (e, el) in mesh.elements.iter().enumerate() {
        let k = local(e);
        for (a, &na) in el.iter().enumerate() {
            let Some(ra) = map(na) else { continue };
            for (b, &nb) in el.iter().enumerate() {
                if let Some(rb) = map(nb) {
                    coo.push(ra, rb, k[a][b]);
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

fn local_mass(mesh: &InterfaceMesh, e: usize) -> [[f64; 3]; 3] {
    let s = mesh.signed_area(e) / 12.0;
    let mut k = [[s; 3]; 3];
    for (i, row) in k.iter_mut().enumerate() {
        row[i] = 2.0 * s;
    }
    k
}

fn local_stiffness(mesh: &InterfaceMesh, e: usize, coef: f64) -> [[f64; 3]; 3] {
    let (g, area) = element_gradients(mesh, e);
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = coef * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    k
}

/// Mass matrix over every node, boundary included.
pub fn assemble_full_mass(mesh: &InterfaceMesh) -> CsrMatrix<f64> {
    assemble(mesh, mesh.nodes.len(), Some, |e| local_mass(mesh, e))
}

/// Load vector `∫ f φ_i` on interior dofs, `f` chosen per subdomain.
pub fn load_vector(mesh: &InterfaceMesh, f: impl Fn(f64, f64, bool) -> f64) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.n_dofs());
    for (e, el) in mesh.elements.iter().enumerate() {
        let verts = el.map(|n| mesh.nodes[n]);
        let left = mesh.in_left_subdomain(e);
        let w = mesh.signed_area(e) / 3.0;
        for bary in QUAD {
            let x = bary[0] * verts[0][0] + bary[1] * verts[1][0] + bary[2] * verts[2][0];
            let y = bary[0] * verts[0][1] + bary[1] * verts[1][1] + bary[2] * verts[2][1];
            let fv = w * f(x, y, left);
            for (a, &n) in el.iter().enumerate() {
                if let Some(d) = mesh.dof_of_node[n] {
                    out[d] += fv * bary[a];
                }
            }
        }
    }
    out
}

/// Backward Euler P1 discretization of the two-material heat equation on
/// `[0, 2] × [0, 1]` with homogeneous Dirichlet data.
#[derive(Debug)]
pub struct DiscreteProblem {
    pub mesh: InterfaceMesh,
    pub mass: Arc<WeightOperator>,
    pub stiffness: CsrMatrix<f64>,
    pub h1_weight: Arc<WeightOperator>,
    pub tau: f64,
    pub n_steps: usize,
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub forcing_spec: ForcingSpec,
    /// `forcing[j - 1]` is the load vector at `t_j = j τ`.
    pub forcing: Vec<DVector<f64>>,
    system: SpdFactor,
}

pub fn steps_for_horizon(tau: f64, t_final: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) || !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau = {tau}, T = {t_final}")));
    }
    let n = (t_final / tau).round();
    if n < 1.0 || (n * tau - t_final).abs() > 1e-12 * t_final.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "T = {t_final} is not an integer multiple of tau = {tau}"
        )));
    }
    Ok(n as usize)
}

pub fn assemble_interface_problem(
    h: f64,
    tau: f64,
    t_final: f64,
    beta_plus: f64,
    beta_minus: f64,
    forcing_spec: ForcingSpec,
) -> Result<DiscreteProblem> {
    let mesh = InterfaceMesh::new(h)?;
    let n_steps = steps_for_horizon(tau, t_final)?;
    if !(beta_plus > 0.0 && beta_minus > 0.0 && beta_plus.is_finite() && beta_minus.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "diffusion coefficients must be positive, got {beta_plus}, {beta_minus}"
        )));
    }
    if forcing_spec == ForcingSpec::ManufacturedSine && beta_plus != beta_minus {
        return Err(Error::InvalidParameter(
            "manufactured forcing requires beta_plus == beta_minus".into(),
        ));
    }
    let m = mesh.n_dofs();
    let map = |n: usize| mesh.dof_of_node[n];
    let mass = assemble(&mesh, m, map, |e| local_mass(&mesh, e));
    let stiffness = assemble(&mesh, m, map, |e| {
        let coef = if mesh.in_left_subdomain(e) { beta_plus } else { beta_minus };
        local_stiffness(&mesh, e, coef)
    });
    let unit = assemble(&mesh, m, map, |e| local_stiffness(&mesh, e, 1.0));
    let system = SpdFactor::new(&(&mass + &(&stiffness * tau)))?;
    let h1 = &mass + &unit;

    let forcing = match forcing_spec {
        ForcingSpec::Zero => vec![DVector::zeros(m); n_steps],
        ForcingSpec::Interface => {
            let slope = load_vector(&mesh, |x, y, left| if left { y } else { x });
            let base = load_vector(&mesh, |x, y, left| {
                if left {
                    x.sqrt() + 5.0
                } else {
                    (x * y).sqrt() + 6.0
                }
            });
            (1..=n_steps).map(|j| &base + &slope * (j as f64 * tau)).collect()
        }
        ForcingSpec::ManufacturedSine => {
            let lambda = beta_plus * (0.25 + 1.0) * PI * PI - 1.0;
            let shape = load_vector(&mesh, |x, y, _| lambda * manufactured_solution(x, y, 0.0));
            (1..=n_steps).map(|j| &shape * (-(j as f64) * tau).exp()).collect()
        }
    };

    Ok(DiscreteProblem {
        mass: Arc::new(WeightOperator::explicit(mass)?),
        h1_weight: Arc::new(WeightOperator::explicit(h1)?),
        mesh,
        stiffness,
        tau,
        n_steps,
        beta_plus,
        beta_minus,
        forcing_spec,
        forcing,
        system,
    })
}

impl DiscreteProblem {
    pub fn dim(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.tau
    }

    fn mass_matrix(&self) -> &CsrMatrix<f64> {
        self.mass.matrix().expect("assembled mass is explicit")
    }

    /// Solves `(M + τA) u^j = M u^{j−1} + τ f^j`.
    pub fn forward_step_linear(&self, u_prev: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        check_len("forward step", self.dim(), u_prev.len())?;
        if j == 0 || j > self.n_steps {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.n_steps,
            });
        }
        let rhs = csr_mul_vec(self.mass_matrix(), u_prev) + &self.forcing[j - 1] * self.tau;
        Ok(self.system.solve(&rhs))
    }

    /// Solves `(M + τAᵀ) u*^{j−1} = M u*^j + τ M (û^j − u^j)`; `A` is symmetric.
    pub fn adjoint_step_linear(
        &self,
        ustar_next: &DVector<f64>,
        data_snapshot: &DVector<f64>,
        obs_snapshot: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let m = self.dim();
        check_len("adjoint step", m, ustar_next.len())?;
        check_len("adjoint step", m, data_snapshot.len())?;
        check_len("adjoint step", m, obs_snapshot.len())?;
        let rhs = ustar_next + (obs_snapshot - data_snapshot) * self.tau;
        Ok(self.system.solve(&csr_mul_vec(self.mass_matrix(), &rhs)))
    }

    /// Applies `(M + τA)⁻¹` to `b`.
    pub fn solve_system(&self, b: &DVector<f64>) -> DVector<f64> {
        self.system.solve(b)
    }

    pub fn truth_initial_condition(&self) -> DVector<f64> {
        self.mesh.interpolate(truth_initial_condition)
    }
}

impl Dynamics for DiscreteProblem {
    fn dim(&self) -> usize {
        self.mesh.n_dofs()
    }

    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn mass(&self) -> &Arc<WeightOperator> {
        &self.mass
    }

    fn h1_weight(&self) -> &Arc<WeightOperator> {
        &self.h1_weight
    }

    fn step_forward(&self, u_prev: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        self.forward_step_linear(u_prev, j)
    }

    fn step_adjoint(
        &self,
        ustar_next: &DVector<f64>,
        forward: &DVector<f64>,
        obs: &DVector<f64>,
        _j: usize,
    ) -> Result<DVector<f64>> {
        self.adjoint_step_linear(ustar_next, forward, obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(a.nrows(), a.ncols());
        for (i, j, v) in a.triplet_iter() {
            d[(i, j)] += v;
        }
        d
    }

    fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
        DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn full_mass_integrates_domain_area() {
        let mesh = InterfaceMesh::new(0.2).unwrap();
        let total: f64 = assemble_full_mass(&mesh).values().iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn unit_betas_give_five_point_laplacian() {
        let p = assemble_interface_problem(0.25, 0.1, 1.0, 1.0, 1.0, ForcingSpec::Zero).unwrap();
        // On this triangulation P1 stiffness reproduces the 5-point stencil.
        let mesh = &p.mesh;
        let a = dense(&p.stiffness);
        for (d, &n) in mesh.node_of_dof.iter().enumerate() {
            assert!((a[(d, d)] - 4.0).abs() < 1e-12);
            let (i, j) = (n % (mesh.nx + 1), n / (mesh.nx + 1));
            for (e, &other) in mesh.node_of_dof.iter().enumerate() {
                if e == d {
                    continue;
                }
                let (k, l) = (other % (mesh.nx + 1), other / (mesh.nx + 1));
                let adjacent = (i.abs_diff(k) + j.abs_diff(l)) == 1;
                let expected = if adjacent { -1.0 } else { 0.0 };
                assert!((a[(d, e)] - expected).abs() < 1e-12, "entry ({d},{e})");
            }
        }
    }

    #[test]
    fn stiffness_symmetric_and_coercive() {
        let p = assemble_interface_problem(0.25, 0.1, 1.0, 1.0, 0.5, ForcingSpec::Zero).unwrap();
        let a = dense(&p.stiffness);
        assert!((&a - a.transpose()).amax() < 1e-14);
        let m = dense(p.mass.matrix().unwrap());
        let unit = dense(p.h1_weight.matrix().unwrap()) - &m;
        // Generalized eigenvalues of (A, A + M) bound the coercivity constant from below.
        let h1 = &unit + &m;
        let chol = h1.clone().cholesky().unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let sym = &linv * &a * linv.transpose();
        let eig = sym.symmetric_eigen();
        let lam_min = eig.eigenvalues.min();
        // Continuous Poincaré estimate: |v|² ≥ (π²(1/4 + 1)) ‖v‖², so
        // |v|²/(|v|² + ‖v‖²) ≥ c/(1 + c) with c ≥ 5π²/4 on the coarse mesh.
        let c = 1.25 * PI * PI;
        assert!(lam_min >= 0.5 * c / (1.0 + c) * 0.99, "lambda_min = {lam_min}");
    }

    #[test]
    fn h1_weight_splits_exactly() {
        let p = assemble_interface_problem(0.2, 0.1, 1.0, 1.0, 0.5, ForcingSpec::Zero).unwrap();
        let unit = assemble(&p.mesh, p.dim(), |n| p.mesh.dof_of_node[n], |e| local_stiffness(&p.mesh, e, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vec(&mut rng, p.dim());
        let lhs = p.h1_weight.norm_sq(&v);
        let rhs = p.mass.norm_sq(&v) + v.dot(&csr_mul_vec(&unit, &v));
        assert!((lhs - rhs).abs() <= 1e-13 * lhs);
        assert!(p.h1_weight.cholesky().unwrap().is_some());
    }

    #[test]
    fn zero_data_stays_zero_and_energy_decays() {
        let p = assemble_interface_problem(0.2, 0.05, 0.5, 1.0, 0.5, ForcingSpec::Zero).unwrap();
        let zero = DVector::zeros(p.dim());
        assert_eq!(p.forward_step_linear(&zero, 1).unwrap(), zero);
        let mut u = p.truth_initial_condition();
        for j in 1..=p.n_steps {
            let next = p.forward_step_linear(&u, j).unwrap();
            assert!(p.mass.norm(&next) <= p.mass.norm(&u));
            u = next;
        }
        assert!(p.forward_step_linear(&u, 0).is_err());
        assert!(p.forward_step_linear(&u, p.n_steps + 1).is_err());
    }

    #[test]
    fn horizon_must_match_step() {
        assert!(steps_for_horizon(0.3, 1.0).is_err());
        assert_eq!(steps_for_horizon(1.0 / 200.0, 1.0).unwrap(), 200);
        assert!(assemble_interface_problem(0.25, 0.1, 1.0, 1.0, 0.5, ForcingSpec::ManufacturedSine).is_err());
        assert!(assemble_interface_problem(0.25, 0.1, 1.0, -1.0, 0.5, ForcingSpec::Zero).is_err());
    }

    #[test]
    fn adjoint_is_transpose_of_forward() {
        let p = assemble_interface_problem(0.1, 0.02, 0.1, 1.0, 0.5, ForcingSpec::Zero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let zero = DVector::zeros(p.dim());
        for _ in 0..5 {
            let a = random_vec(&mut rng, p.dim());
            let b = random_vec(&mut rng, p.dim());
            // (M + τA)⁻¹ M a against b, and a against (M + τA)⁻¹ M b.
            let fa = p.forward_step_linear(&a, 1).unwrap();
            let tb = p.adjoint_step_linear(&b, &zero, &zero).unwrap();
            let lhs = p.mass.inner(&fa, &b);
            let rhs = p.mass.inner(&a, &tb);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn zero_mismatch_gives_zero_adjoint() {
        let p = assemble_interface_problem(0.2, 0.05, 0.5, 1.0, 0.5, ForcingSpec::Interface).unwrap();
        let u = p.truth_initial_condition();
        let z = p.adjoint_step_linear(&DVector::zeros(p.dim()), &u, &u).unwrap();
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn interface_forcing_is_finite_and_positive() {
        let p = assemble_interface_problem(0.1, 0.1, 1.0, 1.0, 0.5, ForcingSpec::Interface).unwrap();
        assert_eq!(p.forcing.len(), 10);
        for f in &p.forcing {
            assert!(f.iter().all(|v| v.is_finite() && *v > 0.0));
        }
        // The load integrates f against the partition of unity minus boundary hats.
        assert!(p.forcing[9].sum() > p.forcing[0].sum());
    }

    #[test]
    fn backward_euler_is_first_order_in_time() {
        let h = 1.0 / 80.0;
        let taus = [1.0 / 5.0, 1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0];
        let mut errs = Vec::new();
        for &tau in &taus {
            let p = assemble_interface_problem(h, tau, 1.0, 1.0, 1.0, ForcingSpec::ManufacturedSine).unwrap();
            let mut u = p.mesh.interpolate(|x, y| manufactured_solution(x, y, 0.0));
            let mut acc = 0.0;
            for j in 1..=p.n_steps {
                u = p.forward_step_linear(&u, j).unwrap();
                let t = j as f64 * tau;
                let exact = p.mesh.interpolate(|x, y| manufactured_solution(x, y, t));
                acc += tau * p.mass.norm_sq(&(&u - exact));
            }
            errs.push(acc.sqrt());
        }
        let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 1.0).abs() <= 0.15, "slope = {slope}, errors = {errs:?}");
    }
}
