use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dense::thin_svd;
use crate::error::{Error, Result};
use crate::weighted::{write_dense_matrix_market, WeightOperator, WeightedFactorization, CORE_CUTOFF};

/// Residuals below this fraction of the snapshot norm are rounding noise and
/// are always routed to the pending block, whatever `tol_p` says.
pub const DEPENDENCE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpodTolerances {
    pub tol_p: f64,
    pub tol_sv: f64,
    pub tol_o: f64,
    pub reorth_cap: usize,
}

impl Default for IpodTolerances {
    fn default() -> Self {
        Self {
            tol_p: 0.0,
            tol_sv: 0.0,
            tol_o: 1e-12,
            reorth_cap: 5,
        }
    }
}

impl IpodTolerances {
    /// Same threshold for p- and SV-truncation, default orthogonality settings.
    pub fn uniform(tol: f64) -> Self {
        Self {
            tol_p: tol,
            tol_sv: tol,
            ..Self::default()
        }
    }

    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.tol_p) || !finite_nonneg(self.tol_sv) {
            return Err(Error::InvalidParameter(format!(
                "truncation tolerances must be finite and nonnegative (tol_p = {}, tol_sv = {})",
                self.tol_p, self.tol_sv
            )));
        }
        if !(self.tol_o.is_finite() && self.tol_o > 0.0) {
            return Err(Error::InvalidParameter(format!("tol_o must be positive, got {}", self.tol_o)));
        }
        if self.reorth_cap == 0 {
            return Err(Error::InvalidParameter("reorth_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// p-truncation: coefficients buffered, basis untouched.
    Buffered,
    /// Basis extended without loss.
    Exact,
    /// Basis extended, then the weakest direction dropped.
    SvTruncated,
}

/// What a single update did. `lambda` and `mu` are only filled for
/// non-buffered updates: `lambda` holds the singular values entering the
/// bordered SVD (after any pending block was folded in), `mu` its output.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub kind: UpdateKind,
    pub p: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub reorth_passes: usize,
}

#[derive(Debug, Clone)]
pub struct IpodState {
    weight: Arc<WeightOperator>,
    tols: IpodTolerances,
    v: DMatrix<f64>,
    sigma: DVector<f64>,
    w: DMatrix<f64>,
    pending: Vec<DVector<f64>>,
    v0: DMatrix<f64>,
    e_p: f64,
    e_sv: f64,
    count: usize,
    hs_sq_stream: f64,
    finalized: bool,
    warned_width: bool,
}

fn check_snapshot(weight: &WeightOperator, u: &DVector<f64>) -> Result<()> {
    if u.len() != weight.dim() {
        return Err(Error::DimensionMismatch {
            context: "snapshot",
            expected: weight.dim(),
            actual: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("snapshot"));
    }
    Ok(())
}

impl IpodState {
    pub fn init(u1: &DVector<f64>, weight: Arc<WeightOperator>, tols: IpodTolerances) -> Result<Self> {
        tols.validate()?;
        check_snapshot(&weight, u1)?;
        let norm_sq = weight.norm_sq(u1);
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroSnapshot);
        }
        Ok(Self {
            v: DMatrix::from_column_slice(u1.len(), 1, (u1 / norm).as_slice()),
            sigma: DVector::from_element(1, norm),
            w: DMatrix::from_element(1, 1, 1.0),
            pending: Vec::new(),
            v0: DMatrix::identity(1, 1),
            e_p: 0.0,
            e_sv: 0.0,
            count: 1,
            hs_sq_stream: norm_sq,
            finalized: false,
            warned_width: false,
            weight,
            tols,
        })
    }

    pub fn weight(&self) -> &Arc<WeightOperator> {
        &self.weight
    }

    pub fn tolerances(&self) -> IpodTolerances {
        self.tols
    }

    /// Stored basis. Between updates any pending rotation is the identity;
    /// see [`IpodState::effective_basis`].
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn deferred_rotation(&self) -> &DMatrix<f64> {
        &self.v0
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn pending_width(&self) -> usize {
        self.pending.len()
    }

    pub fn e_p(&self) -> f64 {
        self.e_p
    }

    pub fn e_sv(&self) -> f64 {
        self.e_sv
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn hs_sq_stream(&self) -> f64 {
        self.hs_sq_stream
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// `V · V₀`, the basis the current `Σ` refers to.
    pub fn effective_basis(&self) -> DMatrix<f64> {
        &self.v * &self.v0
    }

    /// Theorem-style bound on the HS compression error: `e_p + e_sv`.
    pub fn error_bound(&self) -> f64 {
        self.e_p + self.e_sv
    }

    /// `sqrt(retained energy / streamed energy)`. Pending coefficients count
    /// as retained since folding them in is lossless.
    pub fn energy_ratio(&self) -> Result<f64> {
        if self.hs_sq_stream <= 0.0 {
            return Err(Error::EmptyStream);
        }
        let retained: f64 = self.sigma.iter().map(|s| s * s).sum::<f64>()
            + self.pending.iter().map(|b| b.norm_squared()).sum::<f64>();
        Ok((retained / self.hs_sq_stream).sqrt().min(1.0))
    }

    /// Ingests one snapshot.
    pub fn update(&mut self, u: &DVector<f64>) -> Result<UpdateReport> {
        check_snapshot(&self.weight, u)?;
        self.finalized = false;

        let mu_new = self.weight.apply(u);
        let u_norm_sq = mu_new.dot(u).max(0.0);
        let mut b = self.v.tr_mul(&mu_new);
        let residual = u - &self.v * &b;
        let p = self.weight.norm(&residual);

        // A basis spanning the whole space leaves only rounding in the
        // residual, and so does one the residual cannot be pulled away from.
        let mut extension = None;
        if p >= self.tols.tol_p && p > DEPENDENCE_FLOOR * u_norm_sq.sqrt() && self.v.ncols() < self.v.nrows() {
            match self.orthonormalize(&residual / p) {
                Ok(found) => extension = Some(found),
                Err(Error::NumericalDegradation { passes, defect }) => {
                    log::debug!("residual {p:e} not separable after {passes} passes (defect {defect:e}), buffering")
                }
                Err(e) => return Err(e),
            }
        }

        let Some((e, reorth_passes)) = extension else {
            self.pending.push(b);
            self.e_p += p;
            self.count += 1;
            self.hs_sq_stream += u_norm_sq;
            let l = self.rank();
            if !self.warned_width && self.pending.len() > 10 * l {
                warn!("pending block width {} exceeds 10x the rank {}", self.pending.len(), l);
                self.warned_width = true;
            }
            return Ok(UpdateReport {
                kind: UpdateKind::Buffered,
                p,
                lambda: Vec::new(),
                mu: Vec::new(),
                reorth_passes: 0,
            });
        };

        if !self.pending.is_empty() {
            self.flush_pending();
            b = self.v0.tr_mul(&b);
        }

        let l = self.rank();
        let mut bordered = DMatrix::zeros(l + 1, l + 1);
        for i in 0..l {
            bordered[(i, i)] = self.sigma[i];
            bordered[(i, l)] = b[i];
        }
        bordered[(l, l)] = p;
        let svd = thin_svd(&bordered)?;
        let (left, right, mu) = (svd.u, svd.v, svd.s);
        let mu_last = mu[l];

        // V₁ = blkdiag(V₀, 1); the pending rotation is applied here, once.
        let mut rotation = DMatrix::zeros(l + 1, l + 1);
        rotation.view_mut((0, 0), (l, l)).copy_from(&self.v0);
        rotation[(l, l)] = 1.0;
        let rotation = rotation * left;

        let mut extended = self.v.clone().insert_column(l, 0.0);
        extended.set_column(l, &e);

        let keep_all = mu_last > self.tols.tol_sv && mu_last > CORE_CUTOFF * mu[0];
        let keep = if keep_all { l + 1 } else { l };

        let rows = self.w.nrows();
        let mut w_new = DMatrix::zeros(rows + 1, keep);
        w_new
            .view_mut((0, 0), (rows, keep))
            .copy_from(&(&self.w * right.view((0, 0), (l, keep))));
        w_new.row_mut(rows).copy_from(&right.view((l, 0), (1, keep)));

        let lambda: Vec<f64> = self.sigma.iter().copied().collect();
        self.v = extended * rotation.columns(0, keep);
        self.sigma = mu.rows(0, keep).into_owned();
        self.w = w_new;
        self.v0 = DMatrix::identity(keep, keep);
        if !keep_all {
            self.e_sv += mu_last;
        }
        self.count += 1;
        self.hs_sq_stream += u_norm_sq;

        Ok(UpdateReport {
            kind: if keep_all { UpdateKind::Exact } else { UpdateKind::SvTruncated },
            p,
            lambda,
            mu: mu.iter().copied().collect(),
            reorth_passes,
        })
    }

    /// Folds the pending block into `Σ` and `W`; the left rotation is parked
    /// in `V₀`.
    fn flush_pending(&mut self) {
        let l = self.rank();
        let d = self.pending.len();
        let mut block = DMatrix::zeros(l, l + d);
        for i in 0..l {
            block[(i, i)] = self.sigma[i];
        }
        for (k, b) in self.pending.iter().enumerate() {
            block.set_column(l + k, b);
        }
        let svd = thin_svd(&block).expect("pending block is finite");
        let (left, right) = (svd.u, svd.v);

        let rows = self.w.nrows();
        let mut w_new = DMatrix::zeros(rows + d, l);
        w_new
            .view_mut((0, 0), (rows, l))
            .copy_from(&(&self.w * right.view((0, 0), (l, l))));
        w_new.view_mut((rows, 0), (d, l)).copy_from(&right.view((l, 0), (d, l)));

        self.v0 = left;
        self.sigma = svd.s;
        self.w = w_new;
        self.pending.clear();
        self.warned_width = false;
    }

    /// Re-projects `e` against the basis until `max |Vᵀ M e| ≤ tol_o`.
    fn orthonormalize(&self, mut e: DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let mut passes = 0;
        loop {
            let coeffs = self.v.tr_mul(&self.weight.apply(&e));
            let defect = coeffs.amax();
            if defect <= self.tols.tol_o {
                return Ok((e, passes));
            }
            if passes == self.tols.reorth_cap {
                return Err(Error::NumericalDegradation { passes, defect });
            }
            e -= &self.v * coeffs;
            let norm = self.weight.norm(&e);
            if norm == 0.0 {
                return Err(Error::NumericalDegradation { passes, defect });
            }
            e /= norm;
            passes += 1;
        }
    }

    /// Flushes the pending block and materializes the deferred rotation.
    pub fn finalize(&mut self) {
        if !self.pending.is_empty() {
            self.flush_pending();
        }
        if self.v0.nrows() != self.v0.ncols() || !self.v0.is_identity(0.0) {
            self.v = &self.v * &self.v0;
            let l = self.rank();
            self.v0 = DMatrix::identity(l, l);
        }
        self.finalized = true;
    }

    /// Decompressed snapshot `j` (1-based) of a stream whose snapshots were
    /// scaled by `√τ` before ingestion.
    pub fn reconstruct(&self, j: usize, tau: f64) -> Result<DVector<f64>> {
        if !self.finalized {
            return Err(Error::NotFinalized("reconstruct"));
        }
        if j == 0 || j > self.count {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.count,
            });
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        let coeffs = self.w.row(j - 1).transpose().component_mul(&self.sigma);
        Ok(&self.v * coeffs / tau.sqrt())
    }

    /// The full compressed matrix `V Σ Wᵀ` (test and diagnostic use).
    pub fn reconstruct_all(&self) -> Result<DMatrix<f64>> {
        Ok(self.factorization()?.reconstruct())
    }

    pub fn factorization(&self) -> Result<WeightedFactorization> {
        if !self.finalized {
            return Err(Error::NotFinalized("factorization"));
        }
        Ok(WeightedFactorization {
            v: self.v.clone(),
            sigma: self.sigma.clone(),
            w: self.w.clone(),
            weight: Arc::clone(&self.weight),
        })
    }

    /// Matrix Market dump of the basis.
    pub fn write_basis_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dense_matrix_market(&self.effective_basis(), path)
    }

    pub(super) fn from_parts(parts: StateParts) -> Self {
        let l = parts.sigma.len();
        Self {
            weight: parts.weight,
            tols: parts.tols,
            v: parts.v,
            sigma: parts.sigma,
            w: parts.w,
            pending: Vec::new(),
            v0: DMatrix::identity(l, l),
            e_p: parts.e_p,
            e_sv: parts.e_sv,
            count: parts.count,
            hs_sq_stream: parts.hs_sq_stream,
            finalized: true,
            warned_width: false,
        }
    }
}

pub(super) struct StateParts {
    pub weight: Arc<WeightOperator>,
    pub tols: IpodTolerances,
    pub v: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub w: DMatrix<f64>,
    pub e_p: f64,
    pub e_sv: f64,
    pub count: usize,
    pub hs_sq_stream: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighted::{core_weighted_svd, hs_norm_sq, m_orthonormality_defect};
    use nalgebra::dvector;
    use nalgebra_sparse::{CooMatrix, CsrMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id(m: usize) -> Arc<WeightOperator> {
        Arc::new(WeightOperator::identity(m))
    }

    fn mass_1d(m: usize) -> Arc<WeightOperator> {
        let h = 1.0 / (m + 1) as f64;
        let mut coo = CooMatrix::new(m, m);
        for i in 0..m {
            coo.push(i, i, 4.0 * h / 6.0);
            if i + 1 < m {
                coo.push(i, i + 1, h / 6.0);
                coo.push(i + 1, i, h / 6.0);
            }
        }
        Arc::new(WeightOperator::explicit(CsrMatrix::from(&coo)).unwrap())
    }

    fn stream(state: &mut IpodState, cols: &DMatrix<f64>) {
        for c in 1..cols.ncols() {
            state.update(&cols.column(c).into_owned()).unwrap();
        }
    }

    fn low_rank_plus_noise(m: usize, n: usize, r: usize, noise: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0));
        let t = DMatrix::from_fn(r, n, |i, j| {
            let s = 10f64.powi(-(i as i32));
            s * ((j as f64) * 0.05 * (i + 1) as f64 + i as f64).cos()
        });
        a * t + DMatrix::from_fn(m, n, |_, _| noise * rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_examples() {
        let s = IpodState::init(&dvector![3.0, 0.0], id(2), IpodTolerances::default()).unwrap();
        assert_eq!(s.sigma()[0], 3.0);
        assert_eq!(s.v().column(0), dvector![1.0, 0.0]);
        assert_eq!(s.w()[(0, 0)], 1.0);
        assert_eq!(s.error_bound(), 0.0);

        let d = Arc::new(WeightOperator::diagonal(&[4.0, 1.0]).unwrap());
        let s = IpodState::init(&dvector![1.0, 0.0], d, IpodTolerances::default()).unwrap();
        assert_eq!(s.sigma()[0], 2.0);
        assert_eq!(s.v()[(0, 0)], 0.5);

        assert!(matches!(
            IpodState::init(&dvector![0.0, 0.0], id(2), IpodTolerances::default()),
            Err(Error::ZeroSnapshot)
        ));
    }

    #[test]
    fn invalid_tolerances_rejected() {
        let tols = IpodTolerances {
            reorth_cap: 0,
            ..IpodTolerances::default()
        };
        assert!(IpodState::init(&dvector![1.0], id(1), tols).is_err());
        assert!(IpodState::init(&dvector![1.0], id(1), IpodTolerances::uniform(-1.0)).is_err());
    }

    #[test]
    fn duplicate_is_buffered() {
        let tols = IpodTolerances {
            tol_p: 1e-10,
            ..IpodTolerances::default()
        };
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), tols).unwrap();
        let r = s.update(&dvector![1.0, 0.0]).unwrap();
        assert_eq!(r.kind, UpdateKind::Buffered);
        assert_eq!(r.p, 0.0);
        assert_eq!(s.pending_width(), 1);
        assert_eq!(s.e_p(), 0.0);
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn orthogonal_update_is_exact() {
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), IpodTolerances::default()).unwrap();
        let r = s.update(&dvector![0.0, 1.0]).unwrap();
        assert_eq!(r.kind, UpdateKind::Exact);
        s.finalize();
        assert_eq!(s.rank(), 2);
        for v in s.sigma().iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let rec = s.reconstruct_all().unwrap();
        assert!((rec - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn small_residual_is_p_truncated() {
        let delta = 1e-9;
        let tols = IpodTolerances {
            tol_p: 1e-6,
            ..IpodTolerances::default()
        };
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), tols).unwrap();
        let r = s.update(&dvector![1.0, delta]).unwrap();
        assert_eq!(r.kind, UpdateKind::Buffered);
        assert!((s.e_p() - delta).abs() < 1e-24);
        assert!((s.error_bound() - delta).abs() < 1e-24);
        s.finalize();
        let exact = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, delta]);
        let err = (s.reconstruct_all().unwrap() - exact).norm();
        assert!((err - delta).abs() < 1e-15);
    }

    #[test]
    fn finalize_folds_buffered_duplicates() {
        let tols = IpodTolerances {
            tol_p: 1e-10,
            ..IpodTolerances::default()
        };
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), tols).unwrap();
        s.update(&dvector![1.0, 0.0]).unwrap();
        s.update(&dvector![1.0, 0.0]).unwrap();
        s.finalize();
        assert_eq!(s.w().shape(), (3, 1));
        assert!((s.sigma()[0] - 3f64.sqrt()).abs() < 1e-14);
        let w0 = s.w()[(0, 0)].abs();
        for j in 0..3 {
            assert!((s.w()[(j, 0)].abs() - w0).abs() < 1e-14);
        }
        for j in 1..=3 {
            s.reconstruct(j, 1.0).unwrap();
        }
        assert!(s.reconstruct(4, 1.0).is_err());
        assert!(s.reconstruct(0, 1.0).is_err());
    }

    #[test]
    fn finalize_is_noop_on_clean_state() {
        let mut s = IpodState::init(&dvector![1.0, 2.0], id(2), IpodTolerances::default()).unwrap();
        s.update(&dvector![0.5, -1.0]).unwrap();
        let before = (s.v().clone(), s.sigma().clone(), s.w().clone());
        s.finalize();
        assert_eq!(before, (s.v().clone(), s.sigma().clone(), s.w().clone()));
    }

    #[test]
    fn reconstruct_requires_finalize() {
        let s = IpodState::init(&dvector![1.0, 2.0], id(2), IpodTolerances::default()).unwrap();
        assert!(matches!(s.reconstruct(1, 1.0), Err(Error::NotFinalized(_))));
        let mut s = s;
        s.finalize();
        let u = s.reconstruct(1, 1.0).unwrap();
        assert!((u - dvector![1.0, 2.0]).amax() < 1e-15);
    }

    #[test]
    fn reconstruct_inverts_sqrt_tau_scaling() {
        let tau: f64 = 0.01;
        let data = low_rank_plus_noise(30, 12, 3, 0.0, 4);
        let scaled = &data * tau.sqrt();
        let mut s = IpodState::init(&scaled.column(0).into_owned(), mass_1d(30), IpodTolerances::default()).unwrap();
        stream(&mut s, &scaled);
        s.finalize();
        for j in 1..=12 {
            let col = data.column(j - 1).into_owned();
            let rec = s.reconstruct(j, tau).unwrap();
            assert!((rec - &col).norm() <= 1e-10 * col.norm());
        }
    }

    #[test]
    fn update_rejects_bad_input() {
        let mut s = IpodState::init(&dvector![1.0, 2.0], id(2), IpodTolerances::default()).unwrap();
        assert!(matches!(s.update(&dvector![1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(s.update(&dvector![f64::NAN, 1.0]), Err(Error::NonFinite(_))));
        assert_eq!(s.count(), 1);
    }

    #[test]
    fn energy_ratio_examples() {
        let mut s = IpodState::init(&dvector![1.0, 0.0, 0.0], id(3), IpodTolerances::default()).unwrap();
        s.update(&dvector![0.0, 2.0, 1.0]).unwrap();
        assert!((s.energy_ratio().unwrap() - 1.0).abs() < 1e-12);

        let delta = 1e-4;
        let tols = IpodTolerances {
            tol_p: 1e-3,
            ..IpodTolerances::default()
        };
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), tols).unwrap();
        s.update(&dvector![0.0, delta]).unwrap();
        let expected = (1.0 / (1.0 + delta * delta)).sqrt();
        assert!((s.energy_ratio().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn sv_truncation_charges_ledger() {
        let tols = IpodTolerances {
            tol_p: 1e-12,
            tol_sv: 1e-3,
            ..IpodTolerances::default()
        };
        let mut s = IpodState::init(&dvector![1.0, 0.0], id(2), tols).unwrap();
        let r = s.update(&dvector![0.0, 1e-4]).unwrap();
        assert_eq!(r.kind, UpdateKind::SvTruncated);
        assert_eq!(s.rank(), 1);
        assert!((s.e_sv() - 1e-4).abs() < 1e-18);
        s.finalize();
        let exact = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1e-4]);
        let err = (s.reconstruct_all().unwrap() - exact).norm();
        assert!(err <= s.error_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn rank_saturation_does_not_fail() {
        // m < n with zero tolerances: once the basis spans ℝᵐ every residual is
        // rounding noise and must be buffered.
        let data = low_rank_plus_noise(6, 20, 6, 1e-2, 9);
        let wt = mass_1d(6);
        let mut s = IpodState::init(&data.column(0).into_owned(), Arc::clone(&wt), IpodTolerances::default()).unwrap();
        stream(&mut s, &data);
        s.finalize();
        assert!(s.rank() <= 6);
        let diff = s.reconstruct_all().unwrap() - &data;
        let scale = hs_norm_sq(&data, &wt).unwrap().sqrt();
        assert!(hs_norm_sq(&diff, &wt).unwrap().sqrt() <= 1e-10 * scale);
    }

    #[test]
    fn full_basis_buffers_every_later_snapshot() {
        let m = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = DMatrix::from_fn(m, 90, |_, _| rng.random_range(-1.0..1.0));
        let wt = mass_1d(m);
        let mut s = IpodState::init(&data.column(0).into_owned(), Arc::clone(&wt), IpodTolerances::default()).unwrap();
        let mut buffered_after_full = 0;
        for c in 1..data.ncols() {
            let full = s.v().ncols() == m;
            let rep = s.update(&data.column(c).into_owned()).unwrap();
            if full {
                assert_eq!(rep.kind, UpdateKind::Buffered);
                buffered_after_full += 1;
            }
        }
        assert!(buffered_after_full > 50);
        s.finalize();
        assert_eq!(s.rank(), m);
        let diff = s.reconstruct_all().unwrap() - &data;
        let scale = hs_norm_sq(&data, &wt).unwrap().sqrt();
        assert!(hs_norm_sq(&diff, &wt).unwrap().sqrt() <= 1e-12 * scale);
    }

    #[test]
    fn lossless_stream_matches_batch_svd() {
        let data = low_rank_plus_noise(40, 60, 5, 1e-3, 17);
        let wt = mass_1d(40);
        let mut s = IpodState::init(&data.column(0).into_owned(), Arc::clone(&wt), IpodTolerances::default()).unwrap();
        stream(&mut s, &data);
        s.finalize();
        let batch = core_weighted_svd(&data, &wt).unwrap();
        for (a, b) in s.sigma().iter().zip(batch.sigma.iter()) {
            assert!((a - b).abs() <= 1e-10 * b);
        }
        assert!(m_orthonormality_defect(s.v(), &wt).unwrap() <= 1e-11);
    }

    /// Eager-rotation reference: applies every pending rotation to `V`
    /// immediately and never keeps a deferred factor.
    fn eager_reference(data: &DMatrix<f64>, wt: &WeightOperator, tol_p: f64, tol_sv: f64) -> DMatrix<f64> {
        let u1 = data.column(0).into_owned();
        let n1 = wt.norm(&u1);
        let mut v = DMatrix::from_column_slice(u1.len(), 1, (u1 / n1).as_slice());
        let mut sigma = vec![n1];
        let mut w = DMatrix::from_element(1, 1, 1.0);
        let mut pending: Vec<DVector<f64>> = Vec::new();

        let flush = |v: &mut DMatrix<f64>, sigma: &mut Vec<f64>, w: &mut DMatrix<f64>, pending: &mut Vec<DVector<f64>>| {
            let l = sigma.len();
            let d = pending.len();
            let mut q = DMatrix::zeros(l, l + d);
            for i in 0..l {
                q[(i, i)] = sigma[i];
            }
            for (k, b) in pending.iter().enumerate() {
                q.set_column(l + k, b);
            }
            let svd = thin_svd(&q).unwrap();
            let right = svd.v;
            *v = &*v * svd.u;
            let mut block = DMatrix::zeros(w.nrows() + d, w.ncols() + d);
            block.view_mut((0, 0), w.shape()).copy_from(w);
            for k in 0..d {
                block[(w.nrows() + k, w.ncols() + k)] = 1.0;
            }
            *w = block * right;
            *sigma = svd.s.iter().copied().collect();
            pending.clear();
        };

        for c in 1..data.ncols() {
            let u = data.column(c).into_owned();
            let b = v.tr_mul(&wt.apply(&u));
            let r = &u - &v * &b;
            let p = wt.norm(&r);
            if p < tol_p || p <= DEPENDENCE_FLOOR * wt.norm(&u) {
                pending.push(b);
                continue;
            }
            flush(&mut v, &mut sigma, &mut w, &mut pending);
            let b = v.tr_mul(&wt.apply(&u));
            let mut e = &u - &v * &b;
            for _ in 0..2 {
                let c = v.tr_mul(&wt.apply(&e));
                e -= &v * c;
            }
            e /= wt.norm(&e);
            let l = sigma.len();
            let mut q = DMatrix::zeros(l + 1, l + 1);
            for i in 0..l {
                q[(i, i)] = sigma[i];
                q[(i, l)] = b[i];
            }
            q[(l, l)] = p;
            let svd = thin_svd(&q).unwrap();
            let keep = if svd.s[l] > tol_sv { l + 1 } else { l };
            let mut ve = v.clone().insert_column(l, 0.0);
            ve.set_column(l, &e);
            v = ve * svd.u.columns(0, keep);
            let mut wb = DMatrix::zeros(w.nrows() + 1, l + 1);
            wb.view_mut((0, 0), w.shape()).copy_from(&w);
            wb[(w.nrows(), l)] = 1.0;
            w = wb * svd.v.columns(0, keep);
            sigma = svd.s.iter().take(keep).copied().collect();
        }
        if !pending.is_empty() {
            flush(&mut v, &mut sigma, &mut w, &mut pending);
        }
        let mut vs = v;
        for (k, s) in sigma.iter().enumerate() {
            vs.column_mut(k).scale_mut(*s);
        }
        vs * w.transpose()
    }

    #[test]
    fn deferred_rotation_matches_eager_reference() {
        for (seed, tol) in [(1u64, 1e-6), (2, 1e-4), (3, 1e-8)] {
            let data = low_rank_plus_noise(25, 80, 4, 1e-5, seed);
            let wt = mass_1d(25);
            let tols = IpodTolerances::uniform(tol);
            let mut s = IpodState::init(&data.column(0).into_owned(), Arc::clone(&wt), tols).unwrap();
            let mut buffered = 0;
            for c in 1..data.ncols() {
                if s.update(&data.column(c).into_owned()).unwrap().kind == UpdateKind::Buffered {
                    buffered += 1;
                }
            }
            assert!(buffered > 0, "fixture must exercise the pending block");
            s.finalize();
            let reference = eager_reference(&data, &wt, tol, tol);
            let diff = (s.reconstruct_all().unwrap() - reference).amax();
            assert!(diff < 1e-12, "seed {seed}: {diff}");
        }
    }

    #[test]
    fn deterministic_ledgers() {
        let data = low_rank_plus_noise(20, 50, 4, 1e-6, 33);
        let run = || {
            let mut s = IpodState::init(&data.column(0).into_owned(), mass_1d(20), IpodTolerances::uniform(1e-7)).unwrap();
            stream(&mut s, &data);
            s.finalize();
            (s.e_p().to_bits(), s.e_sv().to_bits(), s.v().clone(), s.w().clone())
        };
        assert_eq!(run(), run());
    }

    mod props {
        use super::*;
        use proptest::{prop_assert, prop_assert_eq, proptest};

        proptest! {
            #![proptest_config(proptest::test_runner::Config::with_cases(32))]

            #[test]
            fn ledger_bounds_error_and_is_monotone(seed in 0u64..5000, tol_exp in 3i32..9) {
                let tol = 10f64.powi(-tol_exp);
                let data = low_rank_plus_noise(20, 40, 4, tol, seed);
                let wt = mass_1d(20);
                let mut s = IpodState::init(&data.column(0).into_owned(), Arc::clone(&wt), IpodTolerances::uniform(tol)).unwrap();
                let (mut ep, mut esv) = (0.0, 0.0);
                let retained = |s: &IpodState| s.energy_ratio().unwrap().powi(2) * s.hs_sq_stream();
                for c in 1..data.ncols() {
                    let before = retained(&s);
                    let u = data.column(c).into_owned();
                    let r = s.update(&u).unwrap();
                    prop_assert!(s.e_p() >= ep && s.e_sv() >= esv);
                    ep = s.e_p();
                    esv = s.e_sv();
                    prop_assert!(s.sigma().iter().all(|&x| x > 0.0));
                    prop_assert!(s.sigma().as_slice().windows(2).all(|w| w[0] >= w[1]));
                    let ratio = s.energy_ratio().unwrap();
                    prop_assert!(ratio > 0.0 && ratio <= 1.0);
                    // Retained energy grows by at most the new snapshot's energy,
                    // with equality only on lossless steps.
                    let gained = retained(&s) - before;
                    let offered = wt.norm_sq(&u);
                    prop_assert!(gained <= offered * (1.0 + 1e-10) + 1e-14);
                    if r.kind == UpdateKind::Exact {
                        prop_assert!((gained - offered).abs() <= 1e-9 * before.max(offered));
                    }
                    prop_assert_eq!(s.count(), s.w().nrows() + s.pending_width());
                    if r.kind != UpdateKind::Buffered {
                        prop_assert!(m_orthonormality_defect(&s.effective_basis(), &wt).unwrap() <= 10.0 * s.tolerances().tol_o.max(1e-12));
                    }
                }
                s.finalize();
                let diff = s.reconstruct_all().unwrap() - &data;
                let exact = hs_norm_sq(&diff, &wt).unwrap().sqrt();
                let scale = hs_norm_sq(&data, &wt).unwrap().sqrt();
                prop_assert!(exact <= s.error_bound() + 1e-12 * scale);
            }
        }
    }
}
