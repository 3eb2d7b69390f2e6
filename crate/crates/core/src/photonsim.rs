//! Monte Carlo photon-counting bench.
//!
//! A source emits `M` pairs of a fixed state per detector setting. Each pair
//! either fails one of the local filters or reaches two polarization analyzers
//! (waveplates followed by a PBS with one counter per arm). The five outcome
//! classes are drawn from a single multinomial, so every [`CountRecord`]
//! satisfies `n12 <= min(n1, n2) <= N <= M` by construction.
//!
//! [`Counting::Exact`] replaces the draws by their expectations, which turns
//! every estimator into its algebraic target.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Serialize, Serializer};

use crate::distill::{BlochEstimate, NOISELESS_MAX_STEPS, SAMPLED_MAX_STEPS, MarginalEstimate, MarginalEstimator};
use crate::error::{Error, Result};
use crate::qstate::{pauli, DensityMatrix, StateSpec, StokesTensor};
use crate::slocc::{apply_composites, waveplate, CompositeArmOperator, Waveplate};
use crate::witness::{lambda_svd, LambdaTriple};

/// Transmitted fraction below which a setting counts as extinct.
pub const MIN_PASS_PROB: f64 = 1e-9;
/// Pairs per setting in the reference experiment (10 s of source time).
pub const DEFAULT_PAIRS_PER_SETTING: u64 = 50_000;
const SECONDS_PER_PAIR: f64 = 10.0 / 50_000.0;
const UNIT_TOL: f64 = 1e-12;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in a tree of deterministic random substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream(u64);

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn child(&self, index: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// How counts are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counting {
    /// Counts equal their expectations (`M p`, not rounded).
    Exact,
    Sampled(RngStream),
}

impl Counting {
    pub fn child(&self, index: u64) -> Self {
        match self {
            Counting::Exact => Counting::Exact,
            Counting::Sampled(s) => Counting::Sampled(s.child(index)),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Counting::Exact)
    }
}

/// Substream tags under the root of one experiment.
pub mod streams {
    pub const DISTILL: u64 = 1;
    pub const STOKES: u64 = 2;
    pub const LAMBDA: u64 = 3;
    pub const SCAN: u64 = 4;
}

/// Analyzer of one arm as waveplate angles: light passes a QWP, then a HWP,
/// then the PBS whose transmitted port is `|H>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveplateAngles {
    pub qwp: f64,
    pub hwp: f64,
}

impl WaveplateAngles {
    /// Bloch direction of `U^dag |H>` with `U = HWP(hwp) QWP(qwp)`.
    pub fn direction(&self) -> Vector3<f64> {
        let u = waveplate(Waveplate::Half, self.hwp) * waveplate(Waveplate::Quarter, self.qwp);
        let psi = u.adjoint().column(0).into_owned();
        Vector3::from_fn(|i, _| (psi.adjoint() * pauli(i + 1) * psi)[(0, 0)].re)
    }

    /// One choice of angles (the waveplate gauge is not unique).
    pub fn from_direction(a: &Vector3<f64>) -> Result<Self> {
        check_unit(a)?;
        let qwp = a.x.atan2(a.z) / 2.0;
        let hwp = (qwp - a.y.clamp(-1.0, 1.0).asin() / 2.0) / 2.0;
        Ok(Self { qwp, hwp })
    }
}

fn check_unit(a: &Vector3<f64>) -> Result<()> {
    let n = a.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnitVector(n));
    }
    Ok(())
}

/// Analyzer directions of both arms; the counter fires on the `+a` projector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSetting {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl DetectorSetting {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Result<Self> {
        check_unit(&a)?;
        check_unit(&b)?;
        Ok(Self { a, b })
    }

    pub fn from_waveplates(arm1: WaveplateAngles, arm2: WaveplateAngles) -> Result<Self> {
        Self::new(arm1.direction(), arm2.direction())
    }

    pub fn waveplates(&self) -> Result<(WaveplateAngles, WaveplateAngles)> {
        Ok((WaveplateAngles::from_direction(&self.a)?, WaveplateAngles::from_direction(&self.b)?))
    }
}

/// Counts at one setting. Values are integers when sampled and expectations
/// when counting is exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountRecord {
    pub setting_id: usize,
    pub setting: DetectorSetting,
    pub m: f64,
    pub n: f64,
    pub n1: f64,
    pub n2: f64,
    pub n12: f64,
    pub duration_s: f64,
}

impl CountRecord {
    /// `0 <= n12 <= min(n1, n2) <= N <= M`, with slack for exact-mode rounding.
    pub fn is_consistent(&self) -> bool {
        let eps = 1e-9 * self.m.max(1.0);
        self.n12 >= -eps
            && self.n12 <= self.n1.min(self.n2) + eps
            && self.n1.max(self.n2) <= self.n + eps
            && self.n <= self.m + eps
    }

    pub const CSV_HEADER: &'static str = "setting_id,a_x,a_y,a_z,b_x,b_y,b_z,M,N,n1,n2,n12";

    pub fn csv_row(&self) -> String {
        let (a, b) = (self.setting.a, self.setting.b);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.setting_id, a.x, a.y, a.z, b.x, b.y, b.z, self.m, self.n, self.n1, self.n2, self.n12
        )
    }
}

pub fn records_to_csv(records: &[CountRecord]) -> String {
    let mut out = String::from(CountRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Coincidence-based correlation `(4 n12 - 2 n1 - 2 n2 + N) / N`.
pub fn estimate_correlation(rec: &CountRecord) -> Result<f64> {
    if rec.n <= 0.0 {
        return Err(Error::NoTransmittedPairs);
    }
    Ok((4.0 * rec.n12 - 2.0 * rec.n1 - 2.0 * rec.n2 + rec.n) / rec.n)
}

/// Source, decoherer and filter settings of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(serialize_with = "display")]
    pub true_state: StateSpec,
    pub pairs_per_setting: u64,
    pub seed: u64,
    pub filter_phase_imperfection: f64,
    /// Stopping DOP; `None` selects 0.1 for sampled and 1e-8 for exact runs.
    pub tol_dop: Option<f64>,
    pub noiseless: bool,
    /// Distillation step budget; `None` selects the mode default.
    pub max_steps: Option<usize>,
    /// Draw each setting's `M` from a Poisson distribution.
    pub poisson_totals: bool,
}

fn display<S: Serializer>(v: &StateSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            true_state: StateSpec::DecoheredDemo,
            pairs_per_setting: DEFAULT_PAIRS_PER_SETTING,
            seed: 0,
            filter_phase_imperfection: 0.0,
            tol_dop: None,
            noiseless: false,
            max_steps: None,
            poisson_totals: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_setting == 0 {
            return Err(Error::InvalidParameter("pairs_per_setting must be at least 1".into()));
        }
        if let Some(t) = self.tol_dop {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("tol_dop must be positive, got {t}")));
            }
        }
        if !self.filter_phase_imperfection.is_finite() {
            return Err(Error::InvalidParameter("filter_phase_imperfection must be finite".into()));
        }
        Ok(())
    }

    pub fn effective_tol_dop(&self) -> f64 {
        self.tol_dop.unwrap_or(if self.noiseless { 1e-8 } else { 0.1 })
    }

    pub fn effective_max_steps(&self) -> usize {
        self.max_steps.unwrap_or(if self.noiseless { NOISELESS_MAX_STEPS } else { SAMPLED_MAX_STEPS })
    }

    pub fn root_counting(&self) -> Counting {
        if self.noiseless {
            Counting::Exact
        } else {
            Counting::Sampled(RngStream::new(self.seed))
        }
    }
}

/// Estimated two-photon Stokes tensor with the records behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesEstimate {
    pub s: StokesTensor,
    pub pass_prob: f64,
    pub records: Vec<CountRecord>,
}

/// Extrema measured in the 12-setting stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMeasurement {
    pub triple: LambdaTriple,
    /// Signed correlation measured along each candidate axis pair, in the
    /// order of the triple before sorting.
    pub raw: [f64; 3],
    pub records: Vec<CountRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub theta1: f64,
    pub theta2: f64,
    pub record: CountRecord,
    pub e: f64,
}

/// Coincidence pattern in the `(theta1, theta2)` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceScan {
    pub l: usize,
    pub l2: usize,
    pub grid: usize,
    pub lambda_l: f64,
    pub lambda_l2: f64,
    pub points: Vec<ScanPoint>,
}

impl CoincidenceScan {
    pub const CSV_HEADER: &'static str = "theta1,theta2,n12,n1,n2,N,E";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let r = &p.record;
            out.push_str(&format!("{},{},{},{},{},{},{}\n", p.theta1, p.theta2, r.n12, r.n1, r.n2, r.n, p.e));
        }
        out
    }

    /// `E` on the grid, rows indexed by `theta1`.
    pub fn e_matrix(&self) -> Vec<Vec<f64>> {
        self.points.chunks(self.grid).map(|row| row.iter().map(|p| p.e).collect()).collect()
    }

    /// `R^2` of the least-squares fit of the coincidence signal
    /// `4 n12 / N - 1` to `x cos(t1) cos(t2) + y sin(t1) sin(t2)`.
    ///
    /// Marginal polarization adds terms linear in the analyzer directions,
    /// which this model cannot absorb.
    pub fn fit_sinusoid(&self) -> SinusoidFit {
        let mut ata = [[0.0; 2]; 2];
        let mut atb = [0.0; 2];
        let ys: Vec<f64> = self.points.iter().map(|p| 4.0 * p.record.n12 / p.record.n - 1.0).collect();
        for (p, &y) in self.points.iter().zip(&ys) {
            let f = [p.theta1.cos() * p.theta2.cos(), p.theta1.sin() * p.theta2.sin()];
            for i in 0..2 {
                atb[i] += f[i] * y;
                for j in 0..2 {
                    ata[i][j] += f[i] * f[j];
                }
            }
        }
        let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
        let x = (atb[0] * ata[1][1] - atb[1] * ata[0][1]) / det;
        let yc = (ata[0][0] * atb[1] - ata[1][0] * atb[0]) / det;
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (p, &y) in self.points.iter().zip(&ys) {
            let model = x * p.theta1.cos() * p.theta2.cos() + yc * p.theta1.sin() * p.theta2.sin();
            ss_res += (y - model).powi(2);
            ss_tot += (y - mean).powi(2);
        }
        SinusoidFit { amp_l: x, amp_l2: yc, ss_res, r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinusoidFit {
    pub amp_l: f64,
    pub amp_l2: f64,
    pub ss_res: f64,
    pub r_squared: f64,
}

/// The 16 analyzer pairs of the tomography stage: `{x, y, z, -z}^2`.
pub fn sixteen_settings() -> Vec<DetectorSetting> {
    let dirs = [Vector3::x(), Vector3::y(), Vector3::z(), -Vector3::z()];
    let mut out = Vec::with_capacity(16);
    for a in dirs {
        for b in dirs {
            out.push(DetectorSetting { a, b });
        }
    }
    out
}

/// Axis index and sign when `v` is `+-` a coordinate axis.
fn axis_of(v: &Vector3<f64>) -> Option<(usize, f64)> {
    (0..3).find_map(|i| {
        let s = v[i].signum();
        let mut e = Vector3::zeros();
        e[i] = s;
        ((v - e).amax() < 1e-9).then_some((i, s))
    })
}

/// Linear-inversion Stokes tensor from records on coordinate-axis settings.
///
/// Correlations are sign-corrected and pooled over every record measuring
/// the same axis pair, weighted by `N`. Marginals are pooled over all records
/// sharing the axis on that arm.
pub fn stokes_from_records(records: &[CountRecord]) -> Result<StokesTensor> {
    let mut corr = [[(0.0, 0.0); 3]; 3];
    let mut m1 = [(0.0, 0.0); 3];
    let mut m2 = [(0.0, 0.0); 3];
    for rec in records {
        let (Some((i, si)), Some((j, sj))) = (axis_of(&rec.setting.a), axis_of(&rec.setting.b)) else {
            continue;
        };
        if rec.n <= 0.0 {
            continue;
        }
        let e = estimate_correlation(rec)?;
        corr[i][j].0 += si * sj * e * rec.n;
        corr[i][j].1 += rec.n;
        m1[i].0 += si * (2.0 * rec.n1 - rec.n);
        m1[i].1 += rec.n;
        m2[j].0 += sj * (2.0 * rec.n2 - rec.n);
        m2[j].1 += rec.n;
    }
    let mut s = Matrix4::zeros();
    s[(0, 0)] = 1.0;
    let axes = ["x", "y", "z"];
    for i in 0..3 {
        if m1[i].1 <= 0.0 || m2[i].1 <= 0.0 {
            return Err(Error::IncompleteSettings(format!("no transmitted pairs with {} on one arm", axes[i])));
        }
        s[(i + 1, 0)] = m1[i].0 / m1[i].1;
        s[(0, i + 1)] = m2[i].0 / m2[i].1;
        for j in 0..3 {
            if corr[i][j].1 <= 0.0 {
                return Err(Error::IncompleteSettings(format!("missing setting pair ({}, {})", axes[i], axes[j])));
            }
            s[(i + 1, j + 1)] = corr[i][j].0 / corr[i][j].1;
        }
    }
    Ok(StokesTensor { s })
}

/// The simulated optical bench for a fixed source state.
#[derive(Debug, Clone, PartialEq)]
pub struct Bench {
    rho: DensityMatrix,
    poisson_totals: bool,
}

impl Bench {
    pub fn new(rho: DensityMatrix) -> Result<Self> {
        if rho.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
        }
        let rho = if rho.is_normalized() { rho } else { rho.normalize()? };
        Ok(Self { rho, poisson_totals: false })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut bench = Self::new(cfg.true_state.build()?)?;
        bench.poisson_totals = cfg.poisson_totals;
        Ok(bench)
    }

    pub fn state(&self) -> &DensityMatrix {
        &self.rho
    }

    fn filtered(&self, composite: &[CompositeArmOperator]) -> Result<(DensityMatrix, f64)> {
        let out = apply_composites(&self.rho, composite).map_err(|e| match e {
            Error::Extinction(t) => Error::Extinction(t),
            other => other,
        })?;
        let pass = out.trace();
        if pass < MIN_PASS_PROB {
            return Err(Error::Extinction(pass));
        }
        Ok((out, pass))
    }

    /// Born probabilities of `(++, +-, -+, --)` for the filtered state.
    fn probabilities(filtered: &DensityMatrix, setting: &DetectorSetting) -> [f64; 4] {
        let e = |mu: usize, nu: usize| filtered.pauli_expectation(&[mu, nu]);
        let tr = e(0, 0);
        let ra: f64 = (0..3).map(|i| setting.a[i] * e(i + 1, 0)).sum();
        let rb: f64 = (0..3).map(|j| setting.b[j] * e(0, j + 1)).sum();
        let mut corr = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                corr += setting.a[i] * setting.b[j] * e(i + 1, j + 1);
            }
        }
        let p = |s1: f64, s2: f64| ((tr + s1 * ra + s2 * rb + s1 * s2 * corr) / 4.0).max(0.0);
        [p(1.0, 1.0), p(1.0, -1.0), p(-1.0, 1.0), p(-1.0, -1.0)]
    }

    /// Counts for one analyzer pair behind the filters `composite`.
    pub fn measure_setting(
        &self,
        composite: &[CompositeArmOperator],
        setting: &DetectorSetting,
        setting_id: usize,
        m: u64,
        counting: Counting,
    ) -> Result<CountRecord> {
        check_unit(&setting.a)?;
        check_unit(&setting.b)?;
        let (filtered, _) = self.filtered(composite)?;
        Ok(self.count(&filtered, setting, setting_id, m, counting))
    }

    fn count(&self, filtered: &DensityMatrix, setting: &DetectorSetting, setting_id: usize, m: u64, counting: Counting) -> CountRecord {
        let p = Self::probabilities(filtered, setting);
        let outcomes: [f64; 4] = match counting {
            Counting::Exact => p.map(|x| x * m as f64),
            Counting::Sampled(stream) => {
                let mut rng = stream.rng();
                let m = if self.poisson_totals && m > 0 {
                    Poisson::new(m as f64).expect("positive mean").sample(&mut rng) as u64
                } else {
                    m
                };
                let mut left = m;
                let mut mass = 1.0;
                let mut out = [0.0; 4];
                for (k, &pk) in p.iter().enumerate() {
                    let draw = if left == 0 || mass <= 0.0 {
                        0
                    } else {
                        let cond = (pk / mass).clamp(0.0, 1.0);
                        Binomial::new(left, cond).expect("probability in range").sample(&mut rng)
                    };
                    out[k] = draw as f64;
                    left -= draw;
                    mass -= pk;
                }
                return self.assemble(setting_id, setting, m as f64, out);
            }
        };
        self.assemble(setting_id, setting, m as f64, outcomes)
    }

    fn assemble(&self, setting_id: usize, setting: &DetectorSetting, m: f64, o: [f64; 4]) -> CountRecord {
        CountRecord {
            setting_id,
            setting: *setting,
            m,
            n: o.iter().sum(),
            n1: o[0] + o[1],
            n2: o[0] + o[2],
            n12: o[0],
            duration_s: m * SECONDS_PER_PAIR,
        }
    }

    fn measure_all(
        &self,
        composite: &[CompositeArmOperator],
        settings: &[DetectorSetting],
        m: u64,
        counting: Counting,
    ) -> Result<Vec<CountRecord>> {
        let (filtered, _) = self.filtered(composite)?;
        Ok(settings
            .iter()
            .enumerate()
            .map(|(i, s)| self.count(&filtered, s, i, m, counting.child(i as u64)))
            .collect())
    }

    /// Bloch vectors of both arms from the analyzer pairs `(x, x)`, `(y, y)`,
    /// `(z, z)`. Each single-arm component uses `r = (2 n_j - N) / N` with
    /// binomial error `sqrt((1 - r^2) / N)`.
    pub fn estimate_local_bloch(
        &self,
        composite: &[CompositeArmOperator],
        m: u64,
        counting: Counting,
    ) -> Result<MarginalEstimate> {
        let settings: Vec<_> = [Vector3::x(), Vector3::y(), Vector3::z()]
            .into_iter()
            .map(|d| DetectorSetting { a: d, b: d })
            .collect();
        let records = self.measure_all(composite, &settings, m, counting)?;
        let mut r = [Vector3::zeros(); 2];
        let mut sigma = [Vector3::zeros(); 2];
        let (mut passed, mut emitted) = (0.0, 0.0);
        for (i, rec) in records.iter().enumerate() {
            if rec.n <= 0.0 {
                return Err(Error::NoTransmittedPairs);
            }
            for (arm, nj) in [rec.n1, rec.n2].into_iter().enumerate() {
                let est = (2.0 * nj - rec.n) / rec.n;
                r[arm][i] = est;
                if !counting.is_exact() {
                    sigma[arm][i] = ((1.0 - est * est).max(0.0) / rec.n).sqrt();
                }
            }
            passed += rec.n;
            emitted += rec.m;
        }
        Ok(MarginalEstimate {
            bloch: (0..2).map(|k| BlochEstimate { r: r[k], sigma: sigma[k] }).collect(),
            pass_prob: passed / emitted,
            settings: settings.len(),
        })
    }

    /// The 16-setting tomography stage.
    pub fn full_stokes_16(&self, composite: &[CompositeArmOperator], m: u64, counting: Counting) -> Result<StokesEstimate> {
        let records = self.measure_all(composite, &sixteen_settings(), m, counting)?;
        let s = stokes_from_records(&records)?;
        let passed: f64 = records.iter().map(|r| r.n).sum();
        let emitted: f64 = records.iter().map(|r| r.m).sum();
        Ok(StokesEstimate { s, pass_prob: passed / emitted, records })
    }

    /// The 12-setting stage: four sign combinations `(+-u_l, +-v_l)` for each
    /// candidate axis pair from the SVD of `s_hat`.
    ///
    /// `direction_error` tilts every analyzer by that angle out of its axis
    /// pair (arm 1 toward `u_{l+1}`, arm 2 toward `v_{l+2}`), which biases
    /// each `lambda` only at second order.
    pub fn lambda_12(
        &self,
        composite: &[CompositeArmOperator],
        s_hat: &StokesTensor,
        m: u64,
        counting: Counting,
        direction_error: f64,
    ) -> Result<LambdaMeasurement> {
        let est = lambda_svd(&s_hat.t());
        let (o1, o2) = est.rotations;
        let (sd, cd) = direction_error.sin_cos();
        let mut settings = Vec::with_capacity(12);
        for l in 0..3 {
            let u: Vector3<f64> = o1.column(l) * cd + o1.column((l + 1) % 3) * sd;
            let v: Vector3<f64> = o2.column(l) * cd + o2.column((l + 2) % 3) * sd;
            for (s1, s2) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                settings.push(DetectorSetting { a: u * s1, b: v * s2 });
            }
        }
        let records = self.measure_all(composite, &settings, m, counting)?;
        let mut raw = [0.0; 3];
        for l in 0..3 {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, (s1, s2)) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)].into_iter().enumerate() {
                let rec = &records[4 * l + k];
                if rec.n > 0.0 {
                    num += s1 * s2 * estimate_correlation(rec)? * rec.n;
                    den += rec.n;
                }
            }
            if den <= 0.0 {
                return Err(Error::NoTransmittedPairs);
            }
            raw[l] = num / den;
        }
        Ok(LambdaMeasurement { triple: sort_measured(&est, raw), raw, records })
    }

    /// Coincidences on a `grid x grid` lattice of analyzer angles in
    /// `[0, theta_max]`, with
    /// `a = cos(t1) u_l + sin(t1) u_l2` and
    /// `b = s_l cos(t2) v_l + s_l2 sin(t2) v_l2`, where `s` are the signs of
    /// the diagonalized correlations, so `E(0, 0) = lambda_l` and
    /// `E(pi/2, pi/2) = lambda_l2`.
    ///
    /// `l` and `l2` are 1-based.
    #[allow(clippy::too_many_arguments)]
    pub fn coincidence_scan(
        &self,
        composite: &[CompositeArmOperator],
        frame: &LambdaTriple,
        l: usize,
        l2: usize,
        grid: usize,
        theta_max: f64,
        m: u64,
        counting: Counting,
    ) -> Result<CoincidenceScan> {
        if !(1..=3).contains(&l) || !(1..=3).contains(&l2) || l == l2 {
            return Err(Error::InvalidParameter(format!("scan axes must be distinct in 1..=3, got ({l}, {l2})")));
        }
        if grid < 2 {
            return Err(Error::InvalidParameter(format!("grid must be at least 2, got {grid}")));
        }
        let (i, j) = (l - 1, l2 - 1);
        let (o1, o2) = frame.rotations;
        let d = frame.signed_diagonal();
        let sign = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
        let (ui, uj) = (o1.column(i).into_owned(), o1.column(j).into_owned());
        let (vi, vj) = (o2.column(i) * sign(d[i]), o2.column(j) * sign(d[j]));
        let thetas: Vec<f64> = (0..grid).map(|k| theta_max * k as f64 / (grid - 1) as f64).collect();
        let mut settings = Vec::with_capacity(grid * grid);
        let mut angles = Vec::with_capacity(grid * grid);
        for &t1 in &thetas {
            for &t2 in &thetas {
                let a = ui * t1.cos() + uj * t1.sin();
                let b = vi * t2.cos() + vj * t2.sin();
                settings.push(DetectorSetting { a: a.normalize(), b: b.normalize() });
                angles.push((t1, t2));
            }
        }
        let records = self.measure_all(composite, &settings, m, counting)?;
        let points = records
            .into_iter()
            .zip(angles)
            .map(|(record, (theta1, theta2))| {
                Ok(ScanPoint { theta1, theta2, e: estimate_correlation(&record)?, record })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CoincidenceScan { l, l2, grid, lambda_l: frame.lambda[i], lambda_l2: frame.lambda[j], points })
    }

    /// Marginal source for count-driven distillation.
    pub fn marginals(&self, m: u64, counting: Counting) -> BenchMarginals<'_> {
        BenchMarginals { bench: self, m, counting }
    }
}

/// Orders measured extrema descending and carries the frame along, keeping
/// both rotations proper and the sign of `det T` on the third axis.
fn sort_measured(est: &LambdaTriple, raw: [f64; 3]) -> LambdaTriple {
    let (o1, o2) = est.rotations;
    let signs = est.signed_diagonal().map(|x| if x < 0.0 { -1.0 } else { 1.0 });
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| raw[b].abs().total_cmp(&raw[a].abs()));
    let mut n1 = Matrix3::zeros();
    let mut n2 = Matrix3::zeros();
    let mut lambda = [0.0; 3];
    let mut sgn = [1.0; 3];
    for (dst, &src) in idx.iter().enumerate() {
        n1.set_column(dst, &o1.column(src));
        n2.set_column(dst, &o2.column(src));
        lambda[dst] = raw[src].abs();
        sgn[dst] = signs[src];
    }
    if let Some(neg) = (0..2).find(|&d| sgn[d] < 0.0) {
        // Move the negative sign onto the third axis.
        n2.column_mut(neg).neg_mut();
        n2.column_mut(2).neg_mut();
    }
    if n1.determinant() < 0.0 {
        n1.column_mut(2).neg_mut();
        n2.column_mut(2).neg_mut();
    }
    LambdaTriple { lambda, q: est.q, rotations: (n1, n2) }
}

/// [`MarginalEstimator`] backed by bench counts. Step `k` draws from
/// substream `k`.
#[derive(Debug, Clone)]
pub struct BenchMarginals<'a> {
    bench: &'a Bench,
    m: u64,
    counting: Counting,
}

impl MarginalEstimator for BenchMarginals<'_> {
    fn num_arms(&self) -> usize {
        2
    }

    fn estimate(&mut self, step: usize, composite: &[CompositeArmOperator]) -> Result<MarginalEstimate> {
        self.bench.estimate_local_bloch(composite, self.m, self.counting.child(step as u64))
    }
}
