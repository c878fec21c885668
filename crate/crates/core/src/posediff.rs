//! Pose-decoupled diffusion: a normal chain on the translation and an
//! isotropic-Gaussian chain on the rotation, sharing one noise schedule.
//!
//! Forward (state `t`, `ā = alpha_bar[t]`):
//!
//! ```text
//! t_t = √ā t_0 + √(1 − ā) ε_t,          ε_t ~ N(0, I)
//! R_t = λ(√ā, R_0) · g,                 g ~ IG_SO(3)(I, 1 − ā),  ε_r = log g
//! ```
//!
//! The reverse step estimates the clean pose from predicted noise and moves
//! to the posterior mean, adding posterior noise except on the last step.

use crate::igso3::{Igso3Error, TableCache};
use crate::rotmath::{exp_rotation, geodesic_flow, log_rotation, AxisAngle, Rotation};
use crate::schedule::NoiseSchedule;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sanity bound on normalized translations.
pub const TRANSLATION_BOUND: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("reverse_step needs t >= 1 (use final_step for t = 0)")]
    ReverseAtZero,
    #[error("step {t} outside schedule of {steps} steps")]
    StepOutOfRange { t: usize, steps: usize },
    #[error(transparent)]
    Igso3(#[from] Igso3Error),
    #[error("denoiser returned {got} predictions for {expected} poses")]
    BatchMismatch { expected: usize, got: usize },
}

/// Rigid transform: rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv.rotate(&self.translation)))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            &self.rotation * &other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Pose {
        Pose::new(self.rotation, self.translation + delta)
    }

    /// 9 row-major rotation entries followed by the translation.
    pub fn to_flat(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&self.rotation.to_row_major());
        out[9] = self.translation.x;
        out[10] = self.translation.y;
        out[11] = self.translation.z;
        out
    }

    pub fn from_flat(v: &[f64; 12]) -> Pose {
        let mut r = [0.0; 9];
        r.copy_from_slice(&v[..9]);
        Pose::new(Rotation::from_row_major(&r), Vector3::new(v[9], v[10], v[11]))
    }

    /// Rotation valid within `tol` and translation finite and inside the sanity bound.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.is_valid(tol)
            && self.translation.iter().all(|x| x.is_finite())
            && self.translation.norm() <= TRANSLATION_BOUND
    }
}

/// Rotation and translation noise; the `2 × 3` regression target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePair {
    pub eps_r: Vector3<f64>,
    pub eps_t: Vector3<f64>,
}

impl NoisePair {
    pub fn zero() -> Self {
        NoisePair {
            eps_r: Vector3::zeros(),
            eps_t: Vector3::zeros(),
        }
    }

    /// `[eps_r; eps_t]` flattened row-major.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.eps_r.x,
            self.eps_r.y,
            self.eps_r.z,
            self.eps_t.x,
            self.eps_t.y,
            self.eps_t.z,
        ]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        NoisePair {
            eps_r: Vector3::new(a[0], a[1], a[2]),
            eps_t: Vector3::new(a[3], a[4], a[5]),
        }
    }
}

/// One noised training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionStep {
    pub t: usize,
    pub noisy_pose: Pose,
    pub noise: NoisePair,
}

/// Which coefficient multiplies the `x_t` flow in the rotation posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PosteriorVariant {
    /// `√α_t (1 − ā_{t−1}) / (1 − ā_t)`, the standard DDPM coefficient.
    #[default]
    AlphaT,
    /// `√α_{t−1} (1 − ā_{t−1}) / (1 − ā_t)`.
    AlphaPrev,
}

fn check_step(t: usize, sched: &NoiseSchedule) -> Result<(), DiffusionError> {
    if t >= sched.steps() {
        return Err(DiffusionError::StepOutOfRange { t, steps: sched.steps() });
    }
    Ok(())
}

fn standard_normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    )
}

/// Noises a translation to state `t`; returns the noisy value and the drawn ε.
pub fn forward_translation<R: Rng + ?Sized>(
    t0: &Vector3<f64>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> (Vector3<f64>, Vector3<f64>) {
    let ab = sched.alpha_bar(t);
    let eps = standard_normal3(rng);
    (t0 * ab.sqrt() + eps * (1.0 - ab).sqrt(), eps)
}

/// Noises a rotation to state `t`; returns `R_t` and `ε_r = log g`.
pub fn forward_rotation<R: Rng + ?Sized>(
    r0: &Rotation,
    t: usize,
    sched: &NoiseSchedule,
    tables: &TableCache,
    rng: &mut R,
) -> Result<(Rotation, Vector3<f64>), DiffusionError> {
    check_step(t, sched)?;
    let ab = sched.alpha_bar(t);
    let mean = geodesic_flow(ab.sqrt(), r0);
    let table = tables.get(1.0 - ab)?;
    let eps_r = table.sample_axis_angle(rng);
    let g = exp_rotation(&eps_r);
    Ok((&mean * &g, eps_r.0))
}

/// Noises both components of a pose to state `t`.
pub fn forward_pose<R: Rng + ?Sized>(
    pose: &Pose,
    t: usize,
    sched: &NoiseSchedule,
    tables: &TableCache,
    rng: &mut R,
) -> Result<DiffusionStep, DiffusionError> {
    check_step(t, sched)?;
    let (rot, eps_r) = forward_rotation(&pose.rotation, t, sched, tables, rng)?;
    let (trans, eps_t) = forward_translation(&pose.translation, t, sched, rng);
    Ok(DiffusionStep {
        t,
        noisy_pose: Pose::new(rot, trans),
        noise: NoisePair { eps_r, eps_t },
    })
}

/// Clean-pose estimate implied by predicted noise at state `t`.
///
/// Inverts the forward mean: strip the perturbation, then flow back by `1/√ā`.
pub fn estimate_clean(pose_t: &Pose, predicted: &NoisePair, t: usize, sched: &NoiseSchedule) -> Pose {
    let ab = sched.alpha_bar(t);
    let trans = (pose_t.translation - predicted.eps_t * (1.0 - ab).sqrt()) / ab.sqrt();
    let stripped = &pose_t.rotation * &exp_rotation(&AxisAngle(-predicted.eps_r));
    let rot = geodesic_flow(1.0 / ab.sqrt(), &stripped);
    Pose::new(rot, trans)
}

/// One reverse transition from state `t` to `t − 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    pose_t: &Pose,
    predicted: &NoisePair,
    t: usize,
    sched: &NoiseSchedule,
    tables: &TableCache,
    variant: PosteriorVariant,
    rng: &mut R,
) -> Result<Pose, DiffusionError> {
    if t == 0 {
        return Err(DiffusionError::ReverseAtZero);
    }
    check_step(t, sched)?;
    let (alpha, beta) = (sched.alpha(t), sched.beta(t));
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let stochastic = t > 1;

    let mut trans = (pose_t.translation - predicted.eps_t * (beta / (1.0 - ab).sqrt())) / alpha.sqrt();
    if stochastic {
        trans += standard_normal3(rng) * sched.beta_tilde(t).sqrt();
    }

    let r0_hat = estimate_clean(pose_t, predicted, t, sched).rotation;
    let c_clean = ab_prev.sqrt() * beta / (1.0 - ab);
    let a = match variant {
        PosteriorVariant::AlphaT => alpha,
        PosteriorVariant::AlphaPrev => sched.alpha(t - 1),
    };
    let c_noisy = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let mean = &geodesic_flow(c_clean, &r0_hat) * &geodesic_flow(c_noisy, &pose_t.rotation);
    let mut rot = if stochastic {
        tables.get(sched.beta_tilde(t))?.sample_shifted(&mean, rng)
    } else {
        mean
    };
    rot = rot.renormalized();
    debug_assert!(rot.is_valid(1e-9));
    Ok(Pose::new(rot, trans))
}

/// Last transition: from state 0 to the clean pose estimate (no noise).
pub fn final_step(pose_0: &Pose, predicted: &NoisePair, sched: &NoiseSchedule) -> Pose {
    let mut p = estimate_clean(pose_0, predicted, 0, sched);
    p.rotation = p.rotation.renormalized();
    p
}

/// Elementwise Smooth-L1 over the six noise components, mean-reduced.
pub fn smooth_l1_loss(predicted: &NoisePair, target: &NoisePair) -> f64 {
    let p = predicted.to_array();
    let q = target.to_array();
    p.iter().zip(q.iter()).map(|(a, b)| smooth_l1(a - b)).sum::<f64>() / 6.0
}

pub(crate) fn smooth_l1(r: f64) -> f64 {
    let a = r.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

pub(crate) fn smooth_l1_grad(r: f64) -> f64 {
    if r.abs() < 1.0 {
        r
    } else {
        r.signum()
    }
}

/// Anything that predicts the forward noise of a batch of noisy poses at
/// state `t`. Conditioning (scene, language) is bound beforehand.
pub trait NoisePredictor {
    fn predict_noise(&self, noisy: &[Pose], t: usize) -> Vec<NoisePair>;
}

/// Predicts the exact noise that separates each noisy pose from a fixed
/// clean target. Drives the reverse chain without any learning.
#[derive(Debug, Clone)]
pub struct OracleDenoiser<'a> {
    pub target: Pose,
    pub schedule: &'a NoiseSchedule,
}

impl<'a> OracleDenoiser<'a> {
    pub fn new(target: Pose, schedule: &'a NoiseSchedule) -> Self {
        OracleDenoiser { target, schedule }
    }

    pub fn noise_for(&self, pose: &Pose, t: usize) -> NoisePair {
        let ab = self.schedule.alpha_bar(t);
        let eps_t = (pose.translation - self.target.translation * ab.sqrt()) / (1.0 - ab).sqrt();
        let mean = geodesic_flow(ab.sqrt(), &self.target.rotation);
        let eps_r = log_rotation(&(&mean.inverse() * &pose.rotation)).0;
        NoisePair { eps_r, eps_t }
    }
}

impl NoisePredictor for OracleDenoiser<'_> {
    fn predict_noise(&self, noisy: &[Pose], t: usize) -> Vec<NoisePair> {
        noisy.iter().map(|p| self.noise_for(p, t)).collect()
    }
}

/// Draw from the terminal state: `t ~ N(0, I)`, `R ~ IG_SO(3)(I, 1 − ā_{T−1})`.
pub fn initial_state<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    tables: &TableCache,
    rng: &mut R,
) -> Result<Pose, DiffusionError> {
    let last = sched.steps() - 1;
    let trans = standard_normal3(rng);
    let rot = tables.get(sched.forward_eps2(last))?.sample_rotation(rng);
    Ok(Pose::new(rot, trans))
}

/// Runs one reverse chain per generator in `rngs`, batching denoiser calls.
/// Trajectory `i` draws all of its randomness from `rngs[i]`.
pub fn sample_batch<P, R>(
    model: &P,
    sched: &NoiseSchedule,
    tables: &TableCache,
    variant: PosteriorVariant,
    rngs: &mut [R],
) -> Result<Vec<Pose>, DiffusionError>
where
    P: NoisePredictor + ?Sized,
    R: Rng,
{
    let mut poses = rngs
        .iter_mut()
        .map(|rng| initial_state(sched, tables, rng))
        .collect::<Result<Vec<_>, _>>()?;
    for t in (1..sched.steps()).rev() {
        let preds = model.predict_noise(&poses, t);
        if preds.len() != poses.len() {
            return Err(DiffusionError::BatchMismatch {
                expected: poses.len(),
                got: preds.len(),
            });
        }
        for ((pose, pred), rng) in poses.iter_mut().zip(&preds).zip(rngs.iter_mut()) {
            *pose = reverse_step(pose, pred, t, sched, tables, variant, rng)?;
        }
    }
    let preds = model.predict_noise(&poses, 0);
    Ok(poses.iter().zip(&preds).map(|(p, e)| final_step(p, e, sched)).collect())
}

/// Generates one pose by running the full reverse chain.
pub fn sample_target_pose<P, R>(
    model: &P,
    sched: &NoiseSchedule,
    tables: &TableCache,
    rng: &mut R,
) -> Result<Pose, DiffusionError>
where
    P: NoisePredictor + ?Sized,
    R: Rng + Clone,
{
    let mut one = [rng.clone()];
    let out = sample_batch(model, sched, tables, PosteriorVariant::default(), &mut one)?;
    *rng = one[0].clone();
    Ok(out[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{geodesic_distance, sample_haar};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (NoiseSchedule, TableCache) {
        (NoiseSchedule::default(), TableCache::new())
    }

    #[test]
    fn pose_flat_roundtrip_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Pose::new(sample_haar(&mut rng), Vector3::new(0.1, -0.2, 0.3));
        assert_eq!(Pose::from_flat(&p.to_flat()), p);
        let id = p.compose(&p.inverse());
        assert!((id.rotation.matrix() - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn translation_zero_noise_limit() {
        // Hypothetical schedule with ā ≈ 1.
        let s = NoiseSchedule::linear(2, 1e-15, 1e-15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t0 = Vector3::new(0.3, -0.1, 0.2);
        let (x, _) = forward_translation(&t0, 0, &s, &mut rng);
        assert!((x - t0).norm() < 1e-6);
    }

    #[test]
    fn translation_variance_matches_schedule() {
        let (s, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t0 = Vector3::new(0.5, 0.0, -0.25);
        for t in [10, 100, 199] {
            let ab = s.alpha_bar(t);
            let n = 100_000;
            let mut sum = Vector3::zeros();
            let mut sq = 0.0;
            for _ in 0..n {
                let (x, _) = forward_translation(&t0, t, &s, &mut rng);
                let d = x - t0 * ab.sqrt();
                sum += d;
                sq += d.norm_squared();
            }
            let var = sq / (3.0 * n as f64);
            assert!((var - (1.0 - ab)).abs() / (1.0 - ab) < 0.03);
            assert!((sum / n as f64).amax() < 0.03 * (1.0 - ab).sqrt());
        }
    }

    #[test]
    fn forward_is_reproducible() {
        let (s, tables) = setup();
        let p = Pose::new(Rotation::about_axis(&Vector3::x(), 0.4), Vector3::new(0.1, 0.2, 0.3));
        let a = forward_pose(&p, 50, &s, &tables, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = forward_pose(&p, 50, &s, &tables, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_forward_definitions() {
        let (s, tables) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r0 = Rotation::about_axis(&Vector3::new(0.3, -1.0, 0.2), 2.2);
        // ā_0 ≈ 1: stays close to R0
        for _ in 0..100 {
            let (r, _) = forward_rotation(&r0, 0, &s, &tables, &mut rng).unwrap();
            assert!(geodesic_distance(&r, &r0) < 0.05);
        }
        for t in [0, 30, 120, 199] {
            let (r, eps) = forward_rotation(&r0, t, &s, &tables, &mut rng).unwrap();
            let mean = geodesic_flow(s.alpha_bar(t).sqrt(), &r0);
            // exp(−ε_r) · mean⁻¹ · R_t = I
            let id = &(&exp_rotation(&AxisAngle(-eps)) * &mean.inverse()) * &r;
            assert!((id.matrix() - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn terminal_rotation_spread_follows_table() {
        let (s, tables) = setup();
        let last = s.steps() - 1;
        let r0 = Rotation::about_axis(&Vector3::y(), 1.0);
        let mean = geodesic_flow(s.alpha_bar(last).sqrt(), &r0);
        let table = tables.get(s.forward_eps2(last)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut d: Vec<f64> = (0..100_000)
            .map(|_| {
                let (r, _) = forward_rotation(&r0, last, &s, &tables, &mut rng).unwrap();
                geodesic_distance(&mean, &r)
            })
            .collect();
        let ks = crate::igso3::ks_statistic(&mut d, |w| table.cdf_at(w));
        assert!(ks < 0.02, "{ks}");
    }

    #[test]
    fn reverse_rejects_zero() {
        let (s, tables) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = reverse_step(&Pose::identity(), &NoisePair::zero(), 0, &s, &tables, PosteriorVariant::AlphaT, &mut rng);
        assert_eq!(err, Err(DiffusionError::ReverseAtZero));
    }

    #[test]
    fn last_reverse_step_is_deterministic() {
        let (s, tables) = setup();
        let p = Pose::new(Rotation::about_axis(&Vector3::z(), 0.3), Vector3::new(0.1, 0.0, 0.0));
        let e = NoisePair::from_array(&[0.01, 0.0, -0.02, 0.3, -0.1, 0.2]);
        let a = reverse_step(&p, &e, 1, &s, &tables, PosteriorVariant::AlphaT, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = reverse_step(&p, &e, 1, &s, &tables, PosteriorVariant::AlphaT, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.rotation.is_valid(1e-9));
    }

    #[test]
    fn oracle_chain_recovers_target() {
        let (s, tables) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let target = Pose::new(sample_haar(&mut rng), Vector3::new(0.2, -0.1, 0.3));
            let oracle = OracleDenoiser::new(target, &s);
            let out = sample_target_pose(&oracle, &s, &tables, &mut rng).unwrap();
            assert!(geodesic_distance(&out.rotation, &target.rotation) < 0.05);
            assert!((out.translation - target.translation).norm() < 0.01);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (s, tables) = setup();
        let target = Pose::new(Rotation::about_axis(&Vector3::x(), 1.0), Vector3::new(0.0, 0.1, 0.2));
        let oracle = OracleDenoiser::new(target, &s);
        let a = sample_target_pose(&oracle, &s, &tables, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_target_pose(&oracle, &s, &tables, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_examples() {
        let z = NoisePair::zero();
        assert_eq!(smooth_l1_loss(&z, &z), 0.0);
        let half = NoisePair::from_array(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((smooth_l1_loss(&half, &z) - 0.125 / 6.0).abs() < 1e-15);
        let two = NoisePair::from_array(&[0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        assert!((smooth_l1_loss(&two, &z) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_continuous_at_one() {
        let lo = smooth_l1(1.0 - 1e-9);
        let hi = smooth_l1(1.0 + 1e-9);
        assert!((lo - hi).abs() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn loss_nonnegative_and_zero_iff_equal(a in proptest::array::uniform6(-3.0f64..3.0), b in proptest::array::uniform6(-3.0f64..3.0)) {
            let (p, q) = (NoisePair::from_array(&a), NoisePair::from_array(&b));
            let l = smooth_l1_loss(&p, &q);
            proptest::prop_assert!(l >= 0.0);
            proptest::prop_assert_eq!(l == 0.0, a == b);
        }
    }
}
