//! Problem instances: scene description, downlink channel draws and the
//! per-sample echo geometry of the targeted area.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{invalid, Result};
use crate::geometry::{
    angle_from, comm_pathloss, dbm_to_watts, db_to_linear, round_trip_pathloss, steering_outer,
    steering_vector, ArraySpec, CMatrix, CVector, Point2D, SensingLinkParams,
};

/// Path-loss constants for the echo (`kappa`, `d_ref`) and downlink
/// (`kappa_hat`, `d0`, `nu`) laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossParams {
    /// Echo reference amplitude; the two-way reference loss is `kappa²`.
    pub kappa: f64,
    pub d_ref: f64,
    pub kappa_hat: f64,
    pub d0: f64,
    pub nu: f64,
}

impl Default for PathlossParams {
    fn default() -> Self {
        Self { kappa: DEFAULT_KAPPA, d_ref: 1.0, kappa_hat: 1e-3, d0: 1.0, nu: 3.0 }
    }
}

/// Default echo reference amplitude, `kappa² = 2e-9` (about -87 dB two-way
/// at 1 m). Keeps desk-scale detection probabilities off the p_D = 1 ceiling.
pub const DEFAULT_KAPPA: f64 = 4.472_135_954_999_579e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    Rayleigh,
    Los,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs_positions: Vec<Point2D>,
    pub arrays: ArraySpec,
    /// `cu_positions[m][k]` is CU k of cell m.
    pub cu_positions: Vec<Vec<Point2D>>,
    /// Downlink receiver noise power (W).
    pub noise_comm: f64,
    /// Per-antenna radar noise power after matched filtering (W).
    pub noise_radar: f64,
    /// Per-BS power budget (W).
    pub p_max: f64,
    /// Linear SINR targets, `sinr_targets[m][k]`.
    pub sinr_targets: Vec<Vec<f64>>,
    /// RCS amplitudes, `rcs[m][l]` for the BS l -> target -> BS m link.
    pub rcs: Vec<Vec<f64>>,
    pub pathloss: PathlossParams,
    pub target_samples: Vec<Point2D>,
    pub channel_model: ChannelModel,
    pub rng_seed: u64,
}

impl Scene {
    pub fn num_cells(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn users_per_cell(&self) -> usize {
        self.cu_positions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_cells();
        let k = self.users_per_cell();
        if l == 0 {
            return invalid("scene needs at least one BS");
        }
        if k == 0 {
            return invalid("scene needs at least one CU per cell");
        }
        self.arrays.validate()?;
        if self.cu_positions.len() != l || self.cu_positions.iter().any(|c| c.len() != k) {
            return invalid(format!("cu_positions must be {l} cells of {k} users each"));
        }
        if self.sinr_targets.len() != l || self.sinr_targets.iter().any(|c| c.len() != k) {
            return invalid(format!("sinr_targets must be {l} x {k}"));
        }
        if self.sinr_targets.iter().flatten().any(|g| !(*g > 0.0 && g.is_finite())) {
            return invalid("sinr_targets must be positive and finite");
        }
        if self.rcs.len() != l || self.rcs.iter().any(|r| r.len() != l) {
            return invalid(format!("rcs must be {l} x {l}"));
        }
        for (name, v) in [("noise_comm", self.noise_comm), ("noise_radar", self.noise_radar), ("p_max", self.p_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        let pl = &self.pathloss;
        if !(pl.d_ref > 0.0 && pl.d0 > 0.0) {
            return invalid("path-loss reference distances must be positive");
        }
        if self.target_samples.is_empty() {
            return invalid("target_samples must be nonempty");
        }
        for (m, cell) in self.cu_positions.iter().enumerate() {
            for (i, cu) in cell.iter().enumerate() {
                for (b, bs) in self.bs_positions.iter().enumerate() {
                    if bs.distance(cu) == 0.0 {
                        return invalid(format!("CU {i} of cell {m} coincides with BS {b}"));
                    }
                }
            }
        }
        for (q, t) in self.target_samples.iter().enumerate() {
            if self.bs_positions.iter().any(|bs| bs.distance(t) == 0.0) {
                return invalid(format!("target sample {q} coincides with a BS"));
            }
        }
        Ok(())
    }

    /// Sets every CU's SINR target to `gamma_db`.
    pub fn set_gamma_db(&mut self, gamma_db: f64) {
        let g = db_to_linear(gamma_db);
        for cell in &mut self.sinr_targets {
            cell.iter_mut().for_each(|t| *t = g);
        }
    }

    pub fn with_gamma_db(mut self, gamma_db: f64) -> Self {
        self.set_gamma_db(gamma_db);
        self
    }

    pub fn with_antennas(mut self, n: usize) -> Self {
        self.arrays.n_tx = n;
        self.arrays.n_rx = n;
        self
    }

    pub fn with_p_max(mut self, p_max: f64) -> Self {
        self.p_max = p_max;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Built-in layouts of the three-BS evaluation network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaperScene {
    OneCu,
    ThreeCu,
    /// Each CU 45 m from its BS at the given common bearing (radians), LoS.
    Rotation(f64),
}

pub const PAPER_ANTENNAS: usize = 32;
const CU_PLACEMENT_SEED: u64 = 0x0C0F_FEE5;

pub fn paper_bs_positions() -> Vec<Point2D> {
    let s = 40.0 * 3f64.sqrt();
    vec![Point2D::new(80.0, 0.0), Point2D::new(-40.0, s), Point2D::new(-40.0, -s)]
}

/// Uniform 3×3 grid over the 2 m × 2 m square centered at the origin.
pub fn paper_target_grid() -> Vec<Point2D> {
    let ticks = [-1.0, 0.0, 1.0];
    ticks.iter().flat_map(|&y| ticks.iter().map(move |&x| Point2D::new(x, y))).collect()
}

pub fn default_paper_scene(variant: PaperScene) -> Scene {
    let bs = paper_bs_positions();
    let (cus, model, p_max, gamma_db) = match variant {
        PaperScene::OneCu => (
            vec![
                vec![Point2D::new(38.85, -20.97)],
                vec![Point2D::new(-1.26, 44.13)],
                vec![Point2D::new(-37.58, -23.16)],
            ],
            ChannelModel::Rayleigh,
            15.0,
            25.0,
        ),
        PaperScene::ThreeCu => (three_cu_layout(&bs), ChannelModel::Rayleigh, 15.0, 15.0),
        PaperScene::Rotation(theta) => (
            bs.iter().map(|b| vec![b.offset_polar(45.0, theta)]).collect(),
            ChannelModel::Los,
            12.0,
            30.0,
        ),
    };
    let l = bs.len();
    let k = cus[0].len();
    Scene {
        bs_positions: bs,
        arrays: ArraySpec::square(PAPER_ANTENNAS),
        cu_positions: cus,
        noise_comm: dbm_to_watts(-84.0),
        noise_radar: dbm_to_watts(-102.0),
        p_max,
        sinr_targets: vec![vec![db_to_linear(gamma_db); k]; l],
        rcs: vec![vec![1.0; l]; l],
        pathloss: PathlossParams::default(),
        target_samples: paper_target_grid(),
        channel_model: model,
        rng_seed: 1,
    }
}

/// Three CUs per cell scattered 25-60 m from their BS, drawn once from a
/// fixed seed so the layout is part of the built-in scene.
fn three_cu_layout(bs: &[Point2D]) -> Vec<Vec<Point2D>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CU_PLACEMENT_SEED);
    let range = Uniform::new(25.0, 60.0).expect("valid range");
    let bearing = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    bs.iter()
        .map(|b| {
            let mut cell = Vec::with_capacity(3);
            while cell.len() < 3 {
                let p = b.offset_polar(range.sample(&mut rng), bearing.sample(&mut rng));
                // keep users out of the targeted area
                if p.distance(&Point2D::new(0.0, 0.0)) > 10.0 {
                    cell.push(p);
                }
            }
            cell
        })
        .collect()
}

/// Echo geometry for one target sample location.
#[derive(Debug, Clone)]
pub struct SampleGeometry {
    pub position: Point2D,
    /// `links[m * L + l]`: BS l -> target -> BS m.
    pub links: Vec<SensingLinkParams>,
    /// Transmit steering vector `a_t(θ_l)` per BS.
    pub steering: Vec<CVector>,
    /// `A_l = a_t* a_tᵀ` per BS.
    pub outer: Vec<CMatrix>,
}

/// Channels and sensing parameters derived from a [`Scene`].
#[derive(Debug, Clone)]
pub struct ChannelSet {
    cells: usize,
    users: usize,
    pub arrays: ArraySpec,
    h: Vec<CVector>,
    pub samples: Vec<SampleGeometry>,
}

impl ChannelSet {
    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Channel from BS `l` to CU `k` of cell `m`.
    pub fn h(&self, l: usize, m: usize, k: usize) -> &CVector {
        &self.h[(l * self.cells + m) * self.users + k]
    }

    pub fn h_mut(&mut self, l: usize, m: usize, k: usize) -> &mut CVector {
        &mut self.h[(l * self.cells + m) * self.users + k]
    }

    /// Echo link BS `l` -> target sample `q` -> BS `m`.
    pub fn link(&self, q: usize, m: usize, l: usize) -> &SensingLinkParams {
        &self.samples[q].links[m * self.cells + l]
    }

    pub fn a_matrix(&self, q: usize, l: usize) -> &CMatrix {
        &self.samples[q].outer[l]
    }
}

/// Substream id for the (l, m, k) channel draw.
fn channel_stream(l: usize, m: usize, k: usize) -> u64 {
    ((l as u64) << 42) | ((m as u64) << 21) | k as u64
}

/// Circularly-symmetric complex Gaussian vector with unit-variance entries.
pub fn cn_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    })
}

pub fn build_channels(scene: &Scene) -> Result<ChannelSet> {
    scene.validate()?;
    let l_count = scene.num_cells();
    let k_count = scene.users_per_cell();
    let arrays = scene.arrays;
    let pl = scene.pathloss;

    let mut h = Vec::with_capacity(l_count * l_count * k_count);
    for (l, bs) in scene.bs_positions.iter().enumerate() {
        for (m, cell) in scene.cu_positions.iter().enumerate() {
            for (k, cu) in cell.iter().enumerate() {
                let mu = comm_pathloss(bs.distance(cu), pl.kappa_hat, pl.d0, pl.nu)?;
                let base = match scene.channel_model {
                    ChannelModel::Rayleigh => {
                        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
                        rng.set_stream(channel_stream(l, m, k));
                        cn_vector(&mut rng, arrays.n_tx)
                    }
                    ChannelModel::Los => {
                        steering_vector(angle_from(bs, cu)?, arrays.n_tx, arrays.spacing_ratio)?.conjugate()
                    }
                };
                h.push(base * Complex64::new(mu.sqrt(), 0.0));
            }
        }
    }

    let mut samples = Vec::with_capacity(scene.target_samples.len());
    for target in &scene.target_samples {
        let mut thetas = Vec::with_capacity(l_count);
        let mut dists = Vec::with_capacity(l_count);
        for bs in &scene.bs_positions {
            thetas.push(angle_from(bs, target)?);
            dists.push(bs.distance(target));
        }
        let mut links = Vec::with_capacity(l_count * l_count);
        for m in 0..l_count {
            for l in 0..l_count {
                links.push(SensingLinkParams {
                    beta: round_trip_pathloss(dists[l], dists[m], pl.kappa, pl.d_ref)?,
                    zeta: scene.rcs[m][l],
                    theta_tx: thetas[l],
                    theta_rx: thetas[m],
                });
            }
        }
        let steering = thetas
            .iter()
            .map(|&t| steering_vector(t, arrays.n_tx, arrays.spacing_ratio))
            .collect::<Result<Vec<_>>>()?;
        let outer = steering.iter().map(steering_outer).collect();
        samples.push(SampleGeometry { position: *target, links, steering, outer });
    }

    Ok(ChannelSet { cells: l_count, users: k_count, arrays, h, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn single_cell(model: ChannelModel, n: usize, cu: Point2D) -> Scene {
        Scene {
            bs_positions: vec![Point2D::new(0.0, 0.0)],
            arrays: ArraySpec::square(n),
            cu_positions: vec![vec![cu]],
            noise_comm: 1e-12,
            noise_radar: 1e-12,
            p_max: 1.0,
            sinr_targets: vec![vec![1.0]],
            rcs: vec![vec![1.0]],
            pathloss: PathlossParams { kappa: 1.0, d_ref: 1.0, kappa_hat: 1e-3, d0: 1.0, nu: 3.0 },
            target_samples: vec![Point2D::new(5.0, 5.0)],
            channel_model: model,
            rng_seed: 3,
        }
    }

    #[test]
    fn los_broadside_user_at_reference_distance() {
        let scene = single_cell(ChannelModel::Los, 4, Point2D::new(1.0, 0.0));
        let ch = build_channels(&scene).unwrap();
        let h = ch.h(0, 0, 0);
        let amp = 1e-3f64.sqrt();
        for z in h.iter() {
            assert_relative_eq!(z.re, amp, max_relative = 1e-12);
            assert!(z.im.abs() < 1e-15);
        }
        assert_relative_eq!(h.norm_squared(), 4e-3, max_relative = 1e-12);
    }

    #[test]
    fn rayleigh_is_deterministic() {
        let scene = default_paper_scene(PaperScene::OneCu).with_antennas(8);
        let a = build_channels(&scene).unwrap();
        let b = build_channels(&scene).unwrap();
        for l in 0..3 {
            for m in 0..3 {
                assert_eq!(a.h(l, m, 0), b.h(l, m, 0));
            }
        }
        let c = build_channels(&scene.clone().with_seed(99)).unwrap();
        assert_ne!(a.h(0, 0, 0), c.h(0, 0, 0));
    }

    #[test]
    fn rayleigh_second_moment_matches_pathloss() {
        // 10^4 scenes x 10 antennas = 10^5 entries
        let cu = Point2D::new(10.0, 0.0);
        let mu = comm_pathloss(10.0, 1e-3, 1.0, 3.0).unwrap();
        let mut acc = 0.0;
        let draws = 10_000;
        for seed in 0..draws {
            let mut scene = single_cell(ChannelModel::Rayleigh, 10, cu);
            scene.rng_seed = seed;
            acc += build_channels(&scene).unwrap().h(0, 0, 0).norm_squared();
        }
        let est = acc / (draws as f64 * 10.0);
        assert!((est / mu - 1.0).abs() < 0.02, "estimated {est}, expected {mu}");
    }

    #[test]
    fn a_matrices_are_rank_one_psd() {
        let scene = default_paper_scene(PaperScene::ThreeCu).with_antennas(8);
        let ch = build_channels(&scene).unwrap();
        for q in 0..ch.num_samples() {
            for l in 0..3 {
                let a = ch.a_matrix(q, l);
                assert!((a - a.adjoint()).norm() < 1e-12);
                assert_relative_eq!(a.trace().re, 8.0, max_relative = 1e-12);
                let eig = a.clone().symmetric_eigen().eigenvalues;
                let mut ev: Vec<f64> = eig.iter().copied().collect();
                ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
                assert_relative_eq!(ev[0], 8.0, max_relative = 1e-10);
                assert!(ev[1].abs() < 1e-9 * 8.0);
                let x = DMatrix::<Complex64>::from_fn(8, 1, |i, _| Complex64::new(i as f64 - 3.0, 0.5 * i as f64));
                assert!((x.adjoint() * a * &x)[(0, 0)].re >= -1e-12);
            }
        }
    }

    #[test]
    fn paper_scene_layouts() {
        let s = default_paper_scene(PaperScene::OneCu);
        assert_eq!(s.num_cells(), 3);
        assert_eq!(s.users_per_cell(), 1);
        assert_eq!(s.bs_positions[0], Point2D::new(80.0, 0.0));
        assert_eq!(s.target_samples.len(), 9);
        assert_relative_eq!(s.noise_comm, 10f64.powf(-11.4), max_relative = 1e-12);
        assert_relative_eq!(s.noise_radar, 10f64.powf(-13.2), max_relative = 1e-12);

        let r = default_paper_scene(PaperScene::Rotation(0.0));
        assert_relative_eq!(r.cu_positions[0][0].x, 125.0);
        assert!(r.cu_positions[0][0].y.abs() < 1e-12);
        assert_eq!(r.target_samples.len(), 9);
        assert_eq!(r.channel_model, ChannelModel::Los);

        let t = default_paper_scene(PaperScene::ThreeCu);
        assert_eq!(t.users_per_cell(), 3);
        assert_eq!(t.target_samples.len(), 9);
        t.validate().unwrap();
    }

    #[test]
    fn coincident_user_rejected() {
        let scene = single_cell(ChannelModel::Rayleigh, 2, Point2D::new(0.0, 0.0));
        assert!(build_channels(&scene).is_err());
    }
}
