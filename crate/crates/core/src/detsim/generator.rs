//! Parametric topology generator.
//!
//! Each class is built from a small set of primitives:
//!
//! * `numu_cc`: one minimum-ionising muon track (1-5 m, small-angle
//!   scattering) plus vertex hadronic activity,
//! * `nue_cc`: one electromagnetic shower (a cone of deposits whose depth
//!   follows a gamma profile) plus vertex hadronic activity,
//! * `nc`: hadronic activity only (short heavily ionising prongs and a blob).
//!
//! Energies are in GeV, lengths in metres. The beam points along `+z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{DetectorGeometry, DetsimError};
use crate::EventClass;

/// Minimum-ionising energy loss in liquid argon, GeV per metre.
const MIP_DEDX: f64 = 0.21;
/// Energy loss of short hadronic prongs, GeV per metre.
const HADRON_DEDX: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeposit {
    pub position: [f64; 3],
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub seed: u64,
    pub truth_class: EventClass,
    /// GeV, in `(0, max_energy]`.
    pub neutrino_energy: f64,
    pub vertex: [f64; 3],
    pub deposits: Vec<EnergyDeposit>,
}

impl Event {
    pub fn deposited_energy(&self) -> f64 {
        self.deposits.iter().map(|d| d.energy).sum()
    }
}

/// Knobs of the topology generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub max_energy_gev: f64,
    /// Upper bound on total deposited energy as a fraction of the neutrino energy.
    pub visible_fraction: f64,
    /// Vertex `|x|` and `|y|` bounds, metres.
    pub vertex_transverse: f64,
    /// Vertex `z` range, metres.
    pub vertex_z: (f64, f64),
    pub muon_length: (f64, f64),
    pub shower_length: (f64, f64),
    /// Largest polar angle of the lepton relative to the beam, radians.
    pub max_lepton_angle: f64,
    /// Spacing of deposits along tracks, metres.
    pub step: f64,
    pub shower_deposits: usize,
    pub hadron_prong_length: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_energy_gev: 10.0,
            visible_fraction: 1.0,
            vertex_transverse: 0.5,
            vertex_z: (-3.0, 0.5),
            muon_length: (1.0, 5.0),
            shower_length: (0.6, 1.6),
            max_lepton_angle: 0.35,
            step: 0.005,
            shower_deposits: 600,
            hadron_prong_length: (0.03, 0.35),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, geom: &DetectorGeometry) -> Result<(), DetsimError> {
        let bad = |m: &str| Err(DetsimError::Generator(m.to_string()));
        if !(self.max_energy_gev > 0.0 && self.max_energy_gev <= 10.0) {
            return bad("max_energy_gev must lie in (0, 10]");
        }
        if !(self.visible_fraction > 0.0 && self.visible_fraction <= 1.0) {
            return bad("visible_fraction must lie in (0, 1]");
        }
        let h = geom.half_extent();
        if !(self.vertex_transverse >= 0.0 && self.vertex_transverse < h[0].min(h[1])) {
            return bad("vertex transverse range must fit inside the detector");
        }
        if !(self.vertex_z.0 <= self.vertex_z.1 && self.vertex_z.0 > -h[2] && self.vertex_z.1 < h[2]) {
            return bad("vertex z range must fit inside the detector");
        }
        for (name, (lo, hi)) in [
            ("muon_length", self.muon_length),
            ("shower_length", self.shower_length),
            ("hadron_prong_length", self.hadron_prong_length),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(DetsimError::Generator(format!("{name} range must be positive and ordered")));
            }
        }
        if !(self.step > 0.0) || self.shower_deposits == 0 {
            return bad("step and shower_deposits must be positive");
        }
        Ok(())
    }
}

/// Mixes a global seed and an event index into an independent stream seed.
pub fn event_seed(global_seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(global_seed ^ splitmix(index.wrapping_add(0x5EED)))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scaled(a, 1.0 / n)
}

/// Two unit vectors orthogonal to `d` and to each other.
fn orthonormal_basis(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let u = normalized(cross(d, helper));
    let v = cross(d, u);
    (u, v)
}

fn forward_direction(rng: &mut impl Rng, max_angle: f64) -> [f64; 3] {
    // uniform in solid angle within the cone
    let cos_max = max_angle.cos();
    let cos_t = rng.random_range(cos_max..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

/// Deposits along a (possibly scattering) line, stopping at the detector
/// boundary. Returns the positions only.
fn trace_track(
    rng: &mut impl Rng,
    start: [f64; 3],
    dir: [f64; 3],
    length: f64,
    step: f64,
    scatter: f64,
    geom: &DetectorGeometry,
) -> Vec<[f64; 3]> {
    let kick = Normal::new(0.0, scatter.max(0.0)).expect("valid sigma");
    let n = (length / step).round().max(1.0) as usize;
    let mut pos = start;
    let mut d = dir;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mid = add(pos, scaled(d, 0.5 * step));
        if !geom.contains(mid) {
            break;
        }
        out.push(mid);
        pos = add(pos, scaled(d, step));
        if scatter > 0.0 {
            d = normalized([d[0] + kick.sample(rng), d[1] + kick.sample(rng), d[2] + kick.sample(rng)]);
        }
    }
    out
}

/// Spreads `energy` over `points` with gamma-distributed fluctuations.
fn share_energy(rng: &mut impl Rng, points: &[[f64; 3]], energy: f64, out: &mut Vec<EnergyDeposit>) {
    if points.is_empty() || energy <= 0.0 {
        return;
    }
    let fluct = Gamma::new(4.0, 0.25).expect("valid gamma");
    let weights: Vec<f64> = points.iter().map(|_| fluct.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    for (p, w) in points.iter().zip(weights) {
        out.push(EnergyDeposit {
            position: *p,
            energy: energy * w / total,
        });
    }
}

fn hadronic_system(
    rng: &mut impl Rng,
    vertex: [f64; 3],
    energy: f64,
    max_prongs: usize,
    cfg: &GeneratorConfig,
    geom: &DetectorGeometry,
    out: &mut Vec<EnergyDeposit>,
) {
    let prongs = rng.random_range(1..=max_prongs);
    // blob plus prongs share the hadronic energy
    let shares: Vec<f64> = (0..=prongs).map(|_| rng.random_range(0.2..1.0)).collect();
    let total_share: f64 = shares.iter().sum();

    let blob_sigma = Normal::new(0.0, 0.02).expect("valid sigma");
    let blob_points: Vec<[f64; 3]> = (0..rng.random_range(8..24))
        .map(|_| {
            add(vertex, [blob_sigma.sample(rng), blob_sigma.sample(rng), blob_sigma.sample(rng)])
        })
        .filter(|p| geom.contains(*p))
        .collect();
    share_energy(rng, &blob_points, energy * shares[0] / total_share, out);

    for share in &shares[1..] {
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let (lo, hi) = cfg.hadron_prong_length;
        let length = rng.random_range(lo..=hi);
        let points = trace_track(rng, vertex, dir, length, cfg.step, 0.01, geom);
        let budget = energy * share / total_share;
        share_energy(rng, &points, budget.min(HADRON_DEDX * length * 4.0), out);
    }
}

fn muon_track(
    rng: &mut impl Rng,
    vertex: [f64; 3],
    energy: f64,
    cfg: &GeneratorConfig,
    geom: &DetectorGeometry,
    out: &mut Vec<EnergyDeposit>,
) {
    let dir = forward_direction(rng, cfg.max_lepton_angle);
    let (lo, hi) = cfg.muon_length;
    let length = rng.random_range(lo..=hi);
    let points = trace_track(rng, vertex, dir, length, cfg.step, 0.002, geom);
    let visible = (MIP_DEDX * cfg.step * points.len() as f64).min(energy);
    share_energy(rng, &points, visible, out);
}

fn em_shower(
    rng: &mut impl Rng,
    vertex: [f64; 3],
    energy: f64,
    cfg: &GeneratorConfig,
    geom: &DetectorGeometry,
    out: &mut Vec<EnergyDeposit>,
) {
    let dir = forward_direction(rng, cfg.max_lepton_angle);
    let (u, v) = orthonormal_basis(dir);
    let (lo, hi) = cfg.shower_length;
    let length = rng.random_range(lo..=hi);
    // longitudinal profile: gamma with mode near a third of the shower length
    let shape = 3.0;
    let profile = Gamma::new(shape, length / (2.0 * (shape - 1.0)) * 0.66).expect("valid gamma");
    let unit = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut points = Vec::with_capacity(cfg.shower_deposits);
    for _ in 0..cfg.shower_deposits {
        let depth = loop {
            let t = profile.sample(rng);
            if t <= length {
                break t;
            }
        };
        let radius = 0.01 + 0.07 * depth / length;
        let p = add(
            add(vertex, scaled(dir, depth)),
            add(scaled(u, radius * unit.sample(rng)), scaled(v, radius * unit.sample(rng))),
        );
        if geom.contains(p) {
            points.push(p);
        }
    }
    share_energy(rng, &points, energy, out);
}

/// Generates one event. Identical `(seed, class, config, geometry)` always
/// produce the identical event.
pub fn sample_event(
    event_id: u64,
    seed: u64,
    truth_class: EventClass,
    cfg: &GeneratorConfig,
    geom: &DetectorGeometry,
) -> Result<Event, DetsimError> {
    cfg.validate(geom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // uniform on (0, max]
    let neutrino_energy = cfg.max_energy_gev * (1.0 - rng.random::<f64>());
    let vertex = [
        rng.random_range(-cfg.vertex_transverse..=cfg.vertex_transverse),
        rng.random_range(-cfg.vertex_transverse..=cfg.vertex_transverse),
        rng.random_range(cfg.vertex_z.0..=cfg.vertex_z.1),
    ];
    let mut deposits = Vec::new();
    match truth_class {
        EventClass::NuMuCC | EventClass::NuECC => {
            let inelasticity = rng.random_range(0.1..0.6);
            let lepton = (1.0 - inelasticity) * neutrino_energy;
            let hadronic = inelasticity * neutrino_energy;
            if truth_class == EventClass::NuMuCC {
                muon_track(&mut rng, vertex, lepton, cfg, geom, &mut deposits);
            } else {
                em_shower(&mut rng, vertex, lepton, cfg, geom, &mut deposits);
            }
            hadronic_system(&mut rng, vertex, hadronic, 3, cfg, geom, &mut deposits);
        }
        EventClass::NC => {
            // the outgoing neutrino carries the rest
            let hadronic = rng.random_range(0.2..0.8) * neutrino_energy;
            hadronic_system(&mut rng, vertex, hadronic, 4, cfg, geom, &mut deposits);
        }
    }
    for d in &mut deposits {
        d.energy *= cfg.visible_fraction;
    }
    Ok(Event {
        event_id,
        seed,
        truth_class,
        neutrino_energy,
        vertex,
        deposits,
    })
}
