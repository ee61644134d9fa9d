//! Indoor link model: log-distance path loss plus additive per-wall loss,
//! and the "SNR" figure used in the field notes (a noise metric where lower
//! is better).
//!
//! Both dB figures follow the site-survey convention: *lower is better*.
//! A link is usable at attenuation ≤ 70 dB and SNR-metric ≤ 60 dB.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, FloorPlan, GeometryError, Material, Point2D, Wall};

pub const USABLE_MAX_ATTENUATION_DB: f64 = 70.0;
pub const USABLE_MAX_SNR_DB: f64 = 60.0;
pub const DEAD_ATTENUATION_DB: f64 = 90.0;

/// Per-crossing loss for each wall material, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialTable {
    pub reinforced_concrete: f64,
    pub cinder_block: f64,
    pub drywall: f64,
    pub wood: f64,
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self {
            reinforced_concrete: 12.0,
            cinder_block: 6.0,
            drywall: 3.0,
            wood: 2.0,
        }
    }
}

impl MaterialTable {
    pub fn get(&self, m: Material) -> f64 {
        match m {
            Material::ReinforcedConcrete => self.reinforced_concrete,
            Material::CinderBlock => self.cinder_block,
            Material::Drywall => self.drywall,
            Material::Wood => self.wood,
        }
    }

    pub fn set(&mut self, m: Material, db: f64) {
        match m {
            Material::ReinforcedConcrete => self.reinforced_concrete = db,
            Material::CinderBlock => self.cinder_block = db,
            Material::Drywall => self.drywall = db,
            Material::Wood => self.wood = db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRadioParams")]
pub struct RadioParams {
    /// Loss at 1 m, dB.
    pub reference_loss_l0: f64,
    pub path_loss_exponent: f64,
    /// SNR-metric of an unobstructed link, dB.
    pub ambient_noise_floor: f64,
    /// SNR-metric added per wall crossed, dB.
    pub interference_bonus: f64,
    #[serde(default)]
    pub materials: MaterialTable,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadioParams {
    reference_loss_l0: f64,
    path_loss_exponent: f64,
    ambient_noise_floor: f64,
    interference_bonus: f64,
    #[serde(default)]
    materials: MaterialTable,
}

impl TryFrom<RawRadioParams> for RadioParams {
    type Error = String;

    fn try_from(r: RawRadioParams) -> Result<Self, String> {
        let params = RadioParams {
            reference_loss_l0: r.reference_loss_l0,
            path_loss_exponent: r.path_loss_exponent,
            ambient_noise_floor: r.ambient_noise_floor,
            interference_bonus: r.interference_bonus,
            materials: r.materials,
        };
        params.validate()?;
        Ok(params)
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(1.5..=6.0).contains(&self.path_loss_exponent) {
            return Err(format!(
                "path_loss_exponent must lie in [1.5, 6], got {}",
                self.path_loss_exponent
            ));
        }
        let m = &self.materials;
        let all = [
            self.reference_loss_l0,
            self.ambient_noise_floor,
            self.interference_bonus,
            m.reinforced_concrete,
            m.cinder_block,
            m.drywall,
            m.wood,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("radio dB fields must be finite".into());
        }
        if [m.reinforced_concrete, m.cinder_block, m.drywall, m.wood]
            .iter()
            .any(|v| *v < 0.0)
        {
            return Err("material attenuations must be >= 0".into());
        }
        Ok(())
    }

    pub fn wall_loss(&self, wall: &Wall) -> f64 {
        wall.attenuation.unwrap_or_else(|| self.materials.get(wall.material))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkGrade {
    Good,
    Weak,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    pub distance: f64,
    pub walls_crossed: usize,
    /// "Signal strength" in the survey's sense, dB; lower is better.
    pub attenuation: f64,
    /// Noise metric, dB; lower is better.
    pub snr_metric: f64,
    pub usable: bool,
    pub grade: LinkGrade,
}

impl LinkQuality {
    pub fn from_metrics(distance: f64, walls_crossed: usize, attenuation: f64, snr_metric: f64) -> Self {
        let usable = attenuation <= USABLE_MAX_ATTENUATION_DB && snr_metric <= USABLE_MAX_SNR_DB;
        let grade = if usable {
            LinkGrade::Good
        } else if attenuation <= DEAD_ATTENUATION_DB {
            LinkGrade::Weak
        } else {
            LinkGrade::Dead
        };
        Self {
            distance,
            walls_crossed,
            attenuation,
            snr_metric,
            usable,
            grade,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn link_quality(
    a: Point2D,
    b: Point2D,
    plan: &FloorPlan,
    params: &RadioParams,
) -> Result<LinkQuality, LinkError> {
    let walls = geometry::wall_crossings(a, b, plan)?;
    let d = geometry::distance(a, b);
    let wall_loss: f64 = walls.iter().map(|w| params.wall_loss(w)).sum();
    let attenuation = params.reference_loss_l0 + 10.0 * params.path_loss_exponent * d.log10() + wall_loss;
    let snr = params.ambient_noise_floor + params.interference_bonus * walls.len() as f64;
    Ok(LinkQuality::from_metrics(d, walls.len(), attenuation, snr))
}

/// Geometry of one link as seen by the calibrator: its length and the walls
/// it crosses (material plus any per-wall override).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub distance: f64,
    pub crossings: Vec<(Material, Option<f64>)>,
}

impl LinkGeometry {
    pub fn measure(a: Point2D, b: Point2D, plan: &FloorPlan) -> Result<Self, GeometryError> {
        let walls = geometry::wall_crossings(a, b, plan)?;
        Ok(Self {
            distance: geometry::distance(a, b),
            crossings: walls.iter().map(|w| (w.material, w.attenuation)).collect(),
        })
    }
}

/// A measured operating point: a set of links whose worst attenuation and
/// worst SNR-metric should match the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTarget {
    pub label: String,
    pub links: Vec<LinkGeometry>,
    pub attenuation: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetResidual {
    pub label: String,
    pub target_attenuation: f64,
    pub fitted_attenuation: f64,
    pub target_snr: f64,
    pub fitted_snr: f64,
}

impl TargetResidual {
    pub fn attenuation_residual(&self) -> f64 {
        self.fitted_attenuation - self.target_attenuation
    }

    pub fn snr_residual(&self) -> f64 {
        self.fitted_snr - self.target_snr
    }

    pub fn max_abs(&self) -> f64 {
        self.attenuation_residual().abs().max(self.snr_residual().abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub params: RadioParams,
    pub sum_squared_error: f64,
    pub residuals: Vec<TargetResidual>,
    /// Materials the grid actually searched; the rest keep their base value.
    pub fitted_materials: Vec<Material>,
}

impl Calibration {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(TargetResidual::max_abs).fold(0.0, f64::max)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs at least one target")]
    NoTargets,
    #[error("target `{0}` has no links")]
    EmptyTarget(String),
    #[error("no parameter combination within {limit} dB of every target; best max residual {best_max_residual:.2} dB")]
    Infeasible {
        limit: f64,
        best_max_residual: f64,
        residuals: Vec<TargetResidual>,
    },
}

pub const CALIBRATION_FEASIBILITY_DB: f64 = 15.0;

/// Evenly spaced grid axis addressed by integer index, so the visited values
/// are exactly `lo + i * step`.
#[derive(Debug, Clone, Copy)]
pub struct GridAxis {
    pub lo: f64,
    pub step: f64,
    pub count: usize,
}

impl GridAxis {
    pub const fn new(lo: f64, hi: f64, step: f64) -> Self {
        // Inclusive of both ends for the step sizes used here.
        let count = ((hi - lo) / step + 0.5) as usize + 1;
        Self { lo, step, count }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }
}

pub const L0_AXIS: GridAxis = GridAxis::new(0.0, 40.0, 0.5);
pub const EXPONENT_AXIS: GridAxis = GridAxis::new(1.5, 4.0, 0.05);
pub const MATERIAL_AXIS: GridAxis = GridAxis::new(0.0, 20.0, 0.5);
pub const NOISE_FLOOR_AXIS: GridAxis = GridAxis::new(0.0, 40.0, 0.5);
pub const BONUS_AXIS: GridAxis = GridAxis::new(0.0, 20.0, 0.5);

struct PreparedLink {
    log_term: f64,
    fixed_loss: f64,
    counts: Vec<f64>,
    walls: usize,
}

/// Grid-search fit of the link model to measured operating points.
///
/// Attenuation and SNR-metric do not share parameters, so the two are
/// searched independently and the summed squared error is the sum of the
/// two minima. Only materials that some target link crosses (without a
/// per-wall override) are searched; the others keep `base.materials`.
/// Ties go to the lexicographically smallest parameter vector, which is the
/// first one visited.
pub fn calibrate(
    targets: &[CalibrationTarget],
    base: &RadioParams,
) -> Result<Calibration, CalibrationError> {
    if targets.is_empty() {
        return Err(CalibrationError::NoTargets);
    }
    if let Some(t) = targets.iter().find(|t| t.links.is_empty()) {
        return Err(CalibrationError::EmptyTarget(t.label.clone()));
    }

    let mut free: Vec<Material> = targets
        .iter()
        .flat_map(|t| t.links.iter())
        .flat_map(|l| l.crossings.iter())
        .filter(|(_, over)| over.is_none())
        .map(|(m, _)| *m)
        .collect();
    free.sort();
    free.dedup();

    let prepared: Vec<Vec<PreparedLink>> = targets
        .iter()
        .map(|t| {
            t.links
                .iter()
                .map(|l| {
                    let mut counts = vec![0.0; free.len()];
                    let mut fixed_loss = 0.0;
                    for (m, over) in &l.crossings {
                        match over {
                            Some(db) => fixed_loss += db,
                            None => {
                                let k = free.iter().position(|f| f == m).expect("collected above");
                                counts[k] += 1.0;
                            }
                        }
                    }
                    PreparedLink {
                        log_term: 10.0 * l.distance.log10(),
                        fixed_loss,
                        counts,
                        walls: l.crossings.len(),
                    }
                })
                .collect()
        })
        .collect();

    // Attenuation grid.
    let mut best_att = (f64::INFINITY, 0usize, 0usize, vec![0usize; free.len()]);
    let mut best_att_chebyshev = f64::INFINITY;
    let combos = MATERIAL_AXIS.count.pow(free.len() as u32);
    let mut mat_idx = vec![0usize; free.len()];
    let mut mat_val = vec![0.0; free.len()];
    for i_l0 in 0..L0_AXIS.count {
        let l0 = L0_AXIS.value(i_l0);
        for i_n in 0..EXPONENT_AXIS.count {
            let n = EXPONENT_AXIS.value(i_n);
            for combo in 0..combos {
                // Odometer over material indices, first free material most significant.
                let mut rest = combo;
                for k in (0..free.len()).rev() {
                    mat_idx[k] = rest % MATERIAL_AXIS.count;
                    mat_val[k] = MATERIAL_AXIS.value(mat_idx[k]);
                    rest /= MATERIAL_AXIS.count;
                }
                let mut sse = 0.0;
                let mut cheb: f64 = 0.0;
                for (t, links) in targets.iter().zip(&prepared) {
                    let worst = links
                        .iter()
                        .map(|pl| {
                            l0 + n * pl.log_term
                                + pl.fixed_loss
                                + pl.counts.iter().zip(&mat_val).map(|(c, v)| c * v).sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    let r = worst - t.attenuation;
                    sse += r * r;
                    cheb = cheb.max(r.abs());
                }
                best_att_chebyshev = best_att_chebyshev.min(cheb);
                if sse < best_att.0 {
                    best_att = (sse, i_l0, i_n, mat_idx.clone());
                }
            }
        }
    }

    // SNR grid: the worst link is the one crossing the most walls.
    let max_walls: Vec<f64> = prepared
        .iter()
        .map(|links| links.iter().map(|pl| pl.walls).max().unwrap_or(0) as f64)
        .collect();
    let mut best_snr = (f64::INFINITY, 0usize, 0usize);
    let mut best_snr_chebyshev = f64::INFINITY;
    for i_f in 0..NOISE_FLOOR_AXIS.count {
        let floor = NOISE_FLOOR_AXIS.value(i_f);
        for i_b in 0..BONUS_AXIS.count {
            let bonus = BONUS_AXIS.value(i_b);
            let mut sse = 0.0;
            let mut cheb: f64 = 0.0;
            for (t, k) in targets.iter().zip(&max_walls) {
                let r = floor + bonus * k - t.snr;
                sse += r * r;
                cheb = cheb.max(r.abs());
            }
            best_snr_chebyshev = best_snr_chebyshev.min(cheb);
            if sse < best_snr.0 {
                best_snr = (sse, i_f, i_b);
            }
        }
    }

    let mut materials = base.materials;
    for (k, m) in free.iter().enumerate() {
        materials.set(*m, MATERIAL_AXIS.value(best_att.3[k]));
    }
    let params = RadioParams {
        reference_loss_l0: L0_AXIS.value(best_att.1),
        path_loss_exponent: EXPONENT_AXIS.value(best_att.2),
        ambient_noise_floor: NOISE_FLOOR_AXIS.value(best_snr.1),
        interference_bonus: BONUS_AXIS.value(best_snr.2),
        materials,
    };
    let residuals = residuals_for(targets, &params);

    let best_chebyshev = best_att_chebyshev.max(best_snr_chebyshev);
    if best_chebyshev > CALIBRATION_FEASIBILITY_DB {
        return Err(CalibrationError::Infeasible {
            limit: CALIBRATION_FEASIBILITY_DB,
            best_max_residual: best_chebyshev,
            residuals,
        });
    }
    Ok(Calibration {
        params,
        sum_squared_error: best_att.0 + best_snr.0,
        residuals,
        fitted_materials: free,
    })
}

/// Worst attenuation and worst SNR-metric of a link set under `params`.
pub fn worst_link(links: &[LinkGeometry], params: &RadioParams) -> (f64, f64) {
    links.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(att, snr), l| {
        let walls: f64 = l
            .crossings
            .iter()
            .map(|(m, over)| over.unwrap_or_else(|| params.materials.get(*m)))
            .sum();
        let a = params.reference_loss_l0 + 10.0 * params.path_loss_exponent * l.distance.log10() + walls;
        let s = params.ambient_noise_floor + params.interference_bonus * l.crossings.len() as f64;
        (att.max(a), snr.max(s))
    })
}

pub fn residuals_for(targets: &[CalibrationTarget], params: &RadioParams) -> Vec<TargetResidual> {
    targets
        .iter()
        .map(|t| {
            let (att, snr) = worst_link(&t.links, params);
            TargetResidual {
                label: t.label.clone(),
                target_attenuation: t.attenuation,
                fitted_attenuation: att,
                target_snr: t.snr,
                fitted_snr: snr,
            }
        })
        .collect()
}
