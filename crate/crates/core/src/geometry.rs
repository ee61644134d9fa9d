//! Building geometry: points, attenuating walls, named regions and the
//! segment/wall crossing query the radio model is built on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate segment: both endpoints are ({x}, {y})")]
    DegenerateSegment { x: f64, y: f64 },
}

/// A position on the floor, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(self, other: Point2D) -> f64 {
        distance(self, other)
    }
}

/// Euclidean distance in meters.
pub fn distance(p: Point2D, q: Point2D) -> f64 {
    (q.x - p.x).hypot(q.y - p.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    ReinforcedConcrete,
    CinderBlock,
    Drywall,
    Wood,
}

impl Material {
    pub const ALL: [Material; 4] = [
        Material::ReinforcedConcrete,
        Material::CinderBlock,
        Material::Drywall,
        Material::Wood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::ReinforcedConcrete => "reinforced_concrete",
            Material::CinderBlock => "cinder_block",
            Material::Drywall => "drywall",
            Material::Wood => "wood",
        }
    }
}

/// A straight wall segment.
///
/// `attenuation` overrides the per-material loss from the radio parameters
/// for this one wall when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWall")]
pub struct Wall {
    pub a: Point2D,
    pub b: Point2D,
    pub material: Material,
    pub thickness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWall {
    a: Point2D,
    b: Point2D,
    material: Material,
    thickness: f64,
    #[serde(default)]
    attenuation: Option<f64>,
}

impl TryFrom<RawWall> for Wall {
    type Error = String;

    fn try_from(raw: RawWall) -> Result<Self, String> {
        Wall::new(raw.a, raw.b, raw.material, raw.thickness, raw.attenuation)
    }
}

impl Wall {
    pub fn new(
        a: Point2D,
        b: Point2D,
        material: Material,
        thickness: f64,
        attenuation: Option<f64>,
    ) -> Result<Self, String> {
        if a == b {
            return Err(format!("wall endpoints coincide at ({}, {})", a.x, a.y));
        }
        if !(thickness > 0.0 && thickness.is_finite()) {
            return Err(format!("wall thickness must be > 0, got {thickness}"));
        }
        if let Some(att) = attenuation {
            if !(att >= 0.0 && att.is_finite()) {
                return Err(format!("wall attenuation must be >= 0, got {att}"));
            }
        }
        Ok(Self {
            a,
            b,
            material,
            thickness,
            attenuation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Point2D,
    pub max: Point2D,
}

impl Rect {
    pub fn contains(&self, p: Point2D) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub polygon: Vec<Point2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFloorPlan")]
pub struct FloorPlan {
    pub extent: Rect,
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub regions: Vec<Region>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFloorPlan {
    extent: Rect,
    walls: Vec<Wall>,
    #[serde(default)]
    regions: Vec<Region>,
}

impl TryFrom<RawFloorPlan> for FloorPlan {
    type Error = String;

    fn try_from(raw: RawFloorPlan) -> Result<Self, String> {
        FloorPlan::new(raw.extent, raw.walls, raw.regions)
    }
}

impl FloorPlan {
    pub fn new(extent: Rect, walls: Vec<Wall>, regions: Vec<Region>) -> Result<Self, String> {
        if !(extent.min.x < extent.max.x && extent.min.y < extent.max.y) {
            return Err("extent: min must be strictly below max on both axes".into());
        }
        for (i, w) in walls.iter().enumerate() {
            if !extent.contains(w.a) || !extent.contains(w.b) {
                return Err(format!("walls[{i}] lies outside the floor-plan extent"));
            }
        }
        let mut names: Vec<&str> = regions.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("region name `{}` is not unique", dup[0]));
        }
        Ok(Self {
            extent,
            walls,
            regions,
        })
    }

    /// A plan with no walls, handy for tests and open-field placements.
    pub fn open(extent: Rect) -> Self {
        Self {
            extent,
            walls: Vec::new(),
            regions: Vec::new(),
        }
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Walls crossed by the segment `p`→`q`, nearest to `p` first.
    pub fn crossings(&self, p: Point2D, q: Point2D) -> Result<Vec<&Wall>, GeometryError> {
        wall_crossings(p, q, self)
    }
}

fn cross(o: Point2D, a: Point2D, b: Point2D) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Parameter along `p`→`q` at which the segment first meets wall `a`-`b`,
/// or `None` when they do not meet. Touching counts; a collinear overlap
/// reports its nearest point.
fn first_contact(p: Point2D, q: Point2D, a: Point2D, b: Point2D) -> Option<f64> {
    let d1 = cross(p, q, a);
    let d2 = cross(p, q, b);
    let d3 = cross(a, b, p);
    let d4 = cross(a, b, q);

    if d1 == 0.0 && d2 == 0.0 {
        // Collinear: project the wall endpoints onto pq.
        let len2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
        let t = |r: Point2D| ((r.x - p.x) * (q.x - p.x) + (r.y - p.y) * (q.y - p.y)) / len2;
        let (ta, tb) = (t(a), t(b));
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        return Some(lo.max(0.0));
    }

    let straddles_wall = (d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0);
    let straddles_path = (d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0);
    let touches_wall = d3 == 0.0 || d4 == 0.0;
    let touches_path = d1 == 0.0 || d2 == 0.0;

    if (straddles_wall || touches_wall) && (straddles_path || touches_path) {
        if touches_wall && !straddles_wall {
            // p or q lies on the wall line; make sure it is on the segment.
            let on = |r: Point2D| {
                r.x >= a.x.min(b.x) && r.x <= a.x.max(b.x) && r.y >= a.y.min(b.y) && r.y <= a.y.max(b.y)
            };
            return match (d3 == 0.0 && on(p), d4 == 0.0 && on(q)) {
                (true, _) => Some(0.0),
                (false, true) => Some(1.0),
                _ => None,
            };
        }
        if touches_path && !straddles_path {
            // A wall endpoint sits on pq; straddles_wall guarantees it is within the segment.
            let r = if d1 == 0.0 { a } else { b };
            let len2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
            let t = ((r.x - p.x) * (q.x - p.x) + (r.y - p.y) * (q.y - p.y)) / len2;
            return Some(t.clamp(0.0, 1.0));
        }
        return Some(d3 / (d3 - d4));
    }
    None
}

/// Every wall the segment `p`→`q` meets, ordered by distance from `p`.
///
/// Touching a wall endpoint counts as a crossing, and a segment running
/// along a wall counts that wall once.
pub fn wall_crossings(
    p: Point2D,
    q: Point2D,
    plan: &FloorPlan,
) -> Result<Vec<&Wall>, GeometryError> {
    if p == q {
        return Err(GeometryError::DegenerateSegment { x: p.x, y: p.y });
    }
    let mut hits: Vec<(f64, usize)> = plan
        .walls
        .iter()
        .enumerate()
        .filter_map(|(i, w)| first_contact(p, q, w.a, w.b).map(|t| (t, i)))
        .collect();
    hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    Ok(hits.into_iter().map(|(_, i)| &plan.walls[i]).collect())
}
