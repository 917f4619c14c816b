//! Billiard tables: boundary components, the free-flight return map and
//! specular reflection.
//!
//! Planar tables (polygons, the two-disc chamber, the engine triangle) carry
//! velocities in the `x`/`y` components of a [`Vec3`] with `z = 0`. The
//! two-plate model uses all three velocity components; plate 1 sits at
//! `z = 0` with inward normal `+z` and plate 2 at `z = separation` with
//! inward normal `-z`.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Point = Vector2<f64>;

/// Relative tolerance for corner, grazing and on-boundary checks. Distances
/// are scaled by the table diameter.
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("trajectory hit a corner of component {component} at position {position}")]
    CornerHit { component: usize, position: f64 },
    #[error("trajectory grazes component {component} (normal cosine {cosine:e})")]
    Grazing { component: usize, cosine: f64 },
    #[error("no boundary hit found along the flight")]
    Escaped,
    #[error("velocity is not strictly inward at component {component}")]
    NotInward { component: usize },
    #[error("position {position} outside the parameter range of component {component}")]
    PositionOutOfRange { component: usize, position: f64 },
    #[error("unknown component {0}")]
    UnknownComponent(usize),
    #[error("invalid component: {0}")]
    InvalidComponent(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
}

/// Plate index in the two-plate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateSide {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Straight piece; the interior lies to the left of `p0 -> p1`.
    Segment { p0: Point, p1: Point },
    /// Circular arc traversed counterclockwise from `angle_start` to
    /// `angle_end`; the interior lies on the side of the center.
    Arc {
        center: Point,
        radius: f64,
        angle_start: f64,
        angle_end: f64,
    },
    /// One of the two flat-torus plates.
    Plate { side: PlateSide, separation: f64 },
}

impl Shape {
    fn length(&self) -> f64 {
        match *self {
            Shape::Segment { p0, p1 } => (p1 - p0).norm(),
            Shape::Arc {
                radius,
                angle_start,
                angle_end,
                ..
            } => radius * (angle_end - angle_start),
            Shape::Plate { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryComponent {
    pub id: usize,
    pub shape: Shape,
    pub temperature: f64,
    pub accommodation: f64,
    pub area: f64,
}

impl BoundaryComponent {
    pub fn new(
        id: usize,
        shape: Shape,
        temperature: f64,
        accommodation: f64,
    ) -> Result<Self, GeometryError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(GeometryError::InvalidComponent(format!(
                "component {id}: temperature must be finite and > 0, got {temperature}"
            )));
        }
        if !(accommodation > 0.0 && accommodation <= 1.0) {
            return Err(GeometryError::InvalidComponent(format!(
                "component {id}: accommodation must lie in (0, 1], got {accommodation}"
            )));
        }
        match shape {
            Shape::Segment { p0, p1 } => {
                if (p1 - p0).norm() == 0.0 || !p0.iter().chain(p1.iter()).all(|c| c.is_finite()) {
                    return Err(GeometryError::InvalidComponent(format!(
                        "component {id}: segment endpoints must be finite and distinct"
                    )));
                }
            }
            Shape::Arc {
                radius,
                angle_start,
                angle_end,
                ..
            } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(GeometryError::InvalidComponent(format!(
                        "component {id}: arc radius must be > 0"
                    )));
                }
                if !(angle_end > angle_start) || angle_end - angle_start > 2.0 * PI {
                    return Err(GeometryError::InvalidComponent(format!(
                        "component {id}: arc angles must satisfy start < end <= start + 2pi"
                    )));
                }
            }
            Shape::Plate { separation, .. } => {
                if !(separation.is_finite() && separation > 0.0) {
                    return Err(GeometryError::InvalidComponent(format!(
                        "component {id}: plate separation must be > 0"
                    )));
                }
            }
        }
        let area = component_area(&shape);
        Ok(Self {
            id,
            shape,
            temperature,
            accommodation,
            area,
        })
    }
}

/// Boundary measure of a component: length for planar curves, 1 for a plate.
pub fn component_area(shape: &Shape) -> f64 {
    shape.length()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    TwoPlates,
    Polygon,
    DiscUnion,
    TriangleEngine,
}

/// Thermal parameters of one boundary component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thermostat {
    pub temperature: f64,
    pub accommodation: f64,
}

impl Thermostat {
    pub fn new(temperature: f64, accommodation: f64) -> Self {
        Self {
            temperature,
            accommodation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    dimension: usize,
    kind: TableKind,
    components: Vec<BoundaryComponent>,
    diameter: f64,
}

/// Boundary state with an inward (post-collision) velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub component: usize,
    pub position: f64,
    pub velocity: Vec3,
}

/// Landing point of a free flight, carrying the pre-collision velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreCollisionPoint {
    pub component: usize,
    pub position: f64,
    pub velocity: Vec3,
    pub flight_length: f64,
}

impl Table {
    pub fn two_plates(separation: f64, plates: [Thermostat; 2]) -> Result<Self, GeometryError> {
        let sides = [PlateSide::First, PlateSide::Second];
        let components = sides
            .iter()
            .zip(plates.iter())
            .enumerate()
            .map(|(id, (&side, th))| {
                BoundaryComponent::new(
                    id,
                    Shape::Plate { side, separation },
                    th.temperature,
                    th.accommodation,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dimension: 3,
            kind: TableKind::TwoPlates,
            components,
            diameter: separation,
        })
    }

    /// Simple polygon with counterclockwise vertices; edge `i` runs from
    /// vertex `i` to vertex `i + 1` and is component `i`.
    pub fn polygon(vertices: &[Point], edges: &[Thermostat]) -> Result<Self, GeometryError> {
        Self::polygon_of_kind(vertices, edges, TableKind::Polygon)
    }

    fn polygon_of_kind(
        vertices: &[Point],
        edges: &[Thermostat],
        kind: TableKind,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::InvalidTable(
                "a polygon needs at least three vertices".into(),
            ));
        }
        if edges.len() != n {
            return Err(GeometryError::InvalidTable(format!(
                "polygon with {n} edges needs {n} thermostats, got {}",
                edges.len()
            )));
        }
        let twice_area: f64 = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                a.x * b.y - a.y * b.x
            })
            .sum();
        if !(twice_area > 0.0) {
            return Err(GeometryError::InvalidTable(
                "polygon vertices must be listed counterclockwise".into(),
            ));
        }
        let components = (0..n)
            .map(|i| {
                BoundaryComponent::new(
                    i,
                    Shape::Segment {
                        p0: vertices[i],
                        p1: vertices[(i + 1) % n],
                    },
                    edges[i].temperature,
                    edges[i].accommodation,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut diameter: f64 = 0.0;
        for a in vertices {
            for b in vertices {
                diameter = diameter.max((a - b).norm());
            }
        }
        Ok(Self {
            dimension: 2,
            kind,
            components,
            diameter,
        })
    }

    /// Equilateral triangle with vertices `(0,0)`, `(s,0)`, `(s/2, s*sqrt(3)/2)`.
    pub fn equilateral_triangle(side: f64, edges: [Thermostat; 3]) -> Result<Self, GeometryError> {
        if !(side.is_finite() && side > 0.0) {
            return Err(GeometryError::InvalidTable("side length must be > 0".into()));
        }
        let h = side * 3f64.sqrt() / 2.0;
        let vertices = [
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side / 2.0, h),
        ];
        Self::polygon(&vertices, &edges)
    }

    /// Downward-pointing equilateral triangle used by the heat engine.
    ///
    /// Component 0 is the left wall (top-left corner to the bottom apex),
    /// component 1 the right wall, component 2 the horizontal top side that
    /// acts as the sliding belt. The top side lies on `y = 0`.
    pub fn engine_triangle(
        side: f64,
        hot: Thermostat,
        cold: Thermostat,
    ) -> Result<Self, GeometryError> {
        if !(side.is_finite() && side > 0.0) {
            return Err(GeometryError::InvalidTable("side length must be > 0".into()));
        }
        let h = side * 3f64.sqrt() / 2.0;
        let vertices = [
            Point::new(0.0, 0.0),
            Point::new(side / 2.0, -h),
            Point::new(side, 0.0),
        ];
        // the belt is mechanically driven, its thermostat is never used
        let belt = Thermostat::new(1.0, 1.0);
        Self::polygon_of_kind(&vertices, &[hot, cold, belt], TableKind::TriangleEngine)
    }

    /// Union of two discs of radius `radius` whose centers are `2 * ratio *
    /// radius` apart, centered on the origin along the `x` axis. Component 0
    /// is the left arc, component 1 the right arc. The two cusps are corners.
    pub fn disc_union(radius: f64, ratio: f64, arcs: [Thermostat; 2]) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidTable("radius must be > 0".into()));
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(GeometryError::InvalidTable(format!(
                "ratio a/2r must lie in [0, 1), got {ratio}"
            )));
        }
        let half = ratio * radius;
        // polar angle of the upper cusp seen from the left center
        let cusp = ratio.acos();
        let left = Shape::Arc {
            center: Point::new(-half, 0.0),
            radius,
            angle_start: cusp,
            angle_end: 2.0 * PI - cusp,
        };
        let right = Shape::Arc {
            center: Point::new(half, 0.0),
            radius,
            angle_start: -(PI - cusp),
            angle_end: PI - cusp,
        };
        let components = vec![
            BoundaryComponent::new(0, left, arcs[0].temperature, arcs[0].accommodation)?,
            BoundaryComponent::new(1, right, arcs[1].temperature, arcs[1].accommodation)?,
        ];
        Ok(Self {
            dimension: 2,
            kind: TableKind::DiscUnion,
            components,
            diameter: 2.0 * (radius + half),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn components(&self) -> &[BoundaryComponent] {
        &self.components
    }

    pub fn component(&self, id: usize) -> Result<&BoundaryComponent, GeometryError> {
        self.components
            .get(id)
            .ok_or(GeometryError::UnknownComponent(id))
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn total_area(&self) -> f64 {
        self.components.iter().map(|c| c.area).sum()
    }

    /// Normalized boundary measure of each component.
    pub fn normalized_areas(&self) -> Vec<f64> {
        let total = self.total_area();
        self.components.iter().map(|c| c.area / total).collect()
    }

    fn tolerance(&self) -> f64 {
        GEOM_TOL * self.diameter
    }

    /// Cartesian location of a boundary point on a planar table.
    pub fn point_at(&self, component: usize, position: f64) -> Result<Point, GeometryError> {
        let c = self.component(component)?;
        self.check_position(c, position)?;
        Ok(match c.shape {
            Shape::Segment { p0, p1 } => p0 + (p1 - p0) * (position / c.area),
            Shape::Arc {
                center,
                radius,
                angle_start,
                ..
            } => {
                let theta = angle_start + position / radius;
                center + radius * Point::new(theta.cos(), theta.sin())
            }
            Shape::Plate { .. } => Point::zeros(),
        })
    }

    fn check_position(&self, c: &BoundaryComponent, position: f64) -> Result<(), GeometryError> {
        let tol = self.tolerance();
        if !position.is_finite() || position < -tol || position > c.area + tol {
            return Err(GeometryError::PositionOutOfRange {
                component: c.id,
                position,
            });
        }
        Ok(())
    }

    /// Return map: follow the straight flight from `x` to the next boundary hit.
    pub fn trace(&self, x: &PhasePoint) -> Result<PreCollisionPoint, GeometryError> {
        let normal = self.inward_normal(x.component, x.position)?;
        let speed = x.velocity.norm();
        let cos_out = x.velocity.dot(&normal);
        if !(cos_out > 0.0) {
            return Err(GeometryError::NotInward {
                component: x.component,
            });
        }
        if cos_out < GEOM_TOL * speed {
            return Err(GeometryError::Grazing {
                component: x.component,
                cosine: cos_out / speed,
            });
        }
        if self.kind == TableKind::TwoPlates {
            let separation = match self.components[x.component].shape {
                Shape::Plate { separation, .. } => separation,
                _ => unreachable!("two-plate tables only hold plates"),
            };
            return Ok(PreCollisionPoint {
                component: 1 - x.component,
                position: x.position,
                velocity: x.velocity,
                flight_length: separation * speed / cos_out,
            });
        }
        let origin = self.point_at(x.component, x.position)?;
        let (component, position, t) = self.first_hit(origin, x.velocity.xy(), Some(x.component))?;
        Ok(PreCollisionPoint {
            component,
            position,
            velocity: x.velocity,
            flight_length: t * speed,
        })
    }

    /// First boundary crossing of the ray `origin + t * dir`, `t > 0`.
    ///
    /// `from` names the component the ray departs from; its departure root is
    /// excluded. Returns `(component, position, t)`.
    pub fn first_hit(
        &self,
        origin: Point,
        dir: Point,
        from: Option<usize>,
    ) -> Result<(usize, f64, f64), GeometryError> {
        let tol = self.tolerance();
        let dir_norm = dir.norm();
        let t_min = tol / dir_norm;
        let mut best: Option<(usize, f64, f64)> = None;
        for c in &self.components {
            let candidate = match c.shape {
                Shape::Segment { p0, p1 } => {
                    if from == Some(c.id) {
                        continue;
                    }
                    ray_segment(origin, dir, p0, p1, tol).map(|(t, s)| (t, s * c.area))
                }
                Shape::Arc {
                    center,
                    radius,
                    angle_start,
                    angle_end,
                } => ray_arc(
                    origin,
                    dir,
                    center,
                    radius,
                    angle_start,
                    angle_end,
                    from == Some(c.id),
                    t_min,
                    tol,
                ),
                Shape::Plate { .. } => None,
            };
            if let Some((t, pos)) = candidate {
                if t > t_min && best.is_none_or(|(_, _, bt)| t < bt) {
                    best = Some((c.id, pos, t));
                }
            }
        }
        let (id, pos, t) = best.ok_or(GeometryError::Escaped)?;
        let area = self.components[id].area;
        if pos < tol || pos > area - tol {
            return Err(GeometryError::CornerHit {
                component: id,
                position: pos,
            });
        }
        let pos = pos.clamp(0.0, area);
        let normal = self.inward_normal(id, pos)?;
        let cosine = -(dir.x * normal.x + dir.y * normal.y) / dir_norm;
        if cosine < GEOM_TOL {
            return Err(GeometryError::Grazing {
                component: id,
                cosine,
            });
        }
        Ok((id, pos, t))
    }

    /// Unit inward normal at a boundary point.
    pub fn inward_normal(&self, component: usize, position: f64) -> Result<Vec3, GeometryError> {
        let c = self.component(component)?;
        self.check_position(c, position)?;
        Ok(match c.shape {
            Shape::Segment { p0, p1 } => {
                let d = (p1 - p0) / c.area;
                Vec3::new(-d.y, d.x, 0.0)
            }
            Shape::Arc {
                radius,
                angle_start,
                ..
            } => {
                let theta = angle_start + position / radius;
                Vec3::new(-theta.cos(), -theta.sin(), 0.0)
            }
            Shape::Plate { side, .. } => match side {
                PlateSide::First => Vec3::new(0.0, 0.0, 1.0),
                PlateSide::Second => Vec3::new(0.0, 0.0, -1.0),
            },
        })
    }
}

/// Ray against segment `p0 -> p1`; returns `(t, u)` with `u` the fraction
/// along the segment, accepting `u` slightly outside `[0, 1]` so that corner
/// hits can be reported by the caller.
fn ray_segment(origin: Point, dir: Point, p0: Point, p1: Point, tol: f64) -> Option<(f64, f64)> {
    let e = p1 - p0;
    let denom = cross(dir, e);
    if denom == 0.0 {
        return None;
    }
    let w = p0 - origin;
    let t = cross(w, e) / denom;
    let u = cross(w, dir) / denom;
    let slack = tol / e.norm();
    if u < -slack || u > 1.0 + slack {
        return None;
    }
    Some((t, u))
}

#[allow(clippy::too_many_arguments)]
fn ray_arc(
    origin: Point,
    dir: Point,
    center: Point,
    radius: f64,
    angle_start: f64,
    angle_end: f64,
    departs_here: bool,
    t_min: f64,
    tol: f64,
) -> Option<(f64, f64)> {
    let f = origin - center;
    let a = dir.norm_squared();
    let b = f.dot(&dir);
    let roots: [f64; 2] = if departs_here {
        // origin is on the circle: the other root is exact
        [-2.0 * b / a, f64::NAN]
    } else {
        let c = f.norm_squared() - radius * radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // numerically stable pair of roots
        let q = -(b + b.signum() * sq);
        if q == 0.0 {
            return None;
        }
        let (r1, r2) = (q / a, c / q);
        if r1 < r2 {
            [r1, r2]
        } else {
            [r2, r1]
        }
    };
    let slack = tol / radius;
    let span = angle_end - angle_start;
    roots
        .iter()
        .filter(|t| t.is_finite() && **t > t_min)
        .filter_map(|&t| {
            let p = f + dir * t;
            let theta = p.y.atan2(p.x);
            let mut rel = (theta - angle_start).rem_euclid(2.0 * PI);
            // wrap points just below the start onto a negative offset
            if rel > span + slack && 2.0 * PI - rel < slack {
                rel -= 2.0 * PI;
            }
            (rel >= -slack && rel <= span + slack).then_some((t, rel * radius))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Specular reflection `v - 2 <v, n> n`.
pub fn specular(v: &Vec3, n: &Vec3) -> Vec3 {
    v - 2.0 * v.dot(n) * n
}
