//! Synthetic map generation: roundabouts, curved roads, and straight roads,
//! each expanded into dense reference-path polylines (vertex spacing
//! <= 0.5 m), stop signs, and an implicit road corridor.

use serde::{Deserialize, Serialize};

use crate::frenet::ReferencePath;
use crate::types::Point;

/// Maximum spacing between generated polyline vertices.
pub const VERTEX_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Roundabout,
    CurvedRoad,
    StraightRoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub kind: MapKind,
    /// Circle radius for roundabouts, curvature radius for curved roads.
    pub radius: f64,
    /// Arm length for roundabouts, road length otherwise.
    pub length: f64,
    /// Number of entry/exit arms (roundabouts only, >= 2).
    pub exit_count: usize,
    pub lane_width: f64,
    /// Stop sign placement as arclengths along each entry arm (roundabouts)
    /// or along the road (other kinds).
    pub stop_sign_positions: Vec<f64>,
    pub speed_limit: f64,
    /// Include (entry == exit) full-loop paths for roundabouts.
    #[serde(default = "default_true")]
    pub include_u_turns: bool,
}

fn default_true() -> bool {
    true
}

impl MapSpec {
    pub fn roundabout(radius: f64, exit_count: usize) -> Self {
        MapSpec {
            kind: MapKind::Roundabout,
            radius,
            length: 20.0,
            exit_count,
            lane_width: 3.5,
            stop_sign_positions: vec![15.0],
            speed_limit: 8.0,
            include_u_turns: true,
        }
    }

    pub fn curved_road(radius: f64, length: f64) -> Self {
        MapSpec {
            kind: MapKind::CurvedRoad,
            radius,
            length,
            exit_count: 0,
            lane_width: 3.5,
            stop_sign_positions: vec![],
            speed_limit: 8.0,
            include_u_turns: false,
        }
    }

    pub fn straight_road(length: f64) -> Self {
        MapSpec {
            kind: MapKind::StraightRoad,
            radius: 0.0,
            length,
            exit_count: 0,
            lane_width: 3.5,
            stop_sign_positions: vec![],
            speed_limit: 8.0,
            include_u_turns: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == MapKind::Roundabout && self.exit_count < 2 {
            return Err("roundabout needs exit_count >= 2".into());
        }
        if self.length <= 0.0 {
            return Err("length must be > 0".into());
        }
        if self.kind != MapKind::StraightRoad && self.radius <= 0.0 {
            return Err("radius must be > 0".into());
        }
        if self.lane_width <= 0.0 || self.speed_limit <= 0.0 {
            return Err("lane_width and speed_limit must be > 0".into());
        }
        Ok(())
    }
}

/// A generated map: reference paths plus context. The road surface is the
/// corridor of half-width `lane_width/2` around the union of paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub map_id: String,
    pub spec: MapSpec,
    pub paths: Vec<ReferencePath>,
    /// Entry arm index per path (0 for single-path maps).
    pub path_entries: Vec<usize>,
    /// Exit arm index per path (0 for single-path maps).
    pub path_exits: Vec<usize>,
    pub stop_signs: Vec<Point>,
}

impl World {
    pub fn lane_width(&self) -> f64 {
        self.spec.lane_width
    }

    pub fn speed_limit(&self) -> f64 {
        self.spec.speed_limit
    }

    /// Find the world a scene's map id refers to.
    pub fn find<'a>(worlds: &'a [World], map_id: &str) -> crate::error::Result<&'a World> {
        worlds
            .iter()
            .find(|w| w.map_id == map_id)
            .ok_or_else(|| crate::error::Error::invalid("scene", format!("unknown map {map_id}")))
    }

    /// True when the point lies within the road corridor of any path.
    pub fn on_road(&self, p: Point) -> bool {
        self.paths.iter().any(|path| {
            let f = path.to_frenet(p);
            f.d.abs() <= self.spec.lane_width / 2.0 + 0.1
        })
    }
}

fn sample_line(from: Point, to: Point) -> Vec<Point> {
    let len = from.distance(&to);
    let n = (len / VERTEX_SPACING).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            Point::new(from.x + t * (to.x - from.x), from.y + t * (to.y - from.y))
        })
        .collect()
}

fn sample_arc(radius: f64, start_angle: f64, sweep: f64) -> Vec<Point> {
    let arc_len = radius * sweep.abs();
    let n = (arc_len / VERTEX_SPACING).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let a = start_angle + sweep * i as f64 / n as f64;
            Point::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Deterministic map construction. The same (spec, seed) always yields an
/// identical world; the seed only feeds the map id so that worlds generated
/// for different runs stay distinguishable.
pub fn generate_map(spec: &MapSpec, seed: u64) -> World {
    spec.validate().expect("invalid map spec");
    let map_id = format!(
        "{:?}-r{:.1}-l{:.1}-e{}-s{}",
        spec.kind, spec.radius, spec.length, spec.exit_count, seed
    )
    .to_lowercase();
    match spec.kind {
        MapKind::Roundabout => roundabout_world(spec, map_id),
        MapKind::CurvedRoad => {
            let sweep = spec.length / spec.radius;
            let pts = sample_arc(spec.radius, -sweep / 2.0, sweep);
            let path = ReferencePath::new(pts);
            let stop_signs = signs_along(&path, &spec.stop_sign_positions);
            World {
                map_id,
                spec: spec.clone(),
                paths: vec![path],
                path_entries: vec![0],
                path_exits: vec![0],
                stop_signs,
            }
        }
        MapKind::StraightRoad => {
            let pts = sample_line(Point::new(0.0, 0.0), Point::new(spec.length, 0.0));
            let path = ReferencePath::new(pts);
            let stop_signs = signs_along(&path, &spec.stop_sign_positions);
            World {
                map_id,
                spec: spec.clone(),
                paths: vec![path],
                path_entries: vec![0],
                path_exits: vec![0],
                stop_signs,
            }
        }
    }
}

fn signs_along(path: &ReferencePath, arclengths: &[f64]) -> Vec<Point> {
    arclengths
        .iter()
        .map(|&s| path.point_at(s.clamp(0.0, path.total_length())))
        .collect()
}

fn roundabout_world(spec: &MapSpec, map_id: String) -> World {
    let r = spec.radius;
    let k = spec.exit_count;
    let two_pi = 2.0 * std::f64::consts::PI;

    // Entry arm i approaches the circle tangentially at angle theta_i;
    // traffic runs counterclockwise.
    let tangency = |i: usize| {
        let a = two_pi * i as f64 / k as f64;
        (Point::new(r * a.cos(), r * a.sin()), a)
    };
    let tangent_dir = |a: f64| (-a.sin(), a.cos());

    let mut paths = Vec::new();
    let mut path_entries = Vec::new();
    let mut path_exits = Vec::new();
    for entry in 0..k {
        for exit in 0..k {
            if entry == exit && !spec.include_u_turns {
                continue;
            }
            let (t_in, a_in) = tangency(entry);
            let (_t_out, a_out) = tangency(exit);
            let (dx_in, dy_in) = tangent_dir(a_in);
            let arm_start =
                Point::new(t_in.x - spec.length * dx_in, t_in.y - spec.length * dy_in);
            let mut pts = sample_line(arm_start, t_in);
            // Counterclockwise sweep; entry == exit means a full loop.
            let mut sweep = a_out - a_in;
            while sweep <= 1e-9 {
                sweep += two_pi;
            }
            pts.extend(sample_arc(r, a_in, sweep));
            let (dx_out, dy_out) = tangent_dir(a_out);
            let t_out = Point::new(r * a_out.cos(), r * a_out.sin());
            let arm_end =
                Point::new(t_out.x + spec.length * dx_out, t_out.y + spec.length * dy_out);
            pts.extend(sample_line(t_out, arm_end));
            paths.push(ReferencePath::new(pts));
            path_entries.push(entry);
            path_exits.push(exit);
        }
    }

    // Stop signs sit on the entry arms, shared by every path using that arm.
    let mut stop_signs = Vec::new();
    for entry in 0..k {
        let (t_in, a_in) = tangency(entry);
        let (dx, dy) = tangent_dir(a_in);
        let arm_start = Point::new(t_in.x - spec.length * dx, t_in.y - spec.length * dy);
        for &s in &spec.stop_sign_positions {
            let s = s.clamp(0.0, spec.length);
            stop_signs.push(Point::new(arm_start.x + s * dx, arm_start.y + s * dy));
        }
    }

    World {
        map_id,
        spec: spec.clone(),
        paths,
        path_entries,
        path_exits,
        stop_signs,
    }
}
