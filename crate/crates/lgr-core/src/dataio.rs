//! Synthetic scene generation, augmentation, height features, and the
//! text formats for point clouds and ground-truth boxes.
//!
//! Scenes are desk-scale rooms: a handful of primitive objects (cuboid,
//! sphere, cylinder, cone) resting on the floor of an axis-aligned
//! extent centered on the origin in x and y, plus floor, wall, and dust
//! clutter. Every point carries one feature, its height above the
//! estimated floor. Ground truth is the tight axis-aligned box around
//! each object's final points, so every box provably contains its
//! object's full point allocation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::detect::{Box3, GtBox};
use crate::nncore::Tensor;
use crate::rng::{derive_seed, seeded_rng};
use crate::{invalid_arg, Error, Result, Scalar};

/// Guaranteed surface points per generated object.
pub const MIN_OBJECT_POINTS: usize = 50;

/// Fraction of the point budget spent on object surfaces.
const OBJECT_POINT_FRACTION: f64 = 0.55;
/// Clearance between placed objects and to the walls.
const PLACEMENT_GAP: f64 = 0.05;
const WALL_MARGIN: f64 = 0.1;
const PLACEMENT_TRIES: usize = 100;

/// Object shape vocabulary. Size ranges overlap across classes so no
/// single scalar (height, footprint) separates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectClass {
    Cuboid,
    Sphere,
    Cylinder,
    Cone,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] =
        [ObjectClass::Cuboid, ObjectClass::Sphere, ObjectClass::Cylinder, ObjectClass::Cone];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Cuboid => "cuboid",
            ObjectClass::Sphere => "sphere",
            ObjectClass::Cylinder => "cylinder",
            ObjectClass::Cone => "cone",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<ObjectClass> {
        Self::ALL.get(i).copied()
    }

    /// Samples full extents `[sx, sy, sz]`; rotationally symmetric
    /// classes force `sy = sx`.
    fn sample_size(self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            ObjectClass::Cuboid => [
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.2..0.5),
            ],
            ObjectClass::Sphere => {
                let d = rng.gen_range(0.2..0.45);
                [d, d, d]
            }
            ObjectClass::Cylinder => {
                let d = rng.gen_range(0.2..0.4);
                [d, d, rng.gen_range(0.25..0.55)]
            }
            ObjectClass::Cone => {
                let d = rng.gen_range(0.2..0.45);
                [d, d, rng.gen_range(0.25..0.5)]
            }
        }
    }

    /// One surface point in object-local coordinates (box centered at
    /// the origin).
    fn sample_surface(self, size: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
        let [sx, sy, sz] = size;
        match self {
            ObjectClass::Cuboid => {
                // Face chosen by area, position uniform on the face.
                let ax = sy * sz;
                let ay = sx * sz;
                let az = sx * sy;
                let pick = rng.gen_range(0.0..2.0 * (ax + ay + az));
                let sign = if rng.gen_bool(0.5) { 0.5 } else { -0.5 };
                let u = rng.gen_range(-0.5..0.5);
                let v = rng.gen_range(-0.5..0.5);
                if pick < 2.0 * ax {
                    [sign * sx, u * sy, v * sz]
                } else if pick < 2.0 * (ax + ay) {
                    [u * sx, sign * sy, v * sz]
                } else {
                    [u * sx, v * sy, sign * sz]
                }
            }
            ObjectClass::Sphere => {
                // Gaussian direction scaled onto the ellipsoid.
                let mut d = [0.0f64; 3];
                loop {
                    for v in &mut d {
                        *v = rng.sample(StandardNormal);
                    }
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if n > 1e-9 {
                        return [
                            0.5 * sx * d[0] / n,
                            0.5 * sy * d[1] / n,
                            0.5 * sz * d[2] / n,
                        ];
                    }
                }
            }
            ObjectClass::Cylinder => {
                let r = 0.5 * sx;
                let lateral = std::f64::consts::TAU * r * sz;
                let caps = 2.0 * std::f64::consts::PI * r * r;
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..lateral + caps) < lateral {
                    let z = rng.gen_range(-0.5..0.5) * sz;
                    [r * theta.cos(), r * theta.sin(), z]
                } else {
                    let rho = r * rng.gen_range(0.0..1.0f64).sqrt();
                    let z = if rng.gen_bool(0.5) { 0.5 * sz } else { -0.5 * sz };
                    [rho * theta.cos(), rho * theta.sin(), z]
                }
            }
            ObjectClass::Cone => {
                // Apex up; base disk at the bottom.
                let r = 0.5 * sx;
                let slant = (r * r + sz * sz).sqrt();
                let lateral = std::f64::consts::PI * r * slant;
                let base = std::f64::consts::PI * r * r;
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..lateral + base) < lateral {
                    // Uniform over the lateral surface: area grows with
                    // the squared distance from the apex.
                    let t = rng.gen_range(0.0..1.0f64).sqrt();
                    [t * r * theta.cos(), t * r * theta.sin(), 0.5 * sz - t * sz]
                } else {
                    let rho = r * rng.gen_range(0.0..1.0f64).sqrt();
                    [rho * theta.cos(), rho * theta.sin(), -0.5 * sz]
                }
            }
        }
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectClass::ALL
            .iter()
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| invalid_arg!("unknown object class {s:?}"))
    }
}

/// Scene generator parameters.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    /// Room size per axis in meters; x and y are centered on the
    /// origin, z starts at the floor (0).
    pub extent: [f64; 3],
    pub classes: Vec<ObjectClass>,
    /// Inclusive range of objects per scene.
    pub objects: (usize, usize),
    /// Total points per scene.
    pub points: usize,
    /// Gaussian surface noise, meters.
    pub noise_sigma: f64,
    /// Add floor and wall clutter (otherwise only uniform dust).
    pub floor: bool,
}

impl SceneSpec {
    /// Desk-scale default: a 4 x 4 x 2 m room, 2 to 4 objects from the
    /// full class set, 2048 points, 5 mm surface noise.
    pub fn desk() -> Self {
        SceneSpec {
            extent: [4.0, 4.0, 2.0],
            classes: ObjectClass::ALL.to_vec(),
            objects: (2, 4),
            points: 2048,
            noise_sigma: 0.005,
            floor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(invalid_arg!("extent {:?} must be positive", self.extent));
        }
        if self.extent[0] < 0.8 || self.extent[1] < 0.8 || self.extent[2] < 0.6 {
            return Err(invalid_arg!(
                "extent {:?} too small to host the object size ranges",
                self.extent
            ));
        }
        if self.classes.is_empty() {
            return Err(invalid_arg!("scene needs at least one object class"));
        }
        if self.objects.0 > self.objects.1 {
            return Err(invalid_arg!(
                "object range ({}, {}) is reversed",
                self.objects.0,
                self.objects.1
            ));
        }
        // Room for every object's minimum allocation plus clutter.
        let need = (self.objects.1.max(1)) * 2 * MIN_OBJECT_POINTS;
        if self.points < need {
            return Err(invalid_arg!(
                "{} points cannot host up to {} objects (need at least {need})",
                self.points,
                self.objects.1
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid_arg!("noise sigma {} must be nonnegative", self.noise_sigma));
        }
        Ok(())
    }
}

/// One scene: points with height features and ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub coords: Vec<[f64; 3]>,
    /// Height above the estimated floor, one per point.
    pub heights: Vec<f64>,
    pub boxes: Vec<GtBox>,
}

impl Sample {
    /// Converts to backbone inputs at the requested precision.
    pub fn as_inputs<S: Scalar>(&self) -> (Vec<[S; 3]>, Tensor<S>) {
        let coords = self
            .coords
            .iter()
            .map(|p| [S::of(p[0]), S::of(p[1]), S::of(p[2])])
            .collect();
        let feats = Tensor::from_vec(
            &[self.heights.len(), 1],
            self.heights.iter().map(|&h| S::of(h)).collect(),
        )
        .expect("heights match point count");
        (coords, feats)
    }
}

/// Floor estimate: the 1st percentile of z, robust against points that
/// dip below the floor from noise.
pub fn floor_level(coords: &[[f64; 3]]) -> f64 {
    if coords.is_empty() {
        return 0.0;
    }
    let mut zs: Vec<f64> = coords.iter().map(|p| p[2]).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    zs[((zs.len() - 1) as f64 * 0.01).floor() as usize]
}

/// Height feature per point: z minus the floor estimate.
pub fn compute_heights(coords: &[[f64; 3]]) -> Vec<f64> {
    let floor = floor_level(coords);
    coords.iter().map(|p| p[2] - floor).collect()
}

fn aabb_overlap(amin: [f64; 3], amax: [f64; 3], bmin: [f64; 3], bmax: [f64; 3]) -> bool {
    (0..3).all(|i| amin[i] < bmax[i] && bmin[i] < amax[i])
}

/// Generates one scene. Object count, classes, sizes, and poses come
/// from dedicated streams of `seed`, so equal seeds reproduce the scene
/// bit for bit.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let [ex, ey, ez] = spec.extent;
    let (xlo, xhi) = (-0.5 * ex, 0.5 * ex);
    let (ylo, yhi) = (-0.5 * ey, 0.5 * ey);
    let clamp = |p: [f64; 3]| -> [f64; 3] {
        [p[0].clamp(xlo, xhi), p[1].clamp(ylo, yhi), p[2].clamp(0.0, ez)]
    };

    // Placement: rejection sampling on separated footprints.
    let mut rng = seeded_rng(derive_seed(seed, &[0]));
    let count = rng.gen_range(spec.objects.0..=spec.objects.1);
    let mut placed: Vec<(ObjectClass, [f64; 3], [f64; 3])> = Vec::new();
    for _ in 0..count {
        let class = spec.classes[rng.gen_range(0..spec.classes.len())];
        let size = class.sample_size(&mut rng);
        for _ in 0..PLACEMENT_TRIES {
            let half = [0.5 * size[0], 0.5 * size[1], 0.5 * size[2]];
            let cx = rng.gen_range(xlo + WALL_MARGIN + half[0]..xhi - WALL_MARGIN - half[0]);
            let cy = rng.gen_range(ylo + WALL_MARGIN + half[1]..yhi - WALL_MARGIN - half[1]);
            let center = [cx, cy, half[2]];
            let cmin = [cx - half[0] - PLACEMENT_GAP, cy - half[1] - PLACEMENT_GAP, 0.0];
            let cmax = [cx + half[0] + PLACEMENT_GAP, cy + half[1] + PLACEMENT_GAP, size[2]];
            let collides = placed.iter().any(|(_, c, s)| {
                let omin = [c[0] - 0.5 * s[0], c[1] - 0.5 * s[1], c[2] - 0.5 * s[2]];
                let omax = [c[0] + 0.5 * s[0], c[1] + 0.5 * s[1], c[2] + 0.5 * s[2]];
                aabb_overlap(cmin, cmax, omin, omax)
            });
            if !collides {
                placed.push((class, center, size));
                break;
            }
        }
    }

    // Point budget: equal object shares of the surface fraction, never
    // below the minimum; the remainder is clutter.
    let per_object = if placed.is_empty() {
        0
    } else {
        ((OBJECT_POINT_FRACTION * spec.points as f64 / placed.len() as f64) as usize)
            .max(MIN_OBJECT_POINTS)
    };

    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(spec.points);
    let mut boxes = Vec::with_capacity(placed.len());
    for (oi, (class, center, size)) in placed.iter().enumerate() {
        let mut orng = seeded_rng(derive_seed(seed, &[1, oi as u64]));
        let start = coords.len();
        for _ in 0..per_object {
            let local = class.sample_surface(*size, &mut orng);
            let mut p = [
                center[0] + local[0],
                center[1] + local[1],
                center[2] + local[2],
            ];
            if spec.noise_sigma > 0.0 {
                for v in &mut p {
                    let n: f64 = orng.sample(StandardNormal);
                    *v += spec.noise_sigma * n;
                }
            }
            coords.push(clamp(p));
        }
        // Tight box around the object's final points, padded a hair and
        // clipped back to the extent so boundary points stay inside.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &coords[start..] {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let bounds = [[xlo, xhi], [ylo, yhi], [0.0, ez]];
        for i in 0..3 {
            lo[i] = (lo[i] - 1e-9).max(bounds[i][0]);
            hi[i] = (hi[i] + 1e-9).min(bounds[i][1]);
        }
        boxes.push(GtBox {
            bbox: Box3::new(
                [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])],
                [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
            )?,
            label: class.index(),
        });
    }

    // Clutter: floor and wall surfaces plus uniform dust.
    let mut crng = seeded_rng(derive_seed(seed, &[2]));
    let n_clutter = spec.points.saturating_sub(coords.len());
    let (n_floor, n_wall) = if spec.floor {
        ((n_clutter * 6) / 10, (n_clutter * 2) / 10)
    } else {
        (0, 0)
    };
    for ci in 0..n_clutter {
        let p = if ci < n_floor {
            let z: f64 = crng.sample::<f64, _>(StandardNormal).abs() * 0.02;
            [crng.gen_range(xlo..xhi), crng.gen_range(ylo..yhi), z]
        } else if ci < n_floor + n_wall {
            let along = crng.gen_range(0.0..1.0);
            let z = crng.gen_range(0.0..ez);
            let inward: f64 = crng.sample::<f64, _>(StandardNormal).abs() * 0.02;
            match crng.gen_range(0..4) {
                0 => [xlo + inward, ylo + along * ey, z],
                1 => [xhi - inward, ylo + along * ey, z],
                2 => [xlo + along * ex, ylo + inward, z],
                _ => [xlo + along * ex, yhi - inward, z],
            }
        } else {
            [
                crng.gen_range(xlo..xhi),
                crng.gen_range(ylo..yhi),
                crng.gen_range(0.0..ez),
            ]
        };
        coords.push(clamp(p));
    }

    // Shuffle so point order carries no object information.
    let mut srng = seeded_rng(derive_seed(seed, &[3]));
    for i in (1..coords.len()).rev() {
        let j = srng.gen_range(0..=i);
        coords.swap(i, j);
    }

    let heights = compute_heights(&coords);
    Ok(Sample { coords, heights, boxes })
}

/// Augmentation parameters: independent horizontal flips, a small
/// rotation about the upright axis, and a global scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip_x: bool,
    pub flip_y: bool,
    /// Radians about +z through the origin.
    pub angle: f64,
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams { flip_x: false, flip_y: false, angle: 0.0, scale: 1.0 }
    }
}

/// Draws flip coins, an angle uniform in [-5 deg, 5 deg], and a scale
/// uniform in [0.9, 1.1].
pub fn sample_augment_params(seed: u64) -> AugmentParams {
    let mut rng = seeded_rng(seed);
    AugmentParams {
        flip_x: rng.gen_bool(0.5),
        flip_y: rng.gen_bool(0.5),
        angle: rng.gen_range(-5.0f64.to_radians()..5.0f64.to_radians()),
        scale: rng.gen_range(0.9..1.1),
    }
}

/// Applies flips, then rotation, then scale to points and boxes
/// consistently; heights are recomputed afterward. Box centers follow
/// the rigid motion; after rotation the axis-aligned size is the tight
/// bound of the rotated box, which cannot lose any contained point.
pub fn apply_augmentation(sample: &Sample, params: &AugmentParams) -> Result<Sample> {
    if !(params.scale > 0.0) || !params.scale.is_finite() || !params.angle.is_finite() {
        return Err(invalid_arg!(
            "augmentation needs a finite angle and positive scale, got {params:?}"
        ));
    }
    let (sin, cos) = params.angle.sin_cos();
    let sx = if params.flip_x { -1.0 } else { 1.0 };
    let sy = if params.flip_y { -1.0 } else { 1.0 };
    let transform = |p: [f64; 3]| -> [f64; 3] {
        let (x, y, z) = (p[0] * sx, p[1] * sy, p[2]);
        [
            params.scale * (x * cos - y * sin),
            params.scale * (x * sin + y * cos),
            params.scale * z,
        ]
    };
    let coords: Vec<[f64; 3]> = sample.coords.iter().map(|&p| transform(p)).collect();
    let mut boxes = Vec::with_capacity(sample.boxes.len());
    for gt in &sample.boxes {
        let center = transform(gt.bbox.center);
        let [bx, by, bz] = gt.bbox.size;
        let size = [
            params.scale * (bx * cos.abs() + by * sin.abs()),
            params.scale * (bx * sin.abs() + by * cos.abs()),
            params.scale * bz,
        ];
        boxes.push(GtBox { bbox: Box3::new(center, size)?, label: gt.label });
    }
    let heights = compute_heights(&coords);
    Ok(Sample { coords, heights, boxes })
}

/// Seeded convenience wrapper over parameter sampling plus application.
pub fn augment(sample: &Sample, seed: u64) -> Result<Sample> {
    apply_augmentation(sample, &sample_augment_params(seed))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn format_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn parse_float(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} {tok:?}")));
    }
    Ok(v)
}

/// Companion ground-truth path: the points path with extension `lgrgt`.
pub fn companion_boxes_path(points_path: &Path) -> PathBuf {
    points_path.with_extension("lgrgt")
}

/// Writes a scene as `LGRPC1` points plus an `LGRGT1` companion next to
/// it. Values carry 9 significant digits.
pub fn save_points(path: &Path, sample: &Sample) -> Result<()> {
    if sample.heights.len() != sample.coords.len() {
        return Err(invalid_arg!(
            "{} heights vs {} points",
            sample.heights.len(),
            sample.coords.len()
        ));
    }
    let mut out = String::new();
    out.push_str(&format!("LGRPC1 {} 1\n", sample.coords.len()));
    for (p, h) in sample.coords.iter().zip(&sample.heights) {
        out.push_str(&format!(
            "{} {} {} {}\n",
            format_float(p[0]),
            format_float(p[1]),
            format_float(p[2]),
            format_float(*h)
        ));
    }
    write_atomic(path, out.as_bytes())?;

    let mut gt = String::new();
    gt.push_str(&format!("LGRGT1 {}\n", sample.boxes.len()));
    for b in &sample.boxes {
        gt.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            format_float(b.bbox.center[0]),
            format_float(b.bbox.center[1]),
            format_float(b.bbox.center[2]),
            format_float(b.bbox.size[0]),
            format_float(b.bbox.size[1]),
            format_float(b.bbox.size[2]),
            b.label
        ));
    }
    write_atomic(&companion_boxes_path(path), gt.as_bytes())?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a scene; the companion ground-truth file is optional (its
/// absence means an empty box list).
pub fn load_points(path: &Path) -> Result<Sample> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty points file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 3 || head[0] != "LGRPC1" {
        return Err(parse_err(1, format!("expected \"LGRPC1 N C\" header, got {header:?}")));
    }
    let n: usize = head[1]
        .parse()
        .map_err(|_| parse_err(1, format!("bad point count {:?}", head[1])))?;
    let c: usize = head[2]
        .parse()
        .map_err(|_| parse_err(1, format!("bad channel count {:?}", head[2])))?;
    if c != 1 {
        return Err(parse_err(1, format!("expected 1 feature channel, got {c}")));
    }
    let mut coords = Vec::with_capacity(n);
    let mut heights = Vec::with_capacity(n);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            return Err(parse_err(lineno, "blank line inside point list"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 + c {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, got {}", 3 + c, toks.len()),
            ));
        }
        coords.push([
            parse_float(toks[0], lineno, "x")?,
            parse_float(toks[1], lineno, "y")?,
            parse_float(toks[2], lineno, "z")?,
        ]);
        heights.push(parse_float(toks[3], lineno, "height")?);
    }
    if coords.len() != n {
        return Err(parse_err(
            coords.len() + 1,
            format!("header promised {n} points, file has {}", coords.len()),
        ));
    }
    let gt_path = companion_boxes_path(path);
    let boxes = if gt_path.exists() { load_boxes(&gt_path)? } else { Vec::new() };
    Ok(Sample { coords, heights, boxes })
}

/// Reads an `LGRGT1` box list.
pub fn load_boxes(path: &Path) -> Result<Vec<GtBox>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty box file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 || head[0] != "LGRGT1" {
        return Err(parse_err(1, format!("expected \"LGRGT1 M\" header, got {header:?}")));
    }
    let m: usize = head[1]
        .parse()
        .map_err(|_| parse_err(1, format!("bad box count {:?}", head[1])))?;
    let mut boxes = Vec::with_capacity(m);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(parse_err(lineno, format!("expected 7 fields, got {}", toks.len())));
        }
        let center = [
            parse_float(toks[0], lineno, "cx")?,
            parse_float(toks[1], lineno, "cy")?,
            parse_float(toks[2], lineno, "cz")?,
        ];
        let size = [
            parse_float(toks[3], lineno, "sx")?,
            parse_float(toks[4], lineno, "sy")?,
            parse_float(toks[5], lineno, "sz")?,
        ];
        let label: usize = toks[6]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label {:?}", toks[6])))?;
        let bbox = Box3::new(center, size)
            .map_err(|e| parse_err(lineno, format!("{e}")))?;
        boxes.push(GtBox { bbox, label });
    }
    if boxes.len() != m {
        return Err(parse_err(
            boxes.len() + 1,
            format!("header promised {m} boxes, file has {}", boxes.len()),
        ));
    }
    Ok(boxes)
}

/// Scene file stem for index `i` (zero padded for stable sorting).
pub fn scene_stem(i: usize) -> String {
    format!("{i:04}")
}

/// Writes one stem per line.
pub fn write_manifest(path: &Path, stems: &[String]) -> Result<()> {
    let mut out = String::new();
    for s in stems {
        out.push_str(s);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a manifest, ignoring blank lines.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}
