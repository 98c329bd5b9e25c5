//! Procedural road scenes rendered under a directional sun.
//!
//! One primary ray per pixel center, nearest hit against a ground plane and
//! axis-aligned boxes, hard shadows from a single occlusion ray, Lambertian
//! shading with an ambient term and a zenith-dependent sun tint.

pub mod geometry;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::RgbImage;
use crate::dataio::{self, DataError, Manifest, ManifestEntry, Split};
use crate::solarpos::SunPosition;

pub use geometry::{Aabb, Ray, Vec3};

/// Semantic class ids written by the renderer.
pub mod class {
    pub const GROUND: u8 = 0;
    pub const BUILDING: u8 = 1;
    pub const VEHICLE: u8 = 2;
    pub const SKY: u8 = 3;
    pub const NAMES: [&str; 4] = ["ground", "building", "vehicle", "sky"];
}

/// Depth written for rays that leave the scene.
pub const SKY_DEPTH: f64 = 1000.0;
/// Ground hits farther than this are treated as sky.
pub const MAX_DEPTH: f64 = 600.0;
pub const SHADOW_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera at {0:?} is inside object {1}")]
    DegenerateCamera(Vec3, usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid light: {0}")]
    InvalidLight(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    pub albedo: [f64; 3],
    /// Checker cell size in meters.
    pub checker_scale: f64,
    /// Relative albedo modulation of the checker, `0` disables it.
    pub checker_contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub center: Vec3,
    pub size: Vec3,
    pub class_id: u8,
    pub albedo: [f64; 3],
}

impl BoxObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_size(self.center, self.size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: Vec3,
    /// Rotation about the vertical axis, clockwise from scene-forward (+y).
    pub yaw_deg: f64,
    pub vfov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub ground: GroundSpec,
    pub objects: Vec<BoxObject>,
    pub camera: CameraSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightSpec {
    pub sun: SunPosition,
    pub ambient: f64,
    pub sun_intensity: f64,
    /// Sun tint reached at `warm_zenith` and beyond.
    pub warm_tint: [f64; 3],
    pub warm_zenith: f64,
    pub sky_rgb: [f64; 3],
}

impl LightSpec {
    pub fn new(sun: SunPosition) -> Self {
        Self {
            sun,
            ambient: 0.25,
            sun_intensity: 0.75,
            warm_tint: [1.0, 0.75, 0.5],
            warm_zenith: 85.0,
            sky_rgb: [0.53, 0.72, 0.92],
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        self.sun
            .validate()
            .map_err(|e| RenderError::InvalidLight(e.to_string()))?;
        if !self.sun.above_horizon() {
            return Err(RenderError::InvalidLight(format!("zenith {} is not above the horizon", self.sun.zenith)));
        }
        if !(self.ambient > 0.0 && self.ambient < 1.0) {
            return Err(RenderError::InvalidLight(format!("ambient {} outside (0, 1)", self.ambient)));
        }
        if !(self.sun_intensity >= 0.0 && self.sun_intensity.is_finite()) {
            return Err(RenderError::InvalidLight("sun intensity must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Linear blend from neutral overhead to `warm_tint` at `warm_zenith`.
    pub fn sun_color(&self) -> [f64; 3] {
        let t = (self.sun.zenith / self.warm_zenith).clamp(0.0, 1.0);
        std::array::from_fn(|c| 1.0 + t * (self.warm_tint[c] - 1.0))
    }

    /// Direct-light intensity, `sun_intensity * cos(zenith)^0.5`.
    pub fn direct_intensity(&self) -> f64 {
        self.sun_intensity * self.sun.zenith.to_radians().cos().max(0.0).sqrt()
    }

    pub fn sky_color(&self) -> [f64; 3] {
        let tint = self.sun_color();
        std::array::from_fn(|c| self.sky_rgb[c] * tint[c])
    }
}

/// Unit vector pointing at the sun: `z` up, azimuth clockwise from `+y`.
pub fn sun_direction(p: &SunPosition) -> Vec3 {
    let (az, zen) = (p.azimuth.to_radians(), p.zenith.to_radians());
    Vec3::new(zen.sin() * az.sin(), zen.sin() * az.cos(), zen.cos())
}

/// One aligned sample: color, planar depth, labels and the sun that lit it.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTuple {
    pub width: usize,
    pub height: usize,
    pub rgb: RgbImage,
    /// Meters along the camera forward axis, [`SKY_DEPTH`] for sky.
    pub depth: Vec<f64>,
    pub semseg: Vec<u8>,
    pub sun: SunPosition,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.objects.is_empty() {
            return Err(RenderError::InvalidScene("scene needs at least one object".into()));
        }
        if self.camera.position.z <= 0.0 {
            return Err(RenderError::InvalidScene("camera must be above the ground".into()));
        }
        if !(self.camera.vfov_deg > 0.0 && self.camera.vfov_deg < 180.0) {
            return Err(RenderError::InvalidScene("vertical fov must be in (0, 180)".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let b = o.aabb();
            if o.size.x <= 0.0 || o.size.y <= 0.0 || o.size.z <= 0.0 {
                return Err(RenderError::InvalidScene(format!("object {i} has non-positive size")));
            }
            if b.min.z < 0.0 {
                return Err(RenderError::InvalidScene(format!("object {i} extends below the ground")));
            }
            if o.class_id == class::GROUND || o.class_id == class::SKY {
                return Err(RenderError::InvalidScene(format!("object {i} uses reserved class {}", o.class_id)));
            }
            if b.contains(self.camera.position) {
                return Err(RenderError::DegenerateCamera(self.camera.position, i));
            }
        }
        Ok(())
    }

    /// Camera ray through the center of pixel `(row, col)`; `dir` has unit
    /// component along the forward axis so the hit distance is planar depth.
    pub fn camera_ray(&self, row: usize, col: usize, height: usize, width: usize) -> Ray {
        let cam = &self.camera;
        let yaw = cam.yaw_deg.to_radians();
        let forward = Vec3::new(yaw.sin(), yaw.cos(), 0.0);
        let right = Vec3::new(yaw.cos(), -yaw.sin(), 0.0);
        let up = Vec3::new(0.0, 0.0, 1.0);
        let tv = (cam.vfov_deg.to_radians() / 2.0).tan();
        let th = tv * width as f64 / height as f64;
        let u = ((col as f64 + 0.5) / width as f64 - 0.5) * 2.0 * th;
        let v = (0.5 - (row as f64 + 0.5) / height as f64) * 2.0 * tv;
        Ray {
            origin: cam.position,
            dir: forward + right * u + up * v,
        }
    }

    /// A random street: buildings along both sides, vehicles on the road.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut objects = Vec::new();
        for side in [-1.0, 1.0] {
            let mut y = rng.gen_range(6.0..14.0);
            while y < 70.0 {
                let depth = rng.gen_range(6.0..14.0);
                let width = rng.gen_range(4.0..9.0);
                let height = rng.gen_range(4.0..16.0);
                let x = side * (rng.gen_range(8.0..11.0) + width / 2.0);
                objects.push(BoxObject {
                    center: Vec3::new(x, y + depth / 2.0, height / 2.0),
                    size: Vec3::new(width, depth, height),
                    class_id: class::BUILDING,
                    albedo: [0.72, 0.64, 0.52],
                });
                y += depth + rng.gen_range(1.0..8.0);
            }
        }
        let vehicles = rng.gen_range(1..=4);
        for _ in 0..vehicles {
            let lane = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let x = lane * rng.gen_range(1.2..3.5);
            let y = rng.gen_range(6.0..35.0);
            let height = rng.gen_range(1.3..2.2);
            objects.push(BoxObject {
                center: Vec3::new(x, y, height / 2.0),
                size: Vec3::new(rng.gen_range(1.7..2.2), rng.gen_range(3.8..5.0), height),
                class_id: class::VEHICLE,
                albedo: [0.62, 0.16, 0.12],
            });
        }
        SceneSpec {
            seed,
            ground: GroundSpec {
                albedo: [0.42, 0.42, 0.44],
                checker_scale: 2.0,
                checker_contrast: 0.0,
            },
            objects,
            camera: CameraSpec {
                position: Vec3::new(rng.gen_range(-0.5..0.5), 0.0, rng.gen_range(1.6..2.4)),
                yaw_deg: rng.gen_range(-8.0..8.0),
                vfov_deg: 60.0,
            },
        }
    }
}

enum Surface {
    Ground,
    Object(usize),
}

struct Hit {
    t: f64,
    normal: Vec3,
    surface: Surface,
}

fn nearest_hit(scene: &SceneSpec, boxes: &[Aabb], ray: &Ray) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if ray.dir.z < 0.0 {
        let t = -ray.origin.z / ray.dir.z;
        if t <= MAX_DEPTH {
            best = Some(Hit {
                t,
                normal: Vec3::new(0.0, 0.0, 1.0),
                surface: Surface::Ground,
            });
        }
    }
    for (i, b) in boxes.iter().enumerate() {
        if let Some((t, normal)) = b.intersect(ray) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                best = Some(Hit {
                    t,
                    normal,
                    surface: Surface::Object(i),
                });
            }
        }
    }
    debug_assert_eq!(boxes.len(), scene.objects.len());
    best
}

/// Output of [`render_traced`]: the tuple plus the per-pixel shadow flag.
pub struct RenderTrace {
    pub tuple: RenderedTuple,
    pub shadow: Vec<bool>,
}

pub fn render(scene: &SceneSpec, light: &LightSpec, height: usize, width: usize) -> Result<RenderedTuple, RenderError> {
    render_traced(scene, light, height, width).map(|t| t.tuple)
}

/// Renders and also reports which pixels were occluded from the sun.
pub fn render_traced(
    scene: &SceneSpec,
    light: &LightSpec,
    height: usize,
    width: usize,
) -> Result<RenderTrace, RenderError> {
    scene.validate()?;
    light.validate()?;
    if height == 0 || width == 0 {
        return Err(RenderError::InvalidScene("raster must be at least 1x1".into()));
    }
    let boxes: Vec<Aabb> = scene.objects.iter().map(BoxObject::aabb).collect();
    let to_sun = sun_direction(&light.sun);
    let tint = light.sun_color();
    let direct = light.direct_intensity();
    let sky = light.sky_color();

    let n = height * width;
    let mut rgb = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut semseg = Vec::with_capacity(n);
    let mut shadow = Vec::with_capacity(n);
    for row in 0..height {
        for col in 0..width {
            let ray = scene.camera_ray(row, col, height, width);
            let Some(hit) = nearest_hit(scene, &boxes, &ray) else {
                rgb.push(sky);
                depth.push(SKY_DEPTH);
                semseg.push(class::SKY);
                shadow.push(false);
                continue;
            };
            let p = ray.at(hit.t);
            let (albedo, class_id) = match hit.surface {
                Surface::Ground => (ground_albedo(&scene.ground, p), class::GROUND),
                Surface::Object(i) => (scene.objects[i].albedo, scene.objects[i].class_id),
            };
            let occluder = Ray {
                origin: p + hit.normal * SHADOW_EPS,
                dir: to_sun,
            };
            let shadowed = boxes.iter().any(|b| b.intersect(&occluder).is_some());
            let lambert = if shadowed { 0.0 } else { hit.normal.dot(to_sun).max(0.0) };
            let radiance = light.ambient + direct * lambert;
            rgb.push(std::array::from_fn(|c| (albedo[c] * tint[c] * radiance).clamp(0.0, 1.0)));
            depth.push(hit.t);
            semseg.push(class_id);
            shadow.push(shadowed);
        }
    }
    Ok(RenderTrace {
        tuple: RenderedTuple {
            width,
            height,
            rgb: RgbImage { width, height, data: rgb },
            depth,
            semseg,
            sun: light.sun,
        },
        shadow,
    })
}

fn ground_albedo(g: &GroundSpec, p: Vec3) -> [f64; 3] {
    if g.checker_contrast == 0.0 {
        return g.albedo;
    }
    let cell = (p.x / g.checker_scale).floor() as i64 + (p.y / g.checker_scale).floor() as i64;
    let m = if cell.rem_euclid(2) == 0 {
        1.0 + g.checker_contrast
    } else {
        1.0 - g.checker_contrast
    };
    g.albedo.map(|a| a * m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub positions: Vec<SunPosition>,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Fraction of whole scenes held out for testing (at least one scene).
    pub test_fraction: f64,
}

impl DatasetConfig {
    pub fn new(scenes: usize, positions: Vec<SunPosition>, height: usize, width: usize, seed: u64) -> Self {
        Self {
            scenes,
            positions,
            height,
            width,
            seed,
            test_fraction: 0.1,
        }
    }
}

/// Scene ids assigned to the test split.
pub fn test_scenes(scenes: usize, fraction: f64, seed: u64) -> Vec<usize> {
    if scenes < 2 {
        return Vec::new();
    }
    let n_test = ((scenes as f64 * fraction).round() as usize).clamp(1, scenes - 1);
    let mut ids: Vec<usize> = (0..scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917_u64);
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let mut test = ids[..n_test].to_vec();
    test.sort_unstable();
    test
}

fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Renders every scene under every position and writes rasters plus a
/// manifest into `out`. Geometry is shared by all positions of a scene, so
/// depth and labels are written once per scene.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Manifest, RenderError> {
    if cfg.positions.is_empty() {
        return Err(RenderError::InvalidLight("no sun positions given".into()));
    }
    for p in &cfg.positions {
        LightSpec::new(*p).validate()?;
    }
    if cfg.scenes == 0 {
        return Err(RenderError::InvalidScene("need at least one scene".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    let test = test_scenes(cfg.scenes, cfg.test_fraction, cfg.seed);

    let per_scene: Vec<Result<Vec<ManifestEntry>, RenderError>> = (0..cfg.scenes)
        .into_par_iter()
        .map(|s| {
            let scene = SceneSpec::random(scene_seed(cfg.seed, s));
            let split = if test.binary_search(&s).is_ok() { Split::Test } else { Split::Train };
            let depth_rel = format!("scene{s:04}_depth.png");
            let semseg_rel = format!("scene{s:04}_semseg.png");
            let mut entries = Vec::with_capacity(cfg.positions.len());
            for (k, pos) in cfg.positions.iter().enumerate() {
                let tuple = render(&scene, &LightSpec::new(*pos), cfg.height, cfg.width)?;
                if k == 0 {
                    dataio::write_depth(&out.join(&depth_rel), &tuple.depth, cfg.width, cfg.height, dataio::DEPTH_SCALE)?;
                    dataio::write_semseg(&out.join(&semseg_rel), &tuple.semseg, cfg.width, cfg.height)?;
                }
                let rgb_rel = format!("scene{s:04}_pos{k:02}_rgb.png");
                dataio::write_rgb(&out.join(&rgb_rel), &tuple.rgb)?;
                entries.push(ManifestEntry {
                    id: format!("s{s:04}p{k:02}"),
                    scene_id: s,
                    split,
                    rgb: rgb_rel,
                    depth: depth_rel.clone(),
                    semseg: semseg_rel.clone(),
                    azimuth: pos.azimuth,
                    zenith: pos.zenith,
                });
            }
            Ok(entries)
        })
        .collect();

    let mut entries = Vec::with_capacity(cfg.scenes * cfg.positions.len());
    for r in per_scene {
        entries.extend(r?);
    }
    let mut manifest = Manifest::synthetic(entries);
    dataio::write_manifest(&out.join(dataio::MANIFEST_FILE), &manifest)?;
    manifest.root = out.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_box_scene() -> SceneSpec {
        SceneSpec {
            seed: 0,
            ground: GroundSpec {
                albedo: [0.5, 0.5, 0.5],
                checker_scale: 1.0,
                checker_contrast: 0.0,
            },
            objects: vec![BoxObject {
                center: Vec3::new(0.0, 15.0, 1.5),
                size: Vec3::new(3.0, 3.0, 3.0),
                class_id: class::BUILDING,
                albedo: [0.6, 0.6, 0.6],
            }],
            camera: CameraSpec {
                position: Vec3::new(0.0, 0.0, 2.0),
                yaw_deg: 0.0,
                vfov_deg: 60.0,
            },
        }
    }

    #[test]
    fn sun_direction_cases() {
        let up = sun_direction(&SunPosition { azimuth: 123.0, zenith: 0.0 });
        assert!((up - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let fwd = sun_direction(&SunPosition { azimuth: 0.0, zenith: 90.0 });
        assert!((fwd - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        let d = sun_direction(&SunPosition { azimuth: 90.0, zenith: 45.0 });
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d - Vec3::new(h, 0.0, h)).norm() < 1e-15);
        assert!((d.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn open_ground_shading_equation() {
        let mut light = LightSpec::new(SunPosition { azimuth: 0.0, zenith: 0.0 });
        light.ambient = 0.2;
        light.sun_intensity = 0.8;
        let trace = render_traced(&one_box_scene(), &light, 32, 32).unwrap();
        let t = &trace.tuple;
        // bottom-left corner looks at open ground
        let i = 31 * 32;
        assert_eq!(t.semseg[i], class::GROUND);
        assert!(!trace.shadow[i]);
        for c in 0..3 {
            assert!((t.rgb.data[i][c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sky_pixel() {
        let light = LightSpec::new(SunPosition { azimuth: 0.0, zenith: 30.0 });
        let t = render(&one_box_scene(), &light, 16, 16).unwrap();
        assert_eq!(t.semseg[0], class::SKY);
        assert_eq!(t.depth[0], SKY_DEPTH);
        assert_eq!(t.rgb.data[0], light.sky_color());
    }

    #[test]
    fn shadowed_ground_gets_ambient_only() {
        // sun behind the box (forward, low) throws its shadow toward the camera
        let light = LightSpec::new(SunPosition { azimuth: 0.0, zenith: 70.0 });
        let trace = render_traced(&one_box_scene(), &light, 64, 64).unwrap();
        let tint = light.sun_color();
        let mut found = false;
        for (i, &s) in trace.shadow.iter().enumerate() {
            if s && trace.tuple.semseg[i] == class::GROUND {
                found = true;
                for c in 0..3 {
                    let want = 0.5 * light.ambient * tint[c];
                    assert!((trace.tuple.rgb.data[i][c] - want).abs() < 1e-12);
                }
            }
        }
        assert!(found, "expected a cast shadow on the ground");
    }

    #[test]
    fn camera_inside_box_rejected() {
        let mut s = one_box_scene();
        s.camera.position = Vec3::new(0.0, 15.0, 1.0);
        let light = LightSpec::new(SunPosition { azimuth: 0.0, zenith: 30.0 });
        assert!(matches!(render(&s, &light, 8, 8), Err(RenderError::DegenerateCamera(..))));
    }

    #[test]
    fn lower_sun_casts_more_shadow() {
        let scene = one_box_scene();
        let mut last = 0;
        for zen in [10.0, 30.0, 50.0, 70.0, 85.0] {
            let light = LightSpec::new(SunPosition { azimuth: 30.0, zenith: zen });
            let trace = render_traced(&scene, &light, 64, 64).unwrap();
            let count = trace.shadow.iter().filter(|&&s| s).count();
            assert!(count > last, "zenith {zen}: {count} <= {last}");
            last = count;
        }
    }

    #[test]
    fn energy_bound_and_geometry_invariance() {
        let scene = SceneSpec::random(7);
        let mut geo = None;
        for p in crate::solarpos::BENCHMARK_POSITIONS {
            let light = LightSpec::new(p);
            let t = render(&scene, &light, 32, 32).unwrap();
            let bound = 0.72 * (light.ambient + light.sun_intensity);
            for (px, &c) in t.rgb.data.iter().zip(&t.semseg) {
                if c != class::SKY {
                    assert!(px.iter().all(|&v| v <= bound + 1e-12));
                }
            }
            match &geo {
                None => geo = Some((t.depth.clone(), t.semseg.clone())),
                Some((d, s)) => {
                    assert_eq!(d, &t.depth);
                    assert_eq!(s, &t.semseg);
                }
            }
        }
    }

    #[test]
    fn split_is_whole_scene_and_seeded() {
        let a = test_scenes(150, 0.1, 3);
        assert_eq!(a.len(), 15);
        assert_eq!(a, test_scenes(150, 0.1, 3));
        assert_ne!(a, test_scenes(150, 0.1, 4));
    }
}
