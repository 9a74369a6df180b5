//! Seeded synthetic scenes: plantation lattices over a background class map,
//! rendered into multi-band imagery with a linear spectral model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::density::{rasterize_density, Bounds, DensityKernel, TreeAnnotationSet};
use super::grid::{GeoTransform, RasterGrid};
use crate::error::{invalid, Result};

/// Land-cover classes in the synthetic class map.
pub const CLASS_BARE: u8 = 0;
pub const CLASS_FOREST: u8 = 1;
pub const CLASS_CROP: u8 = 2;
pub const CLASS_PLANTATION: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// Minimum scene side in output pixels.
pub const MIN_SCENE_SIDE: usize = 32;

/// A rectangular plantation planted on a square lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantationBlock {
    /// Planar rectangle, meters.
    pub bounds: Bounds,
    /// Lattice spacing, meters.
    pub spacing: f64,
    /// Uniform positional jitter amplitude, meters.
    pub jitter: f64,
    /// Fraction of lattice positions left unplanted.
    pub missing_fraction: f64,
}

impl PlantationBlock {
    /// Lattice positions before jitter and thinning.
    pub fn lattice(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        let b = &self.bounds;
        let mut y = b.min_y + self.spacing / 2.0;
        while y < b.max_y {
            let mut x = b.min_x + self.spacing / 2.0;
            while x < b.max_x {
                pts.push((x, y));
                x += self.spacing;
            }
            y += self.spacing;
        }
        pts
    }
}

/// `band_k = gain_k * density + response_k[class] + offset_k + cloud_gain_k * cloud + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub density_gain: Vec<f64>,
    /// `class_response[band][class]`.
    pub class_response: Vec<[f64; NUM_CLASSES]>,
    pub offset: Vec<f64>,
    pub cloud_gain: Vec<f64>,
    pub noise_sigma: f64,
}

impl SpectralModel {
    pub fn bands(&self) -> usize {
        self.density_gain.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.bands();
        if n == 0 {
            return Err(invalid("spectral model needs at least one band"));
        }
        if self.class_response.len() != n || self.offset.len() != n || self.cloud_gain.len() != n {
            return Err(invalid("spectral model coefficient lengths disagree"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

impl Default for SpectralModel {
    fn default() -> Self {
        Self {
            density_gain: vec![-0.06, 0.12, -0.03, 0.05],
            class_response: vec![
                [0.30, 0.05, 0.12, 0.08],
                [0.20, 0.45, 0.35, 0.30],
                [0.25, 0.10, 0.15, 0.12],
                [0.10, 0.20, 0.30, 0.18],
            ],
            offset: vec![0.0; 4],
            cloud_gain: vec![0.6, 0.6, 0.6, 0.4],
            noise_sigma: 0.02,
        }
    }
}

/// Parameters for [`generate_synthetic_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub geotransform: GeoTransform,
    pub plantations: Vec<PlantationBlock>,
    /// Number of Voronoi sites in the background class map.
    pub background_sites: usize,
    /// Relative frequency of bare, forest and crop backgrounds.
    pub background_weights: [f64; 3],
    pub spectral: SpectralModel,
    /// Target fraction of pixels under cloud.
    pub cloud_fraction: f64,
    pub kernel: DensityKernel,
}

impl SceneParams {
    /// A plain scene of the given size with one central plantation.
    pub fn simple(width: usize, height: usize, geotransform: GeoTransform) -> Self {
        let w = width as f64 * geotransform.pixel_size;
        let h = height as f64 * geotransform.pixel_size;
        Self {
            width,
            height,
            geotransform,
            plantations: vec![PlantationBlock {
                bounds: Bounds {
                    min_x: geotransform.origin_x + 0.25 * w,
                    min_y: geotransform.origin_y + 0.25 * h,
                    max_x: geotransform.origin_x + 0.75 * w,
                    max_y: geotransform.origin_y + 0.75 * h,
                },
                spacing: 9.0,
                jitter: 0.5,
                missing_fraction: 0.05,
            }],
            background_sites: 6,
            background_weights: [1.0, 1.0, 1.0],
            spectral: SpectralModel::default(),
            cloud_fraction: 0.0,
            kernel: DensityKernel::default(),
        }
    }
}

/// Synthetic scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: RasterGrid,
    /// Trees per pixel.
    pub density: RasterGrid,
    /// Cloud probability in [0, 1].
    pub cloud: RasterGrid,
    /// Land-cover class per pixel, row-major.
    pub classes: Vec<u8>,
    pub trees: TreeAnnotationSet,
    pub dropped_mass: f64,
}

/// Generates a deterministic synthetic scene from `seed`.
pub fn generate_synthetic_scene(seed: u64, params: &SceneParams) -> Result<SyntheticScene> {
    if params.width < MIN_SCENE_SIDE || params.height < MIN_SCENE_SIDE {
        return Err(invalid(format!(
            "scene extent {}x{} is below the {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE} minimum",
            params.width, params.height
        )));
    }
    if !(0.0..=1.0).contains(&params.cloud_fraction) {
        return Err(invalid("cloud_fraction must lie in [0, 1]"));
    }
    params.spectral.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = params.geotransform;
    let (w, h) = (params.width, params.height);
    let extent = Bounds {
        min_x: gt.origin_x,
        min_y: gt.origin_y,
        max_x: gt.origin_x + w as f64 * gt.pixel_size,
        max_y: gt.origin_y + h as f64 * gt.pixel_size,
    };

    let mut trees = Vec::new();
    for block in &params.plantations {
        if !(block.spacing > 0.0) {
            return Err(invalid("plantation spacing must be positive"));
        }
        for (x, y) in block.lattice() {
            let keep = block.missing_fraction <= 0.0 || rng.random::<f64>() >= block.missing_fraction;
            let (dx, dy) = if block.jitter > 0.0 {
                (
                    rng.random_range(-block.jitter..=block.jitter),
                    rng.random_range(-block.jitter..=block.jitter),
                )
            } else {
                (0.0, 0.0)
            };
            let (px, py) = (x + dx, y + dy);
            if keep && extent.contains(px, py) {
                trees.push((px, py));
            }
        }
    }
    let trees = TreeAnnotationSet::new("scene", extent, trees)?;
    let density = rasterize_density(&trees, &gt, w, h, &params.kernel)?;

    let classes = background_classes(&mut rng, params);
    let cloud = cloud_field(&mut rng, params)?;

    let bands = params.spectral.bands();
    let mut image = RasterGrid::zeros(w, h, bands, gt)?;
    let noise = Normal::new(0.0, params.spectral.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| invalid(e.to_string()))?;
    let sp = &params.spectral;
    for b in 0..bands {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let d = density.grid.get(0, r, c);
                let mut v = sp.density_gain[b] * d
                    + sp.class_response[b][classes[i] as usize]
                    + sp.offset[b]
                    + sp.cloud_gain[b] * cloud.get(0, r, c);
                if sp.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                image.set(b, r, c, v);
            }
        }
    }

    Ok(SyntheticScene {
        image,
        density: density.grid,
        cloud,
        classes,
        trees,
        dropped_mass: density.dropped_mass,
    })
}

fn background_classes(rng: &mut ChaCha8Rng, params: &SceneParams) -> Vec<u8> {
    let gt = params.geotransform;
    let (w, h) = (params.width, params.height);
    let total: f64 = params.background_weights.iter().sum();
    let sites: Vec<(f64, f64, u8)> = (0..params.background_sites.max(1))
        .map(|_| {
            let x = rng.random_range(0.0..w as f64);
            let y = rng.random_range(0.0..h as f64);
            let mut u = rng.random::<f64>() * total;
            let mut class = CLASS_BARE;
            for (k, &wk) in params.background_weights.iter().enumerate() {
                if u < wk {
                    class = k as u8;
                    break;
                }
                u -= wk;
                class = k as u8;
            }
            (x, y, class)
        })
        .collect();
    let mut classes = vec![CLASS_BARE; w * h];
    for r in 0..h {
        for c in 0..w {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .map(|s| s.2)
                .unwrap_or(CLASS_BARE);
            classes[r * w + c] = nearest;
            let (x, y) = gt.pixel_center(r, c);
            if params.plantations.iter().any(|p| p.bounds.contains(x, y)) {
                classes[r * w + c] = CLASS_PLANTATION;
            }
        }
    }
    classes
}

fn cloud_field(rng: &mut ChaCha8Rng, params: &SceneParams) -> Result<RasterGrid> {
    let (w, h) = (params.width, params.height);
    let mut cloud = RasterGrid::zeros(w, h, 1, params.geotransform)?;
    if params.cloud_fraction <= 0.0 {
        return Ok(cloud);
    }
    let target = (params.cloud_fraction * (w * h) as f64).ceil() as usize;
    let side = w.min(h) as f64;
    let mut covered = 0usize;
    // Bounded number of blobs so tiny fractions on large scenes terminate.
    for _ in 0..10_000 {
        if covered >= target {
            break;
        }
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let radius = rng.random_range(0.08 * side..0.25 * side);
        let band = cloud.band_mut(0);
        for r in 0..h {
            for c in 0..w {
                let d2 = ((c as f64 + 0.5 - cx).powi(2) + (r as f64 + 0.5 - cy).powi(2)) / (radius * radius);
                if d2 < 1.0 {
                    let p = (1.0 - d2).sqrt().clamp(0.0, 1.0);
                    let v = &mut band[r * w + c];
                    if *v == 0.0 && p > 0.0 {
                        covered += 1;
                    }
                    *v = v.max(p);
                }
            }
        }
    }
    Ok(cloud)
}
