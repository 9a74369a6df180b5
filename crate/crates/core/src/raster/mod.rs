//! Raster data model, density rasterization, synthetic scenes, patch
//! extraction and temporal late fusion.

mod density;
mod grid;
mod io;
mod patches;
mod synthetic;

pub use density::{
    grid_ratio, rasterize_density, read_tree_csv, write_tree_csv, Bounds, DensityKernel, DensityRaster,
    TreeAnnotationSet,
};
pub use grid::{GeoTransform, RasterGrid};
pub use io::{
    load_pgrd, read_pgrd, read_pgrd_header, save_pgrd, write_pgrd, PgrdHeader, SceneManifest, DEFAULT_NODATA,
    PGRD_MAGIC, PGRD_VERSION,
};
pub use patches::{
    extract_patches, late_fuse, tiling_count, Patch, INFERENCE_MAX_CLOUD_PROB, TRAIN_MAX_CLOUD_PROB,
};
pub use synthetic::{
    generate_synthetic_scene, PlantationBlock, SceneParams, SpectralModel, SyntheticScene, CLASS_BARE, CLASS_CROP,
    CLASS_FOREST, CLASS_PLANTATION, MIN_SCENE_SIDE, NUM_CLASSES,
};
