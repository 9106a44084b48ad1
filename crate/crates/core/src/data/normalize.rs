use super::volume::{Grid, Volume};

/// Z-scores the nonzero voxels of one grid; zeros stay zero.
///
/// A grid whose support is empty or has zero spread maps to all zeros.
pub fn normalize_grid(g: &Grid<f32>) -> Grid<f32> {
    let support = || g.data().iter().filter(|&&v| v != 0.0).map(|&v| f64::from(v));
    let n = support().count();
    if n == 0 {
        return g.map(|_| 0.0);
    }
    let mean = support().sum::<f64>() / n as f64;
    let var = support().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return g.map(|_| 0.0);
    }
    g.map(|v| if v == 0.0 { 0.0 } else { ((f64::from(v) - mean) / std) as f32 })
}

pub fn normalize(vol: &Volume) -> Volume {
    Volume { modalities: vol.modalities.iter().map(normalize_grid).collect(), ..vol.clone() }
}
