use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uafuse::data::nifti::{from_bytes, to_bytes};
use uafuse::data::{
    axis_starts, build_patch_grid, generate_phantom, read_nifti, stitch, write_nifti, CorruptionMode, CorruptionSpec,
    Grid, NiftiData, NiftiImage, PatchSampler, PhantomSpec, SamplingMode,
};
use uafuse::train::{dice, dice_report};
use uafuse::Tensor;

#[test]
fn paper_patch_fixtures() {
    let g = build_patch_grid([60; 3], [32; 3], [14; 3]).unwrap();
    assert_eq!(axis_starts(60, 32, 14).unwrap(), vec![0, 14, 28]);
    assert_eq!(g.starts.len(), 27);
    assert_eq!(axis_starts(40, 32, 14).unwrap(), vec![0, 8]);
    assert_eq!(build_patch_grid([40; 3], [32; 3], [14; 3]).unwrap().starts.len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_grid_covers_every_voxel(
        dims in prop::array::uniform3(1usize..=64),
        pfrac in prop::array::uniform3(0.05f64..=1.0),
        sfrac in prop::array::uniform3(0.05f64..=1.0),
    ) {
        let patch: [usize; 3] = std::array::from_fn(|a| ((dims[a] as f64 * pfrac[a]).ceil() as usize).clamp(1, dims[a]));
        let stride: [usize; 3] = std::array::from_fn(|a| ((patch[a] as f64 * sfrac[a]).ceil() as usize).max(1));
        let g = build_patch_grid(dims, patch, stride).unwrap();
        for a in 0..3 {
            let starts = axis_starts(dims[a], patch[a], stride[a]).unwrap();
            prop_assert_eq!(*starts.last().unwrap() + patch[a], dims[a]);
            prop_assert!(starts.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride[a]));
            let mut hit = vec![false; dims[a]];
            for s in &starts {
                hit[*s..*s + patch[a]].iter_mut().for_each(|h| *h = true);
            }
            prop_assert!(hit.iter().all(|&h| h));
        }
        let per_axis: usize = (0..3).map(|a| axis_starts(dims[a], patch[a], stride[a]).unwrap().len()).product();
        prop_assert_eq!(g.starts.len(), per_axis);
    }

    #[test]
    fn nifti_file_round_trip_is_bit_exact(
        dims in prop::array::uniform3(1usize..=9),
        kind in 0u8..3,
        seed in any::<u64>(),
        spacing in prop::array::uniform3(0.1f32..5.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = match kind {
            0 => NiftiData::U8(Grid::from_fn(dims, |_| rng.random())),
            1 => NiftiData::I16(Grid::from_fn(dims, |_| rng.random())),
            _ => NiftiData::F32(Grid::from_fn(dims, |_| f32::from_bits(rng.random::<u32>() & 0xff7f_ffff))),
        };
        let img = NiftiImage { data, spacing };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        write_nifti(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(&bytes, &to_bytes(&img));
        let back = read_nifti(&path).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes);
        prop_assert_eq!(to_bytes(&from_bytes(&to_bytes(&back)).unwrap()), to_bytes(&img));
    }
}

/// Voxel-by-voxel accumulation in patch order, independent of the row copies
/// used by `stitch`.
fn brute_stitch(dims: [usize; 3], patch: [usize; 3], starts: &[[usize; 3]], c: usize, maps: &[Tensor<f64>]) -> Vec<f64> {
    let n = dims.iter().product::<usize>();
    let mut out = vec![0.0; c * n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let v = (z * dims[1] + y) * dims[2] + x;
                for ch in 0..c {
                    let (mut sum, mut cnt) = (0.0, 0u32);
                    for (s, m) in starts.iter().zip(maps) {
                        let (lz, ly, lx) = (z.wrapping_sub(s[0]), y.wrapping_sub(s[1]), x.wrapping_sub(s[2]));
                        if lz < patch[0] && ly < patch[1] && lx < patch[2] {
                            sum += m.data()[((ch * patch[0] + lz) * patch[1] + ly) * patch[2] + lx];
                            cnt += 1;
                        }
                    }
                    out[ch * n + v] = sum / cnt as f64;
                }
            }
        }
    }
    out
}

#[test]
fn stitch_equals_brute_force_accumulation_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (dims, patch, stride) in [([13, 11, 9], [6, 5, 4], [3, 2, 3]), ([20, 20, 20], [8, 8, 8], [5, 7, 8]), ([5, 6, 7], [5, 6, 7], [1, 1, 1])] {
        let g = build_patch_grid(dims, patch, stride).unwrap();
        let c = 3;
        let maps: Vec<Tensor<f64>> =
            g.starts.iter().map(|_| Tensor::from_fn(vec![c, patch[0], patch[1], patch[2]], |_| rng.random())).collect();
        let got = stitch(&g, c, &maps.iter().cloned().map(Some).collect::<Vec<_>>()).unwrap();
        let want = brute_stitch(dims, patch, &g.starts, c, &maps);
        assert!(got.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()), "dims {dims:?}");
    }
}

#[test]
fn stitching_conserves_constants_and_probability_mass() {
    let g = build_patch_grid([17, 15, 16], [8, 8, 8], [5, 5, 5]).unwrap();
    let consts: Vec<_> = g.starts.iter().map(|_| Some(Tensor::full(vec![2, 8, 8, 8], 0.375f64))).collect();
    assert!(stitch(&g, 2, &consts).unwrap().data().iter().all(|&v| v == 0.375));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probs: Vec<_> = g
        .starts
        .iter()
        .map(|_| {
            let raw: Vec<f64> = (0..3 * 512).map(|_| rng.random_range(0.01..1.0)).collect();
            let mut t = Tensor::new(vec![3, 8, 8, 8], raw).unwrap();
            for v in 0..512 {
                let s: f64 = (0..3).map(|c| t.data()[c * 512 + v]).sum();
                (0..3).for_each(|c| t.data_mut()[c * 512 + v] /= s);
            }
            Some(t)
        })
        .collect();
    let out = stitch(&g, 3, &probs).unwrap();
    let n = out.spatial_len();
    for v in 0..n {
        let s: f64 = (0..3).map(|c| out.data()[c * n + v]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

fn set_of(mask: &[u8], class: u8) -> HashSet<usize> {
    mask.iter().enumerate().filter(|(_, &v)| v == class).map(|(i, _)| i).collect()
}

#[test]
fn dice_matches_set_arithmetic_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let n = rng.random_range(1..400);
        let classes = rng.random_range(2..5u8);
        let density = rng.random_range(0.0..1.0);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..n).map(|_| if rng.random_bool(density) { rng.random_range(1..classes) } else { 0 }).collect()
        };
        let (p, t) = (draw(&mut rng), draw(&mut rng));
        let report = dice_report(&p, &t, classes as usize).unwrap();
        for c in 1..classes {
            let (ps, ts) = (set_of(&p, c), set_of(&t, c));
            let denom = ps.len() + ts.len();
            let want = if denom == 0 { 1.0 } else { 2.0 * ps.intersection(&ts).count() as f64 / denom as f64 };
            assert_eq!(dice(&p, &t, c), want);
            assert_eq!(report.per_class[c as usize - 1], want);
            assert_eq!(dice(&t, &p, c), dice(&p, &t, c));
        }
    }
}

#[test]
fn class_balanced_marginals_are_uniform_within_three_sigma() {
    // Three foreground classes owning 70/20/10 % of the target patches.
    let dims = [4, 4, 40];
    let label = Grid::from_fn(dims, |[_, _, x]| match x / 4 {
        0..=6 => 1,
        7 | 8 => 2,
        _ => 3,
    });
    let g = build_patch_grid(dims, [4, 4, 4], [4, 4, 4]).unwrap();
    let sampler = PatchSampler::new(SamplingMode::ClassBalanced, &[(&g, &label)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 3000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sampler.draw(&mut rng).dominant_class as usize] += 1;
    }
    let (mean, sigma) = (n as f64 / 3.0, (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt());
    for c in 1..4 {
        assert!((counts[c] as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
    }
    let target = PatchSampler::new(SamplingMode::TargetOnly, &[(&g, &label)]).unwrap();
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[target.draw(&mut rng).dominant_class as usize] += 1;
    }
    assert!(counts[1] > counts[2] && counts[2] > counts[3], "{counts:?}");
}

#[test]
fn swapped_contrast_moves_region_intensities_by_more_than_two_std() {
    let base = PhantomSpec { dims: [40; 3], ..PhantomSpec::default() };
    let spec = PhantomSpec {
        corruption: Some(CorruptionSpec {
            modality: 1,
            mode: CorruptionMode::SwapContrast,
            region_start: [0, 0, 0],
            region_size: [40, 40, 20],
            noise_std: 0.5,
        }),
        ..base.clone()
    };
    let p = generate_phantom(&spec, 3).unwrap();
    let region = p.region.as_ref().unwrap();
    assert_eq!(region.data().iter().filter(|&&r| r == 1).count(), 40 * 40 * 20);
    let label = p.volume.label.as_ref().unwrap();
    let m2 = &p.volume.modalities[1];
    let table = &spec.modalities[1].contrast;
    let mut checked = 0;
    for class in 1..5u8 {
        let vals: Vec<f32> = (0..label.len())
            .filter(|&i| label.data()[i] == class && region.data()[i] == 1)
            .map(|i| m2.data()[i])
            .collect();
        let clean = table[class as usize];
        let swapped = table[5 - class as usize].mean;
        if vals.len() < 30 || (swapped - clean.mean).abs() < 1e-6 {
            continue;
        }
        let mean = vals.iter().sum::<f32>() / vals.len() as f32;
        assert!((mean - clean.mean).abs() > 2.0 * clean.std, "class {class}: {mean} vs clean {}", clean.mean);
        assert!((mean - swapped).abs() < clean.std, "class {class}: {mean} vs swapped {swapped}");
        checked += 1;
    }
    assert!(checked >= 2, "too few classes inside the region");
    // Outside the region the corrupted phantom keeps the clean contrast.
    for i in (0..label.len()).filter(|&i| region.data()[i] == 0 && label.data()[i] > 0).take(200) {
        let clean = table[label.data()[i] as usize];
        assert!((m2.data()[i] - clean.mean).abs() < 6.0 * clean.std);
    }
}

#[test]
fn generated_labels_cover_every_class() {
    for seed in 0..3 {
        let p = generate_phantom(&PhantomSpec::default(), seed).unwrap();
        let present: HashSet<u8> = p.volume.label.unwrap().data().iter().copied().collect();
        assert_eq!(present, (0..5).collect());
    }
}
