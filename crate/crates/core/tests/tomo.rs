use std::f64::consts::PI;

use aprf::tomo::{
    backproject_adjoint, compute_metrics, fbp_reconstruct, forward_project, make_shepp_logan, psnr,
    rebin_fan_to_parallel, sparsify_views, ssim, Beam, Contrast, Image2D, RampFilter, Sinogram,
    SinogramGeometry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bilinear sample with zero extension, written against the raw value grid.
fn sample(img: &Image2D, x: f64, y: f64) -> f64 {
    let (w, h, ps) = (img.width() as f64, img.height() as f64, img.pixel_size());
    let cf = x / ps + w / 2.0 - 0.5;
    let rf = h / 2.0 - 0.5 - y / ps;
    let (c0, r0) = (cf.floor(), rf.floor());
    let (tc, tr) = (cf - c0, rf - r0);
    let mut acc = 0.0;
    for (dr, wr) in [(0.0, 1.0 - tr), (1.0, tr)] {
        for (dc, wc) in [(0.0, 1.0 - tc), (1.0, tc)] {
            let (c, r) = (c0 + dc, r0 + dr);
            if c >= 0.0 && r >= 0.0 && c < w && r < h {
                acc += wr * wc * img.values()[r as usize * img.width() + c as usize];
            }
        }
    }
    acc
}

/// Riemann sum along the whole ray over a box that contains the image.
fn riemann(img: &Image2D, geom: &SinogramGeometry, view: usize, det: usize, step: f64) -> f64 {
    let ray = geom.ray(view as f64, det as f64);
    let reach = img.half_diagonal() + 2.0 * img.pixel_size();
    let b = ray.origin.0 * ray.dir.0 + ray.origin.1 * ray.dir.1;
    let n = (2.0 * reach / step).ceil() as usize;
    let t0 = -b - reach;
    (0..n)
        .map(|m| {
            let t = t0 + (m as f64 + 0.5) * step;
            sample(img, ray.origin.0 + t * ray.dir.0, ray.origin.1 + t * ray.dir.1)
        })
        .sum::<f64>()
        * step
}

#[test]
fn projector_matches_fine_riemann_sum() {
    let img = make_shepp_logan(64, Contrast::Modified).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for geom in [
        SinogramGeometry::parallel_for_image(&img, 720),
        SinogramGeometry::fan_for_image(&img, 720, 128),
    ] {
        let sino = forward_project(&img, &geom).unwrap();
        let mut checked = 0;
        while checked < 8 {
            let view = rng.gen_range(0..geom.num_views);
            let det = rng.gen_range(0..geom.num_detectors);
            let ours = sino.get(view, det);
            if ours < 0.05 {
                continue;
            }
            let reference = riemann(&img, &geom, view, det, 0.05 * img.pixel_size());
            let rel = (ours - reference).abs() / reference;
            assert!(rel < 1e-2, "view {view} det {det}: {ours} vs {reference}");
            checked += 1;
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image2D {
    let values = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image2D::new(size, size, 2.0 / size as f64, values).unwrap()
}

fn random_sino(rng: &mut ChaCha8Rng, geom: &SinogramGeometry) -> Sinogram {
    let values = (0..geom.num_views * geom.num_detectors).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Sinogram::new(geom.clone(), values).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[test]
fn adjoint_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe = Image2D::zeros(32, 32, 2.0 / 32.0).unwrap();
    for geom in [
        SinogramGeometry::parallel_for_image(&probe, 16),
        SinogramGeometry::fan_for_image(&probe, 16, 48),
    ] {
        for _ in 0..20 {
            let x = random_image(&mut rng, 32);
            let y = random_sino(&mut rng, &geom);
            let ax = forward_project(&x, &geom).unwrap();
            let aty = backproject_adjoint(&y, 32, 32, x.pixel_size()).unwrap();
            let lhs = dot(ax.values(), y.values());
            let rhs = dot(x.values(), aty.values());
            let rel = (lhs - rhs).abs() / (norm(ax.values()) * norm(y.values()));
            assert!(rel < 1e-4, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn projection_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_image(&mut rng, 24);
    let b = random_image(&mut rng, 24);
    let geom = SinogramGeometry::parallel_for_image(&a, 12);
    let (alpha, beta) = (0.7, -1.3);
    let mix: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| alpha * x + beta * y).collect();
    let mix = Image2D::new(24, 24, a.pixel_size(), mix).unwrap();
    let pa = forward_project(&a, &geom).unwrap();
    let pb = forward_project(&b, &geom).unwrap();
    let pm = forward_project(&mix, &geom).unwrap();
    let scale = norm(pm.values());
    for ((m, x), y) in pm.values().iter().zip(pa.values()).zip(pb.values()) {
        assert!((m - (alpha * x + beta * y)).abs() <= 1e-6 * scale);
    }
}

/// FBP with the spatial Ram-Lak kernel applied by direct convolution.
fn reference_fbp(sino: &Sinogram, size: usize, pixel_size: f64) -> Vec<f64> {
    let geom = sino.geometry();
    let (l, w, tau) = (geom.num_views, geom.num_detectors, geom.detector_spacing);
    let kernel = |n: i64| -> f64 {
        if n == 0 {
            1.0 / (4.0 * tau * tau)
        } else if n % 2 != 0 {
            -1.0 / (PI * n as f64 * tau).powi(2)
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; size * size];
    for view in 0..l {
        let p = sino.view(view);
        let q: Vec<f64> = (0..w as i64)
            .map(|m| (0..w as i64).map(|j| kernel(m - j) * p[j as usize]).sum::<f64>() * tau)
            .collect();
        let theta = geom.angular_range.0 + view as f64 * (geom.angular_range.1 - geom.angular_range.0) / l as f64;
        for row in 0..size {
            for col in 0..size {
                let x = (col as f64 + 0.5 - size as f64 / 2.0) * pixel_size;
                let y = (size as f64 / 2.0 - row as f64 - 0.5) * pixel_size;
                let s = x * theta.cos() + y * theta.sin();
                let k = s / tau + w as f64 / 2.0 - 0.5;
                let k0 = k.floor();
                let t = k - k0;
                let at = |i: f64| if i >= 0.0 && i < w as f64 { q[i as usize] } else { 0.0 };
                out[row * size + col] += (1.0 - t) * at(k0) + t * at(k0 + 1.0);
            }
        }
    }
    out.iter().map(|v| v * PI / l as f64).collect()
}

#[test]
fn fbp_matches_direct_convolution_reference() {
    let img = make_shepp_logan(48, Contrast::Modified).unwrap();
    let geom = SinogramGeometry::parallel_for_image(&img, 90);
    let sino = forward_project(&img, &geom).unwrap();
    let ours = fbp_reconstruct(&sino, RampFilter::RamLak, 48, img.pixel_size()).unwrap();
    let reference = reference_fbp(&sino, 48, img.pixel_size());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in ours.values().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-9 * scale, "{a} vs {b}");
    }
}

#[test]
fn fbp_quality_grows_with_views() {
    let img = make_shepp_logan(128, Contrast::Modified).unwrap();
    let dense = forward_project(&img, &SinogramGeometry::parallel_for_image(&img, 720)).unwrap();
    let mut last = f64::NEG_INFINITY;
    for keep in [45, 90, 180, 360, 720] {
        let sino = sparsify_views(&dense, keep).unwrap();
        let rec = fbp_reconstruct(&sino, RampFilter::RamLak, 128, img.pixel_size()).unwrap();
        let p = psnr(&rec, &img).unwrap();
        assert!(p > last, "{keep} views: {p} <= {last}");
        last = p;
    }
}

#[test]
fn fan_and_parallel_agree() {
    let img = make_shepp_logan(96, Contrast::Modified).unwrap();
    let par_geom = SinogramGeometry::parallel_for_image(&img, 720);
    let par = forward_project(&img, &par_geom).unwrap();
    let fan_geom = SinogramGeometry::fan_for_image(&img, 720, par_geom.num_detectors);
    let fan = forward_project(&img, &fan_geom).unwrap();
    let p_par = psnr(&fbp_reconstruct(&par, RampFilter::RamLak, 96, img.pixel_size()).unwrap(), &img).unwrap();
    let p_fan = psnr(&fbp_reconstruct(&fan, RampFilter::RamLak, 96, img.pixel_size()).unwrap(), &img).unwrap();
    assert!((p_par - p_fan).abs() < 2.0, "parallel {p_par} fan {p_fan}");
    let Beam::Fan(fp) = fan_geom.beam else { unreachable!() };
    let rebinned = rebin_fan_to_parallel(&fan, fp).unwrap();
    assert_eq!(rebinned.num_views(), 720);
    assert!(matches!(rebinned.geometry().beam, Beam::Parallel));
}

#[test]
fn sparse_views_streak() {
    let img = make_shepp_logan(256, Contrast::Modified).unwrap();
    let dense = forward_project(&img, &SinogramGeometry::parallel_for_image(&img, 720)).unwrap();
    let sparse = sparsify_views(&dense, 60).unwrap();
    let full = compute_metrics(&fbp_reconstruct(&dense, RampFilter::RamLak, 256, img.pixel_size()).unwrap(), &img).unwrap();
    let few = compute_metrics(&fbp_reconstruct(&sparse, RampFilter::RamLak, 256, img.pixel_size()).unwrap(), &img).unwrap();
    assert!(full.psnr > 30.0, "{}", full.psnr);
    assert!(few.psnr < full.psnr);
}

/// SSIM evaluated window by window straight from the definition.
fn scalar_ssim(a: &[f64], b: &[f64], n: usize, range: f64) -> f64 {
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=n - 7 {
        for c in 0..=n - 7 {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..7 {
                for j in 0..7 {
                    xs.push(a[(r + i) * n + c + j]);
                    ys.push(b[(r + i) * n + c + j]);
                }
            }
            let mx = xs.iter().sum::<f64>() / 49.0;
            let my = ys.iter().sum::<f64>() / 49.0;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 48.0;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 48.0;
            let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 48.0;
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_scalar_formula() {
    let gt: Vec<f64> = (0..64).map(|i| (i * 37 % 64) as f64 / 63.0).collect();
    let pred: Vec<f64> = (0..64).map(|i| ((i * 29 % 64) as f64 / 70.0) + 0.05 * (i % 3) as f64).collect();
    let g = Image2D::new(8, 8, 1.0, gt.clone()).unwrap();
    let p = Image2D::new(8, 8, 1.0, pred.clone()).unwrap();
    let range = g.max() - g.min();
    let expected = scalar_ssim(&pred, &gt, 8, range);
    assert!((ssim(&p, &g).unwrap() - expected).abs() < 1e-12);
}
