use super::*;
use crate::dataset::{render_glyph, FeatureFlags};

fn square_image() -> Plane {
    Plane::from_fn(64, 64, |x, y| {
        if (20..44).contains(&x) && (20..44).contains(&y) {
            1.0
        } else {
            0.0
        }
    })
}

fn glyph_plane(letter: char, seed: u64) -> Plane {
    let flags = FeatureFlags {
        serif: true,
        ..FeatureFlags::default()
    };
    Plane::from_glyph(&render_glyph(letter, &flags, 64, seed).unwrap())
}

fn raw_params() -> SiftParams {
    SiftParams {
        normalize_height: None,
        ..SiftParams::default()
    }
}

fn angle_diff(a: f32, b: f32) -> f32 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[test]
fn pyramid_shape() {
    let ss = build_scale_space(&square_image(), 4, 3, 1.6).unwrap();
    assert_eq!(ss.octaves.len(), 4);
    for (o, oct) in ss.octaves.iter().enumerate() {
        assert_eq!(oct.gaussians.len(), 6);
        assert_eq!(oct.dogs.len(), 5);
        assert_eq!(oct.gaussians[0].width, 128 >> o);
        for (j, d) in oct.dogs.iter().enumerate() {
            for (i, v) in d.data.iter().enumerate() {
                assert_eq!(*v, oct.gaussians[j + 1].data[i] - oct.gaussians[j].data[i]);
            }
        }
    }
}

#[test]
fn default_octave_rule() {
    assert_eq!(default_octaves(64), 4);
    assert_eq!(default_octaves(32), 3);
    assert_eq!(default_octaves(16), 2);
    assert_eq!(default_octaves(8), 1);
    assert_eq!(default_octaves(2000), 4);
}

#[test]
fn too_small_or_bad_args() {
    let tiny = Plane::from_fn(7, 30, |_, _| 0.0);
    assert!(build_scale_space(&tiny, 1, 3, 1.6).is_err());
    assert!(build_scale_space(&square_image(), 4, 1, 1.6).is_err());
    assert!(build_scale_space(&square_image(), 8, 3, 1.6).is_err());
}

#[test]
fn constant_image_has_zero_dog_and_no_keypoints() {
    let flat = Plane::from_fn(64, 48, |_, _| 0.37);
    let ss = build_scale_space(&flat, 3, 3, 1.6).unwrap();
    for oct in &ss.octaves {
        for d in &oct.dogs {
            assert!(d.data.iter().all(|&v| v == 0.0));
        }
    }
    assert!(detect_keypoints(&ss, 0.03, 10.0).is_empty());
}

#[test]
fn infinite_threshold_gives_nothing() {
    let ss = build_scale_space(&square_image(), 3, 3, 1.6).unwrap();
    assert!(detect_keypoints(&ss, f32::INFINITY, 10.0).is_empty());
}

/// Direct 2-D convolution, no separability, no incremental blurring.
fn direct_blur(src: &Plane, sigma: f32) -> Plane {
    // wide support so the oracle itself is not truncation-limited
    let r = (5.0 * sigma).ceil() as isize;
    let mut taps = Vec::new();
    let mut total = 0.0f64;
    for dy in -r..=r {
        for dx in -r..=r {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * (sigma as f64).powi(2))).exp();
            taps.push((dx, dy, w));
            total += w;
        }
    }
    let refl = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let m = i.rem_euclid(2 * n);
        (if m >= n { 2 * n - 1 - m } else { m }) as usize
    };
    Plane::from_fn(src.width, src.height, |x, y| {
        let mut acc = 0.0f64;
        for &(dx, dy, w) in &taps {
            let xx = refl(x as isize + dx, src.width);
            let yy = refl(y as isize + dy, src.height);
            acc += w * src.at(xx, yy) as f64;
        }
        (acc / total) as f32
    })
}

#[test]
fn incremental_blur_matches_direct_blur() {
    let ss = build_scale_space(&glyph_plane('A', 3), 1, 3, 1.6).unwrap();
    let oct = &ss.octaves[0];
    for j in 1..oct.gaussians.len() {
        let sigma = (ss.level_sigma(j as f32).powi(2) - 1.6f32.powi(2)).sqrt();
        let direct = direct_blur(&oct.gaussians[0], sigma);
        let worst = direct
            .data
            .iter()
            .zip(&oct.gaussians[j].data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "level {j}: max deviation {worst}");
    }
}

/// Exhaustive 26-neighbour scan with no refinement, mapped to input pixels.
fn oracle_extrema(ss: &ScaleSpace, thresh: f32) -> Vec<(f32, f32)> {
    let mut out = Vec::new();
    for oct in &ss.octaves {
        let d = &oct.dogs;
        for j in 1..d.len() - 1 {
            let (w, h) = (d[j].width, d[j].height);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = d[j].at(x, y);
                    if v.abs() < thresh {
                        continue;
                    }
                    let mut neighbours = Vec::new();
                    for dj in [j - 1, j, j + 1] {
                        for yy in [y - 1, y, y + 1] {
                            for xx in [x - 1, x, x + 1] {
                                if (dj, xx, yy) != (j, x, y) {
                                    neighbours.push(d[dj].at(xx, yy));
                                }
                            }
                        }
                    }
                    if neighbours.iter().all(|&n| v >= n) || neighbours.iter().all(|&n| v <= n) {
                        out.push(((x as f32 + 0.5) * oct.step - 0.5, (y as f32 + 0.5) * oct.step - 0.5));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn square_corners_are_detected() {
    let ss = build_scale_space(&square_image(), 4, 3, 1.6).unwrap();
    let kps = detect_keypoints(&ss, 0.03, 10.0);
    let oracle = oracle_extrema(&ss, 0.03);
    // A right-angle corner has no preferred scale of its own; the strongest
    // extremum sits on the inner diagonal about 1.26 sigma in along each axis,
    // i.e. 3.9 px from the geometric corner at sigma 2.2.
    let tol = 4.0;
    let near = |pts: &[(f32, f32)], cx: f32, cy: f32, tol: f32| pts.iter().any(|(x, y)| (x - cx).hypot(y - cy) <= tol);
    let found: Vec<(f32, f32)> = kps.iter().map(|k| (k.x, k.y)).collect();
    assert!(kps.len() >= 4);
    for (cx, cy) in [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)] {
        assert!(
            near(&found, cx, cy, tol),
            "no keypoint near corner ({cx}, {cy}): {kps:?}"
        );
        assert!(near(&oracle, cx, cy, tol), "oracle disagrees at ({cx}, {cy})");
    }
    // every refined keypoint comes from an oracle extremum
    for &(x, y) in &found {
        assert!(near(&oracle, x, y, 1.0), "({x}, {y}) is not a scan extremum");
    }
    for k in &kps {
        assert!(k.response >= 0.03);
        assert!(k.x >= 0.0 && k.y >= 0.0 && k.x <= 63.0 && k.y <= 63.0);
    }
}

#[test]
fn step_edge_orientation_follows_gradient() {
    // dark above, bright below: gradient points down (+y), i.e. 90 degrees
    let img = Plane::from_fn(64, 64, |_, y| if y >= 32 { 1.0 } else { 0.0 });
    let ss = build_scale_space(&img, 3, 3, 1.6).unwrap();
    let kp = Keypoint {
        x: 31.5,
        y: 31.5,
        sigma: ss.level_sigma(1.0),
        orientation: 0.0,
        octave: 1,
        level: 1,
        response: 1.0,
    };
    let oriented = assign_orientations(&ss, &kp);
    assert_eq!(oriented.len(), 1, "{oriented:?}");
    let err = angle_diff(oriented[0].orientation, std::f32::consts::FRAC_PI_2);
    assert!(err.to_degrees() < 5.0, "off by {} degrees", err.to_degrees());
}

#[test]
fn every_orientation_is_a_strong_peak() {
    let blob = Plane::from_fn(64, 64, |x, y| {
        let r2 = (x as f32 - 31.5).powi(2) + (y as f32 - 31.5).powi(2);
        (-r2 / 50.0).exp()
    });
    let ss = build_scale_space(&blob, 3, 3, 1.6).unwrap();
    let kp = Keypoint {
        x: 31.5,
        y: 31.5,
        sigma: 4.0,
        orientation: 0.0,
        octave: 1,
        level: 2,
        response: 1.0,
    };
    let hist = orientation_histogram(&ss, &kp).unwrap();
    let max = hist.iter().copied().fold(0.0, f32::max);
    for o in assign_orientations(&ss, &kp) {
        let bin = (o.orientation / TAU * 36.0).round() as usize % 36;
        assert!(hist[bin] >= 0.8 * max - 1e-6);
    }
}

#[test]
fn window_outside_image_is_dropped() {
    let ss = build_scale_space(&square_image(), 2, 3, 1.6).unwrap();
    let kp = Keypoint {
        x: 5000.0,
        y: -4000.0,
        sigma: 1.6,
        orientation: 0.0,
        octave: 0,
        level: 1,
        response: 1.0,
    };
    assert!(assign_orientations(&ss, &kp).is_empty());
}

#[test]
fn flat_window_is_degenerate() {
    let ss = build_scale_space(&Plane::from_fn(64, 64, |_, _| 0.5), 2, 3, 1.6).unwrap();
    let kp = Keypoint {
        x: 30.0,
        y: 30.0,
        sigma: 2.0,
        orientation: 0.4,
        octave: 0,
        level: 1,
        response: 1.0,
    };
    assert!(matches!(compute_descriptor(&ss, &kp), Err(Error::DegenerateDescriptor)));
}

#[test]
fn descriptors_are_unit_and_clamped() {
    let plane = glyph_plane('E', 11);
    let ss = build_scale_space(&plane, 4, 3, 1.6).unwrap();
    let mut n = 0;
    for kp in detect_keypoints_with_border(&ss, 0.03, 10.0, 8.0) {
        for o in assign_orientations(&ss, &kp) {
            let raw = raw_descriptor(&ss, &o).unwrap();
            let clamped = clamp_stage(&raw).unwrap();
            assert!(clamped.iter().all(|&v| (0.0..=0.2 + 1e-9).contains(&v)));
            let d = compute_descriptor(&ss, &o).unwrap();
            let norm = d.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
            n += 1;
        }
    }
    assert!(n > 0);
}

#[test]
fn finalize_rejects_zero_and_clamps() {
    assert!(finalize_descriptor(&[0.0; DESCRIPTOR_DIM]).is_none());
    let mut spike = [0.01; DESCRIPTOR_DIM];
    spike[3] = 100.0;
    let c = clamp_stage(&spike).unwrap();
    assert_eq!(c[3], 0.2);
    let d = finalize_descriptor(&spike).unwrap();
    let norm: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
}

/// Greedy bijective matching of `a` (already mapped into `b`'s frame).
fn match_pairs(
    a: &[Descriptor],
    b: &[Descriptor],
    map: impl Fn(&Keypoint) -> Keypoint,
    tol_px: f32,
    tol_scale: f32,
    tol_angle: Option<f32>,
) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let ka = map(&da.keypoint);
        for (j, db) in b.iter().enumerate() {
            let kb = &db.keypoint;
            let dist = (ka.x - kb.x).hypot(ka.y - kb.y);
            let ratio = kb.sigma / ka.sigma;
            if dist > tol_px || (ratio - 1.0).abs() > tol_scale {
                continue;
            }
            let ang = angle_diff(ka.orientation, kb.orientation);
            if tol_angle.is_some_and(|t| ang > t) {
                continue;
            }
            cands.push((dist + ang, i, j));
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

#[test]
fn quarter_turn_equivariance() {
    let params = raw_params();
    let plane = glyph_plane('L', 5);
    let rotated = plane.rotate90();
    let a = extract_plane(&plane, &params).unwrap();
    let b = extract_plane(&rotated, &params).unwrap();
    assert!(!a.is_empty());
    let h = plane.height as f32;
    let pairs = match_pairs(
        &a,
        &b,
        |k| Keypoint {
            x: h - 1.0 - k.y,
            y: k.x,
            orientation: (k.orientation + std::f32::consts::FRAC_PI_2).rem_euclid(TAU),
            ..*k
        },
        3.0,
        0.1,
        Some(5f32.to_radians()),
    );
    let rate = pairs.len() as f32 / a.len().max(b.len()) as f32;
    assert!(
        rate >= 0.8,
        "match rate {rate} ({} of {}/{})",
        pairs.len(),
        a.len(),
        b.len()
    );
    for (i, j) in pairs {
        let d: f32 = a[i]
            .values
            .iter()
            .zip(&b[j].values)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f32>()
            .sqrt();
        assert!(d <= 0.15, "descriptor distance {d}");
    }
}

#[test]
fn doubling_the_image_doubles_geometry() {
    let params = raw_params();
    let small = glyph_plane('A', 2);
    let big = small.resize(128, 128);
    let a = extract_plane(
        &small,
        &SiftParams {
            n_octaves: Some(3),
            ..params.clone()
        },
    )
    .unwrap();
    let b = extract_plane(
        &big,
        &SiftParams {
            n_octaves: Some(4),
            border: 16.0,
            ..params
        },
    )
    .unwrap();
    // a keypoint counts as seen at both scales when its doubled geometry
    // lands within 2 px and 15% of a big-image keypoint
    let pairs = match_pairs(
        &a,
        &b,
        |k| Keypoint {
            x: 2.0 * k.x + 0.5,
            y: 2.0 * k.y + 0.5,
            sigma: 2.0 * k.sigma,
            ..*k
        },
        2.0,
        0.15,
        None,
    );
    for &(i, j) in &pairs {
        let (ka, kb) = (&a[i].keypoint, &b[j].keypoint);
        assert!((2.0 * ka.x + 0.5 - kb.x).hypot(2.0 * ka.y + 0.5 - kb.y) <= 2.0);
        assert!((kb.sigma / (2.0 * ka.sigma) - 1.0).abs() <= 0.15);
    }
    let rate = pairs.len() as f32 / a.len() as f32;
    assert!(
        rate >= 0.5,
        "only {} of {} keypoints survive doubling",
        pairs.len(),
        a.len()
    );
}

#[test]
fn extraction_is_deterministic() {
    let g = render_glyph('Z', &FeatureFlags::default(), 64, 9).unwrap();
    let p = SiftParams::default();
    let a = extract_glyph(&g, 3, &p).unwrap();
    let b = extract_glyph(&g, 3, &p).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|d| d.glyph == 3));
    // reported in the original 64 px frame
    assert!(a.iter().all(|d| d.keypoint.x > 0.0 && d.keypoint.x < 63.0));
}

#[test]
fn font_set_is_glyph_concatenation() {
    let flags = FeatureFlags::default();
    let glyphs: Vec<_> = ['H', 'O', 'T']
        .iter()
        .map(|&c| render_glyph(c, &flags, 64, 1).unwrap())
        .collect();
    let record = FontRecord {
        font_id: "f".into(),
        name: "f".into(),
        glyph_paths: vec![],
        glyphs: glyphs.clone(),
        impressions: Default::default(),
        split: None,
    };
    let p = SiftParams::default();
    let set = extract_font_descriptors(&record, &p).unwrap();
    let mut expected = Vec::new();
    for (i, g) in glyphs.iter().enumerate() {
        expected.extend(extract_glyph(g, i as u16, &p).unwrap());
    }
    assert_eq!(set.descriptors, expected);

    let blank = GlyphImage::new("b", 'H', 64, 64, vec![255; 64 * 64]).unwrap();
    let empty = FontRecord {
        glyphs: vec![blank],
        ..record
    };
    assert!(extract_font_descriptors(&empty, &p).unwrap().is_empty());
}
