//! Deterministic synthetic infrared scenes: low-frequency clutter
//! backgrounds, small Gaussian targets with half-peak footprint masks,
//! and bit-exact PGM interchange plus a TSV manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::edge_gt_from_mask;
use crate::tensor::{Real, Tensor};

/// A Gaussian bump crosses half its peak at this multiple of sigma.
pub const HALF_PEAK: Real = 1.177_410_022_515_474_7; // sqrt(2 ln 2)

const BG_LO: Real = 0.2;
const BG_HI: Real = 0.6;
const PLACE_MARGIN: Real = 2.0;
const PLACE_ATTEMPTS: usize = 100;

// ── scene spec ──

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub size: (usize, usize),
    /// Upper bound on targets per scene; the count is drawn from 1..=n_targets.
    pub n_targets: usize,
    /// Gaussian sigma range in pixels.
    pub target_radius_px: (Real, Real),
    /// Peak amplitude range above the local background, normalized units.
    pub target_contrast: (Real, Real),
    /// Box-blur radius applied to the background noise.
    pub clutter_scale: usize,
    /// Additive pixel noise std.
    pub noise_sigma: Real,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: (64, 64),
            n_targets: 3,
            target_radius_px: (1.0, 3.0),
            target_contrast: (0.05, 0.4),
            clutter_scale: 4,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ((h, w), n) = (self.size, self.n_targets);
        if h < 8 || w < 8 {
            return Err(Error::Config(format!("scene size {h}x{w} below 8x8")));
        }
        if !(1..=4).contains(&n) {
            return Err(Error::Config(format!("n_targets {n} outside 1..=4")));
        }
        let (rl, rh) = self.target_radius_px;
        if !(rl <= rh && rl > 0.0) {
            return Err(Error::Config(format!("bad radius range [{rl}, {rh}]")));
        }
        let (cl, ch) = self.target_contrast;
        if !(cl <= ch && cl >= 0.0) {
            return Err(Error::Config(format!("bad contrast range [{cl}, {ch}]")));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    /// [1,H,W] in [0,1].
    pub image: Tensor,
    /// Binary union of target footprints.
    pub mask: Tensor,
    /// Interior boundary of the mask.
    pub edge: Tensor,
    /// (cy, cx, sigma) per target, pixel coordinates.
    pub targets: Vec<(Real, Real, Real)>,
}

// ── generation ──

/// One uniform draw in [lo, hi]. Always consumes exactly one sample so the
/// draw sequence stays aligned when only range endpoints change.
fn uniform(rng: &mut ChaCha8Rng, lo: Real, hi: Real) -> Real {
    lo + rng.gen::<Real>() * (hi - lo)
}

/// Separable box blur with clamped windows, normalized by actual counts.
fn box_blur(src: &[Real], h: usize, w: usize, r: usize) -> Vec<Real> {
    if r == 0 {
        return src.to_vec();
    }
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r).min(w - 1));
            let sum: Real = src[y * w + a..=y * w + b].iter().sum();
            horiz[y * w + x] = sum / (b - a + 1) as Real;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (a, b) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let mut sum = 0.0;
            for yy in a..=b {
                sum += horiz[yy * w + x];
            }
            out[y * w + x] = sum / (b - a + 1) as Real;
        }
    }
    out
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize, blur: usize) -> Vec<Real> {
    let noise: Vec<Real> = (0..h * w).map(|_| rng.gen::<Real>()).collect();
    let mut bg = box_blur(&noise, h, w, blur);
    let lo = bg.iter().copied().fold(Real::INFINITY, Real::min);
    let hi = bg.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    if hi - lo < 1e-12 {
        bg.fill(0.5 * (BG_LO + BG_HI));
    } else {
        for v in &mut bg {
            *v = BG_LO + (*v - lo) / (hi - lo) * (BG_HI - BG_LO);
        }
    }
    bg
}

/// Background plus Gaussian bumps plus noise; mask is the union of
/// half-peak disks, which stays well-defined even at zero contrast.
pub fn gen_scene(spec: &SceneSpec) -> Result<SceneSample> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let bg = background(&mut rng, h, w, spec.clutter_scale);

    let count = rng.gen_range(1..=spec.n_targets);
    let mut targets: Vec<(Real, Real, Real)> = Vec::new();
    let mut contrasts: Vec<Real> = Vec::new();
    for t in 0..count {
        let sigma = uniform(&mut rng, spec.target_radius_px.0, spec.target_radius_px.1);
        let contrast = uniform(&mut rng, spec.target_contrast.0, spec.target_contrast.1);
        let fp = sigma * HALF_PEAK;
        let lo = PLACE_MARGIN + fp;
        let (hi_y, hi_x) = ((h - 1) as Real - lo, (w - 1) as Real - lo);
        if hi_y < lo || hi_x < lo {
            return Err(Error::Generation(format!(
                "target {t} with footprint radius {fp:.2} cannot fit a {h}x{w} scene"
            )));
        }
        let mut placed = false;
        for _ in 0..PLACE_ATTEMPTS {
            let cy = uniform(&mut rng, lo, hi_y);
            let cx = uniform(&mut rng, lo, hi_x);
            // Keep footprints more than a pixel apart so components stay
            // separate under 8-connectivity.
            let clear = targets.iter().all(|&(py, px, ps)| {
                let d = ((cy - py).powi(2) + (cx - px).powi(2)).sqrt();
                d >= fp + ps * HALF_PEAK + 2.5
            });
            if clear {
                targets.push((cy, cx, sigma));
                contrasts.push(contrast);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "no room for target {t} after {PLACE_ATTEMPTS} attempts"
            )));
        }
    }

    let mut img = bg;
    let mut mask = vec![0.0; h * w];
    for (&(cy, cx, sigma), &contrast) in targets.iter().zip(&contrasts) {
        let fp = sigma * HALF_PEAK;
        let (y0, y1) = ((cy - 4.0 * sigma).floor().max(0.0) as usize, ((cy + 4.0 * sigma).ceil() as usize).min(h - 1));
        let (x0, x1) = ((cx - 4.0 * sigma).floor().max(0.0) as usize, ((cx + 4.0 * sigma).ceil() as usize).min(w - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (y as Real - cy).powi(2) + (x as Real - cx).powi(2);
                img[y * w + x] += contrast * (-d2 / (2.0 * sigma * sigma)).exp();
                if d2.sqrt() <= fp {
                    mask[y * w + x] = 1.0;
                }
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Generation(format!("noise sigma: {e}")))?;
        for v in &mut img {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }

    let image = Tensor::new(&[1, h, w], img)?;
    let mask = Tensor::new(&[1, h, w], mask)?;
    let edge = edge_gt_from_mask(&mask);
    Ok(SceneSample {
        image,
        mask,
        edge,
        targets,
    })
}

// ── PGM I/O ──

/// Binary PGM, maxval 255, round-half-up quantization.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    assert_eq!(s.len(), 3, "image must be [1,H,W]");
    let (h, w) = (s[1], s[2]);
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(image.data().iter().map(|v| {
        (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
    }));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        what: "pgm",
        msg: format!("{}: {msg}", path.display()),
    };
    // Header tokens are ASCII fields split on whitespace; # starts a comment.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(bad("magic is not P5"));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| bad("non-numeric field"));
    let w = parse(token(&bytes)?)?;
    let h = parse(token(&bytes)?)?;
    let maxval = parse(token(&bytes)?)?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing payload separator"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != w * h {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            w * h
        )));
    }
    let data = payload.iter().map(|&b| b as Real / 255.0).collect();
    Tensor::new(&[1, h, w], data)
}

// ── dataset ──

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub img: String,
    pub mask: String,
    pub edge: String,
}

/// Writes img/msk/edg PGM triples plus index.tsv; per-sample seed is
/// seed + index so prefixes are stable when count grows.
pub fn gen_dataset(
    dir: &Path,
    count: usize,
    spec_base: &SceneSpec,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut spec = spec_base.clone();
        spec.seed = seed + i as u64;
        let sample = gen_scene(&spec)?;
        let entry = ManifestEntry {
            img: format!("img_{i:05}.pgm"),
            mask: format!("msk_{i:05}.pgm"),
            edge: format!("edg_{i:05}.pgm"),
        };
        write_pgm(&dir.join(&entry.img), &sample.image)?;
        write_pgm(&dir.join(&entry.mask), &sample.mask)?;
        write_pgm(&dir.join(&entry.edge), &sample.edge)?;
        entries.push(entry);
    }
    let manifest_path = dir.join("index.tsv");
    let mut body = String::new();
    for e in &entries {
        body.push_str(&format!("{}\t{}\t{}\n", e.img, e.mask, e.edge));
    }
    fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("index.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        match (it.next(), it.next(), it.next(), it.next()) {
            (Some(img), Some(mask), Some(edge), None) => entries.push(ManifestEntry {
                img: img.into(),
                mask: mask.into(),
                edge: edge.into(),
            }),
            _ => {
                return Err(Error::Format {
                    what: "manifest",
                    msg: format!("{}:{}: expected 3 tab-separated fields", path.display(), ln + 1),
                })
            }
        }
    }
    Ok(entries)
}

/// Image stays continuous; mask and edge re-binarize at 0.5 so quantization
/// can never leak gray values into the labels.
pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<(Tensor, Tensor, Tensor)> {
    let img = read_pgm(&dir.join(&entry.img))?;
    let mask = read_pgm(&dir.join(&entry.mask))?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let edge = read_pgm(&dir.join(&entry.edge))?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok((img, mask, edge))
}

pub fn manifest_paths(dir: &Path, entry: &ManifestEntry) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(&entry.img),
        dir.join(&entry.mask),
        dir.join(&entry.edge),
    )
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_components;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SceneSpec {
            seed: 42,
            ..SceneSpec::default()
        };
        let a = gen_scene(&spec).unwrap();
        let b = gen_scene(&spec).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mask.data(), b.mask.data());
        assert_eq!(a.edge.data(), b.edge.data());
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn zero_contrast_targets_leave_the_background_untouched() {
        let base = SceneSpec {
            noise_sigma: 0.0,
            seed: 7,
            ..SceneSpec::default()
        };
        let flat = gen_scene(&SceneSpec {
            target_contrast: (0.0, 0.0),
            ..base.clone()
        })
        .unwrap();
        let bumped = gen_scene(&SceneSpec {
            target_contrast: (0.3, 0.3),
            ..base
        })
        .unwrap();
        // Same draw sequence, so placements match; the image difference is
        // exactly the bump field and the masks coincide.
        assert_eq!(flat.targets, bumped.targets);
        assert_eq!(flat.mask.data(), bumped.mask.data());
        assert!(!connected_components(&flat.mask).is_empty());
        let mut max_diff: Real = 0.0;
        for (a, b) in flat.image.data().iter().zip(bumped.image.data()) {
            assert!(b >= a, "bumps only add intensity");
            max_diff = max_diff.max(b - a);
        }
        assert!((max_diff - 0.3).abs() < 0.02, "peak bump ~0.3, got {max_diff}");
        for v in flat.image.data() {
            assert!((0.2..=0.6).contains(v), "flat image is the background");
        }
    }

    #[test]
    fn unit_radius_mask_is_a_small_disk_around_the_center() {
        for seed in 0..10 {
            let spec = SceneSpec {
                n_targets: 1,
                target_radius_px: (1.0, 1.0),
                seed,
                ..SceneSpec::default()
            };
            let s = gen_scene(&spec).unwrap();
            let comps = connected_components(&s.mask);
            assert_eq!(comps.len(), 1);
            let n = comps[0].pixels.len();
            assert!((1..=9).contains(&n), "disk of {n} px");
            let (cy, cx, sigma) = s.targets[0];
            let (py, px) = (cy.round() as usize, cx.round() as usize);
            let w = s.mask.shape()[2];
            assert_eq!(s.mask.data()[py * w + px], 1.0, "center pixel in mask");
            // The footprint is exactly the half-peak rule.
            for (i, &m) in s.mask.data().iter().enumerate() {
                let d = ((i / w) as Real - cy).hypot((i % w) as Real - cx);
                assert_eq!(m == 1.0, d <= sigma * HALF_PEAK, "pixel {i}");
            }
        }
    }

    #[test]
    fn component_count_and_diameter_stay_bounded() {
        for seed in 0..20 {
            let spec = SceneSpec {
                n_targets: 4,
                target_radius_px: (0.8, 4.0),
                size: (96, 96),
                seed: 100 + seed,
                ..SceneSpec::default()
            };
            let s = gen_scene(&spec).unwrap();
            let comps = connected_components(&s.mask);
            assert!(
                (1..=spec.n_targets).contains(&comps.len()),
                "{} components",
                comps.len()
            );
            let w = s.mask.shape()[2];
            for c in &comps {
                let mut diam: Real = 0.0;
                for &a in &c.pixels {
                    for &b in &c.pixels {
                        let dy = (a / w) as Real - (b / w) as Real;
                        let dx = (a % w) as Real - (b % w) as Real;
                        diam = diam.max(dy.hypot(dx));
                    }
                }
                assert!(diam <= 2.0 * 4.0 + 2.0, "diameter {diam}");
            }
        }
    }

    #[test]
    fn measured_contrast_matches_the_drawn_range() {
        let (lo, hi) = (0.05, 0.4);
        let mut measured = Vec::new();
        for seed in 0..100 {
            let spec = SceneSpec {
                noise_sigma: 0.01,
                target_contrast: (lo, hi),
                seed: 1000 + seed,
                ..SceneSpec::default()
            };
            let s = gen_scene(&spec).unwrap();
            let (h, w) = (s.image.shape()[1], s.image.shape()[2]);
            for &(cy, cx, sigma) in &s.targets {
                let (py, px) = (cy.round() as i64, cx.round() as i64);
                let ring = (sigma * HALF_PEAK).ceil() as i64 + 3;
                let mut bgs = Vec::new();
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dy.abs().max(dx.abs()) != ring {
                            continue;
                        }
                        let (y, x) = (py + dy, px + dx);
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            bgs.push(s.image.data()[y as usize * w + x as usize]);
                        }
                    }
                }
                let local_bg = bgs.iter().sum::<Real>() / bgs.len() as Real;
                measured.push(s.image.data()[py as usize * w + px as usize] - local_bg);
            }
        }
        let mean = measured.iter().sum::<Real>() / measured.len() as Real;
        assert!(
            (lo * 0.8..=hi * 1.2).contains(&mean),
            "mean measured contrast {mean} outside [{}, {}]",
            lo * 0.8,
            hi * 1.2
        );
    }

    #[test]
    fn tiny_scene_with_fat_target_reports_generation_error() {
        let spec = SceneSpec {
            size: (8, 8),
            target_radius_px: (4.0, 4.0),
            ..SceneSpec::default()
        };
        let err = gen_scene(&spec).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
    }

    #[test]
    fn pgm_roundtrip_recovers_masks_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = Tensor::from_fn(&[1, 5, 7], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), mask.shape());
        assert_eq!(back.data(), mask.data());
    }

    #[test]
    fn half_gray_image_quantizes_to_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        write_pgm(&path, &Tensor::from_fn(&[1, 4, 4], |_| 0.5)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 128));
    }

    #[test]
    fn pgm_header_is_the_documented_string() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        write_pgm(&path, &Tensor::zeros(&[1, 64, 64])).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    }

    #[test]
    fn pgm_roundtrip_error_is_at_most_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = Tensor::from_fn(&[1, 6, 6], |i| (i as Real) / 35.0);
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn malformed_pgm_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cases: &[(&str, &[u8])] = &[
            ("magic", b"P6\n2 2\n255\n aaaa"),
            ("maxval", b"P5\n2 2\n65535\n\0\0\0\0"),
            ("trunc", b"P5\n4 4\n255\nabc"),
            ("header", b"P5\n2\n"),
        ];
        for (name, bytes) in cases {
            let path = dir.path().join(format!("{name}.pgm"));
            fs::write(&path, bytes).unwrap();
            assert!(read_pgm(&path).is_err(), "{name} should fail");
        }
    }

    #[test]
    fn dataset_count_zero_writes_only_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let entries = gen_dataset(dir.path(), 0, &SceneSpec::default(), 5).unwrap();
        assert!(entries.is_empty());
        assert_eq!(fs::read_to_string(dir.path().join("index.tsv")).unwrap(), "");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn dataset_regeneration_is_byte_identical_and_prefix_stable() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SceneSpec::default();
        let e1 = gen_dataset(d1.path(), 3, &spec, 9).unwrap();
        let e2 = gen_dataset(d2.path(), 4, &spec, 9).unwrap();
        assert_eq!(e1[..], e2[..3]);
        for e in &e1 {
            for name in [&e.img, &e.mask, &e.edge] {
                let a = fs::read(d1.path().join(name)).unwrap();
                let b = fs::read(d2.path().join(name)).unwrap();
                assert_eq!(a, b, "{name} differs");
            }
        }
        // Per-sample seed is additive.
        let single = gen_scene(&SceneSpec {
            seed: 9 + 2,
            ..spec
        })
        .unwrap();
        let (img, _, _) = load_sample(d1.path(), &e1[2]).unwrap();
        for (a, b) in img.data().iter().zip(single.image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn edge_files_match_the_mask_boundary_on_readback() {
        let dir = tempfile::tempdir().unwrap();
        let entries = gen_dataset(dir.path(), 4, &SceneSpec::default(), 77).unwrap();
        for e in &entries {
            let (_, mask, edge) = load_sample(dir.path(), e).unwrap();
            let expect = edge_gt_from_mask(&mask);
            assert_eq!(edge.data(), expect.data(), "{}", e.edge);
        }
    }

    #[test]
    fn manifest_roundtrip_and_field_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let entries = gen_dataset(dir.path(), 2, &SceneSpec::default(), 1).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
        fs::write(dir.path().join("index.tsv"), "a\tb\n").unwrap();
        assert!(read_manifest(dir.path()).is_err());
    }
}
