//! Detection metrics over binary masks: mean IoU, per-target normalized
//! IoU, target-level detection probability and pixel-level false-alarm
//! rate, plus a threshold sweep for ROC curves.
//!
//! Conventions, documented and tested: empty-vs-empty IoU is 1; a corpus
//! with no ground-truth targets scores niou/pd 1 only when the predictions
//! are empty too; false alarms normalize per corpus (total false pixels
//! over total pixels).

use crate::tensor::{Real, Tensor};

fn is_on(v: Real) -> bool {
    v != 0.0
}

// ── connected components ──

#[derive(Debug, Clone)]
pub struct Component {
    /// Flat pixel indices (row-major within the [1,H,W] mask).
    pub pixels: Vec<usize>,
    /// (y, x) centroid in pixel coordinates.
    pub centroid: (Real, Real),
}

/// 8-connected components of a binary [1,H,W] mask via flood fill.
pub fn connected_components(mask: &Tensor) -> Vec<Component> {
    let s = mask.shape();
    assert_eq!(s.len(), 3, "mask must be [1,H,W]");
    let (h, w) = (s[1], s[2]);
    let d = mask.data();
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    for start in 0..h * w {
        if seen[start] || !is_on(d[start]) {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (y, x) = (p / w, p % w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    if !seen[q] && is_on(d[q]) {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        let (mut cy, mut cx) = (0.0, 0.0);
        for &p in &pixels {
            cy += (p / w) as Real;
            cx += (p % w) as Real;
        }
        let n = pixels.len() as Real;
        comps.push(Component {
            pixels,
            centroid: (cy / n, cx / n),
        });
    }
    comps
}

// ── overlap metrics ──

fn pair_counts(pred: &Tensor, gt: &Tensor) -> (usize, usize) {
    assert_eq!(pred.shape(), gt.shape(), "mask shapes must match");
    let mut inter = 0;
    let mut union = 0;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (is_on(*p), is_on(*g));
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    (inter, union)
}

/// Mean over samples of |P∩G| / |P∪G|; an empty pair scores 1.
pub fn miou(preds: &[Tensor], gts: &[Tensor]) -> Real {
    assert_eq!(preds.len(), gts.len(), "corpus lengths must match");
    assert!(!preds.is_empty(), "empty corpus");
    let mut acc = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let (i, u) = pair_counts(p, g);
        acc += if u == 0 { 1.0 } else { i as Real / u as Real };
    }
    acc / preds.len() as Real
}

/// Per-target IoU averaged over every ground-truth component in the corpus.
/// Each target is matched to the prediction component overlapping it most;
/// a target with no overlapping component scores 0.
pub fn niou(preds: &[Tensor], gts: &[Tensor]) -> Real {
    assert_eq!(preds.len(), gts.len(), "corpus lengths must match");
    assert!(!preds.is_empty(), "empty corpus");
    let mut scores = Vec::new();
    let mut any_pred = false;
    for (p, g) in preds.iter().zip(gts) {
        let pcs = connected_components(p);
        any_pred |= !pcs.is_empty();
        for t in connected_components(g) {
            let tset: std::collections::BTreeSet<usize> = t.pixels.iter().copied().collect();
            let mut best = 0.0;
            for pc in &pcs {
                let inter = pc.pixels.iter().filter(|q| tset.contains(q)).count();
                if inter == 0 {
                    continue;
                }
                let union = pc.pixels.len() + t.pixels.len() - inter;
                best = (inter as Real / union as Real).max(best);
            }
            scores.push(best);
        }
    }
    if scores.is_empty() {
        // No targets to normalize over; perfect only if nothing was claimed.
        return if any_pred { 0.0 } else { 1.0 };
    }
    scores.iter().sum::<Real>() / scores.len() as Real
}

/// Target-level detection probability and corpus-level false-alarm rate.
///
/// A target counts detected when some predicted component's centroid lies
/// within `match_radius` of its centroid; pixels of predicted components
/// matching no target at all count as false alarms.
pub fn pd_fa(preds: &[Tensor], gts: &[Tensor], match_radius: Real) -> (Real, Real) {
    assert_eq!(preds.len(), gts.len(), "corpus lengths must match");
    assert!(!preds.is_empty(), "empty corpus");
    let r2 = match_radius * match_radius;
    let mut targets = 0usize;
    let mut hits = 0usize;
    let mut false_pixels = 0usize;
    let mut total_pixels = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        total_pixels += p.numel();
        let pcs = connected_components(p);
        let tcs = connected_components(g);
        let d2 = |a: (Real, Real), b: (Real, Real)| {
            let (dy, dx) = (a.0 - b.0, a.1 - b.1);
            dy * dy + dx * dx
        };
        targets += tcs.len();
        for t in &tcs {
            if pcs.iter().any(|pc| d2(pc.centroid, t.centroid) <= r2) {
                hits += 1;
            }
        }
        for pc in &pcs {
            if !tcs.iter().any(|t| d2(pc.centroid, t.centroid) <= r2) {
                false_pixels += pc.pixels.len();
            }
        }
    }
    let pd = if targets == 0 {
        if false_pixels == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hits as Real / targets as Real
    };
    (pd, false_pixels as Real / total_pixels as Real)
}

// ── ROC sweep ──

/// Pixel-level (fpr, tpr) at `n` uniform thresholds in [0,1] plus a
/// sentinel above 1, ordered by threshold descending so the curve starts
/// at (0,0) and ends at (1,1). Thresholding is inclusive (p >= t).
pub fn roc_sweep(probs: &[Tensor], gts: &[Tensor], n: usize) -> Vec<(Real, Real)> {
    assert_eq!(probs.len(), gts.len(), "corpus lengths must match");
    assert!(n >= 2, "need at least two thresholds");
    let mut thresholds: Vec<Real> = vec![1.0 + 1e-6];
    for i in (0..n).rev() {
        thresholds.push(i as Real / (n - 1) as Real);
    }
    let mut pts = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (pm, gm) in probs.iter().zip(gts) {
            assert_eq!(pm.shape(), gm.shape(), "prob/gt shapes must match");
            for (p, g) in pm.data().iter().zip(gm.data()) {
                let hot = *p >= t;
                if is_on(*g) {
                    pos += 1;
                    tp += usize::from(hot);
                } else {
                    neg += 1;
                    fp += usize::from(hot);
                }
            }
        }
        let tpr = if pos == 0 { 1.0 } else { tp as Real / pos as Real };
        let fpr = if neg == 0 { 0.0 } else { fp as Real / neg as Real };
        pts.push((fpr, tpr));
    }
    pts
}

// ── report ──

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub miou: Real,
    pub niou: Real,
    pub pd: Real,
    /// Per-pixel false-alarm rate (not yet scaled by 1e6).
    pub fa: Real,
    pub roc: Vec<(Real, Real)>,
}

impl MetricsReport {
    pub fn compute(probs: &[Tensor], gts: &[Tensor], threshold: Real, roc_points: usize) -> Self {
        let preds: Vec<Tensor> = probs
            .iter()
            .map(|p| p.map(|v| if v >= threshold { 1.0 } else { 0.0 }))
            .collect();
        let (pd, fa) = pd_fa(&preds, gts, 3.0);
        MetricsReport {
            miou: miou(&preds, gts),
            niou: niou(&preds, gts),
            pd,
            fa,
            roc: roc_sweep(probs, gts, roc_points),
        }
    }

    /// Flat key: value lines, then a CSV block with the sweep points.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("miou: {:.6}\n", self.miou));
        s.push_str(&format!("niou: {:.6}\n", self.niou));
        s.push_str(&format!("pd: {:.6}\n", self.pd));
        s.push_str(&format!("fa_e6: {:.6}\n", self.fa * 1e6));
        s.push_str("roc_csv:\n");
        s.push_str("fpr,tpr\n");
        for (fpr, tpr) in &self.roc {
            s.push_str(&format!("{fpr:.8},{tpr:.8}\n"));
        }
        s
    }
}

// ── tests ──
