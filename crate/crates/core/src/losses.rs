//! Composite training objective and edge ground-truth synthesis.
//!
//! The objective is a weighted sum of pixel-mean binary cross entropy on the
//! edge branch and a soft IoU penalty on the mask branch, both taken on
//! probabilities at ground-truth resolution. Edge targets are derived from
//! masks by an inner morphological gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

// ── weights ──

fn default_weight() -> Real {
    1.0
}

fn default_eps() -> Real {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_weight")]
    pub alpha: Real,
    #[serde(default = "default_weight")]
    pub beta: Real,
    #[serde(default = "default_eps")]
    pub epsilon: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!(
                    "loss weight {name} = {v} outside (0, 1]"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "loss epsilon = {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// The two branch terms and their weighted sum, all scalar graph nodes.
pub struct LossTerms {
    pub edge: Var,
    pub mask: Var,
    pub total: Var,
}

/// alpha * BCE(edge) + beta * SoftIoU(mask); predictions are probabilities
/// already resized to the targets' resolution. Weight validation is a
/// config-load concern; the sum itself is defined for any weights.
pub fn total_loss(
    g: &mut Graph,
    edge_pred: Var,
    edge_gt: &Tensor,
    mask_pred: Var,
    mask_gt: &Tensor,
    w: &LossWeights,
) -> Result<LossTerms> {
    let edge = g.bce_loss(edge_pred, edge_gt)?;
    let mask = g.soft_iou_loss(mask_pred, mask_gt, w.epsilon)?;
    let se = g.scale(edge, w.alpha);
    let sm = g.scale(mask, w.beta);
    let total = g.add(se, sm)?;
    Ok(LossTerms { edge, mask, total })
}

// ── edge targets ──

/// 3x3 binary erosion with 8-connectivity; outside the image counts as 0,
/// so mask pixels on the border never survive.
pub fn erode3(mask: &Tensor) -> Tensor {
    let s = mask.shape();
    assert_eq!(s.len(), 3, "mask must be [1,H,W]");
    let (h, w) = (s[1], s[2]);
    let d = mask.data();
    let mut out = Tensor::zeros(s);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        all = false;
                        break 'nb;
                    }
                    if d[yy as usize * w + xx as usize] == 0.0 {
                        all = false;
                        break 'nb;
                    }
                }
            }
            if all {
                out.data_mut()[y * w + x] = 1.0;
            }
        }
    }
    out
}

/// Inner morphological gradient: mask AND NOT erode3(mask). For solid
/// shapes this is the single-pixel-wide boundary ring.
pub fn edge_gt_from_mask(mask: &Tensor) -> Tensor {
    let er = erode3(mask);
    let mut out = mask.clone();
    for (o, e) in out.data_mut().iter_mut().zip(er.data()) {
        if *e != 0.0 {
            *o = 0.0;
        }
    }
    out
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Tensor {
        let mut t = Tensor::zeros(&[1, h, w]);
        for &(y, x) in on {
            t.data_mut()[y * w + x] = 1.0;
        }
        t
    }

    #[test]
    fn weights_must_sit_in_unit_interval() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossWeights {
            beta: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exact_prediction_drives_both_terms_to_the_floor() {
        let gt_e = mask(2, 2, &[(0, 0)]);
        let gt_m = mask(2, 2, &[(1, 1)]);
        let mut g = Graph::new();
        let pe = g.leaf(&gt_e);
        let pm = g.leaf(&gt_m);
        let lt = total_loss(&mut g, pe, &gt_e, pm, &gt_m, &LossWeights::default()).unwrap();
        // BCE is clamp-limited, soft IoU epsilon-limited.
        assert!(g.value(lt.edge).item() < 1e-6);
        assert!(g.value(lt.mask).item() < 1e-6);
        assert!(g.value(lt.total).item() < 2e-6);
    }

    #[test]
    fn zero_alpha_leaves_only_the_mask_term() {
        let gt = mask(2, 2, &[(0, 1)]);
        let pred = Tensor::full(&[1, 2, 2], 0.3);
        // The (0,1] bound is a config contract; the sum itself admits the
        // alpha=0 limit, which must equal beta times the bare mask term.
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.75,
            epsilon: 1e-6,
        };
        let mut g = Graph::new();
        let pe = g.leaf(&pred);
        let pm = g.leaf(&pred);
        let lt = total_loss(&mut g, pe, &gt, pm, &gt, &w).unwrap();
        let mask_term = g.soft_iou_loss(pm, &gt, 1e-6).unwrap();
        let expect = 0.75 * g.value(mask_term).item();
        assert_eq!(g.value(lt.total).item(), expect);
    }

    #[test]
    fn composite_is_the_weighted_sum_of_known_oracles() {
        // Edge: two pixels y=[1,0], p=[0.9,0.1] -> -(ln .9 + ln .9)/2.
        let gt_e = Tensor::new(&[1, 1, 2], vec![1.0, 0.0]).unwrap();
        let pe_t = Tensor::new(&[1, 1, 2], vec![0.9, 0.1]).unwrap();
        // Mask: y=[1,1,0,0], p=[1,0,0,0] -> 1 - (1+eps)/(2+eps).
        let gt_m = Tensor::new(&[1, 1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let pm_t = Tensor::new(&[1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let w = LossWeights {
            alpha: 0.5,
            beta: 1.0,
            epsilon: 1e-6,
        };
        let mut g = Graph::new();
        let pe = g.leaf(&pe_t);
        let pm = g.leaf(&pm_t);
        let lt = total_loss(&mut g, pe, &gt_e, pm, &gt_m, &w).unwrap();
        let edge_oracle = -((0.9f64).ln() + (0.9f64).ln()) / 2.0;
        let mask_oracle = 1.0 - (1.0 + 1e-6) / (2.0 + 1e-6);
        assert!((g.value(lt.edge).item() - edge_oracle).abs() < 1e-12);
        assert!((edge_oracle - 0.105361).abs() < 1e-6);
        assert!((g.value(lt.mask).item() - mask_oracle).abs() < 1e-12);
        let total = 0.5 * edge_oracle + mask_oracle;
        assert!((g.value(lt.total).item() - total).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_nonnegative_on_adversarial_inputs() {
        let gt = mask(3, 3, &[(1, 1)]);
        for p in [0.0, 0.5, 1.0] {
            let pred = Tensor::full(&[1, 3, 3], p);
            let mut g = Graph::new();
            let pe = g.leaf(&pred);
            let pm = g.leaf(&pred);
            let lt = total_loss(&mut g, pe, &gt, pm, &gt, &LossWeights::default()).unwrap();
            assert!(g.value(lt.total).item() >= 0.0);
        }
    }

    #[test]
    fn soft_iou_falls_when_a_missed_pixel_gains_probability() {
        let gt = Tensor::new(&[1, 1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut last = Real::INFINITY;
        for p in [0.1, 0.4, 0.7, 0.95] {
            let pred = Tensor::new(&[1, 1, 4], vec![1.0, p, 0.0, 0.0]).unwrap();
            let mut g = Graph::new();
            let pv = g.leaf(&pred);
            let l = g.soft_iou_loss(pv, &gt, 1e-6).unwrap();
            let v = g.value(l).item();
            assert!(v < last, "loss must fall as the miss fills in");
            last = v;
        }
    }

    #[test]
    fn erosion_of_isolated_pixel_is_empty_so_edge_is_the_pixel() {
        let m = mask(5, 5, &[(2, 2)]);
        assert!(erode3(&m).data().iter().all(|&v| v == 0.0));
        assert_eq!(edge_gt_from_mask(&m).data(), m.data());
    }

    #[test]
    fn solid_three_by_three_square_leaves_the_ring() {
        let on: Vec<(usize, usize)> = (1..4).flat_map(|y| (1..4).map(move |x| (y, x))).collect();
        let m = mask(5, 5, &on);
        let e = edge_gt_from_mask(&m);
        let mut count = 0;
        for y in 0..5 {
            for x in 0..5 {
                let v = e.data()[y * 5 + x];
                if (y, x) == (2, 2) {
                    assert_eq!(v, 0.0, "center survives erosion");
                } else if (1..4).contains(&y) && (1..4).contains(&x) {
                    assert_eq!(v, 1.0, "ring pixel");
                    count += 1;
                } else {
                    assert_eq!(v, 0.0, "background");
                }
            }
        }
        assert_eq!(count, 8);
    }

    #[test]
    fn empty_mask_yields_empty_edge() {
        let m = Tensor::zeros(&[1, 4, 6]);
        assert!(edge_gt_from_mask(&m).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_is_subset_of_mask_and_disjoint_from_erosion() {
        // A blobby random-ish mask via a deterministic rule.
        let m = Tensor::from_fn(&[1, 9, 9], |i| {
            if (i * 7 + i * i) % 5 < 2 {
                1.0
            } else {
                0.0
            }
        });
        let e = edge_gt_from_mask(&m);
        let er = erode3(&m);
        for i in 0..m.numel() {
            if e.data()[i] == 1.0 {
                assert_eq!(m.data()[i], 1.0);
                assert_eq!(er.data()[i], 0.0);
            }
        }
    }

    #[test]
    fn mask_pixels_on_the_border_are_edges() {
        let m = Tensor::full(&[1, 3, 3], 1.0);
        let e = edge_gt_from_mask(&m);
        for y in 0..3 {
            for x in 0..3 {
                let expect = if (y, x) == (1, 1) { 0.0 } else { 1.0 };
                assert_eq!(e.data()[y * 3 + x], expect);
            }
        }
    }
}
