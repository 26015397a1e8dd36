use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Class-activation map over the final feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`; all zeros when the weighted map is constant.
    pub values: Vec<f64>,
    /// Per-channel weights: spatial mean of the score gradient.
    pub alphas: Vec<f64>,
}

/// Grad-CAM of `class_id` for a single image `[1, 3, S, S]` on the map entering the
/// global average pool, computed with eval-mode batch norm.
pub fn gradcam(model: &Model, x: &Tensor, class_id: usize) -> Result<CamMap> {
    if x.rank() != 4 || x.shape()[0] != 1 {
        return Err(Error::dim(format!(
            "gradcam expects one image [1, 3, S, S], got {:?}",
            x.shape()
        )));
    }
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let map = model.features(&mut g, &params, xv, false)?.map;
    let features = g.value(map).clone();
    gradcam_with_head(&features, class_id, |g, a| {
        let p = model.bind(g, false);
        model.head(g, &p, a)
    })
}

/// Grad-CAM for an arbitrary differentiable `head` mapping features `[1, K, H, W]` to
/// logits `[1, C]`.
pub fn gradcam_with_head<F>(features: &Tensor, class_id: usize, head: F) -> Result<CamMap>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let [n, k, h, w] = features.dims4()?;
    if n != 1 {
        return Err(Error::dim(format!("gradcam features must hold one sample, got {n}")));
    }
    let mut g = Graph::new();
    let a = g.leaf(features.clone(), true);
    let logits = head(&mut g, a)?;
    let classes = g.shape(logits).get(1).copied().unwrap_or(0);
    if class_id >= classes {
        return Err(Error::Input(format!("class {class_id} outside [0, {classes})")));
    }
    let mut pick = vec![0.0f32; classes];
    pick[class_id] = 1.0;
    let mask = g.constant(Tensor::new(vec![1, classes], pick)?);
    let picked = g.mul(logits, mask)?;
    let score = g.sum(picked)?;
    g.backward(score)?;
    let grad = g
        .grad(a)
        .ok_or_else(|| Error::Usage("head does not depend on the features".into()))?;
    let hw = h * w;
    let alphas: Vec<f64> = grad
        .chunks(hw)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / hw as f64)
        .collect();
    let mut cam = vec![0.0f64; hw];
    for (ch, &alpha) in features.data().chunks(hw).zip(&alphas).take(k) {
        for (c, &v) in cam.iter_mut().zip(ch) {
            *c += alpha * v as f64;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let lo = cam.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cam.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        cam.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; hw]
    };
    Ok(CamMap {
        height: h,
        width: w,
        values,
        alphas,
    })
}
