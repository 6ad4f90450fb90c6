//! The three-branch objective: three MSE terms with a stop-gradient on the
//! first view inside the predictor term, averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchOutputs, PredictorInput};
use crate::tape::{Graph, Mat, Var};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(l1: f64, l2: f64, l3: f64) -> Self {
        Self {
            l1,
            l2,
            l3,
            total: l1 + l2 + l3,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l2.is_finite() && self.l3.is_finite() && self.total.is_finite()
    }
}

/// Loss-side ablation switches. All off is the standard objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Predictor replaced by the identity.
    pub no_predictor: bool,
    /// Drop the original-sample branch: `L2` removed, `L3` becomes
    /// `mse(P(z2), sg(z1))`.
    pub no_original: bool,
    /// Swap the roles of `z` and `z2` throughout.
    pub permuted_branches: bool,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.no_original && self.permuted_branches {
            return Err(Error::arg(
                "no_original and permuted_branches are contradictory: there is no original branch to permute",
            ));
        }
        Ok(())
    }

    /// Which branch the predictor consumes under these flags.
    pub fn predictor_input(&self) -> PredictorInput {
        let second = self.no_original || self.permuted_branches;
        match (self.no_predictor, second) {
            (false, false) => PredictorInput::Original,
            (false, true) => PredictorInput::SecondView,
            (true, false) => PredictorInput::IdentityOnOriginal,
            (true, true) => PredictorInput::IdentityOnSecondView,
        }
    }
}

/// `(1/n)·‖a − b‖²`.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("mse operands have lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::arg("mse of empty vectors"));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Identity on values. On a graph use [`stop_gradient_var`].
pub fn stop_gradient(z: &Mat) -> Mat {
    z.clone()
}

/// Identity forward; no gradient flows back through the result.
pub fn stop_gradient_var(g: &mut Graph, z: Var) -> Var {
    g.detach(z)
}

/// Per-sample `mse` averaged over rows.
fn batch_mse(a: &Mat, b: &Mat) -> Result<f64> {
    let rows = a.nrows();
    let mut acc = 0.0;
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        acc += mse(ra.as_slice().expect("standard layout"), rb.as_slice().expect("standard layout"))?;
    }
    Ok(acc / rows as f64)
}

fn check_shapes(mats: &[&Mat]) -> Result<()> {
    let dim = mats[0].dim();
    if dim.0 == 0 || dim.1 == 0 {
        return Err(Error::arg("loss inputs must be non-empty B x n matrices"));
    }
    for m in mats {
        if m.dim() != dim {
            return Err(Error::arg(format!("loss inputs have shapes {:?} and {:?}", dim, m.dim())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("loss input has non-finite entries".into()));
        }
    }
    Ok(())
}

/// Standard objective on `B × n` branch outputs; `p = P(z)`.
pub fn sl_fpn_loss(z: &Mat, z1: &Mat, z2: &Mat, p: &Mat) -> Result<LossBreakdown> {
    ablation_loss(z, z1, z2, p, AblationFlags::default())
}

/// Objective under ablation flags. `p` is the predictor output on the
/// branch given by [`AblationFlags::predictor_input`]; it is ignored when
/// `no_predictor` is set.
pub fn ablation_loss(z: &Mat, z1: &Mat, z2: &Mat, p: &Mat, flags: AblationFlags) -> Result<LossBreakdown> {
    flags.validate()?;
    check_shapes(&[z, z1, z2, p])?;
    let sg_z1 = stop_gradient(z1);
    let (orig, other) = if flags.permuted_branches { (z2, z) } else { (z, z2) };
    if flags.no_original {
        let pred = if flags.no_predictor { z2 } else { p };
        return Ok(LossBreakdown::from_terms(batch_mse(z1, z2)?, 0.0, batch_mse(pred, &sg_z1)?));
    }
    let pred = if flags.no_predictor { orig } else { p };
    Ok(LossBreakdown::from_terms(
        batch_mse(z1, other)?,
        batch_mse(orig, other)?,
        batch_mse(pred, &sg_z1)?,
    ))
}

/// Loss terms as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l1: Var,
    pub l2: Option<Var>,
    pub l3: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            l1: g.scalar(self.l1),
            l2: self.l2.map_or(0.0, |v| g.scalar(v)),
            l3: g.scalar(self.l3),
            total: g.scalar(self.total),
        }
    }
}

/// Builds the objective on `out`, whose `p` must come from
/// `flags.predictor_input()`. With `normalize`, every embedding row is
/// scaled to unit length before the MSE terms.
pub fn loss_graph(g: &mut Graph, out: &BranchOutputs, flags: AblationFlags, normalize: bool) -> Result<LossVars> {
    flags.validate()?;
    let norm = |g: &mut Graph, v: Var| if normalize { g.row_normalize(v) } else { v };
    let z = norm(g, out.z);
    let z1 = norm(g, out.z1);
    let z2 = norm(g, out.z2);
    let p = norm(g, out.p);
    let (orig, other) = if flags.permuted_branches { (z2, z) } else { (z, z2) };
    let sg_z1 = stop_gradient_var(g, z1);
    let (l1, l2, l3) = if flags.no_original {
        (g.mse(z1, z2), None, g.mse(p, sg_z1))
    } else {
        (g.mse(z1, other), Some(g.mse(orig, other)), g.mse(p, sg_z1))
    };
    let total = match l2 {
        Some(l2) => g.sum_scalars(&[l1, l2, l3]),
        None => g.sum_scalars(&[l1, l3]),
    };
    Ok(LossVars { l1, l2, l3, total })
}
