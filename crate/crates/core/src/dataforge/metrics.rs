use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-scale dual-branch result reported on real imagery; informational
/// only, never a test target.
pub const PUBLISHED_DUAL_MIOU: f64 = 0.976;
pub const PUBLISHED_DUAL_OA: f64 = 0.981;

/// Binary confusion counts accumulated over any number of tiles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: &[bool], truth: &[bool]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::dim(
                "miou_oa",
                format!("{} predicted vs {} truth pixels", pred.len(), truth.len()),
            ));
        }
        for (p, t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn ratio(num: u64, den: u64) -> f64 {
        // A class absent from both prediction and truth is perfectly segmented.
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn iou_terrace(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn iou_background(&self) -> f64 {
        Self::ratio(self.tn, self.tn + self.fp + self.fn_)
    }

    pub fn miou(&self) -> f64 {
        0.5 * (self.iou_terrace() + self.iou_background())
    }

    pub fn oa(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.total())
    }
}

/// Global-confusion mIoU and overall accuracy over paired tiles.
pub fn miou_oa(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::dim(
            "miou_oa",
            format!("{} predicted vs {} truth tiles", pred.len(), truth.len()),
        ));
    }
    let mut c = Confusion::default();
    for (p, t) in pred.iter().zip(truth) {
        c.add(p, t)?;
    }
    Ok((c.miou(), c.oa()))
}
