use serde::{Deserialize, Serialize};

use ribforge_core::{ChannelGroups, Tensor};

use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Binary masks of one scene, one channel per structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub ribs: Tensor<f32>,
    pub lungs: Tensor<f32>,
    pub clavicles: Tensor<f32>,
}

impl MaskSet {
    pub fn groups(&self) -> ChannelGroups {
        ChannelGroups {
            ribs: self.ribs.shape()[0],
            lungs: self.lungs.shape()[0],
            clavicles: self.clavicles.shape()[0],
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.ribs.shape()[1], self.ribs.shape()[2])
    }

    pub fn parts(&self) -> [&Tensor<f32>; 3] {
        [&self.ribs, &self.lungs, &self.clavicles]
    }

    /// All channels stacked as `[Cr+Cl+Cc, H, W]`.
    pub fn stacked(&self) -> Tensor<f32> {
        let (h, w) = self.extent();
        let mut data = Vec::with_capacity(self.groups().total() * h * w);
        for p in self.parts() {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(&[self.groups().total(), h, w], data).expect("stacked extent")
    }

    pub fn from_stacked(stack: &Tensor<f32>, groups: &ChannelGroups) -> Result<Self> {
        let s = stack.shape();
        if s.len() != 3 || s[0] != groups.total() {
            return Err(DataError::Invalid(format!("stack {s:?} does not hold {} channels", groups.total())));
        }
        let plane = s[1] * s[2];
        let take = |from: usize, n: usize| {
            Tensor::from_vec(&[n, s[1], s[2]], stack.data()[from * plane..(from + n) * plane].to_vec()).expect("slice extent")
        };
        let m = MaskSet {
            ribs: take(0, groups.ribs),
            lungs: take(groups.ribs, groups.lungs),
            clavicles: take(groups.ribs + groups.lungs, groups.clavicles),
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks rank, shared extent and binarity.
    pub fn validate(&self) -> Result<()> {
        let lead = self.ribs.shape();
        for (name, p) in ["ribs", "lungs", "clavicles"].into_iter().zip(self.parts()) {
            let s = p.shape();
            if s.len() != 3 || s[1..] != lead[1..] || lead.len() != 3 {
                return Err(DataError::Invalid(format!("{name} masks have shape {s:?}, ribs {lead:?}")));
            }
            if p.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(DataError::Invalid(format!("{name} masks are not binary")));
            }
        }
        Ok(())
    }

    /// Channel `c` of the stacked layout as a flat plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        let g = self.groups();
        let (h, w) = self.extent();
        let plane = h * w;
        let (t, i) = if c < g.ribs {
            (&self.ribs, c)
        } else if c < g.ribs + g.lungs {
            (&self.lungs, c - g.ribs)
        } else {
            (&self.clavicles, c - g.ribs - g.lungs)
        };
        &t.data()[i * plane..(i + 1) * plane]
    }
}

/// An image with its masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, H, W]` intensities in `[0, 1]`.
    pub image: Tensor<f32>,
    pub masks: MaskSet,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        self.masks.validate()?;
        let (h, w) = self.masks.extent();
        if self.image.shape() != [1, h, w] {
            return Err(DataError::Invalid(format!("image {:?} vs masks {h}x{w}", self.image.shape())));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("image values outside [0, 1]".into()));
        }
        Ok(())
    }
}
