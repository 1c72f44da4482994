//! Spatial geometry of the two-stream network as a function of crop size.
//!
//! At the native 224x224 input every stage reproduces the published dimension
//! chain exactly (AlexNet 55/27/27/13/13/13/13/6/6, SqueezeNet
//! 109/54/27/13, bridge 13->6, fusion 6->3). Smaller crops, used by the
//! desk-scale gradient and overfit suites, keep the same layer stack but skip
//! a pooling stage whose window no longer fits and clamp the adaptive-average
//! target to the available extent. The plan records exactly which stages
//! apply so forward passes at any size stay assertable.

use crate::error::{Error, Result};
use crate::tensor::{conv_out_extent, pool_out_extent};

/// How the SqueezeNet stream's output is brought to the AlexNet stream's
/// spatial extent before its ConvLSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bridge {
    /// Extents already agree.
    None,
    /// The canonical 13 -> 6 reduction: max pool, kernel 3, stride 2.
    MaxPool3x2,
    /// Fallback for reduced crops: adaptive average to the target extent.
    Adaptive(usize),
}

/// Resolved spatial plan for one crop size.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub crop: usize,
    /// AlexNet extents after conv1..conv5 (pools folded in where applied).
    pub alex_conv_extents: [usize; 5],
    /// Which of AlexNet's three max pools fit.
    pub alex_pools: [bool; 3],
    /// Adaptive-average target closing the AlexNet stream (6 at full size).
    pub alex_adaptive: usize,
    /// SqueezeNet extents after conv1 and each fire module.
    pub squeeze_conv1_extent: usize,
    pub squeeze_fire_extents: [usize; 8],
    /// Which of SqueezeNet's three max pools fit.
    pub squeeze_pools: [bool; 3],
    pub bridge: Bridge,
    /// Spatial extent of both ConvLSTM states (equals the AlexNet output).
    pub state_extent: usize,
    /// Whether the post-fusion 2x2/2 max pool fits.
    pub fused_pool: bool,
    /// Spatial extent entering the classifier head.
    pub head_extent: usize,
}

fn pool_if_fits(extent: usize, kernel: usize, stride: usize, ceil: bool) -> (usize, bool) {
    match pool_out_extent(extent, kernel, stride, ceil) {
        Some(out) => (out, true),
        None => (extent, false),
    }
}

impl Geometry {
    pub fn plan(crop: usize) -> Result<Self> {
        let fail = |stage: &str| {
            Error::InvalidArgument(format!(
                "crop size {crop} is too small: no valid extent at {stage}"
            ))
        };

        // AlexNet stream: conv(11,4,2) P conv(5,1,2) P conv(3,1,1) x3 P adaptive.
        let a1 = conv_out_extent(crop, 11, 4, 2).ok_or_else(|| fail("alexnet conv1"))?;
        let (p1, a_pool1) = pool_if_fits(a1, 3, 2, false);
        let a2 = conv_out_extent(p1, 5, 1, 2).ok_or_else(|| fail("alexnet conv2"))?;
        let (p2, a_pool2) = pool_if_fits(a2, 3, 2, false);
        let a3 = conv_out_extent(p2, 3, 1, 1).ok_or_else(|| fail("alexnet conv3"))?;
        let a4 = a3;
        let a5 = a3;
        let (p3, a_pool3) = pool_if_fits(a5, 3, 2, false);
        let alex_adaptive = p3.min(6);
        if alex_adaptive == 0 {
            return Err(fail("alexnet adaptive pool"));
        }

        // SqueezeNet stream: conv(7,2,0) P fire2-4 P fire5-8 P fire9, with
        // ceil-mode pools (the 54 -> 27 step requires them).
        let s1 = conv_out_extent(crop, 7, 2, 0).ok_or_else(|| fail("squeezenet conv1"))?;
        let (sp1, s_pool1) = pool_if_fits(s1, 3, 2, true);
        let f2 = sp1; // fire modules preserve spatial extent
        let f3 = f2;
        let f4 = f3;
        let (sp2, s_pool2) = pool_if_fits(f4, 3, 2, true);
        let f5 = sp2;
        let f6 = f5;
        let f7 = f6;
        let f8 = f7;
        let (sp3, s_pool3) = pool_if_fits(f8, 3, 2, true);
        let f9 = sp3;

        let state_extent = alex_adaptive;
        let bridge = if f9 == state_extent {
            Bridge::None
        } else if pool_out_extent(f9, 3, 2, false) == Some(state_extent) {
            Bridge::MaxPool3x2
        } else if f9 > state_extent {
            Bridge::Adaptive(state_extent)
        } else {
            return Err(Error::InvalidArgument(format!(
                "crop size {crop} leaves the SqueezeNet stream at {f9}x{f9}, \
                 smaller than the AlexNet stream's {state_extent}x{state_extent}"
            )));
        };

        let (head_extent, fused_pool) = pool_if_fits(state_extent, 2, 2, false);

        Ok(Geometry {
            crop,
            alex_conv_extents: [a1, a2, a3, a4, a5],
            alex_pools: [a_pool1, a_pool2, a_pool3],
            alex_adaptive,
            squeeze_conv1_extent: s1,
            squeeze_fire_extents: [f2, f3, f4, f5, f6, f7, f8, f9],
            squeeze_pools: [s_pool1, s_pool2, s_pool3],
            bridge,
            state_extent,
            fused_pool,
            head_extent,
        })
    }

    /// Flattened feature length entering fc1 for a given fused channel count.
    pub fn head_input_len(&self, fused_channels: usize) -> usize {
        fused_channels * self.head_extent * self.head_extent
    }
}
