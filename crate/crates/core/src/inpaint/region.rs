use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::lm::{HierarchyConfig, InpaintMask, Level};

/// Rectangle of codemap cells on one level, half-open in both axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSelection {
    pub level: Level,
    pub freq_range: Range<usize>,
    pub time_range: Range<usize>,
}

impl RegionSelection {
    /// Every cell of the top codemap.
    pub fn full_top(hier: &HierarchyConfig) -> Self {
        Self {
            level: Level::Top,
            freq_range: 0..hier.top_shape.0,
            time_range: 0..hier.top_shape.1,
        }
    }

    pub fn validate(&self, hier: &HierarchyConfig) -> Result<()> {
        let (f, t) = match self.level {
            Level::Top => hier.top_shape,
            Level::Bottom => hier.bottom_shape(),
        };
        let (fr, tr) = (&self.freq_range, &self.time_range);
        ensure!(
            fr.start < fr.end && tr.start < tr.end && fr.end <= f && tr.end <= t,
            InvalidInput,
            "region [{}, {}) × [{}, {}) is empty or outside the {} grid {f}×{t}",
            fr.start,
            fr.end,
            tr.start,
            tr.end,
            self.level
        );
        Ok(())
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        self.freq_range.contains(&r) && self.time_range.contains(&c)
    }
}

/// Top and bottom masks for `region`. A top region also masks every bottom
/// cell whose parent lies inside it.
pub fn region_to_mask(region: &RegionSelection, hier: &HierarchyConfig) -> Result<(InpaintMask, InpaintMask)> {
    region.validate(hier)?;
    let (tf, tt) = hier.top_shape;
    let (bf, bt) = hier.bottom_shape();
    let (df, dt) = hier.patch;
    Ok(match region.level {
        Level::Top => (
            InpaintMask::from_fn(tf, tt, |r, c| region.contains(r, c)),
            InpaintMask::from_fn(bf, bt, |r, c| region.contains(r / df, c / dt)),
        ),
        Level::Bottom => (
            InpaintMask::empty(tf, tt),
            InpaintMask::from_fn(bf, bt, |r, c| region.contains(r, c)),
        ),
    })
}
