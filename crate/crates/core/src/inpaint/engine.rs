use super::region::{region_to_mask, RegionSelection};
use super::sample::sample_level;
use crate::config::SamplerConfig;
use crate::error::{ensure, Result};
use crate::lm::{
    delinearize_bottom, delinearize_top, linearize_bottom, linearize_top, ConditioningLabels, HierarchyConfig,
    InpaintMask, Level, Prior,
};
use crate::rng::SeededRng;
use crate::vqvae::{CodeGrid, CodemapPair};

/// A frozen top/bottom prior pair.
pub struct Engine<'a> {
    top: &'a Prior,
    bottom: &'a Prior,
}

impl<'a> Engine<'a> {
    pub fn new(top: &'a Prior, bottom: &'a Prior) -> Result<Self> {
        let (mt, mb) = (top.meta(), bottom.meta());
        ensure!(
            mt.level == Level::Top && mb.level == Level::Bottom,
            InvalidConfig,
            "engine needs a top and a bottom prior, got {} and {}",
            mt.level,
            mb.level
        );
        ensure!(
            mt.hierarchy == mb.hierarchy && mt.codebook_size == mb.codebook_size && mt.vocab == mb.vocab,
            InvalidConfig,
            "top prior (hierarchy {:?}, K {}) and bottom prior (hierarchy {:?}, K {}) disagree",
            mt.hierarchy,
            mt.codebook_size,
            mb.hierarchy,
            mb.codebook_size
        );
        Ok(Self { top, bottom })
    }

    pub fn hierarchy(&self) -> &HierarchyConfig {
        &self.top.meta().hierarchy
    }

    pub fn codebook_size(&self) -> usize {
        self.top.meta().codebook_size
    }

    /// Resamples the cells selected by `region`.
    pub fn inpaint(
        &self,
        codes: &CodemapPair,
        region: &RegionSelection,
        labels: ConditioningLabels,
        cfg: &SamplerConfig,
    ) -> Result<CodemapPair> {
        let (top_mask, bottom_mask) = region_to_mask(region, self.hierarchy())?;
        self.inpaint_masks(codes, &top_mask, &bottom_mask, labels, cfg)
    }

    /// Resamples the masked top cells, then the masked bottom cells
    /// conditioned on the updated top codemap.
    pub fn inpaint_masks(
        &self,
        codes: &CodemapPair,
        top_mask: &InpaintMask,
        bottom_mask: &InpaintMask,
        labels: ConditioningLabels,
        cfg: &SamplerConfig,
    ) -> Result<CodemapPair> {
        let hier = *self.hierarchy();
        codes.validate(&hier, self.codebook_size())?;
        ensure!(
            top_mask.shape() == hier.top_shape && bottom_mask.shape() == hier.bottom_shape(),
            InvalidInput,
            "masks {:?} / {:?} do not match codemaps {:?} / {:?}",
            top_mask.shape(),
            bottom_mask.shape(),
            hier.top_shape,
            hier.bottom_shape()
        );
        let start = self.codebook_size();
        let mut rng = SeededRng::new(cfg.seed);
        let top_seq = linearize_top(&codes.top, start);
        let new_top = sample_level(
            self.top,
            &top_seq.tokens,
            &top_mask.linearize_top(),
            None,
            labels,
            cfg,
            &mut rng,
        )?;
        let mut bottom_seq = linearize_bottom(&codes.bottom, &hier, start)?;
        bottom_seq.tokens = sample_level(
            self.bottom,
            &bottom_seq.tokens,
            &bottom_mask.linearize_bottom(&hier)?,
            Some(&new_top),
            labels,
            cfg,
            &mut rng,
        )?;
        let top = delinearize_top(
            &crate::lm::LinearSeq {
                tokens: new_top,
                origin: top_seq.origin,
            },
            hier.top_shape,
        )?;
        Ok(CodemapPair {
            top,
            bottom: delinearize_bottom(&bottom_seq, &hier)?,
        })
    }

    /// Samples both codemaps from START-only context.
    pub fn generate(&self, labels: ConditioningLabels, cfg: &SamplerConfig) -> Result<CodemapPair> {
        let hier = *self.hierarchy();
        let (tf, tt) = hier.top_shape;
        let (bf, bt) = hier.bottom_shape();
        let blank = CodemapPair {
            top: CodeGrid::filled(tf, tt, 0),
            bottom: CodeGrid::filled(bf, bt, 0),
        };
        self.inpaint_masks(&blank, &InpaintMask::full(tf, tt), &InpaintMask::full(bf, bt), labels, cfg)
    }
}
