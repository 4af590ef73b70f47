//! Full-scene inference: pyramid, dense evaluation of both heads, proposal extraction
//! and ranking.

mod dense;
mod proposals;
mod pyramid;

pub use dense::{
    dense_apply, dense_grids, level_border, pad_level, patchwise_grids, patchwise_oracle, DenseModel,
    DenseOutput,
};
pub use proposals::{
    cell_center, extract_proposals, load_proposals, mask_to_box, paste_cell, propose, rank_proposals,
    save_proposals, LevelOutput, Proposal, ProposalRecord,
};
pub use pyramid::{
    build_pyramid, default_scales, level_dims, round32, Level, PyramidConfig, ZOOM_SCALE,
};
