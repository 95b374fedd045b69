//! Comparison posteriors: full-likelihood adaptive Metropolis–Hastings,
//! empirical likelihood and dense-grid posteriors for the toy model.

mod el;
mod grid;
mod mh;
mod prior;

pub use el::{el_wstat, el_wstat_units, zero_in_hull_interior};
pub use grid::{
    grid_posterior, grid_posterior_auto, GridKind, GridPosterior, GridSpec, Marginal, DEFAULT_GRID_POINTS,
    DEFAULT_GRID_WIDTH,
};
pub use mh::{full_mh, MhConfig};
pub use prior::{PriorComponent, PriorSpec};
