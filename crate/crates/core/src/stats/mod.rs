//! Bootstrap accuracies and the significance tests used to compare frontends.

mod anova;
mod bootstrap;
mod pipeline;
mod quadrature;
mod range;
mod shapiro;
mod tukey;

pub use anova::{anova_oneway, f_sf, AnovaResult};
pub use bootstrap::{accuracy, bootstrap_per_dataset, bootstrap_subsets, AccuracySamples};
pub use pipeline::{significance_pipeline, PairTest, Significance, SignificanceMatrix, SignificanceReport, CSV_HEADER};
pub use range::{studentized_range_cdf, studentized_range_ppf, studentized_range_sf};
pub use shapiro::shapiro_wilk;
pub use tukey::{tukey_hsd, TukeyPair, TukeyTable};
