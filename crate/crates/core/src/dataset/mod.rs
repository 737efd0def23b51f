//! Ingestion: raw responses → postprocessed records → crossed dataset.

mod crossed;
mod norm;
mod parse;
mod records;

pub use crossed::{
    build_dataset, format_value, read_cell_means, sidecar_path, write_cell_means, CellMean, CrossedDataset,
    DatasetMeta, ExclusionReport, Observation,
};
pub use norm::{
    builtin_spec, builtin_specs, format_rational, load_spec_dir, parse_decimal, parse_rational, rational_to_f64,
    NormSpec, NormSpecBuilder, Rational, Transform, ANALYSIS_NORMS,
};
pub use parse::{leading_number, parse_response, ParseOutcome, RefusalPatterns};
pub use records::{
    cap_repetitions, combine_valence, combine_valence_records, postprocess, read_raw_csv, write_raw_csv, DecodeMode,
    Flag, Flags, RatingRecord, RawResponse, MAX_STOCHASTIC_REPETITIONS,
};
