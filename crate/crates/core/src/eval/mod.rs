//! Answer matching, decontamination, run reports and routing analysis.

mod decontam;
mod matchers;
mod normalize;
mod report;
mod routing;

pub use decontam::{decontaminate, DecontamReport, Overlap, DEFAULT_NGRAM};
pub use matchers::{
    diagnosis_match, exact_match, soft_match, soft_match_checked, MatchError, Matcher, MatcherKind, SynonymError,
    SynonymTable, DEFAULT_SYNONYMS,
};
pub use normalize::{is_stopword, normalize, tokens, STOPWORDS};
pub use report::{
    depth_constrained_run, evaluate_run, CategoryStats, DepthRunReport, EpisodeRecord, EvalReport, LatencyBucket,
    LATENCY_EDGES_MS,
};
pub use routing::{oracle_choice, routing_report, Cost, RoutingError, RoutingRecord, StrategyReport, StrategyStats};
