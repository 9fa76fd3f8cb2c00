//! Classical selection policies that generate the selection/score corpus.

mod collect;
mod policies;
mod records;
mod rewards;

pub use collect::{
    adaptive_size_range, collect_records, run_session, session_stream, Collection, CollectorKind,
    CollectorSpec, ExplorePolicy, OortConfig, OortPolicy, RandomPolicy, RewardSignal,
    SelectionPolicy, SessionSummary,
};
pub use policies::{
    explore_select, oort_select, oort_utility, random_select, ClientStats, SizeBandit, ValueTable,
};
pub use records::{augment_records, RecordSet, SelectionRecord};
pub use rewards::{
    favor_reward, favor_step, fedmarl_reward, FavorConfig, FedMarlConfig, RewardConfig,
    UtilityShape,
};
