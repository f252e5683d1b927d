//! Device placement of experts: how many tokens each expert is expected to
//! serve, which experts fit the memory budget, how to get there, and where a
//! token goes when its preferred expert is not resident.

mod expected;
mod placement;
mod plan;
mod routing;
mod selection;

pub use expected::{expected_tokens, ExpectedTokens3D, SensitivityMask};
pub use placement::{budgets_from_fraction, write_snapshots, Placement, PlacementSnapshot};
pub use plan::{plan_loading, LayerPlan, LoadingPlan, TransferOp};
pub use routing::{route_token, RouteOutcome};
pub use selection::{select_experts, select_task_aware};
