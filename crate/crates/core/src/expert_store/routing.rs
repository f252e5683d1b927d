use crate::error::{Error, Result};
use crate::scalar::{rank_descending, Scalar};

use super::Placement;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteOutcome {
    pub expert: usize,
    /// The gate's first choice was resident.
    pub hit: bool,
}

/// Sends a token to the best resident expert among the gate's ranked
/// choices; if none is resident, to the resident expert with the highest
/// fallback score.
pub fn route_token<T: Scalar>(
    gate_choice: &[usize],
    placement: &Placement,
    layer: usize,
    fallback_scores: &[T],
) -> Result<RouteOutcome> {
    if let Some((rank, &e)) = gate_choice
        .iter()
        .enumerate()
        .find(|(_, &e)| placement.is_resident(layer, e))
    {
        return Ok(RouteOutcome {
            expert: e,
            hit: rank == 0,
        });
    }
    let resident = placement.resident(layer);
    rank_descending(fallback_scores)
        .into_iter()
        .find(|e| resident.contains(e))
        .or_else(|| resident.iter().next().copied())
        .map(|expert| RouteOutcome { expert, hit: false })
        .ok_or_else(|| Error::Routing {
            layer,
            reason: "no expert resident".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ModelShape;

    #[test]
    fn routes_by_rank_then_fallback() {
        let shape = ModelShape::new(1, 4, 2, 1, 0).unwrap();
        let mut p = Placement::empty(&shape, vec![2]).unwrap();
        p.replace_layer(0, [1, 2].into()).unwrap();
        let scores = [0.1, 0.2, 0.9, 0.0];
        assert_eq!(
            route_token(&[1, 0], &p, 0, &scores).unwrap(),
            RouteOutcome { expert: 1, hit: true }
        );
        assert_eq!(
            route_token(&[0, 2], &p, 0, &scores).unwrap(),
            RouteOutcome { expert: 2, hit: false }
        );
        assert_eq!(
            route_token(&[0, 3], &p, 0, &scores).unwrap(),
            RouteOutcome { expert: 2, hit: false }
        );
        let empty = Placement::empty(&shape, vec![2]).unwrap();
        assert!(route_token(&[0, 3], &empty, 0, &scores).is_err());
    }
}
