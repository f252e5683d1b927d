use crate::error::{invalid, Result};
use crate::scalar::{rank_descending, Scalar};

use super::Placement;

/// The `budgets[l]` experts with the largest expected load at each layer,
/// best first; ties go to the lower index.
pub fn select_experts<T: Scalar>(aggregate: &[Vec<T>], budgets: &[usize]) -> Result<Vec<Vec<usize>>> {
    if aggregate.len() != budgets.len() {
        return Err(invalid("budgets", "one budget per MoE layer required"));
    }
    aggregate
        .iter()
        .zip(budgets)
        .enumerate()
        .map(|(l, (scores, &budget))| {
            if budget > scores.len() {
                return Err(invalid(format!("budgets[{l}]"), "exceeds experts per layer"));
            }
            Ok(rank_descending(scores).into_iter().take(budget).collect())
        })
        .collect()
}

/// Task-aware targets that never transfer more than task-agnostic selection.
///
/// Per layer, experts are ranked by the sensitivity-masked load `aware`
/// (ties: resident first, then lower index). The target keeps the
/// best-ranked experts but admits at most as many non-resident experts as
/// the task-agnostic target built from `agnostic` would load. A layer with no
/// sensitive demand keeps its residents (best `agnostic` first).
pub fn select_task_aware<T: Scalar>(
    aware: &[Vec<T>],
    agnostic: &[Vec<T>],
    current: &Placement,
    budgets: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let baseline = select_experts(agnostic, budgets)?;
    if aware.len() != budgets.len() {
        return Err(invalid("aware", "one row per MoE layer required"));
    }
    let mut targets = Vec::with_capacity(budgets.len());
    for (l, &budget) in budgets.iter().enumerate() {
        let resident = current.resident(l);
        let load_cap = baseline[l].iter().filter(|e| !resident.contains(e)).count();
        let scores = &aware[l];
        let no_demand = scores.iter().all(|v| *v == T::zero());
        let ranked: Vec<usize> = if no_demand {
            rank_descending(&agnostic[l])
        } else {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(resident.contains(&b).cmp(&resident.contains(&a)))
                    .then(a.cmp(&b))
            });
            idx
        };
        let cap = if no_demand { 0 } else { load_cap };
        let mut target = Vec::with_capacity(budget);
        let mut loads = 0;
        for e in ranked {
            if target.len() == budget {
                break;
            }
            if resident.contains(&e) {
                target.push(e);
            } else if loads < cap {
                target.push(e);
                loads += 1;
            }
        }
        targets.push(target);
    }
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ModelShape;

    #[test]
    fn picks_top_budget_with_index_ties() {
        let agg = vec![vec![10.0, 40.0, 40.0, 5.0]];
        assert_eq!(select_experts(&agg, &[2]).unwrap(), vec![vec![1, 2]]);
        assert_eq!(select_experts(&[vec![0.0; 4]], &[2]).unwrap(), vec![vec![0, 1]]);
        assert_eq!(select_experts(&agg, &[4]).unwrap()[0].len(), 4);
        assert!(select_experts(&agg, &[5]).is_err());
    }

    #[test]
    fn task_aware_keeps_residents_on_quiet_layer() {
        let shape = ModelShape::new(1, 4, 1, 1, 0).unwrap();
        let mut current = Placement::full(&shape);
        current.set_budgets(vec![2]).unwrap();
        current.replace_layer(0, [0, 1].into()).unwrap();
        let aware = vec![vec![0.0; 4]];
        let agnostic = vec![vec![0.0, 0.0, 5.0, 9.0]];
        let t = select_task_aware(&aware, &agnostic, &current, &[2]).unwrap();
        assert_eq!(t, vec![vec![0, 1]]);
    }

    #[test]
    fn task_aware_caps_loads() {
        let shape = ModelShape::new(1, 4, 1, 1, 0).unwrap();
        let mut current = Placement::full(&shape);
        current.set_budgets(vec![2]).unwrap();
        current.replace_layer(0, [0, 1].into()).unwrap();
        // agnostic prefers the residents, aware prefers the others
        let agnostic = vec![vec![9.0, 8.0, 1.0, 1.0]];
        let aware = vec![vec![0.0, 0.0, 3.0, 2.0]];
        let t = select_task_aware(&aware, &agnostic, &current, &[2]).unwrap();
        assert_eq!(t, vec![vec![0, 1]]);
        // one agnostic load available: spend it on the best aware expert
        let agnostic = vec![vec![9.0, 0.0, 1.0, 1.0]];
        let t = select_task_aware(&aware, &agnostic, &current, &[2]).unwrap();
        assert_eq!(t, vec![vec![2, 0]]);
    }
}
