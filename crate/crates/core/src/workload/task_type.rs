use super::{TaskId, TaskProfile};

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

fn keyword_hits(lower: &str, keyword: &str) -> usize {
    if keyword.chars().all(char::is_alphanumeric) {
        words(lower).filter(|w| *w == keyword).count()
    } else {
        lower.matches(keyword).count()
    }
}

/// Assigns a task type by counting keyword occurrences in the prompt.
///
/// The profile with the most case-insensitive keyword hits wins; ties go to
/// the lexicographically smallest task id and a prompt with no hits at all
/// maps to `default_task`.
pub fn extract_task_type(prompt_text: &str, profiles: &[TaskProfile], default_task: &TaskId) -> TaskId {
    let lower = prompt_text.to_lowercase();
    let mut best: Option<(usize, &TaskId)> = None;
    for profile in profiles {
        let hits: usize = profile.keywords.iter().map(|k| keyword_hits(&lower, k)).sum();
        if hits == 0 {
            continue;
        }
        best = match best {
            Some((h, id)) if h > hits || (h == hits && id <= &profile.task_id) => Some((h, id)),
            _ => Some((hits, &profile.task_id)),
        };
    }
    best.map(|(_, id)| id.clone()).unwrap_or_else(|| default_task.clone())
}
