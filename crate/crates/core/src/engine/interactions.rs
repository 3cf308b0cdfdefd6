use std::collections::BTreeSet;

use crate::variables::VariableId;

/// Interactions generated by an active set: every `v` not in `active` with
/// `2 ≤ |v| ≤ max_order` whose nonempty proper subsets all lie in `active`.
/// Sorted by (order, members).
pub fn generate_interactions<'a>(
    active: impl IntoIterator<Item = &'a VariableId>,
    max_order: usize,
) -> Vec<VariableId> {
    let active: BTreeSet<&VariableId> = active.into_iter().collect();
    let mains: Vec<usize> = active
        .iter()
        .filter(|v| v.is_main())
        .map(|v| v.members()[0])
        .collect();
    let mut out = BTreeSet::new();
    // Any qualifying v is its largest member appended to v minus that
    // member, and the latter is itself in `active`.
    for u in &active {
        if u.order() + 1 > max_order {
            continue;
        }
        for &j in mains.iter().filter(|&&j| j > u.max_member()) {
            let mut members = u.members().to_vec();
            members.push(j);
            let v = VariableId::new(members).expect("sorted distinct members");
            if active.contains(&v) {
                continue;
            }
            if v.proper_subsets().iter().all(|s| active.contains(s)) {
                out.insert(v);
            }
        }
    }
    out.into_iter().collect()
}
