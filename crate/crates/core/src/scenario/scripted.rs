use std::collections::BTreeMap;

use super::{
    chebyshev, quadrant_of, FactoredAction, GroupId, Scenario, ScenarioKind, Side, XQuadrant,
    YQuadrant,
};

fn quadrant_action(pos: (usize, usize), size: usize) -> FactoredAction {
    FactoredAction::attack(
        XQuadrant::ALL[quadrant_of(pos.0, size)],
        YQuadrant::ALL[quadrant_of(pos.1, size)],
    )
}

/// Scripted RedForce.
///
/// tigerclaw: engage the nearest Blue unit once it is within 1.5x the group's
/// range, otherwise hold (NO_OP) when every unit sits in its post's quadrant,
/// otherwise move back toward the post quadrant.
///
/// ntc: always head for the quadrant holding the Blue unit nearest to the
/// group's centroid.
pub(super) fn red_actions(sc: &Scenario) -> BTreeMap<GroupId, FactoredAction> {
    let size = sc.config.map_size;
    let units = sc.units();
    let blue: Vec<(usize, (usize, usize))> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.group.side == Side::Blue && u.alive())
        .map(|(i, u)| (i, u.pos))
        .collect();
    let mut out = BTreeMap::new();
    for g in sc.living_groups(Side::Red) {
        let members: Vec<(usize, usize)> = units
            .iter()
            .filter(|u| u.group == g && u.alive())
            .map(|u| u.pos)
            .collect();
        let action = match sc.config.name {
            ScenarioKind::Tigerclaw => {
                let range = sc.config.red_units[g.index].range as f64;
                let nearest = blue
                    .iter()
                    .map(|&(i, bp)| {
                        let d = members.iter().map(|&m| chebyshev(m, bp)).min().unwrap();
                        (d, i, bp)
                    })
                    .min();
                let post = sc.red_posts[g.index];
                let post_q = (quadrant_of(post.0, size), quadrant_of(post.1, size));
                match nearest {
                    Some((d, _, bp)) if d as f64 <= 1.5 * range => quadrant_action(bp, size),
                    _ if members
                        .iter()
                        .all(|m| (quadrant_of(m.0, size), quadrant_of(m.1, size)) == post_q) =>
                    {
                        FactoredAction::NO_OP
                    }
                    _ => quadrant_action(post, size),
                }
            }
            ScenarioKind::Ntc => {
                let n = members.len() as f64;
                let cx = members.iter().map(|m| m.0 as f64).sum::<f64>() / n;
                let cy = members.iter().map(|m| m.1 as f64).sum::<f64>() / n;
                let nearest = blue
                    .iter()
                    .map(|&(i, bp)| {
                        let d = (bp.0 as f64 - cx).abs().max((bp.1 as f64 - cy).abs());
                        (d, i, bp)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                match nearest {
                    Some((_, _, bp)) => quadrant_action(bp, size),
                    None => FactoredAction::NO_OP,
                }
            }
        };
        out.insert(g, action);
    }
    out
}
