//! Small hand-built MDPs with known answers.

use super::TabularMdp;

/// Hard 30-minute attention budget; control videos last 15 minutes, treated ones 20,
/// and the viewer stops mid-video when the budget runs out.
///
/// States: 0 = nothing watched, 1 = 15 watched, 2 = 20 watched, 3 = gone (absorbing).
pub fn attention_budget_wall() -> TabularMdp {
    let to = |s: usize| {
        let mut row = vec![0.0; 4];
        row[s] = 1.0;
        row
    };
    let p0 = vec![to(1), to(3), to(3), to(3)];
    let p1 = vec![to(2), to(3), to(3), to(3)];
    let r = vec![
        vec![15.0, 20.0],
        vec![15.0, 15.0],
        vec![10.0, 10.0],
        vec![0.0, 0.0],
    ];
    TabularMdp::new(vec![p0, p1], r, vec![1.0, 0.0, 0.0, 0.0], Some(vec![3]))
        .expect("hand-built instance is valid")
}

/// Exactly three videos per session whatever is shown; control videos are watched
/// for 15 minutes and treated ones for 20.
pub fn fixed_session_length() -> TabularMdp {
    let to = |s: usize| {
        let mut row = vec![0.0; 4];
        row[s] = 1.0;
        row
    };
    let p = vec![to(1), to(2), to(3), to(3)];
    let r = vec![
        vec![15.0, 20.0],
        vec![15.0, 20.0],
        vec![15.0, 20.0],
        vec![0.0, 0.0],
    ];
    TabularMdp::new(vec![p.clone(), p], r, vec![1.0, 0.0, 0.0, 0.0], Some(vec![3]))
        .expect("hand-built instance is valid")
}
