//! The four-block experiment schedule for one training-direction group.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{direction_key, key_to_deg, STANDARD_DIRECTIONS};
use crate::controllers::ControllerSpec;
use crate::error::ProtocolError;
use crate::trial::{SimSettings, TrialKind, TrialSpec};

pub const BASELINE_TRIALS_PER_TARGET: usize = 26;
pub const BASELINE_CLAMPS_PER_TARGET: usize = 3;
pub const ADAPT_BLOCK_TRIALS: usize = 65;
pub const ADAPT_FIELD_NO_FEEDBACK: usize = 15;
pub const ADAPT_CLAMPS: usize = 5;
pub const TEST_BLOCK_TRIALS: usize = 210;
pub const TEST_CLAMPS_PER_TARGET: usize = 15;
pub const TRAIN_FIELD_FEEDBACK: usize = 53;
pub const TRAIN_FIELD_NO_FEEDBACK: usize = 26;
pub const TRAIN_CLAMPS: usize = 26;
pub const TOTAL_TRIALS: usize = 8 * BASELINE_TRIALS_PER_TARGET + 2 * ADAPT_BLOCK_TRIALS + TEST_BLOCK_TRIALS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTrial {
    pub index: usize,
    /// Block number, 1 to 4.
    pub block: u8,
    pub target_deg: f64,
    pub kind: TrialKind,
    /// Whether the hand cursor was visible.
    pub feedback: bool,
}

impl ScheduledTrial {
    /// Environment name: `null`, `curl` or `clamp`.
    pub fn field_name(&self) -> &'static str {
        match self.kind {
            TrialKind::BaselineNull => "null",
            TrialKind::AdaptField | TrialKind::TrainField => "curl",
            _ => "clamp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub group_deg: f64,
    pub seed: u64,
    pub trials: Vec<ScheduledTrial>,
}

impl Protocol {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn block(&self, block: u8) -> impl Iterator<Item = &ScheduledTrial> {
        self.trials.iter().filter(move |t| t.block == block)
    }

    /// Trial specs for simulation. `controller` picks the controller of
    /// each scheduled trial (it typically depends on the block).
    pub fn specs<F>(&self, settings: &SimSettings, mut controller: F) -> Vec<TrialSpec>
    where
        F: FnMut(&ScheduledTrial) -> ControllerSpec,
    {
        self.trials
            .iter()
            .map(|t| {
                let mut spec = settings.trial(t.index, self.group_deg, t.target_deg, t.kind, controller(t));
                spec.feedback = t.feedback;
                spec
            })
            .collect()
    }
}

fn is_standard_direction(deg: f64) -> bool {
    STANDARD_DIRECTIONS.contains(&deg)
}

/// Builds the schedule for the group trained toward `group_deg`.
pub fn build_protocol(group_deg: f64, seed: u64) -> Result<Protocol, ProtocolError> {
    if !is_standard_direction(group_deg) {
        return Err(ProtocolError::InvalidDirection(group_deg));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(u8, f64, TrialKind, bool)> = Vec::with_capacity(TOTAL_TRIALS);

    // Block 1: null-field reaches with feedback plus no-feedback clamps.
    let mut block1 = Vec::with_capacity(8 * BASELINE_TRIALS_PER_TARGET);
    for dir in STANDARD_DIRECTIONS {
        for i in 0..BASELINE_TRIALS_PER_TARGET {
            if i < BASELINE_CLAMPS_PER_TARGET {
                block1.push((1, dir, TrialKind::BaselineClamp, false));
            } else {
                block1.push((1, dir, TrialKind::BaselineNull, true));
            }
        }
    }
    block1.shuffle(&mut rng);
    out.extend(block1);

    // Blocks 2 and 3: field trials and clamps to the training target.
    for block in [2u8, 3] {
        let field_fb = ADAPT_BLOCK_TRIALS - ADAPT_FIELD_NO_FEEDBACK - ADAPT_CLAMPS;
        let mut b: Vec<_> = std::iter::repeat_n((block, group_deg, TrialKind::AdaptField, true), field_fb)
            .chain(std::iter::repeat_n((block, group_deg, TrialKind::AdaptField, false), ADAPT_FIELD_NO_FEEDBACK))
            .chain(std::iter::repeat_n((block, group_deg, TrialKind::AdaptClamp, false), ADAPT_CLAMPS))
            .collect();
        b.shuffle(&mut rng);
        out.extend(b);
    }

    // Block 4: training-target trials in odd positions, test clamps between.
    let mut train: Vec<_> = std::iter::repeat_n((TrialKind::TrainField, true), TRAIN_FIELD_FEEDBACK)
        .chain(std::iter::repeat_n((TrialKind::TrainField, false), TRAIN_FIELD_NO_FEEDBACK))
        .chain(std::iter::repeat_n((TrialKind::TrainClamp, false), TRAIN_CLAMPS))
        .collect();
    train.shuffle(&mut rng);
    let tests: Vec<f64> = STANDARD_DIRECTIONS.iter().copied().filter(|d| *d != group_deg).collect();
    let test_order = no_repeat_sequence(&tests, TEST_CLAMPS_PER_TARGET, &mut rng);
    for (i, (kind, fb)) in train.into_iter().enumerate() {
        out.push((4, group_deg, kind, fb));
        out.push((4, test_order[i], TrialKind::TestClamp, false));
    }

    let trials = out
        .into_iter()
        .enumerate()
        .map(|(index, (block, target_deg, kind, feedback))| ScheduledTrial {
            index,
            block,
            target_deg,
            kind,
            feedback,
        })
        .collect();
    Ok(Protocol {
        group_deg,
        seed,
        trials,
    })
}

/// Random order of `per_item` copies of each item with no two equal
/// neighbours. An item is forced whenever its remaining count would
/// otherwise become impossible to separate.
fn no_repeat_sequence(items: &[f64], per_item: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut left = vec![per_item; items.len()];
    let mut seq = Vec::with_capacity(items.len() * per_item);
    let mut prev: Option<usize> = None;
    for _ in 0..items.len() * per_item {
        let remaining: usize = left.iter().sum();
        let forced = (0..items.len()).find(|&i| Some(i) != prev && 2 * left[i] > remaining);
        let pick = match forced {
            Some(i) => i,
            None => {
                let allowed: Vec<usize> = (0..items.len()).filter(|&i| Some(i) != prev && left[i] > 0).collect();
                let total: usize = allowed.iter().map(|&i| left[i]).sum();
                let mut r = rng.gen_range(0..total);
                let mut chosen = allowed[0];
                for &i in &allowed {
                    if r < left[i] {
                        chosen = i;
                        break;
                    }
                    r -= left[i];
                }
                chosen
            }
        };
        left[pick] -= 1;
        seq.push(items[pick]);
        prev = Some(pick);
    }
    seq
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

type Composition = BTreeMap<(i64, TrialKind, bool), usize>;

fn composition<'a>(trials: impl Iterator<Item = &'a ScheduledTrial>) -> Composition {
    let mut c = Composition::new();
    for t in trials {
        *c.entry((direction_key(t.target_deg), t.kind, t.feedback)).or_default() += 1;
    }
    c
}

fn expected_composition(group_deg: f64, block: u8) -> Composition {
    let mut c = Composition::new();
    let g = direction_key(group_deg);
    match block {
        1 => {
            for d in STANDARD_DIRECTIONS {
                let k = direction_key(d);
                c.insert((k, TrialKind::BaselineNull, true), BASELINE_TRIALS_PER_TARGET - BASELINE_CLAMPS_PER_TARGET);
                c.insert((k, TrialKind::BaselineClamp, false), BASELINE_CLAMPS_PER_TARGET);
            }
        }
        2 | 3 => {
            c.insert(
                (g, TrialKind::AdaptField, true),
                ADAPT_BLOCK_TRIALS - ADAPT_FIELD_NO_FEEDBACK - ADAPT_CLAMPS,
            );
            c.insert((g, TrialKind::AdaptField, false), ADAPT_FIELD_NO_FEEDBACK);
            c.insert((g, TrialKind::AdaptClamp, false), ADAPT_CLAMPS);
        }
        _ => {
            c.insert((g, TrialKind::TrainField, true), TRAIN_FIELD_FEEDBACK);
            c.insert((g, TrialKind::TrainField, false), TRAIN_FIELD_NO_FEEDBACK);
            c.insert((g, TrialKind::TrainClamp, false), TRAIN_CLAMPS);
            for d in STANDARD_DIRECTIONS.iter().filter(|d| direction_key(**d) != g) {
                c.insert((direction_key(*d), TrialKind::TestClamp, false), TEST_CLAMPS_PER_TARGET);
            }
        }
    }
    c
}

fn describe(cell: &(i64, TrialKind, bool)) -> String {
    format!(
        "{} to {} deg ({})",
        cell.1.name(),
        key_to_deg(cell.0),
        if cell.2 { "feedback" } else { "no feedback" }
    )
}

/// Checks a schedule against the experiment's composition and ordering
/// rules. Each block with a wrong composition yields a single violation
/// that lists every mismatched cell.
pub fn audit_protocol(p: &Protocol) -> AuditReport {
    let mut violations = Vec::new();
    if !is_standard_direction(p.group_deg) {
        violations.push(format!("group direction {} deg is not a standard direction", p.group_deg));
        return AuditReport { violations };
    }
    if let Some(t) = p.trials.iter().find(|t| !(1..=4).contains(&t.block)) {
        violations.push(format!("trial {} has invalid block {}", t.index, t.block));
    }
    if p.trials.windows(2).any(|w| w[1].block < w[0].block) {
        violations.push("blocks are out of order".into());
    }
    for block in 1..=4u8 {
        let got = composition(p.block(block));
        let want = expected_composition(p.group_deg, block);
        if got != want {
            let mut diffs = Vec::new();
            for cell in want.keys().chain(got.keys().filter(|k| !want.contains_key(*k))) {
                let (w, g) = (want.get(cell).copied().unwrap_or(0), got.get(cell).copied().unwrap_or(0));
                if w != g {
                    diffs.push(format!("{}: {} (expected {})", describe(cell), g, w));
                }
            }
            violations.push(format!("block {block} composition: {}", diffs.join("; ")));
        }
    }

    let block4: Vec<&ScheduledTrial> = p.block(4).collect();
    let g = direction_key(p.group_deg);
    for (pos, t) in block4.iter().enumerate() {
        // Positions are 1-based: odd positions hold the training target.
        let on_train = direction_key(t.target_deg) == g;
        if (pos % 2 == 0) != on_train {
            violations.push(format!(
                "block 4 position {} (trial {}) breaks train/test alternation",
                pos + 1,
                t.index
            ));
            break;
        }
    }
    let tests: Vec<f64> = block4
        .iter()
        .filter(|t| t.kind == TrialKind::TestClamp)
        .map(|t| t.target_deg)
        .collect();
    if let Some(w) = tests.windows(2).find(|w| direction_key(w[0]) == direction_key(w[1])) {
        violations.push(format!("block 4 repeats test target {} deg consecutively", w[0]));
    }
    if let Some(t) = p.trials.iter().find(|t| t.kind.is_clamp() && t.feedback) {
        violations.push(format!("clamp trial {} shows feedback", t.index));
    }
    AuditReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_the_experiment() {
        let p = build_protocol(45.0, 7).unwrap();
        assert_eq!(p.len(), 548);
        assert_eq!(p.block(1).count(), 208);
        assert_eq!(p.block(2).count(), 65);
        assert_eq!(p.block(3).count(), 65);
        assert_eq!(p.block(4).count(), 210);
        assert_eq!(p.block(2).filter(|t| t.kind == TrialKind::AdaptClamp).count(), 5);
        assert!(audit_protocol(&p).is_clean(), "{:?}", audit_protocol(&p));
    }

    #[test]
    fn block_four_alternates() {
        let p = build_protocol(270.0, 1).unwrap();
        for (i, t) in p.block(4).enumerate() {
            assert_eq!(i % 2 == 0, t.target_deg == 270.0);
        }
    }

    #[test]
    fn seeds_change_order_not_composition() {
        let a = build_protocol(0.0, 1).unwrap();
        let b = build_protocol(0.0, 2).unwrap();
        assert_ne!(a.trials, b.trials);
        for block in 1..=4 {
            assert_eq!(composition(a.block(block)), composition(b.block(block)));
        }
        assert_eq!(build_protocol(0.0, 1).unwrap(), a);
    }

    #[test]
    fn deleting_a_clamp_is_one_violation() {
        let mut p = build_protocol(90.0, 3).unwrap();
        let pos = p
            .trials
            .iter()
            .position(|t| t.kind == TrialKind::AdaptClamp)
            .unwrap();
        p.trials.remove(pos);
        let report = audit_protocol(&p);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert!(report.violations[0].contains("adapt-clamp"));
    }

    #[test]
    fn invalid_group_rejected() {
        assert_eq!(build_protocol(30.0, 0), Err(ProtocolError::InvalidDirection(30.0)));
    }
}
