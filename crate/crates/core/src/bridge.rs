//! Intent bridge: pulls the `<INTENT>name</INTENT>` span out of an answer,
//! maps it onto the taxonomy, and checks it against the rule-derived
//! meta-action.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{self, Thresholds};
use crate::types::{intent_name_to_index, ClipRecord, IntentClass, Lateral, Longitudinal, MetaAction};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub intent: IntentClass,
    /// False when the fallback class was substituted.
    pub parsed_ok: bool,
    pub raw_span: Option<String>,
}

fn span_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<INTENT>(.*?)</INTENT>").unwrap())
}

/// Total: never fails, missing or unknown spans yield `fallback`.
pub fn parse_intent(answer: &str, fallback: IntentClass) -> ParseOutcome {
    let raw_span = span_regex()
        .captures_iter(answer)
        .last()
        .map(|c| c[1].to_string());
    let parsed = raw_span
        .as_deref()
        .and_then(|s| intent_name_to_index(s).ok());
    match parsed {
        Some(intent) => ParseOutcome {
            intent,
            parsed_ok: true,
            raw_span,
        },
        None => ParseOutcome {
            intent: fallback,
            parsed_ok: false,
            raw_span,
        },
    }
}

/// Allowed meta-actions for one intent: a set of longitudinal labels crossed
/// with a set of lateral labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllowedMeta {
    pub longitudinal: Vec<Longitudinal>,
    pub lateral: Vec<Lateral>,
}

impl AllowedMeta {
    fn new(lon: &[Longitudinal], lat: &[Lateral]) -> Self {
        Self {
            longitudinal: lon.to_vec(),
            lateral: lat.to_vec(),
        }
    }

    pub fn allows(&self, meta: &MetaAction) -> bool {
        self.longitudinal.contains(&meta.longitudinal) && self.lateral.contains(&meta.lateral)
    }
}

/// Intent to meta-action compatibility, one entry per driving class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityTable {
    pub entries: Vec<AllowedMeta>,
}

impl Default for CompatibilityTable {
    fn default() -> Self {
        use Lateral as La;
        use Longitudinal as Lo;
        let any_lon = &Lo::ALL[..];
        let any_lat = &La::ALL[..];
        let not_reverse = [
            Lo::Stop,
            Lo::Stopping,
            Lo::Starting,
            Lo::Accelerate,
            Lo::Decelerate,
            Lo::MaintainSpeed,
        ];
        let steady = AllowedMeta::new(
            &[Lo::MaintainSpeed, Lo::Accelerate, Lo::Decelerate],
            &[La::Maintain, La::NudgeLeft, La::NudgeRight],
        );
        let entries = IntentClass::all()
            .map(|k| match k {
                IntentClass::CRUISING | IntentClass::LANE_KEEPING | IntentClass::FOLLOWING => {
                    steady.clone()
                }
                IntentClass::LANE_CHANGE_LEFT => {
                    AllowedMeta::new(any_lon, &[La::NudgeLeft, La::SteerLeft])
                }
                IntentClass::LANE_CHANGE_RIGHT => {
                    AllowedMeta::new(any_lon, &[La::NudgeRight, La::SteerRight])
                }
                IntentClass::TURNING_LEFT => AllowedMeta::new(any_lon, &[La::SteerLeft]),
                IntentClass::TURNING_RIGHT => AllowedMeta::new(any_lon, &[La::SteerRight]),
                IntentClass::U_TURN => AllowedMeta::new(any_lon, &[La::SteerLeft, La::SteerRight]),
                IntentClass::STOPPING => AllowedMeta::new(&[Lo::Stopping, Lo::Stop], any_lat),
                IntentClass::BRAKING | IntentClass::DECELERATING => {
                    AllowedMeta::new(&[Lo::Decelerate, Lo::Stopping, Lo::Stop], any_lat)
                }
                IntentClass::ACCELERATING | IntentClass::STARTING => {
                    AllowedMeta::new(&[Lo::Accelerate, Lo::Starting], any_lat)
                }
                IntentClass::WAITING => AllowedMeta::new(&[Lo::Stop], any_lat),
                IntentClass::REVERSING => AllowedMeta::new(&[Lo::Reverse], any_lat),
                IntentClass::PARKING => {
                    AllowedMeta::new(&[Lo::Stopping, Lo::Stop, Lo::Decelerate], any_lat)
                }
                _ => AllowedMeta::new(&not_reverse, any_lat),
            })
            .collect();
        Self { entries }
    }
}

impl CompatibilityTable {
    pub fn allowed(&self, intent: IntentClass) -> Result<&AllowedMeta> {
        if intent.is_uncond() {
            return Err(Error::InvalidIntent);
        }
        self.entries
            .get(intent.index())
            .ok_or(Error::IndexOutOfRange(intent.index()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Consistency {
    Consistent,
    Inconsistent,
}

pub fn consistency_check(
    table: &CompatibilityTable,
    intent: IntentClass,
    meta: &MetaAction,
) -> Result<Consistency> {
    Ok(if table.allowed(intent)?.allows(meta) {
        Consistency::Consistent
    } else {
        Consistency::Inconsistent
    })
}

/// Kinematically safe intent for a meta-action, used when the annotator's
/// intent is rejected.
pub fn rule_derived_intent(meta: &MetaAction) -> IntentClass {
    use Lateral as La;
    use Longitudinal as Lo;
    match (meta.longitudinal, meta.lateral) {
        (Lo::Stop, _) => IntentClass::WAITING,
        (Lo::Stopping, _) => IntentClass::STOPPING,
        (Lo::Starting, _) => IntentClass::STARTING,
        (Lo::Accelerate, _) => IntentClass::ACCELERATING,
        (Lo::Decelerate, _) => IntentClass::DECELERATING,
        (Lo::Reverse, _) => IntentClass::REVERSING,
        (Lo::MaintainSpeed, La::SteerLeft) => IntentClass::TURNING_LEFT,
        (Lo::MaintainSpeed, La::SteerRight) => IntentClass::TURNING_RIGHT,
        (Lo::MaintainSpeed, La::NudgeLeft) => IntentClass::LANE_CHANGE_LEFT,
        (Lo::MaintainSpeed, La::NudgeRight) => IntentClass::LANE_CHANGE_RIGHT,
        _ => IntentClass::LANE_KEEPING,
    }
}

/// Per-record provenance emitted by `validate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub parsed_ok: bool,
    pub relabeled: bool,
}

/// Settings of the bridge stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    pub fallback: IntentClass,
    pub table: CompatibilityTable,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            fallback: IntentClass::LANE_KEEPING,
            table: CompatibilityTable::default(),
        }
    }
}

/// Parses the record's answer and replaces an intent that contradicts its
/// meta-action with the rule-derived class.
pub fn relabel_if_inconsistent(
    record: &ClipRecord,
    cfg: &BridgeConfig,
) -> Result<(ClipRecord, Provenance)> {
    let meta = record.meta_action.ok_or(Error::MissingMetaAction)?;
    let outcome = parse_intent(&record.intent_text, cfg.fallback);
    let consistent = consistency_check(&cfg.table, outcome.intent, &meta)? == Consistency::Consistent;
    let (intent, relabeled) = if consistent {
        (outcome.intent, false)
    } else {
        (rule_derived_intent(&meta), true)
    };
    let mut out = record.clone();
    out.intent = Some(intent);
    Ok((
        out,
        Provenance {
            parsed_ok: outcome.parsed_ok && !relabeled,
            relabeled,
        },
    ))
}

/// Fills `meta_action` from the record's future window.
pub fn fill_meta_action(record: &ClipRecord, th: &Thresholds) -> Result<ClipRecord> {
    let mut out = record.clone();
    out.meta_action = Some(labeler::label(&record.future_window, th)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{KinematicWindow, Trajectory};
    use Lateral as La;
    use Longitudinal as Lo;

    #[test]
    fn parse_examples() {
        let fb = IntentClass::LANE_KEEPING;
        let o = parse_intent("Perceive ... Plan: turn. <INTENT>turning_left</INTENT>", fb);
        assert_eq!((o.intent.index(), o.parsed_ok), (5, true));
        let o = parse_intent("no span here", fb);
        assert_eq!((o.intent, o.parsed_ok, o.raw_span), (fb, false, None));
        let o = parse_intent("<INTENT>WARP_DRIVE</INTENT>", fb);
        assert_eq!((o.intent, o.parsed_ok), (fb, false));
        assert_eq!(o.raw_span.as_deref(), Some("WARP_DRIVE"));
    }

    #[test]
    fn parse_takes_last_span_and_normalizes() {
        let o = parse_intent(
            "<INTENT>cruising</INTENT> revised: <INTENT> Turning_Right </INTENT>",
            IntentClass::LANE_KEEPING,
        );
        assert_eq!(o.intent, IntentClass::TURNING_RIGHT);
        assert!(o.parsed_ok);
    }

    #[test]
    fn consistency_examples() {
        let t = CompatibilityTable::default();
        let c = |k, lon, lat| consistency_check(&t, k, &MetaAction::new(lon, lat)).unwrap();
        assert_eq!(
            c(IntentClass::TURNING_LEFT, Lo::MaintainSpeed, La::SteerLeft),
            Consistency::Consistent
        );
        assert_eq!(
            c(IntentClass::TURNING_LEFT, Lo::MaintainSpeed, La::SteerRight),
            Consistency::Inconsistent
        );
        assert_eq!(c(IntentClass::STOPPING, Lo::Stopping, La::Maintain), Consistency::Consistent);
        assert!(matches!(
            consistency_check(&t, IntentClass::UNCOND, &MetaAction::new(Lo::Stop, La::Maintain)),
            Err(Error::InvalidIntent)
        ));
    }

    /// Meta-actions the labeler can emit: reverse laterals only under reverse.
    fn reachable() -> Vec<MetaAction> {
        let mut out = vec![];
        for lon in Lo::ALL {
            for lat in La::ALL {
                let rev_lat = matches!(lat, La::ReverseLeft | La::ReverseRight);
                let ok = if lon == Lo::Reverse {
                    rev_lat || lat == La::Maintain
                } else {
                    !rev_lat
                };
                if ok {
                    out.push(MetaAction::new(lon, lat));
                }
            }
        }
        out
    }

    #[test]
    fn rule_derived_intent_is_always_consistent() {
        let t = CompatibilityTable::default();
        {
            for meta in reachable() {
                let k = rule_derived_intent(&meta);
                assert_eq!(
                    consistency_check(&t, k, &meta).unwrap(),
                    Consistency::Consistent,
                    "{meta:?} -> {k}"
                );
            }
        }
    }

    fn record(text: &str, meta: MetaAction) -> ClipRecord {
        ClipRecord {
            sequence_id: "s".into(),
            clip_index: 1,
            past_state: vec![[0.0; 4]; 16],
            future_window: KinematicWindow::new(vec![0.0; 2], vec![0.0; 2], vec![[0.0; 2]; 2], 0.25)
                .unwrap(),
            meta_action: Some(meta),
            intent_text: text.into(),
            intent: None,
            trajectory: Trajectory::new(vec![[0.0; 2]; 20], 4.0).unwrap(),
            is_pseudo_labeled: false,
            scene_features: vec![],
            admissible_intents: vec![],
        }
    }

    #[test]
    fn relabel_examples() {
        let cfg = BridgeConfig::default();
        let straight = MetaAction::new(Lo::MaintainSpeed, La::Maintain);
        let (r, p) = relabel_if_inconsistent(&record("<INTENT>turning_left</INTENT>", straight), &cfg).unwrap();
        assert_eq!(r.intent, Some(IntentClass::LANE_KEEPING));
        assert!(p.relabeled && !p.parsed_ok);

        let stop = MetaAction::new(Lo::Stopping, La::Maintain);
        let (r, p) = relabel_if_inconsistent(&record("<INTENT>stopping</INTENT>", stop), &cfg).unwrap();
        assert_eq!(r.intent, Some(IntentClass::STOPPING));
        assert!(p.parsed_ok && !p.relabeled);

        // Unparsable text: fallback lane_keeping contradicts stopping, so relabel.
        let (r, p) = relabel_if_inconsistent(&record("garbled", stop), &cfg).unwrap();
        assert_eq!(r.intent, Some(IntentClass::STOPPING));
        assert!(p.relabeled);
    }

    #[test]
    fn relabel_requires_meta() {
        let mut r = record("", MetaAction::new(Lo::Stop, La::Maintain));
        r.meta_action = None;
        assert!(matches!(
            relabel_if_inconsistent(&r, &BridgeConfig::default()),
            Err(Error::MissingMetaAction)
        ));
    }

    #[test]
    fn relabel_is_idempotent_and_output_consistent() {
        let cfg = BridgeConfig::default();
        for meta in reachable() {
            {
                for k in IntentClass::all() {
                    let r0 = record(&format!("<INTENT>{}</INTENT>", k.name()), meta);
                    let (r1, _) = relabel_if_inconsistent(&r0, &cfg).unwrap();
                    let mut r1_text = r1.clone();
                    r1_text.intent_text = format!("<INTENT>{}</INTENT>", r1.intent.unwrap().name());
                    let (r2, p2) = relabel_if_inconsistent(&r1_text, &cfg).unwrap();
                    assert_eq!(r1.intent, r2.intent);
                    assert!(!p2.relabeled);
                    assert_eq!(
                        consistency_check(&cfg.table, r1.intent.unwrap(), &meta).unwrap(),
                        Consistency::Consistent
                    );
                }
            }
        }
    }
}
