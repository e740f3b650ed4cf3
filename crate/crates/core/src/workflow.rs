//! The six-step validation state machine, without payload handling.
//!
//! A status names the last completed step. Advancing completes the next
//! step; the north-arrow step is completed automatically when the record
//! has no north arrow.

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ValidationStatus {
    Detected,
    Step1Id,
    Step2Boxes,
    Step3Contours,
    Step4Scale,
    Step5North,
    Step6Pose,
    Validated,
    Discarded,
}

impl ValidationStatus {
    pub const ALL: [ValidationStatus; 9] = [
        ValidationStatus::Detected,
        ValidationStatus::Step1Id,
        ValidationStatus::Step2Boxes,
        ValidationStatus::Step3Contours,
        ValidationStatus::Step4Scale,
        ValidationStatus::Step5North,
        ValidationStatus::Step6Pose,
        ValidationStatus::Validated,
        ValidationStatus::Discarded,
    ];

    /// Number of the last completed step (0 before step 1).
    pub fn completed_step(self) -> Option<u8> {
        use ValidationStatus::*;
        Some(match self {
            Detected => 0,
            Step1Id => 1,
            Step2Boxes => 2,
            Step3Contours => 3,
            Step4Scale => 4,
            Step5North => 5,
            Step6Pose | Validated => 6,
            Discarded => return None,
        })
    }

    fn from_step(step: u8) -> Self {
        use ValidationStatus::*;
        match step {
            0 => Detected,
            1 => Step1Id,
            2 => Step2Boxes,
            3 => Step3Contours,
            4 => Step4Scale,
            5 => Step5North,
            _ => Step6Pose,
        }
    }

    pub fn is_open(self) -> bool {
        !matches!(self, ValidationStatus::Validated | ValidationStatus::Discarded)
    }

    pub fn as_str(self) -> &'static str {
        use ValidationStatus::*;
        match self {
            Detected => "detected",
            Step1Id => "step1_id",
            Step2Boxes => "step2_boxes",
            Step3Contours => "step3_contours",
            Step4Scale => "step4_scale",
            Step5North => "step5_north",
            Step6Pose => "step6_pose",
            Validated => "validated",
            Discarded => "discarded",
        }
    }
}

impl fmt::Display for ValidationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Action {
    Advance,
    Back,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot {action:?} from {from}")]
pub struct IllegalTransition {
    pub from: ValidationStatus,
    pub action: Action,
}

/// Outcome of a legal transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub to: ValidationStatus,
    /// Step whose payload the caller must apply (advance only).
    pub completes: Option<u8>,
    /// Step completed without a payload because it does not apply.
    pub skips: Option<u8>,
}

/// Step 5 is the north-arrow step.
pub const NORTH_STEP: u8 = 5;

pub fn plan_transition(
    from: ValidationStatus,
    action: Action,
    has_north: bool,
) -> Result<Transition, IllegalTransition> {
    let illegal = IllegalTransition { from, action };
    match action {
        Action::Discard => {
            if from == ValidationStatus::Step1Id {
                Ok(Transition {
                    to: ValidationStatus::Discarded,
                    completes: None,
                    skips: None,
                })
            } else {
                Err(illegal)
            }
        }
        Action::Advance => {
            let done = from.completed_step().ok_or(illegal)?;
            if from == ValidationStatus::Validated {
                return Err(illegal);
            }
            if from == ValidationStatus::Step6Pose {
                return Ok(Transition {
                    to: ValidationStatus::Validated,
                    completes: None,
                    skips: None,
                });
            }
            let step = done + 1;
            if step == NORTH_STEP && !has_north {
                return Ok(Transition {
                    to: ValidationStatus::Step5North,
                    completes: None,
                    skips: Some(NORTH_STEP),
                });
            }
            let skips = (step == NORTH_STEP - 1 && !has_north).then_some(NORTH_STEP);
            let to = ValidationStatus::from_step(if skips.is_some() { NORTH_STEP } else { step });
            Ok(Transition {
                to,
                completes: Some(step),
                skips,
            })
        }
        Action::Back => {
            let done = match from {
                ValidationStatus::Detected
                | ValidationStatus::Validated
                | ValidationStatus::Discarded => return Err(illegal),
                s => s.completed_step().ok_or(illegal)?,
            };
            // step 4 and a skipped step 5 are undone together
            let to = if done == NORTH_STEP && !has_north {
                NORTH_STEP - 2
            } else {
                done - 1
            };
            Ok(Transition {
                to: ValidationStatus::from_step(to),
                completes: None,
                skips: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ValidationStatus::*;

    #[test]
    fn happy_path_with_north() {
        let mut s = Detected;
        let mut completed = alloc::vec::Vec::new();
        while s != Validated {
            let t = plan_transition(s, Action::Advance, true).unwrap();
            completed.extend(t.completes);
            assert!(t.skips.is_none());
            s = t.to;
        }
        assert_eq!(completed, [1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn north_step_is_skipped_without_arrow() {
        let t = plan_transition(Step3Contours, Action::Advance, false).unwrap();
        assert_eq!(t, Transition { to: Step5North, completes: Some(4), skips: Some(5) });
        let t = plan_transition(Step4Scale, Action::Advance, false).unwrap();
        assert_eq!(t, Transition { to: Step5North, completes: None, skips: Some(5) });
        assert_eq!(plan_transition(Step5North, Action::Back, false).unwrap().to, Step3Contours);
        assert_eq!(plan_transition(Step5North, Action::Back, true).unwrap().to, Step4Scale);
    }

    #[test]
    fn discard_only_after_step_one() {
        for s in ValidationStatus::ALL {
            let r = plan_transition(s, Action::Discard, true);
            assert_eq!(r.is_ok(), s == Step1Id, "{s}");
        }
    }

    #[test]
    fn back_tracks_one_step() {
        assert_eq!(plan_transition(Step3Contours, Action::Back, true).unwrap().to, Step2Boxes);
        assert_eq!(plan_transition(Step1Id, Action::Back, true).unwrap().to, Detected);
        for s in [Detected, Validated, Discarded] {
            assert!(plan_transition(s, Action::Back, true).is_err());
        }
    }

    #[test]
    fn terminal_states_do_not_advance() {
        assert!(plan_transition(Validated, Action::Advance, true).is_err());
        assert!(plan_transition(Discarded, Action::Advance, true).is_err());
    }
}
