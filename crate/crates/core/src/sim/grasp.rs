/// Grasp sequencing driven by the end-effector distance to the goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraspPhase {
    Approaching,
    Closing { since: f64 },
    Attached { at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspEvent {
    None,
    GripperClosed,
    PayloadAttached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspTrigger {
    pub threshold: f64,
    pub dwell: f64,
    phase: GraspPhase,
}

impl Default for GraspTrigger {
    fn default() -> Self {
        Self::new(0.03, 1.5)
    }
}

impl GraspTrigger {
    pub fn new(threshold: f64, dwell: f64) -> Self {
        Self { threshold, dwell, phase: GraspPhase::Approaching }
    }

    pub fn phase(&self) -> GraspPhase {
        self.phase
    }

    /// Feeds one sample of the EE-to-goal distance.
    pub fn update(&mut self, t: f64, ee_distance: f64) -> GraspEvent {
        match self.phase {
            GraspPhase::Approaching if ee_distance < self.threshold => {
                self.phase = GraspPhase::Closing { since: t };
                GraspEvent::GripperClosed
            }
            GraspPhase::Closing { since } if t - since >= self.dwell => {
                self.phase = GraspPhase::Attached { at: t };
                GraspEvent::PayloadAttached
            }
            _ => GraspEvent::None,
        }
    }
}
