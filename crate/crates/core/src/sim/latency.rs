use serde::{Deserialize, Serialize};

use crate::protocol::Phase;
use crate::trace::Time;

/// Cost of a step in simulated ticks.
///
/// A phase is a set of remote operations issued together. When batched,
/// the operations complete together and the phase costs one remote round
/// trip; otherwise each target costs a round trip of its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub batched: bool,
    pub remote_unit: Time,
    pub local_unit: Time,
    /// Delay before an idle process polls again.
    pub idle_poll: Time,
    /// Payload bytes transferred per tick on top of the round trip; 0 ignores payload size.
    pub bytes_per_unit: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            batched: true,
            remote_unit: 10,
            local_unit: 1,
            idle_poll: 2,
            bytes_per_unit: 0,
        }
    }
}

impl LatencyModel {
    /// Unit costs, for reasoning in round trips.
    pub fn unit() -> Self {
        LatencyModel {
            remote_unit: 1,
            local_unit: 0,
            ..Self::default()
        }
    }

    pub fn serialized(self) -> Self {
        LatencyModel { batched: false, ..self }
    }

    pub fn phase_cost(&self, phase: &Phase) -> Time {
        if phase.targets == 0 {
            return 0;
        }
        let transfer = match self.bytes_per_unit {
            0 => 0,
            bw => (phase.bytes as u64).div_ceil(bw),
        };
        let rounds = if self.batched { 1 } else { phase.targets as Time };
        rounds * (self.remote_unit + transfer)
    }

    pub fn step_cost(&self, phases: &[Phase]) -> Time {
        self.local_unit + phases.iter().map(|p| self.phase_cost(p)).sum::<Time>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(targets: usize) -> Phase {
        Phase { targets, bytes: 0 }
    }

    #[test]
    fn batched_phase_costs_one_round() {
        let m = LatencyModel::unit();
        assert_eq!(m.phase_cost(&batch(5)), 1);
        assert_eq!(m.phase_cost(&batch(1)), 1);
    }

    #[test]
    fn serialized_phase_costs_one_round_per_target() {
        let m = LatencyModel::unit().serialized();
        assert_eq!(m.phase_cost(&batch(5)), 5);
        assert_eq!(m.phase_cost(&batch(1)), 1);
    }

    #[test]
    fn payload_adds_transfer_time() {
        let m = LatencyModel {
            bytes_per_unit: 100,
            ..LatencyModel::unit()
        };
        assert_eq!(m.phase_cost(&Phase { targets: 3, bytes: 250 }), 1 + 3);
        assert_eq!(m.step_cost(&[batch(3), batch(0), batch(2)]), 2);
    }
}
