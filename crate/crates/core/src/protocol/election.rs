use super::replica::{Replica, Role, Term};
use super::{Ack, Cell, ProtocolError, Region, StepCtx, Timestamp};
use crate::transport::{AccessMode, ProcessId, RegionId, Transport};

impl Replica {
    /// Answers pending ballot proposals, granting log access to the highest.
    pub(super) fn check_permissions<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
    ) -> Result<bool, ProtocolError> {
        let mut replies = 0;
        for (i, &r) in self.members.clone().iter().enumerate() {
            let Cell::Ballot(ts) = ctx.local_read(Region::Perm, i as u64)? else {
                continue;
            };
            ctx.local_write(Region::Perm, i as u64, Cell::Empty)?;
            if ts.is_null() {
                continue;
            }
            self.max_counter_seen = self.max_counter_seen.max(ts.counter);
            if ts > self.state.tmp {
                self.state.tmp = ts;
                self.grant(ctx, r)?;
                ctx.write(
                    r,
                    Region::PermAck,
                    u64::from(self.index),
                    Cell::Reply(ts, Ack::Ack),
                    None,
                )?;
                self.state.leader = Some(r);
                if r != self.id && self.role != Role::Follower {
                    self.role = Role::Follower;
                    self.term = None;
                }
                replies += 1;
            } else if ts < self.state.tmp {
                ctx.write(
                    r,
                    Region::PermAck,
                    u64::from(self.index),
                    Cell::Reply(ts, Ack::Nack),
                    None,
                )?;
                replies += 1;
            }
        }
        ctx.phase(replies, 0);
        Ok(replies > 0)
    }

    /// Makes `r` the only process allowed to access our log.
    fn grant<T: Transport<Region, Cell>>(&mut self, ctx: &StepCtx<'_, T>, r: ProcessId) -> Result<(), ProtocolError> {
        let log = RegionId::new(self.id, Region::Log);
        if let Some(old) = self.granted.take() {
            ctx.transport.set_permission(self.id, &log, old, AccessMode::None)?;
        }
        ctx.transport.set_permission(self.id, &log, r, AccessMode::ReadWrite)?;
        self.granted = Some(r);
        Ok(())
    }

    /// Proposes a ballot higher than any seen so far to every group member.
    pub(super) fn start_campaign<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
    ) -> Result<(), ProtocolError> {
        let counter = self.state.tmp.counter.max(self.max_counter_seen) + 1;
        self.max_counter_seen = counter;
        let ballot = Timestamp::new(counter, self.index);
        for &r in &self.members {
            ctx.write(r, Region::Perm, u64::from(self.index), Cell::Ballot(ballot), None)?;
        }
        ctx.phase(self.members.len(), 0);
        self.role = Role::Campaigning { ballot };
        self.term = None;
        Ok(())
    }

    /// Counts replies to `ballot`. Once more than f members have answered,
    /// wins with f+1 acknowledgements that include our own, else gives up.
    pub(super) fn poll_campaign<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        ballot: Timestamp,
    ) -> Result<bool, ProtocolError> {
        if ctx.oracle != Some(self.id) {
            self.demote();
            return Ok(true);
        }
        let mut acks = 0;
        let mut nacks = 0;
        let mut self_ack = false;
        let mut self_answered = false;
        for i in 0..self.members.len() {
            if let Cell::Reply(ts, ack) = ctx.local_read(Region::PermAck, i as u64)? {
                self.max_counter_seen = self.max_counter_seen.max(ts.counter);
                if ts != ballot {
                    continue;
                }
                self_answered |= i as u32 == self.index;
                match ack {
                    Ack::Ack => {
                        acks += 1;
                        self_ack |= i as u32 == self.index;
                    }
                    Ack::Nack => nacks += 1,
                }
            }
        }
        if acks + nacks <= self.f {
            return Ok(false);
        }
        if acks > self.f && self_ack {
            let fuo_before = self.state.fuo;
            self.term = Some(Term::new(ballot, self.id, &self.members, fuo_before, ctx.now));
            self.role = Role::CatchingUp { fuo_before };
        } else if !self_answered && nacks <= self.f {
            // Our own answer is still pending; it decides whether we can write our log.
            return Ok(false);
        } else {
            self.demote();
        }
        Ok(true)
    }
}
