use std::collections::BTreeMap;
use std::sync::Arc;

use super::replica::{Replica, Role};
use super::{Cell, LogEntry, ProtocolError, Region, Source, StepCtx};
use crate::trace::EventKind;
use crate::transport::{OpStatus, Transport};

/// How far past the expected slot tree catchup scans an input buffer for a message id.
const SCAN_WINDOW: u64 = 64;

impl Replica {
    /// Repairs log slot FUO across the group: re-replicates the entry with
    /// the highest ballot found in a read quorum. Hands over to tree catchup
    /// once a slot is empty everywhere it could be read.
    pub(super) fn catchup_step<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        fuo_before: u64,
    ) -> Result<(), ProtocolError> {
        let slot = self.state.fuo;
        if slot >= self.cfg.buffer_extent {
            return Err(ProtocolError::Invariant {
                at: self.id,
                what: format!("log full at slot {slot}; raise buffer_extent"),
            });
        }
        let mut failed = 0;
        let mut best: Option<Arc<LogEntry>> = None;
        let mut issued = 0;
        for r in self.members.clone() {
            let term = self.term.as_mut().expect("catchup needs a term");
            if term.unreachable.contains(&r) {
                failed += 1;
                continue;
            }
            issued += 1;
            let res = ctx.read(r, Region::Log, slot)?;
            match res.status {
                OpStatus::Ok => {
                    if let Some(Cell::Log(l)) = res.value {
                        if best.as_ref().is_none_or(|b| l.tmp > b.tmp) {
                            best = Some(l);
                        }
                    }
                }
                status => {
                    if status == OpStatus::Unreachable {
                        term.unreachable.insert(r);
                    }
                    if r == self.id {
                        // Our own log is no longer ours to write.
                        self.demote();
                        return Ok(());
                    }
                    failed += 1;
                }
            }
        }
        ctx.phase(issued, 0);
        if failed > self.f {
            self.demote();
            return Ok(());
        }
        let Some(best) = best else {
            self.tree_catchup(ctx, fuo_before)?;
            self.role = Role::Leading;
            self.state.leader = Some(self.id);
            let ballot = self.term.as_ref().unwrap().ballot;
            let term = self.term.as_mut().unwrap();
            term.last_order = ctx.now;
            term.last_resync = ctx.now;
            ctx.emit(EventKind::LeaderChange {
                group: self.group,
                ballot: (ballot.counter, ballot.replica),
            });
            return Ok(());
        };
        let mut entry = (*best).clone();
        entry.tmp = self.term.as_ref().unwrap().ballot;
        let hm = Arc::clone(&entry.hm);
        let (ok, self_ok) = self.replicate(ctx, slot, Some(Arc::new(entry)))?;
        if ok <= self.f || !self_ok {
            self.demote();
            return Ok(());
        }
        if self.state.fuo >= self.state.std {
            self.state.std += 1;
            self.deliver(ctx, &hm);
        }
        self.state.fuo += 1;
        Ok(())
    }

    /// Restores input pointers from the log and re-forwards every entry
    /// decided since `fuo_before`, in case the previous leader did not.
    /// Starts earlier if an interrupted catchup moved FUO past entries
    /// this replica never forwarded.
    pub(super) fn tree_catchup<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        fuo_before: u64,
    ) -> Result<(), ProtocolError> {
        let fuo = self.state.fuo;
        let mut last: BTreeMap<Source, (u64, u64)> = BTreeMap::new();
        for i in 0..fuo {
            let Some(l) = self.log_at(ctx, i)? else { continue };
            if l.source != Source::Internal {
                let e = last.entry(l.source).or_insert((i, 0));
                e.0 = i;
                e.1 += 1;
            }
        }
        for source in self.sources.clone() {
            let next = match last.get(&source) {
                None => 0,
                Some(&(index, count)) => {
                    let id = self.log_at(ctx, index)?.expect("indexed above").hm.id;
                    self.find_input(ctx, source, id, count)?.map_or(count, |s| s + 1)
                }
            };
            self.state.slot_in.insert(source, next);
        }

        // All re-forwarding writes are issued together.
        let mut targets = 0;
        let mut bytes = 0;
        for i in fuo_before.min(self.forwarded)..fuo {
            let Some(l) = self.log_at(ctx, i)? else { continue };
            for child in self.children.clone() {
                let slot = l.slot_out.get(&child).copied().unwrap_or(self.state.slot_out[&child]);
                self.state.slot_out.insert(child, slot);
                if ctx.tree.reaches_any(child, &l.hm.dst)? {
                    targets += self.write_child(ctx, child, slot, &l.hm)?;
                    bytes += l.hm.val.len();
                    self.state.slot_out.insert(child, slot + 1);
                }
            }
        }
        ctx.phase(targets, bytes);
        self.forwarded = fuo;
        Ok(())
    }

    /// The input slot of `source` holding `id`: slot `count - 1` under FIFO
    /// delivery, otherwise the first match in a bounded scan.
    fn find_input<T: Transport<Region, Cell>>(
        &self,
        ctx: &StepCtx<'_, T>,
        source: Source,
        id: crate::trace::MessageId,
        count: u64,
    ) -> Result<Option<u64>, ProtocolError> {
        let region = Region::Hm(source);
        let hint = count - 1;
        if ctx.local_read(region, hint)?.id() == id {
            return Ok(Some(hint));
        }
        let end = (hint + SCAN_WINDOW).min(self.cfg.buffer_extent);
        for s in 0..end {
            if ctx.local_read(region, s)?.id() == id {
                return Ok(Some(s));
            }
        }
        Ok(None)
    }
}
