use std::collections::BTreeMap;
use std::sync::Arc;

use super::{members, Cell, HmEntry, ProtocolError, Region, Source, StepCtx};
use crate::overlay::GroupId;
use crate::trace::EventKind;
use crate::transport::{ProcessId, Transport};

/// A multicasting client. Clients only write; they never read replica state.
#[derive(Debug, Clone)]
pub struct Client {
    index: u32,
    extent: u64,
    /// Next free slot of this client's buffer in each group.
    slot: BTreeMap<GroupId, u64>,
}

impl Client {
    pub fn new(index: u32, extent: u64) -> Self {
        Client {
            index,
            extent,
            slot: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> ProcessId {
        ProcessId::Client(self.index)
    }

    pub fn next_slot(&self, g: GroupId) -> u64 {
        self.slot.get(&g).copied().unwrap_or(0)
    }

    /// Writes `m` into this client's buffer on every replica of `lca(m.dst)`.
    ///
    /// Fire-and-forget: writes to crashed replicas are dropped.
    pub fn multicast<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        m: HmEntry,
    ) -> Result<(), ProtocolError> {
        let invalid = |reason: &str| ProtocolError::InvalidMessage {
            id: m.id,
            reason: reason.to_string(),
        };
        if m.id.is_empty() || m.id.is_noop() {
            return Err(invalid("id must be nonzero and outside the no-op range"));
        }
        if m.client != self.id() {
            return Err(invalid("client field does not name the sender"));
        }
        let lca = ctx.tree.lca(&m.dst)?;
        let slot = self.next_slot(lca);
        if slot >= self.extent {
            return Err(invalid("client buffer is full; raise buffer_extent"));
        }
        ctx.emit(EventKind::Multicast {
            id: m.id,
            dst: m.dst.clone(),
            lca,
        });
        ctx.emit(EventKind::XBroadcast { id: m.id, group: lca });
        let targets = members(ctx.tree, lca)?;
        let bytes = m.val.len();
        let id = m.id;
        let m = Arc::new(m);
        for &p in &targets {
            ctx.write(
                p,
                Region::Hm(Source::Client(self.index)),
                slot,
                Cell::Message(Arc::clone(&m)),
                Some(id),
            )?;
        }
        ctx.phase(targets.len(), bytes);
        self.slot.insert(lca, slot + 1);
        Ok(())
    }
}
